//! Residence-time statistics from simulated paths and their comparison with
//! closed-form bounds.
//!
//! Aggregation is chunked: fixed-size chunks are summarized in parallel and
//! merged in chunk order, so the reported numbers are bit-identical for any
//! worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde::{PathOutcome, Status};

/// Tolerance multiplier for all bound comparisons.
pub const SE_MULTIPLIER: f64 = 3.0;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityAt {
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    /// `t` exceeds the longest observed horizon of a censored path, so
    /// the estimate only counts hits seen before censoring.
    pub beyond_horizon: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfEstimate {
    pub lambda: f64,
    /// Mean of `e^{λτ}` over hit paths; `None` without hits.
    pub estimate: Option<f64>,
    pub se: f64,
    /// Censored or escaped paths were excluded, so the true value may be
    /// larger.
    pub censored_excluded: bool,
    /// `(Σ_hit e^{λτ} + Σ_other e^{λ t_obs}) / n`, a lower bound for the
    /// unconditional moment.
    pub censoring_aware_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidenceStats {
    pub n_paths: u64,
    pub n_hit: u64,
    /// Paths stopped by the horizon or the step budget.
    pub n_censored: u64,
    /// Subset of `n_censored` stopped by the step budget.
    pub n_step_limit: u64,
    pub n_escaped: u64,
    /// Mean of τ over hit paths; `None` when nothing hit.
    pub mean_tau: Option<Estimate>,
    /// `(Σ_hit τ + Σ_other t_obs) / n`: every path contributes a value no
    /// larger than its true τ, so this bounds `E[τ]` from below.
    pub mean_tau_lower: Estimate,
    pub p_hit_by: Vec<ProbabilityAt>,
    pub mgf: Vec<MgfEstimate>,
}

impl ResidenceStats {
    pub fn hit_fraction(&self) -> Estimate {
        binomial(self.n_hit, self.n_paths)
    }

    pub fn p_hit_at(&self, t: f64) -> Option<&ProbabilityAt> {
        self.p_hit_by.iter().find(|p| p.t == t)
    }

    pub fn mgf_at(&self, lambda: f64) -> Option<&MgfEstimate> {
        self.mgf.iter().find(|m| m.lambda == lambda)
    }
}

fn binomial(k: u64, n: u64) -> Estimate {
    if n == 0 {
        return Estimate { estimate: 0.0, se: 0.0 };
    }
    let p = k as f64 / n as f64;
    Estimate {
        estimate: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
    }
}

/// Running mean and squared deviation sum, mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n as f64 / n as f64,
            m2: self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
        }
    }

    fn estimate(&self) -> Option<Estimate> {
        if self.n == 0 {
            return None;
        }
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        Some(Estimate {
            estimate: self.mean,
            se: (var / self.n as f64).sqrt(),
        })
    }
}

/// Mergeable partial aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulator {
    t_list: Vec<f64>,
    lambdas: Vec<f64>,
    n: u64,
    n_hit: u64,
    n_censored: u64,
    n_step_limit: u64,
    n_escaped: u64,
    max_censor_t: f64,
    tau: Moments,
    observed: Moments,
    hits_by: Vec<u64>,
    mgf_hit: Vec<Moments>,
    mgf_obs: Vec<Moments>,
}

impl Accumulator {
    pub fn new(t_list: &[f64], lambdas: &[f64]) -> Self {
        let mut t_list = t_list.to_vec();
        t_list.sort_by(f64::total_cmp);
        t_list.dedup();
        Self {
            hits_by: vec![0; t_list.len()],
            mgf_hit: vec![Moments::default(); lambdas.len()],
            mgf_obs: vec![Moments::default(); lambdas.len()],
            t_list,
            lambdas: lambdas.to_vec(),
            n: 0,
            n_hit: 0,
            n_censored: 0,
            n_step_limit: 0,
            n_escaped: 0,
            max_censor_t: 0.0,
            tau: Moments::default(),
            observed: Moments::default(),
        }
    }

    pub fn push(&mut self, o: &PathOutcome) {
        self.n += 1;
        let obs = match (o.status, o.tau) {
            (Status::Hit, Some(tau)) => {
                self.n_hit += 1;
                self.tau.push(tau);
                for (c, t) in self.hits_by.iter_mut().zip(&self.t_list) {
                    if tau <= *t {
                        *c += 1;
                    }
                }
                for (m, l) in self.mgf_hit.iter_mut().zip(&self.lambdas) {
                    m.push((l * tau).exp());
                }
                tau
            }
            (Status::Escaped, _) => {
                self.n_escaped += 1;
                o.final_t
            }
            (Status::StepLimit, _) | (Status::Censored, _) | (Status::Hit, None) => {
                self.n_censored += 1;
                if o.status == Status::StepLimit {
                    self.n_step_limit += 1;
                }
                self.max_censor_t = self.max_censor_t.max(o.final_t);
                o.final_t
            }
        };
        self.observed.push(obs);
        for (m, l) in self.mgf_obs.iter_mut().zip(&self.lambdas) {
            m.push((l * obs).exp());
        }
    }

    pub fn merge(mut self, o: Accumulator) -> Accumulator {
        assert_eq!(self.t_list, o.t_list, "merging accumulators with different T lists");
        assert_eq!(self.lambdas, o.lambdas, "merging accumulators with different λ lists");
        self.n += o.n;
        self.n_hit += o.n_hit;
        self.n_censored += o.n_censored;
        self.n_step_limit += o.n_step_limit;
        self.n_escaped += o.n_escaped;
        self.max_censor_t = self.max_censor_t.max(o.max_censor_t);
        self.tau = self.tau.merge(o.tau);
        self.observed = self.observed.merge(o.observed);
        for (a, b) in self.hits_by.iter_mut().zip(&o.hits_by) {
            *a += b;
        }
        for (a, b) in self.mgf_hit.iter_mut().zip(&o.mgf_hit) {
            *a = a.merge(*b);
        }
        for (a, b) in self.mgf_obs.iter_mut().zip(&o.mgf_obs) {
            *a = a.merge(*b);
        }
        self
    }

    pub fn finish(&self) -> ResidenceStats {
        let incomplete = self.n_censored + self.n_escaped > 0;
        ResidenceStats {
            n_paths: self.n,
            n_hit: self.n_hit,
            n_censored: self.n_censored,
            n_step_limit: self.n_step_limit,
            n_escaped: self.n_escaped,
            mean_tau: self.tau.estimate(),
            mean_tau_lower: self.observed.estimate().unwrap_or(Estimate { estimate: 0.0, se: 0.0 }),
            p_hit_by: self
                .t_list
                .iter()
                .zip(&self.hits_by)
                .map(|(t, k)| {
                    let e = binomial(*k, self.n);
                    ProbabilityAt {
                        t: *t,
                        estimate: e.estimate,
                        se: e.se,
                        beyond_horizon: self.n_censored > 0 && *t > self.max_censor_t,
                    }
                })
                .collect(),
            mgf: self
                .lambdas
                .iter()
                .zip(self.mgf_hit.iter().zip(&self.mgf_obs))
                .map(|(l, (h, o))| {
                    let e = h.estimate();
                    MgfEstimate {
                        lambda: *l,
                        estimate: e.map(|e| e.estimate),
                        se: e.map_or(0.0, |e| e.se),
                        censored_excluded: incomplete,
                        censoring_aware_lower: o.estimate().map_or(0.0, |e| e.estimate),
                    }
                })
                .collect(),
        }
    }
}

/// Summarizes outcomes; `t_list` gives the horizons for `P(τ ≤ T)` and
/// `lambdas` the rates for `E[e^{λτ}]`.
pub fn aggregate(outcomes: &[PathOutcome], t_list: &[f64], lambdas: &[f64]) -> ResidenceStats {
    let parts: Vec<Accumulator> = outcomes
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accumulator::new(t_list, lambdas);
            chunk.iter().for_each(|o| acc.push(o));
            acc
        })
        .collect();
    parts
        .into_iter()
        .fold(Accumulator::new(t_list, lambdas), Accumulator::merge)
        .finish()
}

/// Markov bound on the tail from a mean bound: `min(1, m / T)`.
pub fn chebyshev_mean_bound(mean_bound: f64, t: f64) -> Result<f64, McError> {
    if !(mean_bound >= 0.0) || !(t > 0.0) {
        return Err(McError::Invalid(format!("need mean bound ≥ 0 and T > 0, got {mean_bound}, {t}")));
    }
    Ok((mean_bound / t).min(1.0))
}

/// Tail bound from the moment-generating bound:
/// `min(1, V₀ / (e^{λT} · inf_{∂U} V))`.
pub fn chebyshev_mgf_bound(v0: f64, inf_v_boundary: f64, lambda: f64, t: f64) -> Result<f64, McError> {
    if !(inf_v_boundary > 0.0) {
        return Err(McError::Invalid(format!(
            "inf of V on the boundary must be positive, got {inf_v_boundary}"
        )));
    }
    if !(v0 >= 0.0) || !(lambda > 0.0) || !(t > 0.0) {
        return Err(McError::Invalid("need V0 ≥ 0, λ > 0, T > 0".into()));
    }
    Ok((v0 / ((lambda * t).exp() * inf_v_boundary)).min(1.0))
}

/// Which empirical statistic a bound constrains (always from above).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "quantity", rename_all = "snake_case")]
pub enum Quantity {
    /// `E[τ]` over hit paths.
    MeanTau,
    /// `P(τ ≤ T)`.
    HitBy { t: f64 },
    /// `P(τ > T)`.
    NotHitBy { t: f64 },
    /// `E[e^{λτ}]` over hit paths.
    Mgf { lambda: f64 },
    /// Fraction of paths that hit at all.
    HitFraction,
}

impl Quantity {
    pub fn label(&self) -> String {
        match self {
            Quantity::MeanTau => "mean_tau".into(),
            Quantity::HitBy { t } => format!("p_hit_by[{t}]"),
            Quantity::NotHitBy { t } => format!("p_not_hit_by[{t}]"),
            Quantity::Mgf { lambda } => format!("mgf[{lambda}]"),
            Quantity::HitFraction => "hit_fraction".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `(V(x₀) + ∫ν − inf_{∂U} V) / μ(r)`.
    MeanResidence,
    /// `min(1, E-bound / T)`.
    ChebyshevMean,
    /// `V(x₀) / inf_{∂U} V`.
    Mgf,
    /// `min(1, V(x₀) / (e^{λT} inf_{∂U} V))`.
    ChebyshevMgf,
    /// `Φ(|x₀|) / Φ(α)`.
    Nonrecurrence,
    /// A closed-form value the statistic should not exceed.
    Exact,
    /// `1 − p` for a target probability `p`.
    Target,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::MeanResidence => "mean_residence",
            BoundKind::ChebyshevMean => "chebyshev_mean",
            BoundKind::Mgf => "mgf",
            BoundKind::ChebyshevMgf => "chebyshev_mgf",
            BoundKind::Nonrecurrence => "nonrecurrence",
            BoundKind::Exact => "exact",
            BoundKind::Target => "target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub quantity: Quantity,
    pub kind: BoundKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub quantity: String,
    pub bound_kind: BoundKind,
    pub bound: f64,
    pub estimate: f64,
    pub se: f64,
    pub satisfied: bool,
    /// `bound − estimate`.
    pub slack: f64,
}

impl BoundReport {
    pub fn new(quantity: String, kind: BoundKind, bound: f64, estimate: f64, se: f64) -> Self {
        Self {
            quantity,
            bound_kind: kind,
            bound,
            estimate,
            se,
            satisfied: estimate <= bound + SE_MULTIPLIER * se,
            slack: bound - estimate,
        }
    }
}

/// Compares each bound against the matching statistic. Statistics that are
/// missing (no hits, unrequested T or λ) produce a report with NaN-free
/// zero estimate, flagged unsatisfied only if the bound is negative.
pub fn compare_bounds(stats: &ResidenceStats, bounds: &[Bound]) -> Vec<BoundReport> {
    bounds
        .iter()
        .map(|b| {
            let e = match b.quantity {
                Quantity::MeanTau => stats.mean_tau,
                Quantity::HitBy { t } => stats.p_hit_at(t).map(|p| Estimate {
                    estimate: p.estimate,
                    se: p.se,
                }),
                Quantity::NotHitBy { t } => stats.p_hit_at(t).map(|p| Estimate {
                    estimate: 1.0 - p.estimate,
                    se: p.se,
                }),
                Quantity::Mgf { lambda } => stats.mgf_at(lambda).and_then(|m| {
                    m.estimate.map(|estimate| Estimate { estimate, se: m.se })
                }),
                Quantity::HitFraction => Some(stats.hit_fraction()),
            }
            .unwrap_or(Estimate { estimate: 0.0, se: 0.0 });
            BoundReport::new(b.quantity.label(), b.kind, b.value, e.estimate, e.se)
        })
        .collect()
}

/// Report CSV with header `quantity,estimate,se,bound,bound_kind,satisfied`.
pub fn write_reports_csv<W: Write>(reports: &[BoundReport], w: W) -> Result<(), McError> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| McError::Io(e.to_string());
    wr.write_record(["quantity", "estimate", "se", "bound", "bound_kind", "satisfied"])
        .map_err(io)?;
    for r in reports {
        wr.write_record([
            r.quantity.clone(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.bound.to_string(),
            r.bound_kind.as_str().to_string(),
            r.satisfied.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush().map_err(|e| McError::Io(e.to_string()))
}

/// JSON-lines variant of [`write_reports_csv`] with the same fields.
pub fn write_reports_jsonl<W: Write>(reports: &[BoundReport], mut w: W) -> Result<(), McError> {
    for r in reports {
        let line = serde_json::json!({
            "quantity": r.quantity,
            "estimate": r.estimate,
            "se": r.se,
            "bound": r.bound,
            "bound_kind": r.bound_kind.as_str(),
            "satisfied": r.satisfied,
        });
        writeln!(w, "{line}").map_err(|e| McError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Empirical CDF of τ over all paths: sorted hit times with `F(τ) = k / n`.
pub fn empirical_cdf(outcomes: &[PathOutcome]) -> Vec<(f64, f64)> {
    let n = outcomes.len() as f64;
    let mut taus: Vec<f64> = outcomes.iter().filter_map(|o| o.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.iter()
        .enumerate()
        .map(|(k, t)| (*t, (k + 1) as f64 / n))
        .collect()
}
