//! Euler–Maruyama paths with first-hitting detection.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Domain, SdeError, SdeSystem};
use crate::expr::ExprError;
use crate::rng::PathRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Hit,
    Censored,
    Escaped,
    StepLimit,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Hit => "hit",
            Status::Censored => "censored",
            Status::Escaped => "escaped",
            Status::StepLimit => "step_limit",
        }
    }
}

/// How a hit was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    /// `x₀ ∈ [U]`; τ = 0.
    Initial,
    /// The boundary distance changed sign over the step; τ is linearly
    /// interpolated inside the step.
    SignChange,
    /// Both endpoints lie outside `U` but the Brownian bridge between them
    /// crossed `∂U`; τ is the step midpoint.
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub step: u64,
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub path_id: u64,
    pub status: Status,
    /// First hitting time of `∂U`, when `status == Hit`.
    pub tau: Option<f64>,
    pub crossing: Option<Crossing>,
    /// Index of the step during which the outcome was decided.
    pub steps: u64,
    pub final_t: f64,
    pub final_state: Vec<f64>,
    pub diagnostic: Option<String>,
    /// Thinned trajectory, empty unless a stride was requested.
    pub path: Vec<PathPoint>,
}

impl PathOutcome {
    pub fn final_norm(&self) -> f64 {
        self.final_state.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_hit(&self) -> bool {
        self.status == Status::Hit
    }

    /// Whether the path hit `∂U` no later than `t`.
    pub fn hit_by(&self, t: f64) -> bool {
        matches!(self.tau, Some(tau) if tau <= t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub t_max: f64,
    pub dt: f64,
    /// Escape radius; defaults to `100·max(|x₀|, sup_{∂U}|x|)`.
    pub r_escape: Option<f64>,
    pub max_steps: Option<u64>,
    /// Record every `stride`-th state.
    pub stride: Option<u64>,
    /// Brownian-bridge crossing test between grid points.
    pub bridge: bool,
}

impl SimOptions {
    pub fn new(t_max: f64, dt: f64) -> Self {
        Self {
            t_max,
            dt,
            r_escape: None,
            max_steps: None,
            stride: None,
            bridge: true,
        }
    }

    pub fn with_r_escape(mut self, r: f64) -> Self {
        self.r_escape = Some(r);
        self
    }

    pub fn with_bridge(mut self, bridge: bool) -> Self {
        self.bridge = bridge;
        self
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.stride = Some(stride);
        self
    }

    pub fn with_max_steps(mut self, n: u64) -> Self {
        self.max_steps = Some(n);
        self
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SdeError::Options(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(SdeError::Options(format!("T_max must be finite and ≥ 0, got {}", self.t_max)));
        }
        if self.stride == Some(0) {
            return Err(SdeError::Options("stride must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn resolved_r_escape(&self, domain: &Domain, x0: &[f64]) -> f64 {
        let n0 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.r_escape
            .unwrap_or_else(|| 100.0 * n0.max(domain.boundary_sup_radius()))
    }
}

/// One Euler–Maruyama step `x + f(t,x)·dt + σ(t,x)·dW`.
pub fn em_step(
    sys: &SdeSystem,
    t: f64,
    x: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>, SdeError> {
    if x.len() != sys.dim() || dw.len() != sys.noise_dim() {
        return Err(SdeError::Options(format!(
            "state has {} entries and dW {}, system is {}×{}",
            x.len(),
            dw.len(),
            sys.dim(),
            sys.noise_dim()
        )));
    }
    if !(dt > 0.0) {
        return Err(SdeError::Options("dt must be positive".into()));
    }
    let mut f = vec![0.0; sys.dim()];
    let mut s = vec![0.0; sys.dim() * sys.noise_dim()];
    let mut out = vec![0.0; sys.dim()];
    step_into(sys, t, x, dt, dw, &mut f, &mut s, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_into(
    sys: &SdeSystem,
    t: f64,
    x: &[f64],
    dt: f64,
    dw: &[f64],
    f: &mut [f64],
    s: &mut [f64],
    out: &mut [f64],
) -> Result<(), SdeError> {
    sys.drift_into(t, x, f)?;
    sys.diffusion_into(t, x, s)?;
    let m = sys.noise_dim();
    for i in 0..x.len() {
        let noise: f64 = (0..m).map(|k| s[i * m + k] * dw[k]).sum();
        out[i] = x[i] + f[i] * dt + noise;
    }
    Ok(())
}

/// Simulates one path from `x₀` until it hits `∂U`, is censored at
/// `T_max`, escapes beyond the escape radius, or exhausts the step budget.
pub fn simulate_until_hit(
    sys: &SdeSystem,
    domain: &Domain,
    x0: &[f64],
    opts: &SimOptions,
    rng: &mut PathRng,
) -> Result<PathOutcome, SdeError> {
    opts.validate()?;
    domain.check_dim(sys.dim())?;
    if x0.len() != sys.dim() {
        return Err(SdeError::Options(format!(
            "x0 has {} entries, system dimension {}",
            x0.len(),
            sys.dim()
        )));
    }
    let r_escape = opts.resolved_r_escape(domain, x0);
    if r_escape <= domain.boundary_sup_radius() {
        return Err(SdeError::Options(format!(
            "escape radius {r_escape} must exceed sup of |x| on the boundary ({})",
            domain.boundary_sup_radius()
        )));
    }
    let (n, m) = (sys.dim(), sys.noise_dim());
    let mut out = PathOutcome {
        path_id: rng.path(),
        status: Status::Hit,
        tau: Some(0.0),
        crossing: Some(Crossing::Initial),
        steps: 0,
        final_t: 0.0,
        final_state: x0.to_vec(),
        diagnostic: None,
        path: Vec::new(),
    };
    if opts.stride.is_some() {
        out.path.push(PathPoint {
            step: 0,
            t: 0.0,
            x: x0.to_vec(),
        });
    }
    let mut d_prev = domain.signed_distance(x0);
    if d_prev <= 0.0 {
        return Ok(out);
    }

    let mut x = x0.to_vec();
    let mut x_new = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut s = vec![0.0; n * m];
    let mut dw = vec![0.0; m];
    let mut nrm = vec![0.0; n];
    let max_steps = opts.max_steps.unwrap_or(u64::MAX);
    let mut t = 0.0;
    let mut k: u64 = 0;
    let r_escape2 = r_escape * r_escape;
    let scalar = n == 1 && m == 1 && sys.scalar_coeffs(x0[0]).is_some();

    let finish = |out: &mut PathOutcome, status: Status, k: u64, t: f64, x: &[f64]| {
        out.status = status;
        out.tau = None;
        out.crossing = None;
        out.steps = k;
        out.final_t = t;
        out.final_state = x.to_vec();
    };

    loop {
        if t >= opts.t_max {
            finish(&mut out, Status::Censored, k, t, &x);
            break;
        }
        if k >= max_steps {
            finish(&mut out, Status::StepLimit, k, t, &x);
            break;
        }
        k += 1;
        let t_next = (k as f64 * opts.dt).min(opts.t_max);
        let h = t_next - t;
        let sq = h.sqrt();
        for w in dw.iter_mut() {
            *w = sq * rng.normal();
        }
        let fast = if scalar { sys.scalar_coeffs(x[0]) } else { None };
        let stepped = match fast {
            Some((fx, sx)) => {
                s[0] = sx;
                x_new[0] = x[0] + fx * h + sx * dw[0];
                Ok(())
            }
            None => step_into(sys, t, &x, h, &dw, &mut f, &mut s, &mut x_new),
        };
        match stepped {
            Ok(()) => {}
            Err(SdeError::Expr {
                source: ExprError::NonFinite { op },
                ..
            }) => {
                finish(&mut out, Status::Escaped, k, t, &x);
                out.diagnostic = Some(format!("non-finite {op} at t={t}"));
                break;
            }
            Err(e) => return Err(e),
        }
        if x_new.iter().any(|v| !v.is_finite()) {
            finish(&mut out, Status::Escaped, k, t_next, &x_new);
            out.diagnostic = Some(format!("non-finite state after step {k} from t={t}"));
            break;
        }
        let d_new = domain.signed_distance(&x_new);
        if d_new <= 0.0 {
            let frac = d_prev / (d_prev - d_new);
            let tau = t + h * frac;
            out.tau = Some(tau);
            out.crossing = Some(Crossing::SignChange);
            out.steps = k;
            out.final_t = tau;
            out.final_state = x_new.clone();
            break;
        }
        if opts.bridge {
            domain.normal_into(&x, &mut nrm);
            let a_n: f64 = (0..m)
                .map(|c| {
                    let v: f64 = (0..n).map(|i| nrm[i] * s[i * m + c]).sum();
                    v * v
                })
                .sum();
            if a_n > 0.0 {
                let q = 2.0 * d_prev * d_new / (a_n * h);
                if q < 40.0 && rng.uniform() < (-q).exp() {
                    let tau = t + 0.5 * h;
                    out.tau = Some(tau);
                    out.crossing = Some(Crossing::Bridge);
                    out.steps = k;
                    out.final_t = tau;
                    out.final_state = x_new.clone();
                    break;
                }
            }
        }
        std::mem::swap(&mut x, &mut x_new);
        t = t_next;
        d_prev = d_new;
        if let Some(stride) = opts.stride {
            if k.is_multiple_of(stride) {
                out.path.push(PathPoint { step: k, t, x: x.clone() });
            }
        }
        let r2 = x.iter().map(|v| v * v).sum::<f64>();
        if r2 >= r_escape2 {
            let r = r2.sqrt();
            finish(&mut out, Status::Escaped, k, t, &x);
            out.diagnostic = Some(format!("|X| = {r:.3e} ≥ R_escape = {r_escape:.3e}"));
            break;
        }
    }
    if opts.stride.is_some() && out.path.last().map(|p| p.step) != Some(out.steps) {
        out.path.push(PathPoint {
            step: out.steps,
            t: out.final_t,
            x: out.final_state.clone(),
        });
    }
    Ok(out)
}

/// What to simulate: `n_paths` independent paths from one initial state.
#[derive(Debug, Clone)]
pub struct EnsembleSpec<'a> {
    pub system: &'a SdeSystem,
    pub domain: &'a Domain,
    pub x0: &'a [f64],
    pub options: &'a SimOptions,
    pub seed: u64,
    pub n_paths: u64,
    /// Worker threads; `None` uses rayon's global pool.
    pub threads: Option<usize>,
}

/// Runs the ensemble in parallel. Path `i` uses stream `(seed, i)`, so the
/// returned outcomes (ordered by path id) do not depend on the thread count.
pub fn run_ensemble(spec: &EnsembleSpec<'_>) -> Result<Vec<PathOutcome>, SdeError> {
    let work = || {
        (0..spec.n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = PathRng::new(spec.seed, i);
                simulate_until_hit(spec.system, spec.domain, spec.x0, spec.options, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()
    };
    match spec.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| SdeError::Options(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Path dump with header `path_id,step,t,x1..xn`.
pub fn write_paths_csv<W: Write>(outcomes: &[PathOutcome], dim: usize, w: W) -> Result<(), SdeError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["path_id".to_string(), "step".into(), "t".into()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    wr.write_record(&header).map_err(io_err)?;
    for o in outcomes {
        for p in &o.path {
            let mut rec = vec![o.path_id.to_string(), p.step.to_string(), p.t.to_string()];
            rec.extend(p.x.iter().map(|v| v.to_string()));
            wr.write_record(&rec).map_err(io_err)?;
        }
    }
    wr.flush().map_err(|e| SdeError::Io(e.to_string()))
}

/// Outcome summary with header `path_id,status,tau,final_norm`.
pub fn write_outcomes_csv<W: Write>(outcomes: &[PathOutcome], w: W) -> Result<(), SdeError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["path_id", "status", "tau", "final_norm"]).map_err(io_err)?;
    for o in outcomes {
        wr.write_record([
            o.path_id.to_string(),
            o.status.as_str().to_string(),
            o.tau.map(|v| v.to_string()).unwrap_or_default(),
            o.final_norm().to_string(),
        ])
        .map_err(io_err)?;
    }
    wr.flush().map_err(|e| SdeError::Io(e.to_string()))
}

fn io_err(e: csv::Error) -> SdeError {
    SdeError::Io(e.to_string())
}
