//! Generator evaluation and grid checks of Lyapunov-type certificates.
//!
//! Every verdict is grid-certified: conditions are evaluated at the points of
//! a [`Region`] and a pass means no sampled point violates the inequality
//! beyond the certificate tolerance. Nothing here is a symbolic proof.

mod bounds;
mod construct;
mod phi;

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{grad_hess, Derivatives, Expr, ExprError, Step};
use crate::sde::{Domain, SdeError, SdeSystem};

pub use bounds::{lipschitz_spot_check, mean_residence_bound, mgf_bound, LipschitzReport, NuTail};
pub use construct::{construct_bounded_complement_v, BoundedComplementV, ConstructionKind};
pub use phi::{nonrecurrence_bound, nonrecurrence_phi, PhiTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LyapError {
    #[error("evaluation failed at t={t}, x={x:?}: {source}")]
    Eval {
        t: f64,
        x: Vec<f64>,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    System(#[from] SdeError),
    #[error("certificate `{kind}` requires the `{slot}` slot")]
    MissingSlot { kind: &'static str, slot: &'static str },
    #[error("certificate `{kind}` does not use the `{slot}` slot")]
    ExtraneousSlot { kind: &'static str, slot: &'static str },
    #[error("`{name}` is not class K on [0, {s_max}]: {reason}")]
    ClassK { name: &'static str, s_max: f64, reason: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// An auxiliary function `V(t, x)` with optional analytic derivatives that
/// replace the finite-difference stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovFn {
    pub v: Expr,
    pub gradient: Option<Vec<Expr>>,
    /// Row-major `n × n`.
    pub hessian: Option<Vec<Expr>>,
    pub time_derivative: Option<Expr>,
    pub step: Step,
}

impl LyapunovFn {
    pub fn new(v: Expr) -> Self {
        Self {
            v,
            gradient: None,
            hessian: None,
            time_derivative: None,
            step: Step::Auto,
        }
    }

    pub fn with_gradient(mut self, g: Vec<Expr>) -> Self {
        self.gradient = Some(g);
        self
    }

    pub fn with_hessian(mut self, h: Vec<Expr>) -> Self {
        self.hessian = Some(h);
        self
    }

    pub fn with_time_derivative(mut self, d: Expr) -> Self {
        self.time_derivative = Some(d);
        self
    }

    pub fn with_step(mut self, step: Step) -> Self {
        self.step = step;
        self
    }

    pub fn value(&self, t: f64, x: &[f64]) -> Result<f64, ExprError> {
        self.v.eval(t, x)
    }

    /// Value and derivatives at `(t, x)`, analytic where supplied.
    pub fn derivatives(&self, t: f64, x: &[f64]) -> Result<Derivatives, ExprError> {
        let n = x.len();
        let all_analytic = self.gradient.is_some()
            && self.hessian.is_some()
            && (self.time_derivative.is_some() || !self.v.uses_time());
        let mut d = if all_analytic {
            Derivatives {
                value: self.v.eval(t, x)?,
                gradient: vec![0.0; n],
                hessian: vec![0.0; n * n],
                time_derivative: 0.0,
            }
        } else {
            grad_hess(&self.v, t, x, self.step)?
        };
        if let Some(g) = &self.gradient {
            for (o, e) in d.gradient.iter_mut().zip(g) {
                *o = e.eval(t, x)?;
            }
        }
        if let Some(h) = &self.hessian {
            for (o, e) in d.hessian.iter_mut().zip(h) {
                *o = e.eval(t, x)?;
            }
        }
        if let Some(e) = &self.time_derivative {
            d.time_derivative = e.eval(t, x)?;
        }
        Ok(d)
    }
}

impl From<Expr> for LyapunovFn {
    fn from(v: Expr) -> Self {
        Self::new(v)
    }
}

/// The pieces of `ℒV` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorValue {
    pub v: f64,
    /// `ℒV = ∂ₜV + fᵀ∇V + ½ tr(σσᵀ ∇²V)`.
    pub lv: f64,
    /// `|∇Vᵀ σ|²`.
    pub grad_sigma_sq: f64,
}

/// Evaluates `V` and `ℒV` at `(t, x)`.
pub fn generator_parts(sys: &SdeSystem, v: &LyapunovFn, t: f64, x: &[f64]) -> Result<GeneratorValue, LyapError> {
    let n = sys.dim();
    let m = sys.noise_dim();
    if x.len() != n {
        return Err(LyapError::Invalid(format!("state has length {}, system dimension {n}", x.len())));
    }
    let d = v.derivatives(t, x).map_err(|source| LyapError::Eval { t, x: x.to_vec(), source })?;
    let f = sys.drift(t, x)?;
    let s = sys.diffusion(t, x)?;
    let mut lv = d.time_derivative;
    lv += f.iter().zip(&d.gradient).map(|(fi, gi)| fi * gi).sum::<f64>();
    let mut grad_sigma_sq = 0.0;
    for k in 0..m {
        let mut gs = 0.0;
        for i in 0..n {
            gs += d.gradient[i] * s[i * m + k];
        }
        grad_sigma_sq += gs * gs;
    }
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            let aij: f64 = (0..m).map(|k| s[i * m + k] * s[j * m + k]).sum();
            tr += aij * d.hess(i, j);
        }
    }
    lv += 0.5 * tr;
    Ok(GeneratorValue {
        v: d.value,
        lv,
        grad_sigma_sq,
    })
}

/// `ℒV(t, x)` by finite differences of `v`.
pub fn generator(sys: &SdeSystem, v: &Expr, t: f64, x: &[f64]) -> Result<f64, LyapError> {
    Ok(generator_parts(sys, &LyapunovFn::new(v.clone()), t, x)?.lv)
}

/// Spatial sampling for certificate checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialGrid {
    /// Tensor grid with `points` nodes per axis on `[lo_i, hi_i]`.
    Box { lo: Vec<f64>, hi: Vec<f64>, points: usize },
    /// `radii` evenly spaced radii on `[r_min, r_max]` times `directions`
    /// sphere directions (±eᵢ are always included).
    Radial { r_min: f64, r_max: f64, radii: usize, directions: usize },
}

/// Time range `[0, t_max]` sampled at `t_points` nodes, times a spatial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub t_max: f64,
    pub t_points: usize,
    pub grid: SpatialGrid,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Region {
    /// Time-homogeneous radial region.
    pub fn radial(r_min: f64, r_max: f64, radii: usize, directions: usize) -> Self {
        Self {
            t_max: 0.0,
            t_points: 1,
            grid: SpatialGrid::Radial { r_min, r_max, radii, directions },
        }
    }

    /// Time-homogeneous cube `[-half, half]ⁿ`.
    pub fn cube(n: usize, half: f64, points: usize) -> Self {
        Self {
            t_max: 0.0,
            t_points: 1,
            grid: SpatialGrid::Box {
                lo: vec![-half; n],
                hi: vec![half; n],
                points,
            },
        }
    }

    pub fn with_times(mut self, t_max: f64, t_points: usize) -> Self {
        self.t_max = t_max;
        self.t_points = t_points;
        self
    }

    pub fn validate(&self, n: usize) -> Result<(), LyapError> {
        let bad = |s: &str| Err(LyapError::Invalid(format!("region: {s}")));
        if !(self.t_max >= 0.0) || self.t_points == 0 {
            return bad("need t_max ≥ 0 and at least one time point");
        }
        match &self.grid {
            SpatialGrid::Box { lo, hi, points } => {
                if lo.len() != n || hi.len() != n {
                    return bad("box bounds must match the state dimension");
                }
                if *points < 2 || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return bad("box needs lo < hi and at least 2 points per axis");
                }
            }
            SpatialGrid::Radial { r_min, r_max, radii, .. } => {
                if !(*r_min >= 0.0 && r_max > r_min) || *radii < 2 {
                    return bad("radial grid needs 0 ≤ r_min < r_max and at least 2 radii");
                }
            }
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        linspace(0.0, self.t_max, self.t_points)
    }

    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        match &self.grid {
            SpatialGrid::Box { lo, hi, points } => {
                let axes: Vec<Vec<f64>> = lo.iter().zip(hi).map(|(a, b)| linspace(*a, *b, *points)).collect();
                let total = points.pow(n as u32);
                (0..total)
                    .map(|mut k| {
                        (0..n)
                            .map(|d| {
                                let v = axes[d][k % points];
                                k /= points;
                                v
                            })
                            .collect()
                    })
                    .collect()
            }
            SpatialGrid::Radial { r_min, r_max, radii, directions } => {
                let dirs = crate::sde::sphere_directions(n, *directions);
                linspace(*r_min, *r_max, *radii)
                    .into_iter()
                    .flat_map(|r| dirs.iter().map(move |d| d.iter().map(|v| v * r).collect()).collect::<Vec<_>>())
                    .collect()
            }
        }
    }

    /// Largest radius `R` such that the sphere `|x| = R` lies in the region.
    pub fn max_radius(&self) -> f64 {
        match &self.grid {
            SpatialGrid::Box { lo, hi, .. } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a.abs().min(b.abs()))
                .fold(f64::INFINITY, f64::min),
            SpatialGrid::Radial { r_max, .. } => *r_max,
        }
    }

    /// Largest `|x|` over the region.
    pub fn outer_radius(&self) -> f64 {
        match &self.grid {
            SpatialGrid::Box { lo, hi, .. } => lo
                .iter()
                .zip(hi)
                .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            SpatialGrid::Radial { r_max, .. } => *r_max,
        }
    }

    /// The same region at twice the resolution.
    pub fn refined(&self) -> Self {
        let grid = match &self.grid {
            SpatialGrid::Box { lo, hi, points } => SpatialGrid::Box {
                lo: lo.clone(),
                hi: hi.clone(),
                points: 2 * points - 1,
            },
            SpatialGrid::Radial { r_min, r_max, radii, directions } => SpatialGrid::Radial {
                r_min: *r_min,
                r_max: *r_max,
                radii: 2 * radii - 1,
                directions: 2 * directions,
            },
        };
        Self {
            t_max: self.t_max,
            t_points: if self.t_points > 1 { 2 * self.t_points - 1 } else { 1 },
            grid,
        }
    }
}

/// Which condition a certificate asserts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertificateKind {
    /// `ℒV ≤ γ(t) + α(t)V` with radially unbounded `V`: no explosion.
    Regularity,
    /// `ℒV ≤ γ(t) + α(t)V^r`, `r ∈ [0, 1)`.
    RegularityBihari { r: f64 },
    /// `xᵀf + ½|σ|² ≤ K_T(1 + |x|²)`.
    Monotone,
    /// Bounded `V ≥ 0` with `ℒV ≥ ᾱ(t)V` and `V(0, x₀) > 0`: explosion.
    NonRegularity,
    /// `ℒV ≤ ν ∧ (ν + |∇Vᵀσ|² − μ(|x|))` with radially unbounded `V`.
    RecurrenceMin,
    /// `ℒV ≤ ν(t) − μ(|x|)` on `U^c` with radially unbounded `V`.
    RecurrenceStrict,
    /// `ℒV ≤ −α(t)` on `U^c` with `∫α → ∞`.
    RecurrenceIntegrated,
    /// The two dimension-free inequalities on `(2xᵀf + tr a)` and `xᵀax`.
    Multidim,
    /// `S(t, x) ≥ θ(|x|)` for `|x| ≥ a` with integrable `Φ`: non-recurrence.
    Nonrecurrence { inner_radius: f64 },
    /// `V ≥ μ₁(|x|)` and `ℒV ≤ −λV` on `U^c`.
    ExponentialDecay,
}

impl CertificateKind {
    pub fn label(&self) -> &'static str {
        match self {
            CertificateKind::Regularity => "regularity",
            CertificateKind::RegularityBihari { .. } => "regularity_bihari",
            CertificateKind::Monotone => "monotone",
            CertificateKind::NonRegularity => "nonregularity",
            CertificateKind::RecurrenceMin => "recurrence_min",
            CertificateKind::RecurrenceStrict => "recurrence_strict",
            CertificateKind::RecurrenceIntegrated => "recurrence_integrated",
            CertificateKind::Multidim => "multidim",
            CertificateKind::Nonrecurrence { .. } => "nonrecurrence",
            CertificateKind::ExponentialDecay => "exponential_decay",
        }
    }

    /// `(required, optional)` slot names.
    fn slots(&self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            CertificateKind::Regularity | CertificateKind::RegularityBihari { .. } => {
                (&["v", "gamma", "alpha"], &["growth_threshold"])
            }
            CertificateKind::Monotone => (&[], &["k_t"]),
            CertificateKind::NonRegularity => (&["v", "alpha_bar", "x0"], &[]),
            CertificateKind::RecurrenceMin | CertificateKind::RecurrenceStrict => {
                (&["v", "nu", "mu"], &["domain", "growth_threshold"])
            }
            CertificateKind::RecurrenceIntegrated => (&["v", "alpha", "domain"], &[]),
            CertificateKind::Multidim => (&["alpha", "mu", "domain"], &[]),
            CertificateKind::Nonrecurrence { .. } => (&["theta"], &["domain"]),
            CertificateKind::ExponentialDecay => (&["v", "mu1", "lambda"], &["domain"]),
        }
    }

    fn restricted_to_complement(&self) -> bool {
        matches!(
            self,
            CertificateKind::RecurrenceMin
                | CertificateKind::RecurrenceStrict
                | CertificateKind::RecurrenceIntegrated
                | CertificateKind::ExponentialDecay
        )
    }

    fn needs_radial_growth(&self) -> bool {
        matches!(
            self,
            CertificateKind::Regularity
                | CertificateKind::RegularityBihari { .. }
                | CertificateKind::RecurrenceMin
                | CertificateKind::RecurrenceStrict
        )
    }
}

impl fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Comparison functions. Time functions (`gamma`, `alpha`, `nu`,
/// `alpha_bar`) are expressions in `t`; radial ones (`mu`, `mu1`, `theta`)
/// are expressions in a single variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonFns {
    pub gamma: Option<Expr>,
    pub alpha: Option<Expr>,
    pub nu: Option<Expr>,
    pub mu: Option<Expr>,
    pub mu1: Option<Expr>,
    pub alpha_bar: Option<Expr>,
    pub theta: Option<Expr>,
    pub lambda: Option<f64>,
    pub k_t: Option<f64>,
}

/// A Lyapunov-type condition to be checked on a region.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub v: Option<LyapunovFn>,
    pub functions: ComparisonFns,
    pub region: Region,
    pub domain: Option<Domain>,
    pub x0: Option<Vec<f64>>,
    /// Required value of `inf_{|x|=R} V` at the largest sampled radius;
    /// by default it must strictly exceed the infimum at the smallest radius.
    pub growth_threshold: Option<f64>,
    /// Relative tolerance on each inequality: a point passes when
    /// `lhs − rhs ≤ tolerance·(1 + |lhs| + |rhs|)`.
    pub tolerance: f64,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

impl Certificate {
    pub fn new(kind: CertificateKind, region: Region) -> Self {
        Self {
            kind,
            v: None,
            functions: ComparisonFns::default(),
            region,
            domain: None,
            x0: None,
            growth_threshold: None,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_v(mut self, v: impl Into<LyapunovFn>) -> Self {
        self.v = Some(v.into());
        self
    }

    pub fn with_functions(mut self, f: ComparisonFns) -> Self {
        self.functions = f;
        self
    }

    pub fn with_domain(mut self, d: Domain) -> Self {
        self.domain = Some(d);
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_growth_threshold(mut self, g: f64) -> Self {
        self.growth_threshold = Some(g);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    fn present_slots(&self) -> Vec<&'static str> {
        let f = &self.functions;
        let mut s = Vec::new();
        let pairs: [(&'static str, bool); 13] = [
            ("v", self.v.is_some()),
            ("gamma", f.gamma.is_some()),
            ("alpha", f.alpha.is_some()),
            ("nu", f.nu.is_some()),
            ("mu", f.mu.is_some()),
            ("mu1", f.mu1.is_some()),
            ("alpha_bar", f.alpha_bar.is_some()),
            ("theta", f.theta.is_some()),
            ("lambda", f.lambda.is_some()),
            ("k_t", f.k_t.is_some()),
            ("x0", self.x0.is_some()),
            ("domain", self.domain.is_some()),
            ("growth_threshold", self.growth_threshold.is_some()),
        ];
        for (name, present) in pairs {
            if present {
                s.push(name);
            }
        }
        s
    }

    /// Slot presence and parameter ranges.
    pub fn validate(&self, n: usize) -> Result<(), LyapError> {
        let kind = self.kind.label();
        let (required, optional) = self.kind.slots();
        let present = self.present_slots();
        for r in required {
            if !present.contains(r) {
                return Err(LyapError::MissingSlot { kind, slot: r });
            }
        }
        for p in &present {
            if !required.contains(p) && !optional.contains(p) {
                return Err(LyapError::ExtraneousSlot { kind, slot: p });
            }
        }
        self.region.validate(n)?;
        if !(self.tolerance >= 0.0) {
            return Err(LyapError::Invalid("tolerance must be nonnegative".into()));
        }
        if let CertificateKind::RegularityBihari { r } = self.kind {
            if !(0.0..1.0).contains(&r) {
                return Err(LyapError::Invalid(format!("Bihari exponent must lie in [0, 1), got {r}")));
            }
        }
        if let CertificateKind::Nonrecurrence { inner_radius } = self.kind {
            if !(inner_radius > 0.0) {
                return Err(LyapError::Invalid("inner radius must be positive".into()));
            }
        }
        if let Some(l) = self.functions.lambda {
            if !(l > 0.0) {
                return Err(LyapError::Invalid(format!("λ must be positive, got {l}")));
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(LyapError::Invalid("x0 dimension mismatch".into()));
            }
        }
        if let Some(d) = &self.domain {
            d.validated().map_err(SdeError::from)?;
        }
        Ok(())
    }
}

/// Outcome of a certificate check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub kind: String,
    pub pass: bool,
    /// `lhs − rhs` at the worst point (≤ 0 means satisfied there).
    pub worst_margin: f64,
    /// `(lhs − rhs)/(1 + |lhs| + |rhs|)` at the worst point.
    pub worst_scaled_margin: f64,
    pub witness_t: f64,
    pub witness_x: Vec<f64>,
    pub grid: usize,
    /// A constant derived from the grid, such as `K_T`.
    pub constant: Option<f64>,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            pass: true,
            worst_margin: f64::NEG_INFINITY,
            worst_scaled_margin: f64::NEG_INFINITY,
            witness_t: 0.0,
            witness_x: Vec::new(),
            grid: 0,
            constant: None,
            notes: Vec::new(),
        }
    }

    fn fail(&mut self, note: String) {
        self.pass = false;
        self.notes.push(note);
    }

    /// One-line text summary.
    pub fn summary(&self) -> String {
        format!(
            "{:<22} {:<4} worst_margin={:+.3e} at t={} x={:?} grid={}",
            self.kind,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst_margin,
            self.witness_t,
            self.witness_x,
            self.grid
        )
    }
}

/// Reports as CSV with header `kind,pass,worst_margin,witness_t,witness_x,grid`;
/// witness coordinates are joined with `;`.
pub fn write_reports_csv<W: Write>(reports: &[CheckReport], w: W) -> Result<(), LyapError> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| LyapError::Invalid(format!("writing CSV: {e}"));
    wr.write_record(["kind", "pass", "worst_margin", "witness_t", "witness_x", "grid"])
        .map_err(io)?;
    for r in reports {
        let x: Vec<String> = r.witness_x.iter().map(|v| v.to_string()).collect();
        wr.write_record([
            r.kind.clone(),
            r.pass.to_string(),
            r.worst_margin.to_string(),
            r.witness_t.to_string(),
            x.join(";"),
            r.grid.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush().map_err(|e| LyapError::Invalid(format!("writing CSV: {e}")))
}

/// Checks that `mu` is class K on `[0, s_max]`: `|μ(0)| ≤ 1e-12` and strictly
/// increasing on a 201-point grid.
pub fn check_class_k(name: &'static str, mu: &Expr, s_max: f64) -> Result<(), LyapError> {
    let err = |reason: String| LyapError::ClassK { name, s_max, reason };
    let s = linspace(0.0, s_max, 201);
    let mut prev = f64::NEG_INFINITY;
    for (k, si) in s.iter().enumerate() {
        let v = mu.eval_scalar(*si).map_err(|e| err(e.to_string()))?;
        if !v.is_finite() {
            return Err(err(format!("non-finite value at s={si}")));
        }
        if k == 0 && v.abs() > 1e-12 {
            return Err(err(format!("value at 0 is {v}")));
        }
        if v <= prev {
            return Err(err(format!("not strictly increasing at s={si}")));
        }
        prev = v;
    }
    Ok(())
}

fn eval_time(e: &Expr, t: f64) -> Result<f64, LyapError> {
    e.eval_time(t).map_err(|source| LyapError::Eval { t, x: Vec::new(), source })
}

fn eval_radial(e: &Expr, s: f64, t: f64, x: &[f64]) -> Result<f64, LyapError> {
    e.eval_scalar(s).map_err(|source| LyapError::Eval { t, x: x.to_vec(), source })
}

/// One inequality `lhs ≤ rhs` at a point.
#[derive(Debug, Clone, Copy)]
struct Margin {
    lhs: f64,
    rhs: f64,
}

impl Margin {
    fn raw(&self) -> f64 {
        self.lhs - self.rhs
    }

    fn scaled(&self) -> f64 {
        let m = (self.lhs - self.rhs) / (1.0 + self.lhs.abs() + self.rhs.abs());
        if m.is_nan() {
            f64::INFINITY
        } else {
            m
        }
    }
}

struct PointResult {
    margin: Option<Margin>,
    v: Option<f64>,
}

fn worst_of(ms: impl IntoIterator<Item = Margin>) -> Option<Margin> {
    ms.into_iter().fold(None, |acc: Option<Margin>, m| match acc {
        Some(a) if a.scaled() >= m.scaled() => Some(a),
        _ => Some(m),
    })
}

/// Grid-checks a certificate against `sys`.
pub fn check(cert: &Certificate, sys: &SdeSystem) -> Result<CheckReport, LyapError> {
    let n = sys.dim();
    cert.validate(n)?;
    if let Some(d) = &cert.domain {
        if matches!(d, Domain::Interval { .. }) && n != 1 {
            return Err(LyapError::Invalid("interval domains are one-dimensional".into()));
        }
    }
    let fns = &cert.functions;
    let s_max = cert.region.outer_radius().max(1.0);
    if let Some(mu) = &fns.mu {
        check_class_k("mu", mu, s_max)?;
    }
    if let Some(mu1) = &fns.mu1 {
        check_class_k("mu1", mu1, s_max)?;
    }

    if let CertificateKind::Nonrecurrence { inner_radius } = cert.kind {
        let theta = fns.theta.as_ref().expect("validated");
        let table = nonrecurrence_phi(sys, inner_radius, theta, &cert.region)?;
        let mut r = table.condition.clone();
        if !table.integrable {
            r.fail(format!("Φ is not integrable (tail exponent {:.6} ≤ 1)", table.tail_exponent));
        }
        if !table.decreasing {
            r.fail("Φ is not strictly decreasing on its table".into());
        }
        return Ok(r);
    }

    let mut report = CheckReport::new(cert.kind.label());
    let times = cert.region.times();
    let mut points = cert.region.points(n);
    let restrict = cert.kind.restricted_to_complement();
    if let (true, Some(d)) = (restrict, &cert.domain) {
        points.retain(|x| !d.contains(x));
    }

    // Nonnegativity of the time functions that must be.
    for (name, e) in [("gamma", &fns.gamma), ("alpha", &fns.alpha), ("nu", &fns.nu), ("alpha_bar", &fns.alpha_bar)] {
        if let Some(e) = e {
            for t in &times {
                if eval_time(e, *t)? < 0.0 {
                    report.fail(format!("{name}(t) is negative at t={t}"));
                    break;
                }
            }
        }
    }

    let monotone_k = if cert.kind == CertificateKind::Monotone {
        Some(monotone_constant(sys, &times, &points, fns.k_t, &mut report)?)
    } else {
        None
    };

    let pairs: Vec<(f64, &Vec<f64>)> = times.iter().flat_map(|t| points.iter().map(move |x| (*t, x))).collect();
    let results: Vec<Result<PointResult, LyapError>> = pairs
        .par_iter()
        .map(|(t, x)| point_margin(cert, sys, *t, x, monotone_k))
        .collect();

    let mut worst: Option<(Margin, f64, Vec<f64>)> = None;
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for ((t, x), r) in pairs.iter().zip(results) {
        let r = r?;
        if let Some(v) = r.v {
            v_min = v_min.min(v);
            v_max = v_max.max(v);
        }
        if let Some(m) = r.margin {
            if worst.as_ref().is_none_or(|(w, _, _)| m.scaled() > w.scaled()) {
                worst = Some((m, *t, (*x).clone()));
            }
        }
    }
    report.grid = pairs.len();
    match worst {
        Some((m, t, x)) => {
            report.worst_margin = m.raw();
            report.worst_scaled_margin = m.scaled();
            report.witness_t = t;
            report.witness_x = x;
            if m.scaled() > cert.tolerance {
                report.fail(format!("inequality violated: lhs={} rhs={}", m.lhs, m.rhs));
            }
        }
        None => report.fail("no grid points left after restricting to the complement of U".into()),
    }
    report.constant = monotone_k;

    if cert.v.is_some() && v_min < -cert.tolerance {
        report.fail(format!("V is negative on the grid (min {v_min})"));
    }

    match cert.kind {
        CertificateKind::NonRegularity => {
            let x0 = cert.x0.as_ref().expect("validated");
            let v0 = cert.v.as_ref().expect("validated").value(0.0, x0).map_err(|source| LyapError::Eval {
                t: 0.0,
                x: x0.clone(),
                source,
            })?;
            if !(v0 > 0.0) {
                report.fail(format!("V(0, x0) = {v0} is not positive"));
            }
            if !v_max.is_finite() {
                report.fail("V is unbounded on the grid".into());
            } else {
                report.notes.push(format!("sup V on grid = {v_max}"));
            }
        }
        CertificateKind::RecurrenceIntegrated => {
            let alpha = fns.alpha.as_ref().expect("validated");
            let t_end = cert.region.t_max.max(1.0);
            let beta = crate::quad::integrate(|t| alpha.eval_time(t), 0.0, t_end, Default::default())
                .map_err(|source| LyapError::Eval { t: t_end, x: Vec::new(), source })?
                .value;
            report.notes.push(format!("beta({t_end}) = {beta}"));
            if !(beta > 0.0) {
                report.fail("integral of alpha does not grow".into());
            }
        }
        _ => {}
    }

    if cert.kind.needs_radial_growth() {
        radial_growth(cert, n, &times, &mut report)?;
    }
    Ok(report)
}

fn monotone_constant(
    sys: &SdeSystem,
    times: &[f64],
    points: &[Vec<f64>],
    k_t: Option<f64>,
    report: &mut CheckReport,
) -> Result<f64, LyapError> {
    let mut k_max = 0.0f64;
    for t in times {
        for x in points {
            let (lhs, r2) = monotone_lhs(sys, *t, x)?;
            k_max = k_max.max(lhs / (1.0 + r2));
        }
    }
    let k_grid = k_max.max(f64::MIN_POSITIVE);
    report.notes.push(format!("grid maximum of (xᵀf + ½|σ|²)/(1+|x|²) = {k_max}"));
    Ok(k_t.unwrap_or(k_grid))
}

fn monotone_lhs(sys: &SdeSystem, t: f64, x: &[f64]) -> Result<(f64, f64), LyapError> {
    let f = sys.drift(t, x)?;
    let s = sys.diffusion(t, x)?;
    let xf: f64 = x.iter().zip(&f).map(|(a, b)| a * b).sum();
    let s2: f64 = s.iter().map(|v| v * v).sum();
    Ok((xf + 0.5 * s2, x.iter().map(|v| v * v).sum()))
}

/// `(2xᵀf + tr a, xᵀ a x)` at a point.
fn quadratic_parts(sys: &SdeSystem, t: f64, x: &[f64]) -> Result<(f64, f64), LyapError> {
    let n = sys.dim();
    let f = sys.drift(t, x)?;
    let a = sys.diffusion_matrix(t, x)?;
    let xf: f64 = x.iter().zip(&f).map(|(p, q)| p * q).sum();
    let tr: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let mut xax = 0.0;
    for i in 0..n {
        for j in 0..n {
            xax += x[i] * a[i * n + j] * x[j];
        }
    }
    Ok((2.0 * xf + tr, xax))
}

fn point_margin(
    cert: &Certificate,
    sys: &SdeSystem,
    t: f64,
    x: &[f64],
    monotone_k: Option<f64>,
) -> Result<PointResult, LyapError> {
    let fns = &cert.functions;
    let r = norm(x);
    let gen = match &cert.v {
        Some(v) => Some(generator_parts(sys, v, t, x)?),
        None => None,
    };
    let g = || gen.expect("validated");
    let m = match cert.kind {
        CertificateKind::Regularity => {
            let g = g();
            let rhs = eval_time(fns.gamma.as_ref().unwrap(), t)? + eval_time(fns.alpha.as_ref().unwrap(), t)? * g.v;
            Margin { lhs: g.lv, rhs }
        }
        CertificateKind::RegularityBihari { r: p } => {
            let g = g();
            let rhs = eval_time(fns.gamma.as_ref().unwrap(), t)?
                + eval_time(fns.alpha.as_ref().unwrap(), t)? * g.v.max(0.0).powf(p);
            Margin { lhs: g.lv, rhs }
        }
        CertificateKind::Monotone => {
            let (lhs, r2) = monotone_lhs(sys, t, x)?;
            Margin {
                lhs,
                rhs: monotone_k.expect("computed") * (1.0 + r2),
            }
        }
        CertificateKind::NonRegularity => {
            let g = g();
            Margin {
                lhs: eval_time(fns.alpha_bar.as_ref().unwrap(), t)? * g.v,
                rhs: g.lv,
            }
        }
        CertificateKind::RecurrenceMin => {
            let g = g();
            let nu = eval_time(fns.nu.as_ref().unwrap(), t)?;
            let mu = eval_radial(fns.mu.as_ref().unwrap(), r, t, x)?;
            Margin {
                lhs: g.lv,
                rhs: nu.min(nu + g.grad_sigma_sq - mu),
            }
        }
        CertificateKind::RecurrenceStrict => {
            let g = g();
            let nu = eval_time(fns.nu.as_ref().unwrap(), t)?;
            let mu = eval_radial(fns.mu.as_ref().unwrap(), r, t, x)?;
            Margin { lhs: g.lv, rhs: nu - mu }
        }
        CertificateKind::RecurrenceIntegrated => Margin {
            lhs: g().lv,
            rhs: -eval_time(fns.alpha.as_ref().unwrap(), t)?,
        },
        CertificateKind::Multidim => {
            let (p, xax) = quadratic_parts(sys, t, x)?;
            let r2 = r * r;
            let alpha = eval_time(fns.alpha.as_ref().unwrap(), t)?;
            let first = Margin {
                lhs: p / (1.0 + r2) - 2.0 * xax / (1.0 + r2).powi(2),
                rhs: alpha,
            };
            let outside = cert.domain.is_some_and(|d| !d.contains(x)) && r > 0.0;
            if outside {
                let second = Margin {
                    lhs: p / r2 - 2.0 * xax / (r2 * r2),
                    rhs: -eval_radial(fns.mu.as_ref().unwrap(), r, t, x)?,
                };
                worst_of([first, second]).unwrap()
            } else {
                first
            }
        }
        CertificateKind::ExponentialDecay => {
            let g = g();
            let lower = Margin {
                lhs: eval_radial(fns.mu1.as_ref().unwrap(), r, t, x)?,
                rhs: g.v,
            };
            let decay = Margin {
                lhs: g.lv,
                rhs: -fns.lambda.unwrap() * g.v,
            };
            worst_of([lower, decay]).unwrap()
        }
        CertificateKind::Nonrecurrence { .. } => unreachable!("handled separately"),
    };
    Ok(PointResult {
        margin: Some(m),
        v: gen.map(|g| g.v),
    })
}

/// `inf_{t, |x|=R} V` must be nondecreasing in `R` and reach the threshold.
fn radial_growth(cert: &Certificate, n: usize, times: &[f64], report: &mut CheckReport) -> Result<(), LyapError> {
    let v = cert.v.as_ref().expect("validated");
    let r_hi = cert.region.max_radius();
    let r_lo = cert
        .domain
        .map(|d| d.boundary_sup_radius())
        .unwrap_or(0.0)
        .max(0.1 * r_hi)
        .min(0.5 * r_hi);
    let dirs = crate::sde::sphere_directions(n, 64);
    let radii = linspace(r_lo, r_hi, 12);
    let mut infs = Vec::with_capacity(radii.len());
    for r in &radii {
        let mut inf = f64::INFINITY;
        for t in times {
            for d in &dirs {
                let x: Vec<f64> = d.iter().map(|c| c * r).collect();
                let val = v.value(*t, &x).map_err(|source| LyapError::Eval { t: *t, x: x.clone(), source })?;
                inf = inf.min(val);
            }
        }
        infs.push(inf);
    }
    let tol = cert.tolerance;
    if infs.windows(2).any(|w| w[1] < w[0] - tol * (1.0 + w[0].abs())) {
        report.fail(format!("inf of V over spheres is not increasing in R: {infs:?}"));
    }
    let last = *infs.last().unwrap();
    let grows = match cert.growth_threshold {
        Some(g) => last >= g,
        None => last > infs[0],
    };
    let threshold = cert.growth_threshold.unwrap_or(infs[0]);
    report.notes.push(format!("inf V on |x|={r_hi}: {last} (threshold {threshold})"));
    if !grows {
        report.fail(format!("inf of V at R={r_hi} is {last}, below the growth threshold {threshold}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Scope;
    use crate::linalg::Matrix;

    fn vexpr(src: &str, n: usize) -> Expr {
        Expr::parse(src, &Scope::state(n)).unwrap()
    }

    fn radial(src: &str) -> Expr {
        Expr::parse(src, &Scope::scalar("s")).unwrap()
    }

    fn timef(src: &str) -> Expr {
        Expr::parse(src, &Scope::time_only()).unwrap()
    }

    #[test]
    fn gbm_quadratic_generator() {
        // ℒ(x²/2) = α₁x² + ½α₂x²: the noise term enters with a plus sign
        let sys = SdeSystem::gbm_cubic(0.0, 1.0, 0.0).unwrap();
        let lv = generator(&sys, &vexpr("x1^2/2", 1), 0.0, &[2.0]).unwrap();
        assert!((lv - 2.0).abs() < 1e-6, "{lv}");
        for (a1, a2) in [(0.3, 1.0), (-1.0, 0.5), (2.0, 3.0)] {
            let sys = SdeSystem::gbm_cubic(a1, a2, 0.0).unwrap();
            for x in [-3.0, 0.5, 1.7, 4.0] {
                let lv = generator(&sys, &vexpr("x1^2/2", 1), 0.0, &[x]).unwrap();
                let exact = (a1 + a2 / 2.0) * x * x;
                assert!((lv - exact).abs() <= 1e-4 * exact.abs().max(1e-8), "{lv} {exact}");
            }
        }
    }

    #[test]
    fn log_bound_for_gbm_cubic() {
        let (a1, a2, a3) = (0.7, 0.4, 1.3);
        let sys = SdeSystem::gbm_cubic(a1, a2, a3).unwrap();
        let v = vexpr("log(1 + x1^2)", 1);
        let bound = 2.0 * f64::abs(a1) + a2.max(a3);
        for k in 0..=200 {
            let x = -10.0 + 0.1 * k as f64;
            let lv = generator(&sys, &v, 0.0, &[x]).unwrap();
            let x2 = x * x;
            let exact = 2.0 * a1 * x2 / (1.0 + x2) + x2 * (a2 + a3 * x2) / (1.0 + x2)
                - 2.0 * x2 * x2 * (a2 + a3 * x2) / (1.0 + x2).powi(2);
            assert!((lv - exact).abs() <= 1e-4 * exact.abs().max(1e-3), "x={x}: {lv} vs {exact}");
            assert!(lv <= bound);
        }
    }

    #[test]
    fn ou_integral_v_is_harmonic() {
        let (mu, sigma) = (-1.0, 1.0);
        let sys = SdeSystem::ou(mu, sigma).unwrap();
        let scope = Scope::state(1).with_constant("mu", mu).with_constant("sigma", sigma);
        let v = Expr::parse("integral(y, 0, abs(x1), exp(-mu*y^2/sigma^2))", &scope).unwrap();
        let grad = Expr::parse("exp(-mu*x1^2/sigma^2) * x1 / abs(x1)", &scope).unwrap();
        let hess = Expr::parse("-2*mu*x1/sigma^2 * exp(-mu*x1^2/sigma^2) * x1 / abs(x1)", &scope).unwrap();
        let analytic = LyapunovFn::new(v.clone()).with_gradient(vec![grad]).with_hessian(vec![hess]);
        let fd = LyapunovFn::new(v);
        for x in [1.5, 2.0, 3.0, -2.0] {
            let a = generator_parts(&sys, &analytic, 0.0, &[x]).unwrap().lv;
            assert!(a.abs() < 1e-6, "analytic ℒV at {x}: {a}");
            let g = generator_parts(&sys, &fd, 0.0, &[x]).unwrap();
            let scale = (mu * x * (mu * x * x).exp()).abs() + 0.5 * (2.0 * mu * x).abs() * (-mu * x * x).exp();
            assert!(g.lv.abs() <= 1e-4 * scale, "FD ℒV at {x}: {} (scale {scale})", g.lv);
        }
    }

    #[test]
    fn recurrence_strict_for_unit_noise_linear_drift() {
        let sys = SdeSystem::poly_drift_unit_noise(1).unwrap();
        let cert = Certificate::new(CertificateKind::RecurrenceStrict, Region::radial(0.0, 5.0, 101, 0))
            .with_v(vexpr("x1^2", 1))
            .with_functions(ComparisonFns {
                nu: Some(timef("1")),
                mu: Some(radial("2*s^2")),
                ..Default::default()
            })
            .with_domain(Domain::interval(-1.0, 1.0).unwrap());
        let r = check(&cert, &sys).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.worst_margin.abs() < 1e-5);
        let fine = check(&Certificate { region: cert.region.refined(), ..cert.clone() }, &sys).unwrap();
        assert!(fine.pass);
        assert!((fine.worst_margin - r.worst_margin).abs() < 1e-5);
    }

    #[test]
    fn table_cells_recurrence_certificates() {
        for (m, mu) in [(1u32, "s^2"), (3, "s^4")] {
            let sys = SdeSystem::poly_drift_unit_noise(m).unwrap();
            let cert = Certificate::new(CertificateKind::RecurrenceStrict, Region::radial(1.0, 6.0, 201, 0))
                .with_v(vexpr("x1^2", 1))
                .with_functions(ComparisonFns {
                    nu: Some(timef("0")),
                    mu: Some(radial(mu)),
                    ..Default::default()
                })
                .with_domain(Domain::interval(-1.0, 1.0).unwrap());
            assert!(check(&cert, &sys).unwrap().pass);
        }
    }

    #[test]
    fn nonregularity_fails_with_witness() {
        let sys = SdeSystem::ou(-1.0, 1.0).unwrap();
        let cert = Certificate::new(CertificateKind::NonRegularity, Region::cube(1, 3.0, 61))
            .with_v(vexpr("1/(1 + x1^2)", 1))
            .with_functions(ComparisonFns {
                alpha_bar: Some(timef("1")),
                ..Default::default()
            })
            .with_x0(vec![1.0]);
        let r = check(&cert, &sys).unwrap();
        assert!(!r.pass);
        assert!(r.worst_margin > 0.0);
        assert_eq!(r.witness_x.len(), 1);
    }

    #[test]
    fn monotone_on_stable_linear() {
        let a = Matrix::from_rows(&[vec![-1.0, 0.5], vec![0.0, -2.0]]).unwrap();
        let sys = SdeSystem::linear(a.clone(), Matrix::identity(2), Matrix::identity(2)).unwrap();
        let cert = Certificate::new(CertificateKind::Monotone, Region::cube(2, 4.0, 21));
        let r = check(&cert, &sys).unwrap();
        assert!(r.pass);
        let pts = cert.region.points(2);
        let grid_max = pts
            .iter()
            .map(|x| {
                let (l, r2) = monotone_lhs(&sys, 0.0, x).unwrap();
                l / (1.0 + r2)
            })
            .fold(0.0f64, f64::max);
        assert_eq!(r.constant, Some(grid_max));
        let tight = Certificate {
            functions: ComparisonFns { k_t: Some(0.5 * grid_max), ..Default::default() },
            ..cert
        };
        assert!(!check(&tight, &sys).unwrap().pass);
    }

    #[test]
    fn regularity_with_log_v() {
        let sys = SdeSystem::gbm_cubic(0.5, 1.0, 2.0).unwrap();
        let cert = Certificate::new(CertificateKind::Regularity, Region::radial(0.0, 10.0, 101, 0))
            .with_v(vexpr("log(1 + x1^2)", 1))
            .with_functions(ComparisonFns {
                gamma: Some(timef("3")),
                alpha: Some(timef("0")),
                ..Default::default()
            });
        let r = check(&cert, &sys).unwrap();
        assert!(r.pass, "{r:?}");
        let bihari = Certificate {
            kind: CertificateKind::RegularityBihari { r: 0.5 },
            ..cert.clone()
        };
        assert!(check(&bihari, &sys).unwrap().pass);
        // γ below the supremum of ℒV
        let low = Certificate {
            functions: ComparisonFns { gamma: Some(timef("0.5")), alpha: Some(timef("0")), ..Default::default() },
            ..cert
        };
        assert!(!check(&low, &sys).unwrap().pass);
    }

    #[test]
    fn slot_validation() {
        let sys = SdeSystem::ou(-1.0, 1.0).unwrap();
        let base = Certificate::new(CertificateKind::RecurrenceStrict, Region::radial(1.0, 3.0, 10, 0)).with_v(vexpr("x1^2", 1));
        assert!(matches!(check(&base, &sys), Err(LyapError::MissingSlot { slot: "nu", .. })));
        let extra = base.clone().with_functions(ComparisonFns {
            nu: Some(timef("0")),
            mu: Some(radial("s^2")),
            lambda: Some(1.0),
            ..Default::default()
        });
        assert!(matches!(check(&extra, &sys), Err(LyapError::ExtraneousSlot { slot: "lambda", .. })));
        let not_k = base.with_functions(ComparisonFns {
            nu: Some(timef("0")),
            mu: Some(radial("s^2 + 1")),
            ..Default::default()
        });
        assert!(matches!(check(&not_k, &sys), Err(LyapError::ClassK { .. })));
        assert!(check_class_k("mu", &radial("s - s^2"), 2.0).is_err());
        assert!(check_class_k("mu", &radial("s^4"), 2.0).is_ok());
    }

    #[test]
    fn gbm_dichotomy_flips_verdicts() {
        let a2 = 1.0;
        for a1 in [0.1, 0.25, 0.45, 0.55, 0.75, 1.0] {
            let sys = SdeSystem::gbm_cubic(a1, a2, 0.0).unwrap();
            // V = |x|^p gives ℒV = p(α₁ + (p−1)α₂/2)|x|^p, negative iff p < 1 − 2α₁/α₂
            let r = 1.0 - 2.0 * a1 / a2;
            let p = if r > 0.0 { r / 2.0 } else { 0.5 };
            let c = (p * (a1 + (p - 1.0) * a2 / 2.0)).abs();
            let rec = Certificate::new(CertificateKind::RecurrenceStrict, Region::radial(0.0, 8.0, 81, 0))
                .with_v(vexpr(&format!("abs(x1)^{p}"), 1))
                .with_functions(ComparisonFns {
                    nu: Some(timef("0")),
                    mu: Some(Expr::parse(&format!("{c}*s^{p}"), &Scope::scalar("s")).unwrap()),
                    ..Default::default()
                })
                .with_domain(Domain::interval(-1.0, 1.0).unwrap());
            let theta = Expr::parse(&format!("{}", 2.0 * a1 / a2), &Scope::scalar("s")).unwrap();
            let non = Certificate::new(CertificateKind::Nonrecurrence { inner_radius: 1.0 }, Region::radial(1.0, 8.0, 41, 0))
                .with_functions(ComparisonFns { theta: Some(theta), ..Default::default() });
            let recurrent = a1 < a2 / 2.0;
            assert_eq!(check(&rec, &sys).unwrap().pass, recurrent, "a1={a1}");
            assert_eq!(check(&non, &sys).unwrap().pass, !recurrent, "a1={a1}");
        }
    }

    #[test]
    fn multidim_block_on_stable_linear() {
        let sys = SdeSystem::linear(Matrix::identity(2).scale(-1.0), Matrix::identity(2), Matrix::identity(2).scale(0.5)).unwrap();
        // 2xᵀf + tr a = −2|x|² + 0.5, xᵀax = 0.25|x|²
        let cert = Certificate::new(CertificateKind::Multidim, Region::radial(0.0, 6.0, 61, 24))
            .with_functions(ComparisonFns {
                alpha: Some(timef("0.5")),
                mu: Some(radial("s^2/(1+s^2)")),
                ..Default::default()
            })
            .with_domain(Domain::ball(1.0).unwrap());
        let r = check(&cert, &sys).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn exponential_decay_closed_loop() {
        let sys = SdeSystem::scaled_identity(2, -0.52, 0.2).unwrap();
        let cert = Certificate::new(CertificateKind::ExponentialDecay, Region::radial(1.0, 5.0, 41, 16))
            .with_v(vexpr("(x1^2 + x2^2)/2", 2))
            .with_functions(ComparisonFns {
                mu1: Some(radial("s^2/2")),
                lambda: Some(1.0),
                ..Default::default()
            })
            .with_domain(Domain::ball(1.0).unwrap());
        let r = check(&cert, &sys).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.worst_margin.abs() < 1e-6);
        let too_fast = Certificate {
            functions: ComparisonFns { mu1: Some(radial("s^2/2")), lambda: Some(1.5), ..Default::default() },
            ..cert
        };
        assert!(!check(&too_fast, &sys).unwrap().pass);
    }

    #[test]
    fn integrated_recurrence_needs_domain() {
        let sys = SdeSystem::ou(0.0, 1.0).unwrap();
        let cert = Certificate::new(CertificateKind::RecurrenceIntegrated, Region::radial(0.0, 2.0, 21, 0))
            .with_v(vexpr("36 - (x1 - 4)^2", 1))
            .with_functions(ComparisonFns { alpha: Some(timef("1")), ..Default::default() });
        assert!(matches!(check(&cert, &sys), Err(LyapError::MissingSlot { slot: "domain", .. })));
        let cert = cert.with_domain(Domain::complement_of_ball(2.0).unwrap());
        // ℒV = −1 exactly
        let r = check(&cert, &sys).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn report_csv_header() {
        let mut r = CheckReport::new("monotone");
        r.witness_x = vec![1.0, 2.0];
        r.grid = 4;
        r.worst_margin = -1.0;
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "kind,pass,worst_margin,witness_t,witness_x,grid");
        assert_eq!(s.lines().nth(1).unwrap(), "monotone,true,-1,0,1;2,4");
    }
}
