//! Mean residence time of `dX = f(X) dt + dB` above an inner boundary `δ`.
//!
//! `τ(x) = E^x[τ]` solves `½τ″ + fτ′ = −1` on `(δ, ∞)` with `τ(δ) = 0` and
//! `τ` bounded by the minimal solution. The solver truncates at `X_R` and
//! closes the system with the exact far-field slope
//! `τ′(X_R) = w(X_R)`, `w(y) = 2∫_y^∞ exp(2∫_y^z f) dz`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, Scope};
use crate::quad::{integrate, integrate_to_infinity, QuadOptions};

pub const DEFAULT_NODES: usize = 10_000;
pub const MIN_NODES: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("invalid Dirichlet problem: {0}")]
    Invalid(String),
    #[error("drift evaluation failed at x={x}: {source}")]
    Eval {
        x: f64,
        #[source]
        source: ExprError,
    },
    #[error("speed integral diverges: {0}")]
    Divergent(String),
    #[error("solve failed: {0}")]
    Failure(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// `½τ″ + f(x)τ′ = −1` on `[δ, X_R]`, `τ(δ) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletSpec {
    /// Drift in the variable `x`.
    pub drift: Expr,
    pub delta: f64,
    pub x_r: f64,
    /// Number of grid intervals on `[δ, X_R]`.
    pub nodes: usize,
    /// Upper bound `τ̂(x)` on the mean residence time; `τ(δ + h) > τ̂(δ + h)`
    /// is reported as a failure.
    pub tau_bound: Option<Expr>,
}

impl DirichletSpec {
    pub fn new(drift: Expr, delta: f64, x_r: f64) -> Self {
        Self {
            drift,
            delta,
            x_r,
            nodes: DEFAULT_NODES,
            tau_bound: None,
        }
    }

    /// Parses the drift with the variable `x`.
    pub fn parse(drift: &str, delta: f64, x_r: f64) -> Result<Self, PdeError> {
        let f = Expr::parse(drift, &Scope::scalar("x")).map_err(|e| PdeError::Invalid(e.to_string()))?;
        Ok(Self::new(f, delta, x_r))
    }

    /// `f(x) = −x^m` on `[1, 3]`, bounded through `V = x²`:
    /// `τ(x) ≤ (x² − 1)/(2 − 1)`.
    pub fn poly_drift(m: u32) -> Result<Self, PdeError> {
        let bound = Expr::parse("x^2 - 1", &Scope::scalar("x")).map_err(|e| PdeError::Invalid(e.to_string()))?;
        Ok(Self::parse(&format!("-x^{m}"), 1.0, 3.0)?.with_tau_bound(bound))
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn with_x_r(mut self, x_r: f64) -> Self {
        self.x_r = x_r;
        self
    }

    pub fn with_tau_bound(mut self, bound: Expr) -> Self {
        self.tau_bound = Some(bound);
        self
    }

    pub fn step(&self) -> f64 {
        (self.x_r - self.delta) / self.nodes as f64
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if !(self.delta.is_finite() && self.x_r.is_finite() && self.delta < self.x_r) {
            return Err(PdeError::Invalid(format!("need δ < X_R, got δ={} X_R={}", self.delta, self.x_r)));
        }
        if self.nodes < MIN_NODES {
            return Err(PdeError::Invalid(format!("need at least {MIN_NODES} nodes, got {}", self.nodes)));
        }
        if self.drift.arity() > 1 || self.drift.uses_time() {
            return Err(PdeError::Invalid("drift must depend on x only".into()));
        }
        Ok(())
    }

    fn f(&self, x: f64) -> Result<f64, PdeError> {
        eval_drift(&self.drift, x)
    }
}

fn eval_drift(f: &Expr, x: f64) -> Result<f64, PdeError> {
    let v = f.eval_scalar(x).map_err(|source| PdeError::Eval { x, source })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PdeError::Failure(format!("drift is {v} at x={x}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanResidenceTable {
    pub x: Vec<f64>,
    pub tau: Vec<f64>,
    /// `τ(δ + h)`.
    pub shooting_value: f64,
    /// `τ(δ)` reconstructed from the stencil at `δ + h`; ideally zero.
    pub shooting_residual: f64,
    /// Imposed far-field slope `τ′(X_R)`.
    pub far_slope: f64,
    pub warnings: Vec<String>,
}

impl MeanResidenceTable {
    pub fn step(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    /// Linear interpolation on the grid.
    pub fn tau_at(&self, x0: f64) -> Result<f64, PdeError> {
        let (a, b) = (self.x[0], *self.x.last().expect("nonempty grid"));
        if !(a..=b).contains(&x0) {
            return Err(PdeError::Invalid(format!("x0={x0} outside [{a}, {b}]")));
        }
        let h = self.step();
        let i = (((x0 - a) / h).floor() as usize).min(self.x.len() - 2);
        let w = (x0 - self.x[i]) / h;
        Ok((1.0 - w) * self.tau[i] + w * self.tau[i + 1])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PdeError> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| PdeError::Io(e.to_string());
        out.write_record(["x", "tau"]).map_err(io)?;
        for (x, t) in self.x.iter().zip(&self.tau) {
            out.write_record([format!("{x}"), format!("{t}")]).map_err(io)?;
        }
        out.flush().map_err(|e| PdeError::Io(e.to_string()))
    }
}

/// Solves `a_i u_{i−1} + b_i u_i + c_i u_{i+1} = d_i` (Thomas algorithm).
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>, PdeError> {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut denom = b[0];
    for i in 0..n {
        if i > 0 {
            denom = b[i] - a[i] * cp[i - 1];
        }
        if denom == 0.0 || !denom.is_finite() {
            return Err(PdeError::Failure(format!("tridiagonal pivot {denom} at row {i}")));
        }
        cp[i] = c[i] / denom;
        dp[i] = (d[i] - if i > 0 { a[i] * dp[i - 1] } else { 0.0 }) / denom;
    }
    let mut u = vec![0.0; n];
    u[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        u[i] = dp[i] - cp[i] * u[i + 1];
    }
    Ok(u)
}

fn inner() -> QuadOptions {
    QuadOptions::with_rel_tol(1e-12)
}

/// `∫_y^z f`.
fn drift_integral(f: &Expr, y: f64, z: f64) -> Result<f64, PdeError> {
    Ok(integrate(|u| eval_drift(f, u), y, z, inner())?.value)
}

/// `w(y) = 2∫_y^∞ exp(2∫_y^z f) dz`, the slope of the minimal solution.
pub fn far_field_slope(f: &Expr, y: f64) -> Result<f64, PdeError> {
    let r = integrate_to_infinity(
        |z| {
            let g = 2.0 * drift_integral(f, y, z)?;
            let v = g.exp();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(PdeError::Divergent(format!("exp(2∫f) overflows at z={z} from y={y}")))
            }
        },
        y,
        QuadOptions::with_rel_tol(1e-10),
    )?;
    if !r.converged || !r.value.is_finite() {
        return Err(PdeError::Divergent(format!(
            "∫_y^∞ exp(2∫f) did not converge at y={y} (value {}, error {:e}); drift is not recurrent",
            r.value, r.abs_error
        )));
    }
    Ok(2.0 * r.value)
}

/// Central differences on `[δ, X_R]` with the far-field slope imposed
/// through a ghost node at `X_R + h`.
pub fn solve_mean_residence_1d(spec: &DirichletSpec) -> Result<MeanResidenceTable, PdeError> {
    spec.validate()?;
    let n = spec.nodes;
    let h = spec.step();
    let x: Vec<f64> = (0..=n).map(|i| spec.delta + h * i as f64).collect();
    let mut warnings = Vec::new();
    let f_end = spec.f(spec.x_r)?;
    if f_end >= 0.0 {
        warnings.push(format!("drift f(X_R) = {f_end} is not inward-pointing"));
    }
    let far_slope = far_field_slope(&spec.drift, spec.x_r)?;
    let (diff, conv) = (0.5 / (h * h), 0.5 / h);
    let mut a = vec![0.0; n];
    let b = vec![-2.0 * diff; n];
    let mut c = vec![0.0; n];
    let mut d = vec![-1.0; n];
    let mut peclet = 0.0f64;
    for k in 0..n {
        let fi = spec.f(x[k + 1])?;
        peclet = peclet.max(fi.abs() * h);
        a[k] = diff - conv * fi;
        c[k] = diff + conv * fi;
    }
    if peclet >= 1.0 {
        warnings.push(format!("cell Péclet number {peclet:.3} ≥ 1; refine the grid"));
    }
    a[0] = 0.0;
    let last = n - 1;
    a[last] += c[last];
    d[last] -= c[last] * 2.0 * h * far_slope;
    c[last] = 0.0;
    let u = thomas(&a, &b, &c, &d)?;
    let mut tau = Vec::with_capacity(n + 1);
    tau.push(0.0);
    tau.extend(u);
    if let Some((i, t)) = tau.iter().enumerate().find(|(_, t)| !t.is_finite() || **t < 0.0) {
        return Err(PdeError::Failure(format!(
            "τ({}) = {t} is negative or non-finite; check truncation and recurrence of the drift",
            x[i]
        )));
    }
    let s = tau[1];
    if let Some(bound) = &spec.tau_bound {
        let s_max = bound.eval_scalar(x[1]).map_err(|source| PdeError::Eval { x: x[1], source })?;
        if !(s <= s_max) {
            return Err(PdeError::Failure(format!("τ(δ+h) = {s} exceeds its bound {s_max}")));
        }
    }
    let f1 = spec.f(x[1])?;
    let shooting_residual = (2.0 * tau[1] - (1.0 + f1 * h) * tau[2] - 2.0 * h * h) / (1.0 - f1 * h);
    Ok(MeanResidenceTable {
        x,
        tau,
        shooting_value: s,
        shooting_residual,
        far_slope,
        warnings,
    })
}

/// Central differences on `[a, b]` with `τ(a) = τ(b) = 0`.
pub fn solve_two_sided_1d(drift: &Expr, a: f64, b: f64, nodes: usize) -> Result<MeanResidenceTable, PdeError> {
    let spec = DirichletSpec::new(drift.clone(), a, b).with_nodes(nodes);
    spec.validate()?;
    let h = spec.step();
    let x: Vec<f64> = (0..=nodes).map(|i| a + h * i as f64).collect();
    let m = nodes - 1;
    let (diff, conv) = (0.5 / (h * h), 0.5 / h);
    let (mut lo, mut up) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..m {
        let fi = spec.f(x[k + 1])?;
        lo[k] = diff - conv * fi;
        up[k] = diff + conv * fi;
    }
    lo[0] = 0.0;
    up[m - 1] = 0.0;
    let u = thomas(&lo, &vec![-2.0 * diff; m], &up, &vec![-1.0; m])?;
    let mut tau = Vec::with_capacity(nodes + 1);
    tau.push(0.0);
    tau.extend(u);
    tau.push(0.0);
    Ok(MeanResidenceTable {
        shooting_value: tau[1],
        shooting_residual: 0.0,
        far_slope: f64::NAN,
        x,
        tau,
        warnings: Vec::new(),
    })
}

/// `E^{x₀}[τ] = 2∫_δ^{x₀} s(y) ∫_y^∞ m(z) dz dy` for unit noise, with scale
/// density `s = exp(−2∫_δ f)` and speed density `m = 1/s`.
pub fn quadrature_oracle(f: &Expr, delta: f64, x0: f64) -> Result<f64, PdeError> {
    if x0 < delta {
        return Err(PdeError::Invalid(format!("x0={x0} below δ={delta}")));
    }
    let r = integrate(|y| far_field_slope(f, y), delta, x0, QuadOptions::with_rel_tol(1e-9))?;
    if !r.converged {
        return Err(PdeError::Failure(format!("outer quadrature error {:e}", r.abs_error)));
    }
    Ok(r.value)
}

/// Largest `|½τ″ + fτ′ + 1|` at interior nodes, with fourth-order stencils
/// evaluated on the solved table (nodes two or more steps from either end).
pub fn residual_check(table: &MeanResidenceTable, f: &Expr) -> Result<f64, PdeError> {
    let (x, t) = (&table.x, &table.tau);
    let h = table.step();
    let mut worst = 0.0f64;
    for i in 2..x.len().saturating_sub(2) {
        let d1 = (t[i - 2] - 8.0 * t[i - 1] + 8.0 * t[i + 1] - t[i + 2]) / (12.0 * h);
        let d2 = (-t[i - 2] + 16.0 * t[i - 1] - 30.0 * t[i] + 16.0 * t[i + 1] - t[i + 2]) / (12.0 * h * h);
        worst = worst.max((0.5 * d2 + eval_drift(f, x[i])? * d1 + 1.0).abs());
    }
    Ok(worst)
}
