//! Domain-aiming feedback synthesis.
//!
//! Nonlinear systems `dX = (g + u) dt + σ dB` are closed with `u = −g + f`
//! for a target drift `f` that carries a Lyapunov certificate; linear systems
//! `dX = (AX + Bu) dt + C dB` with square invertible `B` use
//! `u = B⁻¹(−A + Dᵀ − γI)x` and `V = ½xᵀM⁻¹x`, where
//! `DM⁻¹ + M⁻¹Dᵀ + CCᵀ = 0`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, Scope};
use crate::linalg::{routh_hurwitz, LinalgError, Matrix};
use crate::lyap::{
    check, mean_residence_bound, Certificate, CertificateKind, CheckReport, ComparisonFns, LyapError,
    LyapunovFn, NuTail, Region,
};
use crate::sde::{fmt_num, linear_form, Catalog, Domain, SdeError, SdeSystem};

const RANK_TOL: f64 = 1e-10;
const LYAPUNOV_TOL: f64 = 1e-10;
const GAMMA_START: f64 = 1e-12;
const GAMMA_MAX: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("B must be square and invertible: {0}")]
    SingularB(String),
    #[error("D is not Hurwitz")]
    NotHurwitz,
    #[error("(D, C) is not completely disturbable: rank {rank} < {n}")]
    NotDisturbable { rank: usize, n: usize },
    #[error("Lyapunov residual {residual:e} exceeds {limit:e}")]
    LyapunovResidual { residual: f64, limit: f64 },
    #[error("M is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("no admissible γ up to {0:e}")]
    NoGamma(f64),
    #[error("closed-loop certificate `{}` failed: {}", .0.kind, .0.summary())]
    Certificate(Box<CheckReport>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Lyap(#[from] LyapError),
    #[error(transparent)]
    Sde(#[from] SdeError),
}

/// Reach `∂B_δ` from `x₀` within `T` with probability at least `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AimingProblem {
    pub horizon: f64,
    pub p: f64,
    pub delta: f64,
    pub x0: Vec<f64>,
}

impl AimingProblem {
    pub fn new(horizon: f64, p: f64, delta: f64, x0: Vec<f64>) -> Result<Self, ControlError> {
        let prob = Self { horizon, p, delta, x0 };
        prob.validate()?;
        Ok(prob)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ControlError::Invalid(format!("need T > 0, got {}", self.horizon)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(ControlError::Invalid(format!("need 0 < p < 1, got {}", self.p)));
        }
        if !(self.delta > 0.0) {
            return Err(ControlError::Invalid(format!("need δ > 0, got {}", self.delta)));
        }
        let r = norm(&self.x0);
        if !(r >= self.delta * (1.0 - 1e-12)) {
            return Err(ControlError::Invalid(format!("x0 lies inside B_δ (|x0| = {r}, δ = {})", self.delta)));
        }
        Ok(())
    }

    pub fn ball(&self) -> Result<Domain, ControlError> {
        Ok(Domain::ball(self.delta).map_err(SdeError::from)?)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `V(0, x₀) ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
}

impl Inequality {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    /// `u(t, x)`, one expression per input.
    pub feedback: Vec<Expr>,
    pub gain: Option<Matrix>,
    pub gamma: Option<f64>,
    pub m: Option<Matrix>,
    pub m_inv: Option<Matrix>,
    /// Ascending eigenvalues of `M`.
    pub m_eigenvalues: Vec<f64>,
    pub a_gamma: Option<f64>,
    pub lyapunov_residual: Option<f64>,
    pub v: LyapunovFn,
    pub inequality: Inequality,
    pub admissible: bool,
    /// Lower bound on `P(τ ≤ T)` implied by the certificate.
    pub guaranteed_probability: f64,
    pub problem: AimingProblem,
    pub certificates: Vec<CheckReport>,
    pub closed_loop: SdeSystem,
}

impl SynthesisResult {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let fb: Vec<String> = self.feedback.iter().map(|e| e.to_string()).collect();
        s.push_str(&format!("feedback u = [{}]\n", fb.join(", ")));
        if let Some(k) = &self.gain {
            s.push_str(&format!("gain =\n{k:?}\n"));
        }
        if let Some(g) = self.gamma {
            s.push_str(&format!("gamma = {g}\n"));
        }
        if let Some(a) = self.a_gamma {
            s.push_str(&format!("a_gamma = {a}\n"));
        }
        if !self.m_eigenvalues.is_empty() {
            s.push_str(&format!("eig(M) = {:?}\n", self.m_eigenvalues));
        }
        s.push_str(&format!(
            "V(0,x0) = {} <= {} : {}\n",
            self.inequality.lhs,
            self.inequality.rhs,
            if self.admissible { "admissible" } else { "not admissible" }
        ));
        s.push_str(&format!("guaranteed P(tau <= T) >= {}\n", self.guaranteed_probability));
        for c in &self.certificates {
            s.push_str(&format!("{}\n", c.summary()));
        }
        s
    }

    /// `field,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ControlError> {
        let mut rows: Vec<(String, String)> = vec![
            ("horizon".into(), self.problem.horizon.to_string()),
            ("p".into(), self.problem.p.to_string()),
            ("delta".into(), self.problem.delta.to_string()),
        ];
        if let Some(g) = self.gamma {
            rows.push(("gamma".into(), g.to_string()));
        }
        if let Some(a) = self.a_gamma {
            rows.push(("a_gamma".into(), a.to_string()));
        }
        if let Some(k) = &self.gain {
            for i in 0..k.rows() {
                for j in 0..k.cols() {
                    rows.push((format!("gain_{}{}", i + 1, j + 1), k[(i, j)].to_string()));
                }
            }
        }
        for (i, e) in self.m_eigenvalues.iter().enumerate() {
            rows.push((format!("eig_m_{}", i + 1), e.to_string()));
        }
        if let Some(r) = self.lyapunov_residual {
            rows.push(("lyapunov_residual".into(), r.to_string()));
        }
        rows.push(("lhs".into(), self.inequality.lhs.to_string()));
        rows.push(("rhs".into(), self.inequality.rhs.to_string()));
        rows.push(("admissible".into(), self.admissible.to_string()));
        rows.push(("guaranteed_probability".into(), self.guaranteed_probability.to_string()));
        for (i, e) in self.feedback.iter().enumerate() {
            rows.push((format!("u_{}", i + 1), e.to_string()));
        }
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| ControlError::Invalid(format!("I/O: {e}"));
        out.write_record(["field", "value"]).map_err(io)?;
        for (k, v) in rows {
            out.write_record([k, v]).map_err(io)?;
        }
        out.flush().map_err(|e| ControlError::Invalid(format!("I/O: {e}")))
    }
}

/// `(D Hurwitz, (D, C) completely disturbable)`.
pub fn hurwitz_and_disturbable(d: &Matrix, c: &Matrix) -> Result<(bool, bool), ControlError> {
    let n = d.rows();
    if !d.is_square() || c.rows() != n {
        return Err(ControlError::Invalid("need D n×n and C n×m".into()));
    }
    Ok((routh_hurwitz(&d.char_poly()), disturbability_rank(d, c)? == n))
}

/// `rank(C | DC | ⋯ | Dⁿ⁻¹C)`.
pub fn disturbability_rank(d: &Matrix, c: &Matrix) -> Result<usize, ControlError> {
    let mut block = c.clone();
    let mut k = c.clone();
    for _ in 1..d.rows() {
        k = d.try_mul(&k)?;
        block = block.hcat(&k)?;
    }
    Ok(block.rank(RANK_TOL))
}

/// `‖DP + PDᵀ + CCᵀ‖_F`.
pub fn lyapunov_residual(d: &Matrix, c: &Matrix, p: &Matrix) -> Result<f64, ControlError> {
    let cct = c.try_mul(&c.transpose())?;
    let r = &(&d.try_mul(p)? + &p.try_mul(&d.transpose())?) + &cct;
    Ok(r.frobenius())
}

/// Solves `DP + PDᵀ = −CCᵀ` through its `n²`-dimensional vectorization.
pub fn lyapunov_solve(d: &Matrix, c: &Matrix) -> Result<Matrix, ControlError> {
    let n = d.rows();
    if !d.is_square() || c.rows() != n {
        return Err(ControlError::Invalid("need D n×n and C n×m".into()));
    }
    if !routh_hurwitz(&d.char_poly()) {
        return Err(ControlError::NotHurwitz);
    }
    let cct = c.try_mul(&c.transpose())?;
    let nn = n * n;
    let mut k = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for l in 0..n {
                k[(row, l * n + j)] += d[(i, l)];
                k[(row, i * n + l)] += d[(j, l)];
            }
        }
    }
    let rhs: Vec<f64> = cct.as_slice().iter().map(|v| -v).collect();
    let p = Matrix::from_row_major(n, n, k.solve(&rhs)?)?.symmetrize();
    let residual = lyapunov_residual(d, c, &p)?;
    let limit = LYAPUNOV_TOL * cct.frobenius().max(f64::MIN_POSITIVE);
    if residual > limit {
        return Err(ControlError::LyapunovResidual { residual, limit });
    }
    Ok(p)
}

/// The linear system `dX = (AX + Bu) dt + C dB` with a chosen Hurwitz `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    /// Defaults to `−I`.
    pub d: Option<Matrix>,
}

impl LinearPlant {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Self {
        Self { a, b, c, d: None }
    }

    pub fn with_d(mut self, d: Matrix) -> Self {
        self.d = Some(d);
        self
    }

    pub fn d_or_default(&self) -> Matrix {
        self.d.clone().unwrap_or_else(|| Matrix::identity(self.a.rows()).scale(-1.0))
    }
}

/// Spectral data of `M` and `CCᵀ` entering `a_γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaData {
    pub lambda_1: f64,
    pub lambda_sum: f64,
    pub m_min: f64,
    pub m_max: f64,
}

impl GammaData {
    /// `a_γ = (λ₁/2 + γ/λ_max(M))δ² − Σλᵢ/(2λ_min(M))`.
    pub fn a_gamma(&self, gamma: f64, delta: f64) -> f64 {
        (self.lambda_1 / 2.0 + gamma / self.m_max) * delta * delta - self.lambda_sum / (2.0 * self.m_min)
    }

    /// Right side `δ²/(2λ_max(M)) + T(1 − p)a_γ`.
    pub fn rhs(&self, gamma: f64, prob: &AimingProblem) -> f64 {
        prob.delta * prob.delta / (2.0 * self.m_max) + prob.horizon * (1.0 - prob.p) * self.a_gamma(gamma, prob.delta)
    }
}

/// Smallest `γ > 0` with `a_γ > 0` and `lhs ≤ rhs(γ)`: doubling from
/// `1e-12`, then bisection to relative width `1e-12`.
pub fn minimal_gamma(data: &GammaData, lhs: f64, prob: &AimingProblem) -> Result<f64, ControlError> {
    let ok = |g: f64| data.a_gamma(g, prob.delta) > 0.0 && lhs <= data.rhs(g, prob);
    if ok(GAMMA_START) {
        return Ok(GAMMA_START);
    }
    let mut hi = GAMMA_START;
    while !ok(hi) {
        hi *= 2.0;
        if hi > GAMMA_MAX {
            return Err(ControlError::NoGamma(GAMMA_MAX));
        }
    }
    let mut lo = hi / 2.0;
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn state_expr(src: &str, n: usize) -> Result<Expr, ControlError> {
    Expr::parse(src, &Scope::state(n)).map_err(|e| ControlError::Invalid(format!("`{src}`: {e}")))
}

/// `½xᵀPx` with analytic gradient `Px` and Hessian `P`.
pub fn quadratic_lyapunov(p: &Matrix) -> Result<LyapunovFn, ControlError> {
    let n = p.rows();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if p[(i, j)] != 0.0 {
                terms.push(format!("{} * x{} * x{}", fmt_num(0.5 * p[(i, j)]), i + 1, j + 1));
            }
        }
    }
    let src = if terms.is_empty() { "0".to_string() } else { terms.join(" + ") };
    let v = state_expr(&src, n)?;
    let grad = (0..n).map(|i| state_expr(&linear_form(p.row(i)), n)).collect::<Result<Vec<_>, _>>()?;
    let hess = p.as_slice().iter().map(|v| Expr::constant(*v)).collect();
    Ok(LyapunovFn::new(v).with_gradient(grad).with_hessian(hess))
}

fn outer_radius(prob: &AimingProblem) -> f64 {
    4.0 * norm(&prob.x0).max(prob.delta)
}

fn require(report: CheckReport) -> Result<CheckReport, ControlError> {
    if report.pass {
        Ok(report)
    } else {
        Err(ControlError::Certificate(Box::new(report)))
    }
}

fn time_const(v: f64) -> Expr {
    Expr::constant(v)
}

fn radial_expr(src: &str) -> Result<Expr, ControlError> {
    Expr::parse(src, &Scope::scalar("s")).map_err(|e| ControlError::Invalid(format!("`{src}`: {e}")))
}

/// Linear synthesis with the minimal admissible `γ`; the closed loop
/// `dX = (Dᵀ − γI)X dt + C dB` is re-certified before returning.
pub fn synthesize_linear(plant: &LinearPlant, prob: &AimingProblem) -> Result<SynthesisResult, ControlError> {
    prob.validate()?;
    let (a, b, c) = (&plant.a, &plant.b, &plant.c);
    let n = a.rows();
    if !a.is_square() || b.rows() != n || c.rows() != n || prob.x0.len() != n {
        return Err(ControlError::Invalid("need A n×n, B n×n, C n×m and x0 ∈ ℝⁿ".into()));
    }
    if !b.is_square() {
        return Err(ControlError::SingularB(format!("B is {}×{}", b.rows(), b.cols())));
    }
    let b_inv = b.inverse().map_err(|e| ControlError::SingularB(e.to_string()))?;
    let d = plant.d_or_default();
    if d.rows() != n || !d.is_square() {
        return Err(ControlError::Invalid("D must be n×n".into()));
    }
    let (hurwitz, _) = hurwitz_and_disturbable(&d, c)?;
    if !hurwitz {
        return Err(ControlError::NotHurwitz);
    }
    let rank = disturbability_rank(&d, c)?;
    if rank < n {
        return Err(ControlError::NotDisturbable { rank, n });
    }
    let p = lyapunov_solve(&d, c)?;
    let m = p.inverse()?.symmetrize();
    let (m_eig, _) = m.symmetric_eigen()?;
    let (m_min, m_max) = (m_eig[0], m_eig[n - 1]);
    if !(m_min > 1e-12 * m_max.abs()) {
        return Err(ControlError::NotPositiveDefinite(m_min));
    }
    let cct = c.try_mul(&c.transpose())?;
    let (c_eig, _) = cct.symmetric_eigen()?;
    let data = GammaData {
        lambda_1: c_eig[0].max(0.0),
        lambda_sum: c_eig.iter().sum(),
        m_min,
        m_max,
    };
    let lhs = 0.5 * p.quad_form(&prob.x0);
    let gamma = minimal_gamma(&data, lhs, prob)?;
    let a_gamma = data.a_gamma(gamma, prob.delta);
    let closed = &d.transpose() - &Matrix::identity(n).scale(gamma);
    let gain = b_inv.try_mul(&(&closed - a))?;
    let feedback = (0..n).map(|i| state_expr(&linear_form(gain.row(i)), n)).collect::<Result<Vec<_>, _>>()?;
    let closed_loop = SdeSystem::affine(closed, c.clone())?.with_catalog(Catalog::ClosedLoop {
        base: Box::new(Catalog::Linear {
            a: a.clone(),
            b: b.clone(),
            c: c.clone(),
        }),
        description: format!("u = B^-1(-A + D^T - {gamma} I)x"),
    });
    let v = quadratic_lyapunov(&p)?;
    let inequality = Inequality {
        lhs,
        rhs: data.rhs(gamma, prob),
    };
    // ℒV ≤ ½tr(PCCᵀ) everywhere and ℒV ≤ −(a_γ/δ²)|x|² outside B_δ.
    let trace = p.try_mul(&cct)?.trace();
    let r_out = outer_radius(prob);
    let reg = Certificate::new(CertificateKind::Regularity, Region::radial(0.0, r_out, 41, 32))
        .with_v(v.clone())
        .with_functions(ComparisonFns {
            gamma: Some(time_const(0.5 * trace)),
            alpha: Some(time_const(0.0)),
            ..Default::default()
        });
    let rec = Certificate::new(CertificateKind::RecurrenceStrict, Region::radial(prob.delta, r_out, 41, 32))
        .with_v(v.clone())
        .with_functions(ComparisonFns {
            nu: Some(time_const(0.0)),
            mu: Some(radial_expr(&format!("{} * s^2", a_gamma / (prob.delta * prob.delta)))?),
            ..Default::default()
        })
        .with_domain(prob.ball()?);
    let certificates = vec![require(check(&reg, &closed_loop)?)?, require(check(&rec, &closed_loop)?)?];
    let mean_bound = (lhs - prob.delta * prob.delta / (2.0 * m_max)) / a_gamma;
    Ok(SynthesisResult {
        feedback,
        gain: Some(gain),
        gamma: Some(gamma),
        m: Some(m),
        m_inv: Some(p.clone()),
        m_eigenvalues: m_eig,
        a_gamma: Some(a_gamma),
        lyapunov_residual: Some(lyapunov_residual(&d, c, &p)?),
        v,
        admissible: inequality.holds() && a_gamma > 0.0,
        inequality,
        guaranteed_probability: (1.0 - mean_bound.max(0.0) / prob.horizon).clamp(0.0, 1.0),
        problem: prob.clone(),
        certificates,
        closed_loop,
    })
}

/// Which Lyapunov conditions the target drift satisfies outside `B_δ`.
#[derive(Debug, Clone, PartialEq)]
pub enum AimingBranch {
    /// `ℒV ≤ ν(t) − μ(|x|)`, giving `E[τ] ≤ (V₀ + ∫ν − inf_{∂B_δ} V)/μ(δ)`.
    Recurrence { mu: Expr, nu: Expr, t_tail: f64, tail: NuTail },
    /// `μ₁(|x|) ≤ V`, `ℒV ≤ −λV`, giving `E[e^{λτ}] ≤ V₀/μ₁(δ)`.
    Exponential { mu1: Expr, lambda: f64 },
}

/// `dX = (g + u) dt + σ dB` to be closed with `u = −g + f`.
#[derive(Debug, Clone)]
pub struct NonlinearPlant {
    pub g: Vec<String>,
    /// Row-major `n × m`.
    pub diffusion: Vec<String>,
    pub noise_dim: usize,
    pub constants: BTreeMap<String, f64>,
    pub target: Vec<String>,
    pub v: LyapunovFn,
    pub branch: AimingBranch,
    /// `ℒV ≤ γ + αV` on the whole state space for the closed loop.
    pub regularity: (Expr, Expr),
    /// Grid for the certificate re-check; defaults to radii up to `4|x₀|`.
    pub region: Option<Region>,
}

/// The noise shape of the multiplicative aiming example: `σ = σ̂(t, x)·x`
/// with scalar Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleMode {
    /// `u = −g − σ̂²x` under `σ̂² ≥ α(1 + |x|²)`.
    Cancel,
    /// `u = −g − ½σ̂²x − ½x`, any `σ̂`.
    Decay,
}

impl NonlinearPlant {
    /// `dX = (g + u) dt + σ̂·X dB` closed as in the multiplicative aiming
    /// example; `alpha` is the lower growth constant of `σ̂²` for
    /// [`ExampleMode::Cancel`].
    pub fn multiplicative_example(
        mode: ExampleMode,
        g: Vec<String>,
        sigma_hat: &str,
        alpha: f64,
        constants: BTreeMap<String, f64>,
    ) -> Result<Self, ControlError> {
        let n = g.len();
        if n == 0 {
            return Err(ControlError::Invalid("need n ≥ 1".into()));
        }
        let diffusion: Vec<String> = (1..=n).map(|i| format!("({sigma_hat}) * x{i}")).collect();
        let sq = format!("({sigma_hat})^2");
        let (target, branch) = match mode {
            ExampleMode::Cancel => {
                if !(alpha > 0.0) {
                    return Err(ControlError::Invalid("the cancel mode needs α > 0".into()));
                }
                let target = (1..=n).map(|i| format!("-{sq} * x{i}")).collect();
                let branch = AimingBranch::Recurrence {
                    mu: radial_expr(&format!("0.5 * {alpha} * s^2 * (1 + s^2)"))?,
                    nu: time_const(0.0),
                    t_tail: 1.0,
                    tail: NuTail::Zero,
                };
                (target, branch)
            }
            ExampleMode::Decay => {
                let target = (1..=n).map(|i| format!("-0.5 * {sq} * x{i} - 0.5 * x{i}")).collect();
                (target, AimingBranch::Exponential { mu1: radial_expr("s^2 / 2")?, lambda: 1.0 })
            }
        };
        let v = quadratic_lyapunov(&Matrix::identity(n))?;
        Ok(Self {
            g,
            diffusion,
            noise_dim: 1,
            constants,
            target,
            v,
            branch,
            regularity: (time_const(0.0), time_const(0.0)),
            region: None,
        })
    }

    fn scope(&self) -> Scope {
        Scope::state(self.g.len()).with_constants(self.constants.iter())
    }
}

/// Closes `dX = (g + u) dt + σ dB` with `u = −g + f`, re-certifies the
/// closed loop and evaluates the branch admissibility inequality.
pub fn synthesize_nonlinear(plant: &NonlinearPlant, prob: &AimingProblem) -> Result<SynthesisResult, ControlError> {
    prob.validate()?;
    let n = plant.g.len();
    if plant.target.len() != n || prob.x0.len() != n {
        return Err(ControlError::Invalid("g, f and x0 must share the state dimension".into()));
    }
    let scope = plant.scope();
    let parse = |s: &str| Expr::parse(s, &scope).map_err(|e| ControlError::Invalid(format!("`{s}`: {e}")));
    let feedback = plant
        .g
        .iter()
        .zip(&plant.target)
        .map(|(g, f)| parse(&format!("-({g}) + ({f})")))
        .collect::<Result<Vec<_>, _>>()?;
    let closed_loop = SdeSystem::from_dsl(&plant.target, &plant.diffusion, plant.noise_dim, plant.constants.clone())?
        .with_catalog(Catalog::ClosedLoop {
            base: Box::new(Catalog::Generic),
            description: format!("u = -g + f, f = [{}]", plant.target.join(", ")),
        });
    let ball = prob.ball()?;
    let r_out = outer_radius(prob);
    let region = plant.region.clone().unwrap_or_else(|| Region::radial(prob.delta, r_out, 41, 32));
    let reg = Certificate::new(CertificateKind::Regularity, Region::radial(0.0, r_out, 41, 32))
        .with_v(plant.v.clone())
        .with_functions(ComparisonFns {
            gamma: Some(plant.regularity.0.clone()),
            alpha: Some(plant.regularity.1.clone()),
            ..Default::default()
        });
    let mut certificates = vec![require(check(&reg, &closed_loop)?)?];
    let v0 = plant.v.value(0.0, &prob.x0).map_err(|e| ControlError::Invalid(e.to_string()))?;
    let (inequality, guaranteed) = match &plant.branch {
        AimingBranch::Recurrence { mu, nu, t_tail, tail } => {
            let cert = Certificate::new(CertificateKind::RecurrenceStrict, region)
                .with_v(plant.v.clone())
                .with_functions(ComparisonFns {
                    nu: Some(nu.clone()),
                    mu: Some(mu.clone()),
                    ..Default::default()
                })
                .with_domain(ball);
            certificates.push(require(check(&cert, &closed_loop)?)?);
            let mu_d = mu.eval_scalar(prob.delta).map_err(|e| ControlError::Invalid(e.to_string()))?;
            let mean = mean_residence_bound(&plant.v.v, nu, *t_tail, *tail, mu, &ball, &prob.x0)?;
            // inf_{∂B_δ} V − ∫ν + T(1−p)μ(δ), with the first two terms
            // recovered from the mean bound
            let rhs = v0 + (prob.horizon * (1.0 - prob.p) - mean) * mu_d;
            (Inequality { lhs: v0, rhs }, 1.0 - mean / prob.horizon)
        }
        AimingBranch::Exponential { mu1, lambda } => {
            let cert = Certificate::new(CertificateKind::ExponentialDecay, region)
                .with_v(plant.v.clone())
                .with_functions(ComparisonFns {
                    mu1: Some(mu1.clone()),
                    lambda: Some(*lambda),
                    ..Default::default()
                })
                .with_domain(ball);
            certificates.push(require(check(&cert, &closed_loop)?)?);
            let mu1_d = mu1.eval_scalar(prob.delta).map_err(|e| ControlError::Invalid(e.to_string()))?;
            let growth = (lambda * prob.horizon).exp();
            let rhs = growth * (1.0 - prob.p) * mu1_d;
            (Inequality { lhs: v0, rhs }, 1.0 - v0 / (mu1_d * growth))
        }
    };
    Ok(SynthesisResult {
        feedback,
        gain: None,
        gamma: None,
        m: None,
        m_inv: None,
        m_eigenvalues: Vec::new(),
        a_gamma: None,
        lyapunov_residual: None,
        v: plant.v.clone(),
        admissible: inequality.holds(),
        inequality,
        guaranteed_probability: guaranteed.clamp(0.0, 1.0),
        problem: prob.clone(),
        certificates,
        closed_loop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PathRng;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_stable(n: usize, rng: &mut PathRng) -> Matrix {
        let r = Matrix::from_row_major(n, n, (0..n * n).map(|_| rng.normal()).collect()).unwrap();
        let shift = r.frobenius() + 0.1;
        &r - &Matrix::identity(n).scale(shift)
    }

    #[test]
    fn hurwitz_and_disturbable_cases() {
        let i2 = Matrix::identity(2);
        assert_eq!(hurwitz_and_disturbable(&i2.scale(-1.0), &i2).unwrap(), (true, true));
        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert!(!hurwitz_and_disturbable(&rot, &i2).unwrap().0);
        let d = m(&[&[-1.0, 1.0], &[0.0, -2.0]]);
        let c = m(&[&[1.0], &[0.0]]);
        assert_eq!(hurwitz_and_disturbable(&d, &c).unwrap(), (true, false));
        assert_eq!(disturbability_rank(&d, &c).unwrap(), 1);
        let c2 = m(&[&[0.0], &[1.0]]);
        assert_eq!(hurwitz_and_disturbable(&d, &c2).unwrap(), (true, true));
    }

    #[test]
    fn lyapunov_known_solutions() {
        let i2 = Matrix::identity(2);
        let p = lyapunov_solve(&i2.scale(-1.0), &i2).unwrap();
        assert!((&p - &i2.scale(0.5)).max_abs() < 1e-14);
        let d = Matrix::diag(&[-1.0, -2.0]);
        let c = Matrix::diag(&[2f64.sqrt(), 2.0]);
        let p = lyapunov_solve(&d, &c).unwrap();
        assert!((&p - &i2).max_abs() < 1e-14);
        let rot = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        assert_eq!(lyapunov_solve(&rot, &i2), Err(ControlError::NotHurwitz));
    }

    #[test]
    fn lyapunov_matches_nalgebra_oracle() {
        let mut rng = PathRng::new(5, 0);
        for n in 1..=4 {
            let d = random_stable(n, &mut rng);
            let c = Matrix::identity(n);
            let p = lyapunov_solve(&d, &c).unwrap();
            // P = ∫₀^∞ e^{Dt} e^{Dᵀt} dt, checked through the Kronecker system
            // solved by LU in nalgebra.
            let dn = nalgebra::DMatrix::from_row_slice(n, n, d.as_slice());
            let id = nalgebra::DMatrix::<f64>::identity(n, n);
            let k = id.kronecker(&dn) + dn.kronecker(&id);
            let rhs = -nalgebra::DVector::from_column_slice(id.as_slice());
            let sol = k.lu().solve(&rhs).unwrap();
            for i in 0..n {
                for j in 0..n {
                    assert!((p[(i, j)] - sol[j * n + i]).abs() < 1e-10 * (1.0 + p.max_abs()));
                }
            }
        }
    }

    #[test]
    fn hundred_random_residuals() {
        let mut rng = PathRng::new(2024, 7);
        for k in 0..100 {
            let n = 1 + k % 4;
            let d = random_stable(n, &mut rng);
            let c = Matrix::from_row_major(n, n, (0..n * n).map(|_| rng.normal()).collect()).unwrap();
            let p = lyapunov_solve(&d, &c).unwrap();
            let cct = c.try_mul(&c.transpose()).unwrap();
            assert!(lyapunov_residual(&d, &c, &p).unwrap() <= 1e-10 * cct.frobenius());
            assert!((&p - &p.transpose()).max_abs() == 0.0);
            // pre-inversion form MD + DᵀM + MCCᵀM = 0
            let mm = p.inverse().unwrap();
            let r = &(&mm.try_mul(&d).unwrap() + &d.transpose().try_mul(&mm).unwrap())
                + &mm.try_mul(&cct).unwrap().try_mul(&mm).unwrap();
            assert!(r.frobenius() <= 1e-8 * mm.frobenius().powi(2), "n={n} {}", r.frobenius());
        }
    }

    fn hand_case() -> (LinearPlant, AimingProblem) {
        let i2 = Matrix::identity(2);
        let plant = LinearPlant::new(Matrix::zeros(2, 2), i2.clone(), i2.clone()).with_d(i2.scale(-1.0));
        (plant, AimingProblem::new(1.0, 0.9, 1.0, vec![2.0, 0.0]).unwrap())
    }

    #[test]
    fn hand_checkable_linear_case() {
        let (plant, prob) = hand_case();
        let r = synthesize_linear(&plant, &prob).unwrap();
        let gamma = r.gamma.unwrap();
        assert!((gamma - 15.0).abs() < 1e-9 * 15.0, "{gamma}");
        assert!((r.gain.as_ref().unwrap() - &Matrix::identity(2).scale(-16.0)).max_abs() < 1e-8);
        assert!((r.m.as_ref().unwrap() - &Matrix::identity(2).scale(2.0)).max_abs() < 1e-12);
        assert!((r.a_gamma.unwrap() - gamma / 2.0).abs() < 1e-12);
        assert!(r.admissible);
        assert!(r.certificates.iter().all(|c| c.pass));
        assert!(r.guaranteed_probability >= 0.9 - 1e-9);
        let f = r.closed_loop.drift(0.0, &[1.0, -2.0]).unwrap();
        assert!((f[0] + 16.0).abs() < 1e-8 && (f[1] - 32.0).abs() < 1e-8);
    }

    #[test]
    fn slack_limit_and_boundary_start() {
        let (plant, _) = hand_case();
        let loose = AimingProblem::new(1e6, 1e-6, 1.0, vec![2.0, 0.0]).unwrap();
        let r = synthesize_linear(&plant, &loose).unwrap();
        assert!(r.gamma.unwrap() < 1e-5 && r.a_gamma.unwrap() > 0.0);
        let edge = AimingProblem::new(1.0, 0.9, 1.0, vec![0.0, 1.0]).unwrap();
        let r = synthesize_linear(&plant, &edge).unwrap();
        assert!(r.gamma.unwrap() <= 2e-12);
        assert!(r.admissible);
    }

    #[test]
    fn minimal_gamma_is_minimal() {
        let (plant, prob) = hand_case();
        let r = synthesize_linear(&plant, &prob).unwrap();
        let data = GammaData { lambda_1: 1.0, lambda_sum: 2.0, m_min: 2.0, m_max: 2.0 };
        let g = r.gamma.unwrap();
        assert!(data.rhs(g * (1.0 - 1e-9), &prob) < r.inequality.lhs);
        let gs: Vec<f64> = (1..50).map(|k| data.a_gamma(k as f64 * 0.3, 1.0)).collect();
        assert!(gs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn linear_errors() {
        let (mut plant, prob) = hand_case();
        plant.b = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(synthesize_linear(&plant, &prob), Err(ControlError::SingularB(_))));
        let (mut plant, _) = hand_case();
        plant.d = Some(m(&[&[0.0, 1.0], &[-1.0, 0.0]]));
        assert_eq!(synthesize_linear(&plant, &prob).unwrap_err(), ControlError::NotHurwitz);
        let (mut plant, _) = hand_case();
        plant.c = m(&[&[1.0], &[0.0]]);
        plant.d = Some(m(&[&[-1.0, 1.0], &[0.0, -2.0]]));
        assert!(matches!(synthesize_linear(&plant, &prob), Err(ControlError::NotDisturbable { rank: 1, n: 2 })));
        assert!(AimingProblem::new(1.0, 1.0, 1.0, vec![2.0]).is_err());
        assert!(AimingProblem::new(1.0, 0.5, 1.0, vec![0.5]).is_err());
    }

    #[test]
    fn nonsquare_d_c_pair_with_general_b() {
        let a = m(&[&[0.3, -1.0], &[2.0, 0.1]]);
        let b = m(&[&[2.0, 1.0], &[0.0, 1.0]]);
        let c = m(&[&[0.0], &[1.0]]);
        let d = m(&[&[-1.0, 1.0], &[0.0, -2.0]]);
        let plant = LinearPlant::new(a.clone(), b.clone(), c).with_d(d.clone());
        let prob = AimingProblem::new(2.0, 0.8, 0.5, vec![1.0, -1.5]).unwrap();
        let r = synthesize_linear(&plant, &prob).unwrap();
        assert!(r.admissible);
        let gamma = r.gamma.unwrap();
        let target = &d.transpose() - &Matrix::identity(2).scale(gamma);
        let closed = &a + &b.try_mul(r.gain.as_ref().unwrap()).unwrap();
        assert!((&closed - &target).max_abs() < 1e-9 * (1.0 + gamma));
        let (eig, _) = r.m.as_ref().unwrap().symmetric_eigen().unwrap();
        assert!(eig[0] > 0.0);
    }

    fn example(mode: ExampleMode, alpha: f64) -> NonlinearPlant {
        let sigma = if mode == ExampleMode::Cancel { "sqrt(al * (1 + x1^2 + x2^2))" } else { "0.2" };
        NonlinearPlant::multiplicative_example(
            mode,
            vec!["sin(x2)".into(), "x1 * x2".into()],
            sigma,
            alpha,
            BTreeMap::from([("al".to_string(), alpha)]),
        )
        .unwrap()
    }

    #[test]
    fn cancel_branch_admissibility() {
        let plant = example(ExampleMode::Cancel, 1.0);
        for (x0, ok) in [(vec![2.0, 1.4], true), (vec![2.0, 1.5], false), (vec![6f64.sqrt(), 0.0], true)] {
            let prob = AimingProblem::new(5.0, 0.5, 1.0, x0.clone()).unwrap();
            let r = synthesize_nonlinear(&plant, &prob).unwrap();
            let sq = x0[0] * x0[0] + x0[1] * x0[1];
            assert_eq!(r.admissible, ok, "|x0|² = {sq}: {:?}", r.inequality);
            assert!((r.inequality.rhs - 3.0).abs() < 1e-9);
            assert_eq!(r.certificates.len(), 2);
        }
    }

    #[test]
    fn decay_branch_admissibility() {
        let plant = example(ExampleMode::Decay, 0.0);
        let t = 4f64.ln();
        for (x0, ok) in [(vec![1.0, 0.99], true), (vec![1.0, 1.01], false)] {
            let prob = AimingProblem::new(t, 0.5, 1.0, x0).unwrap();
            let r = synthesize_nonlinear(&plant, &prob).unwrap();
            assert_eq!(r.admissible, ok);
            assert!((r.inequality.rhs - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closing_the_loop_cancels_g() {
        let plant = example(ExampleMode::Decay, 0.0);
        let prob = AimingProblem::new(1.0, 0.5, 1.0, vec![2.0, 0.0]).unwrap();
        let r = synthesize_nonlinear(&plant, &prob).unwrap();
        let mut rng = PathRng::new(11, 0);
        let g = [
            Expr::parse("sin(x2)", &Scope::state(2)).unwrap(),
            Expr::parse("x1 * x2", &Scope::state(2)).unwrap(),
        ];
        for _ in 0..50 {
            let x = [3.0 * rng.normal(), 3.0 * rng.normal()];
            let f = r.closed_loop.drift(0.0, &x).unwrap();
            for i in 0..2 {
                let total = g[i].eval(0.0, &x).unwrap() + r.feedback[i].eval(0.0, &x).unwrap();
                assert!((total - f[i]).abs() < 1e-12 * (1.0 + f[i].abs()));
                assert!((f[i] + 0.52 * x[i]).abs() < 1e-12 * (1.0 + x[i].abs()));
            }
        }
    }

    #[test]
    fn failing_target_is_rejected() {
        let mut plant = example(ExampleMode::Decay, 0.0);
        plant.target = vec!["-0.1 * x1".into(), "-0.1 * x2".into()];
        let prob = AimingProblem::new(1.0, 0.5, 1.0, vec![2.0, 0.0]).unwrap();
        assert!(matches!(synthesize_nonlinear(&plant, &prob), Err(ControlError::Certificate(_))));
    }

    #[test]
    fn report_csv() {
        let (plant, prob) = hand_case();
        let r = synthesize_linear(&plant, &prob).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("field,value\n"));
        assert!(s.contains("\nadmissible,true\n"));
        assert!(s.contains("\ngain_11,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gain_identity(seed in 0u64..1000, gamma_scale in 0.5f64..4.0) {
            let mut rng = PathRng::new(seed, 1);
            let n = 1 + (seed % 3) as usize;
            let a = Matrix::from_row_major(n, n, (0..n * n).map(|_| rng.normal()).collect()).unwrap();
            let b = &Matrix::identity(n).scale(3.0) + &Matrix::from_row_major(n, n, (0..n * n).map(|_| 0.3 * rng.normal()).collect()).unwrap();
            let plant = LinearPlant::new(a.clone(), b.clone(), Matrix::identity(n));
            let x0: Vec<f64> = (0..n).map(|_| 1.0 + gamma_scale).collect();
            let prob = AimingProblem::new(1.0, 0.5, 1.0, x0).unwrap();
            let r = synthesize_linear(&plant, &prob).unwrap();
            let gamma = r.gamma.unwrap();
            for _ in 0..5 {
                let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                let u: Vec<f64> = r.feedback.iter().map(|e| e.eval(0.0, &x).unwrap()).collect();
                let ax = a.mul_vec(&x);
                let bu = b.mul_vec(&u);
                for i in 0..n {
                    let want = -x[i] - gamma * x[i];
                    prop_assert!((ax[i] + bu[i] - want).abs() < 1e-8 * (1.0 + gamma) * (1.0 + x[i].abs()));
                }
            }
        }
    }
}
