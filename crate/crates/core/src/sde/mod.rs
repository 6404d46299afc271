//! Itô systems `dX = f(t, X) dt + σ(t, X) dB` and target domains.
//!
//! A system is either a set of DSL expressions or a catalog entry. Catalog
//! entries carry both the expression form (used by certificate checks and
//! echoed in reports) and a native evaluator used on the simulation hot path;
//! the two are tested to agree.

mod domain;
mod sim;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, Scope};
use crate::linalg::Matrix;

pub use domain::{Domain, DomainError};
pub(crate) use domain::sphere_directions;
pub use sim::{
    em_step, run_ensemble, simulate_until_hit, write_outcomes_csv, write_paths_csv, Crossing,
    EnsembleSpec, PathOutcome, PathPoint, SimOptions, Status,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("expression error at t={t}, x={x:?}: {source}")]
    Expr {
        t: f64,
        x: Vec<f64>,
        #[source]
        source: ExprError,
    },
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("invalid simulation options: {0}")]
    Options(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Built-in systems with their defining parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Catalog {
    Generic,
    /// `dX = α₁X dt + X√(α₂ + α₃X²) dB`.
    GbmCubic { alpha1: f64, alpha2: f64, alpha3: f64 },
    /// `dX = μX dt + σ dB`.
    Ou { mu: f64, sigma: f64 },
    /// `dX = −X^m dt + dB`, `m` odd.
    PolyDriftUnitNoise { m: u32 },
    /// Uncontrolled `dX = AX dt + C dB` of the controlled system
    /// `dX = (AX + Bu) dt + C dB`.
    Linear { a: Matrix, b: Matrix, c: Matrix },
    /// A base system closed with a feedback law; `description` names the law.
    ClosedLoop { base: Box<Catalog>, description: String },
}

impl Catalog {
    pub fn tag(&self) -> &'static str {
        match self {
            Catalog::Generic => "generic",
            Catalog::GbmCubic { .. } => "gbm_cubic",
            Catalog::Ou { .. } => "ou",
            Catalog::PolyDriftUnitNoise { .. } => "poly_drift_unit_noise",
            Catalog::Linear { .. } => "linear",
            Catalog::ClosedLoop { .. } => "closed_loop",
        }
    }
}

/// Native coefficient evaluators for systems known in closed form.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Kernel {
    GbmCubic { a1: f64, a2: f64, a3: f64 },
    Ou { mu: f64, sigma: f64 },
    PolyUnit { m: i32 },
    /// `f = A x`, `σ = C` (constant).
    Affine { a: Matrix, c: Matrix },
    /// `f = a x`, `σ = s x` with scalar noise.
    ScaledIdentity { a: f64, s: f64 },
}

/// An immutable Itô system over ℝⁿ driven by an m-dimensional Brownian motion.
#[derive(Clone)]
pub struct SdeSystem {
    dim: usize,
    noise_dim: usize,
    drift: Vec<Expr>,
    diffusion: Vec<Expr>,
    constants: BTreeMap<String, f64>,
    catalog: Catalog,
    kernel: Option<Kernel>,
}

impl fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSystem")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("catalog", &self.catalog)
            .field("drift", &self.drift_sources())
            .field("diffusion", &self.diffusion_sources())
            .finish()
    }
}

fn parse_all(srcs: &[String], scope: &Scope) -> Result<Vec<Expr>, SdeError> {
    srcs.iter()
        .map(|s| {
            Expr::parse(s, scope).map_err(|e| SdeError::Invalid(format!("expression `{s}`: {e}")))
        })
        .collect()
}

impl SdeSystem {
    /// A system from DSL sources: `drift` has `n` entries and `diffusion` is
    /// row-major `n × m`.
    pub fn from_dsl(
        drift: &[String],
        diffusion: &[String],
        noise_dim: usize,
        constants: BTreeMap<String, f64>,
    ) -> Result<Self, SdeError> {
        let n = drift.len();
        if n == 0 || noise_dim == 0 {
            return Err(SdeError::Invalid("need n ≥ 1 and m ≥ 1".into()));
        }
        if diffusion.len() != n * noise_dim {
            return Err(SdeError::Invalid(format!(
                "diffusion has {} entries, expected n·m = {}",
                diffusion.len(),
                n * noise_dim
            )));
        }
        let scope = Scope::state(n).with_constants(&constants);
        Ok(Self {
            dim: n,
            noise_dim,
            drift: parse_all(drift, &scope)?,
            diffusion: parse_all(diffusion, &scope)?,
            constants,
            catalog: Catalog::Generic,
            kernel: None,
        })
    }

    fn catalog_entry(
        drift: &[String],
        diffusion: &[String],
        noise_dim: usize,
        constants: BTreeMap<String, f64>,
        catalog: Catalog,
        kernel: Kernel,
    ) -> Self {
        let mut s = Self::from_dsl(drift, diffusion, noise_dim, constants)
            .expect("catalog expressions are well formed");
        s.catalog = catalog;
        s.kernel = Some(kernel);
        s
    }

    pub fn gbm_cubic(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self, SdeError> {
        if alpha2 < 0.0 || alpha3 < 0.0 {
            return Err(SdeError::Invalid("gbm_cubic needs α₂, α₃ ≥ 0".into()));
        }
        let c = BTreeMap::from([
            ("a1".to_string(), alpha1),
            ("a2".to_string(), alpha2),
            ("a3".to_string(), alpha3),
        ]);
        Ok(Self::catalog_entry(
            &["a1*x1".into()],
            &["x1*sqrt(a2 + a3*x1^2)".into()],
            1,
            c,
            Catalog::GbmCubic { alpha1, alpha2, alpha3 },
            Kernel::GbmCubic {
                a1: alpha1,
                a2: alpha2,
                a3: alpha3,
            },
        ))
    }

    pub fn ou(mu: f64, sigma: f64) -> Result<Self, SdeError> {
        if sigma <= 0.0 {
            return Err(SdeError::Invalid("ou needs σ > 0".into()));
        }
        let c = BTreeMap::from([("mu".to_string(), mu), ("sigma".to_string(), sigma)]);
        Ok(Self::catalog_entry(
            &["mu*x1".into()],
            &["sigma".into()],
            1,
            c,
            Catalog::Ou { mu, sigma },
            Kernel::Ou { mu, sigma },
        ))
    }

    pub fn poly_drift_unit_noise(m: u32) -> Result<Self, SdeError> {
        if m.is_multiple_of(2) || m > 99 {
            return Err(SdeError::Invalid(format!("poly_drift_unit_noise needs odd m, got {m}")));
        }
        Ok(Self::catalog_entry(
            &[format!("-x1^{m}")],
            &["1".into()],
            1,
            BTreeMap::new(),
            Catalog::PolyDriftUnitNoise { m },
            Kernel::PolyUnit { m: m as i32 },
        ))
    }

    /// The uncontrolled linear system `dX = AX dt + C dB` (u = 0).
    pub fn linear(a: Matrix, b: Matrix, c: Matrix) -> Result<Self, SdeError> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n || c.rows() != n {
            return Err(SdeError::Invalid("linear system needs A n×n, B n×l, C n×m".into()));
        }
        let mut s = Self::affine(a.clone(), c.clone())?;
        s.catalog = Catalog::Linear { a, b, c };
        Ok(s)
    }

    /// `dX = F X dt + C dB` with constant `C`.
    pub fn affine(f: Matrix, c: Matrix) -> Result<Self, SdeError> {
        let n = f.rows();
        if !f.is_square() || c.rows() != n || c.cols() == 0 {
            return Err(SdeError::Invalid("affine system needs F n×n and C n×m".into()));
        }
        let drift: Vec<String> = (0..n)
            .map(|i| linear_form(f.row(i)))
            .collect();
        let diffusion: Vec<String> = c.as_slice().iter().map(|v| fmt_num(*v)).collect();
        Ok(Self::catalog_entry(
            &drift,
            &diffusion,
            c.cols(),
            BTreeMap::new(),
            Catalog::Generic,
            Kernel::Affine { a: f, c },
        ))
    }

    /// `dX = a X dt + s X dB` with scalar noise (every coordinate driven by
    /// the same Brownian motion), as in the closed loops of the
    /// multiplicative-noise aiming example.
    pub fn scaled_identity(n: usize, a: f64, s: f64) -> Result<Self, SdeError> {
        if n == 0 {
            return Err(SdeError::Invalid("need n ≥ 1".into()));
        }
        let drift: Vec<String> = (1..=n).map(|i| format!("{} * x{i}", fmt_num(a))).collect();
        let diffusion: Vec<String> = (1..=n).map(|i| format!("{} * x{i}", fmt_num(s))).collect();
        Ok(Self::catalog_entry(
            &drift,
            &diffusion,
            1,
            BTreeMap::new(),
            Catalog::Generic,
            Kernel::ScaledIdentity { a, s },
        ))
    }

    pub fn with_catalog(mut self, catalog: Catalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    pub fn drift_exprs(&self) -> &[Expr] {
        &self.drift
    }

    pub fn diffusion_exprs(&self) -> &[Expr] {
        &self.diffusion
    }

    pub fn drift_sources(&self) -> Vec<String> {
        self.drift.iter().map(|e| e.to_string()).collect()
    }

    pub fn diffusion_sources(&self) -> Vec<String> {
        self.diffusion.iter().map(|e| e.to_string()).collect()
    }

    /// Whether a native evaluator backs this system.
    pub fn has_kernel(&self) -> bool {
        self.kernel.is_some()
    }

    /// Drops the native evaluator so that all evaluation goes through the
    /// expression interpreter.
    pub fn interpreted(mut self) -> Self {
        self.kernel = None;
        self
    }

    /// Scope matching this system's variables and constants.
    pub fn scope(&self) -> Scope {
        Scope::state(self.dim).with_constants(&self.constants)
    }

    fn wrap(&self, t: f64, x: &[f64]) -> impl Fn(ExprError) -> SdeError + '_ {
        let x = x.to_vec();
        move |source| SdeError::Expr {
            t,
            x: x.clone(),
            source,
        }
    }

    /// `(f(x), σ(x))` for the one-dimensional kernels.
    #[inline]
    pub(crate) fn scalar_coeffs(&self, x: f64) -> Option<(f64, f64)> {
        match &self.kernel {
            Some(Kernel::GbmCubic { a1, a2, a3 }) => Some((a1 * x, x * (a2 + a3 * x * x).sqrt())),
            Some(Kernel::Ou { mu, sigma }) => Some((mu * x, *sigma)),
            Some(Kernel::PolyUnit { m }) => Some((-x.powi(*m), 1.0)),
            _ => None,
        }
    }

    /// `f(t, x)` into `out` (length n).
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), SdeError> {
        match &self.kernel {
            Some(Kernel::GbmCubic { a1, .. }) => out[0] = a1 * x[0],
            Some(Kernel::Ou { mu, .. }) => out[0] = mu * x[0],
            Some(Kernel::PolyUnit { m }) => out[0] = -x[0].powi(*m),
            Some(Kernel::Affine { a, .. }) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = a.row(i).iter().zip(x).map(|(p, q)| p * q).sum();
                }
            }
            Some(Kernel::ScaledIdentity { a, .. }) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = a * xi;
                }
            }
            None => {
                for (o, e) in out.iter_mut().zip(&self.drift) {
                    *o = e.eval(t, x).map_err(self.wrap(t, x))?;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Expr {
                t,
                x: x.to_vec(),
                source: ExprError::NonFinite { op: "drift" },
            });
        }
        Ok(())
    }

    /// `σ(t, x)` into `out` (row-major n × m).
    pub fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), SdeError> {
        match &self.kernel {
            Some(Kernel::GbmCubic { a2, a3, .. }) => {
                out[0] = x[0] * (a2 + a3 * x[0] * x[0]).sqrt();
            }
            Some(Kernel::Ou { sigma, .. }) => out[0] = *sigma,
            Some(Kernel::PolyUnit { .. }) => out[0] = 1.0,
            Some(Kernel::Affine { c, .. }) => out.copy_from_slice(c.as_slice()),
            Some(Kernel::ScaledIdentity { s, .. }) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = s * xi;
                }
            }
            None => {
                for (o, e) in out.iter_mut().zip(&self.diffusion) {
                    *o = e.eval(t, x).map_err(self.wrap(t, x))?;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Expr {
                t,
                x: x.to_vec(),
                source: ExprError::NonFinite { op: "diffusion" },
            });
        }
        Ok(())
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SdeError> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SdeError> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.diffusion_into(t, x, &mut out)?;
        Ok(out)
    }

    /// `a(t, x) = σσᵀ` (row-major n × n).
    pub fn diffusion_matrix(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SdeError> {
        let s = self.diffusion(t, x)?;
        Ok(outer_sigma(&s, self.dim, self.noise_dim))
    }
}

pub(crate) fn outer_sigma(s: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..m).map(|k| s[i * m + k] * s[j * m + k]).sum();
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    a
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v < 0.0 {
        format!("({v})")
    } else {
        format!("{v}")
    }
}

pub(crate) fn linear_form(row: &[f64]) -> String {
    let terms: Vec<String> = row
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| format!("{} * x{}", fmt_num(*v), j + 1))
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}
