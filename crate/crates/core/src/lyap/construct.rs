//! Explicit auxiliary functions for a bounded complement `U^c ⊂ {|x| < R}`.

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Scope};
use crate::sde::{Domain, SdeSystem};

use super::{check, Certificate, CertificateKind, CheckReport, ComparisonFns, LyapError, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionKind {
    /// `V = K − (xᵢ − 2R)^{2m}`, for `a_ii c_R − f_i ≥ ĉ_R`.
    Poly,
    /// `V = e^{αR} − e^{αxᵢ}`, for `a_ii c_R + f_i ≥ ĉ_R`.
    Exp,
}

/// A constructed `V` with its guaranteed decay `ℒV ≤ −decay` on `|x| ≤ R`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedComplementV {
    pub kind: ConstructionKind,
    pub v: Expr,
    pub decay: f64,
    pub radius: f64,
    /// Zero-based coordinate index.
    pub coordinate: usize,
    pub dim: usize,
    /// Poly: the exponent `m` and constant `K`.
    pub m: Option<u32>,
    pub k: Option<f64>,
    /// Exp: the rate `α`.
    pub alpha: Option<f64>,
}

/// Builds the poly or exp auxiliary function on coordinate `coordinate`
/// (zero-based) of an `n`-dimensional state.
pub fn construct_bounded_complement_v(
    kind: ConstructionKind,
    radius: f64,
    c_r: f64,
    c_hat: f64,
    coordinate: usize,
    n: usize,
) -> Result<BoundedComplementV, LyapError> {
    if !(radius > 0.0 && c_r > 0.0 && c_hat > 0.0) {
        return Err(LyapError::Invalid("need R, c_R, ĉ_R > 0".into()));
    }
    if coordinate >= n {
        return Err(LyapError::Invalid(format!("coordinate {coordinate} out of range for dimension {n}")));
    }
    let xi = format!("x{}", coordinate + 1);
    let scope = Scope::state(n);
    let parse = |s: &str| Expr::parse(s, &scope).map_err(|e| LyapError::Invalid(e.to_string()));
    Ok(match kind {
        ConstructionKind::Poly => {
            let m = (((6.0 * radius * c_r + 1.0) / 2.0).ceil() as u32).max(1);
            let k = (3.0 * radius).powi(2 * m as i32);
            let v = parse(&format!("{k} - ({xi} - {})^{}", 2.0 * radius, 2 * m))?;
            BoundedComplementV {
                kind,
                v,
                decay: 2.0 * m as f64 * c_hat * radius.powi(2 * m as i32 - 1),
                radius,
                coordinate,
                dim: n,
                m: Some(m),
                k: Some(k),
                alpha: None,
            }
        }
        ConstructionKind::Exp => {
            let alpha = (2.0 * c_r).sqrt();
            let v = parse(&format!("exp({}) - exp({alpha} * {xi})", alpha * radius))?;
            BoundedComplementV {
                kind,
                v,
                decay: alpha * (-alpha * radius).exp() * c_hat,
                radius,
                coordinate,
                dim: n,
                m: None,
                k: None,
                alpha: Some(alpha),
            }
        }
    })
}

impl BoundedComplementV {
    /// `ℒV ≤ −decay` on the ball `|x| ≤ R`, sampled by a cube grid with
    /// `points` nodes per axis.
    pub fn certificate(&self, points: usize) -> Result<Certificate, LyapError> {
        let alpha = Expr::parse(&format!("{}", self.decay), &Scope::time_only())
            .map_err(|e| LyapError::Invalid(e.to_string()))?;
        let domain = Domain::complement_of_ball(self.radius * (1.0 + 1e-12)).map_err(crate::sde::SdeError::from)?;
        Ok(Certificate::new(CertificateKind::RecurrenceIntegrated, Region::cube(self.dim, self.radius, points))
            .with_v(self.v.clone())
            .with_functions(ComparisonFns {
                alpha: Some(alpha),
                ..Default::default()
            })
            .with_domain(domain))
    }

    pub fn verify(&self, sys: &SdeSystem, points: usize) -> Result<CheckReport, LyapError> {
        check(&self.certificate(points)?, sys)
    }
}
