//! Closed-form residence-time bounds from passed certificates.

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, ExprError};
use crate::quad::{integrate, QuadOptions};
use crate::rng::PathRng;
use crate::sde::{Domain, SdeSystem};

use super::{linspace, norm, LyapError};

/// Declared behaviour of `ν(t)` beyond the quadrature horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuTail {
    /// `ν(t) = 0` for `t ≥ T_tail`.
    Zero,
    /// `ν(t) = c·e^{−a t}` for `t ≥ T_tail`.
    Exponential { c: f64, a: f64 },
}

const BOUNDARY_DIRECTIONS: usize = 256;
const BOUNDARY_TIMES: usize = 65;

fn eval_err(t: f64, x: &[f64]) -> impl Fn(ExprError) -> LyapError + '_ {
    move |source| LyapError::Eval { t, x: x.to_vec(), source }
}

/// `inf_{t ∈ [0, t_check], x ∈ ∂U} V(t, x)` over sampled boundary points;
/// exact in `t` when `V` does not depend on time.
fn boundary_inf(v: &Expr, domain: &Domain, n: usize, t_check: f64) -> Result<f64, LyapError> {
    let times = if v.uses_time() { linspace(0.0, t_check, BOUNDARY_TIMES) } else { vec![0.0] };
    let mut inf = f64::INFINITY;
    for t in &times {
        for x in domain.boundary_samples(n, BOUNDARY_DIRECTIONS) {
            inf = inf.min(v.eval(*t, &x).map_err(eval_err(*t, &x))?);
        }
    }
    Ok(inf)
}

/// `∫₀^∞ ν` as quadrature on `[0, T_tail]` plus the declared tail.
fn nu_integral(nu: &Expr, t_tail: f64, tail: NuTail) -> Result<f64, LyapError> {
    if !nu.uses_time() {
        let c = nu.eval_time(0.0).map_err(eval_err(0.0, &[]))?;
        return match (c == 0.0, tail) {
            (true, _) => Ok(0.0),
            (false, _) => Err(LyapError::Invalid(format!("ν ≡ {c} is not integrable on [0, ∞)"))),
        };
    }
    if !(t_tail > 0.0) {
        return Err(LyapError::Invalid("T_tail must be positive".into()));
    }
    let body = integrate(|t| nu.eval_time(t), 0.0, t_tail, QuadOptions::default()).map_err(eval_err(t_tail, &[]))?;
    let extra = match tail {
        NuTail::Zero => 0.0,
        NuTail::Exponential { c, a } => {
            if !(a > 0.0) {
                return Err(LyapError::Invalid("exponential tail rate must be positive".into()));
            }
            c / a * (-a * t_tail).exp()
        }
    };
    Ok(body.value + extra)
}

/// `(V(0, x₀) + ∫₀^∞ν − inf_{∂U} V) / μ(r)` with `r = inf_{∂U} |x|`.
///
/// `t_tail` is both the quadrature horizon for `ν` and the time range over
/// which the boundary infimum of a time-dependent `V` is sampled.
pub fn mean_residence_bound(
    v: &Expr,
    nu: &Expr,
    t_tail: f64,
    tail: NuTail,
    mu: &Expr,
    domain: &Domain,
    x0: &[f64],
) -> Result<f64, LyapError> {
    let n = x0.len();
    let r = domain.inner_radius();
    let mu_r = mu.eval_scalar(r).map_err(eval_err(0.0, &[r]))?;
    if !(mu_r > 0.0) {
        return Err(LyapError::Invalid(format!("μ(r) = {mu_r} at r = {r}; the bound needs μ(r) > 0")));
    }
    let v0 = v.eval(0.0, x0).map_err(eval_err(0.0, x0))?;
    let inf = boundary_inf(v, domain, n, t_tail)?;
    let bound = (v0 + nu_integral(nu, t_tail, tail)? - inf) / mu_r;
    if !bound.is_finite() || bound < 0.0 {
        return Err(LyapError::Invalid(format!("bound evaluates to {bound}; is x0 outside U?")));
    }
    Ok(bound)
}

/// `V(0, x₀) / inf_{∂U} V`, the bound on `E[e^{λτ}]`.
pub fn mgf_bound(v: &Expr, lambda: f64, domain: &Domain, x0: &[f64]) -> Result<f64, LyapError> {
    if !(lambda > 0.0) {
        return Err(LyapError::Invalid(format!("λ must be positive, got {lambda}")));
    }
    let inf = boundary_inf(v, domain, x0.len(), 0.0)?;
    if !(inf > 0.0) {
        return Err(LyapError::Invalid(format!("inf of V on the boundary is {inf}, must be positive")));
    }
    Ok(v.eval(0.0, x0).map_err(eval_err(0.0, x0))? / inf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub radius: f64,
    pub pairs: usize,
    /// Largest sampled `|f(t,x) − f(t,y)| / |x − y|`.
    pub drift: f64,
    /// Largest sampled `|σ(t,x) − σ(t,y)|_F / |x − y|`.
    pub diffusion: f64,
}

/// Random-pair Lipschitz ratios of the coefficients on `|x| ≤ radius` at
/// time `t`. A diagnostic only; it proves nothing.
pub fn lipschitz_spot_check(
    sys: &SdeSystem,
    t: f64,
    radius: f64,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzReport, LyapError> {
    let n = sys.dim();
    let mut rng = PathRng::new(seed, 0);
    let sample = |rng: &mut PathRng| -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..n).map(|_| radius * (2.0 * rng.uniform() - 1.0)).collect();
            if norm(&x) <= radius {
                return x;
            }
        }
    };
    let (mut lf, mut ls) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let x = sample(&mut rng);
        let y = sample(&mut rng);
        let d = norm(&x.iter().zip(&y).map(|(p, q)| p - q).collect::<Vec<_>>());
        if d == 0.0 {
            continue;
        }
        let diff = |a: Vec<f64>, b: Vec<f64>| norm(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        lf = lf.max(diff(sys.drift(t, &x)?, sys.drift(t, &y)?) / d);
        ls = ls.max(diff(sys.diffusion(t, &x)?, sys.diffusion(t, &y)?) / d);
    }
    Ok(LipschitzReport {
        radius,
        pairs,
        drift: lf,
        diffusion: ls,
    })
}
