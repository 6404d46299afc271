//! The radial function `Φ(r) = ∫_r^∞ ψ(t) dt`, `ψ(t) = exp(−∫_a^t θ(s)/s ds)`,
//! and the non-recurrence probability bound `Φ(|x₀|)/Φ(a)`.

use crate::expr::{Expr, ExprError};
use crate::linalg::Matrix;
use crate::quad::{integrate, QuadOptions};
use crate::sde::SdeSystem;

use super::{linspace, norm, CheckReport, LyapError, Margin, Region};

const SUBDIVISIONS: usize = 32;
const MAX_DOUBLINGS: usize = 48;
const TAIL_REL: f64 = 1e-13;

/// Tabulated `Φ` on `[a, r_end]` with a bound for the tail beyond `r_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    pub a: f64,
    pub r: Vec<f64>,
    /// `∫_a^{r_k} θ(s)/s ds`.
    pub log_decay: Vec<f64>,
    pub phi: Vec<f64>,
    /// Upper bound `ψ(r_end)·r_end/(q − 1)` for `∫_{r_end}^∞ ψ`, valid when
    /// `θ ≥ q > 1` beyond `r_end`.
    pub tail: f64,
    /// `q`, the smallest sampled `θ` on `[r_end, 8·r_end]`.
    pub tail_exponent: f64,
    pub integrable: bool,
    pub decreasing: bool,
    /// Grid check of `S ≥ θ(|x|)`, positive-definite `a` and a positive
    /// diagonal entry of `a` for `|x| ≥ a`.
    pub condition: CheckReport,
    theta: Expr,
}

fn quad_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-300,
        rel_tol: 1e-12,
        max_intervals: 500,
    }
}

fn theta_over_s(theta: &Expr, lo: f64, hi: f64) -> Result<f64, ExprError> {
    Ok(integrate(|s| Ok::<_, ExprError>(theta.eval_scalar(s)? / s), lo, hi, quad_opts())?.value)
}

/// `∫_lo^hi ψ` given `I(lo) = ∫_a^lo θ/s`.
fn psi_integral(theta: &Expr, lo: f64, i_lo: f64, hi: f64) -> Result<f64, ExprError> {
    Ok(integrate(
        |t| Ok::<_, ExprError>((-(i_lo + theta_over_s(theta, lo, t)?)).exp()),
        lo,
        hi,
        quad_opts(),
    )?
    .value)
}

fn min_theta(theta: &Expr, lo: f64, hi: f64) -> Result<f64, ExprError> {
    let mut q = f64::INFINITY;
    for s in linspace(lo, hi, 64) {
        q = q.min(theta.eval_scalar(s)?);
    }
    Ok(q)
}

impl PhiTable {
    pub fn r_end(&self) -> f64 {
        *self.r.last().unwrap()
    }

    fn wrap(r: f64) -> impl Fn(ExprError) -> LyapError {
        move |source| LyapError::Eval { t: 0.0, x: vec![r], source }
    }

    /// `ψ(r) = exp(−∫_a^r θ(s)/s ds)` for `r ≥ a`.
    pub fn psi_at(&self, r: f64) -> Result<f64, LyapError> {
        let k = self.panel(r)?;
        let i = self.log_decay[k] + theta_over_s(&self.theta, self.r[k], r).map_err(Self::wrap(r))?;
        Ok((-i).exp())
    }

    fn panel(&self, r: f64) -> Result<usize, LyapError> {
        if !(r >= self.a) {
            return Err(LyapError::Invalid(format!("Φ is defined for r ≥ {}, got {r}", self.a)));
        }
        Ok(match self.r.binary_search_by(|v| v.total_cmp(&r)) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
        .min(self.r.len() - 1))
    }

    /// `Φ(r)` for `r ≥ a`.
    pub fn phi_at(&self, r: f64) -> Result<f64, LyapError> {
        let k = self.panel(r)?;
        if r == self.r[k] {
            return Ok(self.phi[k]);
        }
        if k == self.r.len() - 1 {
            let psi = self.psi_at(r)?;
            return Ok(psi * r / (self.tail_exponent - 1.0));
        }
        let rest = psi_integral(&self.theta, self.r[k], self.log_decay[k], self.r[k + 1]).map_err(Self::wrap(r))?
            - psi_integral(&self.theta, self.r[k], self.log_decay[k], r).map_err(Self::wrap(r))?;
        Ok(self.phi[k + 1] + rest)
    }
}

/// Builds `Φ` for inner radius `a` and checks `S ≥ θ(|x|)` on the points of
/// `region` with `|x| ≥ a`.
pub fn nonrecurrence_phi(sys: &SdeSystem, a: f64, theta: &Expr, region: &Region) -> Result<PhiTable, LyapError> {
    if !(a > 0.0) {
        return Err(LyapError::Invalid(format!("inner radius must be positive, got {a}")));
    }
    region.validate(sys.dim())?;
    let wrap = |r: f64| move |source| LyapError::Eval { t: 0.0, x: vec![r], source };

    // Grow the outer end by doubling until the tail bound is negligible.
    let mut r = vec![a];
    let mut log_decay = vec![0.0];
    let mut pieces: Vec<f64> = Vec::new();
    let mut lo = a;
    let mut partial = 0.0;
    let mut q = f64::NAN;
    let mut tail = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        let hi = 2.0 * lo;
        for s in linspace(lo, hi, SUBDIVISIONS + 1).into_iter().skip(1) {
            let (r0, i0) = (*r.last().unwrap(), *log_decay.last().unwrap());
            let piece = psi_integral(theta, r0, i0, s).map_err(wrap(s))?;
            partial += piece;
            pieces.push(piece);
            log_decay.push(i0 + theta_over_s(theta, r0, s).map_err(wrap(s))?);
            r.push(s);
        }
        lo = hi;
        q = min_theta(theta, lo, 8.0 * lo).map_err(wrap(lo))?;
        let psi_end = (-log_decay.last().unwrap()).exp();
        if q > 1.0 {
            tail = psi_end * lo / (q - 1.0);
            if tail <= TAIL_REL * partial || psi_end == 0.0 {
                break;
            }
        } else {
            tail = f64::INFINITY;
        }
    }
    let integrable = q > 1.0 && tail.is_finite();

    let mut phi = vec![0.0; r.len()];
    let mut acc = if integrable { tail } else { f64::INFINITY };
    phi[r.len() - 1] = acc;
    for k in (0..pieces.len()).rev() {
        acc += pieces[k];
        phi[k] = acc;
    }
    let decreasing = integrable && phi.windows(2).all(|w| w[1] <= w[0]) && phi[0] > phi[phi.len() - 1];

    let condition = s_condition(sys, a, theta, region)?;
    Ok(PhiTable {
        a,
        r,
        log_decay,
        phi,
        tail: if integrable { tail } else { f64::INFINITY },
        tail_exponent: q,
        integrable,
        decreasing,
        condition,
        theta: theta.clone(),
    })
}

fn s_condition(sys: &SdeSystem, a: f64, theta: &Expr, region: &Region) -> Result<CheckReport, LyapError> {
    let n = sys.dim();
    let mut report = CheckReport::new("nonrecurrence");
    let mut worst: Option<(Margin, f64, Vec<f64>)> = None;
    let mut diag_min = vec![f64::INFINITY; n];
    let mut pd_fail: Option<(f64, Vec<f64>)> = None;
    let mut count = 0;
    for t in region.times() {
        for x in region.points(n) {
            let rx = norm(&x);
            if rx < a {
                continue;
            }
            count += 1;
            let f = sys.drift(t, &x)?;
            let am = sys.diffusion_matrix(t, &x)?;
            let mut xax = 0.0;
            for i in 0..n {
                diag_min[i] = diag_min[i].min(am[i * n + i]);
                for j in 0..n {
                    xax += x[i] * am[i * n + j] * x[j];
                }
            }
            let big_a = xax / (rx * rx);
            let big_b: f64 = (0..n).map(|i| am[i * n + i]).sum();
            let big_c: f64 = 2.0 * x.iter().zip(&f).map(|(p, q)| p * q).sum::<f64>();
            let lambda_min = Matrix::from_row_major(n, n, am)
                .and_then(|m| m.symmetric_eigen())
                .map(|(v, _)| v[0])
                .unwrap_or(f64::NAN);
            if !(lambda_min > 0.0) && pd_fail.is_none() {
                pd_fail = Some((t, x.clone()));
            }
            let s = (big_b + big_c - big_a) / big_a;
            let th = theta
                .eval_scalar(rx)
                .map_err(|source| LyapError::Eval { t, x: x.clone(), source })?;
            let m = Margin { lhs: th, rhs: s };
            if worst.as_ref().is_none_or(|(w, _, _)| m.scaled() > w.scaled()) {
                worst = Some((m, t, x));
            }
        }
    }
    report.grid = count;
    match worst {
        Some((m, t, x)) => {
            report.worst_margin = m.raw();
            report.worst_scaled_margin = m.scaled();
            report.witness_t = t;
            report.witness_x = x;
            if m.scaled() > super::DEFAULT_TOLERANCE {
                report.fail(format!("S < θ(|x|): θ={} S={}", m.lhs, m.rhs));
            }
        }
        None => report.fail(format!("no grid points with |x| ≥ {a}")),
    }
    if let Some((t, x)) = pd_fail {
        report.fail(format!("diffusion matrix not positive definite at t={t}, x={x:?}"));
    }
    match diag_min.iter().position(|d| *d > 0.0) {
        Some(i) => report.notes.push(format!(
            "a_{0}{0} ≥ {1:e} on the grid, so a_ii·c_R ± f_i ≥ ĉ_R can be met there",
            i + 1,
            diag_min[i]
        )),
        None => report.fail("no diagonal diffusion entry is bounded away from zero on the grid".into()),
    }
    Ok(report)
}

/// `Φ(|x₀|)/Φ(a)`, an upper bound for `P(τ_U < ∞)`. Equals 1 on `|x₀| = a`.
pub fn nonrecurrence_bound(table: &PhiTable, x0: &[f64]) -> Result<f64, LyapError> {
    let r0 = norm(x0);
    if r0 < table.a {
        return Err(LyapError::Invalid(format!("|x0| = {r0} is inside the inner radius {}", table.a)));
    }
    if !table.integrable {
        return Err(LyapError::Invalid("Φ is not integrable; the bound does not apply".into()));
    }
    if r0 == table.a {
        return Ok(1.0);
    }
    Ok(table.phi_at(r0)? / table.phi[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Scope;

    fn theta(src: &str) -> Expr {
        Expr::parse(src, &Scope::scalar("s")).unwrap()
    }

    fn erfc_tail(a: f64) -> f64 {
        integrate(|y: f64| Ok::<_, ()>((-y * y).exp()), a, 40.0, QuadOptions::default())
            .unwrap()
            .value
    }

    #[test]
    fn ou_ratio_matches_gaussian_tails() {
        let sys = SdeSystem::ou(1.0, 1.0).unwrap();
        let t = nonrecurrence_phi(&sys, 1.0, &theta("2*s^2"), &Region::radial(1.0, 6.0, 51, 0)).unwrap();
        assert!(t.integrable && t.decreasing);
        assert!(t.condition.pass, "{:?}", t.condition);
        let b = nonrecurrence_bound(&t, &[2.0]).unwrap();
        let exact = erfc_tail(2.0) / erfc_tail(1.0);
        assert!((b - exact).abs() < 1e-9 * exact, "{b} vs {exact}");
        assert!((b - 0.02974).abs() < 5e-5);
        assert_eq!(nonrecurrence_bound(&t, &[1.0]).unwrap(), 1.0);
        assert!(nonrecurrence_bound(&t, &[0.5]).is_err());
    }

    #[test]
    fn integrability_by_constant_theta() {
        let sys = SdeSystem::gbm_cubic(1.0, 1.0, 0.0).unwrap();
        let region = Region::radial(1.0, 4.0, 11, 0);
        let t = nonrecurrence_phi(&sys, 1.0, &theta("1.5"), &region).unwrap();
        assert!(t.integrable);
        // Φ(r) = 2a^{1.5}/√r
        assert!((t.phi[0] - 2.0).abs() < 1e-9);
        assert!((t.phi_at(4.0).unwrap() - 1.0).abs() < 1e-9);
        let d1 = nonrecurrence_phi(&sys, 1.0, &theta("1"), &region).unwrap();
        assert!(!d1.integrable);
        assert!(nonrecurrence_bound(&d1, &[2.0]).is_err());
    }

    #[test]
    fn gbm_bound_dominates_exact_probability() {
        let (a1, a2) = (1.0, 1.0);
        let sys = SdeSystem::gbm_cubic(a1, a2, 0.0).unwrap();
        // S = 2α₁/α₂ exactly
        let t = nonrecurrence_phi(&sys, 1.0, &theta("2"), &Region::radial(1.0, 10.0, 41, 0)).unwrap();
        assert!(t.condition.pass);
        let b = nonrecurrence_bound(&t, &[2.0]).unwrap();
        let exact = 2f64.powf(1.0 - 2.0 * a1 / a2);
        assert!(b >= exact - 1e-12, "{b}");
        assert!(b < 0.5 + 1e-9);
    }

    #[test]
    fn theta_above_s_fails_condition() {
        let sys = SdeSystem::ou(1.0, 1.0).unwrap();
        let t = nonrecurrence_phi(&sys, 1.0, &theta("3*s^2"), &Region::radial(1.0, 4.0, 31, 0)).unwrap();
        assert!(!t.condition.pass);
        assert!(t.condition.worst_margin > 0.0);
    }

    #[test]
    fn phi_strictly_decreasing_between_nodes() {
        let sys = SdeSystem::ou(1.0, 1.0).unwrap();
        let t = nonrecurrence_phi(&sys, 1.0, &theta("s"), &Region::radial(1.0, 4.0, 11, 0)).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let r = 1.0 + 0.05 * k as f64;
            let p = t.phi_at(r).unwrap();
            assert!(p < prev);
            prev = p;
        }
        // ψ(t) = e^{−(t−1)}, so Φ(r) = e^{−(r−1)}
        assert!((t.phi_at(3.0).unwrap() - (-2f64).exp()).abs() < 1e-10);
    }
}
