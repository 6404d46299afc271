//! Central finite differences for expressions.

use super::{Expr, ExprError};

/// Finite-difference step selection.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Step {
    /// Gradient and time derivative use `max(1e-5, 1e-5·|xᵢ|)`; second
    /// derivatives use `ε^{1/4}·max(1, |xᵢ|)`, which balances truncation
    /// against roundoff for a second difference.
    #[default]
    Auto,
    /// The same step for every coordinate and every derivative order.
    Fixed(f64),
}

const HESS_SCALE: f64 = 1.220_703_125e-4; // ε^{1/4} for f64

impl Step {
    fn first(self, v: f64) -> f64 {
        match self {
            Step::Auto => 1e-5f64.max(1e-5 * v.abs()),
            Step::Fixed(h) => h,
        }
    }

    fn second(self, v: f64) -> f64 {
        match self {
            Step::Auto => HESS_SCALE * v.abs().max(1.0),
            Step::Fixed(h) => h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `n × n`, symmetrized.
    pub hessian: Vec<f64>,
    pub time_derivative: f64,
}

impl Derivatives {
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hessian[i * self.gradient.len() + j]
    }
}

/// Value, gradient, Hessian and ∂/∂t of `e` at `(t, x)`.
///
/// Every stencil point must lie inside the expression's domain; the first
/// failing evaluation is returned as the error.
pub fn grad_hess(e: &Expr, t: f64, x: &[f64], step: Step) -> Result<Derivatives, ExprError> {
    if let Step::Fixed(h) = step {
        assert!(h > 0.0 && h.is_finite(), "finite-difference step must be positive");
    }
    let n = x.len();
    let value = e.eval(t, x)?;
    let mut p = x.to_vec();
    let mut gradient = vec![0.0; n];
    let mut hessian = vec![0.0; n * n];

    for i in 0..n {
        let uses = e.arity() > i;
        if !uses {
            continue;
        }
        let h1 = step.first(x[i]);
        p[i] = x[i] + h1;
        let fp = e.eval(t, &p)?;
        p[i] = x[i] - h1;
        let fm = e.eval(t, &p)?;
        gradient[i] = (fp - fm) / (2.0 * h1);

        let h2 = step.second(x[i]);
        let (fp2, fm2) = if h2 == h1 {
            (fp, fm)
        } else {
            p[i] = x[i] + h2;
            let a = e.eval(t, &p)?;
            p[i] = x[i] - h2;
            (a, e.eval(t, &p)?)
        };
        hessian[i * n + i] = (fp2 - 2.0 * value + fm2) / (h2 * h2);
        p[i] = x[i];
    }

    for i in 0..n.min(e.arity()) {
        let hi = step.second(x[i]);
        for j in (i + 1)..n.min(e.arity()) {
            let hj = step.second(x[j]);
            let mut corner = |si: f64, sj: f64| -> Result<f64, ExprError> {
                p[i] = x[i] + si * hi;
                p[j] = x[j] + sj * hj;
                let v = e.eval(t, &p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let fpp = corner(1.0, 1.0)?;
            let fpm = corner(1.0, -1.0)?;
            let fmp = corner(-1.0, 1.0)?;
            let fmm = corner(-1.0, -1.0)?;
            let hij = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            hessian[i * n + j] = hij;
            hessian[j * n + i] = hij;
        }
    }

    let time_derivative = if e.uses_time() {
        let ht = step.first(t);
        (e.eval(t + ht, x)? - e.eval(t - ht, x)?) / (2.0 * ht)
    } else {
        0.0
    };

    Ok(Derivatives {
        value,
        gradient,
        hessian,
        time_derivative,
    })
}
