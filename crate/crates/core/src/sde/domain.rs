use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("interval domains are one-dimensional, state has dimension {0}")]
    Dimension(usize),
}

/// The target set `U`. Paths start in `U^c` and stop on `∂U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// `{|x| < radius}`.
    Ball { radius: f64 },
    /// `(a, b)` with `a < 0 < b`, one-dimensional.
    Interval { a: f64, b: f64 },
    /// `{inner < |x| < outer}`.
    Shell { inner: f64, outer: f64 },
    /// `{|x| > radius}`.
    ComplementOfBall { radius: f64 },
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Domain {
    pub fn ball(radius: f64) -> Result<Self, DomainError> {
        Domain::Ball { radius }.validated()
    }

    pub fn interval(a: f64, b: f64) -> Result<Self, DomainError> {
        Domain::Interval { a, b }.validated()
    }

    pub fn shell(inner: f64, outer: f64) -> Result<Self, DomainError> {
        Domain::Shell { inner, outer }.validated()
    }

    pub fn complement_of_ball(radius: f64) -> Result<Self, DomainError> {
        Domain::ComplementOfBall { radius }.validated()
    }

    /// Checks the parameter constraints, returning the domain unchanged.
    pub fn validated(self) -> Result<Self, DomainError> {
        let ok = match self {
            Domain::Ball { radius } | Domain::ComplementOfBall { radius } => radius > 0.0 && radius.is_finite(),
            Domain::Interval { a, b } => a < 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            Domain::Shell { inner, outer } => inner > 0.0 && outer > inner && outer.is_finite(),
        };
        if ok {
            Ok(self)
        } else {
            Err(DomainError::Invalid(format!("{self:?}")))
        }
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<(), DomainError> {
        match self {
            Domain::Interval { .. } if n != 1 => Err(DomainError::Dimension(n)),
            _ => Ok(()),
        }
    }

    /// Signed boundary distance: positive on `U^c \ ∂U`, zero exactly on
    /// `∂U`, negative in `U`.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match *self {
            Domain::Ball { radius } => norm(x) - radius,
            Domain::Interval { a, b } => (a - x[0]).max(x[0] - b),
            Domain::Shell { inner, outer } => {
                let r = norm(x);
                (inner - r).max(r - outer)
            }
            Domain::ComplementOfBall { radius } => radius - norm(x),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) < 0.0
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        self.signed_distance(x) == 0.0
    }

    /// Gradient of the signed distance at `x` (outward from `U`), written
    /// into `out`. At the origin an arbitrary unit vector is used.
    pub fn normal_into(&self, x: &[f64], out: &mut [f64]) {
        let radial = |sign: f64, out: &mut [f64]| {
            let r = norm(x);
            if r == 0.0 {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[0] = sign;
            } else {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = sign * xi / r;
                }
            }
        };
        match *self {
            Domain::Ball { .. } => radial(1.0, out),
            Domain::ComplementOfBall { .. } => radial(-1.0, out),
            Domain::Interval { a, b } => out[0] = if a - x[0] > x[0] - b { -1.0 } else { 1.0 },
            Domain::Shell { inner, outer } => {
                let r = norm(x);
                radial(if inner - r > r - outer { -1.0 } else { 1.0 }, out)
            }
        }
    }

    /// `r = inf_{x ∈ ∂U} |x|`.
    pub fn inner_radius(&self) -> f64 {
        match *self {
            Domain::Ball { radius } | Domain::ComplementOfBall { radius } => radius,
            Domain::Interval { a, b } => a.abs().min(b),
            Domain::Shell { inner, .. } => inner,
        }
    }

    /// `sup_{x ∈ ∂U} |x|`, the radius an escape threshold must exceed.
    pub fn boundary_sup_radius(&self) -> f64 {
        match *self {
            Domain::Ball { radius } | Domain::ComplementOfBall { radius } => radius,
            Domain::Interval { a, b } => a.abs().max(b),
            Domain::Shell { outer, .. } => outer,
        }
    }

    /// Points of `∂U` in dimension `n`: both endpoints for intervals, `k`
    /// evenly spread directions per sphere otherwise.
    pub fn boundary_samples(&self, n: usize, k: usize) -> Vec<Vec<f64>> {
        let radii: Vec<f64> = match *self {
            Domain::Interval { a, b } => return vec![vec![a], vec![b]],
            Domain::Ball { radius } | Domain::ComplementOfBall { radius } => vec![radius],
            Domain::Shell { inner, outer } => vec![inner, outer],
        };
        let dirs = sphere_directions(n, k);
        radii
            .iter()
            .flat_map(|r| dirs.iter().map(move |d| d.iter().map(|v| v * r).collect()))
            .collect()
    }
}

/// Deterministic unit vectors in ℝⁿ: ±eᵢ, then a golden-angle spiral
/// (n = 2, 3) or low-discrepancy points mapped to the sphere (n > 3).
pub(crate) fn sphere_directions(n: usize, k: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; n];
            e[i] = s;
            dirs.push(e);
        }
    }
    if n == 1 {
        return dirs;
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for j in 0..k {
        let v: Vec<f64> = match n {
            2 => {
                let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / k as f64;
                vec![th.cos(), th.sin()]
            }
            3 => {
                let z = 1.0 - 2.0 * (j as f64 + 0.5) / k as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * j as f64;
                vec![r * th.cos(), r * th.sin(), z]
            }
            _ => {
                // Halton-like coordinates in (-1, 1), normalized
                let primes = [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
                let w: Vec<f64> = (0..n)
                    .map(|d| 2.0 * radical_inverse(j as u64 + 1, primes[d % primes.len()]) - 1.0)
                    .collect();
                let r = norm(&w);
                if r < 1e-9 {
                    continue;
                }
                w.iter().map(|v| v / r).collect()
            }
        };
        dirs.push(v);
    }
    dirs
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0 / base as f64;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f /= base as f64;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PathRng;

    #[test]
    fn distances_and_radii() {
        let b = Domain::ball(1.0).unwrap();
        assert_eq!(b.signed_distance(&[3.0, 4.0]), 4.0);
        assert!(b.contains(&[0.0, 0.0]));
        assert!(b.on_boundary(&[1.0, 0.0]));
        let i = Domain::interval(-1.0, 2.0).unwrap();
        assert_eq!(i.signed_distance(&[0.0]), -1.0);
        assert_eq!(i.signed_distance(&[-3.0]), 2.0);
        assert_eq!(i.inner_radius(), 1.0);
        assert_eq!(i.boundary_sup_radius(), 2.0);
        let s = Domain::shell(1.0, 2.0).unwrap();
        assert_eq!(s.signed_distance(&[0.5]), 0.5);
        assert_eq!(s.signed_distance(&[3.0]), 1.0);
        let c = Domain::complement_of_ball(2.0).unwrap();
        assert!(c.contains(&[3.0, 0.0]));
        assert_eq!(c.signed_distance(&[0.5, 0.0]), 1.5);
    }

    #[test]
    fn invalid_domains() {
        assert!(Domain::ball(0.0).is_err());
        assert!(Domain::interval(0.5, 1.0).is_err());
        assert!(Domain::shell(2.0, 1.0).is_err());
        assert!(Domain::interval(-1.0, 1.0).unwrap().check_dim(2).is_err());
    }

    #[test]
    fn origin_interior_and_boundary_zero() {
        for d in [Domain::ball(0.7).unwrap(), Domain::interval(-0.5, 2.0).unwrap()] {
            assert!(d.contains(&[0.0]));
            assert!(d.inner_radius() > 0.0);
            for p in d.boundary_samples(1, 0) {
                assert!(d.signed_distance(&p).abs() < 1e-15);
            }
        }
        let b = Domain::ball(1.5).unwrap();
        for p in b.boundary_samples(3, 50) {
            assert!(b.signed_distance(&p).abs() < 1e-14);
        }
    }

    #[test]
    fn distance_is_continuous_and_normal_is_its_gradient() {
        let mut rng = PathRng::new(5, 5);
        let doms = [
            Domain::ball(1.0).unwrap(),
            Domain::shell(1.0, 2.0).unwrap(),
            Domain::complement_of_ball(1.5).unwrap(),
        ];
        for d in doms {
            for _ in 0..200 {
                let x: Vec<f64> = (0..2).map(|_| 6.0 * rng.uniform() - 3.0).collect();
                let y: Vec<f64> = x.iter().map(|v| v + 1e-7 * (rng.uniform() - 0.5)).collect();
                let dx = (d.signed_distance(&x) - d.signed_distance(&y)).abs();
                assert!(dx <= 1.5e-7);
                let mut nrm = vec![0.0; 2];
                d.normal_into(&x, &mut nrm);
                let h = 1e-6;
                for k in 0..2 {
                    let mut p = x.clone();
                    p[k] += h;
                    let mut m = x.clone();
                    m[k] -= h;
                    let g = (d.signed_distance(&p) - d.signed_distance(&m)) / (2.0 * h);
                    // skip points next to the shell's kink at r = 1.5
                    let r = norm(&x);
                    if (r - 1.5).abs() > 1e-3 && r > 1e-3 {
                        assert!((g - nrm[k]).abs() < 1e-5, "{d:?} {x:?}");
                    }
                }
            }
        }
    }
}
