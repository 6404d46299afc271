//! Shared fixtures for the criterion benches.

use residence_core::expr::{Expr, Scope};
use residence_core::linalg::Matrix;
use residence_core::lyap::{Certificate, CertificateKind, ComparisonFns, Region};
use residence_core::sde::{Domain, SdeSystem};

/// `dX = −X dt + dB` leaving `[2, ∞)` for `[−1, 1]`.
pub fn ou_case() -> (SdeSystem, Domain, Vec<f64>) {
    (
        SdeSystem::ou(-1.0, 1.0).expect("valid OU"),
        Domain::interval(-1.0, 1.0).expect("valid interval"),
        vec![2.0],
    )
}

/// A stable `n × n` drift with unit noise.
pub fn stable_pair(n: usize) -> (Matrix, Matrix) {
    let mut d = Matrix::identity(n).scale(-2.0);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[(i, j)] = 0.3 / (1.0 + (i + 2 * j) as f64);
            }
        }
    }
    (d, Matrix::identity(n))
}

/// `V = |x|²` on `dX = −X dt + ½X dB`, where `ℒV = −1.75|x|²`.
pub fn quadratic_certificate() -> (Certificate, SdeSystem) {
    let sys = SdeSystem::scaled_identity(2, -1.0, 0.5).expect("valid system");
    let v = Expr::parse("x1^2 + x2^2", &Scope::state(2)).expect("valid V");
    let mu = Expr::parse("s^2", &Scope::scalar("s")).expect("valid μ");
    let cert = Certificate::new(CertificateKind::RecurrenceStrict, Region::radial(1.0, 10.0, 100, 64))
        .with_v(v)
        .with_functions(ComparisonFns {
            nu: Some(Expr::constant(0.0)),
            mu: Some(mu),
            ..Default::default()
        })
        .with_domain(Domain::ball(1.0).expect("valid ball"));
    (cert, sys)
}
