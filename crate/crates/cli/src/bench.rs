//! Reference experiments: the 1D mean-residence table and the catalog
//! examples with their closed-form or Lyapunov bounds.

use std::collections::BTreeMap;
use std::time::Instant;

use residence_core::control::{
    synthesize_linear, synthesize_nonlinear, AimingProblem, ExampleMode, LinearPlant, NonlinearPlant,
};
use residence_core::expr::{Expr, Scope};
use residence_core::linalg::Matrix;
use residence_core::lyap::{
    check, mean_residence_bound, mgf_bound, nonrecurrence_bound, nonrecurrence_phi, Certificate, CertificateKind,
    CheckReport, ComparisonFns, NuTail, Region,
};
use residence_core::mc::{
    aggregate, chebyshev_mean_bound, chebyshev_mgf_bound, compare_bounds, Bound, BoundKind, BoundReport, Quantity,
    ResidenceStats,
};
use residence_core::pde::{quadrature_oracle, solve_mean_residence_1d, DirichletSpec, MeanResidenceTable};
use residence_core::sde::{run_ensemble, Domain, EnsembleSpec, PathOutcome, SdeSystem, SimOptions};
use serde::Serialize;

use crate::plot::PlotSeries;
use crate::{numeric, CliError};

/// Published mean residence times for `f = −x` and `f = −x³` at
/// `x₀ = 1.5, 2, 2.5, 3`.
pub const TABLE1_REFERENCE: [(u32, [f64; 4]); 2] = [
    (1, [0.4812779, 0.7956221, 1.0306462, 1.2193076]),
    (3, [0.3231637, 0.4235235, 0.4690177, 0.4935798]),
];
pub const TABLE1_X0: [f64; 4] = [1.5, 2.0, 2.5, 3.0];

/// Monte Carlo over `paths` independent paths.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo(
    system: &SdeSystem,
    domain: &Domain,
    x0: &[f64],
    options: &SimOptions,
    seed: u64,
    paths: u64,
    t_list: &[f64],
    lambdas: &[f64],
) -> Result<(Vec<PathOutcome>, ResidenceStats), CliError> {
    let outcomes = run_ensemble(&EnsembleSpec {
        system,
        domain,
        x0,
        options,
        seed,
        n_paths: paths,
        threads: None,
    })
    .map_err(numeric)?;
    let stats = aggregate(&outcomes, t_list, lambdas);
    Ok((outcomes, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Options {
    /// Monte Carlo paths per cell; zero skips the simulation column.
    pub paths: u64,
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub x_r: f64,
    pub nodes: usize,
}

impl Default for Table1Options {
    fn default() -> Self {
        Self {
            paths: 10_000,
            dt: 1e-3,
            t_max: 50.0,
            seed: crate::config::DEFAULT_SEED,
            x0: TABLE1_X0.to_vec(),
            x_r: 3.0,
            nodes: residence_core::pde::DEFAULT_NODES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub m: u32,
    pub x0: f64,
    pub tau_pde: f64,
    pub tau_oracle: f64,
    pub tau_mc: Option<f64>,
    pub tau_mc_se: Option<f64>,
    /// `x₀² − 1` from `V = x²`.
    pub bound: f64,
    /// Published value, when `x₀` is one of the tabulated points.
    pub reference: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Table1 {
    pub rows: Vec<Table1Row>,
    pub tables: Vec<(u32, MeanResidenceTable)>,
    pub pde_seconds: f64,
    pub mc_seconds: f64,
}

fn reference(m: u32, x0: f64) -> Option<f64> {
    let (_, vals) = TABLE1_REFERENCE.iter().find(|(k, _)| *k == m)?;
    TABLE1_X0.iter().position(|x| *x == x0).map(|i| vals[i])
}

pub fn table1(opts: &Table1Options) -> Result<Table1, CliError> {
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    let (mut pde_seconds, mut mc_seconds) = (0.0, 0.0);
    for (m, _) in TABLE1_REFERENCE {
        let start = Instant::now();
        let spec = DirichletSpec::poly_drift(m).map_err(numeric)?.with_x_r(opts.x_r).with_nodes(opts.nodes);
        let table = solve_mean_residence_1d(&spec).map_err(numeric)?;
        pde_seconds += start.elapsed().as_secs_f64();
        let sys = SdeSystem::poly_drift_unit_noise(m).map_err(numeric)?;
        let domain = Domain::interval(-1.0, 1.0).map_err(numeric)?;
        for &x0 in &opts.x0 {
            let tau_pde = table.tau_at(x0).map_err(numeric)?;
            let tau_oracle = quadrature_oracle(&spec.drift, 1.0, x0).map_err(numeric)?;
            let (mut tau_mc, mut tau_mc_se) = (None, None);
            if opts.paths > 0 {
                let start = Instant::now();
                let sim = SimOptions::new(opts.t_max, opts.dt);
                let (_, stats) = monte_carlo(&sys, &domain, &[x0], &sim, opts.seed, opts.paths, &[], &[])?;
                mc_seconds += start.elapsed().as_secs_f64();
                let est = stats
                    .mean_tau
                    .ok_or_else(|| CliError::Numeric(format!("no path hit from x0={x0}")))?;
                tau_mc = Some(est.estimate);
                tau_mc_se = Some(est.se);
            }
            rows.push(Table1Row {
                m,
                x0,
                tau_pde,
                tau_oracle,
                tau_mc,
                tau_mc_se,
                bound: x0 * x0 - 1.0,
                reference: reference(m, x0),
            });
        }
        tables.push((m, table));
    }
    Ok(Table1 {
        rows,
        tables,
        pde_seconds,
        mc_seconds,
    })
}

fn drift_label(m: u32) -> String {
    if m == 1 {
        "-x".into()
    } else {
        format!("-x^{m}")
    }
}

impl Table1 {
    /// `drift,x0,tau_pde,tau_oracle,tau_mc,bound_quadratic`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        out.write_record(["drift", "x0", "tau_pde", "tau_oracle", "tau_mc", "bound_quadratic"]).map_err(io)?;
        for r in &self.rows {
            out.write_record([
                drift_label(r.m),
                r.x0.to_string(),
                format!("{:.7}", r.tau_pde),
                format!("{:.7}", r.tau_oracle),
                r.tau_mc.map(|v| format!("{v:.7}")).unwrap_or_default(),
                r.bound.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    /// `drift,x0,tau_reference,tau_pde,delta,tau_mc_se`.
    pub fn write_reference_csv<W: std::io::Write>(&self, w: W) -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        out.write_record(["drift", "x0", "tau_reference", "tau_pde", "delta", "tau_mc_se"]).map_err(io)?;
        for r in &self.rows {
            let Some(reference) = r.reference else { continue };
            out.write_record([
                drift_label(r.m),
                r.x0.to_string(),
                reference.to_string(),
                format!("{:.7}", r.tau_pde),
                format!("{:.7}", r.tau_pde - reference),
                r.tau_mc_se.map(|v| format!("{v:.3e}")).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    /// Empirical mean against `x₀² − 1` for every simulated cell.
    pub fn bound_reports(&self) -> Vec<BoundReport> {
        self.rows
            .iter()
            .filter_map(|r| {
                let est = r.tau_mc?;
                Some(BoundReport::new(
                    format!("mean_tau[{},{}]", drift_label(r.m), r.x0),
                    BoundKind::MeanResidence,
                    r.bound,
                    est,
                    r.tau_mc_se.unwrap_or(0.0),
                ))
            })
            .collect()
    }
}

/// Result of one catalog experiment.
#[derive(Debug, Clone)]
pub struct ExampleRun {
    pub name: String,
    pub reports: Vec<BoundReport>,
    pub certificates: Vec<CheckReport>,
    pub notes: Vec<String>,
    pub survival: Option<PlotSeries>,
}

impl ExampleRun {
    pub fn all_satisfied(&self) -> bool {
        self.reports.iter().all(|r| r.satisfied)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExamplesOptions {
    pub paths: u64,
    pub seed: u64,
}

impl Default for ExamplesOptions {
    fn default() -> Self {
        Self {
            paths: 20_000,
            seed: crate::config::DEFAULT_SEED,
        }
    }
}

fn radial(src: &str) -> Result<Expr, CliError> {
    Expr::parse(src, &Scope::scalar("s")).map_err(numeric)
}

fn state(src: &str, n: usize) -> Result<Expr, CliError> {
    Expr::parse(src, &Scope::state(n)).map_err(numeric)
}

/// `dX = α₁X dt + √α₂ X dB` from `x₀ = 2` to `δ = 1` over `T = 200`:
/// hits almost surely when `α₁ < α₂/2`, otherwise with probability
/// `(x₀/δ)^{1 − 2α₁/α₂}`.
pub fn gbm_dichotomy(alpha1: f64, alpha2: f64, opts: &ExamplesOptions) -> Result<ExampleRun, CliError> {
    let sys = SdeSystem::gbm_cubic(alpha1, alpha2, 0.0).map_err(numeric)?;
    let domain = Domain::interval(-1.0, 1.0).map_err(numeric)?;
    let horizon = 200.0;
    let r = 1.0 - 2.0 * alpha1 / alpha2;
    let recurrent = r > 0.0;
    let sim = SimOptions::new(horizon, 1e-3).with_r_escape(if recurrent { 1e12 } else { 1e4 });
    let (_, stats) = monte_carlo(&sys, &domain, &[2.0], &sim, opts.seed, opts.paths, &[horizon], &[])?;
    let bounds = if recurrent {
        vec![Bound {
            quantity: Quantity::NotHitBy { t: horizon },
            kind: BoundKind::Target,
            value: 1e-3,
        }]
    } else {
        let p = 2f64.powf(r);
        vec![
            Bound { quantity: Quantity::HitBy { t: horizon }, kind: BoundKind::Exact, value: p },
            Bound { quantity: Quantity::NotHitBy { t: horizon }, kind: BoundKind::Exact, value: 1.0 - p },
        ]
    };
    let p = if recurrent { r / 2.0 } else { 0.5 };
    let c = (p * (alpha1 + (p - 1.0) * alpha2 / 2.0)).abs();
    let rec = Certificate::new(CertificateKind::RecurrenceStrict, Region::radial(0.0, 8.0, 81, 0))
        .with_v(state(&format!("abs(x1)^{p}"), 1)?)
        .with_functions(ComparisonFns {
            nu: Some(Expr::constant(0.0)),
            mu: Some(radial(&format!("{c}*s^{p}"))?),
            ..Default::default()
        })
        .with_domain(domain);
    let non = Certificate::new(CertificateKind::Nonrecurrence { inner_radius: 1.0 }, Region::radial(1.0, 8.0, 41, 0))
        .with_functions(ComparisonFns {
            theta: Some(radial(&format!("{}", 2.0 * alpha1 / alpha2))?),
            ..Default::default()
        });
    let certificates = vec![check(&rec, &sys).map_err(numeric)?, check(&non, &sys).map_err(numeric)?];
    Ok(ExampleRun {
        name: format!("gbm[a1={alpha1},a2={alpha2}]"),
        reports: compare_bounds(&stats, &bounds),
        certificates,
        notes: vec![format!("escaped {} censored {}", stats.n_escaped, stats.n_censored)],
        survival: None,
    })
}

/// `dX = μX dt + dB` from `x₀ = 2` to `δ = 1`: for `μ > 0` the hit
/// fraction is bounded by `Φ(2)/Φ(1)`, for `μ < 0` it tends to one.
pub fn ou_hitting(mu: f64, opts: &ExamplesOptions) -> Result<ExampleRun, CliError> {
    let sys = SdeSystem::ou(mu, 1.0).map_err(numeric)?;
    let domain = Domain::interval(-1.0, 1.0).map_err(numeric)?;
    let horizon = if mu > 0.0 { 100.0 } else { 50.0 };
    let sim = SimOptions::new(horizon, 1e-3);
    let (_, stats) = monte_carlo(&sys, &domain, &[2.0], &sim, opts.seed, opts.paths, &[horizon], &[])?;
    let mut certificates = Vec::new();
    let mut notes = Vec::new();
    let bound = if mu > 0.0 {
        let theta = radial(&format!("{}*s^2", 2.0 * mu))?;
        let table = nonrecurrence_phi(&sys, 1.0, &theta, &Region::radial(1.0, 6.0, 51, 0)).map_err(numeric)?;
        certificates.push(table.condition.clone());
        let ratio = nonrecurrence_bound(&table, &[2.0]).map_err(numeric)?;
        notes.push(format!("Phi(2)/Phi(1) = {ratio}"));
        Bound {
            quantity: Quantity::HitBy { t: horizon },
            kind: BoundKind::Nonrecurrence,
            value: ratio,
        }
    } else {
        Bound {
            quantity: Quantity::NotHitBy { t: horizon },
            kind: BoundKind::Target,
            value: 1e-3,
        }
    };
    Ok(ExampleRun {
        name: format!("ou[mu={mu}]"),
        reports: compare_bounds(&stats, &[bound]),
        certificates,
        notes,
        survival: None,
    })
}

const AIMING_G: [&str; 2] = ["sin(x2)", "x1 * x2"];

fn survival_bounds(stats: &ResidenceStats, times: &[f64], bound: impl Fn(f64) -> Result<f64, CliError>) -> Result<Vec<BoundReport>, CliError> {
    let bounds = times
        .iter()
        .map(|t| {
            Ok(Bound {
                quantity: Quantity::NotHitBy { t: *t },
                kind: BoundKind::ChebyshevMean,
                value: bound(*t)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(compare_bounds(stats, &bounds))
}

/// Multiplicative-noise aiming with `u = −g − σ̂²x`,
/// `σ̂² = α(1 + |x|²)`: `E[τ] ≤ (|x₀|² − 1)/(2α)` and its Chebyshev tail.
pub fn aiming_cancel(alpha: f64, x0: [f64; 2], opts: &ExamplesOptions) -> Result<ExampleRun, CliError> {
    let plant = NonlinearPlant::multiplicative_example(
        ExampleMode::Cancel,
        AIMING_G.iter().map(|s| s.to_string()).collect(),
        "sqrt(al * (1 + x1^2 + x2^2))",
        alpha,
        BTreeMap::from([("al".to_string(), alpha)]),
    )
    .map_err(numeric)?;
    let prob = AimingProblem::new(5.0, 0.5, 1.0, x0.to_vec()).map_err(numeric)?;
    let synth = synthesize_nonlinear(&plant, &prob).map_err(numeric)?;
    let ball = prob.ball().map_err(numeric)?;
    let mu = radial(&format!("0.5 * {alpha} * s^2 * (1 + s^2)"))?;
    let mean = mean_residence_bound(&plant.v.v, &Expr::constant(0.0), 1.0, NuTail::Zero, &mu, &ball, &x0)
        .map_err(numeric)?;
    let times = [0.5, 2.5, 5.0, 10.0];
    let sim = SimOptions::new(40.0, 1e-4).with_r_escape(1e12);
    let (_, stats) = monte_carlo(&synth.closed_loop, &ball, &x0, &sim, opts.seed, opts.paths, &times, &[])?;
    let mut reports = compare_bounds(
        &stats,
        &[Bound {
            quantity: Quantity::MeanTau,
            kind: BoundKind::MeanResidence,
            value: mean,
        }],
    );
    let tails = survival_bounds(&stats, &times, |t| chebyshev_mean_bound(mean, t).map_err(numeric))?;
    let survival = PlotSeries::survival_overlay(&times, &tails);
    reports.extend(tails);
    Ok(ExampleRun {
        name: format!("aiming_cancel[alpha={alpha}]"),
        reports,
        certificates: synth.certificates,
        notes: vec![format!("E[tau] bound = {mean}, admissible = {}", synth.admissible)],
        survival: Some(survival),
    })
}

/// Multiplicative-noise aiming with `u = −g − ½σ̂²x − ½x`: `ℒV = −V`,
/// so `E[e^τ] ≤ |x₀|²` and `P(τ > T) ≤ |x₀|²e^{−T}`.
pub fn aiming_decay(sigma_hat: f64, x0: [f64; 2], opts: &ExamplesOptions) -> Result<ExampleRun, CliError> {
    let plant = NonlinearPlant::multiplicative_example(
        ExampleMode::Decay,
        AIMING_G.iter().map(|s| s.to_string()).collect(),
        &sigma_hat.to_string(),
        0.0,
        BTreeMap::new(),
    )
    .map_err(numeric)?;
    let prob = AimingProblem::new(2.0, 0.5, 1.0, x0.to_vec()).map_err(numeric)?;
    let synth = synthesize_nonlinear(&plant, &prob).map_err(numeric)?;
    let ball = prob.ball().map_err(numeric)?;
    let lambda = 1.0;
    let mgf = mgf_bound(&plant.v.v, lambda, &ball, &x0).map_err(numeric)?;
    let v0 = plant.v.value(0.0, &x0).map_err(numeric)?;
    let times = [0.5, 1.0, 2.0, 4.0];
    let sim = SimOptions::new(60.0, 1e-3).with_r_escape(1e4);
    let (_, stats) = monte_carlo(&synth.closed_loop, &ball, &x0, &sim, opts.seed, opts.paths, &times, &[lambda])?;
    let mut reports = compare_bounds(
        &stats,
        &[Bound {
            quantity: Quantity::Mgf { lambda },
            kind: BoundKind::Mgf,
            value: mgf,
        }],
    );
    let tails = survival_bounds(&stats, &times, |t| chebyshev_mgf_bound(v0, v0 / mgf, lambda, t).map_err(numeric))?
        .into_iter()
        .map(|r| BoundReport::new(r.quantity, BoundKind::ChebyshevMgf, r.bound, r.estimate, r.se))
        .collect::<Vec<_>>();
    let survival = PlotSeries::survival_overlay(&times, &tails);
    reports.extend(tails);
    Ok(ExampleRun {
        name: format!("aiming_decay[sigma={sigma_hat}]"),
        reports,
        certificates: synth.certificates,
        notes: vec![format!("E[e^tau] bound = {mgf}, censored = {}", stats.n_censored)],
        survival: Some(survival),
    })
}

/// `A = 0`, `B = C = I₂`, `D = −I₂`, `δ = 1`, `x₀ = (2, 0)`, `T = 1`,
/// `p = 0.9`: minimal `γ = 15`, gain `−16I`.
pub fn linear_aiming(opts: &ExamplesOptions) -> Result<(ExampleRun, f64, Matrix), CliError> {
    let i2 = Matrix::identity(2);
    let plant = LinearPlant::new(Matrix::zeros(2, 2), i2.clone(), i2.clone()).with_d(i2.scale(-1.0));
    let prob = AimingProblem::new(1.0, 0.9, 1.0, vec![2.0, 0.0]).map_err(numeric)?;
    let synth = synthesize_linear(&plant, &prob).map_err(numeric)?;
    let report = verify_closed_loop(&synth.closed_loop, &prob, opts, 1e-4, None)?;
    let gamma = synth.gamma.expect("linear synthesis sets γ");
    let gain = synth.gain.clone().expect("linear synthesis sets the gain");
    Ok((
        ExampleRun {
            name: "linear_aiming".into(),
            reports: vec![report],
            certificates: synth.certificates,
            notes: vec![format!("gamma = {gamma}")],
            survival: None,
        },
        gamma,
        gain,
    ))
}

/// Monte Carlo check `P̂(τ > T) ≤ 1 − p` on a synthesized closed loop.
pub fn verify_closed_loop(
    closed_loop: &SdeSystem,
    prob: &AimingProblem,
    opts: &ExamplesOptions,
    dt: f64,
    r_escape: Option<f64>,
) -> Result<BoundReport, CliError> {
    let ball = prob.ball().map_err(numeric)?;
    let mut sim = SimOptions::new(prob.horizon, dt);
    sim.r_escape = r_escape;
    let (_, stats) = monte_carlo(closed_loop, &ball, &prob.x0, &sim, opts.seed, opts.paths, &[prob.horizon], &[])?;
    let mut reports = compare_bounds(
        &stats,
        &[Bound {
            quantity: Quantity::NotHitBy { t: prob.horizon },
            kind: BoundKind::Target,
            value: 1.0 - prob.p,
        }],
    );
    Ok(reports.remove(0))
}

/// Every catalog experiment at the default parameters.
pub fn examples(opts: &ExamplesOptions) -> Result<Vec<ExampleRun>, CliError> {
    Ok(vec![
        gbm_dichotomy(0.25, 1.0, opts)?,
        gbm_dichotomy(1.0, 1.0, opts)?,
        ou_hitting(1.0, opts)?,
        ou_hitting(-1.0, opts)?,
        aiming_cancel(0.5, [1.5, 1.0], opts)?,
        aiming_decay(0.2, [1.2, 0.9], opts)?,
        linear_aiming(opts)?.0,
    ])
}

/// `example,quantity,estimate,se,bound,bound_kind,satisfied`.
pub fn write_examples_csv<W: std::io::Write>(runs: &[ExampleRun], w: W) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CliError::Io(e.to_string());
    out.write_record(["example", "quantity", "estimate", "se", "bound", "bound_kind", "satisfied"]).map_err(io)?;
    for run in runs {
        for r in &run.reports {
            out.write_record([
                run.name.clone(),
                r.quantity.clone(),
                r.estimate.to_string(),
                r.se.to_string(),
                r.bound.to_string(),
                r.bound_kind.as_str().to_string(),
                r.satisfied.to_string(),
            ])
            .map_err(io)?;
        }
    }
    out.flush().map_err(|e| CliError::Io(e.to_string()))
}
