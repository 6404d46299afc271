//! Batch front end for residence-time experiments: configuration, task
//! orchestration and CSV/JSON artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod plot;

use std::fmt::Display;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use residence_core::control::{
    synthesize_linear, synthesize_nonlinear, AimingProblem, ControlError, ExampleMode, LinearPlant, NonlinearPlant,
    SynthesisResult,
};
use residence_core::expr::{Expr, Scope};
use residence_core::lyap::{self, check, Certificate, CertificateKind, ComparisonFns, LyapunovFn, Region};
use residence_core::mc::{self, aggregate, compare_bounds};
use residence_core::pde::{quadrature_oracle, solve_mean_residence_1d, DirichletSpec};
use residence_core::sde::{self, run_ensemble, EnsembleSpec, SdeSystem, SimOptions};
use serde::Serialize;
use thiserror::Error;

use crate::bench::{ExamplesOptions, Table1Options};
use crate::config::{CertifySpec, ExperimentConfig, GridSpec, SimSpec, SynthesisMode, SynthesizeSpec, Task};
use crate::plot::{emit_plot_data, PlotSeries};

/// Version of the CSV/JSON schemas written by [`run`].
pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "RESIDENCE_LAB_THREADS";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// 0 success, 1 config, 2 numeric or I/O, 3 infeasible.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) | CliError::Io(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

pub(crate) fn numeric(e: impl Display) -> CliError {
    CliError::Numeric(e.to_string())
}

fn control_err(e: ControlError) -> CliError {
    match e {
        ControlError::Invalid(m) => CliError::Config(m),
        e @ (ControlError::NotHurwitz
        | ControlError::NotDisturbable { .. }
        | ControlError::SingularB(_)
        | ControlError::NoGamma(_)
        | ControlError::Certificate(_)) => CliError::Infeasible(e.to_string()),
        e => CliError::Numeric(e.to_string()),
    }
}

/// Command-line overrides; `None` keeps the config value or the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

/// What a successful run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

struct Ctx {
    out: PathBuf,
    seed: u64,
    summary: RunSummary,
}

impl Ctx {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.summary.files.push(p.clone());
        p
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        File::create(&p).map(BufWriter::new).map_err(|e| CliError::io(&p, e))
    }

    fn write_string(&mut self, name: &str, s: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, s).map_err(|e| CliError::io(&p, e))
    }

    fn plot(&mut self, name: &str, series: &PlotSeries) -> Result<(), CliError> {
        let p = self.path(name);
        emit_plot_data(series, &p)
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.lines.push(line.into());
    }
}

/// Fills seed, threads, output directory and task into `config`.
pub fn resolve(mut config: ExperimentConfig, task: Task, opts: &RunOptions) -> Result<ExperimentConfig, CliError> {
    if let Some(t) = config.task {
        if t != task {
            return Err(CliError::Config(format!(
                "config declares task `{}` but `{}` was requested",
                t.as_str(),
                task.as_str()
            )));
        }
    }
    config.task = Some(task);
    config.seed = Some(opts.seed.or(config.seed).unwrap_or(config::DEFAULT_SEED));
    config.threads = opts.threads.or(config.threads);
    if config.threads == Some(0) {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    config.out = Some(opts.out.clone().or(config.out).unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT)));
    let missing = config.missing_fields(task);
    if !missing.is_empty() {
        return Err(CliError::Config(format!(
            "task `{}` is missing required fields: {}",
            task.as_str(),
            missing.join(", ")
        )));
    }
    Ok(config)
}

/// Runs `task`, writing artifacts and `resolved_config.toml` to the output
/// directory.
pub fn run(config: ExperimentConfig, task: Task, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let config = resolve(config, task, opts)?;
    let out = config.out.clone().expect("resolved");
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut ctx = Ctx {
        out,
        seed: config.seed.expect("resolved"),
        summary: RunSummary::default(),
    };
    let echo = config.to_toml()?;
    ctx.write_string(RESOLVED_CONFIG, &echo)?;
    let result = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(|| dispatch(&config, task, &mut ctx)),
        None => dispatch(&config, task, &mut ctx),
    };
    result.map(|()| ctx.summary)
}

fn dispatch(config: &ExperimentConfig, task: Task, ctx: &mut Ctx) -> Result<(), CliError> {
    match task {
        Task::Simulate => simulate(config, ctx, false),
        Task::HitStats => simulate(config, ctx, true),
        Task::Certify => certify(config, ctx),
        Task::Dirichlet => dirichlet(config, ctx),
        Task::Synthesize => synthesize(config, ctx),
        Task::BenchmarkTable1 => bench_table1(config, ctx),
        Task::BenchmarkExamples => bench_examples(config, ctx),
    }
}

fn sim_options(sim: &SimSpec) -> SimOptions {
    let mut o = SimOptions::new(sim.t_max, sim.dt).with_bridge(sim.bridge);
    o.r_escape = sim.r_escape;
    o.max_steps = sim.max_steps;
    o.stride = sim.stride;
    o
}

#[derive(Serialize)]
struct StatsFile<'a> {
    schema: u32,
    seed: u64,
    stats: &'a mc::ResidenceStats,
}

fn simulate(config: &ExperimentConfig, ctx: &mut Ctx, stats_task: bool) -> Result<(), CliError> {
    let sys = config.system.as_ref().expect("checked").build()?;
    let domain = config.domain.expect("checked");
    let sim = config.sim.as_ref().expect("checked");
    if sim.x0.len() != sys.dim() {
        return Err(CliError::Config(format!("sim.x0 has {} entries, system dimension is {}", sim.x0.len(), sys.dim())));
    }
    if sim.paths == 0 {
        return Err(CliError::Config("sim.paths must be positive".into()));
    }
    let mut options = sim_options(sim);
    if !stats_task && options.stride.is_none() {
        options.stride = Some(((sim.t_max / sim.dt) as u64 / 1000).max(1));
    }
    options.validate().map_err(|e| CliError::Config(format!("sim: {e}")))?;
    let outcomes = run_ensemble(&EnsembleSpec {
        system: &sys,
        domain: &domain,
        x0: &sim.x0,
        options: &options,
        seed: ctx.seed,
        n_paths: sim.paths,
        threads: None,
    })
    .map_err(numeric)?;
    ctx.say(format!("{} paths from x0 = {:?}", outcomes.len(), sim.x0));
    let w = ctx.create("outcomes.csv")?;
    sde::write_outcomes_csv(&outcomes, w).map_err(numeric)?;
    if !stats_task {
        let w = ctx.create("paths.csv")?;
        return sde::write_paths_csv(&outcomes, sys.dim(), w).map_err(numeric);
    }
    let stats = aggregate(&outcomes, &sim.t_list, &sim.lambdas);
    ctx.say(format!(
        "hit {} / {} (censored {}, escaped {})",
        stats.n_hit, stats.n_paths, stats.n_censored, stats.n_escaped
    ));
    if let Some(m) = &stats.mean_tau {
        ctx.say(format!("E[tau] = {} ± {}", m.estimate, m.se));
    }
    let w = ctx.create("stats.json")?;
    serde_json::to_writer_pretty(w, &StatsFile { schema: SCHEMA_VERSION, seed: ctx.seed, stats: &stats })
        .map_err(|e| CliError::Io(e.to_string()))?;
    ctx.plot("ecdf.csv", &PlotSeries::empirical_cdf(&outcomes))?;
    if !sim.bounds.is_empty() {
        let reports = compare_bounds(&stats, &sim.bounds);
        mc::write_reports_csv(&reports, ctx.create("bounds.csv")?).map_err(numeric)?;
        mc::write_reports_jsonl(&reports, ctx.create("bounds.jsonl")?).map_err(numeric)?;
        for r in &reports {
            ctx.say(format!(
                "{} [{}]: {} ± {} vs {} -> {}",
                r.quantity,
                r.bound_kind.as_str(),
                r.estimate,
                r.se,
                r.bound,
                if r.satisfied { "ok" } else { "VIOLATED" }
            ));
        }
    }
    Ok(())
}

fn certificate_kind(spec: &CertifySpec) -> Result<CertificateKind, CliError> {
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| CliError::Config(format!("certify.{name} is required for kind `{}`", spec.kind)))
    };
    Ok(match spec.kind.as_str() {
        "regularity" => CertificateKind::Regularity,
        "regularity_bihari" => CertificateKind::RegularityBihari { r: need(spec.r, "r")? },
        "monotone" => CertificateKind::Monotone,
        "nonregularity" => CertificateKind::NonRegularity,
        "recurrence_min" => CertificateKind::RecurrenceMin,
        "recurrence_strict" => CertificateKind::RecurrenceStrict,
        "recurrence_integrated" => CertificateKind::RecurrenceIntegrated,
        "multidim" => CertificateKind::Multidim,
        "nonrecurrence" => CertificateKind::Nonrecurrence {
            inner_radius: need(spec.inner_radius, "inner_radius")?,
        },
        "exponential_decay" => CertificateKind::ExponentialDecay,
        other => {
            return Err(CliError::Config(format!(
                "certify.kind: unknown `{other}` (expected regularity, regularity_bihari, monotone, nonregularity, \
                 recurrence_min, recurrence_strict, recurrence_integrated, multidim, nonrecurrence, exponential_decay)"
            )))
        }
    })
}

fn parse_in(src: &Option<String>, scope: &Scope, field: &str) -> Result<Option<Expr>, CliError> {
    src.as_ref()
        .map(|s| Expr::parse(s, scope).map_err(|e| CliError::Config(format!("certify.{field}: {e}"))))
        .transpose()
}

/// Translates a certify section into a core certificate for `sys`.
pub fn build_certificate(spec: &CertifySpec, sys: &SdeSystem, domain: Option<&sde::Domain>) -> Result<Certificate, CliError> {
    let kind = certificate_kind(spec)?;
    let n = sys.dim();
    let mut region = match &spec.grid {
        GridSpec::Radial { r_min, r_max, radii, directions } => Region::radial(*r_min, *r_max, *radii, *directions),
        GridSpec::Box { lo, hi, points } => Region {
            t_max: 0.0,
            t_points: 1,
            grid: lyap::SpatialGrid::Box { lo: lo.clone(), hi: hi.clone(), points: *points },
        },
    };
    if spec.t_max > 0.0 {
        region = region.with_times(spec.t_max, spec.t_points.unwrap_or(11));
    }
    let consts = sys.constants();
    let state = Scope::state(n).with_constants(consts.iter());
    let time = Scope::time_only().with_constants(consts.iter());
    let radial = Scope::scalar("s").with_constants(consts.iter());
    let functions = ComparisonFns {
        gamma: parse_in(&spec.gamma, &time, "gamma")?,
        alpha: parse_in(&spec.alpha, &time, "alpha")?,
        nu: parse_in(&spec.nu, &time, "nu")?,
        alpha_bar: parse_in(&spec.alpha_bar, &time, "alpha_bar")?,
        mu: parse_in(&spec.mu, &radial, "mu")?,
        mu1: parse_in(&spec.mu1, &radial, "mu1")?,
        theta: parse_in(&spec.theta, &radial, "theta")?,
        lambda: spec.lambda,
        k_t: spec.k_t,
    };
    let mut cert = Certificate::new(kind, region).with_functions(functions);
    if let Some(v) = parse_in(&spec.v, &state, "v")? {
        let mut lf = LyapunovFn::new(v);
        let parse_all = |srcs: &Vec<String>, field: &str| -> Result<Vec<Expr>, CliError> {
            srcs.iter()
                .map(|s| Expr::parse(s, &state).map_err(|e| CliError::Config(format!("certify.{field}: {e}"))))
                .collect()
        };
        if let Some(g) = &spec.gradient {
            lf = lf.with_gradient(parse_all(g, "gradient")?);
        }
        if let Some(h) = &spec.hessian {
            lf = lf.with_hessian(parse_all(h, "hessian")?);
        }
        cert = cert.with_v(lf);
    }
    if let Some(d) = domain {
        cert = cert.with_domain(*d);
    }
    if let Some(x0) = &spec.x0 {
        cert = cert.with_x0(x0.clone());
    }
    if let Some(t) = spec.tolerance {
        cert = cert.with_tolerance(t);
    }
    if let Some(g) = spec.growth_threshold {
        cert = cert.with_growth_threshold(g);
    }
    cert.validate(n).map_err(|e| CliError::Config(format!("certify: {e}")))?;
    Ok(cert)
}

fn certify(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), CliError> {
    let sys = config.system.as_ref().expect("checked").build()?;
    let spec = config.certify.as_ref().expect("checked");
    let cert = build_certificate(spec, &sys, config.domain.as_ref())?;
    let report = check(&cert, &sys).map_err(numeric)?;
    lyap::write_reports_csv(std::slice::from_ref(&report), ctx.create("certificate.csv")?).map_err(numeric)?;
    ctx.say(report.summary());
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!(
            "certificate `{}` fails at t = {}, x = {:?} (margin {:.3e})",
            report.kind, report.witness_t, report.witness_x, report.worst_margin
        )))
    }
}

fn dirichlet(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), CliError> {
    let task = config.dirichlet.as_ref().expect("checked");
    let mut spec = DirichletSpec::parse(&task.drift, task.delta, task.x_r)
        .map_err(|e| CliError::Config(format!("dirichlet: {e}")))?;
    if let Some(n) = task.nodes {
        spec = spec.with_nodes(n);
    }
    if let Some(b) = &task.tau_bound {
        let e = Expr::parse(b, &Scope::scalar("x")).map_err(|e| CliError::Config(format!("dirichlet.tau_bound: {e}")))?;
        spec = spec.with_tau_bound(e);
    }
    spec.validate().map_err(|e| CliError::Config(format!("dirichlet: {e}")))?;
    let table = solve_mean_residence_1d(&spec).map_err(numeric)?;
    for w in &table.warnings {
        ctx.say(format!("warning: {w}"));
    }
    table.write_csv(ctx.create("tau.csv")?).map_err(numeric)?;
    let mut rows = csv::Writer::from_writer(ctx.create("dirichlet.csv")?);
    let io = |e: csv::Error| CliError::Io(e.to_string());
    rows.write_record(["x0", "tau_pde", "tau_oracle"]).map_err(io)?;
    for &x0 in &task.x0 {
        let tau = table.tau_at(x0).map_err(numeric)?;
        let oracle = if task.oracle {
            Some(quadrature_oracle(&spec.drift, spec.delta, x0).map_err(numeric)?)
        } else {
            None
        };
        ctx.say(format!("tau({x0}) = {tau:.7}{}", oracle.map(|o| format!(" (quadrature {o:.7})")).unwrap_or_default()));
        rows.write_record([x0.to_string(), tau.to_string(), oracle.map(|o| o.to_string()).unwrap_or_default()])
            .map_err(io)?;
    }
    rows.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn required<'a, T>(v: &'a Option<T>, field: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("synthesize.{field} is required for this mode")))
}

/// Runs the synthesis described by `spec`.
pub fn synthesize_from(spec: &SynthesizeSpec) -> Result<SynthesisResult, CliError> {
    let prob = AimingProblem::new(spec.horizon, spec.p, spec.delta, spec.x0.clone()).map_err(control_err)?;
    match spec.mode {
        SynthesisMode::Linear => {
            let mut plant = LinearPlant::new(
                required(&spec.a, "a")?.clone(),
                required(&spec.b, "b")?.clone(),
                required(&spec.c, "c")?.clone(),
            );
            if let Some(d) = &spec.d {
                plant = plant.with_d(d.clone());
            }
            synthesize_linear(&plant, &prob).map_err(control_err)
        }
        SynthesisMode::Cancel | SynthesisMode::Decay => {
            let mode = if spec.mode == SynthesisMode::Cancel { ExampleMode::Cancel } else { ExampleMode::Decay };
            let alpha = match mode {
                ExampleMode::Cancel => *required(&spec.alpha, "alpha")?,
                ExampleMode::Decay => spec.alpha.unwrap_or(0.0),
            };
            let plant = NonlinearPlant::multiplicative_example(
                mode,
                required(&spec.g, "g")?.clone(),
                required(&spec.sigma_hat, "sigma_hat")?,
                alpha,
                spec.constants.clone(),
            )
            .map_err(control_err)?;
            synthesize_nonlinear(&plant, &prob).map_err(control_err)
        }
    }
}

fn synthesize(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), CliError> {
    let spec = config.synthesize.as_ref().expect("checked");
    let result = synthesize_from(spec)?;
    result.write_csv(ctx.create("synthesis.csv")?).map_err(numeric)?;
    let summary = result.summary();
    ctx.write_string("synthesis.txt", &summary)?;
    ctx.say(summary.trim_end().to_string());
    if spec.verify_paths > 0 {
        let opts = ExamplesOptions { paths: spec.verify_paths, seed: ctx.seed };
        let dt = spec.verify_dt.unwrap_or(1e-3);
        let report = bench::verify_closed_loop(&result.closed_loop, &result.problem, &opts, dt, spec.r_escape)?;
        mc::write_reports_csv(std::slice::from_ref(&report), ctx.create("verification.csv")?).map_err(numeric)?;
        ctx.say(format!(
            "P(tau > T) = {} ± {} vs 1 - p = {} -> {}",
            report.estimate,
            report.se,
            report.bound,
            if report.satisfied { "ok" } else { "VIOLATED" }
        ));
    }
    if result.admissible {
        Ok(())
    } else {
        Err(CliError::Infeasible(format!(
            "aiming inequality fails: V(0, x0) = {} > {}",
            result.inequality.lhs, result.inequality.rhs
        )))
    }
}

fn bench_table1(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), CliError> {
    let mut opts = Table1Options { seed: ctx.seed, ..Default::default() };
    if let Some(b) = &config.bench {
        opts.paths = b.paths.unwrap_or(opts.paths);
        opts.dt = b.dt.unwrap_or(opts.dt);
        opts.x0 = b.x0.clone().unwrap_or(opts.x0);
        opts.x_r = b.x_r.unwrap_or(opts.x_r);
        opts.nodes = b.nodes.unwrap_or(opts.nodes);
    }
    let table = bench::table1(&opts)?;
    table.write_csv(ctx.create("table1.csv")?)?;
    table.write_reference_csv(ctx.create("table1_reference.csv")?)?;
    for (m, t) in &table.tables {
        ctx.plot(&format!("tau_curve_m{m}.csv"), &PlotSeries::tau_curve(t, 200))?;
    }
    for r in &table.rows {
        ctx.say(format!(
            "m={} x0={}: pde {:.5} quadrature {:.5} mc {} bound {} published {}",
            r.m,
            r.x0,
            r.tau_pde,
            r.tau_oracle,
            r.tau_mc.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into()),
            r.bound,
            r.reference.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        ));
    }
    ctx.say(format!("pde {:.2}s, monte carlo {:.2}s", table.pde_seconds, table.mc_seconds));
    Ok(())
}

fn bench_examples(config: &ExperimentConfig, ctx: &mut Ctx) -> Result<(), CliError> {
    let mut opts = ExamplesOptions { seed: ctx.seed, ..Default::default() };
    if let Some(p) = config.bench.as_ref().and_then(|b| b.paths) {
        opts.paths = p;
    }
    let runs = bench::examples(&opts)?;
    bench::write_examples_csv(&runs, ctx.create("examples.csv")?)?;
    let certs: Vec<_> = runs.iter().flat_map(|r| r.certificates.iter().cloned()).collect();
    lyap::write_reports_csv(&certs, ctx.create("certificates.csv")?).map_err(numeric)?;
    for run in &runs {
        if let Some(s) = &run.survival {
            let name = format!("survival_{}.csv", run.name.split('[').next().unwrap_or(&run.name));
            ctx.plot(&name, s)?;
        }
        let ok = run.reports.iter().filter(|r| r.satisfied).count();
        ctx.say(format!("{}: {ok}/{} bounds hold; {}", run.name, run.reports.len(), run.notes.join("; ")));
    }
    Ok(())
}
