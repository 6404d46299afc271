//! TOML experiment configuration.
//!
//! ```toml
//! task = "hit-stats"
//! seed = 7
//!
//! [system]
//! catalog = "ou"
//! mu = -1.0
//! sigma = 1.0
//!
//! [domain]
//! kind = "interval"
//! a = -1.0
//! b = 1.0
//!
//! [sim]
//! x0 = [2.0]
//! paths = 10000
//! dt = 1e-3
//! t_max = 50.0
//! t_list = [1.0, 5.0]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use residence_core::linalg::Matrix;
use residence_core::mc::Bound;
use residence_core::sde::{Domain, SdeSystem};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    HitStats,
    Certify,
    Dirichlet,
    Synthesize,
    BenchmarkTable1,
    BenchmarkExamples,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::HitStats => "hit-stats",
            Task::Certify => "certify",
            Task::Dirichlet => "dirichlet",
            Task::Synthesize => "synthesize",
            Task::BenchmarkTable1 => "benchmark-table1",
            Task::BenchmarkExamples => "benchmark-examples",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub system: Option<SystemSpec>,
    pub domain: Option<Domain>,
    pub sim: Option<SimSpec>,
    pub certify: Option<CertifySpec>,
    pub dirichlet: Option<DirichletTask>,
    pub synthesize: Option<SynthesizeSpec>,
    pub bench: Option<BenchSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "catalog", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    GbmCubic {
        alpha1: f64,
        alpha2: f64,
        #[serde(default)]
        alpha3: f64,
    },
    Ou {
        mu: f64,
        sigma: f64,
    },
    PolyDriftUnitNoise {
        m: u32,
    },
    Linear {
        a: Matrix,
        b: Matrix,
        c: Matrix,
    },
    ScaledIdentity {
        n: usize,
        a: f64,
        s: f64,
    },
    Dsl {
        drift: Vec<String>,
        /// Row-major `n × noise_dim`.
        diffusion: Vec<String>,
        noise_dim: usize,
        #[serde(default)]
        constants: BTreeMap<String, f64>,
    },
}

impl SystemSpec {
    pub fn build(&self) -> Result<SdeSystem, CliError> {
        let sys = match self {
            SystemSpec::GbmCubic { alpha1, alpha2, alpha3 } => SdeSystem::gbm_cubic(*alpha1, *alpha2, *alpha3),
            SystemSpec::Ou { mu, sigma } => SdeSystem::ou(*mu, *sigma),
            SystemSpec::PolyDriftUnitNoise { m } => SdeSystem::poly_drift_unit_noise(*m),
            SystemSpec::Linear { a, b, c } => SdeSystem::linear(a.clone(), b.clone(), c.clone()),
            SystemSpec::ScaledIdentity { n, a, s } => SdeSystem::scaled_identity(*n, *a, *s),
            SystemSpec::Dsl { drift, diffusion, noise_dim, constants } => {
                SdeSystem::from_dsl(drift, diffusion, *noise_dim, constants.clone())
            }
        };
        sys.map_err(|e| CliError::Config(format!("system: {e}")))
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub x0: Vec<f64>,
    pub paths: u64,
    pub dt: f64,
    pub t_max: f64,
    #[serde(default = "default_true")]
    pub bridge: bool,
    pub r_escape: Option<f64>,
    pub max_steps: Option<u64>,
    /// Stored-state thinning for `simulate`.
    pub stride: Option<u64>,
    #[serde(default)]
    pub t_list: Vec<f64>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub bounds: Vec<Bound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Radial {
        r_min: f64,
        r_max: f64,
        radii: usize,
        #[serde(default)]
        directions: usize,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        points: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    /// `regularity`, `regularity_bihari`, `monotone`, `nonregularity`,
    /// `recurrence_min`, `recurrence_strict`, `recurrence_integrated`,
    /// `multidim`, `nonrecurrence` or `exponential_decay`.
    pub kind: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub t_max: f64,
    pub t_points: Option<usize>,
    /// `V(t, x)` in `t, x1..xn`.
    pub v: Option<String>,
    pub gradient: Option<Vec<String>>,
    pub hessian: Option<Vec<String>>,
    /// Time functions in `t`.
    pub gamma: Option<String>,
    pub alpha: Option<String>,
    pub nu: Option<String>,
    pub alpha_bar: Option<String>,
    /// Radial functions in `s`.
    pub mu: Option<String>,
    pub mu1: Option<String>,
    pub theta: Option<String>,
    pub lambda: Option<f64>,
    pub k_t: Option<f64>,
    /// Bihari exponent.
    pub r: Option<f64>,
    /// Inner radius `a` of the non-recurrence construction.
    pub inner_radius: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub tolerance: Option<f64>,
    pub growth_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletTask {
    /// Drift `f(x)` in the variable `x`.
    pub drift: String,
    pub delta: f64,
    pub x_r: f64,
    pub nodes: Option<usize>,
    /// Upper bound `τ̂(x)` in `x`.
    pub tau_bound: Option<String>,
    #[serde(default)]
    pub x0: Vec<f64>,
    #[serde(default = "default_true")]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    Linear,
    /// `u = −g − σ̂²x` with `σ̂² ≥ α(1 + |x|²)`.
    Cancel,
    /// `u = −g − ½σ̂²x − ½x`.
    Decay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeSpec {
    pub mode: SynthesisMode,
    pub horizon: f64,
    pub p: f64,
    pub delta: f64,
    pub x0: Vec<f64>,
    pub a: Option<Matrix>,
    pub b: Option<Matrix>,
    pub c: Option<Matrix>,
    pub d: Option<Matrix>,
    /// Uncontrolled drift `g(t, x)`.
    pub g: Option<Vec<String>>,
    pub sigma_hat: Option<String>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    /// Monte Carlo check of the closed loop; zero skips it.
    #[serde(default)]
    pub verify_paths: u64,
    pub verify_dt: Option<f64>,
    pub r_escape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub paths: Option<u64>,
    pub dt: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub x_r: Option<f64>,
    pub nodes: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(src: &str) -> Result<Self, CliError> {
        toml::from_str(src).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&src).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Numeric(format!("config echo: {e}")))
    }

    /// Fields `task` needs that are absent.
    pub fn missing_fields(&self, task: Task) -> Vec<&'static str> {
        let mut missing = Vec::new();
        let mut need = |present: bool, name: &'static str| {
            if !present {
                missing.push(name);
            }
        };
        match task {
            Task::Simulate | Task::HitStats => {
                need(self.system.is_some(), "system");
                need(self.domain.is_some(), "domain");
                need(self.sim.is_some(), "sim");
            }
            Task::Certify => {
                need(self.system.is_some(), "system");
                need(self.certify.is_some(), "certify");
            }
            Task::Dirichlet => need(self.dirichlet.is_some(), "dirichlet"),
            Task::Synthesize => need(self.synthesize.is_some(), "synthesize"),
            Task::BenchmarkTable1 | Task::BenchmarkExamples => {}
        }
        missing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_module_example() {
        let src = r#"
task = "hit-stats"
seed = 7

[system]
catalog = "ou"
mu = -1.0
sigma = 1.0

[domain]
kind = "interval"
a = -1.0
b = 1.0

[sim]
x0 = [2.0]
paths = 10000
dt = 1e-3
t_max = 50.0
t_list = [1.0, 5.0]

[[sim.bounds]]
quantity = { quantity = "not_hit_by", t = 5.0 }
kind = "target"
value = 0.1
"#;
        let c = ExperimentConfig::from_toml(src).unwrap();
        assert_eq!(c.task, Some(Task::HitStats));
        assert_eq!(c.domain, Some(Domain::Interval { a: -1.0, b: 1.0 }));
        let sim = c.sim.as_ref().unwrap();
        assert!(sim.bridge);
        assert_eq!(sim.bounds.len(), 1);
        assert!(c.missing_fields(Task::HitStats).is_empty());
        let echo = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(echo, c);
    }

    #[test]
    fn empty_config_lists_fields() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c.missing_fields(Task::HitStats), vec!["system", "domain", "sim"]);
        assert_eq!(c.missing_fields(Task::Synthesize), vec!["synthesize"]);
    }

    #[test]
    fn errors_carry_location() {
        let err = ExperimentConfig::from_toml("seed = 1\n[system]\ncatalog = \"ou\"\nmu = \"x\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("expected f64"), "{msg}");
        assert!(ExperimentConfig::from_toml("sed = 1").is_err());
    }

    #[test]
    fn matrices_and_dsl() {
        let src = r#"
[system]
catalog = "linear"
a = [[0.0, 0.0], [0.0, 0.0]]
b = [[1.0, 0.0], [0.0, 1.0]]
c = [[1.0, 0.0], [0.0, 1.0]]
"#;
        let c = ExperimentConfig::from_toml(src).unwrap();
        assert_eq!(c.system.unwrap().build().unwrap().dim(), 2);
        let src = r#"
[system]
catalog = "dsl"
drift = ["-k * x1"]
diffusion = ["1"]
noise_dim = 1
constants = { k = 2.0 }
"#;
        let sys = ExperimentConfig::from_toml(src).unwrap().system.unwrap().build().unwrap();
        assert_eq!(sys.drift(0.0, &[1.5]).unwrap(), vec![-3.0]);
    }
}
