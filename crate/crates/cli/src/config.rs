//! Experiment configuration (JSON).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use ssnn_core::bench::{BoucWenDataSpec, WhDataSpec};
use ssnn_core::init::{InitKind, DEFAULT_Z_MAX};
use ssnn_core::lti::EstimateOptions;
use ssnn_core::optim::LmOptions;
use ssnn_core::ssnn::Activation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must be 1.
    pub schema_version: u32,
    pub data: DataSource,
    pub model: ModelConfig,
    /// Initialization schemes compared in a sweep. The scheme fixes the
    /// structure: `random-gr` and `lti-gr` train the residual network, the
    /// others the plain one.
    pub schemes: Vec<InitKind>,
    #[serde(default)]
    pub init: InitConfig,
    /// Linear approximation (order `model.nx`).
    #[serde(default)]
    pub lti: EstimateOptions,
    #[serde(default)]
    pub lm: LmOptions,
    #[serde(default)]
    pub training: TrainingConfig,
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Default output directory, relative to the config file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Simulated Bouc-Wen oscillator: multisine training and test periods
    /// plus a sine sweep.
    BoucWen(BoucWenDataSpec),
    /// Simulated Wiener-Hammerstein cascade: multisine training and test
    /// periods.
    WienerHammerstein(WhDataSpec),
    /// Measured records in CSV form.
    Files(FileData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub train: PathBuf,
    pub tests: Vec<FileTest>,
    /// Hz; taken from each file's sidecar JSON when absent.
    #[serde(default)]
    pub sample_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FileTest {
    pub name: String,
    pub path: PathBuf,
    pub protocol: TestProtocol,
}

/// How a test record is simulated and scored. Models always start from the
/// zero state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestProtocol {
    /// The record is one period of a periodic steady state: the input is
    /// repeated `periods` times and only the last period is scored.
    Periodic { periods: usize },
    /// Simulated once; the first `skip` samples are not scored.
    Transient { skip: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub nx: usize,
    /// Neurons per hidden layer.
    pub nn: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Pre-activation bound used to select gamma.
    pub z_max: f64,
    /// Fixed gamma, bypassing the selection.
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            z_max: DEFAULT_Z_MAX,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Estimate the initial state of the training record.
    pub train_x0: bool,
    /// Scale outputs to unit variance for training (inputs always are).
    pub normalize_output: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            train_x0: true,
            normalize_output: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub runs: usize,
    /// Run `i` uses seed `base_seed + i` for every scheme.
    pub base_seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Periods simulated for generated multisine tests (last one scored).
    pub periods: usize,
    /// Leading samples of a generated sweep test left out of the RMSE.
    pub sweep_skip: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            periods: 2,
            sweep_skip: 2000,
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate; relative paths are resolved against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Files(f) = &mut self.data {
            fix(&mut f.train);
            f.tests.iter_mut().for_each(|t| fix(&mut t.path));
        }
        if let Some(o) = &mut self.output_dir {
            fix(o);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version);
        }
        if self.schemes.is_empty() {
            bail!("no initialization schemes given");
        }
        let unique: BTreeSet<_> = self.schemes.iter().collect();
        if unique.len() != self.schemes.len() {
            bail!("initialization schemes must not repeat");
        }
        if self.model.nx == 0 || self.model.nn == 0 {
            bail!("model.nx and model.nn must be positive");
        }
        if self.schemes.iter().any(|k| k.needs_gamma()) {
            if self.model.activation != Activation::Tanh {
                bail!("lti-suykens and lti-improved rely on the linear regime of tanh");
            }
            if self.model.nn < self.model.nx {
                bail!("lti-suykens and lti-improved need nn >= nx");
            }
        }
        if !(self.init.z_max > 0.0 && self.init.z_max.is_finite()) {
            bail!("init.z_max must be positive");
        }
        if let Some(g) = self.init.gamma {
            if !(g > 0.0 && g.is_finite()) {
                bail!("init.gamma must be positive");
            }
        }
        self.lm.validate()?;
        self.lti.lm.validate()?;
        if self.monte_carlo.runs == 0 {
            bail!("monte_carlo.runs must be at least 1");
        }
        if self.monte_carlo.workers == Some(0) {
            bail!("monte_carlo.workers must be at least 1");
        }
        if self.evaluation.periods == 0 {
            bail!("evaluation.periods must be at least 1");
        }
        match &self.data {
            DataSource::BoucWen(spec) => spec.validate()?,
            DataSource::WienerHammerstein(spec) => {
                spec.system.params()?;
            }
            DataSource::Files(f) => {
                let names: BTreeSet<_> = f.tests.iter().map(|t| t.name.as_str()).collect();
                if names.len() != f.tests.len() {
                    bail!("test record names must be unique");
                }
                for t in &f.tests {
                    if let TestProtocol::Periodic { periods: 0 } = t.protocol {
                        bail!("test {:?}: periods must be at least 1", t.name);
                    }
                }
            }
        }
        Ok(())
    }

    /// Default output directory when none is given on the command line.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

pub fn schema_json() -> String {
    let schema = schemars::schema_for!(ExperimentConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}
