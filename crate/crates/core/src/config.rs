//! Search configuration: a TOML document resolved into a fully explicit
//! [`SearchConfig`] whose hash pins a run for resumption.
//!
//! ```toml
//! space = "xception"
//! objectives = ["error", "flops"]
//! population = 12
//! generations = 20
//! seed = 7
//! crossover_rate = 0.9      # optional
//! mutation_rate = 0.045     # optional, defaults to 1 / genome length
//! subset_fraction = 0.2     # optional
//! evaluator = "synthetic"   # or "table:<csv path>" or "external:<command>"
//! input_side = 513          # optional, 513 for xception and 384 for mobilenetv2
//! seed_genomes = []         # optional genomes injected into generation 1
//!
//! [stop]                    # optional early stop on hyperarea stagnation
//! epsilon = 1e-4
//! patience = 3
//!
//! [surrogate]               # optional, synthetic evaluator constants
//! [throughput]              # optional, latency proxy model
//! [external]                # optional, worker pool settings
//! workers = 1
//! timeout_s = 600
//! retries = 1
//! ```

use std::fmt;
use std::path::Path;
use std::time::Duration;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cost::{default_input_side, CostModel, ThroughputModel};
use crate::eval::{
    EvalError, EvalObjective, Evaluator, ExternalConfig, ExternalEvaluator, SurrogateConstants,
    SyntheticEvaluator, TableEvaluator, DEFAULT_SUBSET_FRACTION,
};
use crate::genome::{Genome, SpaceId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Minimized objectives, reported in the units of the published tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Subset-validation MIoU error, percent.
    Error,
    /// GFLOPs.
    Flops,
    /// Millions of trainable parameters.
    Params,
    /// Millions of cycles.
    Latency,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Error => "error",
            Objective::Flops => "flops",
            Objective::Params => "params",
            Objective::Latency => "latency",
        }
    }

    /// The evaluator field backing this objective, if any.
    pub fn eval_objective(self) -> Option<EvalObjective> {
        match self {
            Objective::Error => Some(EvalObjective::Error),
            Objective::Latency => Some(EvalObjective::Latency),
            Objective::Flops | Objective::Params => None,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvaluatorSpec {
    Synthetic,
    Table(String),
    External(String),
}

impl fmt::Display for EvaluatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorSpec::Synthetic => f.write_str("synthetic"),
            EvaluatorSpec::Table(p) => write!(f, "table:{p}"),
            EvaluatorSpec::External(c) => write!(f, "external:{c}"),
        }
    }
}

impl FromStr for EvaluatorSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "synthetic" {
            return Ok(EvaluatorSpec::Synthetic);
        }
        match s.split_once(':') {
            Some(("table", p)) if !p.trim().is_empty() => Ok(EvaluatorSpec::Table(p.trim().into())),
            Some(("external", c)) if !c.trim().is_empty() => {
                Ok(EvaluatorSpec::External(c.trim().into()))
            }
            _ => Err(ConfigError::Invalid(format!(
                "evaluator {s:?} is not synthetic, table:<path> or external:<command>"
            ))),
        }
    }
}

impl Serialize for EvaluatorSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EvaluatorSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    /// Fraction of the reference box area below which an improvement counts as stagnation.
    pub epsilon: f64,
    /// Consecutive stagnant generations before stopping.
    pub patience: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            epsilon: 1e-4,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalSettings {
    pub workers: usize,
    pub timeout_s: f64,
    pub handshake_timeout_s: f64,
    pub retries: u32,
}

impl Default for ExternalSettings {
    fn default() -> Self {
        ExternalSettings {
            workers: 1,
            timeout_s: 600.0,
            handshake_timeout_s: 30.0,
            retries: 1,
        }
    }
}

/// The config file as written; optional fields are filled in by [`RawConfig::resolve`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    space: SpaceId,
    objectives: Vec<Objective>,
    population: usize,
    generations: usize,
    seed: u64,
    crossover_rate: Option<f64>,
    mutation_rate: Option<f64>,
    subset_fraction: Option<f64>,
    evaluator: Option<EvaluatorSpec>,
    input_side: Option<usize>,
    #[serde(default)]
    seed_genomes: Vec<Genome>,
    stop: Option<StopRule>,
    #[serde(default)]
    surrogate: SurrogateConstants,
    #[serde(default)]
    throughput: ThroughputModel,
    #[serde(default)]
    external: ExternalSettings,
}

impl RawConfig {
    fn resolve(self) -> SearchConfig {
        SearchConfig {
            space: self.space,
            objectives: self.objectives,
            population: self.population,
            generations: self.generations,
            seed: self.seed,
            crossover_rate: self.crossover_rate.unwrap_or(0.9),
            mutation_rate: self
                .mutation_rate
                .unwrap_or(1.0 / self.space.genome_len() as f64),
            subset_fraction: self.subset_fraction.unwrap_or(DEFAULT_SUBSET_FRACTION),
            evaluator: self.evaluator.unwrap_or(EvaluatorSpec::Synthetic),
            input_side: self
                .input_side
                .unwrap_or_else(|| default_input_side(self.space)),
            seed_genomes: self.seed_genomes,
            stop: self.stop,
            surrogate: self.surrogate,
            throughput: self.throughput,
            external: self.external,
        }
    }
}

/// Fully resolved search configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub space: SpaceId,
    pub objectives: Vec<Objective>,
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub subset_fraction: f64,
    pub evaluator: EvaluatorSpec,
    pub input_side: usize,
    pub seed_genomes: Vec<Genome>,
    pub stop: Option<StopRule>,
    pub surrogate: SurrogateConstants,
    pub throughput: ThroughputModel,
    pub external: ExternalSettings,
}

impl SearchConfig {
    /// Defaults of a standard search: 12 candidates, 20 generations for
    /// Xception and 25 for MobileNetV2, synthetic evaluator.
    pub fn new(space: SpaceId, objectives: Vec<Objective>, seed: u64) -> Self {
        let generations = match space {
            SpaceId::Xception => 20,
            SpaceId::MobileNetV2 => 25,
        };
        RawConfig {
            space,
            objectives,
            population: 12,
            generations,
            seed,
            crossover_rate: None,
            mutation_rate: None,
            subset_fraction: None,
            evaluator: None,
            input_side: None,
            seed_genomes: Vec::new(),
            stop: None,
            surrogate: SurrogateConstants::default(),
            throughput: ThroughputModel::default(),
            external: ExternalSettings::default(),
        }
        .resolve()
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let config = raw.resolve();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        let k = self.objectives.len();
        if !(2..=4).contains(&k) {
            return invalid(format!("expected 2 to 4 objectives, got {k}"));
        }
        for (i, o) in self.objectives.iter().enumerate() {
            if self.objectives[..i].contains(o) {
                return invalid(format!("objective {o} listed twice"));
            }
        }
        if self.population < 2 {
            return invalid(format!("population must be at least 2, got {}", self.population));
        }
        if self.generations < 1 {
            return invalid("generations must be at least 1".into());
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return invalid(format!("{name} {rate} is outside [0, 1]"));
            }
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return invalid(format!("subset_fraction {} is outside (0, 1]", self.subset_fraction));
        }
        if self.input_side == 0 {
            return invalid("input_side must be positive".into());
        }
        if let Some(g) = self.seed_genomes.iter().find(|g| g.space() != self.space) {
            return invalid(format!("seed genome {g} is not in the {} space", self.space));
        }
        if self.seed_genomes.len() > self.population - 1 {
            return invalid(format!(
                "{} seed genomes do not fit a population of {}",
                self.seed_genomes.len(),
                self.population
            ));
        }
        if let Some(stop) = &self.stop {
            if k != 2 {
                return invalid("the hyperarea stop rule needs exactly 2 objectives".into());
            }
            if !(stop.epsilon >= 0.0 && stop.epsilon.is_finite()) || stop.patience == 0 {
                return invalid("stop rule needs epsilon >= 0 and patience >= 1".into());
            }
        }
        if self.external.workers == 0
            || !(self.external.timeout_s > 0.0)
            || !(self.external.handshake_timeout_s > 0.0)
        {
            return invalid("external workers and timeouts must be positive".into());
        }
        self.throughput
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn objective_names(&self) -> Vec<String> {
        self.objectives.iter().map(|o| o.name().to_string()).collect()
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel::new(self.input_side, self.throughput.clone()).expect("validated config")
    }

    /// Evaluator fields every candidate needs.
    pub fn eval_objectives(&self) -> Vec<EvalObjective> {
        self.objectives
            .iter()
            .filter_map(|o| o.eval_objective())
            .collect()
    }

    /// Instantiates the configured evaluator. `worker_override` replaces the
    /// command of an external evaluator.
    pub fn build_evaluator(&self, worker_override: Option<&str>) -> Result<Box<dyn Evaluator>, EvalError> {
        Ok(match &self.evaluator {
            EvaluatorSpec::Synthetic => {
                Box::new(SyntheticEvaluator::new(self.surrogate.clone(), self.cost_model()))
            }
            EvaluatorSpec::Table(path) => Box::new(TableEvaluator::from_path(Path::new(path))?),
            EvaluatorSpec::External(command) => {
                let ext = ExternalConfig {
                    workers: self.external.workers,
                    timeout: Duration::from_secs_f64(self.external.timeout_s),
                    handshake_timeout: Duration::from_secs_f64(self.external.handshake_timeout_s),
                    retries: self.external.retries,
                    ..ExternalConfig::new(worker_override.unwrap_or(command), self.space)
                };
                Box::new(ExternalEvaluator::spawn(ext)?)
            }
        })
    }

    /// SHA-256 over the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
