//! Experiment configuration, read from TOML with unknown keys rejected.
//!
//! ```toml
//! strategy = "sage"          # sage | sage_norm_only | entropy | random | aada
//! variant = "inductive"      # naive | balance | inductive
//! budget = "2%"              # fraction of the target-train pool per round, or a count: budget = 10
//! rounds = 5
//! pretrain_iters = 2000
//! round_iters = 500
//! lr = 0.05
//! seeds = [0, 1, 2]
//!
//! [dataset]
//! family = "two_moons_shift"
//! n_source = 1000
//! n_target = 1000
//! rotation = 0.6
//! noise = 0.1
//! classes = 2
//! ```
//!
//! Omitted keys take the defaults of [`ExperimentConfig::default`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active::Variant;
use crate::baselines::StrategyKind;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::theory::EstimatorSettings;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SAGELAB_OUTPUT_DIR";

/// Annotation budget per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Fraction of the target-train pool, e.g. `0.02` for "2%".
    Fraction(f64),
    Count(usize),
}

impl Budget {
    /// Samples per round for a pool of `pool` target-train samples.
    pub fn per_round(self, pool: usize) -> Result<usize> {
        let n = match self {
            Budget::Count(n) => n,
            Budget::Fraction(f) => (f * pool as f64).round() as usize,
        };
        if n == 0 {
            return Err(Error::contract(format!("budget {self} selects no sample from a pool of {pool}")));
        }
        Ok(n)
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Fraction(x) => write!(f, "{}%", x * 100.0),
            Budget::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::parse("budget", format!("expected a count, a fraction or a percentage, got `{s}`"));
        let b = if let Some(p) = s.strip_suffix('%') {
            Budget::Fraction(p.trim().parse::<f64>().map_err(|_| bad())? / 100.0)
        } else if let Ok(n) = s.parse::<usize>() {
            Budget::Count(n)
        } else {
            Budget::Fraction(s.parse::<f64>().map_err(|_| bad())?)
        };
        if let Budget::Fraction(f) = b {
            if !(f > 0.0 && f <= 1.0) {
                return Err(bad());
            }
        }
        Ok(b)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(usize),
    Text(String),
}

impl Serialize for Budget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Budget::Count(n) => BudgetRepr::Count(*n),
            b => BudgetRepr::Text(b.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match BudgetRepr::deserialize(d)? {
            BudgetRepr::Count(n) => Ok(Budget::Count(n)),
            BudgetRepr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parameters of one experiment. `strategy` and `variant` describe a single
/// cell; `compare` runs several cells derived from the same base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub variant: Variant,
    pub budget: Budget,
    pub rounds: usize,
    pub pretrain_iters: usize,
    pub round_iters: usize,
    pub lr: f64,
    /// Step size of the inductive update; defaults to `lr`.
    pub inductive_lr: Option<f64>,
    /// Balance trade-off `γ`.
    pub gamma: f64,
    pub balance_steps: usize,
    pub grl_steepness: f64,
    pub source_batch: usize,
    pub target_batch: usize,
    pub seeds: Vec<u64>,
    /// Compute the bound report at the end of every run.
    pub bounds: bool,
    /// Write per-round SAGE norms of the pool.
    pub dump_embeddings: bool,
    pub output_dir: PathBuf,
    /// Directory holding `source.csv`, `target_train.csv`, `target_test.csv`.
    /// When absent the dataset is generated from `dataset`.
    pub data_dir: Option<PathBuf>,
    pub dataset: SyntheticSpec,
    pub architecture: Architecture,
    pub estimators: EstimatorSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            strategy: StrategyKind::Sage,
            variant: Variant::Inductive,
            budget: Budget::Fraction(0.02),
            rounds: 5,
            pretrain_iters: 2000,
            round_iters: 500,
            lr: 0.05,
            inductive_lr: None,
            gamma: 0.5,
            balance_steps: 200,
            grl_steepness: 10.0,
            source_batch: 32,
            target_batch: 32,
            seeds: vec![0],
            bounds: false,
            dump_embeddings: false,
            output_dir: PathBuf::from("out"),
            data_dir: None,
            dataset: SyntheticSpec::two_moons(),
            architecture: Architecture::default(),
            estimators: EstimatorSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn inductive_lr(&self) -> f64 {
        self.inductive_lr.unwrap_or(self.lr)
    }

    /// Output directory with the environment override applied.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }

    /// Checks rates and sizes that do not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("inductive_lr", self.inductive_lr()),
            ("grl_steepness", self.grl_steepness),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::contract(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.source_batch == 0 || self.target_batch == 0 {
            return Err(Error::contract("batch sizes must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::contract("at least one seed is required"));
        }
        self.architecture.validate()?;
        self.dataset.validate()
    }

    /// Checks `b·r ≤ pool` for a concrete target-train pool and returns `b`.
    pub fn budget_for_pool(&self, pool: usize) -> Result<usize> {
        if self.rounds == 0 {
            return Ok(0);
        }
        let b = self.budget.per_round(pool)?;
        if b * self.rounds > pool {
            return Err(Error::contract(format!(
                "budget {b} x {} rounds exceeds the target-train pool of {pool}",
                self.rounds
            )));
        }
        Ok(b)
    }

    /// Hash identifying a cell: every setting except seeds and output location.
    pub fn cell_hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Copy of this config for one (strategy, variant) cell.
    pub fn cell(&self, strategy: StrategyKind, variant: Variant) -> Self {
        ExperimentConfig {
            strategy,
            variant,
            ..self.clone()
        }
    }
}
