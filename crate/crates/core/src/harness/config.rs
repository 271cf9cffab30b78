//! Experiment configuration: one JSON document drives everything.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assignment::CostParams;
use crate::error::{Error, Result};
use crate::lifecycle::LifecycleConfig;
use crate::oracle::OracleParams;
use crate::world::ScenarioParams;

/// Which supervision recipe an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Continuation plus proposal-only second stage, no dropout groups.
    Baseline,
    /// Second Chance Assignment, no dropout groups.
    Sca,
    /// Second Chance Assignment with track query dropout groups.
    ScaDropout,
    /// Detection-style supervision: no continuation, all queries matched by
    /// cost each frame. Used for the track-query-recall comparison.
    Detection,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Baseline,
        Strategy::Sca,
        Strategy::ScaDropout,
        Strategy::Detection,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Sca => "sca",
            Strategy::ScaDropout => "sca_dropout",
            Strategy::Detection => "detection",
        }
    }

    /// Whether training episodes build auxiliary dropout groups.
    pub fn uses_dropout(&self) -> bool {
        matches!(self, Strategy::ScaDropout)
    }

    /// Whether stage 2 admits unassigned track queries during training.
    pub fn uses_second_chance(&self) -> bool {
        matches!(self, Strategy::Sca | Strategy::ScaDropout)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "sca" => Ok(Strategy::Sca),
            "sca_dropout" => Ok(Strategy::ScaDropout),
            "detection" => Ok(Strategy::Detection),
            other => Err(Error::parameter(
                "strategy",
                format!("unknown strategy `{other}` (expected baseline, sca, sca_dropout, detection)"),
            )),
        }
    }
}

/// Confidence-model fitting knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Loss weight on positive examples; 1 disables rebalancing.
    pub positive_weight: f64,
    /// Training clip length in frames.
    pub clip_len: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 12,
            lr: 0.5,
            batch_size: 64,
            positive_weight: 1.0,
            clip_len: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::parameter("training.epochs", "must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::parameter("training.lr", "must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::parameter("training.batch_size", "must be >= 1"));
        }
        if !(self.positive_weight > 0.0) {
            return Err(Error::parameter("training.positive_weight", "must be > 0"));
        }
        if self.clip_len < 2 {
            return Err(Error::parameter("training.clip_len", "must be >= 2"));
        }
        Ok(())
    }
}

/// Root configuration document. Every field has a default, so a config file
/// only needs the fields it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioParams,
    pub lifecycle: LifecycleConfig,
    pub cost: CostParams,
    pub oracle: OracleParams,
    pub strategy: Strategy,
    pub num_scenes: usize,
    pub seed: u64,
    pub training: TrainingConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioParams::default(),
            lifecycle: LifecycleConfig::default(),
            cost: CostParams::default(),
            oracle: OracleParams::default(),
            strategy: Strategy::ScaDropout,
            num_scenes: 12,
            seed: 7,
            training: TrainingConfig::default(),
            output_dir: PathBuf::from("tba-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.lifecycle.validate()?;
        self.cost.validate()?;
        self.oracle.validate()?;
        self.training.validate()?;
        if self.num_scenes < 1 {
            return Err(Error::parameter("num_scenes", "must be >= 1"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parameter("config", format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parameter("config", format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Hash of the canonical JSON serialization (struct field order). Reports
    /// embed it so results can be traced back to an exact configuration.
    pub fn canonical_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}
