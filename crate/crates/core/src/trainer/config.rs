use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oicr::{OicrConfig, SeedSource};
use crate::weakloss::{EntangleNorm, LossConfig};

/// Default entanglement weight for captions with scene graphs.
pub const DEFAULT_LAMBDA2: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    /// Object labels only.
    #[serde(rename = "em")]
    Em,
    /// Object labels plus object/attribute pairs.
    #[serde(rename = "em+sg")]
    EmSg,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(LossMode::Em),
            "em+sg" => Ok(LossMode::EmSg),
            other => Err(Error::Config(format!("unknown loss mode \"{other}\""))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Em => "em",
            LossMode::EmSg => "em+sg",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub loss_mode: LossMode,
    pub num_heads: usize,
    pub tau: f64,
    pub nms_threshold: f64,
    /// Detections scoring below this are dropped at inference.
    pub score_floor: f64,
    pub weighted_pseudo_labels: bool,
    pub entangle_norm: EntangleNorm,
    pub attribute_seed_source: SeedSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 2,
            steps: 8000,
            seed: 0,
            lambda1: 0.5,
            lambda2: DEFAULT_LAMBDA2,
            loss_mode: LossMode::EmSg,
            num_heads: 3,
            tau: 0.5,
            nms_threshold: 0.4,
            score_floor: 0.05,
            weighted_pseudo_labels: true,
            entangle_norm: EntangleNorm::Objects,
            attribute_seed_source: SeedSource::Previous,
        }
    }
}

impl TrainConfig {
    /// Switches mode, keeping `lambda2` consistent with it.
    pub fn set_loss_mode(&mut self, mode: LossMode) {
        self.loss_mode = mode;
        match mode {
            LossMode::Em => self.lambda2 = 0.0,
            LossMode::EmSg if self.lambda2 == 0.0 => self.lambda2 = DEFAULT_LAMBDA2,
            LossMode::EmSg => {}
        }
    }

    /// Sets `lambda2`; zero selects the object-only mode.
    pub fn set_lambda2(&mut self, lambda2: f64) {
        self.lambda2 = lambda2;
        self.loss_mode = if lambda2 == 0.0 {
            LossMode::Em
        } else {
            LossMode::EmSg
        };
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            (
                "learning_rate",
                self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            ),
            ("batch_size", self.batch_size > 0),
            ("num_heads", self.num_heads > 0),
            (
                "nms_threshold",
                self.nms_threshold > 0.0 && self.nms_threshold <= 1.0,
            ),
            ("score_floor", (0.0..1.0).contains(&self.score_floor)),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(Error::Config(format!("{name} is out of range")));
        }
        if (self.lambda2 == 0.0) != (self.loss_mode == LossMode::Em) {
            return Err(Error::Config(format!(
                "loss mode {} is inconsistent with lambda2 = {}",
                self.loss_mode, self.lambda2
            )));
        }
        self.loss_config().validate()?;
        self.oicr_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            entangle_norm: self.entangle_norm,
        }
    }

    /// Attribute refinement follows the entanglement term: the object-only
    /// baseline sees no attribute supervision at all.
    pub fn oicr_config(&self) -> OicrConfig {
        OicrConfig {
            num_heads: self.num_heads,
            tau: self.tau,
            weighted: self.weighted_pseudo_labels,
            attributes: self.lambda2 > 0.0,
            attribute_seed_source: self.attribute_seed_source,
        }
    }
}
