//! The single JSON document that drives every command. Unknown keys are
//! rejected at any depth and omitted sections take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SamplingPattern, SceneKind};
use crate::network::NetworkConfig;
use crate::pose::RansacConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("{0}: {1}")]
    Parse(String, String),
    #[error("invalid {section}: {message}")]
    Invalid { section: &'static str, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scene: SceneKind,
    pub frames: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub sampling: SamplingPattern,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneKind::Planes,
            frames: 200,
            seed: 0,
            width: 160,
            height: 128,
            sampling: SamplingPattern::default(),
        }
    }
}

/// Half-open frame index range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

impl std::str::FromStr for FrameRange {
    type Err = String;

    /// `START..END`
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got '{s}'"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
        let r = FrameRange {
            start: parse(a)?,
            end: parse(b)?,
        };
        if r.start >= r.end {
            return Err(format!("empty frame range {s}"));
        }
        Ok(r)
    }
}

/// Where training takes its relative poses from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    /// `poses.txt` written by the pose command
    #[default]
    Estimated,
    /// the generator's ground-truth trajectory
    GroundTruth,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// frames whose triplets are trained on; all when absent
    pub train_frames: Option<FrameRange>,
    /// frames evaluated; all when absent
    pub eval_frames: Option<FrameRange>,
    pub poses: PoseSource,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub ransac: RansacConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(origin.to_string(), e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section, message: String| ConfigError::Invalid { section, message };
        let s = &self.synth;
        if s.frames == 0 || s.width < 8 || s.height < 8 {
            return Err(invalid("synth", format!("need frames ≥ 1 and at least 8x8 pixels: {s:?}")));
        }
        self.network.validate().map_err(|e| invalid("network", e.to_string()))?;
        self.train.validate().map_err(|e| invalid("train", e.to_string()))?;
        self.ransac.validate().map_err(|e| invalid("ransac", e.to_string()))?;
        for r in [self.data.train_frames, self.data.eval_frames].into_iter().flatten() {
            if r.start >= r.end {
                return Err(invalid("data", format!("empty frame range {r:?}")));
            }
        }
        Ok(())
    }
}
