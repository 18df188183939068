//! Toolkit configuration: TOML with one table per section, or dotted keys
//! such as `train.lambda_gp = 10`.
//!
//! A named profile supplies every value; a config file overrides any subset
//! of keys on top of it. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::sim::{PayloadDefaults, SimConfig};
use crate::trace::PreprocessConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale settings: 3,000-sample traces, 1,500-sample window, 400 epochs.
    #[default]
    Paper,
    /// Single-core settings: 600-sample traces, 256-sample window, 80 epochs.
    Desk,
}

impl Profile {
    pub const ALL: [Profile; 2] = [Profile::Paper, Profile::Desk];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown profile `{s}` (expected paper or desk)")))
    }
}

/// Dataset sizes used when a command is not told how many traces to make.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Benign enrollment traces (train plus validation).
    pub benign: usize,
    pub per_scenario: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub target_fprs: Vec<f64>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            target_fprs: vec![0.01, 0.05],
        }
    }
}

/// Default output locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub model: String,
    pub eval_dir: String,
    pub report_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            model: "model.pscm".into(),
            eval_dir: "eval".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    pub sim: SimConfig,
    pub payload: PayloadDefaults,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub calibrate: CalibrateConfig,
    pub data: DataConfig,
    pub paths: PathsConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl ToolkitConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                sim: SimConfig::default(),
                payload: PayloadDefaults::default(),
                preprocess: PreprocessConfig::default(),
                train: TrainConfig::default(),
                calibrate: CalibrateConfig::default(),
                data: DataConfig {
                    benign: 2000,
                    per_scenario: 2000,
                },
                paths: PathsConfig::default(),
            },
            Profile::Desk => Self {
                sim: SimConfig {
                    raw_len: 600,
                    lead_in: 100,
                    samples_per_op: 2,
                    ..SimConfig::default()
                },
                payload: PayloadDefaults::default(),
                // Last 108 round-state samples, the output bytes and the tail.
                preprocess: PreprocessConfig {
                    crop_start: 344,
                    crop_end: 600,
                    val_fraction: 0.2,
                },
                train: TrainConfig {
                    epochs: 80,
                    batch: 64,
                    ..TrainConfig::default()
                },
                calibrate: CalibrateConfig::default(),
                data: DataConfig {
                    benign: 1000,
                    per_scenario: 500,
                },
                paths: PathsConfig::default(),
            },
        }
    }

    /// `profile` defaults with the keys of `text` laid over them.
    pub fn parse(text: &str, profile: Profile) -> Result<Self> {
        let overrides: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Self::profile(profile))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overrides, "")?;
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, profile: Profile) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, profile)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// One seed for both the simulator and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.preprocess.validate(self.sim.raw_len)?;
        for p in crate::trace::Scenario::ALL {
            self.payload.payload(p).validate(&self.sim)?;
        }
        self.train.validate()?;
        if self.calibrate.target_fprs.is_empty() {
            return Err(Error::Config("calibrate.target_fprs is empty".into()));
        }
        for &f in &self.calibrate.target_fprs {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("target FPR {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Recursive overlay; a key absent from `base` is unknown.
fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in over {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(Error::Config(format!("unknown key `{path}`"))),
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &path)?,
            (Some(toml::Value::Table(_)), _) => {
                return Err(Error::Config(format!("`{path}` must be a table")))
            }
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}
