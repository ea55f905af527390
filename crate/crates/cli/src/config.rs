//! Pipeline configuration and per-dataset presets.

use std::path::{Path, PathBuf};

use occ4d_core::actionprep::{DEFAULT_ACTION_DIM, DEFAULT_COMPRESSION};
use occ4d_core::labelspace::DEFAULT_LABEL_COUNT;
use occ4d_core::occupancy::GridSpec;
use occ4d_core::renderer::GaussianScaleParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Bridge,
    Droid,
    Rt1,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Bridge => "bridge",
            Preset::Droid => "droid",
            Preset::Rt1 => "rt1",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bridge" => Some(Preset::Bridge),
            "droid" => Some(Preset::Droid),
            "rt1" => Some(Preset::Rt1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub voxel_size: f64,
}

impl GridConfig {
    pub fn spec(&self) -> CliResult<GridSpec> {
        Ok(GridSpec::new(self.origin, self.extent, self.voxel_size)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub length: usize,
    pub step: usize,
    /// Start-to-start distance between neighboring clips: `[train, eval]`.
    pub sample_interval: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionConfig {
    pub r: usize,
    pub d_action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub count: usize,
    /// Label space JSON whose palette replaces the generated one.
    #[serde(default)]
    pub space: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    #[default]
    Scale,
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClipSplit {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathConfig {
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: String,
    pub grid: GridConfig,
    pub render: GaussianScaleParams,
    pub sequence: SequenceConfig,
    pub action: ActionConfig,
    pub latent: LatentConfig,
    pub labels: LabelConfig,
    #[serde(default)]
    pub alignment: AlignMode,
    #[serde(default)]
    pub clips: Option<ClipSplit>,
    #[serde(default)]
    pub paths: PathConfig,
    #[serde(default)]
    pub strict_mode: bool,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        let (extent, (k, alpha), length, step, interval, latent) = match preset {
            Preset::Bridge => ([0.4, 0.4, 0.4], (0.00023, 3.7), 16, 1, [4, 16], (40, 60)),
            Preset::Droid => ([0.4, 0.4, 0.6], (0.00047, 3.2), 24, 3, [16, 72], (32, 40)),
            Preset::Rt1 => ([0.4, 0.4, 0.6], (0.00047, 3.2), 16, 2, [6, 16], (40, 60)),
        };
        Self {
            dataset: preset.name().to_string(),
            grid: GridConfig {
                origin: [-extent[0] / 2.0, -extent[1] / 2.0, 0.1],
                extent,
                voxel_size: 0.001,
            },
            render: GaussianScaleParams::new(k, alpha),
            sequence: SequenceConfig {
                length,
                step,
                sample_interval: interval,
            },
            action: ActionConfig {
                r: DEFAULT_COMPRESSION,
                d_action: DEFAULT_ACTION_DIM,
            },
            latent: LatentConfig {
                height: latent.0,
                width: latent.1,
                patch: 2,
            },
            labels: LabelConfig {
                count: DEFAULT_LABEL_COUNT,
                space: None,
            },
            alignment: AlignMode::Scale,
            clips: None,
            paths: PathConfig::default(),
            strict_mode: false,
            seed: 0,
        }
    }

    /// Reads a JSON config. Fields left out are taken from the preset named
    /// by `dataset` (or `fallback`, or `bridge`).
    pub fn load(path: &Path, fallback: Option<Preset>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let user: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let named = user.get("dataset").and_then(Value::as_str);
        let preset = match named {
            Some(n) => Preset::from_name(n).or(fallback).unwrap_or(Preset::Bridge),
            None => fallback.unwrap_or(Preset::Bridge),
        };
        let mut base = serde_json::to_value(Self::preset(preset)).expect("config serializes");
        merge(&mut base, user);
        let cfg: Self =
            serde_json::from_value(base).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.grid.spec()?;
        self.render.validate()?;
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.action.r == 0 || self.action.d_action == 0 {
            return bad("action.r and action.d_action must be positive");
        }
        if self.sequence.length == 0 || self.sequence.step == 0 || self.sequence.sample_interval.contains(&0) {
            return bad("sequence length, step and sample intervals must be positive");
        }
        if self.latent.patch == 0 || self.latent.height % self.latent.patch != 0 || self.latent.width % self.latent.patch != 0
        {
            return bad("latent size must be divisible by the patch size");
        }
        if self.labels.count == 0 || self.labels.count > u16::MAX as usize {
            return bad("labels.count out of range");
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values in `overlay` replace `base`.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
