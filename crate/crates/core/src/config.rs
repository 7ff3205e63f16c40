//! Pipeline configuration: one JSON document, validated on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{ScheduleConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::grid::DatasetSpec;
use crate::primitives::Axis;
use crate::search::SearchConfig;
use crate::verification::VerificationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchModeSetting {
    #[default]
    Auto,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    #[default]
    Projection,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSettings {
    pub kind: DenoiserKind,
    /// Capture radius of the template-projection denoiser, in frame units.
    pub capture_radius: f64,
    /// Metadata JSON of a trained tiny denoiser; the weight blob sits next to it.
    pub model: Option<String>,
}

impl Default for DenoiserSettings {
    fn default() -> Self {
        Self { kind: DenoiserKind::Projection, capture_radius: crate::diffusion::DEFAULT_CAPTURE_RADIUS, model: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub mode: SearchModeSetting,
    pub pca: bool,
    pub resolution: usize,
    pub splits: [Option<Vec<f64>>; 3],
    pub max_global_trials: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let d = SearchConfig::default();
        Self {
            mode: SearchModeSetting::Auto,
            pca: true,
            resolution: d.resolution,
            splits: d.splits,
            max_global_trials: d.max_global_trials,
        }
    }
}

impl SearchSettings {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            resolution: self.resolution,
            splits: self.splits.clone(),
            max_global_trials: self.max_global_trials,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub library_seed: u64,
    pub schedule: ScheduleConfig,
    pub verification: VerificationParams,
    pub search: SearchSettings,
    pub denoiser: DenoiserSettings,
    pub dataset: DatasetSpec,
    pub training: TrainConfig,
    pub output_dir: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            deterministic: true,
            library_seed: 42,
            schedule: ScheduleConfig::default(),
            verification: VerificationParams::default(),
            search: SearchSettings::default(),
            denoiser: DenoiserSettings::default(),
            dataset: DatasetSpec::default(),
            training: TrainConfig::default(),
            output_dir: "out".into(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.verification.validate()?;
        self.dataset.validate()?;
        if self.search.resolution < 4 {
            return Err(Error::param("search resolution must be >= 4"));
        }
        if self.search.max_global_trials == 0 {
            return Err(Error::param("max_global_trials must be positive"));
        }
        for r in self.search.splits.iter().flatten() {
            crate::topology::validate_ratios(r)?;
        }
        if !(self.denoiser.capture_radius > 0.0) {
            return Err(Error::param("capture radius must be positive"));
        }
        if self.denoiser.kind == DenoiserKind::Tiny && self.denoiser.model.is_none() {
            return Err(Error::param("the tiny denoiser needs a model path"));
        }
        Ok(())
    }

    /// Sets the split fractions for one axis.
    pub fn set_split(&mut self, axis: Axis, ratios: Vec<f64>) {
        self.search.splits[axis.index()] = Some(ratios);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_vec(&serde_json::to_value(self)?)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }
}
