//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use aerialign_core::dataset::CropJobConfig;
use aerialign_core::imaging::PreprocessConfig;
use aerialign_core::offsetgrid::DEFAULT_CELL_M;
use aerialign_core::registration::RegistrationConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Which area the offset grid covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExtentPolicy {
    /// The full base-map extent.
    #[default]
    Basemap,
    /// The bounding box of the frame manifest, snapped to whole cells.
    Frames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub cell_m: f64,
    pub extent: ExtentPolicy,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            cell_m: DEFAULT_CELL_M,
            extent: ExtentPolicy::Basemap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub bind: String,
    pub labels: PathBuf,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ReviewSection {
    fn default() -> Self {
        Self {
            bind: aerialign_review::DEFAULT_BIND.to_string(),
            labels: PathBuf::from("labels.jsonl"),
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub basemap: Option<PathBuf>,
    pub aerial: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub estimates: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    /// Base directory for relative paths in this file's other sections.
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub registration: RegistrationConfig,
    pub grid: GridSection,
    pub crops: CropJobConfig,
    pub review: ReviewSection,
    pub paths: PathsSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.preprocess.validate().context("[preprocess]")?;
        cfg.crops.validate().context("[crops]")?;
        Ok(cfg)
    }

    /// Config from `path` if given, defaults otherwise.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }

    /// Joins a relative path onto `paths.output_root`.
    pub fn rooted(&self, p: &Path) -> PathBuf {
        match &self.paths.output_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}
