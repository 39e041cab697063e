//! Pipeline configuration, read from TOML. Every section and field is
//! optional; missing values take their defaults.
//!
//! ```toml
//! seed = 7
//!
//! [sor]
//! k_neighbors = 8
//! n_sigma = 1.0
//!
//! [subsample]
//! spacing = 0.02
//!
//! [render]
//! image_size = 512
//! coloring = "NV"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normals::NormalParams;
use crate::preprocess::SorParams;
use crate::projection::RenderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsampleParams {
    /// Minimum distance between kept points, metres. Zero disables.
    pub spacing: f64,
}

impl Default for SubsampleParams {
    fn default() -> Self {
        SubsampleParams { spacing: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub test_fraction: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    /// Side of the square feature map the images are reduced to.
    pub feature_size: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams { feature_size: 32 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub in_root: Option<PathBuf>,
    pub out_root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub sor: SorParams,
    pub subsample: SubsampleParams,
    pub normals: NormalParams,
    pub render: RenderConfig,
    pub split: SplitParams,
    pub baseline: BaselineParams,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sor.k_neighbors == 0 || self.sor.n_sigma.is_nan() || self.sor.n_sigma < 0.0 {
            return Err(Error::InvalidParameter(format!("bad SOR parameters {:?}", self.sor)));
        }
        if !(self.subsample.spacing >= 0.0 && self.subsample.spacing.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "subsample spacing {} must be finite and >= 0",
                self.subsample.spacing
            )));
        }
        if self.normals.neighbor_count < 3 {
            return Err(Error::InvalidParameter(format!(
                "normal neighbour count {} < 3",
                self.normals.neighbor_count
            )));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "test fraction {} outside (0, 1)",
                self.split.test_fraction
            )));
        }
        if self.baseline.feature_size == 0 {
            return Err(Error::InvalidParameter("baseline feature size is 0".into()));
        }
        self.render.validate()
    }
}
