//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::error::{Error, Result};
use crate::graph::FilterMode;
use crate::optimize::SolverOptions;
use crate::synth::{Perturbation, SceneConfig};

pub(crate) const RATIO_UNSUPPORTED: &str =
    "ratio filtering needs neighbor distances, which a matches file does not carry; use similarity filtering";

/// Match filtering applied to the matches file before the graph is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub threshold: f64,
}

/// Parameters of the `synth` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Scene parameters; the scene seed is taken from the top-level seed.
    pub scene: SceneConfig,
    pub perturbation: Perturbation,
    /// Grid spacing of the oracle flow fields, in pixels.
    pub flow_spacing: f64,
    /// Standard deviation of the noise added to every oracle flow node.
    pub flow_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            perturbation: Perturbation::Uniform(3.0),
            flow_spacing: 8.0,
            flow_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub keypoints: Option<PathBuf>,
    pub matches: Option<PathBuf>,
    pub flows: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub solver: SolverOptions,
    pub align: AlignConfig,
    pub filter: Option<FilterConfig>,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub seed: u64,
    /// Pixel thresholds of the accuracy curve.
    pub thresholds: Vec<f64>,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keypoints: None,
            matches: None,
            flows: None,
            images: None,
            out: None,
            solver: SolverOptions::default(),
            align: AlignConfig::default(),
            filter: None,
            threads: 0,
            seed: 0,
            thresholds: (1..=10).map(f64::from).collect(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.align.validate()?;
        if let Some(f) = &self.filter {
            if f.mode == FilterMode::Ratio {
                return Err(Error::InvalidInput(RATIO_UNSUPPORTED.into()));
            }
            if !(f.threshold > 0.0 && f.threshold <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "filter threshold {} outside (0, 1]",
                    f.threshold
                )));
            }
        }
        if self.thresholds.is_empty()
            || self.thresholds.iter().any(|t| !(*t >= 0.0 && t.is_finite()))
            || self.thresholds.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::InvalidInput(
                "thresholds must be non-empty, finite, non-negative and strictly ascending".into(),
            ));
        }
        let s = &self.synth;
        if s.scene.num_views < 2 || s.scene.num_keypoints == 0 || s.scene.width == 0 || s.scene.height == 0 {
            return Err(Error::InvalidInput(
                "synthetic scenes need at least 2 views, 1 keypoint and positive image size".into(),
            ));
        }
        if !(s.flow_spacing > 0.0) || !(s.flow_noise >= 0.0) {
            return Err(Error::InvalidInput(
                "flow spacing must be positive and flow noise non-negative".into(),
            ));
        }
        let spread = match s.perturbation {
            Perturbation::Uniform(r) | Perturbation::Gaussian(r) => r,
        };
        if !(spread >= 0.0 && spread <= self.solver.bound) {
            return Err(Error::InvalidInput(format!(
                "perturbation {spread} must lie in [0, K = {}]",
                self.solver.bound
            )));
        }
        Ok(())
    }
}
