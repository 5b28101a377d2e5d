//! Run configuration, read from JSON. Relative paths are taken relative
//! to the directory of the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crowdcal_core::pipeline::CalibrationConfig;
use crowdcal_core::study::DEFAULT_NOISE_LEVELS;
use crowdcal_core::synth::SceneSpec;
use crowdcal_core::CameraId;
use serde::{Deserialize, Serialize};

use crate::{formats, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    /// Camera whose frame the result is expressed in.
    pub reference: CameraId,
    pub intrinsics: PathBuf,
    /// One track file per camera.
    pub tracks: BTreeMap<CameraId, PathBuf>,
    pub embeddings: PathBuf,
    pub priors: PathBuf,
    /// Hand-annotated pixel pairs for the reprojection metric.
    pub annotated: Option<PathBuf>,
    /// Known poses of all cameras in any common frame.
    pub ground_truth: Option<PathBuf>,
    /// Poses to evaluate; defaults to the poses of `result`.
    pub estimate: Option<PathBuf>,
    /// A previous calibration, reused by `eval` and `track`.
    pub result: Option<PathBuf>,
    pub calibration: CalibrationConfig,
    /// Used by `synth` only.
    pub scene: SceneSpec,
    pub noise_levels: Vec<f64>,
    /// Correspondence budgets; `null` stands for "all".
    pub counts: Vec<Option<usize>>,
    pub noise_seed: u64,
    /// Reference-camera track ids to follow; empty means everybody.
    pub persons: Vec<u32>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            reference: 0,
            intrinsics: "intrinsics.json".into(),
            tracks: BTreeMap::new(),
            embeddings: "embeddings.csv".into(),
            priors: "priors.json".into(),
            annotated: None,
            ground_truth: None,
            estimate: None,
            result: None,
            calibration: CalibrationConfig::default(),
            scene: SceneSpec::default(),
            noise_levels: DEFAULT_NOISE_LEVELS.to_vec(),
            counts: vec![Some(10), Some(20), Some(50), Some(100), Some(200), None],
            noise_seed: 0,
            persons: Vec::new(),
        }
    }
}

impl AppConfig {
    /// Reads `path` and resolves every relative path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: AppConfig = formats::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.resolve(&base);
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.intrinsics);
        fix(&mut self.embeddings);
        fix(&mut self.priors);
        self.tracks.values_mut().for_each(fix);
        for p in [&mut self.annotated, &mut self.ground_truth, &mut self.estimate, &mut self.result]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    fn check(&self) -> Result<()> {
        if self.noise_levels.iter().any(|n| !n.is_finite() || *n < 0.0) {
            return Err(Error::Config("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }
}
