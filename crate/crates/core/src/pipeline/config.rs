use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::camera::CameraIntrinsics;
use crate::cmaes::OptConfig;
use crate::error::{Error, Result};
use crate::nicp::NicpConfig;
use crate::pose::RigidPose;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub canonical_mesh: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub masks_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Accepted frames to produce.
    pub count: usize,
    /// Pose the sampling ranges are centered on.
    pub base_pose: RigidPose,
    pub translation_range_mm: f64,
    pub rotation_range_deg: f64,
    /// Frames with fewer non-empty contour channels are discarded.
    pub min_contour_types: usize,
    /// Rejection cap; defaults to twenty attempts per requested frame.
    pub max_attempts: Option<usize>,
    pub val_fraction: f64,
    pub augment: bool,
    /// Render `eval(α)` with α uniform in the coefficient box instead of the
    /// canonical mesh.
    pub shape_variation: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            count: 100,
            base_pose: RigidPose::new([0.0; 3], [0.0, 0.0, 400.0]),
            translation_range_mm: 50.0,
            rotation_range_deg: 20.0,
            min_contour_types: 2,
            max_attempts: None,
            val_fraction: 0.1,
            augment: true,
            shape_variation: false,
        }
    }
}

impl SamplingConfig {
    pub fn attempt_cap(&self) -> usize {
        self.max_attempts.unwrap_or(20 * self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Half-width of the translation box around the initial pose.
    pub translation_bound_mm: f64,
    /// Half-width of the Euler-angle box around the initial pose.
    pub rotation_bound_deg: f64,
    /// Shape coefficients live in `[-shape_bound, shape_bound]`.
    pub shape_bound: f64,
    /// Freeze the shape at zero and optimize the pose alone.
    pub rigid_only: bool,
    /// Outer restarts per tracked frame.
    pub max_restarts: usize,
    /// A tracked frame stops restarting once the translation moves less than this.
    pub restart_tol_mm: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            translation_bound_mm: 20.0,
            rotation_bound_deg: 10.0,
            shape_bound: 1.0,
            rigid_only: false,
            max_restarts: 10,
            restart_tol_mm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-6 }
    }
}

/// Everything a run needs, read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Principal components kept by the shape model.
    pub components: usize,
    pub paths: PathsConfig,
    pub camera: CameraIntrinsics,
    pub sampling: SamplingConfig,
    pub refine: RefineConfig,
    pub icp: IcpConfig,
    pub nicp: NicpConfig,
    pub optimizer: OptConfig,
    pub augment: AugmentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            components: 10,
            paths: PathsConfig::default(),
            camera: CameraIntrinsics::centered(500.0, 640, 480),
            sampling: SamplingConfig::default(),
            refine: RefineConfig::default(),
            icp: IcpConfig::default(),
            nicp: NicpConfig::default(),
            optimizer: OptConfig {
                popsize: Some(15),
                ..OptConfig::default()
            },
            augment: AugmentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.camera.validate()?;
        self.nicp.validate()?;
        self.augment.validate()?;
        if self.components == 0 {
            return bad("components must be at least 1".into());
        }
        let s = &self.sampling;
        if !(s.translation_range_mm >= 0.0) || !(s.rotation_range_deg >= 0.0) {
            return bad("sampling ranges must be non-negative".into());
        }
        if s.min_contour_types > 4 {
            return bad(format!("min_contour_types = {} exceeds the four channels", s.min_contour_types));
        }
        if !(0.0..=1.0).contains(&s.val_fraction) {
            return bad(format!("val_fraction = {} is outside [0, 1]", s.val_fraction));
        }
        let r = &self.refine;
        if !(r.translation_bound_mm > 0.0) || !(r.rotation_bound_deg > 0.0) || !(r.shape_bound > 0.0) {
            return bad("refinement bounds must be positive".into());
        }
        if r.max_restarts == 0 || !(r.restart_tol_mm >= 0.0) {
            return bad("max_restarts must be at least 1 and restart_tol_mm non-negative".into());
        }
        if self.optimizer.maxiter == 0 || !(self.optimizer.sigma0 > 0.0) {
            return bad("optimizer needs maxiter >= 1 and sigma0 > 0".into());
        }
        if matches!(self.optimizer.popsize, Some(p) if p < 2) {
            return bad("optimizer popsize must be at least 2".into());
        }
        Ok(())
    }

    /// Resolves a required path and checks that it exists.
    pub fn require(&self, name: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
        match path {
            None => Err(Error::InvalidConfig(format!("paths.{name} is not set"))),
            Some(p) if !p.exists() => Err(Error::InvalidConfig(format!(
                "paths.{name} = {} does not exist",
                p.display()
            ))),
            Some(p) => Ok(p.clone()),
        }
    }

    /// Output directory, created if missing.
    pub fn output_dir(&self) -> Result<PathBuf> {
        let dir = self
            .paths
            .output_dir
            .clone()
            .ok_or_else(|| Error::InvalidConfig("paths.output_dir is not set".into()))?;
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[refine]\nrigid_only = true\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(cfg.refine.rigid_only);
        assert_eq!(cfg.refine.translation_bound_mm, 20.0);
        assert_eq!(cfg.sampling.translation_range_mm, 50.0);
        assert_eq!(cfg.sampling.rotation_range_deg, 20.0);
        assert_eq!(cfg.sampling.min_contour_types, 2);
        assert_eq!(cfg.components, 10);
        assert_eq!(cfg.optimizer.popsize, Some(15));
    }

    #[test]
    fn malformed_ranges_and_missing_paths_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.sampling.val_fraction = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.refine.rotation_bound_deg = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::default();
        assert!(cfg.require("model", &Some("/definitely/not/here".into())).is_err());
        assert!(cfg.require("model", &None).is_err());
    }
}
