use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::refine::FrameRecord;
use super::synthetic::sample_pose_around;
use crate::augment::{augment_contour, augment_depth, augment_mask, frame_rng};
use crate::camera::CameraIntrinsics;
use crate::error::Result;
use crate::labels::Channel;
use crate::mesh::{load_mesh, TriMesh};
use crate::pose::RigidPose;
use crate::render::{render_full, LabelImageSet};
use crate::shape_model::ShapeModel;

/// Attempts rendered in parallel before the sequential accept pass.
const CHUNK: usize = 32;
/// Separates augmentation streams from pose-sampling streams.
const AUGMENT_SALT: u64 = 0x5eed_a119_e000_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub base_pose: RigidPose,
    pub translation_range_mm: f64,
    pub rotation_range_deg: f64,
    pub requested: usize,
    pub attempts: usize,
    pub rejected: usize,
    pub augmented: bool,
    pub frames: Vec<FrameRecord>,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Pose and shape drawn for attempt `i`; depends on `(seed, i)` only.
fn sample_attempt(cfg: &RunConfig, components: usize, i: usize) -> (RigidPose, Vec<f64>) {
    let mut rng = frame_rng(cfg.seed, i as u64);
    let s = &cfg.sampling;
    let pose = sample_pose_around(&s.base_pose, s.translation_range_mm, s.rotation_range_deg, &mut rng);
    let shape = if s.shape_variation {
        (0..components).map(|_| rng.random_range(-1.0..=1.0)).collect()
    } else {
        Vec::new()
    };
    (pose, shape)
}

/// Augments every channel with one per-frame stream, in channel order, then
/// mask, then depth.
pub fn augment_set(set: &LabelImageSet, cfg: &RunConfig, frame: u64) -> LabelImageSet {
    let mut rng = frame_rng(cfg.seed ^ AUGMENT_SALT, frame);
    let a = &cfg.augment;
    let channels = Channel::ALL.map(|c| augment_contour(set.channel(c), &a.contour, &mut rng));
    let mask = augment_mask(&set.full_mask, &a.mask, &mut rng);
    let depth = augment_depth(&set.depth, &a.depth, &mut rng);
    LabelImageSet::new(channels, mask, depth).expect("augmentation keeps dimensions")
}

/// Samples poses around the base pose, renders `mesh` (or the model at a
/// random shape), rejects frames with too few contour channels, augments the
/// survivors and writes them under `out/frames/<id>/` with `out/manifest.json`.
pub fn generate_dataset(
    cfg: &RunConfig,
    mesh: &TriMesh,
    model: Option<&ShapeModel>,
    out: &Path,
) -> Result<DatasetManifest> {
    let s = &cfg.sampling;
    let components = model.map_or(0, |m| m.components());
    let cap = s.attempt_cap();
    let mut frames: Vec<FrameRecord> = Vec::with_capacity(s.count);
    let mut attempts = 0;
    while frames.len() < s.count && attempts < cap {
        let batch: Vec<usize> = (attempts..(attempts + CHUNK).min(cap)).collect();
        let rendered: Vec<(RigidPose, Vec<f64>, LabelImageSet)> = batch
            .par_iter()
            .map(|&i| {
                let (pose, shape) = sample_attempt(cfg, components, i);
                let set = match model {
                    Some(m) if s.shape_variation => render_full(&m.eval(&shape), &pose, &cfg.camera),
                    _ => render_full(mesh, &pose, &cfg.camera),
                };
                (pose, shape, set)
            })
            .collect();
        let mut accepted = Vec::new();
        for (pose, shape, set) in rendered {
            attempts += 1;
            if set.non_empty_channels() >= s.min_contour_types {
                accepted.push((frames.len() + accepted.len(), pose, shape, set));
                if frames.len() + accepted.len() == s.count {
                    break;
                }
            }
        }
        let written: Vec<Result<FrameRecord>> = accepted
            .into_par_iter()
            .map(|(k, pose, shape, set)| {
                let id = format!("{k:06}");
                let rel = PathBuf::from("frames").join(&id);
                let set = if s.augment { augment_set(&set, cfg, k as u64) } else { set };
                let files = set.save(out.join(&rel))?;
                let mut rec = FrameRecord::new(id, pose, shape);
                rec.images = files.into_iter().map(|(k, f)| (k, rel.join(f))).collect();
                Ok(rec)
            })
            .collect();
        for r in written {
            frames.push(r?);
        }
    }
    if frames.len() < s.count {
        log::warn!(
            "only {} of {} frames accepted after {attempts} attempts; writing a partial dataset",
            frames.len(),
            s.count
        );
    }
    let (train, val) = split(&frames, s.val_fraction, cfg.seed);
    let manifest = DatasetManifest {
        seed: cfg.seed,
        camera: cfg.camera,
        base_pose: s.base_pose,
        translation_range_mm: s.translation_range_mm,
        rotation_range_deg: s.rotation_range_deg,
        requested: s.count,
        attempts,
        rejected: attempts - frames.len(),
        augmented: s.augment,
        frames,
        train,
        val,
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Seeded shuffle; the first `round(n·val_fraction)` ids go to validation.
fn split(frames: &[FrameRecord], val_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut ids: Vec<String> = frames.iter().map(|f| f.id.clone()).collect();
    ids.shuffle(&mut frame_rng(seed, u64::MAX));
    let n_val = (ids.len() as f64 * val_fraction).round() as usize;
    let mut val = ids[..n_val].to_vec();
    let mut train = ids[n_val..].to_vec();
    val.sort();
    train.sort();
    (train, val)
}

/// Loads the canonical mesh (and the model when shape variation is on) and
/// writes the dataset to the configured output directory.
pub fn generate_dataset_cmd(cfg: &RunConfig) -> Result<DatasetManifest> {
    let mesh = load_mesh(cfg.require("canonical_mesh", &cfg.paths.canonical_mesh)?)?;
    let model = if cfg.sampling.shape_variation {
        Some(ShapeModel::load(cfg.require("model", &cfg.paths.model)?)?)
    } else {
        None
    };
    generate_dataset(cfg, &mesh, model.as_ref(), &cfg.output_dir()?)
}
