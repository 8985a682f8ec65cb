use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::refine::{refine, FrameRecord, Refinement};
use crate::cmaes::OptConfig;
use crate::error::Result;
use crate::objective::RegistrationProblem;
use crate::pose::RigidPose;
use crate::render::LabelImageSet;
use crate::shape_model::ShapeModel;

/// Restarts refinement from its own result until the translation moves less
/// than `restart_tol_mm` or `max_restarts` runs are spent.
pub fn refine_frame(
    cfg: &RunConfig,
    model: &ShapeModel,
    masks: &LabelImageSet,
    init: &RigidPose,
    init_shape: &[f64],
) -> Result<Refinement> {
    let problem = RegistrationProblem::new(masks, cfg.camera)?;
    let (mut pose, mut shape) = (*init, init_shape.to_vec());
    let mut last: Option<Refinement> = None;
    for r in 0..cfg.refine.max_restarts {
        let opt = OptConfig {
            seed: cfg.seed.wrapping_add(r as u64),
            ..cfg.optimizer.clone()
        };
        let mut res = refine(&problem, model, &pose, &shape, &cfg.refine, &opt)?;
        let step = res.pose.translation_distance(&pose);
        if let Some(prev) = &last {
            res.cost_initial = prev.cost_initial;
            res.evaluations += prev.evaluations;
            res.generations += prev.generations;
        }
        pose = res.pose;
        shape = res.shape.clone();
        last = Some(res);
        log::debug!("restart {r}: translation step {step:.3} mm");
        if step < cfg.refine.restart_tol_mm {
            break;
        }
    }
    Ok(last.expect("max_restarts >= 1"))
}

/// Registers frames in order, each starting from the previous result. A
/// failed frame is recorded with its error and the chain continues from the
/// last good estimate.
pub fn track_sequence(
    cfg: &RunConfig,
    model: &ShapeModel,
    init: &RigidPose,
    frames: &[(String, LabelImageSet)],
) -> Vec<FrameRecord> {
    let mut pose = *init;
    let mut shape = vec![0.0; model.components()];
    let mut out = Vec::with_capacity(frames.len());
    for (id, masks) in frames {
        match refine_frame(cfg, model, masks, &pose, &shape) {
            Ok(r) => {
                log::info!("{id}: cost {:.3} px", r.cost_final);
                pose = r.pose;
                shape = r.shape.clone();
                let mut rec = FrameRecord::new(id.clone(), r.pose, r.shape);
                rec.metrics.cost = Some(r.cost_final);
                out.push(rec);
            }
            Err(e) => {
                log::warn!("{id}: {e}");
                let mut rec = FrameRecord::new(id.clone(), pose, shape.clone());
                rec.error = Some(e.to_string());
                out.push(rec);
            }
        }
    }
    out
}

/// Frame directories directly inside `dir`, sorted by name.
pub fn list_frame_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Loads every frame directory under `frames_dir` and tracks the sequence.
pub fn track_sequence_cmd(
    cfg: &RunConfig,
    model: &ShapeModel,
    init: &RigidPose,
    frames_dir: &Path,
) -> Result<Vec<FrameRecord>> {
    let mut frames = Vec::new();
    for d in list_frame_dirs(frames_dir)? {
        let id = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        frames.push((id, LabelImageSet::load(&d)?));
    }
    Ok(track_sequence(cfg, model, init, &frames))
}
