use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RefineConfig, RunConfig};
use super::overlay::{render_overlay, save_overlay};
use crate::cmaes::{minimize, OptConfig, Termination};
use crate::error::Result;
use crate::objective::RegistrationProblem;
use crate::pose::RigidPose;
use crate::render::LabelImageSet;
use crate::shape_model::ShapeModel;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub cost: Option<f64>,
    pub tre_mm: Option<f64>,
}

/// One frame of a dataset, registration or track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub pose: RigidPose,
    pub shape: Vec<f64>,
    /// Channel name → image path.
    #[serde(default)]
    pub images: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub metrics: FrameMetrics,
    /// Set when the frame failed; the pose is then the carried-over input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameRecord {
    pub fn new(id: impl Into<String>, pose: RigidPose, shape: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            pose,
            shape,
            images: BTreeMap::new(),
            metrics: FrameMetrics::default(),
            error: None,
        }
    }
}

pub fn save_records(path: impl AsRef<Path>, records: &[FrameRecord]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

/// Reads a JSON array of records, or a single record.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    let text = std::fs::read_to_string(path)?;
    match serde_json::from_str::<Vec<FrameRecord>>(&text) {
        Ok(v) => Ok(v),
        Err(_) => Ok(vec![serde_json::from_str::<FrameRecord>(&text)?]),
    }
}

/// Optimized pose and shape with bookkeeping from the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub pose: RigidPose,
    pub shape: Vec<f64>,
    pub cost_initial: f64,
    pub cost_final: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub termination: Termination,
}

/// Packing of `(translation, Euler angles, shape)` into the search vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub components: usize,
    pub rigid_only: bool,
}

impl ParamLayout {
    pub fn dim(&self) -> usize {
        6 + if self.rigid_only { 0 } else { self.components }
    }

    pub fn pack(&self, pose: &RigidPose, shape: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = pose.translation_mm.iter().chain(&pose.rotation_deg).copied().collect();
        if !self.rigid_only {
            x.extend((0..self.components).map(|k| shape.get(k).copied().unwrap_or(0.0)));
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (RigidPose, Vec<f64>) {
        let pose = RigidPose::new([x[3], x[4], x[5]], [x[0], x[1], x[2]]);
        let shape = if self.rigid_only {
            vec![0.0; self.components]
        } else {
            x[6..].to_vec()
        };
        (pose, shape)
    }

    /// Box of half-widths from `cfg` centered on the initial pose.
    pub fn bounds(&self, init: &RigidPose, cfg: &RefineConfig) -> Vec<[f64; 2]> {
        let mut b: Vec<[f64; 2]> = init
            .translation_mm
            .iter()
            .map(|&t| [t - cfg.translation_bound_mm, t + cfg.translation_bound_mm])
            .chain(
                init.rotation_deg
                    .iter()
                    .map(|&r| [r - cfg.rotation_bound_deg, r + cfg.rotation_bound_deg]),
            )
            .collect();
        if !self.rigid_only {
            b.extend(std::iter::repeat_n([-cfg.shape_bound, cfg.shape_bound], self.components));
        }
        b
    }
}

/// Bounded CMA-ES over pose and shape starting from `(init, init_shape)`.
/// The returned cost never exceeds the initial cost.
pub fn refine(
    problem: &RegistrationProblem,
    model: &ShapeModel,
    init: &RigidPose,
    init_shape: &[f64],
    cfg: &RefineConfig,
    opt: &OptConfig,
) -> Result<Refinement> {
    let layout = ParamLayout {
        components: model.components(),
        rigid_only: cfg.rigid_only,
    };
    let bounds = layout.bounds(init, cfg);
    let x0 = layout.pack(init, init_shape);
    let opt = OptConfig {
        bounds,
        ..opt.clone()
    };
    let res = minimize(
        |x| {
            let (pose, shape) = layout.unpack(x);
            problem.cost(model, &pose, &shape)
        },
        &x0,
        &opt,
    )?;
    let (pose, shape) = layout.unpack(&res.x_best);
    let cost_initial = {
        let (p, s) = layout.unpack(&crate::cmaes::repair_to_bounds(&x0, &opt.bounds));
        problem.cost(model, &p, &s)
    };
    Ok(Refinement {
        pose,
        shape,
        cost_initial,
        cost_final: res.f_best,
        evaluations: res.evaluations,
        generations: res.generations,
        termination: res.termination,
    })
}

/// Registers one frame and, when `out` is given, writes `<id>.json` and
/// `<id>_overlay.png` there.
pub fn refine_cmd(
    cfg: &RunConfig,
    model: &ShapeModel,
    init: &RigidPose,
    masks: &LabelImageSet,
    id: &str,
    out: Option<&Path>,
) -> Result<(FrameRecord, Refinement)> {
    let problem = RegistrationProblem::new(masks, cfg.camera)?;
    let opt = OptConfig {
        seed: cfg.seed,
        ..cfg.optimizer.clone()
    };
    let r = refine(&problem, model, init, &vec![0.0; model.components()], &cfg.refine, &opt)?;
    log::info!(
        "{id}: cost {:.3} -> {:.3} px in {} generations ({:?})",
        r.cost_initial,
        r.cost_final,
        r.generations,
        r.termination
    );
    let mut rec = FrameRecord::new(id, r.pose, r.shape.clone());
    rec.metrics.cost = Some(r.cost_final);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let overlay_path = dir.join(format!("{id}_overlay.png"));
        let img = render_overlay(&model.eval(&r.shape), &r.pose, &cfg.camera, None)?;
        save_overlay(&img, &overlay_path)?;
        rec.images.insert("overlay".into(), overlay_path);
        save_records(dir.join(format!("{id}.json")), std::slice::from_ref(&rec))?;
    }
    Ok((rec, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trip_and_bounds() {
        let l = ParamLayout {
            components: 3,
            rigid_only: false,
        };
        let p = RigidPose::new([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]);
        let x = l.pack(&p, &[0.1, 0.2, 0.3]);
        assert_eq!(x, vec![4.0, 5.0, 6.0, 1.0, 2.0, 3.0, 0.1, 0.2, 0.3]);
        assert_eq!(l.unpack(&x), (p, vec![0.1, 0.2, 0.3]));
        let b = l.bounds(&p, &RefineConfig::default());
        assert_eq!(b[0], [-16.0, 24.0]);
        assert_eq!(b[3], [-9.0, 11.0]);
        assert_eq!(b[8], [-1.0, 1.0]);
        let rigid = ParamLayout {
            components: 3,
            rigid_only: true,
        };
        assert_eq!(rigid.dim(), 6);
        assert_eq!(rigid.unpack(&rigid.pack(&p, &[0.5; 3])).1, vec![0.0; 3]);
    }
}
