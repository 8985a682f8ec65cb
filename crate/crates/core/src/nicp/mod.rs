//! Non-rigid ICP.
//!
//! A source mesh is deformed toward a target by per-vertex affine transforms.
//! Each stage of a decreasing stiffness schedule alternates between
//! normal-gated closest-point correspondences and a sparse stiffness-regularized
//! least-squares solve, so early stages move the mesh almost rigidly and later
//! stages fit local detail. Face connectivity is never modified.

mod correspondence;
mod system;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub use correspondence::{find_correspondences, CorrespondenceMode, Correspondences, TargetIndex};
pub use system::{build_system, NicpState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NicpConfig {
    /// Stiffness weights, one stage each, strictly decreasing.
    pub stiffness_schedule: Vec<f64>,
    /// Correspondences with `n · n* <= normal_threshold` get zero weight.
    pub normal_threshold: f64,
    /// Weight of an accepted correspondence.
    pub match_weight: f64,
    /// Tikhonov damping of each solve.
    pub tikhonov: f64,
    pub inner_iters_per_stage: usize,
    /// Stage ends early when the mean vertex motion falls below this
    /// fraction of the target's bounding-box diagonal.
    pub inner_tol_fraction: f64,
    /// Diagonal of the affine weight matrix (rows x, y, z, translation).
    pub affine_weights: [f64; 4],
    pub correspondence: CorrespondenceMode,
}

impl Default for NicpConfig {
    fn default() -> Self {
        Self {
            stiffness_schedule: vec![20.0, 10.0, 5.0, 2.0, 1.0, 0.5, 0.2],
            normal_threshold: 0.7,
            match_weight: 1.0,
            tikhonov: 1e-6,
            inner_iters_per_stage: 10,
            inner_tol_fraction: 1e-4,
            affine_weights: [1.0; 4],
            correspondence: CorrespondenceMode::Surface,
        }
    }
}

impl NicpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("nicp: {m}")));
        if self.stiffness_schedule.is_empty() {
            return bad("empty stiffness schedule");
        }
        if self.stiffness_schedule.iter().any(|&a| !(a > 0.0)) {
            return bad("stiffness values must be positive");
        }
        if self.stiffness_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad("stiffness schedule must be strictly decreasing");
        }
        if !(0.0..=1.0).contains(&self.normal_threshold) {
            return bad("normal threshold must lie in [0, 1]");
        }
        if !(self.match_weight > 0.0) {
            return bad("match weight must be positive");
        }
        if !(self.tikhonov >= 0.0) {
            return bad("tikhonov weight must be non-negative");
        }
        if self.inner_iters_per_stage == 0 {
            return bad("inner_iters_per_stage must be at least 1");
        }
        if self.affine_weights.iter().any(|&w| !(w >= 0.0)) {
            return bad("affine weights must be non-negative");
        }
        Ok(())
    }
}

/// Residual trace of one registration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NicpReport {
    /// Per stage, the weighted data residual evaluated right after each
    /// solve against that iteration's correspondences.
    pub stage_residuals: Vec<Vec<f64>>,
    /// Per stage, the data residual before the first solve.
    pub stage_initial: Vec<f64>,
    pub stages: usize,
    pub solves: usize,
}

/// Deforms `source` onto `target`. The source must already be rigidly aligned.
pub fn nicp_register(source: &TriMesh, target: &TriMesh, cfg: &NicpConfig) -> Result<TriMesh> {
    nicp_register_with_report(source, target, cfg).map(|(m, _)| m)
}

pub fn nicp_register_with_report(
    source: &TriMesh,
    target: &TriMesh,
    cfg: &NicpConfig,
) -> Result<(TriMesh, NicpReport)> {
    cfg.validate()?;
    let index = TargetIndex::new(target, cfg.correspondence)?;
    let mut state = build_system(source)?;
    state.set_affine_weights(cfg.affine_weights);
    let tol = cfg.inner_tol_fraction * target.bbox_diagonal();
    let mut report = NicpReport::default();

    for (stage, &alpha) in cfg.stiffness_schedule.iter().enumerate() {
        let mut residuals = Vec::new();
        for iter in 0..cfg.inner_iters_per_stage {
            let before = state.deformed_mesh();
            let corr = index.find(&before, cfg.normal_threshold, cfg.match_weight)?;
            if iter == 0 {
                report.stage_initial.push(state.data_residual(&corr));
            }
            state.solve_stage(&corr, alpha, cfg.tikhonov)?;
            report.solves += 1;
            residuals.push(state.data_residual(&corr));
            let after = state.deformed_vertices();
            let motion = before
                .vertices()
                .iter()
                .zip(&after)
                .map(|(a, b)| (a - b).norm())
                .sum::<f64>()
                / after.len() as f64;
            log::debug!(
                "nicp stage {stage} (α={alpha}) iter {iter}: {} active, residual {:.3e}, motion {motion:.3e}",
                corr.active(),
                residuals.last().copied().unwrap_or_default()
            );
            if motion < tol {
                break;
            }
        }
        report.stage_residuals.push(residuals);
        report.stages += 1;
    }
    Ok((state.deformed_mesh(), report))
}

/// Single solve of [`NicpState`] with fixed correspondences.
pub fn solve_stage(state: &mut NicpState, corr: &Correspondences, alpha: f64, lambda: f64) -> Result<()> {
    state.solve_stage(corr, alpha, lambda)
}
