use std::collections::HashMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::refine::FrameRecord;
use crate::error::{Error, Result};
use crate::objective::{tre_with_attachment, TargetAttachment};
use crate::shape_model::ShapeModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTre {
    pub id: String,
    pub tre_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub target: [f64; 3],
    pub count: usize,
    pub mean_tre_mm: f64,
    pub median_tre_mm: f64,
    pub max_tre_mm: f64,
    pub frames: Vec<FrameTre>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-frame TRE of `records` against `gt`, matched by id in `gt` order.
/// `target` is in canonical coordinates.
pub fn evaluate_records(
    records: &[FrameRecord],
    gt: &[FrameRecord],
    target: &Point3<f64>,
    model: &ShapeModel,
) -> Result<EvalMetrics> {
    let by_id: HashMap<&str, &FrameRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let missing: Vec<&str> = gt.iter().map(|g| g.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::FrameMismatch(format!("no estimate for frames: {}", missing.join(", "))));
    }
    let reference = model.eval(&vec![0.0; model.components()]);
    let att = TargetAttachment::new(&reference, target)?;
    let shape = |s: &[f64]| -> Vec<f64> { (0..model.components()).map(|k| s.get(k).copied().unwrap_or(0.0)).collect() };
    let frames: Vec<FrameTre> = gt
        .iter()
        .map(|g| {
            let est = by_id[g.id.as_str()];
            FrameTre {
                id: g.id.clone(),
                tre_mm: tre_with_attachment(&att, &g.pose, &shape(&g.shape), &est.pose, &shape(&est.shape), model),
            }
        })
        .collect();
    let values: Vec<f64> = frames.iter().map(|f| f.tre_mm).collect();
    Ok(EvalMetrics {
        target: [target.x, target.y, target.z],
        count: values.len(),
        mean_tre_mm: values.iter().sum::<f64>() / values.len().max(1) as f64,
        median_tre_mm: median(&values),
        max_tre_mm: values.iter().copied().fold(0.0, f64::max),
        frames,
    })
}
