#![allow(clippy::field_reassign_with_default)]

use deformreg_core::augment::frame_rng;
use deformreg_core::mesh::primitives::organ_phantom;
use deformreg_core::objective::{target_registration_error, RegistrationProblem};
use deformreg_core::pipeline::synthetic::{perturb_pose, synthetic_corpus};
use deformreg_core::pipeline::{refine, refine_cmd, refine_frame, track_sequence, RefineConfig, RunConfig};
use deformreg_core::render::render_full;
use deformreg_core::shape_model::build_model;
use deformreg_core::{CameraIntrinsics, Error, LabelImageSet, OptConfig, RigidPose, ShapeModel};
use nalgebra::Point3;
use proptest::prelude::*;

fn model() -> ShapeModel {
    let base = organ_phantom(2);
    build_model(&base, &synthetic_corpus(&base, 12, false, &mut frame_rng(3, 0)), 3).unwrap()
}

fn config(maxiter: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.camera = CameraIntrinsics::centered(200.0, 200, 150);
    cfg.optimizer = OptConfig {
        maxiter,
        popsize: Some(12),
        ..OptConfig::default()
    };
    cfg
}

const GT: RigidPose = RigidPose::new([8.0, -6.0, 4.0], [3.0, -2.0, 430.0]);

#[test]
fn refine_is_a_fixed_point_at_ground_truth() {
    let m = model();
    let cfg = config(15);
    let masks = render_full(&m.eval(&[0.0; 3]), &GT, &cfg.camera);
    let (rec, r) = refine_cmd(&cfg, &m, &GT, &masks, "f0", None).unwrap();
    assert_eq!(r.cost_initial, 0.0);
    assert_eq!(r.cost_final, 0.0);
    assert_eq!(rec.pose, GT);
    assert_eq!(rec.shape, vec![0.0; 3]);
}

#[test]
fn refine_lowers_the_cost_from_a_perturbed_start() {
    let m = model();
    let cfg = config(40);
    let shape = [0.6, -0.4, 0.3];
    let masks = render_full(&m.eval(&shape), &GT, &cfg.camera);
    let mut init = GT;
    init.translation_mm[0] += 10.0;
    init.rotation_deg[1] -= 5.0;
    let problem = RegistrationProblem::new(&masks, cfg.camera).unwrap();
    let r = refine(&problem, &m, &init, &[0.0; 3], &cfg.refine, &cfg.optimizer).unwrap();
    assert!(r.cost_final < r.cost_initial, "{} !< {}", r.cost_final, r.cost_initial);
    let before = target_registration_error(&Point3::new(20.0, 0.0, 0.0), &GT, &shape, &init, &[0.0; 3], &m).unwrap();
    let after = target_registration_error(&Point3::new(20.0, 0.0, 0.0), &GT, &shape, &r.pose, &r.shape, &m).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn empty_masks_have_nothing_to_register() {
    let m = model();
    let cfg = config(5);
    let masks = LabelImageSet::empty(200, 150);
    assert!(matches!(refine_cmd(&cfg, &m, &GT, &masks, "f", None), Err(Error::NothingToRegister)));
}

#[test]
fn refine_cmd_writes_record_and_overlay() {
    let m = model();
    let cfg = config(5);
    let masks = render_full(&m.eval(&[0.0; 3]), &GT, &cfg.camera);
    let dir = tempfile::tempdir().unwrap();
    let (rec, _) = refine_cmd(&cfg, &m, &GT, &masks, "frame7", Some(dir.path())).unwrap();
    assert!(dir.path().join("frame7.json").exists());
    assert!(rec.images["overlay"].exists());
    let loaded = deformreg_core::pipeline::load_records(dir.path().join("frame7.json")).unwrap();
    assert_eq!(loaded, vec![rec]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn refine_stays_inside_the_box(seed in 0u64..1000, rigid in any::<bool>()) {
        let m = model();
        let mut cfg = config(6);
        cfg.refine.rigid_only = rigid;
        let masks = render_full(&m.eval(&[1.0, -1.0, 1.0]), &GT, &cfg.camera);
        let init = perturb_pose(&GT, 25.0, 12.0, &mut frame_rng(seed, 0));
        let problem = RegistrationProblem::new(&masks, cfg.camera).unwrap();
        let opt = OptConfig { seed, ..cfg.optimizer.clone() };
        let r = refine(&problem, &m, &init, &[0.0; 3], &cfg.refine, &opt).unwrap();
        for i in 0..3 {
            prop_assert!((r.pose.translation_mm[i] - init.translation_mm[i]).abs() <= 20.0);
            prop_assert!((r.pose.rotation_deg[i] - init.rotation_deg[i]).abs() <= 10.0);
        }
        prop_assert!(r.shape.iter().all(|a| a.abs() <= 1.0));
        if rigid {
            prop_assert_eq!(r.shape.clone(), vec![0.0; 3]);
        }
        prop_assert!(r.cost_final <= r.cost_initial);
    }
}

fn tracking_config() -> RunConfig {
    let mut cfg = config(25);
    cfg.refine = RefineConfig {
        max_restarts: 3,
        ..RefineConfig::default()
    };
    cfg
}

#[test]
fn static_sequence_never_gets_worse_and_is_deterministic() {
    let m = model();
    let cfg = tracking_config();
    let masks = render_full(&m.eval(&[0.4, 0.2, -0.3]), &GT, &cfg.camera);
    let frames: Vec<(String, LabelImageSet)> = (0..3).map(|i| (format!("{i:03}"), masks.clone())).collect();
    let mut init = GT;
    init.translation_mm[1] += 6.0;
    let a = track_sequence(&cfg, &m, &init, &frames);
    let b = track_sequence(&cfg, &m, &init, &frames);
    assert_eq!(a, b);
    let costs: Vec<f64> = a.iter().map(|r| r.metrics.cost.unwrap()).collect();
    assert!(costs.windows(2).all(|w| w[1] <= w[0]), "{costs:?}");
    assert!(a.iter().all(|r| r.error.is_none()));
}

#[test]
fn failed_frames_are_flagged_and_the_chain_continues() {
    let m = model();
    let cfg = tracking_config();
    let good = render_full(&m.eval(&[0.0; 3]), &GT, &cfg.camera);
    let frames = vec![
        ("a".to_string(), good.clone()),
        ("b".to_string(), LabelImageSet::empty(200, 150)),
        ("c".to_string(), good),
    ];
    let recs = track_sequence(&cfg, &m, &GT, &frames);
    assert_eq!(recs.len(), 3);
    assert!(recs[0].error.is_none() && recs[2].error.is_none());
    assert!(recs[1].error.as_deref().unwrap().contains("nothing to register"));
    assert_eq!(recs[1].pose, recs[0].pose);
}

/// Rigid 2 mm/frame motion over 16 frames ends 30 mm from the first pose,
/// beyond the ±20 mm box of a cold start there; chaining follows the motion.
#[test]
fn chained_tracking_beats_a_cold_start_on_a_moving_sequence() {
    let m = model();
    let mut cfg = tracking_config();
    cfg.camera = CameraIntrinsics::centered(320.0, 320, 240);
    cfg.optimizer = RunConfig::default().optimizer;
    cfg.refine.rigid_only = true;
    let shape = [0.0; 3];
    let target = Point3::new(25.0, 5.0, 0.0);
    let poses: Vec<RigidPose> = (0..16)
        .map(|i| {
            let mut p = GT;
            p.translation_mm[0] += 2.0 * i as f64;
            p
        })
        .collect();
    let frames: Vec<(String, LabelImageSet)> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("{i:03}"), render_full(&m.eval(&shape), p, &cfg.camera)))
        .collect();
    let recs = track_sequence(&cfg, &m, &GT, &frames);
    let tre: Vec<f64> = recs
        .iter()
        .zip(&poses)
        .map(|(r, p)| target_registration_error(&target, p, &shape, &r.pose, &r.shape, &m).unwrap())
        .collect();
    let mut single_shot = cfg.clone();
    single_shot.refine.max_restarts = 1;
    let cold = refine_frame(&single_shot, &m, &frames[15].1, &GT, &shape).unwrap();
    let cold_tre = target_registration_error(&target, &poses[15], &shape, &cold.pose, &cold.shape, &m).unwrap();
    assert!(tre[15] < cold_tre, "chained {tre:?} vs cold {cold_tre:.3}");
    assert!(tre.iter().all(|&t| t < 5.0), "{tre:?}");
}
