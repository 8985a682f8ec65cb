use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use deformreg_bench::{contour_points, scene};
use deformreg_core::cmaes::minimize;
use deformreg_core::mesh::primitives::{ellipsoid, organ_phantom};
use deformreg_core::nicp::nicp_register;
use deformreg_core::objective::{hausdorff, RegistrationProblem};
use deformreg_core::render::render_full;
use deformreg_core::{NicpConfig, OptConfig};

fn render(c: &mut Criterion) {
    let (mesh, pose, cam) = scene();
    c.bench_function("render_full_640x480", |b| b.iter(|| render_full(black_box(&mesh), &pose, &cam)));
}

fn distance(c: &mut Criterion) {
    let (a, b2) = (contour_points(2000, 0.0), contour_points(2000, 0.7));
    c.bench_function("hausdorff_2k_points", |b| b.iter(|| hausdorff(black_box(&a), &b2).unwrap()));

    let (mesh, pose, cam) = scene();
    let problem = RegistrationProblem::new(&render_full(&mesh, &pose, &cam), cam).unwrap();
    let moved = deformreg_core::RigidPose::new([12.0, -13.0, 4.0], [8.0, -1.0, 405.0]);
    c.bench_function("registration_cost", |b| {
        b.iter(|| problem.evaluate_mesh(black_box(&mesh), &moved).total)
    });
}

fn nicp(c: &mut Criterion) {
    let target = organ_phantom(2);
    let (lo, hi) = target.bounding_box();
    let axes = ((hi - lo) / 2.0).into();
    let source = ellipsoid(2, axes);
    let cfg = NicpConfig::default();
    let mut g = c.benchmark_group("nicp");
    g.sample_size(10);
    g.bench_function("ellipsoid_to_phantom", |b| {
        b.iter(|| nicp_register(black_box(&source), &target, &cfg).unwrap())
    });
    g.finish();
}

fn cmaes(c: &mut Criterion) {
    let n = 16;
    let mut cfg = OptConfig::with_bounds(vec![[-5.0, 5.0]; n]);
    cfg.maxiter = 200;
    let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| 10f64.powf(i as f64 / 5.0) * v * v).sum::<f64>();
    let x0 = vec![2.0; n];
    let mut g = c.benchmark_group("cmaes");
    g.sample_size(10);
    g.bench_function("ellipsoid_16d_200_gens", |b| b.iter(|| minimize(f, black_box(&x0), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, render, distance, nicp, cmaes);
criterion_main!(benches);
