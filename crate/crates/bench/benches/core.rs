use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use seqgrasp_bench::{ball, scene};
use seqgrasp_core::energy::evaluate;
use seqgrasp_core::geometry::{SdfGrid, TriMesh};
use seqgrasp_core::nalgebra::Vector3;
use seqgrasp_core::sampler::{GraspProblem, SamplerParams};

fn energy(c: &mut Criterion) {
    let scene = scene();
    let os = &scene.hand.os_catalog[0];
    let params = SamplerParams::default();
    let problem = GraspProblem::new(&scene, os, &os.mask, &params).unwrap();
    let g = problem.init_chain(7, None).unwrap().config();
    c.bench_function("energy_value", |b| b.iter(|| evaluate(&scene, os, (0, 1), black_box(&g), false).unwrap()));
    c.bench_function("energy_value_and_gradient", |b| {
        b.iter(|| evaluate(&scene, os, (0, 1), black_box(&g), true).unwrap())
    });
}

fn sdf(c: &mut Criterion) {
    let obj = ball(64);
    let points: Vec<Vector3<f64>> = (0..1024)
        .map(|i| {
            let t = i as f64 * 0.61803;
            Vector3::new(t.sin(), (2.0 * t).cos(), (3.0 * t).sin()) * 0.04
        })
        .collect();
    c.bench_function("sdf_query_1024", |b| {
        b.iter(|| points.iter().map(|p| obj.sdf.query(black_box(p)).value).sum::<f64>())
    });
    let mesh = TriMesh::icosphere(0.025, 3);
    let mut group = c.benchmark_group("sdf_build");
    group.sample_size(10);
    group.bench_function("icosphere_r32", |b| b.iter(|| SdfGrid::build(black_box(&mesh), 32).unwrap()));
    group.finish();
}

fn mala(c: &mut Criterion) {
    let scene = scene();
    let os = &scene.hand.os_catalog[0];
    let params = SamplerParams::default();
    let problem = GraspProblem::new(&scene, os, &os.mask, &params).unwrap();
    let mut chain = problem.init_chain(3, None).unwrap();
    let mut t = 0;
    c.bench_function("mala_step", |b| {
        b.iter(|| {
            t = (t + 1) % params.steps;
            problem.mala_step(&mut chain, t)
        })
    });
}

criterion_group!(benches, energy, sdf, mala);
criterion_main!(benches);
