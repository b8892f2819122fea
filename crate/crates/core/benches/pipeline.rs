//! Parallel vs sequential throughput of the hot paths.
//!
//! With the default `parallel` feature every benchmark runs twice: on the
//! global rayon pool and inside a one-thread pool, which executes the same
//! chunking serially. `cargo bench --no-default-features` measures the
//! compile-time sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kbuffers::kraster::rasterize_k;
use kbuffers::querygen::{build_queries, DmPolicy};
use kbuffers::real::gemm;
use kbuffers::scene::{make_synthetic_scene, SceneKind};
use kbuffers::trainer::{TrainConfig, Trainer};

fn modes() -> Vec<(&'static str, Box<dyn Fn(&mut (dyn FnMut() + Send))>)> {
    #[cfg(feature = "parallel")]
    {
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("one-thread pool");
        vec![
            ("parallel", Box::new(|f: &mut (dyn FnMut() + Send)| f())),
            ("sequential", Box::new(move |f: &mut (dyn FnMut() + Send)| serial.install(|| f()))),
        ]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![("sequential", Box::new(|f: &mut (dyn FnMut() + Send)| f()))]
    }
}

fn rasterize(c: &mut Criterion) {
    let s = make_synthetic_scene(SceneKind::TexturedSphere, 50_000, 2, 128, 1).unwrap();
    let cam = s.views.views()[0].camera.clone();
    let mut group = c.benchmark_group("rasterize_k8_50k_128px");
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&mut || {
                black_box(rasterize_k(&s.cloud, &cam, s.tau, 8).unwrap());
            }))
        });
    }
    group.finish();

    let (buf, occ) = rasterize_k(&s.cloud, &cam, s.tau, 8).unwrap();
    let mut group = c.benchmark_group("pruned_queries_k8");
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&mut || {
                black_box(build_queries(&buf, &occ, &cam, true, DmPolicy::Average).unwrap());
            }))
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let (m, k, n) = (4096, 256, 256);
    let a: Vec<f32> = (0..m * k).map(|i| (i % 97) as f32 * 0.01).collect();
    let w: Vec<f32> = (0..k * n).map(|i| (i % 89) as f32 * 0.01).collect();
    let mut out = vec![0.0f32; m * n];
    let mut group = c.benchmark_group("gemm_4096x256x256_f32");
    for (name, run) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&mut || gemm(m, k, n, &a, false, &w, false, 0.0, &mut out)))
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let s = make_synthetic_scene(SceneKind::TexturedSphere, 4000, 8, 64, 7).unwrap();
    let cfg = TrainConfig { k: 4, steps: u64::MAX, ..Default::default() };
    let mut group = c.benchmark_group("train_step_k4_64px");
    group.sample_size(10);
    for (name, run) in modes() {
        let mut t: Trainer<f32> = Trainer::new(&cfg, &s.cloud, &s.views).unwrap();
        t.train_ssim = false;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&mut || {
                black_box(t.train_step().unwrap());
            }))
        });
    }
    group.finish();
}

criterion_group!(benches, rasterize, matmul, train_step);
criterion_main!(benches);
