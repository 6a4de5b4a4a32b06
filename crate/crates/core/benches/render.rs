//! Parallel versus sequential throughput of the hot kernels at desk scale.
//!
//! Each kernel runs inside a one-thread pool and inside a pool sized to the
//! machine. Build with `--no-default-features` to time the rayon-free path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evdeblur::capture::{build_session, MotionSpec, PoseNoise, SceneGenerator, SceneSpec};
use evdeblur::imaging::{convolve, Image, KernelSpec};
use evdeblur::optim::{initial_state, TrainSchedule};
use evdeblur::splat::{render_gradients, render_with, synth_blur, Deform, RenderOptions};

fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if max > 1 {
        sizes.push(max);
    }
    sizes
        .into_iter()
        .map(|n| (n, rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()))
        .collect()
}

fn kernels(c: &mut Criterion) {
    let scene = SceneSpec {
        width: 128,
        height: 128,
        generator: SceneGenerator::GaussianField {
            count: 120,
            scale_range: [1.5, 6.0],
            palette: vec![],
            margin: 8.0,
        },
        seed: 1,
    };
    let motion = MotionSpec { n_blurred: 4, n_event_views: 4, n_test: 1, ..MotionSpec::default() };
    let session = build_session(&scene, &motion.build().unwrap(), &PoseNoise::default(), 0.2).unwrap();
    let state = initial_state(&session, &TrainSchedule::default()).unwrap();
    let opts = RenderOptions::default();
    let warp = state.rgb_warps[0];
    let up = Image::filled(128, 128, 3, 1e-3);
    let deform = state.mlp.as_ref().map(|mlp| Deform { mlp, view_code: [0.0, 0.0] });
    let gauss = KernelSpec::gaussian(1.5);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(20);
    for (n, pool) in pools() {
        group.bench_with_input(BenchmarkId::new("render", n), &n, |b, _| {
            b.iter(|| pool.install(|| render_with(&state.mix, &warp, 128, 128, &opts)))
        });
        group.bench_with_input(BenchmarkId::new("render_gradients", n), &n, |b, _| {
            b.iter(|| pool.install(|| render_gradients(&state.mix, &warp, 128, 128, &up, &opts).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("synth_blur", n), &n, |b, _| {
            b.iter(|| {
                pool.install(|| synth_blur(&state.mix, &warp, &state.blur, 0, deform, 128, 128, &opts).unwrap())
            })
        });
        group.bench_with_input(BenchmarkId::new("convolve", n), &n, |b, _| {
            b.iter(|| pool.install(|| convolve(&session.gt, &gauss).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
