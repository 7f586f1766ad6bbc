//! Parallel vs sequential comparison of the data-parallel pipeline stages.
//!
//! With the default `parallel` feature the same workload runs inside rayon
//! pools of 1 and N threads; built with `--no-default-features` the suite
//! measures the plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use texrec_core::camera::{Intrinsics, Keyframe, Pose};
use texrec_core::features::{detect_keypoints, DetectorConfig};
use texrec_core::labeling::{build_psi_table, EnergyParams};
use texrec_core::mesh::Mesh;
use texrec_core::par::with_threads;
use texrec_core::raster::{rasterize, rasterize_sequential};
use texrec_core::synth::{generate_scene, render_keyframe, SceneSpec, SurfaceTexture, TextureKind};

struct Workload {
    mesh: Mesh,
    pose: Pose,
    intrinsics: Intrinsics,
    keyframes: Vec<Keyframe>,
    texture: SurfaceTexture,
}

fn workload() -> Workload {
    let spec = SceneSpec {
        target_faces: 20_000,
        n_keyframes: 4,
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec).expect("scene");
    Workload {
        mesh: scene.mesh.clone(),
        pose: scene.gt_poses[0],
        intrinsics: scene.intrinsics,
        keyframes: scene.keyframes.clone(),
        texture: scene.texture.clone(),
    }
}

fn thread_counts() -> Vec<usize> {
    let n = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1);
    if n > 1 {
        vec![1, n]
    } else {
        vec![1]
    }
}

fn bench_rasterize(c: &mut Criterion) {
    let w = workload();
    let mut group = c.benchmark_group("rasterize_depth_20k");
    group.bench_function("sequential_reference", |b| {
        b.iter(|| rasterize_sequential(&w.mesh, &w.pose, &w.intrinsics))
    });
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || rasterize(&w.mesh, &w.pose, &w.intrinsics)))
        });
    }
    group.finish();
}

fn bench_render(c: &mut Criterion) {
    let w = workload();
    let mut group = c.benchmark_group("render_keyframe_20k");
    group.sample_size(20);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || render_keyframe(&w.mesh, &w.texture, &w.pose, &w.intrinsics)))
        });
    }
    group.finish();
}

fn bench_detect(c: &mut Criterion) {
    let w = workload();
    let cfg = DetectorConfig::default();
    let mut group = c.benchmark_group("detect_keypoints_4kf");
    group.sample_size(20);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| {
                with_threads(t, || {
                    texrec_core::par::par_map_slice(&w.keyframes, |kf| {
                        detect_keypoints(&kf.image, &cfg)
                    })
                })
            })
        });
    }
    group.finish();
}

fn bench_psi_table(c: &mut Criterion) {
    let w = workload();
    let depth_maps: Vec<_> = w
        .keyframes
        .iter()
        .map(|kf| rasterize(&w.mesh, &kf.pose, &kf.intrinsics).depth)
        .collect();
    let params = EnergyParams::default();
    let mut group = c.benchmark_group("psi_table_20k_x_4kf");
    group.sample_size(20);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| {
                with_threads(t, || {
                    build_psi_table(&w.mesh, &w.keyframes, &depth_maps, &params)
                })
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_rasterize,
    bench_render,
    bench_detect,
    bench_psi_table
);
criterion_main!(benches);
