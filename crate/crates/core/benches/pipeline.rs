use bsann_core::acoustic::HrtfConfig;
use bsann_core::dataset::{default_scene, scene_atf, AtfMode, SceneRanges, sample_scene, bright_zone_targets};
use bsann_core::losses::{psz_objective, CompactnessConfig, LossWeights};
use bsann_core::nn::{forward_batch, NetworkConfig, NetworkParams};
use bsann_core::par;
use bsann_core::spectral::FrequencyGrid;
use criterion::{criterion_group, criterion_main, Criterion};

fn atf_assembly(c: &mut Criterion) {
    let scene = default_scene();
    let grid = FrequencyGrid::new(48000.0, 128, 100.0, 20000.0).unwrap();
    let hrtf = HrtfConfig::default();
    let mut group = c.benchmark_group("atf_assembly");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| scene_atf(&scene, &grid, &hrtf, AtfMode::PhysicallyInformed).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| par::sequential(|| scene_atf(&scene, &grid, &hrtf, AtfMode::PhysicallyInformed).unwrap()))
    });
    group.finish();
}

fn batch_loss(c: &mut Criterion) {
    let grid = FrequencyGrid::default();
    let hrtf = HrtfConfig::default();
    let ranges = SceneRanges {
        zone_jitter_m: [-0.05, 0.05],
        ..SceneRanges::fixed()
    };
    let scenes: Vec<_> = (0..8)
        .map(|i| {
            let cfg = sample_scene(100 + i, &ranges).unwrap();
            let atf = scene_atf(&cfg, &grid, &hrtf, AtfMode::PointSource).unwrap();
            let targets = bright_zone_targets(&cfg, &grid, &hrtf, AtfMode::PointSource).unwrap();
            (cfg.pose(), atf, targets)
        })
        .collect();
    let params = NetworkParams::init(&NetworkConfig::default(), &grid, 8, 0).unwrap();
    let poses: Vec<_> = scenes.iter().map(|s| s.0).collect();
    let (banks, _) = forward_batch(&params, &poses).unwrap();
    let compact = CompactnessConfig::for_grid(&grid);
    let weights = LossWeights::default();
    let run = || {
        par::map_indexed(scenes.len(), |i| {
            psz_objective(&scenes[i].1, &banks[i], &scenes[i].2, &compact, &weights).unwrap().0.total
        })
    };
    let mut group = c.benchmark_group("batch_loss");
    group.bench_function("parallel", |b| b.iter(run));
    group.bench_function("sequential", |b| b.iter(|| par::sequential(run)));
    group.finish();
}

criterion_group!(benches, atf_assembly, batch_loss);
criterion_main!(benches);
