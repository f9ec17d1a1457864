//! Parallel helpers vs the `par::sequential` fallback on the heavy kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glacier_mapper::grid::{self, Band};
use glacier_mapper::terminus::{self, FeatureProvider, KnnParams, LocalStatsFeatures, SegmentationPair};
use glacier_mapper::{hydro, morphology, par, spectral, synthetic, terrain};

fn both<F: Fn()>(c: &mut Criterion, name: &str, f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(20);
    group.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&f));
    group.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| par::sequential(&f)));
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let dem = synthetic::cone_dem(512);
    both(c, "terrain_params", || {
        black_box(terrain::terrain_params(black_box(&dem)));
    });
    both(c, "smooth_dem", || {
        black_box(terrain::smooth_dem(black_box(&dem), 2));
    });
    let filled = hydro::fill_sinks(&dem);
    both(c, "flow_direction_d8", || {
        black_box(hydro::flow_direction_d8(black_box(&filled)));
    });

    let scene = synthetic::cone_scene();
    let big = grid::resample_nearest(&scene.ablation.to_grid(grid::DEFAULT_NODATA), 7.5).unwrap();
    let mask = grid::Mask::from_grid(&big);
    both(c, "close_r2", || {
        black_box(morphology::close(black_box(&mask), 2));
    });
    both(c, "tile_and_merge", || {
        black_box(grid::tile_and_merge(&mask.georef, 128, 32, |t| t.crop_mask(&mask)).unwrap());
    });
}

fn termini(c: &mut Criterion) {
    let scene = synthetic::ramp_scene();
    let params = KnnParams::default();
    let pair = SegmentationPair::new(scene.d1.clone(), scene.d2.clone()).unwrap();
    both(c, "refine_termini", || {
        black_box(terminus::refine_termini(&pair, &scene.dem, &scene.features, &scene.ndvi, &params).unwrap());
    });

    let cone = synthetic::cone_scene();
    let mut stack = cone.stack.clone();
    terrain::terrain_params(&cone.dem).into_stack_channels(&mut stack).unwrap();
    both(c, "local_stats_features", || {
        black_box(LocalStatsFeatures.features(black_box(&stack)).unwrap());
    });
    both(c, "ndsi", || {
        black_box(spectral::normalized_difference(stack.require(Band::GREEN).unwrap(), stack.require(Band::SWIR1).unwrap()));
    });
}

criterion_group!(benches, kernels, termini);
criterion_main!(benches);
