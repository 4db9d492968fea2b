use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use langmap::map::{build_map_from_records, MapConfig};
use langmap::planner::shortest_path;
use langmap::query::{
    contrast_field, extract_candidates, similarity_field, QuerySpec, DEFAULT_SUPPRESSION_RADIUS,
    DEFAULT_THRESHOLD,
};
use langmap::synthetic::throughput_frames;
use langmap::{Cell, EmbeddingProvider, FeatureMap, GridSpec, RotoTranslation, SyntheticProvider};

const SIZE: usize = 256;

fn config(p: &SyntheticProvider) -> MapConfig {
    let spec = GridSpec::new(SIZE, 0.1, RotoTranslation::identity()).unwrap();
    MapConfig::new(spec, p.rnr_dim(), p.clip_dim())
}

fn full_map(p: &SyntheticProvider) -> FeatureMap {
    let frames = throughput_frames(400, 128, SIZE, 3);
    build_map_from_records(frames.into_iter().map(Ok), p, &config(p)).unwrap().0
}

fn build(c: &mut Criterion) {
    let p = SyntheticProvider::default();
    let frames = throughput_frames(100, 128, SIZE, 1);
    let mut g = c.benchmark_group("build");
    g.sample_size(10);
    g.throughput(Throughput::Elements(frames.len() as u64));
    g.bench_function("100 frames 128x128 into 256x256x544", |b| {
        b.iter_batched(
            || frames.clone(),
            |f| build_map_from_records(f.into_iter().map(Ok), &p, &config(&p)).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn query(c: &mut Criterion) {
    let p = SyntheticProvider::default();
    let map = full_map(&p);
    let q = p.embed_text("chair").unwrap();
    let spec = QuerySpec::new("chair").with_negatives(["floor", "wall", "ceiling"]);
    let field = contrast_field(&map, &spec, &p).unwrap();
    let mut g = c.benchmark_group("query");
    g.bench_function("similarity 256x256", |b| b.iter(|| similarity_field(black_box(&map), &q).unwrap()));
    g.bench_function("contrast 256x256, 3 negatives", |b| {
        b.iter(|| contrast_field(black_box(&map), &spec, &p).unwrap())
    });
    g.bench_function("candidates 256x256", |b| {
        b.iter(|| {
            extract_candidates(black_box(&field), map.spec(), DEFAULT_THRESHOLD, DEFAULT_SUPPRESSION_RADIUS).unwrap()
        })
    });
    g.finish();
}

fn plan(c: &mut Criterion) {
    let p = SyntheticProvider::default();
    let map = full_map(&p);
    let grid = map.occupancy_grid();
    let free: Vec<Cell> = (0..map.spec().cell_count())
        .map(|i| map.spec().cell_at(i))
        .filter(|&c| grid.is_free(c))
        .collect();
    let (start, goal) = (free[0], free[free.len() - 1]);
    c.bench_function("astar across 256x256", |b| {
        b.iter(|| shortest_path(black_box(&grid), start, goal))
    });
}

criterion_group!(benches, build, query, plan);
criterion_main!(benches);
