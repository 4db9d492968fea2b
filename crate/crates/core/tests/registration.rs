mod support;

use langmap::geometry::Cell;
use langmap::map::{build_map, register_frame, Aggregation, FeatureMap, MapBuilder, MapConfig, OccupancyParams};
use langmap::PosedFrame;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use support::{brute_register, random_small_trajectory, rng};

const D_RNR: usize = 3;
const D_CLIP: usize = 5;

/// Relative closeness, measured against the larger of the two values and the
/// cell vector's own scale so cancellation near zero is not over-penalized.
fn rel_close(a: f64, b: f64, rel: f64, scale: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(scale)
}

fn scale(v: &[f32]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()))
}

fn check_against_oracle(frames: &[PosedFrame], map: &FeatureMap) {
    let spec = map.spec();
    let oracle = brute_register(frames, spec, D_RNR, D_CLIP, &OccupancyParams::default());
    for i in 0..spec.cell_count() {
        let c = spec.cell_at(i);
        assert_eq!(map.count(c) as u64, oracle.count[i], "count at {c:?}");
        assert_eq!(map.occupancy(c), oracle.occupancy[i], "occupancy at {c:?}");
        let s = oracle.mean[i].iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (k, (&got, &want)) in map.cell_vector(c).iter().zip(&oracle.mean[i]).enumerate() {
            assert!(rel_close(got as f64, want, 1e-5, s), "{c:?}[{k}]: {got} vs {want}");
        }
    }
}

#[test]
fn matches_brute_force_mean() {
    let mut r = rng(21);
    for _ in 0..200 {
        let n = r.random_range(1..=5);
        let (spec, frames) = random_small_trajectory(&mut r, n, D_RNR, D_CLIP);
        let (map, stats) = build_map(&frames, &MapConfig::new(spec, D_RNR, D_CLIP)).unwrap();
        check_against_oracle(&frames, &map);
        let total: u64 = map.counts().iter().map(|&c| c as u64).sum();
        let valid: u64 = frames.iter().map(|f| f.depth.valid_pixels() as u64).sum();
        assert_eq!(stats.valid_points, valid);
        assert_eq!(total + stats.dropped_points, valid);
    }
}

#[test]
fn serial_and_batched_agree() {
    let mut r = rng(22);
    for _ in 0..50 {
        let (spec, frames) = random_small_trajectory(&mut r, 5, D_RNR, D_CLIP);
        let cfg = MapConfig::new(spec, D_RNR, D_CLIP);
        let mut serial = FeatureMap::new(spec, D_RNR, D_CLIP).unwrap();
        for f in &frames {
            register_frame(&mut serial, f, &cfg.occupancy, Aggregation::Mean).unwrap();
        }
        let mut builder = MapBuilder::new(cfg).unwrap();
        builder.push_batch(&frames).unwrap();
        let (batched, _) = builder.finish().unwrap();
        assert_eq!(serial, batched);
    }
}

#[test]
fn permutation_invariance() {
    let mut r = rng(23);
    for _ in 0..100 {
        let (spec, mut frames) = random_small_trajectory(&mut r, 5, D_RNR, D_CLIP);
        let cfg = MapConfig::new(spec, D_RNR, D_CLIP);
        let (a, _) = build_map(&frames, &cfg).unwrap();
        frames.shuffle(&mut r);
        let (b, _) = build_map(&frames, &cfg).unwrap();
        assert_eq!(a.counts(), b.counts());
        assert_eq!(a.occupancy_cells(), b.occupancy_cells());
        let c = a.channels();
        for (va, vb) in a.raw_cells().chunks(c).zip(b.raw_cells().chunks(c)) {
            let s = scale(va);
            for (x, y) in va.iter().zip(vb) {
                assert!(rel_close(*x as f64, *y as f64, 1e-5, s), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn latest_wins_keeps_last_touching_frame() {
    let mut r = rng(24);
    let (spec, frames) = random_small_trajectory(&mut r, 5, D_RNR, D_CLIP);
    let mut cfg = MapConfig::new(spec, D_RNR, D_CLIP);
    cfg.aggregation = Aggregation::LatestWins;
    let (map, _) = build_map(&frames, &cfg).unwrap();
    for i in 0..spec.cell_count() {
        let c = spec.cell_at(i);
        if map.count(c) == 0 {
            continue;
        }
        let last = frames
            .iter()
            .rev()
            .find(|f| brute_register(std::slice::from_ref(*f), &spec, D_RNR, D_CLIP, &cfg.occupancy).count[i] > 0)
            .unwrap();
        assert_eq!(map.clip_block(c), last.f_clip.values(), "{c:?}");
    }
}

#[test]
fn unknown_iff_unregistered() {
    let mut r = rng(25);
    for _ in 0..50 {
        let (spec, frames) = random_small_trajectory(&mut r, 3, D_RNR, D_CLIP);
        let (map, _) = build_map(&frames, &MapConfig::new(spec, D_RNR, D_CLIP)).unwrap();
        for i in 0..spec.cell_count() {
            let c: Cell = spec.cell_at(i);
            assert_eq!(map.count(c) == 0, map.occupancy(c) == langmap::Occupancy::Unknown);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn count_conservation(seed in any::<u64>(), n in 1usize..6) {
        let (spec, frames) = random_small_trajectory(&mut rng(seed), n, D_RNR, D_CLIP);
        let (map, stats) = build_map(&frames, &MapConfig::new(spec, D_RNR, D_CLIP)).unwrap();
        let total: u64 = map.counts().iter().map(|&c| c as u64).sum();
        prop_assert_eq!(total + stats.dropped_points, stats.valid_points);
        prop_assert_eq!(stats.frames, n as u64);
    }

    #[test]
    fn registering_twice_doubles_counts_keeps_means(seed in any::<u64>()) {
        let (spec, frames) = random_small_trajectory(&mut rng(seed), 3, D_RNR, D_CLIP);
        let cfg = MapConfig::new(spec, D_RNR, D_CLIP);
        let (once, _) = build_map(&frames, &cfg).unwrap();
        let doubled: Vec<PosedFrame> = frames.iter().chain(&frames).cloned().collect();
        let (twice, _) = build_map(&doubled, &cfg).unwrap();
        for (a, b) in once.counts().iter().zip(twice.counts()) {
            prop_assert_eq!(a * 2, *b);
        }
        let c = once.channels();
        for (va, vb) in once.raw_cells().chunks(c).zip(twice.raw_cells().chunks(c)) {
            let s = scale(va);
            for (x, y) in va.iter().zip(vb) {
                prop_assert!(rel_close(*x as f64, *y as f64, 1e-5, s));
            }
        }
    }
}
