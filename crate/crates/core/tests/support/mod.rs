//! Brute-force reference implementations and random fixtures shared by the
//! integration suites.

#![allow(dead_code)]

use std::collections::BinaryHeap;

use langmap::embedding::EmbeddingProvider;
use langmap::geometry::{Cell, GridSpec, RotoTranslation};
use langmap::map::{FeatureMap, Occupancy, OccupancyParams};
use langmap::planner::StepCost;
use langmap::query::{FieldKind, SimilarityField};
use langmap::synthetic::{downward_pose, footprint_intrinsics};
use langmap::{Embedding, FrameRecord, PosedFrame, RnrFeature};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return Embedding::normalized(v).unwrap();
        }
    }
}

pub fn random_rigid(rng: &mut impl Rng, translation: f64) -> RotoTranslation {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0f64),
    );
    let angle = rng.random_range(-3.1..3.1);
    let r: Matrix3<f64> = if axis.norm() < 1e-3 {
        Matrix3::identity()
    } else {
        *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    };
    let t = Vector3::new(
        rng.random_range(-translation..translation),
        rng.random_range(-translation..translation),
        rng.random_range(-translation..translation),
    );
    RotoTranslation::from_parts(r, t).unwrap()
}

/// Rotation about the map normal (world Y) plus a planar shift.
pub fn random_planar_origin(rng: &mut impl Rng) -> RotoTranslation {
    let a: f64 = rng.random_range(-3.1..3.1);
    let (s, c) = a.sin_cos();
    let r = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
    let t = Vector3::new(rng.random_range(-5.0..5.0), 0.0, rng.random_range(-5.0..5.0));
    RotoTranslation::from_parts(r, t).unwrap()
}

pub fn random_map(rng: &mut impl Rng, size: usize, d_rnr: usize, d_clip: usize) -> FeatureMap {
    let spec = GridSpec::new(size, rng.random_range(0.05..0.5), random_rigid(rng, 3.0)).unwrap();
    let n = size * size;
    let c = d_rnr + d_clip;
    let count: Vec<u32> = (0..n)
        .map(|_| if rng.random_bool(0.6) { rng.random_range(1..500) } else { 0 })
        .collect();
    let cells = (0..n * c)
        .map(|i| if count[i / c] > 0 { rng.random_range(-1.0..1.0f32) } else { 0.0 })
        .collect();
    let weight = count.iter().map(|&k| k as f32).collect();
    let occupancy = count
        .iter()
        .map(|&k| match (k, rng.random_range(0..2)) {
            (0, _) => Occupancy::Unknown,
            (_, 0) => Occupancy::Free,
            _ => Occupancy::Obstacle,
        })
        .collect();
    FeatureMap::from_parts(spec, d_rnr, d_clip, cells, weight, count, occupancy).unwrap()
}

/// Random field with roughly `density` valid cells, scores in `[-1, 1]`.
/// Scores are drawn from a coarse lattice so exact ties occur.
pub fn random_field(rng: &mut impl Rng, size: usize, density: f64) -> SimilarityField {
    let n = size * size;
    let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
    let scores = valid
        .iter()
        .map(|&v| {
            if v {
                rng.random_range(-40..=40) as f64 / 40.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    SimilarityField::new(size, scores, valid, FieldKind::Cosine).unwrap()
}

// ---------------------------------------------------------------- registration

pub struct OracleMap {
    pub mean: Vec<Vec<f64>>,
    pub count: Vec<u64>,
    pub occupancy: Vec<Occupancy>,
}

/// Straight per-point accumulation: every in-band point adds its frame's
/// `[rnr | clip]` vector to its cell; the cell value is the plain mean.
pub fn brute_register(
    frames: &[PosedFrame],
    spec: &GridSpec,
    d_rnr: usize,
    d_clip: usize,
    params: &OccupancyParams,
) -> OracleMap {
    let n = spec.size * spec.size;
    let c = d_rnr + d_clip;
    let mut sum = vec![vec![0.0f64; c]; n];
    let mut count = vec![0u64; n];
    let mut occupancy = vec![Occupancy::Unknown; n];
    let to_map = spec.origin.matrix();
    for f in frames {
        let pose = f.pose.matrix();
        let k = &f.intrinsics;
        for v in 0..f.depth.height {
            for u in 0..f.depth.width {
                let pixel = v * f.depth.width + u;
                let d = f.depth.data[pixel];
                if !(d.is_finite() && d > 0.0) {
                    continue;
                }
                let d = d as f64;
                let cam = nalgebra::Vector4::new((u as f64 - k.cx) / k.fx * d, (v as f64 - k.cy) / k.fy * d, d, 1.0);
                let m = to_map * (pose * cam);
                let gx = (m.x / spec.resolution).floor();
                let gy = (m.z / spec.resolution).floor();
                if gx < 0.0 || gy < 0.0 || gx >= spec.size as f64 || gy >= spec.size as f64 {
                    continue;
                }
                let class = if m.y >= params.obstacle_band[0] && m.y <= params.obstacle_band[1] {
                    Occupancy::Obstacle
                } else if m.y >= params.floor_band[0] && m.y <= params.floor_band[1] {
                    Occupancy::Free
                } else {
                    continue;
                };
                let i = gy as usize * spec.size + gx as usize;
                let rnr: Vec<f64> = match &f.f_rnr {
                    None => vec![0.0; d_rnr],
                    Some(RnrFeature::Frame(e)) => e.values().iter().map(|&x| x as f64).collect(),
                    Some(RnrFeature::PerPixel { dim, values }) => values[pixel * dim..(pixel + 1) * dim]
                        .iter()
                        .map(|&x| x as f64)
                        .collect(),
                };
                for (s, x) in sum[i].iter_mut().zip(rnr.iter().copied().chain(f.f_clip.values().iter().map(|&x| x as f64))) {
                    *s += x;
                }
                count[i] += 1;
                if class == Occupancy::Obstacle || occupancy[i] == Occupancy::Unknown {
                    occupancy[i] = class;
                }
            }
        }
    }
    let mean = sum
        .into_iter()
        .zip(&count)
        .map(|(s, &k)| if k == 0 { s } else { s.into_iter().map(|x| x / k as f64).collect() })
        .collect();
    OracleMap { mean, count, occupancy }
}

/// Up to `frames` small random frames over an 8×8, 0.25 m grid. Depths put
/// points on the floor, on obstacles or below the floor band; some pixels
/// are invalid or fall outside the grid.
pub fn random_small_trajectory(
    rng: &mut impl Rng,
    frames: usize,
    d_rnr: usize,
    d_clip: usize,
) -> (GridSpec, Vec<PosedFrame>) {
    let spec = GridSpec::new(8, 0.25, RotoTranslation::identity()).unwrap();
    let out = (0..frames)
        .map(|i| {
            let pixels = rng.random_range(2..7);
            let h = rng.random_range(1.0..2.0);
            let intr = footprint_intrinsics(pixels, rng.random_range(0.3..2.5), h);
            let pose = downward_pose(rng.random_range(-0.2..2.2), h, rng.random_range(-0.2..2.2));
            let data = (0..pixels * pixels)
                .map(|_| match rng.random_range(0..10) {
                    0 => 0.0,
                    1 => (h + 0.5) as f32,
                    2..=3 => (h - rng.random_range(0.3..1.2)) as f32,
                    _ => h as f32,
                })
                .collect();
            let per_pixel = rng.random_bool(0.3);
            PosedFrame {
                id: format!("f{i}"),
                depth: langmap::DepthImage::new(pixels, pixels, data).unwrap(),
                intrinsics: intr,
                pose,
                f_clip: random_unit(rng, d_clip),
                f_rnr: if per_pixel {
                    Some(RnrFeature::PerPixel {
                        dim: d_rnr,
                        values: (0..pixels * pixels * d_rnr).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    })
                } else if rng.random_bool(0.5) {
                    Some(RnrFeature::Frame(random_unit(rng, d_rnr)))
                } else {
                    None
                },
            }
        })
        .collect();
    (spec, out)
}

// ----------------------------------------------------------------------- query

pub fn brute_cosine(q: &[f32], block: &[f32]) -> f64 {
    let dot: f64 = q.iter().zip(block).map(|(&a, &b)| a as f64 * b as f64).sum();
    let nq: f64 = q.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = block.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
    if nq == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (nq * nb)).clamp(-1.0, 1.0)
    }
}

/// `None` for unregistered cells.
pub fn brute_similarity(map: &FeatureMap, q: &Embedding) -> Vec<Option<f64>> {
    let n = map.size();
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let c = Cell::new(x, y);
            out.push((map.count(c) > 0).then(|| brute_cosine(q.values(), map.clip_block(c))));
        }
    }
    out
}

/// Softmax of the positive among positive and negatives at temperature τ.
pub fn brute_contrast(s_pos: f64, s_negs: &[f64], tau: f64) -> f64 {
    let e = |s: f64| (s / tau).exp();
    e(s_pos) / (e(s_pos) + s_negs.iter().map(|&s| e(s)).sum::<f64>())
}

/// First maximum in row-major order over valid cells.
pub fn brute_argmax(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Take the max, zero out its neighborhood, repeat while above threshold.
pub fn brute_nms(size: usize, scores: &[Option<f64>], threshold: f64, radius: usize) -> Vec<(Cell, f64)> {
    let mut live: Vec<Option<f64>> = scores.to_vec();
    let mut out = Vec::new();
    while let Some(i) = brute_argmax(&live) {
        let s = live[i].unwrap();
        if s <= threshold {
            break;
        }
        let (cx, cy) = ((i % size) as i64, (i / size) as i64);
        out.push((Cell::new(cx as usize, cy as usize), s));
        for (j, slot) in live.iter_mut().enumerate() {
            let (x, y) = ((j % size) as i64, (j / size) as i64);
            if (x - cx).abs().max((y - cy).abs()) <= radius as i64 {
                *slot = None;
            }
        }
    }
    out
}

pub fn field_options(field: &SimilarityField) -> Vec<Option<f64>> {
    field
        .scores()
        .iter()
        .zip(field.valid_mask())
        .map(|(&s, &v)| v.then_some(s))
        .collect()
}

// --------------------------------------------------------------------- planner

pub fn random_grid(rng: &mut impl Rng, size: usize, obstacle: f64, unknown: f64) -> Vec<Occupancy> {
    (0..size * size)
        .map(|_| {
            let r: f64 = rng.random();
            if r < obstacle {
                Occupancy::Obstacle
            } else if r < obstacle + unknown {
                Occupancy::Unknown
            } else {
                Occupancy::Free
            }
        })
        .collect()
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Uniform-cost search over free cells, 8-connected, diagonals only when
/// both adjacent cardinals are free. Returns the exact step tally.
pub fn dijkstra(size: usize, cells: &[Occupancy], start: Cell, goal: Cell) -> Option<StepCost> {
    let free = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < size as i64 && y < size as i64 && cells[y as usize * size + x as usize] == Occupancy::Free
    };
    if !free(start.x as i64, start.y as i64) || !free(goal.x as i64, goal.y as i64) {
        return None;
    }
    let mut best: Vec<Option<StepCost>> = vec![None; size * size];
    let mut done = vec![false; size * size];
    let s = start.y * size + start.x;
    best[s] = Some(StepCost::default());
    let mut heap = BinaryHeap::from([Item(0.0, s)]);
    while let Some(Item(_, i)) = heap.pop() {
        if done[i] {
            continue;
        }
        done[i] = true;
        if i == goal.y * size + goal.x {
            return best[i];
        }
        let (x, y) = ((i % size) as i64, (i / size) as i64);
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                if diag && !(free(x + dx, y) && free(x, y + dy)) {
                    continue;
                }
                let j = (y + dy) as usize * size + (x + dx) as usize;
                let mut c = best[i].unwrap();
                if diag {
                    c.diagonal += 1;
                } else {
                    c.cardinal += 1;
                }
                if best[j].is_none_or(|b| c.value() < b.value() - 1e-9) {
                    best[j] = Some(c);
                    heap.push(Item(c.value(), j));
                }
            }
        }
    }
    None
}

pub fn synthetic_posed(records: Vec<FrameRecord>, provider: &dyn EmbeddingProvider) -> Vec<PosedFrame> {
    records
        .into_iter()
        .map(|r| PosedFrame::from_record(r, provider).unwrap())
        .collect()
}
