//! The feature map and frame registration.
//!
//! Every cell stores a `d_rnr + d_clip` vector laid out as the visual block
//! (first `d_rnr` channels) followed by the language-aligned block. Cells hold
//! the weighted mean of every point that landed in them, each valid depth
//! pixel contributing weight 1.

use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::embedding::EmbeddingProvider;
use crate::frame::{FrameRecord, PosedFrame, RnrFeature};
use crate::geometry::{is_valid_depth, map_point_to_cell, Cell, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Occupancy {
    Unknown = 0,
    Free = 1,
    Obstacle = 2,
}

impl Occupancy {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Occupancy::Unknown),
            1 => Some(Occupancy::Free),
            2 => Some(Occupancy::Obstacle),
            _ => None,
        }
    }

    /// Obstacle beats free beats unknown.
    pub fn merge(self, other: Occupancy) -> Occupancy {
        self.max(other)
    }
}

/// Height bands (map-frame Y, meters, inclusive) that classify points.
/// Points outside both bands are not registered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyParams {
    pub floor_band: [f64; 2],
    pub obstacle_band: [f64; 2],
}

impl Default for OccupancyParams {
    fn default() -> Self {
        OccupancyParams {
            floor_band: [-0.2, 0.1],
            obstacle_band: [0.1, 2.0],
        }
    }
}

impl OccupancyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: [f64; 2]| b[0].is_finite() && b[1].is_finite() && b[0] <= b[1];
        if !ok(self.floor_band) || !ok(self.obstacle_band) {
            return Err(Error::input("occupancy bands must be finite, non-empty intervals"));
        }
        if self.obstacle_band[0] < self.floor_band[1] {
            return Err(Error::input("obstacle band must lie above the floor band"));
        }
        Ok(())
    }

    /// `None` for heights outside both bands.
    #[inline]
    pub fn classify(&self, height: f64) -> Option<Occupancy> {
        let within = |b: [f64; 2]| height >= b[0] && height <= b[1];
        if within(self.obstacle_band) {
            Some(Occupancy::Obstacle)
        } else if within(self.floor_band) {
            Some(Occupancy::Free)
        } else {
            None
        }
    }
}

/// Per-cell occupancy implied by a set of `(cell, height)` points, obstacle
/// taking priority. Cells are returned in first-seen order.
pub fn derive_occupancy(points: &[(Cell, f64)], params: &OccupancyParams) -> Vec<(Cell, Occupancy)> {
    let mut out: Vec<(Cell, Occupancy)> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for &(cell, h) in points {
        let Some(class) = params.classify(h) else {
            continue;
        };
        match slot.get(&cell) {
            Some(&i) => {
                let entry: &mut (Cell, Occupancy) = &mut out[i];
                entry.1 = entry.1.merge(class);
            }
            None => {
                slot.insert(cell, out.len());
                out.push((cell, class));
            }
        }
    }
    out
}

/// How a revisited cell combines old and new contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// The most recent frame's features replace the stored vector.
    LatestWins,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub spec: GridSpec,
    pub d_rnr: usize,
    pub d_clip: usize,
    pub occupancy: OccupancyParams,
    pub aggregation: Aggregation,
}

impl MapConfig {
    pub fn new(spec: GridSpec, d_rnr: usize, d_clip: usize) -> Self {
        MapConfig {
            spec,
            d_rnr,
            d_clip,
            occupancy: OccupancyParams::default(),
            aggregation: Aggregation::Mean,
        }
    }
}

/// M×M grid of concatenated visual + language-aligned features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub(crate) spec: GridSpec,
    pub(crate) d_rnr: usize,
    pub(crate) d_clip: usize,
    pub(crate) cells: Vec<f32>,
    pub(crate) weight: Vec<f32>,
    pub(crate) count: Vec<u32>,
    pub(crate) occupancy: Vec<Occupancy>,
}

impl FeatureMap {
    pub fn new(spec: GridSpec, d_rnr: usize, d_clip: usize) -> Result<Self> {
        spec.validate()?;
        if d_rnr == 0 || d_clip == 0 {
            return Err(Error::input("feature dimensions must be positive"));
        }
        let n = spec.cell_count();
        Ok(FeatureMap {
            spec,
            d_rnr,
            d_clip,
            cells: vec![0.0; n * (d_rnr + d_clip)],
            weight: vec![0.0; n],
            count: vec![0; n],
            occupancy: vec![Occupancy::Unknown; n],
        })
    }

    /// Assembles a map from raw channels, checking every length.
    pub fn from_parts(
        spec: GridSpec,
        d_rnr: usize,
        d_clip: usize,
        cells: Vec<f32>,
        weight: Vec<f32>,
        count: Vec<u32>,
        occupancy: Vec<Occupancy>,
    ) -> Result<Self> {
        spec.validate()?;
        let n = spec.cell_count();
        if d_rnr == 0
            || d_clip == 0
            || cells.len() != n * (d_rnr + d_clip)
            || weight.len() != n
            || count.len() != n
            || occupancy.len() != n
        {
            return Err(Error::input("feature map channel sizes are inconsistent"));
        }
        Ok(FeatureMap {
            spec,
            d_rnr,
            d_clip,
            cells,
            weight,
            count,
            occupancy,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn size(&self) -> usize {
        self.spec.size
    }

    pub fn d_rnr(&self) -> usize {
        self.d_rnr
    }

    pub fn d_clip(&self) -> usize {
        self.d_clip
    }

    pub fn channels(&self) -> usize {
        self.d_rnr + self.d_clip
    }

    pub fn cell_vector(&self, cell: Cell) -> &[f32] {
        let c = self.channels();
        let i = self.spec.index(cell);
        &self.cells[i * c..(i + 1) * c]
    }

    pub fn clip_block(&self, cell: Cell) -> &[f32] {
        &self.cell_vector(cell)[self.d_rnr..]
    }

    pub fn rnr_block(&self, cell: Cell) -> &[f32] {
        &self.cell_vector(cell)[..self.d_rnr]
    }

    /// Mutable access for tools and tests that synthesize maps directly.
    pub fn cell_vector_mut(&mut self, cell: Cell) -> &mut [f32] {
        let c = self.channels();
        let i = self.spec.index(cell);
        &mut self.cells[i * c..(i + 1) * c]
    }

    pub fn weight(&self, cell: Cell) -> f32 {
        self.weight[self.spec.index(cell)]
    }

    pub fn count(&self, cell: Cell) -> u32 {
        self.count[self.spec.index(cell)]
    }

    pub fn occupancy(&self, cell: Cell) -> Occupancy {
        self.occupancy[self.spec.index(cell)]
    }

    pub fn occupancy_grid(&self) -> OccupancyGrid<'_> {
        OccupancyGrid {
            size: self.spec.size,
            resolution: self.spec.resolution,
            cells: &self.occupancy,
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    pub fn weights(&self) -> &[f32] {
        &self.weight
    }

    pub fn raw_cells(&self) -> &[f32] {
        &self.cells
    }

    pub fn occupancy_cells(&self) -> &[Occupancy] {
        &self.occupancy
    }

    pub fn is_registered(&self, cell: Cell) -> bool {
        self.count(cell) > 0
    }

    pub fn registered_cells(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    /// Marks a cell as observed with a single unit-weight contribution. Meant
    /// for hand-built fixtures; real maps come from registration.
    pub fn set_cell(&mut self, cell: Cell, vector: &[f32], occupancy: Occupancy) -> Result<()> {
        self.spec.check_cell(cell)?;
        if vector.len() != self.channels() {
            return Err(Error::input("vector length does not match map channels"));
        }
        self.cell_vector_mut(cell).copy_from_slice(vector);
        let i = self.spec.index(cell);
        self.weight[i] = 1.0;
        self.count[i] = 1;
        self.occupancy[i] = if occupancy == Occupancy::Unknown {
            Occupancy::Free
        } else {
            occupancy
        };
        Ok(())
    }

    /// Sets occupancy without touching features.
    pub fn set_occupancy(&mut self, cell: Cell, occupancy: Occupancy) {
        let i = self.spec.index(cell);
        self.occupancy[i] = occupancy;
    }
}

/// Borrowed traversability view for the planner.
#[derive(Debug, Clone, Copy)]
pub struct OccupancyGrid<'a> {
    pub size: usize,
    pub resolution: f64,
    pub cells: &'a [Occupancy],
}

impl<'a> OccupancyGrid<'a> {
    pub fn new(size: usize, resolution: f64, cells: &'a [Occupancy]) -> Result<Self> {
        if cells.len() != size * size {
            return Err(Error::input("occupancy grid size mismatch"));
        }
        Ok(OccupancyGrid {
            size,
            resolution,
            cells,
        })
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.size && cell.y < self.size
    }

    pub fn get(&self, cell: Cell) -> Occupancy {
        self.cells[cell.y * self.size + cell.x]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.contains(cell) && self.get(cell) == Occupancy::Free
    }
}

/// Point tallies from registering one or more frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationStats {
    pub valid_points: u64,
    pub registered_points: u64,
    pub dropped_out_of_grid: u64,
    pub dropped_out_of_band: u64,
}

impl RegistrationStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_out_of_grid + self.dropped_out_of_band
    }

    fn add(&mut self, other: &RegistrationStats) {
        self.valid_points += other.valid_points;
        self.registered_points += other.registered_points;
        self.dropped_out_of_grid += other.dropped_out_of_grid;
        self.dropped_out_of_band += other.dropped_out_of_band;
    }
}

/// One frame's points binned per cell, ready to fold into a map.
struct CellRun {
    cell: u32,
    points: u32,
    occupancy: Occupancy,
    /// Mean per-pixel visual feature of the run, when per-pixel features exist.
    rnr_mean: Option<Vec<f32>>,
}

struct Binned {
    runs: Vec<CellRun>,
    stats: RegistrationStats,
}

fn bin_frame(frame: &PosedFrame, config: &MapConfig) -> Result<Binned> {
    frame.validate(config.d_clip, config.d_rnr)?;
    let spec = &config.spec;
    let map_from_cam = spec.origin.compose(&frame.pose);
    let r = map_from_cam.rotation();
    let t = map_from_cam.translation();
    let intr = &frame.intrinsics;
    let depth = &frame.depth;
    let (inv_fx, inv_fy) = (1.0 / intr.fx, 1.0 / intr.fy);

    let mut stats = RegistrationStats::default();
    // (cell, pixel, class)
    let mut hits: Vec<(u32, u32, Occupancy)> = Vec::with_capacity(depth.data.len());
    for v in 0..depth.height {
        let ry = (v as f64 - intr.cy) * inv_fy;
        for u in 0..depth.width {
            let pixel = v * depth.width + u;
            let d = depth.data[pixel];
            if !is_valid_depth(d) {
                continue;
            }
            stats.valid_points += 1;
            let d = d as f64;
            let cam = Vector3::new((u as f64 - intr.cx) * inv_fx * d, ry * d, d);
            let p = Point3::from(r * cam + t);
            let Some(cell) = map_point_to_cell(&p, spec) else {
                stats.dropped_out_of_grid += 1;
                continue;
            };
            let Some(class) = config.occupancy.classify(p.y) else {
                stats.dropped_out_of_band += 1;
                continue;
            };
            hits.push((spec.index(cell) as u32, pixel as u32, class));
        }
    }
    stats.registered_points = hits.len() as u64;
    hits.sort_unstable_by_key(|&(c, p, _)| (c, p));

    let per_pixel = match &frame.f_rnr {
        Some(RnrFeature::PerPixel { dim, values }) => Some((*dim, values.as_slice())),
        _ => None,
    };
    let mut runs = Vec::new();
    let mut i = 0;
    while i < hits.len() {
        let cell = hits[i].0;
        let mut j = i;
        let mut occ = Occupancy::Unknown;
        while j < hits.len() && hits[j].0 == cell {
            occ = occ.merge(hits[j].2);
            j += 1;
        }
        let rnr_mean = per_pixel.map(|(dim, values)| {
            let mut sum = vec![0.0f64; dim];
            for &(_, p, _) in &hits[i..j] {
                let px = &values[p as usize * dim..(p as usize + 1) * dim];
                for (s, &x) in sum.iter_mut().zip(px) {
                    *s += x as f64;
                }
            }
            let n = (j - i) as f64;
            sum.into_iter().map(|s| (s / n) as f32).collect()
        });
        runs.push(CellRun {
            cell,
            points: (j - i) as u32,
            occupancy: occ,
            rnr_mean,
        });
        i = j;
    }
    Ok(Binned { runs, stats })
}

#[inline]
fn blend(dst: &mut [f32], src: &[f32], alpha: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        let m = *d as f64;
        *d = (m + (s as f64 - m) * alpha) as f32;
    }
}

fn apply_binned(map: &mut FeatureMap, frame: &PosedFrame, binned: &Binned, aggregation: Aggregation) {
    let c = map.channels();
    let d_rnr = map.d_rnr;
    let zeros = vec![0.0f32; d_rnr];
    let frame_rnr: &[f32] = match &frame.f_rnr {
        Some(RnrFeature::Frame(e)) => e.values(),
        _ => &zeros,
    };
    let clip = frame.f_clip.values();
    for run in &binned.runs {
        let i = run.cell as usize;
        let n = run.points as f32;
        let w_new = map.weight[i] + n;
        let alpha = match aggregation {
            Aggregation::Mean => run.points as f64 / w_new as f64,
            Aggregation::LatestWins => 1.0,
        };
        let cell = &mut map.cells[i * c..(i + 1) * c];
        let rnr_src = run.rnr_mean.as_deref().unwrap_or(frame_rnr);
        blend(&mut cell[..d_rnr], rnr_src, alpha);
        blend(&mut cell[d_rnr..], clip, alpha);
        map.weight[i] = w_new;
        map.count[i] += run.points;
        map.occupancy[i] = map.occupancy[i].merge(run.occupancy);
    }
}

/// Projects one frame's valid depth pixels into the map and folds its
/// features into the touched cells.
pub fn register_frame(
    map: &mut FeatureMap,
    frame: &PosedFrame,
    params: &OccupancyParams,
    aggregation: Aggregation,
) -> Result<RegistrationStats> {
    params.validate()?;
    let config = MapConfig {
        spec: map.spec,
        d_rnr: map.d_rnr,
        d_clip: map.d_clip,
        occupancy: *params,
        aggregation,
    };
    let binned = bin_frame(frame, &config)?;
    apply_binned(map, frame, &binned, aggregation);
    Ok(binned.stats)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub frames: u64,
    pub registered_cells: u64,
    pub valid_points: u64,
    pub dropped_points: u64,
    pub build_ms: u64,
}

/// Incremental map construction. Frames are binned in parallel batches and
/// folded in submission order, so results match a sequential fold exactly.
pub struct MapBuilder {
    config: MapConfig,
    map: FeatureMap,
    stats: RegistrationStats,
    frames: u64,
    started: Instant,
}

impl MapBuilder {
    pub fn new(config: MapConfig) -> Result<Self> {
        config.occupancy.validate()?;
        Ok(MapBuilder {
            map: FeatureMap::new(config.spec, config.d_rnr, config.d_clip)?,
            config,
            stats: RegistrationStats::default(),
            frames: 0,
            started: Instant::now(),
        })
    }

    pub fn push(&mut self, frame: &PosedFrame) -> Result<()> {
        self.push_batch(std::slice::from_ref(frame))
    }

    pub fn push_batch(&mut self, frames: &[PosedFrame]) -> Result<()> {
        let config = self.config;
        let binned: Vec<Binned> = frames
            .par_iter()
            .map(|f| bin_frame(f, &config))
            .collect::<Result<_>>()?;
        for (frame, b) in frames.iter().zip(&binned) {
            apply_binned(&mut self.map, frame, b, config.aggregation);
            self.stats.add(&b.stats);
            self.frames += 1;
        }
        Ok(())
    }

    pub fn registration_stats(&self) -> &RegistrationStats {
        &self.stats
    }

    pub fn finish(self) -> Result<(FeatureMap, BuildStats)> {
        if self.frames == 0 {
            return Err(Error::input("trajectory is empty"));
        }
        let stats = BuildStats {
            frames: self.frames,
            registered_cells: self.map.registered_cells() as u64,
            valid_points: self.stats.valid_points,
            dropped_points: self.stats.dropped(),
            build_ms: self.started.elapsed().as_millis() as u64,
        };
        Ok((self.map, stats))
    }
}

const BATCH: usize = 32;

/// Folds [`register_frame`] over a trajectory in order.
pub fn build_map(trajectory: &[PosedFrame], config: &MapConfig) -> Result<(FeatureMap, BuildStats)> {
    if trajectory.is_empty() {
        return Err(Error::input("trajectory is empty"));
    }
    let mut builder = MapBuilder::new(*config)?;
    for chunk in trajectory.chunks(BATCH) {
        builder.push_batch(chunk)?;
    }
    builder.finish()
}

/// Embeds and registers raw frame records in bounded batches so the whole
/// trajectory never has to be embedded up front.
pub fn build_map_from_records<I>(
    records: I,
    provider: &dyn EmbeddingProvider,
    config: &MapConfig,
) -> Result<(FeatureMap, BuildStats)>
where
    I: IntoIterator<Item = Result<FrameRecord>>,
{
    let mut builder = MapBuilder::new(*config)?;
    let mut pending = Vec::with_capacity(BATCH);
    let flush = |pending: &mut Vec<FrameRecord>, builder: &mut MapBuilder| -> Result<()> {
        let posed: Vec<PosedFrame> = pending
            .par_drain(..)
            .map(|r| PosedFrame::from_record(r, provider))
            .collect::<Result<_>>()?;
        builder.push_batch(&posed)
    };
    for record in records {
        pending.push(record?);
        if pending.len() == BATCH {
            flush(&mut pending, &mut builder)?;
        }
    }
    if !pending.is_empty() {
        flush(&mut pending, &mut builder)?;
    }
    builder.finish()
}
