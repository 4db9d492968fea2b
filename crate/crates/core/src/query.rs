//! Text queries over a feature map: similarity fields, negative-prompt
//! contrast, goal selection, candidate extraction for ambiguous prompts,
//! heading selection and sequential multi-object search.

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::geometry::{grid_to_world, Cell, GridSpec, RotoTranslation};
use crate::map::FeatureMap;
use crate::planner::{nearest_traversable, shortest_path, Path};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_SUPPRESSION_RADIUS: usize = 3;
pub const DEFAULT_FOV_DEG: f64 = 90.0;
pub const DEFAULT_ORIENTATION_RANGE_M: f64 = 3.0;
pub const DEFAULT_SNAP_RADIUS: usize = 10;

/// Headings whose scores differ by less than this are treated as tied.
const HEADING_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl QuerySpec {
    pub fn new(positive: impl Into<String>) -> Self {
        QuerySpec {
            positive: positive.into(),
            negatives: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_negatives<S: Into<String>>(mut self, negatives: impl IntoIterator<Item = S>) -> Self {
        self.negatives = negatives.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive.trim().is_empty() {
            return Err(Error::input("positive prompt must not be empty"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::input("temperature must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Cosine,
    Contrast,
}

/// Per-cell query scores. Unregistered cells are invalid and hold
/// `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityField {
    size: usize,
    scores: Vec<f64>,
    valid: Vec<bool>,
    kind: FieldKind,
}

impl SimilarityField {
    pub fn new(size: usize, scores: Vec<f64>, valid: Vec<bool>, kind: FieldKind) -> Result<Self> {
        if scores.len() != size * size || valid.len() != size * size {
            return Err(Error::input("field size mismatch"));
        }
        let scores = scores
            .into_iter()
            .zip(&valid)
            .map(|(s, &v)| if v { s } else { f64::NEG_INFINITY })
            .collect();
        Ok(SimilarityField {
            size,
            scores,
            valid,
            kind,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn score(&self, cell: Cell) -> Option<f64> {
        let i = cell.y * self.size + cell.x;
        self.valid[i].then_some(self.scores[i])
    }

    pub fn is_valid(&self, cell: Cell) -> bool {
        self.valid[cell.y * self.size + cell.x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `(min, max)` over valid cells.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.scores
            .iter()
            .zip(&self.valid)
            .filter(|(_, &v)| v)
            .fold(None, |acc, (&s, _)| match acc {
                None => Some((s, s)),
                Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub cell: Cell,
    pub score: f64,
    pub world_pose: RotoTranslation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

/// Cosine of the query against the language block of one cell. A registered
/// cell with an all-zero block scores 0.
pub fn cell_cosine(q: &[f32], q_norm: f64, block: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut nn = 0.0f64;
    for (&a, &b) in q.iter().zip(block) {
        dot += a as f64 * b as f64;
        nn += b as f64 * b as f64;
    }
    if nn == 0.0 || q_norm == 0.0 {
        return 0.0;
    }
    (dot / (q_norm * nn.sqrt())).clamp(-1.0, 1.0)
}

pub fn similarity_field(map: &FeatureMap, q: &Embedding) -> Result<SimilarityField> {
    if q.dim() != map.d_clip() {
        return Err(Error::input(format!(
            "query has dim {}, map language block has {}",
            q.dim(),
            map.d_clip()
        )));
    }
    let spec = map.spec();
    let n = spec.cell_count();
    let q_norm = q.norm();
    let mut scores = vec![f64::NEG_INFINITY; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let cell = spec.cell_at(i);
        if map.count(cell) == 0 {
            continue;
        }
        valid[i] = true;
        scores[i] = cell_cosine(q.values(), q_norm, map.clip_block(cell));
    }
    SimilarityField::new(spec.size, scores, valid, FieldKind::Cosine)
}

/// Softmax probability of the positive prompt against the negatives:
/// `exp(s_pos/τ) / Σ_i exp(s_i/τ)`, evaluated in a shift-stable form.
pub fn contrast_score(s_pos: f64, s_negs: &[f64], temperature: f64) -> f64 {
    let mut denom = 1.0;
    for &s in s_negs {
        denom += ((s - s_pos) / temperature).exp();
    }
    1.0 / denom
}

/// Negative-prompt contrast field. With no negatives this is the plain
/// cosine field of the positive prompt.
pub fn contrast_field(
    map: &FeatureMap,
    spec: &QuerySpec,
    provider: &dyn EmbeddingProvider,
) -> Result<SimilarityField> {
    spec.validate()?;
    let pos = provider.embed_text(&spec.positive)?;
    let negatives: Vec<&String> = spec
        .negatives
        .iter()
        .filter(|n| !n.trim().is_empty())
        .collect();
    if negatives.is_empty() {
        return similarity_field(map, &pos);
    }
    let neg_embeddings = negatives
        .iter()
        .map(|n| provider.embed_text(n))
        .collect::<Result<Vec<_>>>()?;
    contrast_from_embeddings(map, &pos, &neg_embeddings, spec.temperature)
}

pub fn contrast_from_embeddings(
    map: &FeatureMap,
    pos: &Embedding,
    negatives: &[Embedding],
    temperature: f64,
) -> Result<SimilarityField> {
    let base = similarity_field(map, pos)?;
    if negatives.is_empty() {
        return Ok(base);
    }
    let neg_fields = negatives
        .iter()
        .map(|e| similarity_field(map, e))
        .collect::<Result<Vec<_>>>()?;
    let mut s_negs = vec![0.0; negatives.len()];
    let scores = (0..base.scores.len())
        .map(|i| {
            if !base.valid[i] {
                return f64::NEG_INFINITY;
            }
            for (s, f) in s_negs.iter_mut().zip(&neg_fields) {
                *s = f.scores[i];
            }
            contrast_score(base.scores[i], &s_negs, temperature)
        })
        .collect();
    SimilarityField::new(base.size, scores, base.valid, FieldKind::Contrast)
}

/// Valid cells sorted by descending score, ties by `(y, x)`.
fn ranked_cells(field: &SimilarityField) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..field.scores.len()).filter(|&i| field.valid[i]).collect();
    // row-major index order is (y, x) order
    idx.sort_by(|&a, &b| field.scores[b].total_cmp(&field.scores[a]).then(a.cmp(&b)));
    idx
}

fn candidate_at(field: &SimilarityField, index: usize, spec: &GridSpec) -> Result<Candidate> {
    let cell = Cell::new(index % field.size, index / field.size);
    Ok(Candidate {
        cell,
        score: field.scores[index],
        world_pose: grid_to_world(cell, 0.0, spec)?,
        heading: None,
    })
}

pub fn argmax_goal(field: &SimilarityField, spec: &GridSpec) -> Result<Candidate> {
    if field.size != spec.size {
        return Err(Error::input("field and grid sizes differ"));
    }
    let mut best: Option<usize> = None;
    for i in 0..field.scores.len() {
        if field.valid[i] && best.is_none_or(|b| field.scores[i] > field.scores[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::NoGoal)?;
    candidate_at(field, best, spec)
}

/// Iterated take-max / suppress-neighborhood: every emitted candidate scores
/// strictly above `threshold` and suppresses all cells within Chebyshev
/// distance `radius` of itself.
pub fn extract_candidates(
    field: &SimilarityField,
    spec: &GridSpec,
    threshold: f64,
    radius: usize,
) -> Result<Vec<Candidate>> {
    if threshold.is_nan() {
        return Err(Error::input("threshold must not be NaN"));
    }
    if radius < 1 {
        return Err(Error::input("suppression radius must be at least 1"));
    }
    if field.size != spec.size {
        return Err(Error::input("field and grid sizes differ"));
    }
    let n = field.size;
    let mut suppressed = vec![false; n * n];
    let mut out = Vec::new();
    for i in ranked_cells(field) {
        if field.scores[i] <= threshold {
            break;
        }
        if suppressed[i] {
            continue;
        }
        out.push(candidate_at(field, i, spec)?);
        let (cx, cy) = (i % n, i / n);
        for y in cy.saturating_sub(radius)..=(cy + radius).min(n - 1) {
            for x in cx.saturating_sub(radius)..=(cx + radius).min(n - 1) {
                suppressed[y * n + x] = true;
            }
        }
    }
    Ok(out)
}

/// Compass bearing in degrees of `to` seen from `from`. North is −y (row 0 is
/// the top of the map), east is +x; bearings grow clockwise.
pub fn bearing_deg(from: Cell, to: Cell) -> f64 {
    let dx = to.x as f64 - from.x as f64;
    let dy = to.y as f64 - from.y as f64;
    dx.atan2(-dy).to_degrees().rem_euclid(360.0)
}

fn angular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Picks the 1° heading whose view cone (`fov_deg` wide, `range_m` deep)
/// around the goal has the highest mean query cosine over registered cells.
pub fn select_orientation(
    map: &FeatureMap,
    goal: Cell,
    q: &Embedding,
    fov_deg: f64,
    range_m: f64,
) -> Result<u32> {
    let spec = map.spec();
    spec.check_cell(goal)?;
    if !map.is_registered(goal) {
        return Err(Error::input("goal cell is not registered"));
    }
    if q.dim() != map.d_clip() {
        return Err(Error::input("query dimension does not match map"));
    }
    if !(fov_deg > 0.0 && fov_deg <= 360.0 && range_m > 0.0) {
        return Err(Error::input("field of view and range must be positive"));
    }
    let half = fov_deg / 2.0;
    let reach = (range_m / spec.resolution).floor() as usize;
    let q_norm = q.norm();
    let mut sums = [0.0f64; 360];
    let mut counts = [0u32; 360];
    let n = spec.size;
    for y in goal.y.saturating_sub(reach)..=(goal.y + reach).min(n - 1) {
        for x in goal.x.saturating_sub(reach)..=(goal.x + reach).min(n - 1) {
            let c = Cell::new(x, y);
            if c == goal || !map.is_registered(c) {
                continue;
            }
            let dist = ((x as f64 - goal.x as f64).powi(2) + (y as f64 - goal.y as f64).powi(2))
                .sqrt()
                * spec.resolution;
            if dist > range_m {
                continue;
            }
            let b = bearing_deg(goal, c);
            let s = cell_cosine(q.values(), q_norm, map.clip_block(c));
            for h in 0..360 {
                if angular_gap(h as f64, b) <= half {
                    sums[h] += s;
                    counts[h] += 1;
                }
            }
        }
    }
    let mut best: Option<(u32, f64)> = None;
    for h in 0..360 {
        if counts[h] == 0 {
            continue;
        }
        let mean = sums[h] / counts[h] as f64;
        if best.is_none_or(|(_, b)| mean > b + HEADING_TIE_EPS) {
            best = Some((h as u32, mean));
        }
    }
    best.map(|(h, _)| h).ok_or(Error::NoOrientation)
}

/// Splits a multi-object prompt on commas, trimming and dropping empties.
pub fn split_prompt(prompt: &str) -> Vec<String> {
    prompt
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Chebyshev radius for snapping goals onto free cells.
    pub snap_radius: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            snap_radius: DEFAULT_SNAP_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum LegOutcome {
    Reached {
        candidate: Candidate,
        /// Free cell the path ends on.
        goal_cell: Cell,
        path: Path,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub query: String,
    pub start: Cell,
    #[serde(flatten)]
    pub outcome: LegOutcome,
}

impl Leg {
    pub fn is_reached(&self) -> bool {
        matches!(self.outcome, LegOutcome::Reached { .. })
    }

    /// Where the next leg starts.
    pub fn end(&self) -> Cell {
        match &self.outcome {
            LegOutcome::Reached { goal_cell, .. } => *goal_cell,
            LegOutcome::Failed { .. } => self.start,
        }
    }
}

fn run_leg(
    map: &FeatureMap,
    spec: &QuerySpec,
    provider: &dyn EmbeddingProvider,
    start: Cell,
    options: &SearchOptions,
) -> Result<(Candidate, Cell, Path)> {
    let field = contrast_field(map, spec, provider)?;
    let candidate = argmax_goal(&field, map.spec())?;
    let grid = map.occupancy_grid();
    let goal_cell = nearest_traversable(&grid, candidate.cell, options.snap_radius)?;
    let path = shortest_path(&grid, start, goal_cell)?;
    Ok((candidate, goal_cell, path))
}

/// Searches each comma-separated item in turn, each leg starting where the
/// previous one ended. A failed leg is recorded and the next leg starts from
/// the last reached position.
pub fn multi_object_search(
    map: &FeatureMap,
    prompt: &str,
    start: Cell,
    template: &QuerySpec,
    provider: &dyn EmbeddingProvider,
    options: &SearchOptions,
) -> Result<Vec<Leg>> {
    let items = split_prompt(prompt);
    if items.is_empty() {
        return Err(Error::input("prompt has no items"));
    }
    multi_object_search_items(map, &items, start, template, provider, options)
}

pub fn multi_object_search_items(
    map: &FeatureMap,
    items: &[String],
    start: Cell,
    template: &QuerySpec,
    provider: &dyn EmbeddingProvider,
    options: &SearchOptions,
) -> Result<Vec<Leg>> {
    map.spec().check_cell(start)?;
    let mut current = start;
    let mut legs = Vec::with_capacity(items.len());
    for item in items {
        let spec = QuerySpec {
            positive: item.clone(),
            ..template.clone()
        };
        let outcome = match run_leg(map, &spec, provider, current, options) {
            Ok((candidate, goal_cell, path)) => LegOutcome::Reached {
                candidate,
                goal_cell,
                path,
            },
            Err(e @ (Error::Io(_) | Error::Provider { .. })) => return Err(e),
            Err(e) => LegOutcome::Failed {
                reason: e.to_string(),
            },
        };
        let leg = Leg {
            query: item.clone(),
            start: current,
            outcome,
        };
        current = leg.end();
        legs.push(leg);
    }
    Ok(legs)
}
