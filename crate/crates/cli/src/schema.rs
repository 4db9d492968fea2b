//! JSON bodies shared by the HTTP service and the `--json` CLI output, and the
//! pure functions that produce them.

use langmap::affordance::AffordanceSearch;
use langmap::embedding::EmbeddingProvider;
use langmap::geometry::Cell;
use langmap::io::mapfile;
use langmap::map::{BuildStats, FeatureMap};
use langmap::planner::{nearest_traversable, shortest_path, StepCost};
use langmap::query::{
    contrast_field, extract_candidates, select_orientation, FieldKind, Leg, QuerySpec,
    SimilarityField, DEFAULT_FOV_DEG, DEFAULT_ORIENTATION_RANGE_M,
    DEFAULT_SUPPRESSION_RADIUS, DEFAULT_TEMPERATURE, DEFAULT_THRESHOLD,
};
use langmap::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// First 16 hex digits of the SHA-256 of the serialized map.
pub fn map_id(map: &FeatureMap) -> String {
    short_hash(&mapfile::to_bytes(map))
}

/// Content hash of `(map_id, query, cell)`.
pub fn candidate_id(map_id: &str, query: &QuerySpec, cell: Cell) -> String {
    let mut h = Sha256::new();
    h.update(map_id.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(query).expect("query serializes"));
    h.update([0]);
    h.update(format!("{},{}", cell.x, cell.y).as_bytes());
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapInfo {
    pub map_id: String,
    pub size: usize,
    pub resolution: f64,
    pub d_rnr: usize,
    pub d_clip: usize,
    pub channels: usize,
    pub stats: BuildStats,
}

impl MapInfo {
    pub fn new(map_id: String, map: &FeatureMap, stats: BuildStats) -> Self {
        MapInfo {
            map_id,
            size: map.size(),
            resolution: map.spec().resolution,
            d_rnr: map.d_rnr(),
            d_clip: map.d_clip(),
            channels: map.channels(),
            stats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub radius: Option<usize>,
}

impl QueryRequest {
    pub fn spec(&self) -> QuerySpec {
        QuerySpec {
            positive: self.positive.trim().to_owned(),
            negatives: self
                .negatives
                .iter()
                .map(|n| n.trim().to_owned())
                .filter(|n| !n.is_empty())
                .collect(),
            temperature: self.temperature.unwrap_or(DEFAULT_TEMPERATURE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOut {
    pub id: String,
    pub cell: Cell,
    pub score: f64,
    pub world_pose: [f64; 16],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub map_id: String,
    pub query: QuerySpec,
    pub kind: FieldKind,
    pub threshold: f64,
    pub radius: usize,
    pub heatmap_ref: String,
    pub candidates: Vec<CandidateOut>,
}

/// Runs the contrast field and candidate extraction for one request.
pub fn run_query(
    map_id: &str,
    map: &FeatureMap,
    req: &QueryRequest,
    provider: &dyn EmbeddingProvider,
) -> Result<(QueryResponse, SimilarityField)> {
    let query = req.spec();
    let threshold = req.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let radius = req.radius.unwrap_or(DEFAULT_SUPPRESSION_RADIUS);
    let field = contrast_field(map, &query, provider)?;
    let candidates = extract_candidates(&field, map.spec(), threshold, radius)?
        .into_iter()
        .map(|c| CandidateOut {
            id: candidate_id(map_id, &query, c.cell),
            cell: c.cell,
            score: c.score,
            world_pose: c.world_pose.to_row_major(),
        })
        .collect();
    let resp = QueryResponse {
        map_id: map_id.to_owned(),
        kind: field.kind(),
        query,
        threshold,
        radius,
        heatmap_ref: format!("/maps/{map_id}/heatmap"),
        candidates,
    };
    Ok((resp, field))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOut {
    pub waypoints: Vec<Cell>,
    pub length_m: f64,
    pub cost: StepCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub start: Cell,
    /// Requested goal before snapping onto a free cell.
    pub target: Cell,
    pub goal: Cell,
    pub path: PathOut,
    /// Compass heading at the goal; absent when nothing registered is in view.
    pub heading_deg: Option<u32>,
}

/// Snaps `target` onto a free cell, plans from `start`, and when a query is
/// given picks the heading at the goal that best faces it.
pub fn plan_to(
    map: &FeatureMap,
    start: Cell,
    target: Cell,
    query: Option<(&QuerySpec, &dyn EmbeddingProvider)>,
    snap_radius: usize,
) -> Result<PlanResponse> {
    let grid = map.occupancy_grid();
    map.spec().check_cell(start)?;
    let goal = nearest_traversable(&grid, target, snap_radius)?;
    let path = shortest_path(&grid, start, goal)?;
    let heading_deg = match query {
        Some((q, provider)) => {
            let e = provider.embed_text(&q.positive)?;
            match select_orientation(map, goal, &e, DEFAULT_FOV_DEG, DEFAULT_ORIENTATION_RANGE_M) {
                Ok(h) => Some(h),
                Err(Error::NoOrientation) => None,
                Err(e) => return Err(e),
            }
        }
        None => None,
    };
    Ok(PlanResponse {
        start,
        target,
        goal,
        path: PathOut {
            waypoints: path.waypoints,
            length_m: path.length_m,
            cost: path.cost,
        },
        heading_deg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRequest {
    pub candidate_id: String,
    pub start_cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectResponse {
    pub candidate_id: String,
    #[serde(flatten)]
    pub plan: PlanResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiQueryRequest {
    pub prompt: String,
    pub start_cell: Cell,
    #[serde(default)]
    pub negatives: Vec<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegsResponse {
    pub legs: Vec<Leg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceHttpRequest {
    pub query: String,
    pub map_id: String,
    pub start_cell: Cell,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub max_targets: Option<usize>,
    #[serde(default)]
    pub negatives: Vec<String>,
}

pub type AffordanceResponse = AffordanceSearch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}
