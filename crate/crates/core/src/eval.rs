//! Success / DTS evaluation and the per-scene benchmark table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::geometry::{grid_to_world, Cell};
use crate::map::FeatureMap;
use crate::query::{argmax_goal, contrast_field, QuerySpec};

pub const DEFAULT_SUCCESS_RADIUS: f64 = 1.0;

fn default_radius() -> f64 {
    DEFAULT_SUCCESS_RADIUS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    #[serde(default)]
    pub id: String,
    pub scene_id: String,
    pub target_label: String,
    pub gt_position: [f64; 3],
    #[serde(default)]
    pub negatives: Vec<String>,
    #[serde(default = "default_radius")]
    pub success_radius: f64,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if !(self.success_radius.is_finite() && self.success_radius > 0.0) {
            return Err(Error::input("success_radius must be positive"));
        }
        if self.gt_position.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("gt_position must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success: bool,
    pub dts: f64,
    /// World position of the predicted goal; absent when the map yielded none.
    pub predicted: Option<[f64; 3]>,
    pub distance: f64,
    /// Set when no goal was found. `distance` is then measured from the map
    /// center cell.
    #[serde(default)]
    pub no_goal: bool,
}

/// Distance in the map plane (world X/Z); height is ignored.
pub fn planar_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).hypot(a[2] - b[2])
}

pub fn score_distance(distance: f64, radius: f64) -> (bool, f64) {
    (distance <= radius, (distance - radius).max(0.0))
}

fn cell_position(map: &FeatureMap, cell: Cell) -> Result<[f64; 3]> {
    let t = grid_to_world(cell, 0.0, map.spec())?.transform_point(&Point3::origin());
    Ok([t.x, t.y, t.z])
}

pub fn evaluate_episode(
    map: &FeatureMap,
    ep: &Episode,
    use_negatives: bool,
    provider: &dyn EmbeddingProvider,
) -> Result<EvalResult> {
    ep.validate()?;
    let mut spec = QuerySpec::new(ep.target_label.clone());
    if use_negatives {
        spec = spec.with_negatives(ep.negatives.iter().cloned());
    }
    let field = contrast_field(map, &spec, provider)?;
    let (predicted, no_goal) = match argmax_goal(&field, map.spec()) {
        Ok(c) => (cell_position(map, c.cell)?, false),
        Err(Error::NoGoal) => {
            let mid = map.size() / 2;
            (cell_position(map, Cell::new(mid, mid))?, true)
        }
        Err(e) => return Err(e),
    };
    let distance = planar_distance(&predicted, &ep.gt_position);
    let (success, dts) = score_distance(distance, ep.success_radius);
    Ok(EvalResult {
        success: success && !no_goal,
        dts,
        predicted: (!no_goal).then_some(predicted),
        distance,
        no_goal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub target_label: String,
    pub gt_position: [f64; 3],
    #[serde(default = "default_radius")]
    pub success_radius: f64,
}

/// One scene's episodes sharing a negative-prompt set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEpisodes {
    pub scene_id: String,
    pub episodes: Vec<EpisodeSpec>,
    #[serde(default)]
    pub negatives: Vec<String>,
}

impl SceneEpisodes {
    pub fn expand(&self) -> Vec<Episode> {
        self.episodes
            .iter()
            .enumerate()
            .map(|(i, e)| Episode {
                id: e.id.clone().unwrap_or_else(|| format!("{}-{i:03}", self.scene_id)),
                scene_id: self.scene_id.clone(),
                target_label: e.target_label.clone(),
                gt_position: e.gt_position,
                negatives: self.negatives.clone(),
                success_radius: e.success_radius,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: Episode,
    pub negatives: bool,
    pub result: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene: String,
    pub negatives: bool,
    pub episodes: usize,
    /// `None` for scenes without a map.
    pub success: Option<f64>,
    pub dts: Option<f64>,
    pub no_goal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    /// Mean of the per-scene values over scenes with a map, one row per mode.
    pub average: Vec<ReportRow>,
    pub outcomes: Vec<EpisodeOutcome>,
    pub missing_scenes: Vec<String>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates every scene with negatives off and on. Scenes are reported in
/// `scene_id` order; scenes without a map get an empty warning row.
pub fn run_benchmark(
    scenes: &[SceneEpisodes],
    maps: &BTreeMap<String, FeatureMap>,
    provider: &dyn EmbeddingProvider,
) -> Result<BenchmarkReport> {
    let mut sorted: Vec<&SceneEpisodes> = scenes.iter().collect();
    sorted.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let mut report = BenchmarkReport {
        rows: Vec::new(),
        average: Vec::new(),
        outcomes: Vec::new(),
        missing_scenes: Vec::new(),
    };
    for scene in sorted {
        let episodes = scene.expand();
        let Some(map) = maps.get(&scene.scene_id) else {
            log::warn!("no map for scene {}, skipping", scene.scene_id);
            report.missing_scenes.push(scene.scene_id.clone());
            for negatives in [false, true] {
                report.rows.push(ReportRow {
                    scene: scene.scene_id.clone(),
                    negatives,
                    episodes: episodes.len(),
                    success: None,
                    dts: None,
                    no_goal: 0,
                });
            }
            continue;
        };
        for negatives in [false, true] {
            let mut results = Vec::with_capacity(episodes.len());
            for ep in &episodes {
                let result = evaluate_episode(map, ep, negatives, provider)?;
                results.push(result.clone());
                report.outcomes.push(EpisodeOutcome {
                    episode: ep.clone(),
                    negatives,
                    result,
                });
            }
            report.rows.push(ReportRow {
                scene: scene.scene_id.clone(),
                negatives,
                episodes: results.len(),
                success: mean(results.iter().map(|r| if r.success { 1.0 } else { 0.0 })),
                dts: mean(results.iter().map(|r| r.dts)),
                no_goal: results.iter().filter(|r| r.no_goal).count(),
            });
        }
    }
    for negatives in [false, true] {
        let rows: Vec<&ReportRow> = report
            .rows
            .iter()
            .filter(|r| r.negatives == negatives && r.success.is_some())
            .collect();
        report.average.push(ReportRow {
            scene: "Average".into(),
            negatives,
            episodes: rows.iter().map(|r| r.episodes).sum(),
            success: mean(rows.iter().filter_map(|r| r.success)),
            dts: mean(rows.iter().filter_map(|r| r.dts)),
            no_goal: rows.iter().map(|r| r.no_goal).sum(),
        });
    }
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.2}"))
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,negative_prompts,success,dts,episodes,no_goal\n");
        for r in self.rows.iter().chain(&self.average) {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scene,
                if r.negatives { "yes" } else { "no" },
                r.success.map_or(String::new(), |v| v.to_string()),
                r.dts.map_or(String::new(), |v| v.to_string()),
                r.episodes,
                r.no_goal
            )
            .unwrap();
        }
        out
    }

    /// Text table with the columns `Scene | Negative Prompts | Success ↑ | DTS ↓`.
    pub fn to_table(&self) -> String {
        let header = ["Scene", "Negative Prompts", "Success ↑", "DTS ↓"];
        let mut lines: Vec<[String; 4]> = Vec::new();
        let mut last_scene = None;
        for r in self.rows.iter().chain(&self.average) {
            let scene = if last_scene == Some(&r.scene) {
                String::new()
            } else {
                r.scene.clone()
            };
            last_scene = Some(&r.scene);
            let mut success = fmt_opt(r.success);
            if r.no_goal > 0 {
                success.push_str(&format!(" ({} no-goal)", r.no_goal));
            }
            lines.push([
                scene,
                if r.negatives { "✓" } else { "✗" }.into(),
                success,
                fmt_opt(r.dts),
            ]);
        }
        let width = |i: usize| {
            lines
                .iter()
                .map(|l| l[i].chars().count())
                .chain([header[i].chars().count()])
                .max()
                .unwrap()
        };
        let widths: Vec<usize> = (0..4).map(width).collect();
        let row = |cells: [&str; 4]| {
            let mut s = String::from("|");
            for (c, w) in cells.iter().zip(&widths) {
                let pad = w - c.chars().count();
                write!(s, " {c}{} |", " ".repeat(pad)).unwrap();
            }
            s.push('\n');
            s
        };
        let rule = {
            let mut s = String::from("|");
            for w in &widths {
                s.push_str(&"-".repeat(w + 2));
                s.push('|');
            }
            s.push('\n');
            s
        };
        let mut out = row(header);
        out.push_str(&rule);
        for l in &lines {
            out.push_str(&row([&l[0], &l[1], &l[2], &l[3]]));
        }
        out
    }
}
