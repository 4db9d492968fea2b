//! Generated scenes with planted objects, seen by downward-looking cameras.
//!
//! Floor frames tile the room at camera height 1.5 m and see the floor
//! (height 0). Each object gets its own frame that sees its top surface at
//! [`OBJECT_HEIGHT`], which the default bands classify as an obstacle. Floor
//! frames leave object footprints unobserved, so object cells hold only their
//! own label's embedding.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::embedding::XorShift64Star;
use crate::error::{Error, Result};
use crate::eval::{EpisodeSpec, SceneEpisodes, DEFAULT_SUCCESS_RADIUS};
use crate::frame::FrameRecord;
use crate::geometry::{world_to_grid, CameraIntrinsics, Cell, DepthImage, GridSpec, RotoTranslation};
use crate::io::trajectory::{write_depth_f32, write_manifest, ManifestEntry};

pub const FLOOR_LABEL: &str = "floor";
pub const OBJECT_HEIGHT: f64 = 0.5;
const FLOOR_CAMERA_HEIGHT: f64 = 1.5;
const OBJECT_CAMERA_HEIGHT: f64 = 1.0;
const FLOOR_TILE_M: f64 = 1.0;
const FLOOR_PIXELS: usize = 64;
const OBJECT_PIXELS: usize = 32;

pub const OBJECT_LABELS: &[&str] = &[
    "couch", "chair", "bed", "toilet", "tv", "sink", "plant", "oven", "refrigerator", "table",
    "bookshelf", "bathtub", "lamp", "piano", "clock", "vase", "microwave", "dresser", "mirror",
    "fireplace",
];

pub const NEGATIVE_SETS: &[&[&str]] = &[
    &["wc"],
    &["the floor inside the house", "the wall inside the house"],
    &["the floor inside the house"],
    &["things", "stuff", "textures", "objects"],
    &["floor"],
    &["floor", "wall"],
];

/// Camera looking straight down: image right is world +X, image down is
/// world +Z, the optical axis is world −Y.
pub fn downward_rotation() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
}

pub fn downward_pose(x: f64, height: f64, z: f64) -> RotoTranslation {
    RotoTranslation::from_parts(downward_rotation(), Vector3::new(x, height, z))
        .expect("downward rotation is orthonormal")
}

/// Square intrinsics whose image covers `footprint` meters at `depth`.
pub fn footprint_intrinsics(pixels: usize, footprint: f64, depth: f64) -> CameraIntrinsics {
    let f = pixels as f64 * depth / footprint;
    let c = (pixels as f64 - 1.0) / 2.0;
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: c,
        cy: c,
        width: pixels,
        height: pixels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub label: String,
    /// Top-left cell of the square footprint.
    pub cell: Cell,
    /// Footprint side in cells.
    pub extent: usize,
}

impl PlantedObject {
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.extent)
            .flat_map(move |dy| (0..self.extent).map(move |dx| Cell::new(self.cell.x + dx, self.cell.y + dy)))
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.cell.x
            && c.y >= self.cell.y
            && c.x < self.cell.x + self.extent
            && c.y < self.cell.y + self.extent
    }

    /// World center of the footprint, at the object's top surface.
    pub fn center(&self, spec: &GridSpec) -> [f64; 3] {
        let half = self.extent as f64 / 2.0;
        let local = Point3::new(
            (self.cell.x as f64 + half) * spec.resolution,
            OBJECT_HEIGHT,
            (self.cell.y as f64 + half) * spec.resolution,
        );
        let w = spec.origin.inverse().transform_point(&local);
        [w.x, w.y, w.z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub grid: GridSpec,
    /// Side of the square observed room, in meters, starting at the origin.
    pub room_m: f64,
    pub objects: Vec<PlantedObject>,
    pub negatives: Vec<String>,
}

impl SceneSpec {
    pub fn new(id: impl Into<String>, size: usize, resolution: f64, room_m: f64) -> Result<Self> {
        let grid = GridSpec::new(size, resolution, RotoTranslation::identity())?;
        if !(room_m > 0.0 && room_m <= size as f64 * resolution) {
            return Err(Error::input("room must fit in the grid"));
        }
        Ok(SceneSpec {
            id: id.into(),
            grid,
            room_m,
            objects: Vec::new(),
            negatives: Vec::new(),
        })
    }

    pub fn with_object(mut self, label: &str, cell: Cell, extent: usize) -> Self {
        self.objects.push(PlantedObject {
            label: label.into(),
            cell,
            extent,
        });
        self
    }

    fn object_at(&self, c: Cell) -> bool {
        self.objects.iter().any(|o| o.contains(c))
    }

    /// Floor tiles followed by one frame per object.
    pub fn frames(&self) -> Result<Vec<FrameRecord>> {
        let mut frames = Vec::new();
        let tiles = (self.room_m / FLOOR_TILE_M).ceil() as usize;
        let intr = footprint_intrinsics(FLOOR_PIXELS, FLOOR_TILE_M, FLOOR_CAMERA_HEIGHT);
        for ty in 0..tiles {
            for tx in 0..tiles {
                let pose = downward_pose(
                    (tx as f64 + 0.5) * FLOOR_TILE_M,
                    FLOOR_CAMERA_HEIGHT,
                    (ty as f64 + 0.5) * FLOOR_TILE_M,
                );
                let mut data = vec![FLOOR_CAMERA_HEIGHT as f32; FLOOR_PIXELS * FLOOR_PIXELS];
                for v in 0..FLOOR_PIXELS {
                    for u in 0..FLOOR_PIXELS {
                        let p = pose.transform_point(&Point3::new(
                            (u as f64 - intr.cx) / intr.fx * FLOOR_CAMERA_HEIGHT,
                            (v as f64 - intr.cy) / intr.fy * FLOOR_CAMERA_HEIGHT,
                            FLOOR_CAMERA_HEIGHT,
                        ));
                        let outside_room = p.x >= self.room_m || p.z >= self.room_m;
                        let hidden = match world_to_grid(&p, &self.grid)? {
                            Some(c) => self.object_at(c),
                            None => true,
                        };
                        if outside_room || hidden {
                            data[v * FLOOR_PIXELS + u] = 0.0;
                        }
                    }
                }
                let depth = DepthImage::new(FLOOR_PIXELS, FLOOR_PIXELS, data)?;
                frames.push(
                    FrameRecord::new(format!("{}-floor-{ty}-{tx}", self.id), depth, intr, pose)
                        .with_labels([FLOOR_LABEL]),
                );
            }
        }
        let depth = (OBJECT_CAMERA_HEIGHT - OBJECT_HEIGHT) as f32;
        for (k, o) in self.objects.iter().enumerate() {
            let side = o.extent as f64 * self.grid.resolution;
            let intr = footprint_intrinsics(OBJECT_PIXELS, side, depth as f64);
            let c = o.center(&self.grid);
            frames.push(
                FrameRecord::new(
                    format!("{}-object-{k}", self.id),
                    DepthImage::filled(OBJECT_PIXELS, OBJECT_PIXELS, depth),
                    intr,
                    downward_pose(c[0], OBJECT_CAMERA_HEIGHT, c[2]),
                )
                .with_labels([o.label.as_str()]),
            );
        }
        Ok(frames)
    }

    pub fn episodes(&self) -> SceneEpisodes {
        SceneEpisodes {
            scene_id: self.id.clone(),
            episodes: self
                .objects
                .iter()
                .map(|o| EpisodeSpec {
                    id: None,
                    target_label: o.label.clone(),
                    gt_position: o.center(&self.grid),
                    success_radius: DEFAULT_SUCCESS_RADIUS,
                })
                .collect(),
            negatives: self.negatives.clone(),
        }
    }
}

/// A 48×48, 0.1 m scene with `objects` distinct labels on non-touching 3×3
/// footprints inside a 4 m room. Deterministic in `seed`.
pub fn random_scene(id: impl Into<String>, seed: u64, objects: usize) -> Result<SceneSpec> {
    const EXTENT: usize = 3;
    const GAP: usize = 2;
    if objects > OBJECT_LABELS.len() {
        return Err(Error::input("not enough distinct object labels"));
    }
    let mut rng = XorShift64Star::new(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1);
    let mut scene = SceneSpec::new(id, 48, 0.1, 4.0)?;
    let room_cells = 40;
    let mut labels: Vec<&str> = OBJECT_LABELS.to_vec();
    for i in (1..labels.len()).rev() {
        labels.swap(i, (rng.next_u64() % (i as u64 + 1)) as usize);
    }
    let mut attempts = 0;
    while scene.objects.len() < objects {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::input("could not place objects"));
        }
        let span = (room_cells - EXTENT - 2) as u64;
        let cell = Cell::new(1 + (rng.next_u64() % span) as usize, 1 + (rng.next_u64() % span) as usize);
        let clear = scene.objects.iter().all(|o| {
            let sep = |a: usize, b: usize| a + EXTENT + GAP <= b || b + EXTENT + GAP <= a;
            sep(o.cell.x, cell.x) || sep(o.cell.y, cell.y)
        });
        if clear {
            let label = labels[scene.objects.len()];
            scene = scene.with_object(label, cell, EXTENT);
        }
    }
    let set = NEGATIVE_SETS[(rng.next_u64() % NEGATIVE_SETS.len() as u64) as usize];
    scene.negatives = set.iter().map(|s| s.to_string()).collect();
    Ok(scene)
}

pub fn benchmark_suite(scenes: usize, objects: usize) -> Result<Vec<SceneSpec>> {
    (0..scenes)
        .map(|i| random_scene(format!("scene{i:02}"), i as u64 + 1, objects))
        .collect()
}

/// Two identical labels far apart in an otherwise empty room.
pub fn two_peak_scene(label: &str) -> Result<SceneSpec> {
    Ok(SceneSpec::new("two-peak", 32, 0.1, 3.0)?
        .with_object(label, Cell::new(4, 4), 3)
        .with_object(label, Cell::new(22, 20), 3))
}

/// A couch cell next to a distractor cell mixing couch and floor
/// observations 1:4 by point count, on an 8×8 grid at 0.25 m.
#[derive(Debug, Clone)]
pub struct DistractorFixture {
    pub grid: GridSpec,
    pub frames: Vec<FrameRecord>,
    pub planted: Cell,
    pub distractor: Cell,
    pub positive: String,
    pub negatives: Vec<String>,
}

pub fn distractor_fixture() -> Result<DistractorFixture> {
    let grid = GridSpec::new(8, 0.25, RotoTranslation::identity())?;
    let planted = Cell::new(1, 1);
    let distractor = Cell::new(6, 6);
    let room = 2.0;
    // 64 px over 2 m: 8×8 floor points per cell
    let intr = footprint_intrinsics(64, room, FLOOR_CAMERA_HEIGHT);
    let pose = downward_pose(room / 2.0, FLOOR_CAMERA_HEIGHT, room / 2.0);
    let mut data = vec![FLOOR_CAMERA_HEIGHT as f32; 64 * 64];
    for v in 0..64 {
        for u in 0..64 {
            let p = pose.transform_point(&Point3::new(
                (u as f64 - intr.cx) / intr.fx * FLOOR_CAMERA_HEIGHT,
                (v as f64 - intr.cy) / intr.fy * FLOOR_CAMERA_HEIGHT,
                FLOOR_CAMERA_HEIGHT,
            ));
            if world_to_grid(&p, &grid)? == Some(planted) {
                data[v * 64 + u] = 0.0;
            }
        }
    }
    let mut frames = vec![FrameRecord::new("floor", DepthImage::new(64, 64, data)?, intr, pose)
        .with_labels([FLOOR_LABEL])];
    // 4×4 couch points per object frame
    let depth = OBJECT_CAMERA_HEIGHT - OBJECT_HEIGHT;
    for (id, cell) in [("couch", planted), ("couch-on-floor", distractor)] {
        let center = |k: usize| (k as f64 + 0.5) * grid.resolution;
        frames.push(
            FrameRecord::new(
                id,
                DepthImage::filled(4, 4, depth as f32),
                footprint_intrinsics(4, grid.resolution, depth),
                downward_pose(center(cell.x), OBJECT_CAMERA_HEIGHT, center(cell.y)),
            )
            .with_labels(["couch"]),
        );
    }
    Ok(DistractorFixture {
        grid,
        frames,
        planted,
        distractor,
        positive: "couch".into(),
        negatives: vec!["the floor inside the house".into()],
    })
}

/// Frames for a throughput run: `count` downward frames of `pixels`² scattered
/// over a grid of `size` cells at 0.1 m, with a rotating set of labels.
pub fn throughput_frames(count: usize, pixels: usize, size: usize, seed: u64) -> Vec<FrameRecord> {
    let mut rng = XorShift64Star::new(seed | 1);
    let extent = size as f64 * 0.1;
    let intr = footprint_intrinsics(pixels, 2.0, FLOOR_CAMERA_HEIGHT);
    (0..count)
        .map(|i| {
            let x = 1.0 + (rng.next_signed_unit() + 1.0) / 2.0 * (extent - 2.0);
            let z = 1.0 + (rng.next_signed_unit() + 1.0) / 2.0 * (extent - 2.0);
            let data = (0..pixels * pixels)
                .map(|_| (FLOOR_CAMERA_HEIGHT - 0.6 * (rng.next_u64() % 2) as f64) as f32)
                .collect();
            FrameRecord::new(
                format!("t{i:05}"),
                DepthImage::new(pixels, pixels, data).expect("raster size"),
                intr,
                downward_pose(x, FLOOR_CAMERA_HEIGHT, z),
            )
            .with_labels([OBJECT_LABELS[i % OBJECT_LABELS.len()]])
        })
        .collect()
}

/// Writes `frames` as f32 depth rasters plus `trajectory.jsonl` in `dir`.
pub fn write_trajectory(dir: &Path, frames: &[FrameRecord]) -> Result<std::path::PathBuf> {
    fs::create_dir_all(dir.join("depth"))?;
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let rel = Path::new("depth").join(format!("{}.f32", f.id));
        write_depth_f32(&dir.join(&rel), &f.depth)?;
        entries.push(ManifestEntry {
            id: f.id.clone(),
            depth_path: rel,
            depth_format: None,
            intrinsics: f.intrinsics,
            pose: f.pose.to_row_major().to_vec(),
            f_clip_ref: f.clip_ref.clone(),
            f_rnr_ref: f.rnr_ref.clone(),
            labels: f.labels.clone(),
            rgb_path: f.rgb_path.clone(),
        });
    }
    let manifest = dir.join("trajectory.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
