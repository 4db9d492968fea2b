//! Persistence: map files, trajectory manifests and heatmaps.

pub mod heatmap;
pub mod mapfile;
pub mod trajectory;

pub use heatmap::{export_heatmap, parse_heatmap_csv, HeatmapFormat};
pub use mapfile::{load_map, save_map, MapFileHeader};
pub use trajectory::{
    load_trajectory, write_depth_f32, write_depth_png16, write_manifest, DepthFormat, LoadMode,
    ManifestEntry, TrajectoryLoad, TrajectoryReader,
};
