//! Language-queryable spatial feature maps.
//!
//! Posed depth frames are projected into an M×M grid whose cells hold a
//! visual feature block followed by a language-aligned block. Text prompts
//! are scored against the language block to produce similarity fields, from
//! which goals and candidates are extracted and reached with A* over the
//! occupancy grid derived during registration.

pub mod affordance;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod map;
pub mod planner;
pub mod query;
pub mod synthetic;

pub use affordance::{
    affordance_search, resolve_affordance, AffordanceRequest, AffordanceResult, AffordanceSearch,
    ChatClient, HttpChatClient, RecordedChatClient,
};
pub use embedding::{Embedding, EmbeddingProvider, ProviderConfig, ProviderKind, SyntheticProvider};
pub use error::{Error, Result};
pub use eval::{evaluate_episode, run_benchmark, BenchmarkReport, Episode, EvalResult, SceneEpisodes};
pub use frame::{FrameRecord, PosedFrame, RnrFeature};
pub use geometry::{
    backproject_depth, grid_to_world, world_to_grid, CameraIntrinsics, Cell, DepthImage, GridSpec,
    RotoTranslation,
};
pub use io::{export_heatmap, load_map, load_trajectory, save_map, HeatmapFormat, LoadMode};
pub use map::{
    build_map, build_map_from_records, register_frame, Aggregation, BuildStats, FeatureMap, MapBuilder, MapConfig,
    Occupancy, OccupancyGrid, OccupancyParams,
};
pub use planner::{nearest_traversable, shortest_path, Path, StepCost};
pub use query::{
    argmax_goal, contrast_field, extract_candidates, multi_object_search, select_orientation,
    similarity_field, Candidate, Leg, LegOutcome, QuerySpec, SearchOptions, SimilarityField,
};
