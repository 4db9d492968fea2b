//! Subcommand definitions and their implementations.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use langmap::affordance::{ChatClient, HttpChatClient, RecordedChatClient, DEFAULT_SYSTEM_PROMPT};
use langmap::embedding::{DEFAULT_D_CLIP, DEFAULT_D_RNR};
use langmap::eval::{run_benchmark, BenchmarkReport, SceneEpisodes};
use langmap::geometry::{Cell, GridSpec, RotoTranslation};
use langmap::io::{export_heatmap, load_map, save_map, HeatmapFormat, TrajectoryReader};
use langmap::map::{build_map_from_records, BuildStats, FeatureMap, MapConfig};
use langmap::query::{DEFAULT_SNAP_RADIUS, DEFAULT_SUPPRESSION_RADIUS, DEFAULT_TEMPERATURE, DEFAULT_THRESHOLD};
use langmap::synthetic::{benchmark_suite, distractor_fixture, throughput_frames, two_peak_scene, write_trajectory};
use langmap::{EmbeddingProvider, Error, ProviderConfig, ProviderKind};

use crate::schema::{map_id, plan_to, run_query, MapInfo, PlanResponse, QueryRequest, QueryResponse};
use crate::service::{serve, AppState, ServiceConfig};

/// Extension used for map files written by `synth --build`.
pub const MAP_EXT: &str = "lmap";

#[derive(Debug, Parser)]
#[command(name = "langmap", version, about = "Build, query and navigate language-queryable feature maps")]
pub struct Cli {
    /// Log filter, as for RUST_LOG.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a trajectory manifest into a map file.
    Build(BuildArgs),
    /// Score a prompt against a map and extract candidates.
    Query(QueryArgs),
    /// Print only the candidate list for a prompt.
    Candidates(QueryArgs),
    /// Plan a path on a map's occupancy grid.
    Plan(PlanArgs),
    /// Run the success/DTS benchmark over a directory of maps.
    Eval(EvalArgs),
    /// Run the HTTP service until interrupted.
    Serve(ServeArgs),
    /// Write synthetic trajectories and episodes.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderChoice {
    Synthetic,
    File,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub provider: ProviderChoice,
    #[arg(long, default_value_t = DEFAULT_D_CLIP)]
    pub d_clip: usize,
    #[arg(long, default_value_t = DEFAULT_D_RNR)]
    pub d_rnr: usize,
    /// Base URL of a remote embedding service.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// JSONL feature manifest for the file provider.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Text embedding cache entries; 0 disables the cache.
    #[arg(long, default_value_t = 1024)]
    pub cache_capacity: usize,
}

impl ProviderArgs {
    pub fn config(&self) -> ProviderConfig {
        ProviderConfig {
            kind: match self.provider {
                ProviderChoice::Synthetic => ProviderKind::Synthetic,
                ProviderChoice::File => ProviderKind::File,
                ProviderChoice::Remote => ProviderKind::Remote,
            },
            d_clip: self.d_clip,
            d_rnr: self.d_rnr,
            endpoint: self.endpoint.clone(),
            features: self.features.clone(),
            cache_capacity: self.cache_capacity,
            ..ProviderConfig::default()
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, Error> {
        self.config().build()
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub grid_size: usize,
    /// Cell edge in metres.
    #[arg(long, default_value_t = 0.1)]
    pub resolution: f64,
    /// Map origin as 16 comma-separated row-major values; identity by default.
    #[arg(long, value_delimiter = ',', num_args = 16)]
    pub origin: Option<Vec<f64>>,
    /// Skip unreadable frames instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub prompt: String,
    /// Negative prompt; repeat for several. Without any, plain cosine is used.
    #[arg(long = "negatives", alias = "negative")]
    pub negatives: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Suppression radius in cells.
    #[arg(long, default_value_t = DEFAULT_SUPPRESSION_RADIUS)]
    pub radius: usize,
    #[arg(long)]
    pub heatmap_out: Option<PathBuf>,
    /// Heatmap format; inferred from the file extension when absent.
    #[arg(long)]
    pub heatmap_format: Option<String>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

fn parse_cell(s: &str) -> Result<Cell, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x = x.trim().parse().map_err(|e| format!("bad x: {e}"))?;
    let y = y.trim().parse().map_err(|e| format!("bad y: {e}"))?;
    Ok(Cell::new(x, y))
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Start cell as x,y.
    #[arg(long, value_parser = parse_cell)]
    pub start: Cell,
    /// Goal cell as x,y.
    #[arg(long, value_parser = parse_cell, conflicts_with = "candidate_json", required_unless_present = "candidate_json")]
    pub goal: Option<Cell>,
    /// Query output from `query --json`; its candidate at `--index` is the goal.
    #[arg(long)]
    pub candidate_json: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = DEFAULT_SNAP_RADIUS)]
    pub snap_radius: usize,
    /// Prompt to face at the goal; taken from the candidate file when absent.
    #[arg(long)]
    pub prompt: Option<String>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NegativesMode {
    On,
    Off,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding `<scene_id>.lmap` files.
    #[arg(long)]
    pub maps_dir: PathBuf,
    /// JSON list of scenes with their episodes and negative prompts.
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub negatives: NegativesMode,
    /// CSV report destination.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, default_value_t = 256)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub resolution: f64,
    #[arg(long, default_value_t = DEFAULT_SNAP_RADIUS)]
    pub snap_radius: usize,
    /// Chat-completions URL for affordance queries.
    #[arg(long, conflicts_with = "chat_fixtures")]
    pub chat_url: Option<String>,
    /// Environment variable holding the chat API key.
    #[arg(long, default_value = "CHAT_API_KEY")]
    pub chat_key_env: String,
    /// Recorded chat responses used instead of a live endpoint.
    #[arg(long)]
    pub chat_fixtures: Option<PathBuf>,
    /// Map files to load at startup.
    #[arg(long)]
    pub preload: Vec<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Benchmark scenes with planted objects plus `episodes.json`.
    Suite,
    /// One scene with the same object in two places.
    TwoPeak,
    /// A true object cell and a floor-dominated distractor.
    Distractor,
    /// Many frames for build timing.
    Throughput,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    #[arg(long, default_value_t = 1000)]
    pub frames: usize,
    #[arg(long, default_value_t = 128)]
    pub pixels: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also build each suite scene into `<out>/maps/<scene>.lmap`.
    #[arg(long)]
    pub build: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Engine(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Engine(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Engine(e.into())
    }
}

impl CliError {
    /// 2 for bad input or unreadable files, 3 when the inputs were fine but
    /// the domain has no answer.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Engine(e) => match e {
                Error::NoGoal
                | Error::NoPath { .. }
                | Error::Snap { .. }
                | Error::NoOrientation
                | Error::Provider { .. }
                | Error::Client(_)
                | Error::Parse { .. } => 3,
                _ => 2,
            },
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read_map(path: &Path) -> CliResult<FeatureMap> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("cannot open map {}: {e}", path.display())))?;
    Ok(load_map(std::io::BufReader::new(file))?)
}

fn write_map(map: &FeatureMap, path: &Path) -> CliResult<u64> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let n = save_map(map, &mut w)?;
    w.flush()?;
    Ok(n)
}

fn print_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> CliResult {
    serde_json::to_writer_pretty(&mut *out, value).map_err(Error::from)?;
    writeln!(out)?;
    Ok(())
}

/// Streams `manifest` into a map under `spec`.
pub fn build_from_manifest(
    manifest: &Path,
    spec: GridSpec,
    provider: &dyn EmbeddingProvider,
    lenient: bool,
) -> CliResult<(FeatureMap, BuildStats)> {
    if !manifest.is_file() {
        return Err(CliError::Usage(format!("manifest {} not found", manifest.display())));
    }
    let reader = TrajectoryReader::open(manifest)?.filter(|r| match r {
        Err(e) if lenient => {
            log::warn!("skipping frame: {e}");
            false
        }
        _ => true,
    });
    let config = MapConfig::new(spec, provider.rnr_dim(), provider.clip_dim());
    Ok(build_map_from_records(reader, provider, &config)?)
}

fn cmd_build(a: &BuildArgs, out: &mut dyn Write) -> CliResult {
    let origin = match &a.origin {
        Some(v) => RotoTranslation::from_row_major(v)?,
        None => RotoTranslation::identity(),
    };
    let spec = GridSpec::new(a.grid_size, a.resolution, origin)?;
    let provider = a.provider.build()?;
    let (map, stats) = build_from_manifest(&a.manifest, spec, provider.as_ref(), a.lenient)?;
    let bytes = write_map(&map, &a.out)?;
    let info = MapInfo::new(map_id(&map), &map, stats);
    if a.json {
        print_json(out, &info)?;
    } else {
        writeln!(
            out,
            "map {} ({}x{}x{}, {} bytes) -> {}\nframes {}  registered_cells {}  valid_points {}  dropped_points {}  build_ms {}",
            info.map_id,
            info.size,
            info.size,
            info.channels,
            bytes,
            a.out.display(),
            stats.frames,
            stats.registered_cells,
            stats.valid_points,
            stats.dropped_points,
            stats.build_ms
        )?;
    }
    Ok(())
}

fn heatmap_format(a: &QueryArgs, path: &Path) -> CliResult<HeatmapFormat> {
    let name = match &a.heatmap_format {
        Some(f) => f.clone(),
        None => path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("pgm")
            .to_owned(),
    };
    Ok(name.parse()?)
}

/// Runs the query subcommand and returns the response it printed.
pub fn query_response(a: &QueryArgs) -> CliResult<QueryResponse> {
    let map = read_map(&a.map)?;
    let provider = a.provider.build()?;
    let req = QueryRequest {
        positive: a.prompt.clone(),
        negatives: a.negatives.clone(),
        temperature: Some(a.temperature),
        threshold: Some(a.threshold),
        radius: Some(a.radius),
    };
    let (resp, field) = run_query(&map_id(&map), &map, &req, provider.as_ref())?;
    if let Some(path) = &a.heatmap_out {
        let fmt = heatmap_format(a, path)?;
        fs::write(path, export_heatmap(&field, fmt))?;
    }
    Ok(resp)
}

fn cmd_query(a: &QueryArgs, out: &mut dyn Write) -> CliResult {
    let resp = query_response(a)?;
    if a.json {
        return print_json(out, &resp);
    }
    writeln!(
        out,
        "{} candidate(s) for '{}' ({:?} field)",
        resp.candidates.len(),
        resp.query.positive,
        resp.kind
    )?;
    for c in &resp.candidates {
        writeln!(out, "{}  ({}, {})  {:.4}", c.id, c.cell.x, c.cell.y, c.score)?;
    }
    Ok(())
}

fn cmd_candidates(a: &QueryArgs, out: &mut dyn Write) -> CliResult {
    let resp = query_response(a)?;
    if a.json {
        return print_json(out, &resp.candidates);
    }
    for c in &resp.candidates {
        writeln!(out, "{} {} {} {}", c.id, c.cell.x, c.cell.y, c.score)?;
    }
    Ok(())
}

pub fn plan_response(a: &PlanArgs) -> CliResult<PlanResponse> {
    let map = read_map(&a.map)?;
    let (target, prompt) = match (&a.goal, &a.candidate_json) {
        (Some(g), _) => (*g, a.prompt.clone()),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let resp: QueryResponse = serde_json::from_str(&text).map_err(Error::from)?;
            let c = resp.candidates.get(a.index).ok_or_else(|| {
                CliError::Usage(format!(
                    "candidate index {} out of range ({} candidates)",
                    a.index,
                    resp.candidates.len()
                ))
            })?;
            (c.cell, a.prompt.clone().or(Some(resp.query.positive)))
        }
        (None, None) => return Err(CliError::Usage("give --goal or --candidate-json".into())),
    };
    match prompt {
        Some(p) => {
            let provider = a.provider.build()?;
            let spec = langmap::QuerySpec::new(p);
            Ok(plan_to(&map, a.start, target, Some((&spec, provider.as_ref())), a.snap_radius)?)
        }
        None => Ok(plan_to(&map, a.start, target, None, a.snap_radius)?),
    }
}

fn cmd_plan(a: &PlanArgs, out: &mut dyn Write) -> CliResult {
    print_json(out, &plan_response(a)?)
}

/// Keeps only the rows for the requested negative-prompt mode.
pub fn filter_report(report: &BenchmarkReport, mode: NegativesMode) -> BenchmarkReport {
    let keep = |neg: bool| match mode {
        NegativesMode::On => neg,
        NegativesMode::Off => !neg,
        NegativesMode::Both => true,
    };
    BenchmarkReport {
        rows: report.rows.iter().filter(|r| keep(r.negatives)).cloned().collect(),
        average: report.average.iter().filter(|r| keep(r.negatives)).cloned().collect(),
        outcomes: report.outcomes.iter().filter(|o| keep(o.negatives)).cloned().collect(),
        missing_scenes: report.missing_scenes.clone(),
    }
}

pub fn eval_report(a: &EvalArgs) -> CliResult<BenchmarkReport> {
    let text = fs::read_to_string(&a.episodes)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", a.episodes.display())))?;
    let scenes: Vec<SceneEpisodes> = serde_json::from_str(&text).map_err(Error::from)?;
    if scenes.iter().all(|s| s.episodes.is_empty()) {
        return Err(CliError::Usage("episode file has no episodes".into()));
    }
    if !a.maps_dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", a.maps_dir.display())));
    }
    let mut maps = BTreeMap::new();
    for s in &scenes {
        let path = a.maps_dir.join(format!("{}.{MAP_EXT}", s.scene_id));
        if path.is_file() {
            maps.insert(s.scene_id.clone(), read_map(&path)?);
        }
    }
    let provider = a.provider.build()?;
    let report = run_benchmark(&scenes, &maps, provider.as_ref())?;
    Ok(filter_report(&report, a.negatives))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let report = eval_report(a)?;
    if let Some(path) = &a.report {
        fs::write(path, report.to_csv())?;
    }
    if a.json {
        print_json(out, &report)
    } else {
        write!(out, "{}", report.to_table())?;
        for s in &report.missing_scenes {
            writeln!(out, "warning: no map for scene {s}")?;
        }
        Ok(())
    }
}

fn chat_client(a: &ServeArgs) -> CliResult<Option<Arc<dyn ChatClient>>> {
    if let Some(path) = &a.chat_fixtures {
        return Ok(Some(Arc::new(RecordedChatClient::load(path)?)));
    }
    Ok(a.chat_url.as_ref().map(|url| {
        let key = std::env::var(&a.chat_key_env).ok();
        Arc::new(HttpChatClient::new(url.clone(), key)) as Arc<dyn ChatClient>
    }))
}

/// Service state as `serve` would build it, with preloaded maps registered.
pub fn serve_state(a: &ServeArgs) -> CliResult<Arc<AppState>> {
    let provider: Arc<dyn EmbeddingProvider> = Arc::from(a.provider.build()?);
    let state = AppState::new(
        provider,
        chat_client(a)?,
        ServiceConfig {
            grid_size: a.grid_size,
            resolution: a.resolution,
            snap_radius: a.snap_radius,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_owned(),
        },
    );
    for path in &a.preload {
        let s = state.insert_map(read_map(path)?);
        log::info!("loaded {} as {}", path.display(), s.map_id);
    }
    Ok(Arc::new(state))
}

fn cmd_serve(a: &ServeArgs) -> CliResult {
    let state = serve_state(a)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(a.bind, state))?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult {
    fs::create_dir_all(&a.out)?;
    match a.kind {
        SynthKind::Suite => {
            let suite = benchmark_suite(a.scenes, a.objects)?;
            let provider = if a.build { Some(a.provider.build()?) } else { None };
            let mut episodes = Vec::with_capacity(suite.len());
            for scene in &suite {
                let manifest = write_trajectory(&a.out.join(&scene.id), &scene.frames()?)?;
                episodes.push(scene.episodes());
                if let Some(p) = &provider {
                    let (map, _) = build_from_manifest(&manifest, scene.grid, p.as_ref(), false)?;
                    write_map(&map, &a.out.join("maps").join(format!("{}.{MAP_EXT}", scene.id)))?;
                }
                writeln!(out, "{}", manifest.display())?;
            }
            let path = a.out.join("episodes.json");
            fs::write(&path, serde_json::to_string_pretty(&episodes).map_err(Error::from)?)?;
            writeln!(out, "{}", path.display())?;
        }
        SynthKind::TwoPeak => {
            let scene = two_peak_scene("chair")?;
            let m = write_trajectory(&a.out, &scene.frames()?)?;
            writeln!(out, "{}  grid {} at {} m", m.display(), scene.grid.size, scene.grid.resolution)?;
        }
        SynthKind::Distractor => {
            let fx = distractor_fixture()?;
            let m = write_trajectory(&a.out, &fx.frames)?;
            writeln!(out, "{}  grid {} at {} m", m.display(), fx.grid.size, fx.grid.resolution)?;
        }
        SynthKind::Throughput => {
            let frames = throughput_frames(a.frames, a.pixels, a.size, a.seed);
            let m = write_trajectory(&a.out, &frames)?;
            writeln!(out, "{}  grid {} at 0.1 m", m.display(), a.size)?;
        }
    }
    Ok(())
}

/// Runs one parsed command, writing its output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Build(a) => cmd_build(a, out),
        Command::Query(a) => cmd_query(a, out),
        Command::Candidates(a) => cmd_candidates(a, out),
        Command::Plan(a) => cmd_plan(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Serve(a) => cmd_serve(a),
        Command::Synth(a) => cmd_synth(a, out),
    }
}
