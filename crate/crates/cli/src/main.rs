use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use vitac_core::episode::{episode_stats, read_episode, write_episode};
use vitac_core::frame_codec::WireFrame;
use vitac_core::kinematics::{HandModel, JointState};
use vitac_core::pipeline::{self, TrackRecord, TrackSettings};
use vitac_core::pointcloud::{read_ply, write_ply, CloudXYZF, VisualPipeline};
use vitac_core::pose_tracker::ObjectModel;
use vitac_core::sensor_model::{PadCalibration, TactileFrame};
use vitac_core::sim::{render_episode, sample_object_cloud, GroundTruth, SceneSpec};
use vitac_core::stream_sync::StampedCloud;

const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "vitac", version, about = "Visuo-tactile perception toolkit")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace; VITAC_LOG takes precedence.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    /// Print the report as one JSON object.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the taxel response curve from force-gauge samples.
    Calibrate(CalibrateArgs),
    /// Decode a raw readout capture into frames.
    Decode(DecodeArgs),
    /// Align tactile, camera and joint streams into an episode.
    Sync(SyncArgs),
    /// Add fused visuo-tactile clouds to an episode.
    Fuse(FuseArgs),
    /// Render a synthetic episode and its ground truth.
    Simulate(SimulateArgs),
    /// Track the object pose through an episode from touch alone.
    Track(TrackArgs),
    /// Score tracked poses against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// CSV of `force,reading` rows; a header row is allowed.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pad_id: u8,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// One JSON frame per line.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SyncArgs {
    /// Frame JSONL (as written by `decode`); repeat for more pads.
    #[arg(long, required = true)]
    tactile: Vec<PathBuf>,
    /// Directory of `cam<id>_<timestamp_us>.ply` files; repeatable.
    #[arg(long)]
    cloud: Vec<PathBuf>,
    /// Joint-state JSONL: {"timestamp_us": .., "positions": [..]}.
    #[arg(long)]
    joints: PathBuf,
    /// Calibration JSON to embed; repeat per pad.
    #[arg(long)]
    calib: Vec<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    #[arg(long, default_value_t = 50.0)]
    tol_ms: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    episode: PathBuf,
    /// Hand model JSON (chains and pad mounts).
    #[arg(long)]
    chain: PathBuf,
    /// Visual pipeline JSON: frame, crop box, transform to base.
    #[arg(long = "box")]
    box_config: PathBuf,
    /// Overrides the point count in the box config.
    #[arg(long)]
    nvis: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    /// Seconds.
    #[arg(long, default_value_t = 5.0)]
    dur: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Also write the gripper's hand model JSON here.
    #[arg(long)]
    chain_out: Option<PathBuf>,
    /// Also write an object model PLY sampled from the scene's object.
    #[arg(long)]
    object_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    object_points: usize,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    episode: PathBuf,
    /// Object model point cloud (PLY, object frame).
    #[arg(long)]
    object: PathBuf,
    #[arg(long)]
    chain: PathBuf,
    /// Tracker settings JSON: {"filter": {..}, "prior": {..}}; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

/// Bad invocation: missing inputs, unwritable outputs. Exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn need_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        return Err(usage(format!("input file not found: {}", p.display())));
    }
    Ok(())
}

fn need_dir(p: &Path) -> Result<()> {
    if !p.is_dir() {
        return Err(usage(format!("input directory not found: {}", p.display())));
    }
    Ok(())
}

fn need_out(p: &Path) -> Result<()> {
    let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(usage(format!(
            "output directory does not exist: {} (for {})",
            parent.display(),
            p.display()
        )));
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} does not match the expected schema", p.display()))
}

fn read_jsonl<T: DeserializeOwned>(p: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", p.display(), i + 1))?);
    }
    Ok(out)
}

fn write_jsonl<T: serde::Serialize>(p: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(p: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))
}

/// Prints `report` as JSON or as `key: value` lines.
fn emit(json_mode: bool, report: Value) {
    if json_mode {
        println!("{report}");
        return;
    }
    if let Value::Object(map) = report {
        for (k, v) in map {
            match v {
                Value::String(s) => println!("{k}: {s}"),
                other => println!("{k}: {other}"),
            }
        }
    }
}

fn read_samples(p: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(p)
        .with_context(|| format!("opening {}", p.display()))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{} row {}", p.display(), i + 1))?;
        if row.len() != 2 {
            bail!("{} row {}: expected `force,reading`, got {} fields", p.display(), i + 1, row.len());
        }
        match (row[0].parse::<f64>(), row[1].parse::<f64>()) {
            (Ok(f), Ok(r)) => out.push((f, r)),
            _ if i == 0 => continue,
            _ => bail!("{} row {}: not numeric: {:?}", p.display(), i + 1, row),
        }
    }
    Ok(out)
}

fn calibrate(args: &CalibrateArgs, json_mode: bool) -> Result<()> {
    need_file(&args.samples)?;
    need_out(&args.out)?;
    let samples = read_samples(&args.samples)?;
    let (calib, fit) = pipeline::calibrate(&samples, args.pad_id)?;
    write_json(&args.out, &calib)?;
    emit(
        json_mode,
        json!({
            "pad_id": args.pad_id,
            "a": fit.model.a,
            "b": fit.model.b,
            "r_squared": fit.r_squared,
            "samples_used": fit.samples_used,
            "out": args.out.display().to_string(),
        }),
    );
    Ok(())
}

fn decode(args: &DecodeArgs, json_mode: bool) -> Result<()> {
    need_file(&args.input)?;
    need_out(&args.out)?;
    let bytes = std::fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let (frames, stats) = pipeline::decode_capture(&bytes);
    if stats.resync_events() > 0 {
        warn!("{} resync events while decoding", stats.resync_events());
    }
    write_jsonl(&args.out, &frames)?;
    emit(
        json_mode,
        json!({
            "frames": stats.frames,
            "bytes_skipped": stats.bytes_skipped,
            "crc_mismatches": stats.crc_mismatches,
            "bad_versions": stats.bad_versions,
            "resync_events": stats.resync_events(),
            "out": args.out.display().to_string(),
        }),
    );
    Ok(())
}

/// A tactile JSONL line: a decoded wire frame or a full tactile frame.
#[derive(Deserialize)]
#[serde(untagged)]
enum FrameLine {
    Wire(WireFrame),
    Tactile(Box<TactileFrame>),
}

fn parse_cloud_name(name: &str) -> Option<(u8, u64)> {
    let stem = name.strip_suffix(".ply")?.strip_prefix("cam")?;
    let (id, ts) = stem.split_once('_')?;
    Some((id.parse().ok()?, ts.parse().ok()?))
}

fn read_cloud_dir(dir: &Path) -> Result<Vec<StampedCloud>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if !name.ends_with(".ply") {
            continue;
        }
        let Some((cam_id, timestamp_us)) = parse_cloud_name(&name) else {
            warn!("skipping {}: name is not cam<id>_<timestamp_us>.ply", path.display());
            continue;
        };
        let cloud = read_ply(BufReader::new(File::open(&path)?), "world")
            .with_context(|| format!("reading {}", path.display()))?;
        out.push(StampedCloud {
            cam_id,
            timestamp_us,
            cloud,
        });
    }
    Ok(out)
}

fn sync(args: &SyncArgs, json_mode: bool) -> Result<()> {
    args.tactile.iter().try_for_each(|p| need_file(p))?;
    args.cloud.iter().try_for_each(|p| need_dir(p))?;
    args.calib.iter().try_for_each(|p| need_file(p))?;
    need_file(&args.joints)?;
    need_out(&args.out)?;
    if !(args.tol_ms.is_finite() && args.tol_ms >= 0.0) {
        return Err(usage(format!("--tol-ms must be >= 0, got {}", args.tol_ms)));
    }
    let mut frames = Vec::new();
    for p in &args.tactile {
        for line in read_jsonl::<FrameLine>(p)? {
            frames.push(match line {
                FrameLine::Wire(w) => w.to_tactile_frame(),
                FrameLine::Tactile(t) => *t,
            });
        }
    }
    let mut clouds = Vec::new();
    for dir in &args.cloud {
        clouds.extend(read_cloud_dir(dir)?);
    }
    let joints: Vec<JointState> = read_jsonl(&args.joints)?;
    let calibrations = args
        .calib
        .iter()
        .map(|p| read_json::<PadCalibration>(p))
        .collect::<Result<Vec<_>>>()?;
    info!("{} tactile frames, {} clouds, {} joint samples", frames.len(), clouds.len(), joints.len());
    let tolerance_us = (args.tol_ms * 1000.0).round() as u64;
    let episode = pipeline::sync_streams(frames, clouds, joints, args.rate, tolerance_us, calibrations)?;
    write_episode(&episode, &args.out)?;
    let stats = episode_stats(&episode);
    emit(
        json_mode,
        json!({
            "tuples": stats.tuples,
            "total_ticks": stats.total_ticks,
            "dropped_ticks": episode.metadata.drops.dropped.len(),
            "duration_us": stats.duration_us,
            "max_skew_us": stats.max_skew_us,
            "drop_rates": stats.drop_rates.iter().map(|d| (d.stream.to_string(), json!(d.rate))).collect::<serde_json::Map<_, _>>(),
            "out": args.out.display().to_string(),
        }),
    );
    Ok(())
}

fn fuse(args: &FuseArgs, seed: u64, json_mode: bool) -> Result<()> {
    need_file(&args.episode)?;
    need_file(&args.chain)?;
    need_file(&args.box_config)?;
    need_out(&args.out)?;
    let episode = read_episode(&args.episode)?;
    let hand: HandModel = read_json(&args.chain)?;
    let mut visual: VisualPipeline = read_json(&args.box_config)?;
    if let Some(n) = args.nvis {
        visual.n_vis = n;
    }
    let fused = pipeline::fuse_episode(&episode, &hand, &visual, seed)?;
    write_episode(&fused, &args.out)?;
    let counts: Vec<(usize, usize)> = fused
        .tuples
        .iter()
        .filter_map(|t| t.fused.as_ref().map(|f| (f.visual_count(), f.tactile_count())))
        .collect();
    emit(
        json_mode,
        json!({
            "tuples": fused.tuples.len(),
            "visual_points_min": counts.iter().map(|c| c.0).min().unwrap_or(0),
            "visual_points_max": counts.iter().map(|c| c.0).max().unwrap_or(0),
            "tactile_points": counts.first().map(|c| c.1).unwrap_or(0),
            "out": args.out.display().to_string(),
        }),
    );
    Ok(())
}

fn simulate(args: &SimulateArgs, seed: Option<u64>, json_mode: bool) -> Result<()> {
    need_file(&args.scene)?;
    need_out(&args.out)?;
    need_out(&args.truth)?;
    if let Some(p) = &args.chain_out {
        need_out(p)?;
    }
    if let Some(p) = &args.object_out {
        need_out(p)?;
    }
    let mut scene = SceneSpec::load(&args.scene)?;
    if let Some(s) = seed {
        scene.seed = s;
    }
    let (episode, truth) = render_episode(&scene, args.rate, args.dur)?;
    write_episode(&episode, &args.out)?;
    std::fs::write(&args.truth, truth.to_jsonl()).with_context(|| format!("writing {}", args.truth.display()))?;
    if let Some(p) = &args.chain_out {
        write_json(p, &scene.gripper.hand())?;
    }
    if let Some(p) = &args.object_out {
        let pts = sample_object_cloud(&scene.object, args.object_points, scene.seed)?;
        let cloud = CloudXYZF::from_xyz("object", &pts)?;
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        write_ply(&mut w, &cloud)?;
        w.flush()?;
    }
    emit(
        json_mode,
        json!({
            "tuples": episode.tuples.len(),
            "seed": scene.seed,
            "out": args.out.display().to_string(),
            "truth": args.truth.display().to_string(),
        }),
    );
    Ok(())
}

fn track(args: &TrackArgs, seed: u64, json_mode: bool) -> Result<()> {
    need_file(&args.episode)?;
    need_file(&args.object)?;
    need_file(&args.chain)?;
    if let Some(p) = &args.config {
        need_file(p)?;
    }
    need_out(&args.out)?;
    let episode = read_episode(&args.episode)?;
    let hand: HandModel = read_json(&args.chain)?;
    let settings: TrackSettings = match &args.config {
        Some(p) => read_json(p)?,
        None => TrackSettings::default(),
    };
    let cloud = read_ply(BufReader::new(File::open(&args.object)?), "object")
        .with_context(|| format!("reading {}", args.object.display()))?;
    let object = ObjectModel::new(cloud.xyz())?;
    let records = pipeline::track_episode(&episode, &hand, object, &settings, seed)?;
    write_jsonl(&args.out, &records)?;
    let last = records.last();
    emit(
        json_mode,
        json!({
            "ticks": records.len(),
            "final_translation": last.map(|r| r.pose.translation_array()),
            "final_rotation_wxyz": last.map(|r| r.pose.wxyz()),
            "final_translation_cov_trace": last.map(|r| r.translation_cov_trace),
            "out": args.out.display().to_string(),
        }),
    );
    Ok(())
}

fn eval(args: &EvalArgs, json_mode: bool) -> Result<()> {
    need_file(&args.poses)?;
    need_file(&args.truth)?;
    let records: Vec<TrackRecord> = read_jsonl(&args.poses)?;
    let text = std::fs::read_to_string(&args.truth).with_context(|| format!("reading {}", args.truth.display()))?;
    let truth = GroundTruth::from_jsonl(&text)?;
    let report = pipeline::evaluate(&records, &truth)?;
    emit(json_mode, serde_json::to_value(&report)?);
    Ok(())
}

fn init_logging(level: &str) {
    let filter = std::env::var("VITAC_LOG").unwrap_or_else(|_| level.to_string());
    env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Calibrate(a) => calibrate(a, cli.json),
        Command::Decode(a) => decode(a, cli.json),
        Command::Sync(a) => sync(a, cli.json),
        Command::Fuse(a) => fuse(a, seed, cli.json),
        Command::Simulate(a) => simulate(a, cli.seed, cli.json),
        Command::Track(a) => track(a, seed, cli.json),
        Command::Eval(a) => eval(a, cli.json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    let json_mode = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 };
            if json_mode {
                println!("{}", json!({ "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            if code == 2 {
                eprintln!("run `vitac --help` for usage");
            }
            ExitCode::from(code)
        }
    }
}
