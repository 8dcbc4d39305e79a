//! `dpdloc` command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{parse_smoothing, AnalysisConfig, Analyzer, Estimates, DEFAULT_F_HIGH, DEFAULT_F_LOW};
use crate::array::{band_similarity_map, ArrayGeometry, DoaGrid, SteeringSet};
use crate::doa::{Algorithm, SimilarityKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvalConfig, GroundTruth, RunReport, DEFAULT_HIT_THRESHOLD_DEG};
use crate::io::{self, MeasuredSteering, SweepRow};
use crate::sim::{synthesize, SceneSpec};
use crate::stft::{stft, StftConfig, TfAxes};

pub const DEFAULT_P_LIST: [f64; 6] = [1.0, 5.0, 10.0, 20.0, 50.0, 100.0];
pub const DEFAULT_DELTA_T_MS: [f64; 3] = [200.0, 300.0, 500.0];

#[derive(Debug, Parser)]
#[command(name = "dpdloc", version, about = "DOA estimation with direct-path-dominance tests for wearable arrays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene spec to a float WAV and a ground-truth file.
    Simulate(SimulateArgs),
    /// Per-bin DOA/DPD estimates for a WAV recording.
    ///
    /// WAV channel order must match the microphone order of the geometry file.
    Analyze(AnalyzeArgs),
    /// Block-based metrics for an estimates file against ground truth.
    Evaluate(EvaluateArgs),
    /// Analyze and evaluate over every (algorithm, smoothing, delta_T, p).
    Sweep(SweepArgs),
    /// Similarity of one steering vector to all grid directions over frequency.
    BandMap(BandMapArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the geometry named in the scene file; defaults to the
    /// built-in six-mic glasses layout when neither is given.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PipelineArgs {
    /// Geometry TOML (speed_of_sound, mic_positions). Built-in glasses
    /// layout when omitted.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Measured steering set (JSON) used instead of the free-field model.
    #[arg(long)]
    pub steering: Option<PathBuf>,
    /// Comma-separated subset of LSDD,LSDDe,dSDD,dSDDe.
    #[arg(long, value_delimiter = ',')]
    pub algorithms: Vec<String>,
    /// cosine | inverse_residual
    #[arg(long)]
    pub similarity: Option<String>,
    /// Comma-separated smoothing presets: none, three, nine, or r=<R>.
    #[arg(long, value_delimiter = ',')]
    pub smoothing: Vec<String>,
    #[arg(long)]
    pub f_low: Option<f64>,
    #[arg(long)]
    pub f_high: Option<f64>,
    #[arg(long)]
    pub window_size: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    /// TOML run configuration; its values override command-line flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args, Clone, Default)]
pub struct MetricArgs {
    /// Comma-separated block lengths in milliseconds.
    #[arg(long, value_delimiter = ',')]
    pub delta_t_ms: Vec<f64>,
    /// Comma-separated percentages of bins kept by the DPD threshold.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
    #[arg(long)]
    pub hit_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub estimates: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON file with the full per-block reports.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[arg(long)]
    pub f_low: Option<f64>,
    #[arg(long)]
    pub f_high: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Scene spec to simulate; alternative to --wav/--truth.
    #[arg(long, conflicts_with_all = ["wav", "truth"])]
    pub scene: Option<PathBuf>,
    #[arg(long, requires = "truth")]
    pub wav: Option<PathBuf>,
    #[arg(long, requires = "wav")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Args)]
pub struct BandMapArgs {
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub reference_azimuth: f64,
    #[arg(long, default_value_t = 48_000.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 1024)]
    pub window_size: usize,
    /// Highest frequency row to emit.
    #[arg(long, default_value_t = 4000.0)]
    pub f_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Run configuration file; any field present overrides the matching flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Option<PathBuf>,
    pub steering: Option<PathBuf>,
    pub algorithms: Option<Vec<String>>,
    pub similarity: Option<String>,
    pub smoothing: Option<Vec<String>>,
    pub f_low: Option<f64>,
    pub f_high: Option<f64>,
    pub window_size: Option<usize>,
    pub hop: Option<usize>,
    pub delta_t_ms: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub hit_threshold: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Fully resolved settings shared by analyze/evaluate/sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub geometry: ArrayGeometry,
    pub steering: Option<SteeringSet>,
    pub algorithms: Vec<Algorithm>,
    pub similarity: SimilarityKind,
    pub smoothing: Vec<usize>,
    pub f_low: f64,
    pub f_high: f64,
    pub stft: StftConfig,
    pub delta_t_ms: Vec<f64>,
    pub p: Vec<f64>,
    pub hit_threshold: f64,
}

fn pick<T>(file: Option<T>, flag: Option<T>) -> Option<T> {
    file.or(flag)
}

fn nonempty<T: Clone>(v: &[T]) -> Option<Vec<T>> {
    (!v.is_empty()).then(|| v.to_vec())
}

pub fn resolve(pipeline: &PipelineArgs, metrics: &MetricArgs) -> Result<Resolved> {
    let file = match &pipeline.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let geometry = match pick(file.geometry, pipeline.geometry.clone()) {
        Some(p) => ArrayGeometry::load(p)?,
        None => ArrayGeometry::glasses_fixture(),
    };
    let grid = DoaGrid::default();
    let steering = pick(file.steering, pipeline.steering.clone())
        .map(|p| MeasuredSteering::load(p)?.to_set(&grid))
        .transpose()?;
    let algorithms = match pick(file.algorithms, nonempty(&pipeline.algorithms)) {
        Some(list) => list.iter().map(|s| s.trim().parse()).collect::<Result<Vec<Algorithm>>>()?,
        None => Algorithm::ALL.to_vec(),
    };
    if algorithms.is_empty() {
        return Err(Error::invalid("algorithms", "at least one algorithm required"));
    }
    let similarity = match pick(file.similarity, pipeline.similarity.clone()) {
        Some(s) => s.parse()?,
        None => SimilarityKind::Cosine,
    };
    let smoothing = match pick(file.smoothing, nonempty(&pipeline.smoothing)) {
        Some(list) => list.iter().map(|s| parse_smoothing(s.trim())).collect::<Result<Vec<_>>>()?,
        None => vec![0],
    };
    let defaults = StftConfig::default();
    let stft = StftConfig {
        window_size: pick(file.window_size, pipeline.window_size).unwrap_or(defaults.window_size),
        hop: pick(file.hop, pipeline.hop).unwrap_or(defaults.hop),
        ..defaults
    };
    stft.validate()?;
    let resolved = Resolved {
        geometry,
        steering,
        algorithms,
        similarity,
        smoothing,
        f_low: pick(file.f_low, pipeline.f_low).unwrap_or(DEFAULT_F_LOW),
        f_high: pick(file.f_high, pipeline.f_high).unwrap_or(DEFAULT_F_HIGH),
        stft,
        delta_t_ms: pick(file.delta_t_ms, nonempty(&metrics.delta_t_ms)).unwrap_or_else(|| DEFAULT_DELTA_T_MS.to_vec()),
        p: pick(file.p, nonempty(&metrics.p)).unwrap_or_else(|| DEFAULT_P_LIST.to_vec()),
        hit_threshold: pick(file.hit_threshold, metrics.hit_threshold).unwrap_or(DEFAULT_HIT_THRESHOLD_DEG),
    };
    if resolved.delta_t_ms.is_empty() || resolved.p.is_empty() {
        return Err(Error::invalid("sweep", "need at least one (delta_T, p) pair"));
    }
    Ok(resolved)
}

impl Resolved {
    fn analysis_config(&self, smoothing_radius: usize) -> AnalysisConfig {
        AnalysisConfig {
            similarity: self.similarity,
            smoothing_radius,
            f_low: self.f_low,
            f_high: self.f_high,
            algorithms: self.algorithms.clone(),
        }
    }

    fn analyzer(&self, axes: &TfAxes, smoothing_radius: usize) -> Result<Analyzer> {
        let config = self.analysis_config(smoothing_radius);
        match &self.steering {
            Some(set) => Analyzer::with_steering(set, DoaGrid::default(), axes, config),
            None => Analyzer::free_field(&self.geometry, DoaGrid::default(), axes, config),
        }
    }

    fn eval_configs(&self) -> Vec<EvalConfig> {
        self.delta_t_ms
            .iter()
            .flat_map(|&dt| {
                self.p.iter().map(move |&p| EvalConfig {
                    f_low: self.f_low,
                    f_high: self.f_high,
                    delta_t: dt / 1000.0,
                    p,
                    hit_threshold_deg: self.hit_threshold,
                })
            })
            .collect()
    }
}

/// One evaluated configuration with its full report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub row: SweepRow,
    pub report: Option<RunReport>,
}

/// Evaluates every algorithm present in `estimates` for each config.
pub fn evaluate_grid(
    axes: &TfAxes,
    estimates: &Estimates,
    truth: &GroundTruth,
    configs: &[EvalConfig],
    smoothing_r: usize,
) -> Result<Vec<SweepEntry>> {
    let mut out = Vec::new();
    for (&algorithm, list) in &estimates.by_algorithm {
        for cfg in configs {
            cfg.validate()?;
            let report = match evaluate_run(axes, list, truth, cfg) {
                Ok(r) => Some(r),
                Err(Error::NoValidData) => None,
                Err(e) => return Err(e),
            };
            out.push(SweepEntry {
                row: SweepRow {
                    p: cfg.p,
                    delta_t_ms: cfg.delta_t * 1000.0,
                    algorithm,
                    e_bar_deg: report.as_ref().map(|r| r.e_bar_deg),
                    h_bar: report.as_ref().map(|r| r.h_bar),
                    smoothing_r,
                    valid_bins: report.as_ref().map_or(0, |r| r.total_valid_bins),
                    blocks: report.as_ref().map_or(0, |r| r.blocks.len()),
                },
                report,
            });
        }
    }
    Ok(out)
}

/// Logs valid-bin counts per p and flags any increase as p decreases.
fn log_bin_counts(entries: &[SweepEntry]) {
    let mut rows: Vec<&SweepRow> = entries.iter().map(|e| &e.row).collect();
    rows.sort_by(|a, b| {
        (a.algorithm, a.smoothing_r, a.delta_t_ms.to_bits(), a.p.to_bits())
            .cmp(&(b.algorithm, b.smoothing_r, b.delta_t_ms.to_bits(), b.p.to_bits()))
    });
    for w in rows.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.algorithm, a.smoothing_r, a.delta_t_ms.to_bits()) == (b.algorithm, b.smoothing_r, b.delta_t_ms.to_bits())
            && b.p > a.p
            && b.valid_bins < a.valid_bins
        {
            eprintln!("warning: valid-bin count not monotone in p for {} dT={}ms", a.algorithm, a.delta_t_ms);
        }
    }
    for r in rows {
        if r.e_bar_deg.is_none() {
            eprintln!("{} dT={}ms p={}: no valid data", r.algorithm, r.delta_t_ms, r.p);
        } else {
            eprintln!("{} R={} dT={}ms p={}: {} valid bins", r.algorithm, r.smoothing_r, r.delta_t_ms, r.p, r.valid_bins);
        }
    }
}

fn write_sweep(entries: &[SweepEntry], csv: &Path, report: Option<&Path>) -> Result<()> {
    let rows: Vec<SweepRow> = entries.iter().map(|e| e.row.clone()).collect();
    std::fs::write(csv, io::sweep_to_csv(&rows))?;
    if let Some(path) = report {
        std::fs::write(path, serde_json::to_string_pretty(entries).expect("report serializes"))?;
    }
    Ok(())
}

fn scene_geometry(spec: &SceneSpec, scene_path: &Path, override_path: Option<&Path>) -> Result<ArrayGeometry> {
    if let Some(p) = override_path {
        return ArrayGeometry::load(p);
    }
    match &spec.geometry {
        Some(rel) => {
            let base = scene_path.parent().unwrap_or(Path::new("."));
            ArrayGeometry::load(base.join(rel))
        }
        None => Ok(ArrayGeometry::glasses_fixture()),
    }
}

fn load_scene(path: &Path, seed: Option<u64>) -> Result<SceneSpec> {
    let mut spec = SceneSpec::load(path)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    // Relative WAV sources are resolved against the scene file.
    let base = path.parent().unwrap_or(Path::new("."));
    for s in &mut spec.sources {
        if let crate::sim::SignalKind::Wav { path: p, .. } = &mut s.signal {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(spec)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(PathBuf, PathBuf)> {
    let spec = load_scene(&args.scene, args.seed)?;
    spec.validate()?;
    let geometry = scene_geometry(&spec, &args.scene, args.geometry.as_deref())?;
    let scene = synthesize(&spec, &geometry)?;
    std::fs::create_dir_all(&args.out)?;
    let wav = args.out.join("scene.wav");
    let truth = args.out.join("truth.json");
    io::write_wav(&wav, &scene.audio)?;
    scene.truth.save(&truth)?;
    Ok((wav, truth))
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<usize> {
    let cfg = resolve(&args.pipeline, &MetricArgs::default())?;
    let audio = io::read_wav(&args.wav)?;
    if audio.num_channels() != cfg.geometry.num_mics() {
        return Err(Error::ChannelMismatch {
            geometry: cfg.geometry.num_mics(),
            audio: audio.num_channels(),
        });
    }
    let tf = stft(&audio, &cfg.stft)?;
    let radius = cfg.smoothing.first().copied().unwrap_or(0);
    let estimates = cfg.analyzer(tf.axes(), radius)?.analyze(&tf)?;
    io::write_estimates(&args.out, tf.axes(), &estimates)?;
    Ok(estimates.all().count())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Vec<SweepEntry>> {
    let pipeline = PipelineArgs {
        f_low: args.f_low,
        f_high: args.f_high,
        config: args.config.clone(),
        ..PipelineArgs::default()
    };
    let cfg = resolve(&pipeline, &args.metrics)?;
    let (axes, estimates) = io::read_estimates(&args.estimates)?;
    let truth = GroundTruth::load(&args.truth)?.align_to(&axes)?;
    let entries = evaluate_grid(&axes, &estimates, &truth, &cfg.eval_configs(), 0)?;
    log_bin_counts(&entries);
    write_sweep(&entries, &args.out, args.report.as_deref())?;
    Ok(entries)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepEntry>> {
    let mut cfg = resolve(&args.pipeline, &args.metrics)?;
    let (audio, truth) = match (&args.scene, &args.wav, &args.truth) {
        (Some(scene), _, _) => {
            let spec = load_scene(scene, args.seed)?;
            spec.validate()?;
            if args.pipeline.geometry.is_none() {
                cfg.geometry = scene_geometry(&spec, scene, None)?;
            }
            cfg.stft = spec.stft;
            let s = synthesize(&spec, &cfg.geometry)?;
            (s.audio, s.truth)
        }
        (None, Some(wav), Some(truth)) => (io::read_wav(wav)?, GroundTruth::load(truth)?),
        _ => return Err(Error::invalid("input", "need --scene or both --wav and --truth")),
    };
    if audio.num_channels() != cfg.geometry.num_mics() {
        return Err(Error::ChannelMismatch {
            geometry: cfg.geometry.num_mics(),
            audio: audio.num_channels(),
        });
    }
    let tf = stft(&audio, &cfg.stft)?;
    let truth = truth.align_to(tf.axes())?;
    let configs = cfg.eval_configs();
    std::fs::create_dir_all(&args.out_dir)?;
    let mut entries = Vec::new();
    for &r in &cfg.smoothing {
        let estimates = cfg.analyzer(tf.axes(), r)?.analyze(&tf)?;
        entries.extend(evaluate_grid(tf.axes(), &estimates, &truth, &configs, r)?);
    }
    log_bin_counts(&entries);
    write_sweep(
        &entries,
        &args.out_dir.join("sweep.csv"),
        Some(&args.out_dir.join("report.json")),
    )?;
    Ok(entries)
}

pub fn cmd_band_map(args: &BandMapArgs) -> Result<()> {
    let geometry = match &args.geometry {
        Some(p) => ArrayGeometry::load(p)?,
        None => ArrayGeometry::glasses_fixture(),
    };
    if !(args.sample_rate > 0.0 && args.window_size >= 2 && args.f_max >= 0.0) {
        return Err(Error::invalid("band-map", "need sample_rate > 0, window_size >= 2, f_max >= 0"));
    }
    let grid = DoaGrid::default();
    grid.index_of(args.reference_azimuth)?;
    let df = args.sample_rate / args.window_size as f64;
    let freqs: Vec<f64> = (0..=args.window_size / 2)
        .map(|k| k as f64 * df)
        .take_while(|&f| f <= args.f_max + 1e-9)
        .collect();
    let set = SteeringSet::build(&geometry, &grid, &freqs)?;
    let map = band_similarity_map(&set, &grid, args.reference_azimuth)?;
    std::fs::write(&args.out, io::band_map_to_csv(&map))?;
    Ok(())
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|(wav, truth)| {
            println!("{}", wav.display());
            println!("{}", truth.display());
        }),
        Command::Analyze(a) => cmd_analyze(a).map(|n| {
            println!("{} ({n} estimates)", a.out.display());
        }),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| println!("{}", a.out.display())),
        Command::Sweep(a) => cmd_sweep(a).map(|_| println!("{}", a.out_dir.join("sweep.csv").display())),
        Command::BandMap(a) => cmd_band_map(a).map(|_| println!("{}", a.out.display())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() { 2 } else { 1 }
        }
    }
}
