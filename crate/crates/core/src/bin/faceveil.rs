use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use faceveil::bench::{run_bench, BenchConfig};
use faceveil::metrics::{GroundTruth, MetricsReport};
use faceveil::model::write_stream;
use faceveil::pipeline::{run, PipelineConfig, RunConfig};
use faceveil::pixelate::{read_mask_log, save_frame};
use faceveil::synth::{generate, render_frame, Resolution, ScenarioSpec};
use faceveil::trajectory::read_trajectories;
use faceveil::Error;

#[derive(Parser)]
#[command(name = "faceveil", version, about = "Blur every face in a detection stream except the streamer's")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster, refine and blur a detection stream.
    Run(RunArgs),
    /// Write a synthetic detection stream and its ground truth.
    Synth(SynthArgs),
    /// Score a mask log and trajectories against ground truth.
    Eval(EvalArgs),
    /// Time the incremental clustering step.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Directory of `frame_%06d.ppm` images to blur.
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    /// `key = value` settings, overridden by flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground truth JSONL; enables metrics.json.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    segment_len: Option<u64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `median`, `minimum` or a number.
    #[arg(long)]
    preference: Option<String>,
    #[arg(long)]
    min_support: Option<usize>,
    #[arg(long)]
    min_density: Option<f64>,
    #[arg(long = "exempt-cluster")]
    exempt_cluster: Vec<u32>,
    /// JSON array holding the streamer's reference embedding.
    #[arg(long)]
    exempt_ref: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    block: Option<u32>,
    #[arg(long)]
    box_margin: Option<f64>,
    #[arg(long)]
    literal_similarity: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Blur,
    Blocks,
}

#[derive(Args)]
struct SynthArgs {
    /// Detection stream output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Where to write the streamer's reference embedding.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Render `frame_%06d.ppm` images here.
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    faces: usize,
    #[arg(long, default_value_t = 3000)]
    frames: u64,
    #[arg(long, value_enum, default_value = "720")]
    resolution: Res,
    #[arg(long, default_value_t = 0.05)]
    p_fn: f64,
    #[arg(long, default_value_t = 0.02)]
    p_fp: f64,
    /// Mean missed-detection burst length.
    #[arg(long, default_value_t = 3.0)]
    burst: f64,
    /// Identity to leave unblurred.
    #[arg(long)]
    streamer: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Res {
    #[value(name = "480")]
    P480,
    #[value(name = "720")]
    P720,
    #[value(name = "1080")]
    P1080,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    faces: usize,
    #[arg(long, default_value_t = 180)]
    frames: u64,
    #[arg(long, default_value_t = 1)]
    step_frames: u64,
    #[arg(long, default_value_t = 90)]
    window: u64,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn open(path: &Path) -> faceveil::Result<io::BufReader<fs::File>> {
    fs::File::open(path)
        .map(io::BufReader::new)
        .map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })
}

fn create(path: &Path) -> faceveil::Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::File {
            path: path.to_path_buf(),
            source: e,
        })
}

fn pipeline_config(a: &RunArgs) -> faceveil::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Error::File {
            path: path.clone(),
            source: e,
        })?;
        cfg.apply_file_text(&text)?;
    }
    let mut set = |k: &str, v: Option<String>| match v {
        Some(v) => cfg.set(k, &v),
        None => Ok(()),
    };
    set("segment_len", a.segment_len.map(|v| v.to_string()))?;
    set("damping", a.damping.map(|v| v.to_string()))?;
    set("kappa", a.kappa.map(|v| v.to_string()))?;
    set("alpha", a.alpha.map(|v| v.to_string()))?;
    set("preference", a.preference.clone())?;
    set("min_support", a.min_support.map(|v| v.to_string()))?;
    set("min_density", a.min_density.map(|v| v.to_string()))?;
    set(
        "mode",
        a.mode.map(|m| match m {
            Mode::Blur => "blur".to_string(),
            Mode::Blocks => "blocks".to_string(),
        }),
    )?;
    set("block", a.block.map(|v| v.to_string()))?;
    set("box_margin", a.box_margin.map(|v| v.to_string()))?;
    if a.literal_similarity {
        set("literal_similarity", Some("true".into()))?;
    }
    cfg.exempt_clusters.extend(a.exempt_cluster.iter().copied());
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(a: RunArgs) -> faceveil::Result<()> {
    let cfg = RunConfig {
        pipeline: pipeline_config(&a)?,
        input: a.input,
        out_dir: a.out_dir,
        frames_dir: a.frames_dir,
        ground_truth: a.gt,
        exempt_ref: a.exempt_ref,
    };
    let summary = run(&cfg)?;
    let out = &summary.output;
    eprintln!(
        "{} segments, {} trajectories kept, {} dropped, {} masks, exempt {:?}",
        out.segments,
        out.trajectories.len(),
        out.dropped.len(),
        out.masks.len(),
        out.exempt
    );
    if let Some(m) = &summary.metrics {
        println!("{}", serde_json::to_string(m)?);
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> faceveil::Result<()> {
    let res = match a.resolution {
        Res::P480 => Resolution::P480,
        Res::P720 => Resolution::P720,
        Res::P1080 => Resolution::P1080,
    };
    let spec = ScenarioSpec {
        frames: a.frames,
        p_fn: a.p_fn,
        p_fp: a.p_fp,
        burst_mean: a.burst,
        streamer: a.streamer,
        seed: a.seed,
        ..ScenarioSpec::preset(a.faces, res)
    };
    let s = generate(&spec)?;
    let mut w = create(&a.out)?;
    write_stream(&mut w, &s.header, &s.detections)?;
    w.flush()?;
    let mut w = create(&a.gt)?;
    s.ground_truth.write(&mut w)?;
    w.flush()?;
    if let Some(path) = &a.reference {
        let r = s
            .reference
            .as_ref()
            .ok_or_else(|| Error::Parameter("--reference needs --streamer".into()))?;
        let mut w = create(path)?;
        serde_json::to_writer(&mut w, r)?;
        w.flush()?;
    }
    if let Some(dir) = &a.frames_dir {
        fs::create_dir_all(dir).map_err(|e| Error::File {
            path: dir.clone(),
            source: e,
        })?;
        for f in 0..spec.frames {
            save_frame(dir, f, &render_frame(&s, f))?;
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> faceveil::Result<()> {
    let masks = read_mask_log(open(&a.masks)?)?;
    let trajs = read_trajectories(open(&a.trajectories)?)?;
    let gt = GroundTruth::read(open(&a.gt)?)?;
    let report = MetricsReport::compute(&masks, &trajs, &gt, a.iou)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> faceveil::Result<()> {
    let mut cfg = BenchConfig {
        faces: a.faces,
        frames: a.frames,
        step_frames: a.step_frames,
        compaction_window: a.window,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(d) = a.damping {
        cfg.piap.ap.damping = d;
    }
    let report = run_bench(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::File { source, .. } if source.kind() == io::ErrorKind::NotFound => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
