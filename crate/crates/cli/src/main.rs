//! `evgest`: dataset simulation, training, offline inference, evaluation and
//! the live trial server.

mod report;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use evgest_core::eval::{evaluate_split, run_trial_protocol, SimulatedPerformer, TrialConfig};
use evgest_core::events::{decode_events, EventStream, SensorGeometry};
use evgest_core::model::{train, GestureModel, ModelConfig, TrainConfig};
use evgest_core::pipeline::{bench_pipeline, run_pipeline, PipelineConfig, SurfaceClassifier, ThresholdPolicy};
use evgest_core::representation::AggregatorConfig;
use evgest_core::simulator::{
    build_dataset, default_specs, DatasetManifest, EsimConfig, GestureClass, Split, DEFAULT_DURATION,
};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "evgest", version, about = "Event-camera microgesture recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Simulate(SimulateArgs),
    /// Train a model on a simulated dataset.
    Train(TrainArgs),
    /// Run streaming inference over a recorded HEV1 stream.
    Infer(InferArgs),
    /// Time the streaming pipeline on a recorded stream.
    Bench(BenchArgs),
    /// Per-window accuracy and confusion matrix on a dataset split.
    Eval(EvalArgs),
    /// Prompt-and-respond trial with the simulator as the performer.
    Trial(TrialArgs),
    /// Serve the HTTP and websocket API.
    Serve(ServeArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Comma-separated class codes or names; all classes by default.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<GestureClass>,
    #[arg(long)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 320)]
    width: u16,
    #[arg(long, default_value_t = 320)]
    height: u16,
    /// Contrast threshold for both polarities, log units.
    #[arg(long, default_value_t = 0.2)]
    contrast: f64,
    /// Rendering rate, Hz.
    #[arg(long, default_value_t = 1000.0)]
    sample_rate: f64,
    /// Scenario length, seconds.
    #[arg(long, default_value_t = DEFAULT_DURATION)]
    duration: f64,
    /// Fraction of each class assigned to the training split.
    #[arg(long, default_value_t = 0.9)]
    split: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 35)]
    epochs: usize,
    /// Defaults to the profile's batch size.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0.0005)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Architecture and batch size; the input geometry always follows the dataset.
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
}

#[derive(clap::Args)]
struct StreamArgs {
    #[arg(long)]
    model: PathBuf,
    /// HEV1 event stream.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 80)]
    stride_ms: u64,
    #[arg(long, default_value_t = 500)]
    window_ms: u64,
    /// Same threshold for every emittable class.
    #[arg(long, default_value_t = 0.7)]
    threshold: f32,
}

impl StreamArgs {
    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            aggregator: AggregatorConfig { window_length: self.window_ms * 1000, stride: self.stride_ms * 1000 },
            policy: ThresholdPolicy::uniform(self.threshold),
            ..PipelineConfig::default()
        }
    }
}

#[derive(clap::Args)]
struct InferArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// One JSON object per detection.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = Split::Val)]
    split: Split,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct TrialArgs {
    #[arg(long)]
    model: PathBuf,
    /// Prompts per gesture.
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prompted gestures; double pinch and both swipes by default.
    #[arg(long, value_delimiter = ',')]
    gestures: Vec<GestureClass>,
    #[arg(long, default_value_t = 0.7)]
    threshold: f32,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value_t = 0.7)]
    threshold: f32,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_model(a),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench(a),
        Command::Eval(a) => eval(a),
        Command::Trial(a) => trial(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_model(path: &Path) -> Result<GestureModel> {
    GestureModel::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_stream(path: &Path) -> Result<EventStream> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_events(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let classes = if a.classes.is_empty() { GestureClass::ALL.to_vec() } else { a.classes };
    let geometry = SensorGeometry::new(a.width, a.height);
    let esim = EsimConfig {
        contrast_threshold_pos: a.contrast,
        contrast_threshold_neg: a.contrast,
        sample_rate: a.sample_rate,
        ..EsimConfig::default()
    };
    let start = Instant::now();
    let specs = default_specs(&classes, a.per_class, a.seed, geometry, a.duration);
    let manifest = build_dataset(&specs, &esim, a.split, &a.out)?;
    eprintln!(
        "wrote {} train and {} val samples to {} in {:.1?}",
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        a.out.display(),
        start.elapsed()
    );
    Ok(())
}

fn train_model(a: TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.data)?;
    let (arch, base) = match a.profile {
        Profile::Desk => (ModelConfig::desk(), TrainConfig::desk()),
        Profile::Paper => (ModelConfig::paper(), TrainConfig::default()),
    };
    let model_config = ModelConfig { geometry: manifest.geometry, ..arch };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch.unwrap_or(base.batch_size),
        learning_rate: a.lr,
        hold_epochs: base.hold_epochs.min(a.epochs.saturating_sub(1)),
        seed: a.seed,
        ..base
    };
    let start = Instant::now();
    let outcome = train(&manifest, &model_config, &config, &AggregatorConfig::default(), |m| {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  acc {:.3}  val loss {:.4}  val acc {:.3}  {:.0?}",
            m.epoch + 1,
            m.learning_rate,
            m.train_loss,
            m.train_accuracy,
            m.val_loss,
            m.val_accuracy,
            start.elapsed()
        );
    })?;
    let model = GestureModel::new(&model_config, outcome.params)?;
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "saved {} ({} parameters, best epoch {})",
        a.out.display(),
        model.param_count(),
        outcome.best_epoch + 1
    );
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = load_model(&a.stream.model)?;
    let stream = load_stream(&a.stream.input)?;
    let run = run_pipeline(Arc::new(model), &stream, &a.stream.pipeline())?;
    for d in &run.detections {
        if a.json {
            println!("{}", serde_json::to_string(&report::DetectionLine::from(d))?);
        } else {
            println!(
                "{:>9.3} s  {:<14} p={:.3}  latency {:.2} ms",
                d.t_us as f64 * 1e-6,
                d.gesture.name(),
                d.probability,
                d.latency_us as f64 * 1e-3
            );
        }
    }
    if !a.json {
        let s = run.stats;
        eprintln!("{} detections over {} windows ({} skipped)", run.detections.len(), s.windows_processed, s.windows_skipped);
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.reps == 0 {
        bail!("--reps must be positive");
    }
    let model = load_model(&a.stream.model)?;
    let stream = load_stream(&a.stream.input)?;
    let r = bench_pipeline(Arc::new(model), &stream, &a.stream.pipeline(), a.reps)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print!("{}", report::bench_text(&r, a.stream.stride_ms * 1000));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let manifest = DatasetManifest::load(&a.data)?;
    let e = evaluate_split(&model, &manifest, a.split, &AggregatorConfig::default())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report::EvalJson::new(&e))?);
    } else {
        print!("{}", report::eval_text(&e));
    }
    Ok(())
}

fn trial(a: TrialArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let geometry = model.geometry();
    let mut config = TrialConfig { repetitions: a.reps, seed: a.seed, ..TrialConfig::default() };
    if !a.gestures.is_empty() {
        config.gestures = a.gestures;
    }
    let pipeline = PipelineConfig { policy: ThresholdPolicy::uniform(a.threshold), ..PipelineConfig::default() };
    let mut performer = SimulatedPerformer::new(geometry, a.seed);
    let r = run_trial_protocol(Arc::new(model), &pipeline, &mut performer, &config)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report::TrialJson::new(&r))?);
    } else {
        print!("{}", report::trial_text(&r));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let name = a.model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let config = evgest_service::ServerConfig {
        model_name: name,
        pipeline: PipelineConfig { policy: ThresholdPolicy::uniform(a.threshold), ..PipelineConfig::default() },
        ..evgest_service::ServerConfig::default()
    };
    config.pipeline.policy.validate()?;
    let state = evgest_service::AppState::new(model, config);
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(evgest_service::serve(state, addr)).with_context(|| format!("serving on {addr}"))
}
