//! `synthaug` command-line entry point.
//!
//! Exit codes: 0 on success, 1 for invalid arguments or configuration, 2
//! when a stage fails while running.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use synthaug::classifier::{load_checkpoint, TrainConfig};
use synthaug::data::read_manifest;
use synthaug::harness::{
    ablate, epsilon_sweep, evaluate, read_truth, render_corpus, run_sweep, selection_metrics, sweep_csv,
    AblationMode, ExperimentConfig, ShapesCorpusConfig,
};
use synthaug::pipeline::{
    layout, load_images, read_run_audit, run_pipeline, stage_generate, stage_merge, stage_select,
    stage_train, PipelineConfig, RunOptions,
};
use synthaug::selection::SelectionConfig;

#[derive(Parser, Debug)]
#[command(name = "synthaug", version)]
#[command(about = "Augment image-level labeled datasets with generated images and confidence-based selection")]
struct Cli {
    /// TOML run configuration; subcommands take their defaults from it and
    /// flags override individual fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a procedural shapes corpus (PNGs + manifest)
    MakeCorpus(MakeCorpusArgs),
    /// Train the patch classifier on a manifest and write a checkpoint
    TrainClassifier(TrainArgs),
    /// Generate synthetic candidates for every image of a manifest
    Generate(GenerateArgs),
    /// Score candidates and keep the confident, label-consistent ones
    Select(SelectArgs),
    /// Append an accepted-candidates manifest to the origin manifest
    Merge(MergeArgs),
    /// Run train → generate → select → merge end to end
    Run(RunArgs),
    /// Compare baseline / augmentation without selection / with selection
    Ablate(AblateArgs),
    /// Held-out accuracy of a checkpoint, plus selection metrics of a run
    Eval(EvalArgs),
    /// Acceptance, precision and recall across selection thresholds
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct MakeCorpusArgs {
    /// Output directory (manifest.jsonl and images/ are written here)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    max_objects: usize,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    /// Comma-separated shape classes
    #[arg(long, value_delimiter = ',', default_value = "circle,square,triangle")]
    categories: Vec<String>,
    #[arg(long, default_value = "shape")]
    id_prefix: String,
}

#[derive(Args, Debug, Default)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder backend: linear, attention or precomputed
    #[arg(long)]
    encoder: Option<String>,
    /// Encoder parameters as a JSON object
    #[arg(long)]
    encoder_params: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Square resize target before patching
    #[arg(long)]
    image_size: Option<u32>,
    #[arg(long)]
    patch_size: Option<u32>,
    /// Train only the scoring head
    #[arg(long)]
    freeze_encoder: bool,
}

impl TrainOverrides {
    fn apply(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.encoder {
            cfg.encoder = v.clone();
        }
        if let Some(v) = &self.encoder_params {
            cfg.encoder_params = serde_json::from_str(v)
                .map_err(|e| usage(format!("--encoder-params is not JSON: {e}")))?;
        }
        if let Some(v) = self.embed_dim {
            cfg.embed_dim = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.image_size {
            cfg.grid.height = v;
            cfg.grid.width = v;
        }
        if let Some(v) = self.patch_size {
            cfg.grid.patch = v;
        }
        if self.freeze_encoder {
            cfg.train_encoder = false;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training manifest
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Start from the 64×64 / 8-px desk settings instead of full scale
    #[arg(long)]
    desk: bool,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args, Debug, Default)]
struct GeneratorOverrides {
    /// Generator backend: procedural or diffusion-http
    #[arg(long)]
    backend: Option<String>,
    /// Backend parameter as key=value (value parsed as JSON when possible)
    #[arg(long = "param")]
    params: Vec<String>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Pose backend for images labeled `person`
    #[arg(long)]
    pose_backend: Option<String>,
}

impl GeneratorOverrides {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(b) = &self.backend {
            if *b != cfg.generation.backend {
                cfg.generation.params = Value::Null;
            }
            cfg.generation.backend = b.clone();
        }
        if !self.params.is_empty() {
            let mut obj = match std::mem::take(&mut cfg.generation.params) {
                Value::Object(m) => m,
                _ => serde_json::Map::new(),
            };
            for kv in &self.params {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| usage(format!("--param expects key=value, got `{kv}`")))?;
                let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
                obj.insert(k.to_owned(), v);
            }
            cfg.generation.params = Value::Object(obj);
        }
        if let Some(v) = self.steps {
            cfg.generation.steps = v;
        }
        if let Some(v) = self.parallelism {
            cfg.generation.parallelism = v;
        }
        if let Some(v) = &self.pose_backend {
            cfg.detection.pose_backend = v.clone();
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Origin manifest
    #[arg(long)]
    origin: PathBuf,
    /// Directory for candidates/, candidates.jsonl and sidecars
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long)]
    passes: Option<u32>,
    #[command(flatten)]
    generator: GeneratorOverrides,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Candidates manifest
    #[arg(long)]
    candidates: PathBuf,
    /// Origin manifest the candidates were generated from
    #[arg(long)]
    origin: PathBuf,
    /// Classifier checkpoint
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Accept candidates whose predicted label set is empty
    #[arg(long)]
    accept_empty: bool,
    /// Where aug.jsonl and audit.jsonl go (default: next to the candidates)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MergeArgs {
    #[arg(long)]
    origin: PathBuf,
    #[arg(long)]
    aug: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Origin manifest (required without --config)
    #[arg(long)]
    origin: Option<PathBuf>,
    /// Output directory (required without --config)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    passes: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    accept_empty: bool,
    /// Use the desk-scale training defaults
    #[arg(long)]
    desk: bool,
    /// Reuse the checkpoint and candidates already in the output directory
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    train: TrainOverrides,
    #[command(flatten)]
    generator: GeneratorOverrides,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Origin corpus size
    #[arg(long, default_value_t = 100)]
    images: usize,
    #[arg(long, default_value_t = 200)]
    held_out: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_rate: f64,
    #[arg(long, default_value_t = 1)]
    passes: u32,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    encoder: Option<String>,
}

impl ExperimentArgs {
    fn config(&self, base: Option<&PipelineConfig>, seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            held_out: self.held_out,
            noise_rate: self.noise_rate,
            passes: self.passes,
            seed,
            ..Default::default()
        };
        cfg.corpus.images = self.images;
        if let Some(b) = base {
            cfg.train = b.train.clone();
            cfg.selection = b.selection;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(e) = &self.encoder {
            cfg.train.encoder = e.clone();
        }
        if let Some(e) = self.epsilon {
            cfg.selection.epsilon = e;
        }
        cfg
    }
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Comma-separated seeds, one experiment each
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    /// Comma-separated modes
    #[arg(long, value_delimiter = ',', default_value = "baseline,augment_no_selection,augment_with_selection")]
    modes: Vec<String>,
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Write the JSON reports here as well as to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Classifier checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// Labeled held-out manifest
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory with audit.jsonl and candidates.truth.jsonl
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated thresholds
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,0.95")]
    grid: Vec<f64>,
    /// Sweep the cached scores of an existing run instead of a fresh
    /// shapes experiment
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    accept_empty: bool,
    /// Also train and evaluate a downstream classifier per threshold
    /// (fresh experiment only)
    #[arg(long)]
    downstream: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Write a CSV of the table here
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Bad arguments that clap itself cannot detect.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<synthaug::Error>() {
        Some(e) if e.is_config() => 1,
        _ => 2,
    }
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Option<PipelineConfig>> {
    cli.config
        .as_deref()
        .map(|p| {
            // Any failure to read the config file is a configuration problem.
            PipelineConfig::from_toml_file(p)
                .with_context(|| UsageError(format!("loading --config {}", p.display())))
        })
        .transpose()
}

/// The config file if given, else a placeholder whose paths are filled by
/// the subcommand.
fn base_config(cfg: Option<&PipelineConfig>) -> PipelineConfig {
    cfg.cloned()
        .unwrap_or_else(|| PipelineConfig::new(PathBuf::new(), PathBuf::new()))
}

fn make_corpus(a: &MakeCorpusArgs) -> Result<()> {
    let cfg = ShapesCorpusConfig {
        image_size: a.image_size,
        categories: a.categories.clone(),
        images: a.images,
        max_objects_per_image: a.max_objects,
        seed: a.seed,
        id_prefix: a.id_prefix.clone(),
    };
    let m = render_corpus(&cfg, &a.out, "origin")?;
    let path = a.out.join("manifest.jsonl");
    synthaug::data::write_manifest(&m, &path)?;
    println!("wrote {} images to {}", m.len(), path.display());
    Ok(())
}

fn train(cli_cfg: Option<&PipelineConfig>, a: &TrainArgs) -> Result<()> {
    let base = match cli_cfg {
        Some(c) => c.train_config(),
        None if a.desk => TrainConfig::desk(),
        None => TrainConfig::default(),
    };
    let cfg = a.train.apply(base)?;
    let model = stage_train(&a.data, &cfg, &a.out)?;
    println!(
        "wrote {} ({} encoder, {} classes)",
        a.out.display(),
        model.encoder().kind(),
        model.categories().len()
    );
    Ok(())
}

fn generate(cli_cfg: Option<&PipelineConfig>, a: &GenerateArgs) -> Result<()> {
    let mut cfg = base_config(cli_cfg);
    a.generator.apply(&mut cfg)?;
    if let Some(s) = a.seed_base {
        cfg.seed = s;
    }
    if let Some(p) = a.passes {
        cfg.passes = p;
    }
    let backend = cfg.generation.build()?;
    let detectors = cfg.detection.build()?;
    let out = stage_generate(&a.origin, backend.as_ref(), &detectors, &cfg.generation_config(), &a.out_dir)?;
    println!(
        "wrote {} candidates to {}",
        out.manifest.len(),
        a.out_dir.join(layout::CANDIDATES).display()
    );
    Ok(())
}

fn selection_config(base: Option<&PipelineConfig>, epsilon: Option<f64>, accept_empty: bool) -> SelectionConfig {
    let mut cfg = base.map(|c| c.selection).unwrap_or_default();
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    if accept_empty {
        cfg.reject_empty = false;
    }
    cfg
}

fn select(cli_cfg: Option<&PipelineConfig>, a: &SelectArgs) -> Result<()> {
    let cfg = selection_config(cli_cfg, a.epsilon, a.accept_empty);
    cfg.validate()?;
    let model = load_checkpoint(&a.model)?;
    let dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a.candidates.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let (aug, audit) = stage_select(
        &a.candidates,
        &a.origin,
        &model,
        &cfg,
        &dir.join(layout::AUG),
        &dir.join(layout::AUDIT),
    )?;
    println!("accepted {} of {} candidates", aug.len(), audit.len());
    Ok(())
}

fn merge(a: &MergeArgs) -> Result<()> {
    let m = stage_merge(&a.origin, &a.aug, &a.out)?;
    println!("wrote {} records to {}", m.len(), a.out.display());
    Ok(())
}

fn run(cli_cfg: Option<&PipelineConfig>, a: &RunArgs) -> Result<()> {
    let mut cfg = match cli_cfg {
        Some(c) => c.clone(),
        None => {
            let (Some(origin), Some(out)) = (&a.origin, &a.out_dir) else {
                return Err(usage("run needs --config or both --origin and --out-dir"));
            };
            let mut c = PipelineConfig::new(origin, out);
            if a.desk {
                c.train = TrainConfig::desk();
            }
            c
        }
    };
    if let Some(o) = &a.origin {
        cfg.origin = o.clone();
    }
    if let Some(o) = &a.out_dir {
        cfg.output_dir = o.clone();
    }
    // One seed drives both training and generation.
    if let Some(s) = a.train.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.passes {
        cfg.passes = p;
    }
    cfg.selection = selection_config(Some(&cfg), a.epsilon, a.accept_empty);
    cfg.train = a.train.apply(cfg.train)?;
    a.generator.apply(&mut cfg)?;
    let out = run_pipeline(&cfg, RunOptions { resume: a.resume })?;
    print!("{}", out.report.table());
    Ok(())
}

fn parse_modes(names: &[String]) -> Result<Vec<AblationMode>> {
    names
        .iter()
        .map(|n| AblationMode::from_name(n).ok_or_else(|| usage(format!("unknown ablation mode `{n}`"))))
        .collect()
}

fn run_ablate(cli_cfg: Option<&PipelineConfig>, a: &AblateArgs) -> Result<()> {
    let modes = parse_modes(&a.modes)?;
    if a.seeds.is_empty() {
        return Err(usage("no seeds given"));
    }
    let mut reports = Vec::with_capacity(a.seeds.len());
    for &seed in &a.seeds {
        let cfg = a.experiment.config(cli_cfg, seed);
        let r = ablate(&cfg, &modes)?;
        eprint!("{}", r.table());
        reports.push(r);
    }
    let text = serde_json::to_string_pretty(&reports)? + "\n";
    if let Some(p) = &a.out {
        fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{text}");
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut out = serde_json::Map::new();
    match (&a.model, &a.data) {
        (Some(model), Some(data)) => {
            let model = load_checkpoint(model)?;
            let m = read_manifest(data)?;
            let images = load_images(&m, data.parent().unwrap_or(Path::new("")))?;
            let (subset, per_class) = evaluate(&model, &images)?;
            out.insert(
                "classifier".into(),
                json!({"images": images.len(), "subset_accuracy": subset, "per_class_accuracy": per_class}),
            );
        }
        (None, None) => {}
        _ => return Err(usage("--model and --data go together")),
    }
    if let Some(dir) = &a.run_dir {
        let audit = read_run_audit(dir)?;
        let cats = read_manifest(&dir.join(layout::CANDIDATES))?.categories;
        let truth = read_truth(&dir.join(layout::TRUTH), &cats)
            .context("selection metrics need the ground-truth sidecar of a procedural run")?;
        out.insert("selection".into(), serde_json::to_value(selection_metrics(&audit, &truth)?)?);
    }
    if out.is_empty() {
        return Err(usage("eval needs --model/--data, --run-dir, or both"));
    }
    print_json(&Value::Object(out))
}

fn sweep(cli_cfg: Option<&PipelineConfig>, a: &SweepArgs) -> Result<()> {
    let rows = match &a.run_dir {
        Some(dir) => {
            if a.downstream {
                return Err(usage("--downstream needs a fresh experiment, not --run-dir"));
            }
            let audit = read_run_audit(dir)?;
            let cats = read_manifest(&dir.join(layout::CANDIDATES))?.categories;
            let truth = read_truth(&dir.join(layout::TRUTH), &cats)?;
            epsilon_sweep(&audit, &truth, &a.grid, !a.accept_empty, None)?
        }
        None => {
            let mut cfg = a.experiment.config(cli_cfg, a.seed);
            cfg.selection.reject_empty = !a.accept_empty;
            run_sweep(&cfg, &a.grid, a.downstream)?
        }
    };
    if let Some(p) = &a.csv {
        fs::write(p, sweep_csv(&rows)).with_context(|| format!("writing {}", p.display()))?;
    }
    print_json(&serde_json::to_value(&rows)?)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let cfg = cfg.as_ref();
    match &cli.command {
        Command::MakeCorpus(a) => make_corpus(a),
        Command::TrainClassifier(a) => train(cfg, a),
        Command::Generate(a) => generate(cfg, a),
        Command::Select(a) => select(cfg, a),
        Command::Merge(a) => merge(a),
        Command::Run(a) => run(cfg, a),
        Command::Ablate(a) => run_ablate(cfg, a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

