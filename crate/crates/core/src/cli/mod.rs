//! `fireseg` command-line interface.
//!
//! Each artifact-producing command writes `run_manifest.json` beside its
//! outputs. Configuration resolves as flags, then `--config`, then defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::baselines::{apply_naive_rule, render_table, run_ablation, RowStatus, VariantName, VariantSpec};
use crate::data::corpus::{array_to_rgb, mask_to_gray, read_rgb, rgb_to_array, save_png};
use crate::data::{generate_synthetic, load_corpus, split, write_corpus, DatasetManifest, Split, SynthConfig};
use crate::error::Error;
use crate::metrics::{binarize, MetricReport, DEFAULT_THRESHOLD};
use crate::model::{checkpoint, BackboneKind, Model, ModelConfig};
use crate::train::{evaluate, train, TrainConfig, BEST_CHECKPOINT, HISTORY_FILE};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const OVERLAY_COLOR: [u8; 3] = [255, 0, 0];
pub const OVERLAY_ALPHA: f64 = 0.5;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fireseg", version, about = "Joint fire classification and segmentation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Seed for data generation, splitting, initialization and shuffling
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON configuration file, or a previous run manifest
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Reproducible execution (all computation is sequential)
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset
    Synth(SynthArgs),
    /// Train one variant
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Predict masks and class probabilities for images
    Predict(PredictArgs),
    /// Train and compare the baseline variants
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub fire_fraction: Option<f64>,
    #[arg(long)]
    pub distractor_fraction: Option<f64>,
    /// Write into a non-empty output directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: Option<BackboneKind>,
    /// Random horizontal flips during training
    #[arg(long)]
    pub hflip: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<VariantName>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<f64>,
    /// Zero the mask of images classified as non-fire
    #[arg(long)]
    pub apply_naive: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Input images
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_parser = parse_threshold)]
    pub threshold: Option<f64>,
    /// Zero the mask of images classified as non-fire
    #[arg(long)]
    pub apply_naive: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated variant names
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Option<Vec<VariantName>>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

fn parse_variant(s: &str) -> Result<VariantName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_backbone(s: &str) -> Result<BackboneKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unknown backbone `{s}` (desk_small, deeplabv3plus)"))
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(format!("threshold must lie in (0, 1), got {t}"))
    }
}

/// Fully resolved settings; also the schema accepted by `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub split: Split,
    pub threshold: f64,
    pub apply_naive: bool,
    pub force: bool,
    pub variant: VariantName,
    pub variants: Vec<VariantName>,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            out: None,
            data: None,
            ckpt: None,
            inputs: Vec::new(),
            split: Split::Test,
            threshold: DEFAULT_THRESHOLD,
            apply_naive: false,
            force: false,
            variant: VariantName::ProposedFull,
            variants: VariantName::ALL.to_vec(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_snapshot: RunConfig,
    pub code_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Run(Error),
    #[error("{0}")]
    Partial(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::TooFewSamples { .. } => CliError::Usage(e.to_string()),
            e => CliError::Run(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(_) => EXIT_FAILURE,
            CliError::Partial(_) => EXIT_PARTIAL,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Reads a [`RunConfig`], or the snapshot inside a [`RunManifest`].
pub fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let value = match value {
        serde_json::Value::Object(mut m) if m.contains_key("config_snapshot") => {
            m.remove("config_snapshot").unwrap_or_default()
        }
        v => v,
    };
    serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags) {
    if let Some(v) = f.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = f.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = f.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = f.weight_decay {
        cfg.train.weight_decay = v;
    }
    if let Some(v) = f.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = f.input_size {
        cfg.train.input_size = v;
    }
    if let Some(v) = f.backbone {
        cfg.model.backbone = v;
    }
    if f.hflip {
        cfg.train.hflip = true;
    }
}

/// Merges flags over the config file over defaults and validates the result.
pub fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    let c = &cli.common;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    cfg.deterministic |= c.deterministic;
    match &cli.command {
        Command::Synth(a) => {
            if let Some(v) = a.n {
                cfg.synth.n_images = v;
            }
            if let Some(v) = a.size {
                cfg.synth.image_size = v;
            }
            if let Some(v) = a.fire_fraction {
                cfg.synth.fire_fraction = v;
            }
            if let Some(v) = a.distractor_fraction {
                cfg.synth.distractor_fraction = v;
            }
            cfg.force |= a.force;
        }
        Command::Train(a) => {
            if a.data.is_some() {
                cfg.data = a.data.clone();
            }
            if let Some(v) = a.variant {
                cfg.variant = v;
            }
            apply_train_flags(&mut cfg, &a.flags);
        }
        Command::Eval(a) => {
            if a.ckpt.is_some() {
                cfg.ckpt = a.ckpt.clone();
            }
            if a.data.is_some() {
                cfg.data = a.data.clone();
            }
            if let Some(v) = a.split {
                cfg.split = v;
            }
            if let Some(v) = a.threshold {
                cfg.threshold = v;
            }
            cfg.apply_naive |= a.apply_naive;
        }
        Command::Predict(a) => {
            if a.ckpt.is_some() {
                cfg.ckpt = a.ckpt.clone();
            }
            cfg.inputs = a.inputs.clone();
            if let Some(v) = a.threshold {
                cfg.threshold = v;
            }
            cfg.apply_naive |= a.apply_naive;
        }
        Command::Ablate(a) => {
            if a.data.is_some() {
                cfg.data = a.data.clone();
            }
            if let Some(v) = &a.variants {
                cfg.variants = v.clone();
            }
            apply_train_flags(&mut cfg, &a.flags);
        }
    }
    cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.model.seed = cfg.seed;
    cfg.model.input_size = cfg.train.input_size;

    match &cli.command {
        Command::Synth(_) => cfg.synth.validate()?,
        Command::Train(_) | Command::Ablate(_) => {
            cfg.train.validate()?;
            cfg.model.validate()?;
            if cfg.data.is_none() {
                return Err(CliError::Usage("--data is required".into()));
            }
            if cfg.variants.is_empty() {
                return Err(CliError::Usage("--variants must name at least one variant".into()));
            }
        }
        Command::Eval(_) | Command::Predict(_) => {
            if cfg.ckpt.is_none() {
                return Err(CliError::Usage("--ckpt is required".into()));
            }
            if matches!(cli.command, Command::Eval(_)) && cfg.data.is_none() {
                return Err(CliError::Usage("--data is required".into()));
            }
            if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
                return Err(CliError::Usage(format!(
                    "threshold must lie in (0, 1), got {}",
                    cfg.threshold
                )));
            }
        }
    }
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Predict(_) => "predict",
        Command::Ablate(_) => "ablate",
    }
}

fn out_dir(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Run(Error::io(dir, e)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::Run(Error::io(path, e)))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Run(Error::io(path, e)))
}

/// Loads a dataset directory at `size` and assigns splits if it has none.
fn load_split(root: &Path, size: usize, seed: u64) -> CliResult<DatasetManifest> {
    let manifest = load_corpus(root, Some(size))?;
    let complete = manifest
        .records
        .iter()
        .all(|r| manifest.split_assignment.contains_key(&r.id));
    Ok(if complete && !manifest.is_empty() {
        manifest
    } else {
        split(&manifest, seed)?
    })
}

/// Parses `args`, runs the command, and maps the outcome to an exit status:
/// 0 on success, 1 on failure, 2 on usage errors, 3 on partial failure.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let started = unix_now();
    let (dir, outcome) = match &cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Predict(_) => cmd_predict(&cfg),
        Command::Ablate(_) => cmd_ablate(&cfg),
    }?;
    let manifest = RunManifest {
        command: command_name(&cli.command).to_owned(),
        config_snapshot: cfg.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: cfg.seed,
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_json(&dir.join(RUN_MANIFEST), &manifest)?;
    outcome
}

/// Each command returns its output directory and whether every artifact
/// was produced.
type CmdResult = CliResult<(PathBuf, CliResult<()>)>;

pub fn cmd_synth(cfg: &RunConfig) -> CmdResult {
    let dir = out_dir(cfg, "dataset");
    if let Ok(mut entries) = fs::read_dir(&dir) {
        if entries.next().is_some() && !cfg.force {
            return Err(CliError::Run(Error::InvalidConfig(format!(
                "{} is not empty (use --force to overwrite)",
                dir.display()
            ))));
        }
    }
    let manifest = split(&generate_synthetic(&cfg.synth)?, cfg.seed)?;
    create_dir(&dir)?;
    write_corpus(&dir, &manifest)?;
    let fire = manifest.records.iter().filter(|r| r.label == 1).count();
    println!(
        "wrote {} images ({fire} fire) to {}",
        manifest.len(),
        dir.display()
    );
    Ok((dir, Ok(())))
}

pub fn cmd_train(cfg: &RunConfig) -> CmdResult {
    let data = cfg.data.as_deref().expect("validated");
    let manifest = load_split(data, cfg.train.input_size, cfg.seed)?;
    let dir = out_dir(cfg, "run");
    create_dir(&dir)?;
    let spec = VariantSpec::new(cfg.variant, &cfg.model);
    let model = Model::new(&spec.base_config)?;
    let mut train_cfg = spec.train_config(&cfg.train);
    train_cfg.checkpoint_dir = Some(dir.clone());
    let outcome = train(model, &manifest, &train_cfg, &mut |r| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  mIoU {:.4}  consistency {:.4}  alpha {:.4}",
            r.epoch, r.train.total, r.val.total, r.val_metrics.mean_iou, r.val_metrics.avg_consistency, r.alpha
        );
    })?;
    println!(
        "best epoch {} (val loss {:.6}); wrote {} and {}",
        outcome.trained.best_epoch,
        outcome.trained.best_val_loss,
        dir.join(BEST_CHECKPOINT).display(),
        dir.join(HISTORY_FILE).display()
    );
    Ok((dir, Ok(())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub threshold: f64,
    pub apply_naive: bool,
    pub n_images: usize,
    pub seg_loss: f64,
    pub class_loss: f64,
    pub total_loss: f64,
    pub metrics: MetricReport,
}

pub fn cmd_eval(cfg: &RunConfig) -> CmdResult {
    let model = checkpoint::load(cfg.ckpt.as_deref().expect("validated"))?;
    let size = model.config().input_size;
    let manifest = load_split(cfg.data.as_deref().expect("validated"), size, cfg.seed)?;
    let records = manifest.records_in(cfg.split);
    if records.is_empty() {
        return Err(CliError::Usage(format!("split `{}` is empty", cfg.split)));
    }
    let (loss, mut metrics, outputs) = evaluate(&model, &records, cfg.train.lambda, cfg.threshold)?;
    if cfg.apply_naive {
        let masked: Vec<_> = outputs
            .iter()
            .map(|o| apply_naive_rule(o, cfg.threshold))
            .collect();
        let owned: Vec<_> = records.iter().map(|r| (*r).clone()).collect();
        metrics = crate::metrics::evaluate_corpus(&masked, &owned, cfg.threshold)?;
    }
    let report = EvalReport {
        split: cfg.split,
        threshold: cfg.threshold,
        apply_naive: cfg.apply_naive,
        n_images: records.len(),
        seg_loss: loss.seg_loss,
        class_loss: loss.class_loss,
        total_loss: loss.total,
        metrics,
    };
    let dir = out_dir(cfg, "eval");
    create_dir(&dir)?;
    write_json(&dir.join("eval.json"), &report)?;
    let name = model_label(&model);
    let table = render_table(std::iter::once((name.as_str(), Some(&report.metrics), &RowStatus::Ok)));
    write_text(&dir.join("eval.txt"), &table)?;
    print!("{table}");
    Ok((dir, Ok(())))
}

fn model_label(model: &Model) -> String {
    let c = model.config();
    match (c.classification_branch, c.attention_spatial || c.attention_classgate) {
        (false, _) => VariantName::SegOnly.to_string(),
        (true, false) => VariantName::MultitaskPlain.to_string(),
        (true, true) => VariantName::ProposedFull.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub input: PathBuf,
    pub class_prob: Option<f64>,
    pub fire_pixels: Option<usize>,
    pub mask: Option<PathBuf>,
    pub overlay: Option<PathBuf>,
    pub error: Option<String>,
}

/// Blends `OVERLAY_COLOR` over the image wherever the mask is set.
pub fn render_overlay(image: &RgbImage, mask: &ndarray::Array2<u8>) -> RgbImage {
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if mask[[y as usize, x as usize]] != 0 {
            let blend = |c: u8, h: u8| {
                (f64::from(c) * (1.0 - OVERLAY_ALPHA) + f64::from(h) * OVERLAY_ALPHA).round() as u8
            };
            *px = Rgb([
                blend(px[0], OVERLAY_COLOR[0]),
                blend(px[1], OVERLAY_COLOR[1]),
                blend(px[2], OVERLAY_COLOR[2]),
            ]);
        }
    }
    out
}

fn predict_one(
    model: &Model,
    path: &Path,
    stem: &str,
    dir: &Path,
    cfg: &RunConfig,
) -> crate::Result<PredictionEntry> {
    let size = model.config().input_size as u32;
    let mut rgb = read_rgb(path)?;
    if rgb.dimensions() != (size, size) {
        rgb = image::imageops::resize(&rgb, size, size, image::imageops::FilterType::Triangle);
    }
    let mut out = model.forward(&rgb_to_array(&rgb))?;
    if cfg.apply_naive {
        out = apply_naive_rule(&out, cfg.threshold);
    }
    let mask = binarize(&out.seg_prob, cfg.threshold);
    let mask_path = dir.join("masks").join(format!("{stem}.png"));
    let overlay_path = dir.join("overlays").join(format!("{stem}.png"));
    save_png(&mask_to_gray(&mask), &mask_path)?;
    let base = array_to_rgb(&rgb_to_array(&rgb));
    save_png(&render_overlay(&base, &mask), &overlay_path)?;
    Ok(PredictionEntry {
        input: path.to_owned(),
        class_prob: out.class_prob,
        fire_pixels: Some(mask.iter().filter(|&&v| v != 0).count()),
        mask: Some(mask_path),
        overlay: Some(overlay_path),
        error: None,
    })
}

pub fn cmd_predict(cfg: &RunConfig) -> CmdResult {
    let model = checkpoint::load(cfg.ckpt.as_deref().expect("validated"))?;
    let dir = out_dir(cfg, "predictions");
    create_dir(&dir.join("masks"))?;
    create_dir(&dir.join("overlays"))?;
    let mut entries = Vec::with_capacity(cfg.inputs.len());
    let mut used = std::collections::BTreeSet::new();
    for (i, path) in cfg.inputs.iter().enumerate() {
        let base = path
            .file_stem()
            .map_or_else(|| format!("input{i}"), |s| s.to_string_lossy().into_owned());
        let stem = if used.insert(base.clone()) {
            base
        } else {
            format!("{base}_{i}")
        };
        let entry = predict_one(&model, path, &stem, &dir, cfg).unwrap_or_else(|e| {
            eprintln!("{}: {e}", path.display());
            PredictionEntry {
                input: path.clone(),
                class_prob: None,
                fire_pixels: None,
                mask: None,
                overlay: None,
                error: Some(e.to_string()),
            }
        });
        entries.push(entry);
    }
    write_json(&dir.join("predictions.json"), &entries)?;
    let failed = entries.iter().filter(|e| e.error.is_some()).count();
    println!(
        "{} of {} images written to {}",
        entries.len() - failed,
        entries.len(),
        dir.display()
    );
    let status = if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Partial(format!("{failed} of {} inputs failed", entries.len())))
    };
    Ok((dir, status))
}

pub fn cmd_ablate(cfg: &RunConfig) -> CmdResult {
    let data = cfg.data.as_deref().expect("validated");
    let manifest = load_split(data, cfg.train.input_size, cfg.seed)?;
    let specs: Vec<_> = cfg
        .variants
        .iter()
        .map(|&v| VariantSpec::new(v, &cfg.model))
        .collect();
    let table = run_ablation(&manifest, &specs, &cfg.train, &mut |name, r| {
        eprintln!(
            "{name:<16} epoch {:>3}  train {:.4}  val {:.4}  mIoU {:.4}",
            r.epoch, r.train.total, r.val.total, r.val_metrics.mean_iou
        );
    })?;
    let dir = out_dir(cfg, "ablation");
    create_dir(&dir)?;
    write_json(&dir.join("ablation.json"), &table)?;
    let text = table.render_text();
    write_text(&dir.join("ablation.txt"), &text)?;
    print!("{text}");
    let failed = table
        .rows
        .iter()
        .filter(|r| matches!(r.status, RowStatus::Failed(_)))
        .count();
    let status = if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Partial(format!("{failed} variants failed")))
    };
    Ok((dir, status))
}
