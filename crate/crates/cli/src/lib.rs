//! Subcommands of the `arrayssl` binary, usable as library calls.

pub mod manifest;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use arrayssl::formats::{read_capture, read_labeled_capture, write_capture, write_labels};
use arrayssl::models::{transfer_encoder, BandwidthNet, InpaintNet};
use arrayssl::synth::{make_capture_set, LabeledCapture, SceneConfig};
use arrayssl::training::{
    evaluate, examples_from_capture, read_metrics, train_loop, write_metrics, Checkpoint, Objective,
    TrainConfig, TrainOutcome,
};
use clap::{Args, Parser, Subcommand};

use manifest::{io_error, RunManifest};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] arrayssl::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use arrayssl::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::Format { .. } | E::Io { .. } | E::Label(_)) => EXIT_DATA,
            CliError::Core(E::NonFinite(_) | E::DegenerateBatch(_)) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "arrayssl", version, about = "Self-supervised pretraining for antenna-array spectrograms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled capture set (.rfcap + .rflab).
    Gen(GenArgs),
    /// Train the in-painting network on a capture.
    Pretrain(PretrainArgs),
    /// Train the bandwidth regressor from a pretrained or random encoder.
    Transfer(TransferArgs),
    /// Score a checkpoint on a capture.
    Eval(EvalArgs),
    /// Render loss curves from metrics CSVs as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub antennas: usize,
    #[arg(long, default_value_t = 65536)]
    pub samples: usize,
    #[arg(long, default_value_t = 2048)]
    pub bins: usize,
    #[arg(long, default_value_t = 1)]
    pub signals_min: usize,
    #[arg(long, default_value_t = 6)]
    pub signals_max: usize,
    #[arg(long, default_value_t = 5.0)]
    pub snr_min: f64,
    #[arg(long, default_value_t = 25.0)]
    pub snr_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes PREFIX.rfcap, PREFIX.rflab and PREFIX.manifest.
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// STFT length; each frame is cut into samples/bins time steps.
    #[arg(long, default_value_t = 2048)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 30)]
    pub early_stop_patience: usize,
    #[arg(long, default_value_t = 10)]
    pub plateau_patience: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr_factor: f32,
    #[arg(long, default_value_t = 1000)]
    pub max_epochs: usize,
}

impl TrainArgs {
    fn config(&self, lr: f32, epsilon: f32, freeze: bool) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            initial_lr: lr,
            early_stop_patience: self.early_stop_patience,
            plateau_patience: self.plateau_patience,
            lr_factor: self.lr_factor,
            val_fraction: self.val_fraction,
            seed: self.seed,
            freeze_encoder: freeze,
            epsilon,
            max_epochs: self.max_epochs,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f32,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("init").required(true).args(["encoder_ckpt", "random_init"])))]
pub struct TransferArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// In-painting checkpoint whose encoder is copied.
    #[arg(long)]
    pub encoder_ckpt: Option<PathBuf>,
    /// Baseline arm: random encoder initialized from --seed.
    #[arg(long)]
    pub random_init: bool,
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    /// Seed of the task decoder; keep it equal across arms.
    #[arg(long, default_value_t = 0)]
    pub decoder_seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f32,
    #[arg(long)]
    pub out_ckpt: PathBuf,
    #[arg(long)]
    pub metrics: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Required for bandwidth checkpoints.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 2048)]
    pub bins: usize,
    /// Seed of the masks used to score in-painting checkpoints.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Per-example loss CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// One CSV, or two for a side-by-side comparison.
    #[arg(long, num_args = 1..=2, required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn manifest_path(primary: &Path) -> PathBuf {
    primary.with_extension("manifest")
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

pub fn run(command: &Command) -> Result<RunManifest> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<RunManifest> {
    let start = Instant::now();
    if a.frames == 0 {
        return Err(CliError::Usage("--frames must be at least 1".into()));
    }
    let mut cfg = SceneConfig::new(a.antennas, a.samples, a.bins);
    cfg.signals_min = a.signals_min;
    cfg.signals_max = a.signals_max;
    cfg.snr_min_db = a.snr_min;
    cfg.snr_max_db = a.snr_max;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let set = make_capture_set(&cfg, a.frames, a.seed)?;
    let (cap, lab) = (with_suffix(&a.out, ".rfcap"), with_suffix(&a.out, ".rflab"));
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    write_capture(&cap, &set.frames)?;
    write_labels(&lab, &set.labels)?;

    let mut m = RunManifest::new("gen");
    m.seed = Some(a.seed);
    m.config("frames", a.frames);
    m.config("antennas", a.antennas);
    m.config("samples", a.samples);
    m.config("bins", a.bins);
    m.config("signals_min", a.signals_min);
    m.config("signals_max", a.signals_max);
    m.config("snr_min", a.snr_min);
    m.config("snr_max", a.snr_max);
    m.output(&cap)?;
    m.output(&lab)?;
    m.duration = start.elapsed();
    m.write(&with_suffix(&a.out, ".manifest"))?;
    Ok(m)
}

fn unlabeled(path: &Path) -> Result<LabeledCapture> {
    let frames = read_capture(path)?;
    if frames.is_empty() {
        return Err(CliError::Usage(format!("{} holds no frames", path.display())));
    }
    Ok(LabeledCapture {
        antennas: frames[0].antennas(),
        samples: frames[0].samples(),
        labels: vec![Vec::new(); frames.len()],
        frames,
    })
}

fn record_outcome(m: &mut RunManifest, out: &TrainOutcome) {
    m.result("initial_val_loss", format!("{:?}", out.initial_val_loss));
    m.result("best_val_loss", format!("{:?}", out.best_val_loss));
    m.result("best_epoch", out.best_epoch);
    m.result("epochs", out.records.len());
    m.result("train_examples", out.train_indices.len());
    m.result("val_examples", out.val_indices.len());
}

fn config_entries(m: &mut RunManifest, cfg: &TrainConfig) {
    for (k, v) in cfg.to_metadata() {
        m.config.push((k.trim_start_matches("train.").to_string(), v));
    }
}

pub fn cmd_pretrain(a: &PretrainArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let cfg = a.train.config(a.lr, 1e-6, false);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let capture = unlabeled(&a.data)?;
    let examples = examples_from_capture(&capture, a.train.bins, false)?;
    let mut net = InpaintNet::new(2 * capture.antennas, a.train.seed);
    let outcome = train_loop(&mut net, &examples, &cfg, Objective::Inpaint, Some(&a.out_ckpt))?;
    write_metrics(&a.metrics, &outcome.records)?;

    let mut m = RunManifest::new("pretrain");
    m.seed = Some(a.train.seed);
    config_entries(&mut m, &cfg);
    m.config("bins", a.train.bins);
    m.input(&a.data)?;
    m.output(&a.out_ckpt)?;
    m.output(&a.metrics)?;
    record_outcome(&mut m, &outcome);
    m.duration = start.elapsed();
    m.write(&manifest_path(&a.out_ckpt))?;
    Ok(m)
}

fn load_inpaint(path: &Path) -> Result<InpaintNet> {
    let ck = Checkpoint::load(path)?;
    if ck.get("model") != Some("inpaint") {
        return Err(CliError::Usage(format!("{} is not an in-painting checkpoint", path.display())));
    }
    let channels = meta_usize(&ck, "in_channels", path)?;
    let net = InpaintNet::new(channels, 0);
    ck.apply_to(&net)?;
    Ok(net)
}

fn meta_usize(ck: &Checkpoint, key: &str, path: &Path) -> Result<usize> {
    ck.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Core(arrayssl::Error::Format {
            path: path.to_path_buf(),
            msg: format!("metadata key {key} missing or malformed"),
        }))
}

/// The network a transfer run starts from. The decoder depends only on
/// `decoder_seed`, so the random and pretrained arms share it.
pub fn transfer_net(a: &TransferArgs, antennas: usize, time: usize) -> Result<BandwidthNet> {
    let mut net = BandwidthNet::new(2 * antennas, time, a.train.seed, a.decoder_seed)?;
    if let Some(p) = &a.encoder_ckpt {
        let src = load_inpaint(p)?;
        transfer_encoder(&src, &mut net, a.freeze_encoder)?;
    } else {
        net.frozen = a.freeze_encoder;
    }
    Ok(net)
}

pub fn cmd_transfer(a: &TransferArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let cfg = a.train.config(a.lr, a.epsilon, a.freeze_encoder);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if a.random_init == a.encoder_ckpt.is_some() {
        return Err(CliError::Usage("give exactly one of --encoder-ckpt and --random-init".into()));
    }
    let capture = read_labeled_capture(&a.data, &a.labels)?;
    if capture.frames.is_empty() {
        return Err(CliError::Usage(format!("{} holds no frames", a.data.display())));
    }
    let examples = examples_from_capture(&capture, a.train.bins, true)?;
    let mut net = transfer_net(a, capture.antennas, capture.samples / a.train.bins)?;
    let outcome = train_loop(&mut net, &examples, &cfg, Objective::Bandwidth, Some(&a.out_ckpt))?;
    write_metrics(&a.metrics, &outcome.records)?;

    let mut m = RunManifest::new("transfer");
    m.seed = Some(a.train.seed);
    config_entries(&mut m, &cfg);
    m.config("bins", a.train.bins);
    m.config("decoder_seed", a.decoder_seed);
    m.config("init", if a.random_init { "random" } else { "pretrained" });
    m.input(&a.data)?;
    m.input(&a.labels)?;
    if let Some(p) = &a.encoder_ckpt {
        m.input(p)?;
    }
    m.output(&a.out_ckpt)?;
    m.output(&a.metrics)?;
    record_outcome(&mut m, &outcome);
    m.duration = start.elapsed();
    m.write(&manifest_path(&a.out_ckpt))?;
    Ok(m)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let ck = Checkpoint::load(&a.ckpt)?;
    let channels = meta_usize(&ck, "in_channels", &a.ckpt)?;
    let mut m = RunManifest::new("eval");
    m.seed = Some(a.seed);
    m.config("bins", a.bins);
    m.input(&a.ckpt)?;
    m.input(&a.data)?;
    let report = match ck.get("model") {
        Some("inpaint") => {
            let mut net = InpaintNet::new(channels, 0);
            ck.apply_to(&net)?;
            let capture = unlabeled(&a.data)?;
            let examples = examples_from_capture(&capture, a.bins, false)?;
            evaluate(&mut net, &examples, Objective::Inpaint, 1e-6, a.seed, a.batch)?
        }
        Some("bandwidth") => {
            let labels = a
                .labels
                .as_ref()
                .ok_or_else(|| CliError::Usage("--labels is required for a bandwidth checkpoint".into()))?;
            m.input(labels)?;
            let time = meta_usize(&ck, "time", &a.ckpt)?;
            let mut net = BandwidthNet::new(channels, time, 0, 0)?;
            ck.apply_to(&net)?;
            let capture = read_labeled_capture(&a.data, labels)?;
            let examples = examples_from_capture(&capture, a.bins, true)?;
            let eps = ck.get("train.epsilon").and_then(|v| v.parse().ok()).unwrap_or(1e-6);
            evaluate(&mut net, &examples, Objective::Bandwidth, eps, a.seed, a.batch)?
        }
        other => {
            return Err(CliError::Core(arrayssl::Error::Format {
                path: a.ckpt.clone(),
                msg: format!("unknown model kind {other:?}"),
            }))
        }
    };
    let mut csv = String::from("index,loss\n");
    for (i, l) in report.per_example.iter().enumerate() {
        csv.push_str(&format!("{i},{l:?}\n"));
    }
    fs::write(&a.out, csv).map_err(|e| io_error(&a.out, e))?;
    println!(
        "mean_loss={:.6} best_case_loss={:.6} examples={}",
        report.mean,
        report.best_case,
        report.per_example.len()
    );
    m.output(&a.out)?;
    m.result("mean_loss", format!("{:?}", report.mean));
    m.result("best_case_loss", format!("{:?}", report.best_case));
    m.duration = start.elapsed();
    m.write(&manifest_path(&a.out))?;
    Ok(m)
}

pub fn cmd_plot(a: &PlotArgs) -> Result<RunManifest> {
    let start = Instant::now();
    if a.metrics.is_empty() || a.metrics.len() > 2 {
        return Err(CliError::Usage("plot takes one or two metrics files".into()));
    }
    let mut panels = Vec::new();
    for p in &a.metrics {
        let title = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
        panels.push((title, read_metrics(p)?));
    }
    fs::write(&a.out, plot::render_svg(&panels)).map_err(|e| io_error(&a.out, e))?;
    let mut m = RunManifest::new("plot");
    for p in &a.metrics {
        m.input(p)?;
    }
    m.output(&a.out)?;
    m.duration = start.elapsed();
    m.write(&manifest_path(&a.out))?;
    Ok(m)
}

/// Builds the global thread pool from `ARRAYSSL_THREADS` if it is set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ARRAYSSL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("ARRAYSSL_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}
