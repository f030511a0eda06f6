//! Command-line interface: `synth`, `train`, `eval`, `sweep`, `analyze`.
//!
//! Configuration precedence is defaults, then the `--config` file (TOML or
//! JSON), then the `CPSP_SEED` environment variable, then explicit flags.
//! Every command writes `run_manifest.json` next to its outputs.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{generate_synthetic, read_feature_pack, write_feature_pack, Dataset, Partition, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_heatmap_png, write_matrix_csv, write_report, EvalReport};
use crate::trainer::{
    config_hash, parse_tau, sweep_k_theta, sweep_tau, train_stage, Checkpoint, TrainConfig, TrainMode, Variant,
    TAU_GRID,
};

pub const SEED_ENV: &str = "CPSP_SEED";

#[derive(Debug, Parser)]
#[command(name = "cpsp", version, about = "Audio-visual event localization with contrastive positive sample propagation")]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature pack.
    Synth(SynthArgs),
    /// Train one stage.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Run the threshold or mining-parameter grids.
    Sweep(SweepArgs),
    /// Dump centroid distances and pruned similarity maps.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub videos_per_class: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub d_a: Option<usize>,
    #[arg(long)]
    pub d_v: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone)]
pub struct TrainOverrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Threshold; accepts `-inf`.
    #[arg(long, value_parser = parse_tau, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eta_prime: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated: asp, wpsp, sapsp, no_weight_branch.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub prefetch: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory of the previous stage.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Partition {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Partition::Train,
            SplitArg::Val => Partition::Val,
            SplitArg::Test => Partition::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Number of videos whose probability maps are exported.
    #[arg(long, default_value_t = 8)]
    pub maps: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GridArg {
    Tau,
    KTheta,
    All,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub grid: GridArg,
    /// Initial-stage checkpoint for the mining grid; trained on the fly if
    /// absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Base mode: psp or weak_psp.
    #[arg(long, default_value = "psp")]
    pub mode: String,
    /// Run grid points on separate threads.
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Number of videos whose similarity maps are dumped.
    #[arg(long, default_value_t = 8)]
    pub videos: usize,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub subcommand: String,
    pub resolved_config: serde_json::Value,
    pub config_hash: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Parses a TOML or JSON file, chosen by extension, trying both otherwise.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let json = || serde_json::from_str::<T>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())));
    let toml = || toml::from_str::<T>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())));
    match ext.as_str() {
        "json" => json(),
        "toml" => toml(),
        _ => toml().or_else(|_| json()),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("{SEED_ENV}={s:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

/// Resolves a training configuration from every source.
pub fn resolve_train_config(mode: Option<&str>, o: &TrainOverrides, init: Option<&PathBuf>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &o.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(m) = mode {
        cfg.mode = m.parse::<TrainMode>()?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = o.$field.clone() { cfg.$field = v; } )* };
    }
    set!(tau, eta, eta_prime, k, theta, batch_size, seed);
    if o.epochs.is_some() {
        cfg.epochs = o.epochs;
    }
    if o.lr.is_some() {
        cfg.lr = o.lr;
    }
    if let Some(v) = &o.variant {
        cfg.variant = v.parse::<Variant>()?;
    }
    if o.prefetch {
        cfg.prefetch = true;
    }
    if let Some(p) = init {
        cfg.init_checkpoint = Some(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_synth_config(a: &SynthArgs) -> Result<SynthConfig> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => load_config(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = a.$flag { cfg.$field = v; } )* };
    }
    set!(num_classes => num_classes, videos_per_class => videos_per_class, t => t, d_a => d_a,
         d_v => d_v, n => n, noise => feature_noise_sigma, seed => seed);
    cfg.validate()?;
    Ok(cfg)
}

fn manifest<T: Serialize>(args: &[String], sub: &str, cfg: &T, started: String, outputs: Vec<String>) -> Result<RunManifest> {
    Ok(RunManifest {
        command: args.to_vec(),
        subcommand: sub.into(),
        resolved_config: serde_json::to_value(cfg)?,
        config_hash: config_hash(cfg),
        version: format!("cpsp-{}", env!("CARGO_PKG_VERSION")),
        started_at: started,
        finished_at: now(),
        outputs,
    })
}

fn load_pack(path: &Path) -> Result<Dataset> {
    let data = read_feature_pack(path)?;
    log::info!("loaded {} videos from {}", data.videos.len(), path.display());
    Ok(data)
}

fn check_compatible(ckpt: &Checkpoint, data: &Dataset) -> Result<()> {
    let dims = data.dims()?;
    let m = &ckpt.manifest.model;
    if (m.encoder.d_a, m.encoder.d_v, m.classes) != (dims.d_a, dims.d_v, dims.c) {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint was trained on d_a={}, d_v={}, C={} but the pack has d_a={}, d_v={}, C={}",
            m.encoder.d_a, m.encoder.d_v, m.classes, dims.d_a, dims.d_v, dims.c
        )));
    }
    Ok(())
}

fn cmd_synth(args: &[String], a: &SynthArgs) -> Result<()> {
    let started = now();
    let cfg = resolve_synth_config(a)?;
    let data = generate_synthetic(&cfg)?;
    write_feature_pack(&a.out, &data)?;
    let s = &data.split;
    println!(
        "synthetic pack: {} videos, C={} (+background), T={}, d_a={}, d_v={}, N={}",
        data.videos.len(),
        cfg.num_classes,
        cfg.t,
        cfg.d_a,
        cfg.d_v,
        cfg.n
    );
    println!(
        "split: train {} / val {} / test {}; mixed {} / all-event {} / residual {}",
        s.train.len(),
        s.val.len(),
        s.test.len(),
        s.d_bg.len(),
        s.d_ae.len(),
        s.residual.len()
    );
    manifest(args, "synth", &cfg, started, vec![a.out.join("manifest.json").display().to_string()])?.write(&a.out)
}

fn cmd_train(args: &[String], a: &TrainArgs) -> Result<()> {
    let started = now();
    let cfg = resolve_train_config(a.mode.as_deref(), &a.overrides, a.init.as_ref())?;
    let data = load_pack(&a.pack)?;
    let out = train_stage(&cfg, &data, None, Some(&a.out))?;
    println!(
        "{}: best epoch {}, val accuracy {:.4}, test accuracy {}",
        cfg.mode,
        out.best_epoch,
        out.val_accuracy,
        out.test_accuracy.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
    );
    let outputs = vec![
        a.out.join("checkpoint").display().to_string(),
        a.out.join("metrics.csv").display().to_string(),
    ];
    manifest(args, "train", &cfg, started, outputs)?.write(&a.out)
}

fn cmd_eval(args: &[String], a: &EvalArgs) -> Result<()> {
    let started = now();
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = load_pack(&a.pack)?;
    check_compatible(&ckpt, &data)?;
    let model = ckpt.to_model()?;
    let part: Partition = a.split.into();
    let ids = data.split.ids(part).to_vec();
    if ids.is_empty() {
        return Err(Error::Data(format!("split {part} is empty")));
    }
    let tau = ckpt.manifest.train_config.effective_tau();
    let (mut report, inf) = evaluate(&model, &data, &ids, &part.to_string(), tau, a.batch_size)?;
    report.checkpoint_mode = Some(ckpt.manifest.mode.to_string());
    report.config_hash = Some(ckpt.manifest.config_hash.clone());
    write_report(&a.out, &report, &inf, &data.categories, a.maps)?;
    print_report(&report);
    if part == Partition::Val {
        println!(
            "logged validation accuracy {:.6}, reproduced {:.6}",
            ckpt.manifest.metrics.val_accuracy, report.segment_accuracy
        );
    }
    #[derive(Serialize)]
    struct EvalConfig<'a> {
        checkpoint_hash: &'a str,
        split: String,
        batch_size: usize,
        maps: usize,
    }
    let cfg = EvalConfig {
        checkpoint_hash: &ckpt.manifest.config_hash,
        split: part.to_string(),
        batch_size: a.batch_size,
        maps: a.maps,
    };
    manifest(args, "eval", &cfg, started, vec![a.out.join("report.json").display().to_string()])?.write(&a.out)
}

fn print_report(r: &EvalReport) {
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    println!("{} split, {} videos: segment accuracy {:.4}", r.split, r.videos, r.segment_accuracy);
    println!("  Mean: SC {} CH {} DBI {}", opt(r.sc_mean), opt(r.ch_mean), opt(r.dbi_mean));
    println!("  All:  SC {} CH {} DBI {}", opt(r.sc_all), opt(r.ch_all), opt(r.dbi_all));
}

fn cmd_sweep(args: &[String], a: &SweepArgs) -> Result<()> {
    let started = now();
    let cfg = resolve_train_config(Some(&a.mode), &a.overrides, None)?;
    if !matches!(cfg.mode, TrainMode::Psp | TrainMode::WeakPsp) {
        return Err(Error::Config("sweep base mode must be psp or weak_psp".into()));
    }
    let data = load_pack(&a.pack)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut outputs = Vec::new();
    let mut markdown = String::new();
    let mut emit = |name: &str, table: &crate::trainer::SweepTable| -> Result<()> {
        let path = a.out.join(format!("{name}.csv"));
        fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
        outputs.push(path.display().to_string());
        markdown.push_str(&table.to_markdown());
        markdown.push('\n');
        Ok(())
    };
    if matches!(a.grid, GridArg::Tau | GridArg::All) {
        emit("tau_grid", &sweep_tau(&cfg, &data, &TAU_GRID, a.parallel)?)?;
    }
    if matches!(a.grid, GridArg::KTheta | GridArg::All) {
        let init = match &a.init {
            Some(p) => Checkpoint::load(p)?,
            None => train_stage(&cfg, &data, None, None)?.checkpoint,
        };
        let (theta, k) = sweep_k_theta(&cfg, &data, &init, a.parallel)?;
        emit("theta_grid", &theta)?;
        emit("k_grid", &k)?;
    }
    let path = a.out.join("sweep.md");
    fs::write(&path, &markdown).map_err(|e| Error::io(&path, e))?;
    print!("{markdown}");
    outputs.push(path.display().to_string());
    manifest(args, "sweep", &cfg, started, outputs)?.write(&a.out)
}

fn cmd_analyze(args: &[String], a: &AnalyzeArgs) -> Result<()> {
    let started = now();
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = load_pack(&a.pack)?;
    check_compatible(&ckpt, &data)?;
    let model = ckpt.to_model()?;
    let part: Partition = a.split.into();
    let ids = data.split.ids(part).to_vec();
    let tau = ckpt.manifest.train_config.effective_tau();
    let (report, inf) = evaluate(&model, &data, &ids, &part.to_string(), tau, 128)?;
    let dir = a.out.join("similarity");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut csv = String::from("category,centroid_distance\n");
    for (c, d) in &report.centroid_distances {
        csv.push_str(&format!("{c},{d}\n"));
    }
    let path = a.out.join("centroid_distances.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    for (id, gamma) in inf.ids.iter().zip(&inf.gamma_va).take(a.videos) {
        let cols: Vec<String> = (0..gamma.ncols()).map(|t| format!("a{t}")).collect();
        write_matrix_csv(&dir.join(format!("{id}.csv")), gamma, &cols)?;
        write_heatmap_png(&dir.join(format!("{id}.png")), gamma, 16)?;
    }
    for (c, d) in &report.centroid_distances {
        println!("{c}: centroid distance {d:.4}");
    }
    #[derive(Serialize)]
    struct AnalyzeConfig<'a> {
        checkpoint_hash: &'a str,
        split: String,
        videos: usize,
    }
    let cfg = AnalyzeConfig {
        checkpoint_hash: &ckpt.manifest.config_hash,
        split: part.to_string(),
        videos: a.videos,
    };
    manifest(args, "analyze", &cfg, started, vec![path.display().to_string(), dir.display().to_string()])?.write(&a.out)
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .try_init();
    let args: Vec<String> = raw.iter().map(|s| s.to_string_lossy().into_owned()).collect();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&args, a),
        Command::Train(a) => cmd_train(&args, a),
        Command::Eval(a) => cmd_eval(&args, a),
        Command::Sweep(a) => cmd_sweep(&args, a),
        Command::Analyze(a) => cmd_analyze(&args, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
