use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fieldcomp::compression::compress_model;
use fieldcomp::datagen::{load_segment, write_stream, Manifest, Segment};
use fieldcomp::format::{load_checkpoint, save_checkpoint, Precision};
use fieldcomp::pipeline::{
    grow_to_vocab, initial_model, render_report, run_pipeline, PipelineConfig, RunLogs, METRICS_FILE,
};
use fieldcomp::trainer::{retrain_epoch, train_epoch, EvalStats, PredictorModel, TrainStats};

#[derive(Parser)]
#[command(name = "fieldcomp", version, about = "Cluster-based compression of field embedding tables")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic segment stream.
    Gen(Settings),
    /// Run one initial-training epoch on a segment.
    Train(StepArgs),
    /// Compress a trained checkpoint.
    Compress(CompressArgs),
    /// Run one retraining epoch of a compressed checkpoint on a segment.
    Retrain(StepArgs),
    /// Evaluate a checkpoint on a segment's held-out slice.
    Eval(StepArgs),
    /// Train, compress and retrain over every segment.
    Pipeline(Settings),
    /// Render metrics logs as a Before/After table.
    Report(ReportArgs),
}

/// Settings shared by every command; flags override the config file.
#[derive(Args, Clone, Default)]
struct Settings {
    /// `key=value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// random, kmeanspp or topk.
    #[arg(long)]
    init: Option<String>,
    #[arg(long, overrides_with = "no_fast")]
    fast: bool,
    #[arg(long)]
    no_fast: bool,
    #[arg(long)]
    fast_multiplier: Option<usize>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    samples_per_segment: Option<usize>,
    #[arg(long)]
    zipf_exponent: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    compress_every: Option<usize>,
    /// Train the baseline only.
    #[arg(long)]
    no_compress: bool,
    /// Segment directory written by `gen`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory (or file, for single-step commands).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Settings {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let mut overrides: Vec<(&str, String)> = Vec::new();
        let mut opt = |key, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((key, v));
            }
        };
        opt("seed", self.seed.map(|v| v.to_string()));
        opt("k", self.k.map(|v| v.to_string()));
        opt("init", self.init.clone());
        opt("fast_multiplier", self.fast_multiplier.map(|v| v.to_string()));
        opt("segments", self.segments.map(|v| v.to_string()));
        opt("samples_per_segment", self.samples_per_segment.map(|v| v.to_string()));
        opt("zipf_exponent", self.zipf_exponent.clone());
        opt("learning_rate", self.learning_rate.clone());
        opt("compress_every", self.compress_every.map(|v| v.to_string()));
        opt("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()));
        opt("out", self.out.as_ref().map(|p| p.display().to_string()));
        if self.fast {
            overrides.push(("fast", "true".into()));
        }
        if self.no_fast {
            overrides.push(("fast", "false".into()));
        }
        if self.no_compress {
            overrides.push(("compress", "false".into()));
        }
        for (k, v) in overrides {
            config.set(k, &v)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| fieldcomp::Error::Config(format!("--set expects key=value, got '{kv}'")))?;
            config.set(k.trim(), v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct StepArgs {
    #[command(flatten)]
    settings: Settings,
    /// Segment id to use from the data directory.
    #[arg(long, default_value_t = 0)]
    segment: u32,
    /// Checkpoint to start from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    settings: Settings,
    /// Trained uncompressed checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories or metrics files; more than one adds a comparison summary.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn load_step_segment(config: &PipelineConfig, id: u32) -> Result<(Manifest, Segment)> {
    let dir = config
        .data_dir
        .as_ref()
        .ok_or_else(|| fieldcomp::Error::Config("--data-dir is required".into()))?;
    let manifest = Manifest::load(dir)?;
    let segment = load_segment(dir, &manifest, id)?;
    Ok((manifest, segment))
}

fn require_out(config: &PipelineConfig) -> Result<&Path> {
    Ok(config
        .out
        .as_deref()
        .ok_or_else(|| fieldcomp::Error::Config("--out is required".into()))?)
}

fn print_stats(label: &str, segment: u32, stats: &TrainStats) {
    let eval = stats.heldout.clone().unwrap_or_default();
    println!(
        "{label} segment={segment} samples={} train_log_loss={:.6} heldout_log_loss={:.6} heldout_auc={}",
        stats.samples_seen,
        stats.train_log_loss,
        eval.log_loss,
        eval.auc.map_or_else(|| "NA".into(), |a| format!("{a:.6}"))
    );
}

fn cmd_gen(settings: &Settings) -> Result<()> {
    let config = settings.resolve()?;
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let paths = write_stream(&config.stream, &out)?;
    println!("wrote {} segments and manifest to {}", paths.len(), out.display());
    Ok(())
}

fn cmd_train(args: &StepArgs) -> Result<()> {
    let config = args.settings.resolve()?;
    let out = require_out(&config)?;
    let (manifest, segment) = load_step_segment(&config, args.segment)?;
    let mut model = match &args.checkpoint {
        Some(path) => {
            let mut m = load_checkpoint(path)?;
            grow_to_vocab(&mut m, &config, &segment.vocab)?;
            m
        }
        None => initial_model(&config, &manifest.vector_lengths, &segment.vocab)?,
    };
    model.reset_frequencies();
    let (train, heldout) = segment.split(manifest.heldout_fraction);
    let stats = train_epoch(&mut model, train, heldout, &config.trainer, config.stream.seed ^ segment.segment_id as u64)?;
    save_checkpoint(out, &model, Precision::F64)?;
    print_stats("train", segment.segment_id, &stats);
    Ok(())
}

fn cmd_compress(args: &CompressArgs) -> Result<()> {
    let config = args.settings.resolve()?;
    let out = require_out(&config)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let dense = model
        .dense_model()
        .ok_or_else(|| anyhow!("{} is already compressed", args.checkpoint.display()))?;
    let (compressed, report) = compress_model(dense, &config.compression)?;
    let predictor = model.with_compressed(compressed)?;
    save_checkpoint(out, &predictor, Precision::F64)?;
    fs::write(out.with_extension("report.kv"), report.to_records())?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_retrain(args: &StepArgs) -> Result<()> {
    let config = args.settings.resolve()?;
    let out = require_out(&config)?;
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| fieldcomp::Error::Config("--checkpoint is required".into()))?;
    let mut model = load_checkpoint(path)?;
    let (manifest, segment) = load_step_segment(&config, args.segment)?;
    let (train, heldout) = segment.split(manifest.heldout_fraction);
    let stats = retrain_epoch(&mut model, train, heldout, &config.trainer, config.stream.seed ^ segment.segment_id as u64)?;
    save_checkpoint(out, &model, Precision::F64)?;
    print_stats("retrain", segment.segment_id, &stats);
    Ok(())
}

fn cmd_eval(args: &StepArgs) -> Result<()> {
    let config = args.settings.resolve()?;
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| fieldcomp::Error::Config("--checkpoint is required".into()))?;
    let model: PredictorModel = load_checkpoint(path)?;
    let (manifest, segment) = load_step_segment(&config, args.segment)?;
    let (_, heldout) = segment.split(manifest.heldout_fraction);
    let EvalStats { log_loss, auc } = model.evaluate(heldout)?;
    println!(
        "eval segment={} samples={} log_loss={log_loss:.6} auc={}",
        segment.segment_id,
        heldout.len(),
        auc.map_or_else(|| "NA".into(), |a| format!("{a:.6}"))
    );
    Ok(())
}

fn cmd_pipeline(settings: &Settings) -> Result<()> {
    let mut config = settings.resolve()?;
    if config.out.is_none() {
        config.out = Some(PathBuf::from("run"));
    }
    let total = config.stream.segments;
    let mut progress = |sid: u32, rows: &[fieldcomp::pipeline::MetricRow]| {
        let last: Vec<String> = rows
            .iter()
            .filter(|r| r.segment_id == sid)
            .map(|r| format!("{} auc={}", r.phase.as_str(), r.auc.map_or_else(|| "NA".into(), |a| format!("{a:.4}"))))
            .collect();
        eprintln!("segment {}/{total}: {}", sid + 1, last.join(" "));
    };
    let outcome = run_pipeline(&config, Some(&mut progress))?;
    let out = config.out.as_ref().expect("set above");
    println!(
        "wrote {} metric rows to {}",
        outcome.metrics.len(),
        out.join(METRICS_FILE).display()
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut runs = Vec::new();
    for path in &args.runs {
        match RunLogs::load(path) {
            Ok(r) => runs.push(r),
            Err(fieldcomp::Error::EmptyInput) => bail!("no data in {}", path.display()),
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }
    print!("{}", render_report(&runs)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(fieldcomp::Error::Config("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Gen(s) => cmd_gen(s),
        Command::Train(a) => cmd_train(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Retrain(a) => cmd_retrain(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(s) => cmd_pipeline(s),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[config]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config = e
                .chain()
                .any(|c| c.downcast_ref::<fieldcomp::Error>().is_some_and(fieldcomp::Error::is_config));
            let text = format!("{e:#}").replace('\n', " ");
            if config {
                eprintln!("error[config]: {text}");
                ExitCode::from(2)
            } else {
                eprintln!("error[runtime]: {text}");
                ExitCode::from(1)
            }
        }
    }
}
