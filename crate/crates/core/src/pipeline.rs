//! Segment-by-segment train, compress, retrain loop with its logs.
//!
//! Each segment is trained once on the growing uncompressed baseline. On
//! compressing segments the baseline is clustered, the compressed copy is
//! retrained on the same training slice, and both are evaluated on the
//! segment's held-out tail. The baseline never sees the compressed copy, so
//! its rows do not depend on whether compression is enabled.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::clustering::InitMethod;
use crate::compression::{compress_model, CompressionConfig, CompressionReport};
use crate::datagen::{load_segment, Manifest, Segment, StreamConfig, StreamGenerator};
use crate::error::{Error, Result};
use crate::format::{save_checkpoint, Precision};
use crate::model::{uncompressed_bytes, Field, FieldId, FieldedEmbeddingModel, Matrix};
use crate::trainer::{retrain_epoch, train_epoch, PredictorModel, TrainerConfig};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const TIMINGS_FILE: &str = "timings.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORTS_DIR: &str = "reports";
pub const CHECKPOINTS_DIR: &str = "checkpoints";

const METRICS_HEADER: &str = "segment_id\tphase\tsamples\tlog_loss\tauc\tvectors\tbytes\tratio";
const TIMINGS_HEADER: &str = "segment_id\tphase\twall_ms\tclustering_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stream: StreamConfig,
    pub compression: CompressionConfig,
    pub trainer: TrainerConfig,
    pub compress: bool,
    /// Compress on every `compress_every`-th segment and always on the last one.
    pub compress_every: usize,
    pub embedding_init_std: f64,
    pub dense_init_scale: f64,
    /// Keep feature counts across segments instead of restarting them each segment.
    pub cumulative_frequencies: bool,
    pub checkpoints: bool,
    /// Read segments from here instead of generating them.
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stream: StreamConfig::default(),
            compression: CompressionConfig::default(),
            trainer: TrainerConfig::default(),
            compress: true,
            compress_every: 1,
            embedding_init_std: 0.1,
            dense_init_scale: 0.5,
            cumulative_frequencies: false,
            checkpoints: true,
            data_dir: None,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

impl PipelineConfig {
    /// Every key accepted by [`PipelineConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "num_fields",
        "min_field_size",
        "max_field_size",
        "size_skew",
        "zipf_exponent",
        "segments",
        "samples_per_segment",
        "new_feature_rate",
        "vector_length_mix",
        "field_presence",
        "signal_std",
        "label_noise",
        "base_logit",
        "heldout_fraction",
        "k",
        "eligibility_multiplier",
        "fast",
        "fast_multiplier",
        "init",
        "max_iters",
        "rel_tolerance",
        "bytes_per_component",
        "learning_rate",
        "train_batch_size",
        "retrain_batch_size",
        "compress",
        "compress_every",
        "embedding_init_std",
        "dense_init_scale",
        "cumulative_frequencies",
        "checkpoints",
        "data_dir",
        "out",
    ];

    /// Sets one `key=value` setting. `seed` drives the stream, clustering and initialization.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => {
                let seed = parse(key, value)?;
                self.stream.seed = seed;
                self.compression.cluster.seed = seed;
            }
            "num_fields" => self.stream.num_fields = parse(key, value)?,
            "min_field_size" => self.stream.min_field_size = parse(key, value)?,
            "max_field_size" => self.stream.max_field_size = parse(key, value)?,
            "size_skew" => self.stream.size_skew = parse(key, value)?,
            "zipf_exponent" => self.stream.zipf_exponent = parse(key, value)?,
            "segments" => self.stream.segments = parse(key, value)?,
            "samples_per_segment" => self.stream.samples_per_segment = parse(key, value)?,
            "new_feature_rate" => self.stream.new_feature_rate = parse(key, value)?,
            "vector_length_mix" => {
                self.stream.vector_length_mix = value
                    .split(',')
                    .map(|pair| {
                        let (l, p) = pair
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("expected length:share, got '{pair}'")))?;
                        Ok((parse(key, l.trim())?, parse(key, p.trim())?))
                    })
                    .collect::<Result<_>>()?
            }
            "field_presence" => self.stream.field_presence = parse(key, value)?,
            "signal_std" => self.stream.signal_std = parse(key, value)?,
            "label_noise" => self.stream.label_noise = parse(key, value)?,
            "base_logit" => self.stream.base_logit = parse(key, value)?,
            "heldout_fraction" => self.stream.heldout_fraction = parse(key, value)?,
            "k" => self.compression.k = parse(key, value)?,
            "eligibility_multiplier" => self.compression.eligibility_multiplier = parse(key, value)?,
            "fast" => self.compression.fast_enabled = parse_bool(key, value)?,
            "fast_multiplier" => self.compression.fast_multiplier = parse(key, value)?,
            "init" => {
                self.compression.cluster.init_method =
                    InitMethod::from_str(value).map_err(|_| Error::Config(format!("unknown init method '{value}'")))?
            }
            "max_iters" => self.compression.cluster.max_iters = parse(key, value)?,
            "rel_tolerance" => self.compression.cluster.rel_tolerance = parse(key, value)?,
            "bytes_per_component" => self.compression.bytes_per_component = parse(key, value)?,
            "learning_rate" => self.trainer.learning_rate = parse(key, value)?,
            "train_batch_size" => self.trainer.train_batch_size = parse(key, value)?,
            "retrain_batch_size" => self.trainer.retrain_batch_size = parse(key, value)?,
            "compress" => self.compress = parse_bool(key, value)?,
            "compress_every" => self.compress_every = parse(key, value)?,
            "embedding_init_std" => self.embedding_init_std = parse(key, value)?,
            "dense_init_scale" => self.dense_init_scale = parse(key, value)?,
            "cumulative_frequencies" => self.cumulative_frequencies = parse_bool(key, value)?,
            "checkpoints" => self.checkpoints = parse_bool(key, value)?,
            "data_dir" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Renders every setting; [`PipelineConfig::from_text`] reads it back.
    pub fn render(&self) -> String {
        let s = &self.stream;
        let c = &self.compression;
        let mix = s
            .vector_length_mix
            .iter()
            .map(|(l, p)| format!("{l}:{p}"))
            .collect::<Vec<_>>()
            .join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("seed", s.seed.to_string());
        kv("num_fields", s.num_fields.to_string());
        kv("min_field_size", s.min_field_size.to_string());
        kv("max_field_size", s.max_field_size.to_string());
        kv("size_skew", s.size_skew.to_string());
        kv("zipf_exponent", s.zipf_exponent.to_string());
        kv("segments", s.segments.to_string());
        kv("samples_per_segment", s.samples_per_segment.to_string());
        kv("new_feature_rate", s.new_feature_rate.to_string());
        kv("vector_length_mix", mix);
        kv("field_presence", s.field_presence.to_string());
        kv("signal_std", s.signal_std.to_string());
        kv("label_noise", s.label_noise.to_string());
        kv("base_logit", s.base_logit.to_string());
        kv("heldout_fraction", s.heldout_fraction.to_string());
        kv("k", c.k.to_string());
        kv("eligibility_multiplier", c.eligibility_multiplier.to_string());
        kv("fast", c.fast_enabled.to_string());
        kv("fast_multiplier", c.fast_multiplier.to_string());
        kv("init", c.cluster.init_method.to_string());
        kv("max_iters", c.cluster.max_iters.to_string());
        kv("rel_tolerance", c.cluster.rel_tolerance.to_string());
        kv("bytes_per_component", c.bytes_per_component.to_string());
        kv("learning_rate", self.trainer.learning_rate.to_string());
        kv("train_batch_size", self.trainer.train_batch_size.to_string());
        kv("retrain_batch_size", self.trainer.retrain_batch_size.to_string());
        kv("compress", self.compress.to_string());
        kv("compress_every", self.compress_every.to_string());
        kv("embedding_init_std", self.embedding_init_std.to_string());
        kv("dense_init_scale", self.dense_init_scale.to_string());
        kv("cumulative_frequencies", self.cumulative_frequencies.to_string());
        kv("checkpoints", self.checkpoints.to_string());
        kv("data_dir", path(&self.data_dir));
        kv("out", path(&self.out));
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.compression.validate()?;
        self.trainer.validate()?;
        if self.compress_every == 0 {
            return Err(Error::Config("compress_every must be positive".into()));
        }
        if !(self.embedding_init_std >= 0.0) || !(self.dense_init_scale >= 0.0) {
            return Err(Error::Config("initialization scales must be non-negative".into()));
        }
        Ok(())
    }

    pub fn compresses_segment(&self, index: usize, total: usize) -> bool {
        self.compress && ((index + 1) % self.compress_every == 0 || index + 1 == total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Retrain,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Retrain => "retrain",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "retrain" => Ok(Phase::Retrain),
            _ => Err(Error::Format(format!("unknown phase '{s}'"))),
        }
    }
}

/// One metrics-log row: held-out quality and model size after a phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub segment_id: u32,
    pub phase: Phase,
    /// Training samples consumed by the phase.
    pub samples: usize,
    pub log_loss: f64,
    pub auc: Option<f64>,
    pub vectors: u64,
    pub bytes: u64,
    pub ratio: f64,
}

impl MetricRow {
    pub fn to_line(&self) -> String {
        let auc = self.auc.map_or_else(|| "NA".to_string(), |a| a.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.segment_id,
            self.phase.as_str(),
            self.samples,
            self.log_loss,
            auc,
            self.vectors,
            self.bytes,
            self.ratio
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            return Err(Error::Format(format!("metrics row needs 8 columns: '{line}'")));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad number '{}' in metrics row", cols[i])))
        };
        let u = |i: usize| -> Result<u64> {
            cols[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad integer '{}' in metrics row", cols[i])))
        };
        Ok(MetricRow {
            segment_id: u(0)? as u32,
            phase: cols[1].parse()?,
            samples: u(2)? as usize,
            log_loss: f(3)?,
            auc: if cols[4] == "NA" { None } else { Some(f(4)?) },
            vectors: u(5)?,
            bytes: u(6)?,
            ratio: f(7)?,
        })
    }
}

pub fn render_metrics(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parses a metrics log; a log with no rows is an [`Error::EmptyInput`].
pub fn parse_metrics(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        None => return Err(Error::EmptyInput),
        Some(h) if h.trim_end() == METRICS_HEADER => {}
        Some(h) => return Err(Error::Format(format!("unexpected metrics header '{h}'"))),
    }
    let rows = lines.map(MetricRow::parse).collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rows)
}

/// Wall-clock measurements, kept apart from the reproducible metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub segment_id: u32,
    /// `train`, `compress` or `retrain`.
    pub phase: String,
    pub wall_ms: f64,
    pub clustering_ms: f64,
}

pub fn render_timings(rows: &[TimingRow]) -> String {
    let mut out = String::from(TIMINGS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.3}\t{:.3}", r.segment_id, r.phase, r.wall_ms, r.clustering_ms);
    }
    out
}

pub fn parse_timings(text: &str) -> Result<Vec<TimingRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) if h.trim_end() == TIMINGS_HEADER => {}
        Some(h) => return Err(Error::Format(format!("unexpected timings header '{h}'"))),
    }
    lines
        .map(|line| {
            let c: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("bad timings row '{line}'"));
            if c.len() != 4 {
                return Err(bad());
            }
            Ok(TimingRow {
                segment_id: c[0].parse().map_err(|_| bad())?,
                phase: c[1].to_string(),
                wall_ms: c[2].parse().map_err(|_| bad())?,
                clustering_ms: c[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutcome {
    pub metrics: Vec<MetricRow>,
    pub timings: Vec<TimingRow>,
    pub reports: Vec<(u32, CompressionReport)>,
    /// The final baseline and, when the last segment was compressed, its retrained compressed copy.
    pub baseline: Option<PredictorModel>,
    pub compressed: Option<PredictorModel>,
}

impl PipelineOutcome {
    pub fn rows(&self, phase: Phase) -> impl Iterator<Item = &MetricRow> {
        self.metrics.iter().filter(move |r| r.phase == phase)
    }

    pub fn clustering_ms(&self) -> f64 {
        self.reports.iter().map(|(_, r)| r.clustering_ms()).sum()
    }
}

/// Deterministic initial embedding for one feature.
pub fn init_embedding(seed: u64, field: FieldId, feature: usize, len: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; len];
    }
    let mix = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((field.0 as u64) << 40)
        .wrapping_add(feature as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let normal = Normal::new(0.0, std).expect("finite positive std");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

/// The uncompressed starting model for the given vocabulary.
pub fn initial_model(config: &PipelineConfig, vector_lengths: &[usize], vocab: &[usize]) -> Result<PredictorModel> {
    if vector_lengths.len() != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vector_lengths.len(),
            actual: vocab.len(),
        });
    }
    let seed = config.stream.seed;
    let fields = vector_lengths
        .iter()
        .zip(vocab)
        .enumerate()
        .map(|(i, (&l, &n))| {
            let id = FieldId(i as u32);
            let mut data = Vec::with_capacity(n * l);
            for x in 0..n {
                data.extend(init_embedding(seed, id, x, l, config.embedding_init_std));
            }
            Field::with_zero_counts(id, Matrix::from_vec(n, l, data)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictorModel::new(
        FieldedEmbeddingModel::from_fields(fields)?,
        seed ^ 0xd1e5_e000,
        config.dense_init_scale,
    ))
}

pub fn grow_to_vocab(model: &mut PredictorModel, config: &PipelineConfig, vocab: &[usize]) -> Result<()> {
    let seed = config.stream.seed;
    let std = config.embedding_init_std;
    for (i, &n) in vocab.iter().enumerate() {
        let id = FieldId(i as u32);
        let l = model
            .dense_model()
            .ok_or_else(|| Error::Inconsistent("baseline must be uncompressed".into()))?
            .field(id)?
            .vector_len();
        model.grow_field(id, n, |x| init_embedding(seed, id, x, l, std))?;
    }
    Ok(())
}

fn shuffle_seed(seed: u64, segment: u32, phase: Phase) -> u64 {
    seed ^ ((segment as u64) << 1 | (phase == Phase::Retrain) as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)
}

/// Per-segment progress callback: `(segment, rows written so far)`.
pub type Progress<'a> = &'a mut dyn FnMut(u32, &[MetricRow]);

/// Runs the whole pipeline. Files are written only when `config.out` is set.
pub fn run_pipeline(config: &PipelineConfig, mut progress: Option<Progress<'_>>) -> Result<PipelineOutcome> {
    config.validate()?;

    let (vector_lengths, heldout_fraction, mut source): (Vec<usize>, f64, Box<dyn Iterator<Item = Result<Segment>>>) =
        match &config.data_dir {
            Some(dir) => {
                let manifest = Manifest::load(dir)?;
                if manifest.segments.is_empty() {
                    return Err(Error::InvalidInput(format!("no segments listed in {}", dir.display())));
                }
                let take = config.stream.segments.min(manifest.segments.len());
                let ids: Vec<u32> = manifest.segments.iter().take(take).map(|s| s.0).collect();
                let dir = dir.clone();
                let lengths = manifest.vector_lengths.clone();
                let hf = manifest.heldout_fraction;
                (lengths, hf, Box::new(ids.into_iter().map(move |id| load_segment(&dir, &manifest, id))))
            }
            None => (
                config.stream.vector_lengths(),
                config.stream.heldout_fraction,
                Box::new(StreamGenerator::new(config.stream.clone())?),
            ),
        };
    let total = match &config.data_dir {
        Some(dir) => config.stream.segments.min(Manifest::load(dir)?.segments.len()),
        None => config.stream.segments,
    };

    if let Some(out) = &config.out {
        fs::create_dir_all(out.join(REPORTS_DIR))?;
        if config.checkpoints {
            fs::create_dir_all(out.join(CHECKPOINTS_DIR))?;
        }
        fs::write(out.join(CONFIG_FILE), config.render())?;
    }

    let bpc = config.compression.bytes_per_component;
    let seed = config.stream.seed;
    let mut outcome = PipelineOutcome::default();
    let mut baseline: Option<PredictorModel> = None;
    let mut index = 0usize;

    while let Some(segment) = source.next().transpose()? {
        let sid = segment.segment_id;
        let model = match baseline.as_mut() {
            Some(m) => {
                grow_to_vocab(m, config, &segment.vocab)?;
                m
            }
            None => baseline.insert(initial_model(config, &vector_lengths, &segment.vocab)?),
        };
        if !config.cumulative_frequencies {
            model.reset_frequencies();
        }
        let (train, heldout) = segment.split(heldout_fraction);

        let t = Instant::now();
        let stats = train_epoch(model, train, heldout, &config.trainer, shuffle_seed(seed, sid, Phase::Train))?;
        outcome.timings.push(TimingRow {
            segment_id: sid,
            phase: "train".into(),
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
            clustering_ms: 0.0,
        });
        let dense = model.dense_model().expect("baseline stays uncompressed");
        let before_bytes: u64 = dense
            .fields()
            .map(|f| uncompressed_bytes(f.len() as u64, f.vector_len() as u64, bpc))
            .sum();
        let eval = stats.heldout.unwrap_or_default();
        outcome.metrics.push(MetricRow {
            segment_id: sid,
            phase: Phase::Train,
            samples: stats.samples_seen,
            log_loss: eval.log_loss,
            auc: eval.auc,
            vectors: dense.total_vectors() as u64,
            bytes: before_bytes,
            ratio: 1.0,
        });

        outcome.compressed = None;
        if config.compresses_segment(index, total) {
            let t = Instant::now();
            let (cm, report) = compress_model(dense, &config.compression)?;
            outcome.timings.push(TimingRow {
                segment_id: sid,
                phase: "compress".into(),
                wall_ms: t.elapsed().as_secs_f64() * 1e3,
                clustering_ms: report.clustering_ms(),
            });
            let mut after = model.with_compressed(cm)?;
            let t = Instant::now();
            let stats = retrain_epoch(
                &mut after,
                train,
                heldout,
                &config.trainer,
                shuffle_seed(seed, sid, Phase::Retrain),
            )?;
            outcome.timings.push(TimingRow {
                segment_id: sid,
                phase: "retrain".into(),
                wall_ms: t.elapsed().as_secs_f64() * 1e3,
                clustering_ms: 0.0,
            });
            let eval = stats.heldout.unwrap_or_default();
            outcome.metrics.push(MetricRow {
                segment_id: sid,
                phase: Phase::Retrain,
                samples: stats.samples_seen,
                log_loss: eval.log_loss,
                auc: eval.auc,
                vectors: report.vectors_after,
                bytes: report.bytes_after,
                ratio: report.ratio,
            });
            if let Some(out) = &config.out {
                let stem = out.join(REPORTS_DIR).join(format!("segment_{sid:04}"));
                fs::write(stem.with_extension("tsv"), report.to_table())?;
                fs::write(stem.with_extension("kv"), report.to_records())?;
                if config.checkpoints {
                    save_checkpoint(&out.join(CHECKPOINTS_DIR).join("compressed.fcmb"), &after, Precision::F64)?;
                }
            }
            outcome.reports.push((sid, report));
            outcome.compressed = Some(after);
        }

        if let Some(out) = &config.out {
            fs::write(out.join(METRICS_FILE), render_metrics(&outcome.metrics))?;
            fs::write(out.join(TIMINGS_FILE), render_timings(&outcome.timings))?;
            if config.checkpoints {
                save_checkpoint(
                    &out.join(CHECKPOINTS_DIR).join("baseline.fcmb"),
                    baseline.as_ref().expect("set above"),
                    Precision::F64,
                )?;
            }
        }
        if let Some(p) = progress.as_mut() {
            p(sid, &outcome.metrics);
        }
        index += 1;
    }
    if index == 0 {
        return Err(Error::EmptyInput);
    }
    outcome.baseline = baseline;
    Ok(outcome)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// One run's logs, as read back from its output directory.
#[derive(Debug, Clone)]
pub struct RunLogs {
    pub name: String,
    pub metrics: Vec<MetricRow>,
    pub timings: Vec<TimingRow>,
}

impl RunLogs {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = if dir.is_dir() { dir.join(METRICS_FILE) } else { dir.to_path_buf() };
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        let metrics = parse_metrics(&text)?;
        let timings_path = path.with_file_name(TIMINGS_FILE);
        let timings = match fs::read_to_string(&timings_path) {
            Ok(t) => parse_timings(&t)?,
            Err(_) => Vec::new(),
        };
        Ok(RunLogs {
            name: dir.display().to_string(),
            metrics,
            timings,
        })
    }

    fn row(&self, segment: u32, phase: Phase) -> Option<&MetricRow> {
        self.metrics.iter().find(|r| r.segment_id == segment && r.phase == phase)
    }

    fn segments(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.metrics.iter().map(|r| r.segment_id).collect();
        ids.dedup();
        ids
    }

    pub fn clustering_ms(&self) -> f64 {
        self.timings.iter().map(|t| t.clustering_ms).sum()
    }
}

/// Before/After table for one run; with more runs, a side-by-side summary
/// including each run's clustering wall time relative to the first.
pub fn render_report(runs: &[RunLogs]) -> Result<String> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>7}  {:>12} {:>12}  {:>17} {:>16}  {:>17} {:>17}  {:>11}",
        "Segment",
        "AUC (Before)",
        "AUC (After)",
        "Log loss (Before)",
        "Log loss (After)",
        "#Vectors (Before)",
        "#Vectors (After)",
        "Compression"
    );
    for sid in first.segments() {
        let b = first.row(sid, Phase::Train);
        let a = first.row(sid, Phase::Retrain);
        let _ = writeln!(
            out,
            "{:>7}  {:>12} {:>12}  {:>17} {:>16}  {:>17} {:>17}  {:>11}",
            sid,
            fmt_opt(b.and_then(|r| r.auc), 4),
            fmt_opt(a.and_then(|r| r.auc), 4),
            fmt_opt(b.map(|r| r.log_loss), 4),
            fmt_opt(a.map(|r| r.log_loss), 4),
            b.map_or("-".into(), |r| r.vectors.to_string()),
            a.map_or("-".into(), |r| r.vectors.to_string()),
            a.map_or("-".into(), |r| format!("{:.2}", r.ratio)),
        );
    }
    if runs.len() > 1 {
        let base_ms = first.clustering_ms();
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<40} {:>10} {:>10} {:>10} {:>14} {:>18}",
            "run", "segments", "mean AUC", "final AUC", "clustering_ms", "clustering_ratio"
        );
        for run in runs {
            let after: Vec<&MetricRow> = run.metrics.iter().filter(|r| r.phase == Phase::Retrain).collect();
            let aucs: Vec<f64> = after.iter().filter_map(|r| r.auc).collect();
            let mean = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
            let ms = run.clustering_ms();
            let ratio = if base_ms > 0.0 { Some(ms / base_ms) } else { None };
            let _ = writeln!(
                out,
                "{:<40} {:>10} {:>10} {:>10} {:>14.1} {:>18}",
                run.name,
                run.segments().len(),
                fmt_opt(mean, 4),
                fmt_opt(after.last().and_then(|r| r.auc), 4),
                ms,
                fmt_opt(ratio, 3),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.apply_text(
            "seed=3\nnum_fields=4\nmin_field_size=5\nmax_field_size=800\nsegments=3\n\
             samples_per_segment=600\nk=4\neligibility_multiplier=100\nfast_multiplier=50\n",
        )
        .unwrap();
        c
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut c = tiny();
        c.set("init", "topk").unwrap();
        c.set("vector_length_mix", "9:0.5,17:0.5").unwrap();
        c.out = Some(PathBuf::from("/tmp/x"));
        assert_eq!(PipelineConfig::from_text(&c.render()).unwrap(), c);
        for key in PipelineConfig::KEYS {
            assert!(c.render().contains(&format!("{key}=")), "{key}");
        }
        assert!(matches!(c.set("nope", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("k", "ten"), Err(Error::Config(_))));
        assert!(matches!(c.set("fast", "maybe"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_text("zipf_exponent=0.5").unwrap().validate().unwrap_err().is_config());
    }

    #[test]
    fn compress_schedule() {
        let mut c = tiny();
        c.compress_every = 3;
        let hits: Vec<usize> = (0..7).filter(|&i| c.compresses_segment(i, 7)).collect();
        assert_eq!(hits, [2, 5, 6]);
        c.compress = false;
        assert!(!(0..7).any(|i| c.compresses_segment(i, 7)));
    }

    #[test]
    fn metrics_round_trip() {
        let rows = vec![
            MetricRow {
                segment_id: 0,
                phase: Phase::Train,
                samples: 10,
                log_loss: 0.1 + 0.2,
                auc: None,
                vectors: 5,
                bytes: 180,
                ratio: 1.0,
            },
            MetricRow {
                segment_id: 0,
                phase: Phase::Retrain,
                samples: 10,
                log_loss: 1.0 / 3.0,
                auc: Some(0.7),
                vectors: 2,
                bytes: 77,
                ratio: 180.0 / 77.0,
            },
        ];
        assert_eq!(parse_metrics(&render_metrics(&rows)).unwrap(), rows);
        assert!(matches!(parse_metrics(""), Err(Error::EmptyInput)));
        assert!(matches!(parse_metrics(&format!("{METRICS_HEADER}\n")), Err(Error::EmptyInput)));
        assert!(parse_metrics("a\tb\n").is_err());
    }

    #[test]
    fn small_run_writes_logs_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny();
        c.out = Some(dir.path().to_path_buf());
        let outcome = run_pipeline(&c, None).unwrap();
        assert_eq!(outcome.metrics.len(), 6);
        assert_eq!(outcome.reports.len(), 3);
        // the largest field (800+) is the only one above 100 * 4
        assert!(outcome.reports.iter().all(|(_, r)| r.compressed_count() >= 1));
        let logs = RunLogs::load(dir.path()).unwrap();
        assert_eq!(logs.metrics, outcome.metrics);
        for (sid, report) in &outcome.reports {
            let kv = fs::read_to_string(dir.path().join(REPORTS_DIR).join(format!("segment_{sid:04}.kv"))).unwrap();
            assert_eq!(&CompressionReport::from_records(&kv).unwrap(), report);
        }
        assert!(dir.path().join(CHECKPOINTS_DIR).join("baseline.fcmb").exists());
        let table = render_report(&[logs.clone(), logs]).unwrap();
        assert!(table.contains("AUC (Before)"));
        assert!(table.contains("clustering_ratio"));
    }

    #[test]
    fn baseline_rows_ignore_compression() {
        let with = run_pipeline(&tiny(), None).unwrap();
        let mut c = tiny();
        c.compress = false;
        let without = run_pipeline(&c, None).unwrap();
        assert!(without.rows(Phase::Retrain).next().is_none());
        assert_eq!(with.rows(Phase::Train).collect::<Vec<_>>(), without.rows(Phase::Train).collect::<Vec<_>>());
    }
}
