//! Synthetic hourly feature stream.
//!
//! Field sizes are log-skewed so only a few fields are large, feature draws
//! within a field follow a Zipf law over the current vocabulary (rank `r` is
//! feature id `r - 1`, so older features are the frequent ones), vocabularies
//! only grow, and labels come from a planted logistic model over hidden
//! per-feature weights plus Gaussian logit noise.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};

use crate::error::{Error, Result};
use crate::model::{FeatureId, FieldId};
use crate::trainer::{logistic, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub num_fields: usize,
    /// Initial vocabulary of the smallest field.
    pub min_field_size: usize,
    /// Initial vocabulary of the largest field.
    pub max_field_size: usize,
    /// Field `i` starts with `min * (max/min)^((i/(F-1))^skew)` features; larger skew means more small fields.
    pub size_skew: f64,
    pub zipf_exponent: f64,
    pub segments: usize,
    pub samples_per_segment: usize,
    /// Fractional vocabulary growth applied between consecutive segments.
    pub new_feature_rate: f64,
    /// `(vector length, share of fields)` pairs.
    pub vector_length_mix: Vec<(usize, f64)>,
    /// Probability that a sample carries a feature of a given field.
    pub field_presence: f64,
    /// Standard deviation of the hidden per-feature weights.
    pub signal_std: f64,
    /// Standard deviation of the Gaussian noise added to the planted logit.
    pub label_noise: f64,
    pub base_logit: f64,
    /// Trailing share of each segment reserved for evaluation.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            num_fields: 16,
            min_field_size: 50,
            max_field_size: 72_000,
            size_skew: 2.0,
            zipf_exponent: 1.1,
            segments: 24,
            samples_per_segment: 100_000,
            new_feature_rate: 0.015,
            vector_length_mix: vec![(9, 0.89), (17, 0.11)],
            field_presence: 1.0,
            signal_std: 0.6,
            label_noise: 0.5,
            base_logit: -1.0,
            heldout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_fields == 0 {
            return bad("num_fields must be positive");
        }
        if self.min_field_size == 0 || self.max_field_size < self.min_field_size {
            return bad("field sizes must satisfy 0 < min_field_size <= max_field_size");
        }
        if !(self.size_skew > 0.0) || !self.size_skew.is_finite() {
            return bad("size_skew must be positive");
        }
        if !(self.zipf_exponent > 1.0) || !self.zipf_exponent.is_finite() {
            return Err(Error::Config(format!(
                "zipf_exponent must be greater than 1, got {}",
                self.zipf_exponent
            )));
        }
        if self.segments == 0 || self.samples_per_segment == 0 {
            return bad("segments and samples_per_segment must be positive");
        }
        if !(self.new_feature_rate >= 0.0) || !self.new_feature_rate.is_finite() {
            return bad("new_feature_rate must be non-negative");
        }
        if self.vector_length_mix.is_empty()
            || self.vector_length_mix.iter().any(|&(l, p)| l == 0 || !(p >= 0.0))
        {
            return bad("vector_length_mix needs positive lengths and non-negative shares");
        }
        let total: f64 = self.vector_length_mix.iter().map(|m| m.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "vector_length_mix shares must sum to 1, got {total}"
            )));
        }
        if !(0.0..=1.0).contains(&self.field_presence) {
            return bad("field_presence must lie in [0, 1]");
        }
        if !(self.signal_std >= 0.0) || !(self.label_noise >= 0.0) || !self.base_logit.is_finite() {
            return bad("signal_std and label_noise must be non-negative");
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad("heldout_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Initial vocabulary sizes, indexed by field id.
    pub fn initial_sizes(&self) -> Vec<usize> {
        let f = self.num_fields;
        let ratio = self.max_field_size as f64 / self.min_field_size as f64;
        (0..f)
            .map(|i| {
                let u = if f == 1 { 1.0 } else { i as f64 / (f - 1) as f64 };
                (self.min_field_size as f64 * ratio.powf(u.powf(self.size_skew))).round() as usize
            })
            .collect()
    }

    /// Vector length of each field, indexed by field id.
    ///
    /// Shares are turned into field counts by largest remainder and the
    /// lengths are dealt out with a seeded shuffle.
    pub fn vector_lengths(&self) -> Vec<usize> {
        let f = self.num_fields;
        let mut counts: Vec<(usize, usize, f64)> = self
            .vector_length_mix
            .iter()
            .map(|&(l, p)| {
                let exact = p * f as f64;
                (l, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = counts.iter().map(|c| c.1).sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
        for &i in order.iter().take(f - assigned) {
            counts[i].1 += 1;
        }
        let mut lengths: Vec<usize> = counts.iter().flat_map(|&(l, c, _)| std::iter::repeat_n(l, c)).collect();
        lengths.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x1e57_0f1e_1d5));
        lengths
    }

    pub fn field_layout(&self) -> Vec<(FieldId, usize)> {
        self.vector_lengths()
            .into_iter()
            .enumerate()
            .map(|(i, l)| (FieldId(i as u32), l))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: u32,
    pub samples: Vec<Sample>,
    /// Vocabulary size per field id at the time the segment was drawn.
    pub vocab: Vec<usize>,
}

impl Segment {
    /// Number of leading samples used for training; the rest is held out.
    pub fn train_len(&self, heldout_fraction: f64) -> usize {
        let held = (self.samples.len() as f64 * heldout_fraction).round() as usize;
        self.samples.len() - held.min(self.samples.len())
    }

    pub fn split(&self, heldout_fraction: f64) -> (&[Sample], &[Sample]) {
        self.samples.split_at(self.train_len(heldout_fraction))
    }
}

/// Draws segments one at a time; the planted model stays queryable.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    config: StreamConfig,
    rng: ChaCha8Rng,
    vocab: Vec<usize>,
    hidden: Vec<Vec<f64>>,
    hidden_rngs: Vec<ChaCha8Rng>,
    next_segment: usize,
}

impl StreamGenerator {
    pub fn new(config: StreamConfig) -> Result<Self> {
        config.validate()?;
        let vocab = config.initial_sizes();
        let hidden_rngs = (0..config.num_fields)
            .map(|f| ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (f as u64 + 1)))
            .collect();
        let mut gen = StreamGenerator {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            hidden: vec![Vec::new(); config.num_fields],
            hidden_rngs,
            vocab,
            config,
            next_segment: 0,
        };
        gen.extend_hidden()?;
        Ok(gen)
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    fn extend_hidden(&mut self) -> Result<()> {
        let normal = Normal::new(0.0, self.config.signal_std.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Config(e.to_string()))?;
        for f in 0..self.config.num_fields {
            while self.hidden[f].len() < self.vocab[f] {
                let w = if self.config.signal_std > 0.0 {
                    normal.sample(&mut self.hidden_rngs[f])
                } else {
                    0.0
                };
                self.hidden[f].push(w);
            }
        }
        Ok(())
    }

    /// Planted logit without noise.
    pub fn planted_logit(&self, sample: &Sample) -> f64 {
        self.config.base_logit
            + sample
                .features
                .iter()
                .map(|(f, x)| self.hidden[f.0 as usize][x.index()])
                .sum::<f64>()
    }

    pub fn planted_probability(&self, sample: &Sample) -> f64 {
        logistic(self.planted_logit(sample))
    }

    pub fn vocab(&self) -> &[usize] {
        &self.vocab
    }

    pub fn next_segment(&mut self) -> Result<Option<Segment>> {
        if self.next_segment >= self.config.segments {
            return Ok(None);
        }
        if self.next_segment > 0 {
            for v in &mut self.vocab {
                *v += (*v as f64 * self.config.new_feature_rate).round() as usize;
            }
            self.extend_hidden()?;
        }
        let samplers = self
            .vocab
            .iter()
            .map(|&n| Zipf::new(n as f64, self.config.zipf_exponent).map_err(|e| Error::Config(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let noise = Normal::new(0.0, self.config.label_noise.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Config(e.to_string()))?;

        let mut samples = Vec::with_capacity(self.config.samples_per_segment);
        for _ in 0..self.config.samples_per_segment {
            let mut features = Vec::with_capacity(self.config.num_fields);
            for (f, sampler) in samplers.iter().enumerate() {
                if self.config.field_presence < 1.0 && self.rng.random::<f64>() >= self.config.field_presence {
                    continue;
                }
                let rank = sampler.sample(&mut self.rng) as usize;
                let id = (rank.max(1) - 1).min(self.vocab[f] - 1);
                features.push((FieldId(f as u32), FeatureId(id as u32)));
            }
            let mut sample = Sample::new(features, 0);
            let mut z = self.planted_logit(&sample);
            if self.config.label_noise > 0.0 {
                z += noise.sample(&mut self.rng);
            }
            sample.label = (self.rng.random::<f64>() < logistic(z)) as u8;
            samples.push(sample);
        }
        let segment = Segment {
            segment_id: self.next_segment as u32,
            samples,
            vocab: self.vocab.clone(),
        };
        self.next_segment += 1;
        Ok(Some(segment))
    }
}

impl Iterator for StreamGenerator {
    type Item = Result<Segment>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_segment().transpose()
    }
}

/// Every segment of the stream, in order.
pub fn generate_stream(config: &StreamConfig) -> Result<Vec<Segment>> {
    StreamGenerator::new(config.clone())?.collect()
}

/// Gini coefficient of non-negative counts (0 = uniform, towards 1 = concentrated).
pub fn gini(counts: &[u64]) -> f64 {
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as f64 + 1.0) * c as f64)
        .sum();
    (2.0 * weighted) / (n as f64 * total as f64) - (n as f64 + 1.0) / n as f64
}

const SEGMENT_MAGIC: [u8; 4] = *b"FCSG";
const SEGMENT_VERSION: u16 = 1;

pub fn segment_file_name(id: u32) -> String {
    format!("segment_{id:04}.bin")
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Header, then one length-prefixed record per sample:
/// `len u32 | label u8 | count u16 | count * (field u32, feature u32)`.
pub fn write_segment<W: Write>(mut out: W, segment: &Segment) -> Result<()> {
    out.write_all(&SEGMENT_MAGIC)?;
    out.write_all(&SEGMENT_VERSION.to_le_bytes())?;
    out.write_all(&segment.segment_id.to_le_bytes())?;
    out.write_all(&(segment.samples.len() as u64).to_le_bytes())?;
    let mut rec = Vec::with_capacity(64);
    for s in &segment.samples {
        rec.clear();
        rec.push(s.label);
        rec.extend_from_slice(&(s.features.len() as u16).to_le_bytes());
        for (f, x) in &s.features {
            rec.extend_from_slice(&f.0.to_le_bytes());
            rec.extend_from_slice(&x.0.to_le_bytes());
        }
        out.write_all(&(rec.len() as u32).to_le_bytes())?;
        out.write_all(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads samples back; the vocabulary snapshot lives in the manifest and is left empty.
pub fn read_segment<R: Read>(mut input: R) -> Result<Segment> {
    fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated segment: {e}")))?;
        Ok(b)
    }
    if take::<4, _>(&mut input)? != SEGMENT_MAGIC {
        return Err(Error::Format("bad segment magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut input)?);
    if version != SEGMENT_VERSION {
        return Err(Error::Format(format!("unsupported segment version {version}")));
    }
    let segment_id = u32::from_le_bytes(take(&mut input)?);
    let count = u64::from_le_bytes(take(&mut input)?) as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 24));
    let mut rec = Vec::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(&mut input)?) as usize;
        rec.resize(len, 0);
        input
            .read_exact(&mut rec)
            .map_err(|e| Error::Format(format!("truncated record: {e}")))?;
        if len < 3 {
            return Err(Error::Format("record too short".into()));
        }
        let label = rec[0];
        if label > 1 {
            return Err(Error::Format(format!("label {label} is not binary")));
        }
        let n = u16::from_le_bytes([rec[1], rec[2]]) as usize;
        if len != 3 + 8 * n {
            return Err(Error::Format("record length does not match feature count".into()));
        }
        let features = rec[3..]
            .chunks_exact(8)
            .map(|c| {
                (
                    FieldId(u32::from_le_bytes(c[..4].try_into().expect("4 bytes"))),
                    FeatureId(u32::from_le_bytes(c[4..].try_into().expect("4 bytes"))),
                )
            })
            .collect();
        samples.push(Sample::new(features, label));
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after segment".into()));
    }
    Ok(Segment {
        segment_id,
        samples,
        vocab: Vec::new(),
    })
}

/// Contents of a stream directory's manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub heldout_fraction: f64,
    pub vector_lengths: Vec<usize>,
    /// `(segment id, sample count, vocabulary per field)`.
    pub segments: Vec<(u32, usize, Vec<usize>)>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "# fieldcomp stream manifest");
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "heldout_fraction={}", self.heldout_fraction);
        let _ = writeln!(out, "fields={}", self.vector_lengths.len());
        let _ = writeln!(out, "vector_lengths={}", join(&self.vector_lengths));
        for (id, n, vocab) in &self.segments {
            let _ = writeln!(out, "segment={id} samples={n} vocab={}", join(vocab));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("manifest: {m}"));
        let list = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .filter(|p| !p.is_empty())
                .map(|p| p.parse().map_err(|_| bad(format!("bad number '{p}'"))))
                .collect()
        };
        let mut seed = None;
        let mut heldout = None;
        let mut lengths = None;
        let mut segments = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            if line.starts_with("segment=") {
                let mut id = None;
                let mut n = None;
                let mut vocab = None;
                for kv in line.split_whitespace() {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad entry '{kv}'")))?;
                    match k {
                        "segment" => id = v.parse().ok(),
                        "samples" => n = v.parse().ok(),
                        "vocab" => vocab = Some(list(v)?),
                        _ => return Err(bad(format!("unknown key '{k}'"))),
                    }
                }
                match (id, n, vocab) {
                    (Some(i), Some(n), Some(v)) => segments.push((i, n, v)),
                    _ => return Err(bad(format!("incomplete segment line '{line}'"))),
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line '{line}'")))?;
            match k {
                "seed" => seed = Some(v.parse().map_err(|_| bad("bad seed".into()))?),
                "heldout_fraction" => heldout = Some(v.parse().map_err(|_| bad("bad heldout_fraction".into()))?),
                "fields" => {}
                "vector_lengths" => lengths = Some(list(v)?),
                _ => return Err(bad(format!("unknown key '{k}'"))),
            }
        }
        let vector_lengths = lengths.ok_or_else(|| bad("missing vector_lengths".into()))?;
        if segments.iter().any(|s| s.2.len() != vector_lengths.len()) {
            return Err(bad("vocabulary list length differs from field count".into()));
        }
        Ok(Manifest {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            heldout_fraction: heldout.ok_or_else(|| bad("missing heldout_fraction".into()))?,
            vector_lengths,
            segments,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Manifest::parse(&text)
    }
}

/// Generates the stream into `dir`: one file per segment plus the manifest.
pub fn write_stream(config: &StreamConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut gen = StreamGenerator::new(config.clone())?;
    let mut manifest = Manifest {
        seed: config.seed,
        heldout_fraction: config.heldout_fraction,
        vector_lengths: config.vector_lengths(),
        segments: Vec::new(),
    };
    let mut paths = Vec::new();
    while let Some(seg) = gen.next_segment()? {
        let path = dir.join(segment_file_name(seg.segment_id));
        write_segment(BufWriter::new(File::create(&path)?), &seg)?;
        manifest.segments.push((seg.segment_id, seg.samples.len(), seg.vocab.clone()));
        paths.push(path);
    }
    fs::write(dir.join(MANIFEST_NAME), manifest.render())?;
    Ok(paths)
}

/// Loads segment `id` from `dir`, attaching its vocabulary from the manifest.
pub fn load_segment(dir: &Path, manifest: &Manifest, id: u32) -> Result<Segment> {
    let path = dir.join(segment_file_name(id));
    let file = File::open(&path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    let mut seg = read_segment(BufReader::new(file))?;
    if seg.segment_id != id {
        return Err(Error::Format(format!(
            "{} holds segment {}",
            path.display(),
            seg.segment_id
        )));
    }
    let entry = manifest
        .segments
        .iter()
        .find(|s| s.0 == id)
        .ok_or_else(|| Error::Format(format!("segment {id} missing from manifest")))?;
    if entry.1 != seg.samples.len() {
        return Err(Error::Format(format!("segment {id} sample count differs from manifest")));
    }
    seg.vocab = entry.2.clone();
    Ok(seg)
}
