//! Per-field compression: eligibility, optional head-only clustering, and
//! codebook/mask construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::clustering::{assign_nearest, kmeans, topk_indices, ClusterConfig, ClusteringResult};
use crate::error::{Error, Result};
use crate::model::{
    compressed_bytes, mask_width_for, uncompressed_bytes, Codebook, CompressedField,
    CompressedModel, Field, FieldId, FieldedEmbeddingModel, MaskTable, DEFAULT_COMPONENT_BYTES,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionConfig {
    pub k: usize,
    /// A field is compressed when it has at least `eligibility_multiplier * k` features.
    pub eligibility_multiplier: usize,
    /// With fast clustering, only the `fast_multiplier * k` most frequent features are clustered.
    pub fast_multiplier: usize,
    pub fast_enabled: bool,
    /// `k` here is ignored; the outer `k` wins. The seed is mixed with each field id.
    pub cluster: ClusterConfig,
    pub bytes_per_component: u64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            k: 100,
            eligibility_multiplier: 100,
            fast_multiplier: 100,
            fast_enabled: true,
            cluster: ClusterConfig::default(),
            bytes_per_component: DEFAULT_COMPONENT_BYTES,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.eligibility_multiplier == 0 {
            return Err(Error::Config("eligibility multiplier must be positive".into()));
        }
        if self.fast_multiplier == 0 {
            return Err(Error::Config("fast multiplier must be positive".into()));
        }
        if self.bytes_per_component == 0 {
            return Err(Error::Config("bytes per component must be positive".into()));
        }
        self.cluster_config_for(FieldId(0)).validate()
    }

    pub fn eligibility_threshold(&self) -> usize {
        self.eligibility_multiplier * self.k
    }

    pub fn fast_cutoff(&self) -> usize {
        self.fast_multiplier * self.k
    }

    /// Clustering settings for one field; seeds are independent per field.
    pub fn cluster_config_for(&self, field: FieldId) -> ClusterConfig {
        ClusterConfig {
            k: self.k,
            seed: self.cluster.seed ^ field.0 as u64,
            ..self.cluster.clone()
        }
    }
}

/// One row of a compression report.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    pub field_id: FieldId,
    pub n_before: u64,
    /// `None` for fields kept verbatim.
    pub k_after: Option<u64>,
    pub vector_len: u64,
    pub clustered_count: u64,
    pub objective: f64,
    pub wall_ms: f64,
}

impl FieldReport {
    pub fn passthrough(field: &Field) -> Self {
        FieldReport {
            field_id: field.field_id,
            n_before: field.len() as u64,
            k_after: None,
            vector_len: field.vector_len() as u64,
            clustered_count: 0,
            objective: 0.0,
            wall_ms: 0.0,
        }
    }

    pub fn vectors_after(&self) -> u64 {
        self.k_after.unwrap_or(self.n_before)
    }

    pub fn bytes_before(&self, bytes_per_component: u64) -> u64 {
        uncompressed_bytes(self.n_before, self.vector_len, bytes_per_component)
    }

    pub fn bytes_after(&self, bytes_per_component: u64) -> u64 {
        match self.k_after {
            Some(k) => compressed_bytes(
                self.n_before,
                k,
                self.vector_len,
                bytes_per_component,
                mask_width_for(k as usize) as u64,
            ),
            None => self.bytes_before(bytes_per_component),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub fields: Vec<FieldReport>,
    pub bytes_per_component: u64,
    pub vectors_before: u64,
    pub vectors_after: u64,
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub ratio: f64,
    pub wall_ms: f64,
}

impl CompressionReport {
    /// Totals are derived from the per-field rows; rows are sorted by field id.
    pub fn from_fields(mut fields: Vec<FieldReport>, bytes_per_component: u64, wall_ms: f64) -> Self {
        fields.sort_by_key(|f| f.field_id);
        let vectors_before = fields.iter().map(|f| f.n_before).sum();
        let vectors_after = fields.iter().map(FieldReport::vectors_after).sum();
        let bytes_before: u64 = fields.iter().map(|f| f.bytes_before(bytes_per_component)).sum();
        let bytes_after: u64 = fields.iter().map(|f| f.bytes_after(bytes_per_component)).sum();
        let ratio = if bytes_after == 0 {
            1.0
        } else {
            bytes_before as f64 / bytes_after as f64
        };
        CompressionReport {
            fields,
            bytes_per_component,
            vectors_before,
            vectors_after,
            bytes_before,
            bytes_after,
            ratio,
            wall_ms,
        }
    }

    pub fn compressed_count(&self) -> usize {
        self.fields.iter().filter(|f| f.k_after.is_some()).count()
    }

    /// Sum of per-field clustering times.
    pub fn clustering_ms(&self) -> f64 {
        self.fields.iter().map(|f| f.wall_ms).sum()
    }

    /// Fixed-width text table, one line per field plus a totals line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>12} {:>12} {:>15} {:>18} {:>12}",
            "field_id", "n_before", "k_after", "clustered_count", "objective", "wall_ms"
        );
        for f in &self.fields {
            let k = f.k_after.map_or_else(|| "passthrough".to_string(), |k| k.to_string());
            let _ = writeln!(
                out,
                "{:>8} {:>12} {:>12} {:>15} {:>18.6} {:>12.3}",
                f.field_id.0, f.n_before, k, f.clustered_count, f.objective, f.wall_ms
            );
        }
        let _ = writeln!(
            out,
            "total vectors {} -> {}, bytes {} -> {}, ratio {:.4}",
            self.vectors_before, self.vectors_after, self.bytes_before, self.bytes_after, self.ratio
        );
        out
    }

    /// `key=value` records separated by spaces: one per field, then a totals record.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for f in &self.fields {
            let k = f.k_after.map_or_else(|| "passthrough".to_string(), |k| k.to_string());
            let _ = writeln!(
                out,
                "record=field field_id={} n_before={} k_after={} vector_len={} clustered_count={} objective={} wall_ms={}",
                f.field_id.0, f.n_before, k, f.vector_len, f.clustered_count, f.objective, f.wall_ms
            );
        }
        let _ = writeln!(
            out,
            "record=totals vectors_before={} vectors_after={} bytes_per_component={} bytes_before={} bytes_after={} ratio={} wall_ms={}",
            self.vectors_before,
            self.vectors_after,
            self.bytes_per_component,
            self.bytes_before,
            self.bytes_after,
            self.ratio,
            self.wall_ms
        );
        out
    }

    /// Parses the output of [`CompressionReport::to_records`].
    ///
    /// Totals are recomputed from the field records and checked against the
    /// stored totals record.
    pub fn from_records(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("report records: {m}"));
        let mut fields = Vec::new();
        let mut totals = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let kv: BTreeMap<&str, &str> = line
                .split_whitespace()
                .map(|p| p.split_once('=').ok_or_else(|| bad(format!("bad entry '{p}'"))))
                .collect::<Result<_>>()?;
            let get = |k: &str| kv.get(k).copied().ok_or_else(|| bad(format!("missing '{k}' in '{line}'")));
            let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad '{k}'"))) };
            let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad '{k}'"))) };
            match get("record")? {
                "field" => {
                    let k_after = match get("k_after")? {
                        "passthrough" => None,
                        _ => Some(num("k_after")?),
                    };
                    fields.push(FieldReport {
                        field_id: FieldId(num("field_id")? as u32),
                        n_before: num("n_before")?,
                        k_after,
                        vector_len: num("vector_len")?,
                        clustered_count: num("clustered_count")?,
                        objective: real("objective")?,
                        wall_ms: real("wall_ms")?,
                    });
                }
                "totals" => totals = Some((num("bytes_per_component").unwrap_or(DEFAULT_COMPONENT_BYTES), real("ratio")?, real("wall_ms")?, num("bytes_before")?, num("bytes_after")?)),
                other => return Err(bad(format!("unknown record kind '{other}'"))),
            }
        }
        let (bpc, ratio, wall_ms, bb, ba) = totals.ok_or_else(|| bad("missing totals record".into()))?;
        let report = CompressionReport::from_fields(fields, bpc, wall_ms);
        if report.bytes_before != bb || report.bytes_after != ba || report.ratio != ratio {
            return Err(Error::Inconsistent("report totals disagree with field records".into()));
        }
        Ok(report)
    }
}

/// `bytes_before / bytes_after` of a report.
pub fn compression_ratio(report: &CompressionReport) -> Result<f64> {
    if report.bytes_after == 0 {
        return Err(Error::InvalidInput("report has zero compressed size".into()));
    }
    Ok(report.bytes_before as f64 / report.bytes_after as f64)
}

/// Fields with at least `eligibility_multiplier * k` features.
pub fn select_eligible_fields(model: &FieldedEmbeddingModel, config: &CompressionConfig) -> BTreeSet<FieldId> {
    let threshold = config.eligibility_threshold();
    model
        .fields()
        .filter(|f| f.len() >= threshold)
        .map(|f| f.field_id)
        .collect()
}

/// Everything produced while compressing one field.
#[derive(Debug, Clone)]
pub struct FieldCompression {
    pub compressed: CompressedField,
    pub report: FieldReport,
    pub clustering: ClusteringResult,
    /// Feature indices that went through k-means, in clustering-input order.
    pub clustered: Vec<usize>,
}

pub fn compress_field(field: &Field, config: &CompressionConfig) -> Result<FieldCompression> {
    let start = Instant::now();
    let cluster_cfg = config.cluster_config_for(field.field_id);
    let n = field.len();
    let cutoff = config.fast_cutoff().min(n);

    let (clustered, clustering, masks) = if config.fast_enabled && cutoff < n {
        let head = topk_indices(&field.frequencies, cutoff);
        let head_vectors = field.vectors.select_rows(&head);
        let head_freqs: Vec<u64> = head.iter().map(|&i| field.frequencies[i]).collect();
        let result = kmeans(&head_vectors, &head_freqs, &cluster_cfg)?;

        let mut in_head = vec![false; n];
        let mut masks = vec![0u32; n];
        for (&row, &a) in head.iter().zip(&result.assignments) {
            in_head[row] = true;
            masks[row] = a;
        }
        let tail: Vec<usize> = (0..n).filter(|&i| !in_head[i]).collect();
        let tail_masks = assign_nearest(&field.vectors.select_rows(&tail), &result.centroids)?;
        for (&row, a) in tail.iter().zip(tail_masks) {
            masks[row] = a;
        }
        (head, result, masks)
    } else {
        let result = kmeans(&field.vectors, &field.frequencies, &cluster_cfg)?;
        let masks = result.assignments.clone();
        ((0..n).collect(), result, masks)
    };

    let codebook = Codebook::new(field.field_id, clustering.centroids.clone())?;
    let compressed = CompressedField::new(codebook, MaskTable::new(field.field_id, masks))?;
    let report = FieldReport {
        field_id: field.field_id,
        n_before: n as u64,
        k_after: Some(compressed.k() as u64),
        vector_len: field.vector_len() as u64,
        clustered_count: clustered.len() as u64,
        objective: clustering.objective,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(FieldCompression {
        compressed,
        report,
        clustering,
        clustered,
    })
}

/// Compresses every eligible field and copies the rest verbatim.
pub fn compress_model(
    model: &FieldedEmbeddingModel,
    config: &CompressionConfig,
) -> Result<(CompressedModel, CompressionReport)> {
    config.validate()?;
    let start = Instant::now();
    let eligible = select_eligible_fields(model, config);
    let fields: Vec<&Field> = model.fields().collect();

    let results: Vec<Result<Option<FieldCompression>>> = fields
        .par_iter()
        .map(|f| {
            if eligible.contains(&f.field_id) {
                compress_field(f, config).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect();

    let mut out = CompressedModel::new();
    let mut rows = Vec::with_capacity(fields.len());
    for (field, result) in fields.into_iter().zip(results) {
        match result? {
            Some(fc) => {
                rows.push(fc.report);
                out.insert_compressed(fc.compressed)?;
            }
            None => {
                rows.push(FieldReport::passthrough(field));
                out.insert_passthrough(field.clone())?;
            }
        }
    }
    let report = CompressionReport::from_fields(
        rows,
        config.bytes_per_component,
        start.elapsed().as_secs_f64() * 1e3,
    );
    Ok((out, report))
}
