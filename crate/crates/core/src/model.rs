//! Embedding model representation and the two lookup paths.
//!
//! An uncompressed field stores one row per feature. A compressed field
//! stores `k` centroid rows (the codebook) plus a mask that maps every
//! feature to one of those rows. One-hot inputs are never materialized:
//! a [`FeatureId`] is the row index.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Default width of one stored vector component, in bytes.
pub const DEFAULT_COMPONENT_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldId(pub u32);

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureId(pub u32);

impl FeatureId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice yields a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One field's embedding matrix plus per-feature occurrence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub field_id: FieldId,
    pub vectors: Matrix,
    pub frequencies: Vec<u64>,
}

impl Field {
    pub fn new(field_id: FieldId, vectors: Matrix, frequencies: Vec<u64>) -> Result<Self> {
        if vectors.cols() == 0 {
            return Err(Error::InvalidInput(format!(
                "field {field_id} has zero vector length"
            )));
        }
        if vectors.rows() != frequencies.len() {
            return Err(Error::Inconsistent(format!(
                "field {field_id}: {} rows but {} frequencies",
                vectors.rows(),
                frequencies.len()
            )));
        }
        if !vectors.all_finite() {
            return Err(Error::InvalidInput(format!(
                "field {field_id} contains non-finite components"
            )));
        }
        Ok(Field {
            field_id,
            vectors,
            frequencies,
        })
    }

    /// A field with the given rows and all-zero frequencies.
    pub fn with_zero_counts(field_id: FieldId, vectors: Matrix) -> Result<Self> {
        let n = vectors.rows();
        Field::new(field_id, vectors, vec![0; n])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    #[inline]
    pub fn vector_len(&self) -> usize {
        self.vectors.cols()
    }

    /// Borrowing form of [`lookup_uncompressed`].
    pub fn row(&self, feature: FeatureId) -> Result<&[f64]> {
        if feature.index() >= self.len() {
            return Err(Error::FeatureOutOfRange {
                field: self.field_id.0,
                feature: feature.0,
                len: self.len(),
            });
        }
        Ok(self.vectors.row(feature.index()))
    }

    pub fn reset_frequencies(&mut self) {
        self.frequencies.iter_mut().for_each(|c| *c = 0);
    }
}

/// Returns the embedding row of `feature` by value.
pub fn lookup_uncompressed(field: &Field, feature: FeatureId) -> Result<Vec<f64>> {
    field.row(feature).map(<[f64]>::to_vec)
}

/// A set of fields keyed by id, iterated in ascending id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldedEmbeddingModel {
    fields: BTreeMap<FieldId, Field>,
}

impl FieldedEmbeddingModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fields(fields: impl IntoIterator<Item = Field>) -> Result<Self> {
        let mut model = Self::new();
        for f in fields {
            model.insert(f)?;
        }
        Ok(model)
    }

    pub fn insert(&mut self, field: Field) -> Result<()> {
        if self.fields.contains_key(&field.field_id) {
            return Err(Error::Inconsistent(format!(
                "duplicate field id {}",
                field.field_id
            )));
        }
        self.fields.insert(field.field_id, field);
        Ok(())
    }

    pub fn field(&self, id: FieldId) -> Result<&Field> {
        self.fields.get(&id).ok_or(Error::UnknownField(id))
    }

    pub fn field_mut(&mut self, id: FieldId) -> Result<&mut Field> {
        self.fields.get_mut(&id).ok_or(Error::UnknownField(id))
    }

    pub fn fields(&self) -> impl Iterator<Item = &Field> + '_ {
        self.fields.values()
    }

    pub fn fields_mut(&mut self) -> impl Iterator<Item = &mut Field> + '_ {
        self.fields.values_mut()
    }

    pub fn field_ids(&self) -> impl Iterator<Item = FieldId> + '_ {
        self.fields.keys().copied()
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn total_vectors(&self) -> u64 {
        self.fields.values().map(|f| f.len() as u64).sum()
    }

    pub fn lookup(&self, field: FieldId, feature: FeatureId) -> Result<&[f64]> {
        self.field(field)?.row(feature)
    }

    pub fn memory_footprint(&self, bytes_per_component: u64) -> u64 {
        self.fields
            .values()
            .map(|f| uncompressed_bytes(f.len() as u64, f.vector_len() as u64, bytes_per_component))
            .sum()
    }
}

/// The `k` representative vectors of one compressed field.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub field_id: FieldId,
    pub centroids: Matrix,
}

impl Codebook {
    pub fn new(field_id: FieldId, centroids: Matrix) -> Result<Self> {
        if centroids.rows() == 0 {
            return Err(Error::InvalidInput(format!(
                "codebook for field {field_id} must have k >= 1"
            )));
        }
        if !centroids.all_finite() {
            return Err(Error::InvalidInput(format!(
                "codebook for field {field_id} contains non-finite components"
            )));
        }
        Ok(Codebook {
            field_id,
            centroids,
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    #[inline]
    pub fn vector_len(&self) -> usize {
        self.centroids.cols()
    }
}

/// Feature to cluster-index map of one compressed field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTable {
    pub field_id: FieldId,
    pub masks: Vec<u32>,
}

impl MaskTable {
    pub fn new(field_id: FieldId, masks: Vec<u32>) -> Self {
        MaskTable { field_id, masks }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn validate_against(&self, codebook: &Codebook) -> Result<()> {
        if self.field_id != codebook.field_id {
            return Err(Error::Inconsistent(format!(
                "mask table for field {} paired with codebook for field {}",
                self.field_id, codebook.field_id
            )));
        }
        if let Some(&bad) = self.masks.iter().find(|&&m| m as usize >= codebook.k()) {
            return Err(Error::MaskOutOfRange {
                field: self.field_id.0,
                mask: bad,
                k: codebook.k(),
            });
        }
        Ok(())
    }
}

/// Returns the centroid that `feature`'s mask points at.
pub fn lookup_compressed<'a>(
    codebook: &'a Codebook,
    masks: &MaskTable,
    feature: FeatureId,
) -> Result<&'a [f64]> {
    if masks.field_id != codebook.field_id {
        return Err(Error::Inconsistent(format!(
            "mask table for field {} paired with codebook for field {}",
            masks.field_id, codebook.field_id
        )));
    }
    let mask = *masks
        .masks
        .get(feature.index())
        .ok_or(Error::FeatureOutOfRange {
            field: masks.field_id.0,
            feature: feature.0,
            len: masks.len(),
        })?;
    if mask as usize >= codebook.k() {
        return Err(Error::MaskOutOfRange {
            field: masks.field_id.0,
            mask,
            k: codebook.k(),
        });
    }
    Ok(codebook.centroids.row(mask as usize))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedField {
    pub codebook: Codebook,
    pub masks: MaskTable,
}

impl CompressedField {
    pub fn new(codebook: Codebook, masks: MaskTable) -> Result<Self> {
        masks.validate_against(&codebook)?;
        Ok(CompressedField { codebook, masks })
    }

    pub fn n(&self) -> usize {
        self.masks.len()
    }

    pub fn k(&self) -> usize {
        self.codebook.k()
    }

    pub fn lookup(&self, feature: FeatureId) -> Result<&[f64]> {
        lookup_compressed(&self.codebook, &self.masks, feature)
    }
}

/// Either view of one field inside a [`CompressedModel`].
#[derive(Debug, Clone, Copy)]
pub enum FieldView<'a> {
    Compressed(&'a CompressedField),
    Passthrough(&'a Field),
}

impl FieldView<'_> {
    pub fn vector_len(&self) -> usize {
        match self {
            FieldView::Compressed(c) => c.codebook.vector_len(),
            FieldView::Passthrough(f) => f.vector_len(),
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            FieldView::Compressed(c) => c.n(),
            FieldView::Passthrough(f) => f.len(),
        }
    }
}

/// Mix of compressed fields and fields kept verbatim.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompressedModel {
    compressed: BTreeMap<FieldId, CompressedField>,
    passthrough: BTreeMap<FieldId, Field>,
}

impl CompressedModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_compressed(&mut self, field: CompressedField) -> Result<()> {
        let id = field.codebook.field_id;
        self.check_free(id)?;
        self.compressed.insert(id, field);
        Ok(())
    }

    pub fn insert_passthrough(&mut self, field: Field) -> Result<()> {
        self.check_free(field.field_id)?;
        self.passthrough.insert(field.field_id, field);
        Ok(())
    }

    fn check_free(&self, id: FieldId) -> Result<()> {
        if self.compressed.contains_key(&id) || self.passthrough.contains_key(&id) {
            return Err(Error::Inconsistent(format!("duplicate field id {id}")));
        }
        Ok(())
    }

    pub fn compressed_fields(&self) -> impl Iterator<Item = &CompressedField> + '_ {
        self.compressed.values()
    }

    pub fn passthrough_fields(&self) -> impl Iterator<Item = &Field> + '_ {
        self.passthrough.values()
    }

    pub fn compressed_field(&self, id: FieldId) -> Option<&CompressedField> {
        self.compressed.get(&id)
    }

    pub fn compressed_field_mut(&mut self, id: FieldId) -> Option<&mut CompressedField> {
        self.compressed.get_mut(&id)
    }

    pub fn passthrough_field(&self, id: FieldId) -> Option<&Field> {
        self.passthrough.get(&id)
    }

    pub fn passthrough_field_mut(&mut self, id: FieldId) -> Option<&mut Field> {
        self.passthrough.get_mut(&id)
    }

    pub fn view(&self, id: FieldId) -> Result<FieldView<'_>> {
        if let Some(c) = self.compressed.get(&id) {
            return Ok(FieldView::Compressed(c));
        }
        self.passthrough
            .get(&id)
            .map(FieldView::Passthrough)
            .ok_or(Error::UnknownField(id))
    }

    /// All field ids, ascending, regardless of storage kind.
    pub fn field_ids(&self) -> Vec<FieldId> {
        let mut ids: Vec<FieldId> = self
            .compressed
            .keys()
            .chain(self.passthrough.keys())
            .copied()
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn num_fields(&self) -> usize {
        self.compressed.len() + self.passthrough.len()
    }

    pub fn is_empty(&self) -> bool {
        self.num_fields() == 0
    }

    pub fn lookup(&self, field: FieldId, feature: FeatureId) -> Result<&[f64]> {
        match self.view(field)? {
            FieldView::Compressed(c) => c.lookup(feature),
            FieldView::Passthrough(f) => f.row(feature),
        }
    }

    /// Stored vectors: `k` per compressed field plus `n` per passthrough field.
    pub fn total_vectors(&self) -> u64 {
        self.compressed.values().map(|c| c.k() as u64).sum::<u64>()
            + self.passthrough.values().map(|f| f.len() as u64).sum::<u64>()
    }

    /// Feature count of the source model.
    pub fn total_features(&self) -> u64 {
        self.compressed.values().map(|c| c.n() as u64).sum::<u64>()
            + self.passthrough.values().map(|f| f.len() as u64).sum::<u64>()
    }

    pub fn memory_footprint(&self, bytes_per_component: u64, bytes_per_mask: u64) -> u64 {
        let compressed: u64 = self
            .compressed
            .values()
            .map(|c| {
                compressed_bytes(
                    c.n() as u64,
                    c.k() as u64,
                    c.codebook.vector_len() as u64,
                    bytes_per_component,
                    bytes_per_mask,
                )
            })
            .sum();
        let passthrough: u64 = self
            .passthrough
            .values()
            .map(|f| uncompressed_bytes(f.len() as u64, f.vector_len() as u64, bytes_per_component))
            .sum();
        compressed + passthrough
    }
}

/// Bytes of an uncompressed `n x l` field.
pub fn uncompressed_bytes(n: u64, vector_len: u64, bytes_per_component: u64) -> u64 {
    n * vector_len * bytes_per_component
}

/// Bytes of a compressed field: one mask per feature plus the `k x l` codebook.
pub fn compressed_bytes(
    n: u64,
    k: u64,
    vector_len: u64,
    bytes_per_component: u64,
    bytes_per_mask: u64,
) -> u64 {
    n * bytes_per_mask + k * vector_len * bytes_per_component
}

/// Narrowest mask width that can address `k` clusters: 1 byte up to 256, then 2, then 4.
pub fn mask_width_for(k: usize) -> u8 {
    if k <= 1 << 8 {
        1
    } else if k <= 1 << 16 {
        2
    } else {
        4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(id: u32, rows: &[&[f64]]) -> Field {
        Field::with_zero_counts(FieldId(id), Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn uncompressed_lookup_returns_row() {
        let f = field(0, &[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(lookup_uncompressed(&f, FeatureId(1)).unwrap(), vec![3.0, 4.0]);
        let z = field(1, &[&[0.0, 0.0, 0.0]]);
        assert_eq!(lookup_uncompressed(&z, FeatureId(0)).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn uncompressed_lookup_out_of_range() {
        let f = field(0, &[&[1.0, 2.0]]);
        assert!(matches!(
            lookup_uncompressed(&f, FeatureId(1)),
            Err(Error::FeatureOutOfRange { len: 1, .. })
        ));
    }

    #[test]
    fn compressed_lookup_chases_mask() {
        let cb = Codebook::new(FieldId(3), Matrix::from_rows(&[[5.0, 5.0], [7.0, 7.0]]).unwrap()).unwrap();
        let masks = MaskTable::new(FieldId(3), vec![1, 0, 1]);
        assert_eq!(lookup_compressed(&cb, &masks, FeatureId(0)).unwrap(), &[7.0, 7.0]);
        assert_eq!(lookup_compressed(&cb, &masks, FeatureId(1)).unwrap(), &[5.0, 5.0]);

        let zeros = MaskTable::new(FieldId(3), vec![0; 4]);
        for i in 0..4 {
            assert_eq!(lookup_compressed(&cb, &zeros, FeatureId(i)).unwrap(), &[5.0, 5.0]);
        }
    }

    #[test]
    fn compressed_lookup_errors() {
        let cb = Codebook::new(FieldId(3), Matrix::from_rows(&[[5.0, 5.0]]).unwrap()).unwrap();
        let masks = MaskTable::new(FieldId(3), vec![0, 1]);
        assert!(matches!(
            lookup_compressed(&cb, &masks, FeatureId(2)),
            Err(Error::FeatureOutOfRange { .. })
        ));
        assert!(matches!(
            lookup_compressed(&cb, &masks, FeatureId(1)),
            Err(Error::MaskOutOfRange { mask: 1, k: 1, .. })
        ));
        let other = MaskTable::new(FieldId(4), vec![0]);
        assert!(matches!(
            lookup_compressed(&cb, &other, FeatureId(0)),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn field_rejects_bad_shapes() {
        let m = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(Field::new(FieldId(0), m.clone(), vec![1]).is_err());
        let nan = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(Field::new(FieldId(0), nan, vec![0]).is_err());
        let mut model = FieldedEmbeddingModel::new();
        model.insert(Field::with_zero_counts(FieldId(0), m.clone()).unwrap()).unwrap();
        assert!(model.insert(Field::with_zero_counts(FieldId(0), m).unwrap()).is_err());
    }

    #[test]
    fn footprint_of_empty_model_is_zero() {
        assert_eq!(FieldedEmbeddingModel::new().memory_footprint(4), 0);
        assert_eq!(CompressedModel::new().memory_footprint(4, 1), 0);
    }

    #[test]
    fn footprint_arithmetic_matches_large_table() {
        let n = 124_000_000u64;
        assert_eq!(uncompressed_bytes(n, 9, 4), 4_464_000_000);
        // 1-byte masks plus 1.04e6 centroids of 36 bytes
        assert_eq!(n * 1 + 1_040_000 * 36, 161_440_000);
        assert_eq!(compressed_bytes(n, 1_040_000, 9, 4, 1), 161_440_000);
    }

    #[test]
    fn compressed_footprint_counts_masks_and_codebook() {
        let src = field(7, &[&[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0], &[4.0, 0.0]]);
        let cb = Codebook::new(FieldId(1), Matrix::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        let cf = CompressedField::new(cb, MaskTable::new(FieldId(1), vec![0; 10])).unwrap();
        let mut cm = CompressedModel::new();
        cm.insert_compressed(cf).unwrap();
        cm.insert_passthrough(src).unwrap();
        assert_eq!(cm.memory_footprint(4, 1), 10 + 8 + 4 * 2 * 4);
        assert_eq!(cm.total_vectors(), 1 + 4);
        assert_eq!(cm.total_features(), 14);
        assert_eq!(cm.field_ids(), vec![FieldId(1), FieldId(7)]);
    }

    #[test]
    fn mask_width_thresholds() {
        assert_eq!(mask_width_for(1), 1);
        assert_eq!(mask_width_for(256), 1);
        assert_eq!(mask_width_for(257), 2);
        assert_eq!(mask_width_for(65_536), 2);
        assert_eq!(mask_width_for(65_537), 4);
    }
}
