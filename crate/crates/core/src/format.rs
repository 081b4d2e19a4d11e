//! Versioned little-endian binary format for models and checkpoints.
//!
//! ```text
//! header   magic "FCMB" | version u16 | component width u8 (4 or 8) | flags u8 | field count u32
//!          flags: bit 0 predictor section present, bit 1 compressed-model container
//! field    field id u32 | n u64 | l u32 | kind u8 (0 passthrough, 1 compressed)
//!   kind 1 k u32 | mask width u8 | centroids k*l | masks n * mask width
//!   kind 0 vectors n*l | frequencies n * u64
//! optional predictor section (flag bit 0)
//!          magic "OPTS" | dim u32 | dense weights dim | bias | dense accumulators dim
//!          | bias accumulator | per field, in header order: len u64 | accumulators len
//! ```
//!
//! Components are stored at the declared width. A width of 8 round-trips
//! every value bit-exactly; a width of 4 does so for values representable
//! as 32-bit reals.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    mask_width_for, Codebook, CompressedField, CompressedModel, Field, FieldId, FieldView,
    FieldedEmbeddingModel, MaskTable, Matrix,
};
use crate::trainer::{Embeddings, PredictorModel};

pub const MAGIC: [u8; 4] = *b"FCMB";
pub const PREDICTOR_MAGIC: [u8; 4] = *b"OPTS";
pub const VERSION: u16 = 1;

const FLAG_PREDICTOR: u8 = 1;
const FLAG_COMPRESSED: u8 = 2;
const KIND_PASSTHROUGH: u8 = 0;
const KIND_COMPRESSED: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn width(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_width(w: u8) -> Result<Self> {
        match w {
            4 => Ok(Precision::F32),
            8 => Ok(Precision::F64),
            other => Err(Error::Format(format!("unsupported component width {other}"))),
        }
    }
}

struct Writer<W: Write> {
    inner: W,
    precision: Precision,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(Error::from)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn reals(&mut self, vs: &[f64]) -> Result<()> {
        match self.precision {
            Precision::F32 => vs.iter().try_for_each(|&v| self.bytes(&(v as f32).to_le_bytes())),
            Precision::F64 => vs.iter().try_for_each(|&v| self.bytes(&v.to_le_bytes())),
        }
    }
}

struct Reader<R: Read> {
    inner: R,
    precision: Precision,
}

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated input: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn real(&mut self) -> Result<f64> {
        Ok(match self.precision {
            Precision::F32 => f32::from_le_bytes(self.array()?) as f64,
            Precision::F64 => f64::from_le_bytes(self.array()?),
        })
    }
    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            out.push(self.real()?);
        }
        Ok(out)
    }
    fn mask(&mut self, width: u8) -> Result<u32> {
        Ok(match width {
            1 => self.u8()? as u32,
            2 => self.u16()? as u32,
            4 => self.u32()?,
            w => return Err(Error::Format(format!("unsupported mask width {w}"))),
        })
    }
}

fn write_passthrough<W: Write>(w: &mut Writer<W>, f: &Field) -> Result<()> {
    w.u32(f.field_id.0)?;
    w.u64(f.len() as u64)?;
    w.u32(f.vector_len() as u32)?;
    w.u8(KIND_PASSTHROUGH)?;
    w.reals(f.vectors.as_slice())?;
    f.frequencies.iter().try_for_each(|&c| w.u64(c))
}

fn write_compressed_field<W: Write>(w: &mut Writer<W>, c: &CompressedField) -> Result<()> {
    let width = mask_width_for(c.k());
    w.u32(c.codebook.field_id.0)?;
    w.u64(c.n() as u64)?;
    w.u32(c.codebook.vector_len() as u32)?;
    w.u8(KIND_COMPRESSED)?;
    w.u32(c.k() as u32)?;
    w.u8(width)?;
    w.reals(c.codebook.centroids.as_slice())?;
    for &m in &c.masks.masks {
        match width {
            1 => w.u8(m as u8)?,
            2 => w.u16(m as u16)?,
            _ => w.u32(m)?,
        }
    }
    Ok(())
}

enum StoredField {
    Passthrough(Field),
    Compressed(CompressedField),
}

fn read_field<R: Read>(r: &mut Reader<R>) -> Result<StoredField> {
    let id = FieldId(r.u32()?);
    let n = r.u64()? as usize;
    let l = r.u32()? as usize;
    match r.u8()? {
        KIND_PASSTHROUGH => {
            let data = r.reals(n * l)?;
            let mut freqs = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                freqs.push(r.u64()?);
            }
            Ok(StoredField::Passthrough(Field::new(id, Matrix::from_vec(n, l, data)?, freqs)?))
        }
        KIND_COMPRESSED => {
            let k = r.u32()? as usize;
            let width = r.u8()?;
            let data = r.reals(k * l)?;
            let mut masks = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                masks.push(r.mask(width)?);
            }
            let codebook = Codebook::new(id, Matrix::from_vec(k, l, data)?)?;
            Ok(StoredField::Compressed(CompressedField::new(codebook, MaskTable::new(id, masks))?))
        }
        other => Err(Error::Format(format!("unknown field kind {other}"))),
    }
}

fn write_header<W: Write>(w: &mut Writer<W>, flags: u8, count: usize) -> Result<()> {
    w.bytes(&MAGIC)?;
    w.u16(VERSION)?;
    w.u8(w.precision.width())?;
    w.u8(flags)?;
    w.u32(count as u32)
}

fn read_header<R: Read>(inner: R) -> Result<(Reader<R>, u8, usize)> {
    let mut r = Reader {
        inner,
        precision: Precision::F64,
    };
    if r.array::<4>()? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    r.precision = Precision::from_width(r.u8()?)?;
    let flags = r.u8()?;
    let count = r.u32()? as usize;
    Ok((r, flags, count))
}

fn write_compressed_body<W: Write>(w: &mut Writer<W>, m: &CompressedModel, flags: u8) -> Result<()> {
    write_header(w, flags | FLAG_COMPRESSED, m.num_fields())?;
    for id in m.field_ids() {
        match m.view(id)? {
            FieldView::Compressed(c) => write_compressed_field(w, c)?,
            FieldView::Passthrough(f) => write_passthrough(w, f)?,
        }
    }
    Ok(())
}

fn write_dense_body<W: Write>(w: &mut Writer<W>, m: &FieldedEmbeddingModel, flags: u8) -> Result<()> {
    write_header(w, flags, m.num_fields())?;
    m.fields().try_for_each(|f| write_passthrough(w, f))
}

fn read_embeddings<R: Read>(r: &mut Reader<R>, flags: u8, count: usize) -> Result<Embeddings> {
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        fields.push(read_field(r)?);
    }
    if flags & FLAG_COMPRESSED == 0 {
        if fields.iter().any(|f| matches!(f, StoredField::Compressed(_))) {
            return Err(Error::Format("compressed field in an uncompressed model".into()));
        }
        let model = FieldedEmbeddingModel::from_fields(fields.into_iter().map(|f| match f {
            StoredField::Passthrough(f) => f,
            StoredField::Compressed(_) => unreachable!(),
        }))?;
        return Ok(Embeddings::Dense(model));
    }
    let mut model = CompressedModel::new();
    for f in fields {
        match f {
            StoredField::Passthrough(f) => model.insert_passthrough(f)?,
            StoredField::Compressed(c) => model.insert_compressed(c)?,
        }
    }
    Ok(Embeddings::Compressed(model))
}

fn expect_end<R: Read>(r: &mut Reader<R>) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after model".into())),
    }
}

pub fn write_model<W: Write>(out: W, model: &FieldedEmbeddingModel, precision: Precision) -> Result<()> {
    let mut w = Writer { inner: out, precision };
    write_dense_body(&mut w, model, 0)?;
    w.inner.flush()?;
    Ok(())
}

pub fn write_compressed<W: Write>(out: W, model: &CompressedModel, precision: Precision) -> Result<()> {
    let mut w = Writer { inner: out, precision };
    write_compressed_body(&mut w, model, 0)?;
    w.inner.flush()?;
    Ok(())
}

/// Reads either kind of model file without a predictor section.
pub fn read_embeddings_from<R: Read>(input: R) -> Result<Embeddings> {
    let (mut r, flags, count) = read_header(input)?;
    if flags & FLAG_PREDICTOR != 0 {
        return Err(Error::Format("file is a checkpoint, not a bare model".into()));
    }
    let emb = read_embeddings(&mut r, flags, count)?;
    expect_end(&mut r)?;
    Ok(emb)
}

pub fn read_model<R: Read>(input: R) -> Result<FieldedEmbeddingModel> {
    match read_embeddings_from(input)? {
        Embeddings::Dense(m) => Ok(m),
        Embeddings::Compressed(_) => Err(Error::Format("expected an uncompressed model".into())),
    }
}

/// Reads a compressed model; a file with no compressed fields yields an all-passthrough model.
pub fn read_compressed<R: Read>(input: R) -> Result<CompressedModel> {
    match read_embeddings_from(input)? {
        Embeddings::Compressed(m) => Ok(m),
        Embeddings::Dense(m) => {
            let mut out = CompressedModel::new();
            for f in m.fields() {
                out.insert_passthrough(f.clone())?;
            }
            Ok(out)
        }
    }
}

pub fn write_checkpoint<W: Write>(out: W, model: &PredictorModel, precision: Precision) -> Result<()> {
    let mut w = Writer { inner: out, precision };
    match &model.embeddings {
        Embeddings::Dense(m) => write_dense_body(&mut w, m, FLAG_PREDICTOR)?,
        Embeddings::Compressed(m) => write_compressed_body(&mut w, m, FLAG_PREDICTOR)?,
    }
    let (dense_acc, bias_acc, emb_acc) = model.optimizer_state();
    w.bytes(&PREDICTOR_MAGIC)?;
    w.u32(model.dense_weights.len() as u32)?;
    w.reals(&model.dense_weights)?;
    w.reals(&[model.bias])?;
    w.reals(dense_acc)?;
    w.reals(&[bias_acc])?;
    for acc in emb_acc.values() {
        w.u64(acc.len() as u64)?;
        w.reals(acc)?;
    }
    w.inner.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<PredictorModel> {
    let (mut r, flags, count) = read_header(input)?;
    if flags & FLAG_PREDICTOR == 0 {
        return Err(Error::Format("model file has no predictor section".into()));
    }
    let embeddings = read_embeddings(&mut r, flags, count)?;
    if r.array::<4>()? != PREDICTOR_MAGIC {
        return Err(Error::Format("bad predictor section magic".into()));
    }
    let dim = r.u32()? as usize;
    let dense = r.reals(dim)?;
    let bias = r.real()?;
    let dense_acc = r.reals(dim)?;
    let bias_acc = r.real()?;
    let ids: Vec<FieldId> = match &embeddings {
        Embeddings::Dense(m) => m.field_ids().collect(),
        Embeddings::Compressed(m) => m.field_ids(),
    };
    let mut emb_acc = BTreeMap::new();
    for id in ids {
        let len = r.u64()? as usize;
        emb_acc.insert(id, r.reals(len)?);
    }
    expect_end(&mut r)?;
    PredictorModel::from_parts(embeddings, dense, bias, dense_acc, bias_acc, emb_acc)
}

pub fn save_checkpoint(path: &Path, model: &PredictorModel, precision: Precision) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, precision)
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

pub fn save_compressed(path: &Path, model: &CompressedModel, precision: Precision) -> Result<()> {
    write_compressed(BufWriter::new(File::create(path)?), model, precision)
}

pub fn load_compressed(path: &Path) -> Result<CompressedModel> {
    read_compressed(BufReader::new(File::open(path)?))
}
