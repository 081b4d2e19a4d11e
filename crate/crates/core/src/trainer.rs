//! Logistic click predictor over concatenated field embeddings.
//!
//! The logit is `bias + dense_weights . concat(e_f)` where `e_f` is the
//! embedding of the sample's feature in field `f` (zeros when the field is
//! absent). Training and retraining share one minibatch step; they differ in
//! where embeddings live and in how occurrence gradients are combined:
//!
//! * uncompressed rows receive their gradient averaged over the samples in the
//!   step that touch them (with one sample per step this is the exact
//!   per-sample gradient);
//! * codebook centroids receive the mean of the per-occurrence gradients of
//!   all member features seen in the step.
//!
//! Dense weights and bias use the batch-mean gradient.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{auc, log_loss, ScoredLabels};
use crate::model::{CompressedModel, FeatureId, FieldId, FieldView, FieldedEmbeddingModel};

pub const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub features: Vec<(FieldId, FeatureId)>,
    pub label: u8,
}

impl Sample {
    pub fn new(features: Vec<(FieldId, FeatureId)>, label: u8) -> Self {
        Sample { features, label }
    }
}

/// `acc += g*g; param -= lr * g / (sqrt(acc) + eps)`, element-wise.
pub fn adagrad_update(param: &mut [f64], grad: &[f64], accumulator: &mut [f64], lr: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != accumulator.len() {
        return Err(Error::DimensionMismatch {
            expected: param.len(),
            actual: if grad.len() != param.len() {
                grad.len()
            } else {
                accumulator.len()
            },
        });
    }
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(accumulator.iter_mut()) {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
    Ok(())
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log loss of one sample as a function of its logit, without clamping.
#[inline]
pub fn logit_loss(z: f64, label: u8) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - label as f64 * z
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    /// Samples per optimization step during initial training.
    pub train_batch_size: usize,
    /// Samples per optimization step during retraining.
    pub retrain_batch_size: usize,
    /// Allow more than one feature of the same field in a sample; their embeddings are summed.
    pub allow_multi: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.001,
            train_batch_size: 1,
            retrain_batch_size: 256,
            allow_multi: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if self.train_batch_size == 0 || self.retrain_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embeddings {
    Dense(FieldedEmbeddingModel),
    Compressed(CompressedModel),
}

/// Where a feature's embedding parameters live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    Row,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalStats {
    pub log_loss: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainStats {
    pub samples_seen: usize,
    /// Mean per-sample loss, each measured just before the step that used it.
    pub train_log_loss: f64,
    pub heldout: Option<EvalStats>,
}

/// Gradient of one embedding parameter vector, combined over a step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrad {
    pub field: FieldId,
    /// Feature row for uncompressed fields, cluster index for compressed ones.
    pub index: u32,
    pub is_centroid: bool,
    /// The gradient applied by the optimizer.
    pub grad: Vec<f64>,
    pub occurrences: u32,
    pub samples: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub batch_size: usize,
    /// Batch-mean gradient of the dense weights.
    pub dense: Vec<f64>,
    pub bias: f64,
    pub embeddings: Vec<EmbeddingGrad>,
    /// Sum of per-sample losses at the pre-step parameters.
    pub loss_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub embeddings: Embeddings,
    pub dense_weights: Vec<f64>,
    pub bias: f64,
    dense_acc: Vec<f64>,
    bias_acc: f64,
    /// Per-field accumulators, flat with the shape of the field's parameter matrix.
    embedding_acc: BTreeMap<FieldId, Vec<f64>>,
    slots: BTreeMap<FieldId, Slot>,
}

impl PredictorModel {
    /// Dense weights drawn uniformly from `[-scale, scale]`, bias zero, fresh accumulators.
    pub fn new(embeddings: FieldedEmbeddingModel, init_seed: u64, init_scale: f64) -> Self {
        let slots = Self::layout(embeddings.fields().map(|f| (f.field_id, f.vector_len())));
        let dim = slots.values().map(|s| s.len).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let dense_weights = (0..dim)
            .map(|_| if init_scale > 0.0 { rng.random_range(-init_scale..=init_scale) } else { 0.0 })
            .collect();
        let embedding_acc = embeddings
            .fields()
            .map(|f| (f.field_id, vec![0.0; f.vectors.as_slice().len()]))
            .collect();
        PredictorModel {
            embeddings: Embeddings::Dense(embeddings),
            dense_weights,
            bias: 0.0,
            dense_acc: vec![0.0; dim],
            bias_acc: 0.0,
            embedding_acc,
            slots,
        }
    }

    fn layout(fields: impl Iterator<Item = (FieldId, usize)>) -> BTreeMap<FieldId, Slot> {
        let mut offset = 0;
        let mut slots = BTreeMap::new();
        for (id, len) in fields {
            slots.insert(id, Slot { offset, len });
            offset += len;
        }
        slots
    }

    /// Reassembles a predictor from stored parameters and optimizer state.
    pub fn from_parts(
        embeddings: Embeddings,
        dense_weights: Vec<f64>,
        bias: f64,
        dense_acc: Vec<f64>,
        bias_acc: f64,
        embedding_acc: BTreeMap<FieldId, Vec<f64>>,
    ) -> Result<Self> {
        let (slots, param_lens): (BTreeMap<FieldId, Slot>, Vec<(FieldId, usize)>) = match &embeddings {
            Embeddings::Dense(m) => (
                Self::layout(m.fields().map(|f| (f.field_id, f.vector_len()))),
                m.fields().map(|f| (f.field_id, f.vectors.as_slice().len())).collect(),
            ),
            Embeddings::Compressed(m) => {
                let mut views = Vec::new();
                for id in m.field_ids() {
                    views.push((id, m.view(id)?));
                }
                (
                    Self::layout(views.iter().map(|(id, v)| (*id, v.vector_len()))),
                    views
                        .iter()
                        .map(|(id, v)| {
                            let len = match v {
                                FieldView::Compressed(c) => c.codebook.centroids.as_slice().len(),
                                FieldView::Passthrough(f) => f.vectors.as_slice().len(),
                            };
                            (*id, len)
                        })
                        .collect(),
                )
            }
        };
        let dim: usize = slots.values().map(|s| s.len).sum();
        if dense_weights.len() != dim || dense_acc.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: dense_weights.len().min(dense_acc.len()),
            });
        }
        if embedding_acc.len() != param_lens.len() {
            return Err(Error::Inconsistent("accumulator field set differs".into()));
        }
        for (id, len) in param_lens {
            let got = embedding_acc.get(&id).map_or(usize::MAX, Vec::len);
            if got != len {
                return Err(Error::DimensionMismatch { expected: len, actual: got });
            }
        }
        Ok(PredictorModel {
            embeddings,
            dense_weights,
            bias,
            dense_acc,
            bias_acc,
            embedding_acc,
            slots,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dense_weights.len()
    }

    /// The same predictor on top of `compressed`.
    ///
    /// Dense weights, bias and passthrough-field accumulators are carried
    /// over; centroids start with zero accumulators.
    pub fn with_compressed(&self, compressed: CompressedModel) -> Result<PredictorModel> {
        let ids = compressed.field_ids();
        if ids.len() != self.slots.len() || ids.iter().any(|id| !self.slots.contains_key(id)) {
            return Err(Error::Inconsistent(
                "compressed model fields differ from the predictor's fields".into(),
            ));
        }
        let mut embedding_acc = BTreeMap::new();
        for id in ids {
            let view = compressed.view(id)?;
            if view.vector_len() != self.slots[&id].len {
                return Err(Error::DimensionMismatch {
                    expected: self.slots[&id].len,
                    actual: view.vector_len(),
                });
            }
            let acc = match view {
                FieldView::Compressed(c) => vec![0.0; c.codebook.centroids.as_slice().len()],
                FieldView::Passthrough(f) => match self.embedding_acc.get(&id) {
                    Some(a) if a.len() == f.vectors.as_slice().len() => a.clone(),
                    _ => vec![0.0; f.vectors.as_slice().len()],
                },
            };
            embedding_acc.insert(id, acc);
        }
        Ok(PredictorModel {
            embeddings: Embeddings::Compressed(compressed),
            dense_weights: self.dense_weights.clone(),
            bias: self.bias,
            dense_acc: self.dense_acc.clone(),
            bias_acc: self.bias_acc,
            embedding_acc,
            slots: self.slots.clone(),
        })
    }

    pub fn dense_model(&self) -> Option<&FieldedEmbeddingModel> {
        match &self.embeddings {
            Embeddings::Dense(m) => Some(m),
            Embeddings::Compressed(_) => None,
        }
    }

    pub fn dense_model_mut(&mut self) -> Option<&mut FieldedEmbeddingModel> {
        match &mut self.embeddings {
            Embeddings::Dense(m) => Some(m),
            Embeddings::Compressed(_) => None,
        }
    }

    pub fn compressed_model(&self) -> Option<&CompressedModel> {
        match &self.embeddings {
            Embeddings::Compressed(m) => Some(m),
            Embeddings::Dense(_) => None,
        }
    }

    /// Appends rows to an uncompressed field until it has `len` features.
    pub fn grow_field(&mut self, field: FieldId, len: usize, mut init_row: impl FnMut(usize) -> Vec<f64>) -> Result<()> {
        let Embeddings::Dense(model) = &mut self.embeddings else {
            return Err(Error::Inconsistent("cannot grow a compressed model".into()));
        };
        let f = model.field_mut(field)?;
        let l = f.vector_len();
        while f.len() < len {
            let row = init_row(f.len());
            f.vectors.push_row(&row)?;
            f.frequencies.push(0);
        }
        let acc = self.embedding_acc.get_mut(&field).ok_or(Error::UnknownField(field))?;
        acc.resize(f.len() * l, 0.0);
        Ok(())
    }

    pub fn reset_frequencies(&mut self) {
        if let Embeddings::Dense(m) = &mut self.embeddings {
            m.fields_mut().for_each(|f| f.reset_frequencies());
        }
    }

    /// Optimizer state: dense accumulators, bias accumulator, per-field embedding accumulators.
    pub fn optimizer_state(&self) -> (&[f64], f64, &BTreeMap<FieldId, Vec<f64>>) {
        (&self.dense_acc, self.bias_acc, &self.embedding_acc)
    }

    pub fn set_optimizer_state(
        &mut self,
        dense_acc: Vec<f64>,
        bias_acc: f64,
        embedding_acc: BTreeMap<FieldId, Vec<f64>>,
    ) -> Result<()> {
        if dense_acc.len() != self.dense_acc.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dense_acc.len(),
                actual: dense_acc.len(),
            });
        }
        for (id, acc) in &self.embedding_acc {
            let got = embedding_acc.get(id).map_or(0, Vec::len);
            if got != acc.len() {
                return Err(Error::DimensionMismatch {
                    expected: acc.len(),
                    actual: got,
                });
            }
        }
        if embedding_acc.len() != self.embedding_acc.len() {
            return Err(Error::Inconsistent("accumulator field set differs".into()));
        }
        self.dense_acc = dense_acc;
        self.bias_acc = bias_acc;
        self.embedding_acc = embedding_acc;
        Ok(())
    }

    fn resolve(&self, field: FieldId, feature: FeatureId) -> Result<(ParamKind, u32, &[f64])> {
        match &self.embeddings {
            Embeddings::Dense(m) => Ok((ParamKind::Row, feature.0, m.lookup(field, feature)?)),
            Embeddings::Compressed(m) => match m.view(field)? {
                FieldView::Compressed(c) => {
                    let v = c.lookup(feature)?;
                    Ok((ParamKind::Centroid, c.masks.masks[feature.index()], v))
                }
                FieldView::Passthrough(f) => Ok((ParamKind::Row, feature.0, f.row(feature)?)),
            },
        }
    }

    /// Mutable parameter vector: a feature row, or a centroid for compressed fields.
    pub fn param_row_mut(&mut self, field: FieldId, index: u32) -> Result<&mut [f64]> {
        let i = index as usize;
        let matrix = match &mut self.embeddings {
            Embeddings::Dense(m) => &mut m.field_mut(field)?.vectors,
            Embeddings::Compressed(m) => {
                if m.compressed_field(field).is_some() {
                    &mut m.compressed_field_mut(field).expect("present").codebook.centroids
                } else {
                    &mut m.passthrough_field_mut(field).ok_or(Error::UnknownField(field))?.vectors
                }
            }
        };
        if i >= matrix.rows() {
            return Err(Error::FeatureOutOfRange {
                field: field.0,
                feature: index,
                len: matrix.rows(),
            });
        }
        Ok(matrix.row_mut(i))
    }

    fn check_sample(&self, sample: &Sample, allow_multi: bool) -> Result<()> {
        if sample.label > 1 {
            return Err(Error::InvalidInput(format!("label {} is not binary", sample.label)));
        }
        if !allow_multi {
            for (i, (f, _)) in sample.features.iter().enumerate() {
                if sample.features[..i].iter().any(|(g, _)| g == f) {
                    return Err(Error::InvalidInput(format!(
                        "sample has more than one feature in field {f}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Logit of a sample.
    pub fn logit(&self, sample: &Sample) -> Result<f64> {
        let mut z = self.bias;
        for &(field, feature) in &sample.features {
            let slot = self.slots.get(&field).ok_or(Error::UnknownField(field))?;
            let (_, _, e) = self.resolve(field, feature)?;
            let w = &self.dense_weights[slot.offset..slot.offset + slot.len];
            z += w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(z)
    }

    /// Click probability of a sample.
    pub fn forward(&self, sample: &Sample) -> Result<f64> {
        self.logit(sample).map(logistic)
    }

    /// Concatenated input in field-id order, zeros for absent fields.
    pub fn input_vector(&self, sample: &Sample) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.input_dim()];
        for &(field, feature) in &sample.features {
            let slot = self.slots.get(&field).ok_or(Error::UnknownField(field))?;
            let (_, _, e) = self.resolve(field, feature)?;
            for (dst, v) in x[slot.offset..slot.offset + slot.len].iter_mut().zip(e) {
                *dst += v;
            }
        }
        Ok(x)
    }

    pub fn sample_loss(&self, sample: &Sample) -> Result<f64> {
        Ok(logit_loss(self.logit(sample)?, sample.label))
    }

    /// Gradients of one optimization step at the current parameters.
    pub fn batch_gradients(&self, batch: &[&Sample], allow_multi: bool) -> Result<BatchGradients> {
        let dim = self.input_dim();
        let mut dense = vec![0.0; dim];
        let mut bias = 0.0;
        let mut loss_sum = 0.0;

        let mut index: HashMap<(FieldId, u32), usize> = HashMap::new();
        let mut grads: Vec<EmbeddingGrad> = Vec::new();
        let mut last_sample: Vec<usize> = Vec::new();

        for (s, sample) in batch.iter().enumerate() {
            self.check_sample(sample, allow_multi)?;
            let mut z = self.bias;
            let mut touched = Vec::with_capacity(sample.features.len());
            for &(field, feature) in &sample.features {
                let slot = *self.slots.get(&field).ok_or(Error::UnknownField(field))?;
                let (kind, idx, e) = self.resolve(field, feature)?;
                let w = &self.dense_weights[slot.offset..slot.offset + slot.len];
                z += w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
                touched.push((field, kind, idx, slot, e));
            }
            let d = logistic(z) - sample.label as f64;
            loss_sum += logit_loss(z, sample.label);
            bias += d;
            for &(field, kind, idx, slot, e) in &touched {
                for (g, v) in dense[slot.offset..slot.offset + slot.len].iter_mut().zip(e) {
                    *g += d * v;
                }
                let w = &self.dense_weights[slot.offset..slot.offset + slot.len];
                let pos = *index.entry((field, idx)).or_insert_with(|| {
                    grads.push(EmbeddingGrad {
                        field,
                        index: idx,
                        is_centroid: kind == ParamKind::Centroid,
                        grad: vec![0.0; slot.len],
                        occurrences: 0,
                        samples: 0,
                    });
                    last_sample.push(usize::MAX);
                    grads.len() - 1
                });
                let entry = &mut grads[pos];
                for (g, wv) in entry.grad.iter_mut().zip(w) {
                    *g += d * wv;
                }
                entry.occurrences += 1;
                if last_sample[pos] != s {
                    last_sample[pos] = s;
                    entry.samples += 1;
                }
            }
        }

        let b = batch.len().max(1) as f64;
        dense.iter_mut().for_each(|g| *g /= b);
        for entry in &mut grads {
            let divisor = if entry.is_centroid { entry.occurrences } else { entry.samples } as f64;
            entry.grad.iter_mut().for_each(|g| *g /= divisor);
        }
        Ok(BatchGradients {
            batch_size: batch.len(),
            dense,
            bias: bias / b,
            embeddings: grads,
            loss_sum,
        })
    }

    /// Applies one Adagrad step with precomputed gradients.
    pub fn apply_gradients(&mut self, grads: &BatchGradients, lr: f64) -> Result<()> {
        adagrad_update(&mut self.dense_weights, &grads.dense, &mut self.dense_acc, lr)?;
        let mut b = [self.bias];
        let mut ba = [self.bias_acc];
        adagrad_update(&mut b, &[grads.bias], &mut ba, lr)?;
        self.bias = b[0];
        self.bias_acc = ba[0];

        for g in &grads.embeddings {
            let l = g.grad.len();
            let start = g.index as usize * l;
            // split borrow: accumulator map and embeddings are distinct fields
            let mut acc = std::mem::take(self.embedding_acc.get_mut(&g.field).ok_or(Error::UnknownField(g.field))?);
            let res = match acc.get_mut(start..start + l) {
                Some(acc_row) => {
                    let row = self.param_row_mut(g.field, g.index)?;
                    adagrad_update(row, &g.grad, acc_row, lr)
                }
                None => Err(Error::Inconsistent(format!(
                    "accumulator for field {} too short",
                    g.field
                ))),
            };
            *self.embedding_acc.get_mut(&g.field).expect("checked above") = acc;
            res?;
        }
        Ok(())
    }

    fn count_occurrences(&mut self, batch: &[&Sample]) -> Result<()> {
        if let Embeddings::Dense(m) = &mut self.embeddings {
            for s in batch {
                for &(field, feature) in &s.features {
                    let f = m.field_mut(field)?;
                    let len = f.len();
                    *f.frequencies.get_mut(feature.index()).ok_or(Error::FeatureOutOfRange {
                        field: field.0,
                        feature: feature.0,
                        len,
                    })? += 1;
                }
            }
        }
        Ok(())
    }

    fn run_epoch(
        &mut self,
        samples: &[Sample],
        batch_size: usize,
        config: &TrainerConfig,
        shuffle_seed: u64,
        count: bool,
    ) -> Result<(usize, f64)> {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let mut loss = 0.0;
        let mut batch: Vec<&Sample> = Vec::with_capacity(batch_size);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &samples[i]));
            let grads = self.batch_gradients(&batch, config.allow_multi)?;
            if count {
                self.count_occurrences(&batch)?;
            }
            loss += grads.loss_sum;
            self.apply_gradients(&grads, config.learning_rate)?;
        }
        let mean = if samples.is_empty() { 0.0 } else { loss / samples.len() as f64 };
        Ok((samples.len(), mean))
    }

    /// Probabilities for a slice of samples.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.forward(s)).collect()
    }

    /// Log loss and (when both labels are present) AUC on `samples`.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<EvalStats> {
        let scores = self.predict(samples)?;
        let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
        let data = ScoredLabels::new(&scores, &labels)?;
        let auc = match auc(data) {
            Ok(a) => Some(a),
            Err(Error::UndefinedAuc) => None,
            Err(e) => return Err(e),
        };
        Ok(EvalStats {
            log_loss: log_loss(data)?,
            auc,
        })
    }
}

fn heldout_stats(model: &PredictorModel, heldout: &[Sample]) -> Result<Option<EvalStats>> {
    if heldout.is_empty() {
        Ok(None)
    } else {
        model.evaluate(heldout).map(Some)
    }
}

/// One pass of initial training over `train`, counting feature occurrences.
pub fn train_epoch(
    model: &mut PredictorModel,
    train: &[Sample],
    heldout: &[Sample],
    config: &TrainerConfig,
    shuffle_seed: u64,
) -> Result<TrainStats> {
    config.validate()?;
    if model.dense_model().is_none() {
        return Err(Error::Inconsistent("train_epoch expects uncompressed embeddings".into()));
    }
    let (seen, loss) = model.run_epoch(train, config.train_batch_size, config, shuffle_seed, true)?;
    Ok(TrainStats {
        samples_seen: seen,
        train_log_loss: loss,
        heldout: heldout_stats(model, heldout)?,
    })
}

/// One pass of retraining a compressed model; masks never change.
pub fn retrain_epoch(
    model: &mut PredictorModel,
    train: &[Sample],
    heldout: &[Sample],
    config: &TrainerConfig,
    shuffle_seed: u64,
) -> Result<TrainStats> {
    config.validate()?;
    if model.compressed_model().is_none() {
        return Err(Error::Inconsistent("retrain_epoch expects a compressed model".into()));
    }
    let (seen, loss) = model.run_epoch(train, config.retrain_batch_size, config, shuffle_seed, false)?;
    Ok(TrainStats {
        samples_seen: seen,
        train_log_loss: loss,
        heldout: heldout_stats(model, heldout)?,
    })
}
