//! Pre-training and fine-tuning loops: AdamW with decoupled weight decay,
//! cosine schedule with linear warmup, seeded shuffling and bitwise-
//! reproducible batch gradient reduction.

use crate::autodiff::Tape;
use crate::model::{self, ModelConfig, ModelError, VarMap};
use crate::params::ParamSet;
use crate::patching::{patchify, sample_mask, split_visible, PatchError};
use crate::signal::{dequantize_8bit, SignalRecord};
use crate::tensor::{round_to_f32, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const WEIGHT_DECAY: f64 = 1e-4;
pub const GRAD_CLIP_NORM: f64 = 1.0;

/// Examples per gradient-reduction chunk. Chunk boundaries are fixed by
/// position, and chunk partials are merged in order, so results are bitwise
/// identical for any worker count.
const REDUCE_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("schedule step {step} out of range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite {what} at epoch {epoch}, example {example}")]
    NonFinite { what: String, epoch: usize, example: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("signal length {got} does not match model config ({want})")]
    LengthMismatch { got: usize, want: usize },
    #[error("label {0} out of class range")]
    BadLabel(u16),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
}

impl Schedule {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }
}

/// Linear warmup from 0 to base_lr, then cosine decay to 0 at total_steps.
pub fn lr_at(step: usize, schedule: &Schedule) -> Result<f64, TrainError> {
    if !(0.0..1.0).contains(&schedule.warmup_fraction) || schedule.base_lr <= 0.0 {
        return Err(TrainError::BadConfig(format!(
            "warmup_fraction {} / base_lr {}",
            schedule.warmup_fraction, schedule.base_lr
        )));
    }
    if step > schedule.total_steps {
        return Err(TrainError::StepOutOfRange { step, total: schedule.total_steps });
    }
    let warmup = schedule.warmup_steps();
    if warmup > 0 && step < warmup {
        return Ok(schedule.base_lr * step as f64 / warmup as f64);
    }
    let span = (schedule.total_steps - warmup).max(1);
    let progress = (step - warmup) as f64 / span as f64;
    Ok(schedule.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Per-parameter AdamW moments. Kept on the f32 grid like the parameters so
/// that checkpoint round trips reproduce training bitwise.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub weight_decay: f64,
}

impl OptimState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> =
            (0..params.len()).map(|i| Tensor::zeros(params.tensor(i).shape().to_vec())).collect();
        OptimState { m: zeros.clone(), v: zeros, step: 0, weight_decay: WEIGHT_DECAY }
    }
}

/// One bias-corrected AdamW step over every parameter, consuming the
/// gradient slots of `params`.
pub fn adamw_step(
    params: &mut ParamSet,
    state: &mut OptimState,
    lr: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        if !params.grad(i).all_finite() {
            return Err(TrainError::NonFinite {
                what: format!("gradient for {}", params.name(i)),
                epoch: 0,
                example: 0,
            });
        }
        let n = params.tensor(i).len();
        for j in 0..n {
            let g = params.grad(i).data()[j];
            let m = round_to_f32(BETA1 * state.m[i].data()[j] + (1.0 - BETA1) * g);
            let v = round_to_f32(BETA2 * state.v[i].data()[j] + (1.0 - BETA2) * g * g);
            state.m[i].data_mut()[j] = m;
            state.v[i].data_mut()[j] = v;
            let mhat = m / bc1;
            let vhat = v / bc2;
            let theta = params.tensor(i).data()[j];
            let updated =
                theta - lr * (mhat / (vhat.sqrt() + ADAM_EPS) + state.weight_decay * theta);
            params.tensor_mut(i).data_mut()[j] = round_to_f32(updated);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pretrain,
    Finetune,
    Scratch,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub warmup_fraction: f64,
    /// Trailing fraction of the dataset held out for validation.
    pub val_fraction: f64,
    /// Exact trailing validation count; overrides `val_fraction` when set
    /// (used when the validation split comes from a separate file).
    pub val_count: Option<usize>,
    /// k for the top-k metric logged during fine-tuning.
    pub topk: usize,
}

impl TrainConfig {
    pub fn pretrain_defaults() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1024,
            seed: 0,
            base_lr: 1e-3,
            warmup_fraction: 0.15,
            val_fraction: 0.1,
            val_count: None,
            topk: 5,
        }
    }

    pub fn finetune_defaults() -> Self {
        TrainConfig { base_lr: 0.05, warmup_fraction: 0.10, ..Self::pretrain_defaults() }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainError::BadConfig(format!("val_fraction {}", self.val_fraction)));
        }
        if self.topk == 0 {
            return Err(TrainError::BadConfig("topk must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,split,metric,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.split, r.metric, r.value));
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_params: ParamSet,
    pub best_params: ParamSet,
    pub best_epoch: usize,
    pub optim: OptimState,
    pub log: Vec<LogRow>,
}

/// Per-example RNG for mask sampling and dropout. Substreams keyed by
/// (epoch, position) never collide with the shuffle or validation streams.
fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64 + 1) << 32) | index as u64);
    rng
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 62) | epoch as u64);
    rng
}

fn val_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 63) | index as u64);
    rng
}

fn check_dataset(records: &[SignalRecord], mcfg: &ModelConfig) -> Result<(), TrainError> {
    let first = records.first().ok_or(TrainError::EmptyDataset)?;
    if first.samples.len() != mcfg.signal_length {
        return Err(TrainError::LengthMismatch {
            got: first.samples.len(),
            want: mcfg.signal_length,
        });
    }
    Ok(())
}

fn split_train_val(n: usize, tcfg: &TrainConfig) -> (usize, usize) {
    let val = tcfg
        .val_count
        .unwrap_or((n as f64 * tcfg.val_fraction) as usize)
        .min(n.saturating_sub(1));
    (n - val, val)
}

/// Dense per-parameter gradient accumulator aligned with the ParamSet.
struct GradAccum {
    grads: Vec<Tensor>,
}

impl GradAccum {
    fn zeros(params: &ParamSet) -> Self {
        GradAccum {
            grads: (0..params.len())
                .map(|i| Tensor::zeros(params.tensor(i).shape().to_vec()))
                .collect(),
        }
    }

    fn merge(&mut self, other: &GradAccum) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}

/// Forward + backward for one pretraining example. Returns the masked-L1
/// loss; gradients are accumulated into `acc` when training.
fn pretrain_example(
    params: &ParamSet,
    mcfg: &ModelConfig,
    samples: &[u8],
    rng: &mut ChaCha8Rng,
    training: bool,
    acc: Option<&mut GradAccum>,
) -> Result<f64, TrainError> {
    let signal = dequantize_8bit(samples);
    let grid = patchify(&signal, mcfg.patch_size)?;
    let plan = sample_mask(grid.patch_count(), mcfg.mask_ratio, rng)?;
    let (vis, vis_idx, _, _) = split_visible(&grid, &plan)?;
    let target = Tensor::new(vec![grid.patch_count(), mcfg.patch_size], grid.patches.clone())?;

    let mut tape = Tape::new();
    let mut vars = VarMap::new(params);
    let patches = tape.leaf(Tensor::new(vec![vis_idx.len(), mcfg.patch_size], vis)?)?;
    let z = model::encode(&mut tape, &mut vars, mcfg, patches, &vis_idx, rng, training)?;
    let recon = model::decode(&mut tape, &mut vars, mcfg, z, &plan, rng, training)?;
    let loss = model::mae_loss(&mut tape, recon, &target, &plan)?;
    let value = tape.value(loss).scalar_value();
    if let Some(acc) = acc {
        let grads = tape.backward(loss)?;
        for (idx, var) in vars.entries() {
            if let Some(g) = grads.get(var) {
                for (x, y) in acc.grads[idx].data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
        }
    }
    Ok(value)
}

/// Forward + backward for one fine-tuning example: cross-entropy over the
/// class logits of the full unmasked signal.
fn finetune_example(
    params: &ParamSet,
    mcfg: &ModelConfig,
    samples: &[u8],
    label: u16,
    rng: &mut ChaCha8Rng,
    training: bool,
    acc: Option<&mut GradAccum>,
) -> Result<(f64, Vec<f64>), TrainError> {
    if (label as usize) >= mcfg.num_classes {
        return Err(TrainError::BadLabel(label));
    }
    let signal = dequantize_8bit(samples);
    let mut tape = Tape::new();
    let mut vars = VarMap::new(params);
    let logits = model::classify_logits(&mut tape, &mut vars, mcfg, &signal, rng, training)?;
    let logit_values = tape.value(logits).data().to_vec();
    let loss = tape.cross_entropy(logits, label as usize)?;
    let value = tape.value(loss).scalar_value();
    if let Some(acc) = acc {
        let grads = tape.backward(loss)?;
        for (idx, var) in vars.entries() {
            if let Some(g) = grads.get(var) {
                for (x, y) in acc.grads[idx].data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
        }
    }
    Ok((value, logit_values))
}

/// Clip accumulated gradients to a global L2 norm, write them into the
/// ParamSet gradient slots, and apply one AdamW step.
fn apply_update(
    params: &mut ParamSet,
    state: &mut OptimState,
    mut acc: GradAccum,
    batch_len: usize,
    lr: f64,
) -> Result<(), TrainError> {
    let inv = 1.0 / batch_len as f64;
    let mut sq = 0.0;
    for g in &mut acc.grads {
        for x in g.data_mut() {
            *x *= inv;
            sq += *x * *x;
        }
    }
    let norm = sq.sqrt();
    if norm > GRAD_CLIP_NORM {
        let s = GRAD_CLIP_NORM / norm;
        for g in &mut acc.grads {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    params.zero_grads();
    for (i, g) in acc.grads.iter().enumerate() {
        params.accumulate_grad(i, g);
    }
    adamw_step(params, state, lr)
}

/// Fan a batch out over worker threads in fixed-size chunks and merge the
/// chunk partials in order; bitwise identical for any thread count.
fn batch_grads<F>(batch: &[usize], params: &ParamSet, f: F) -> Result<(f64, GradAccum), TrainError>
where
    F: Fn(usize, usize, &mut GradAccum) -> Result<f64, TrainError> + Sync,
{
    let chunks: Vec<(f64, GradAccum)> = batch
        .par_chunks(REDUCE_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = GradAccum::zeros(params);
            let mut loss = 0.0;
            for (k, &idx) in chunk.iter().enumerate() {
                loss += f(idx, c * REDUCE_CHUNK + k, &mut acc)?;
            }
            Ok((loss, acc))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut total = GradAccum::zeros(params);
    let mut loss = 0.0;
    for (l, acc) in &chunks {
        loss += l;
        total.merge(acc);
    }
    Ok((loss / batch.len() as f64, total))
}

/// MAE pre-training: mask, encode visible, decode, masked-L1, AdamW.
/// Returns final and best-validation parameters plus the per-epoch loss log.
pub fn pretrain(
    records: &[SignalRecord],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    init: Option<ParamSet>,
) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    mcfg.validate()?;
    check_dataset(records, mcfg)?;
    let mut params = match init {
        Some(p) => p,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
            model::init_params(mcfg, &mut rng)?
        }
    };
    let mut state = OptimState::new(&params);
    let (n_train, n_val) = split_train_val(records.len(), tcfg);
    let steps_per_epoch = n_train.div_ceil(tcfg.batch_size);
    let schedule = Schedule {
        base_lr: tcfg.base_lr,
        warmup_fraction: tcfg.warmup_fraction,
        total_steps: tcfg.epochs * steps_per_epoch,
    };

    let mut log = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut step = 0usize;
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut shuffle_rng(tcfg.seed, epoch));
        let mut train_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let lr = lr_at(step, &schedule)?;
            let seed = tcfg.seed;
            // rng keyed to the dataset index so reordering within a batch
            // cannot change any example's mask or dropout draws
            let (loss, acc) = batch_grads(batch, &params, |idx, _pos, acc| {
                let mut rng = example_rng(seed, epoch, idx);
                pretrain_example(&params, mcfg, &records[idx].samples, &mut rng, true, Some(acc))
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "train loss".into(),
                    epoch,
                    example: batch[0],
                });
            }
            train_loss += loss * batch.len() as f64;
            apply_update(&mut params, &mut state, acc, batch.len(), lr)?;
            step += 1;
        }
        train_loss /= n_train as f64;

        let val_loss = if n_val > 0 {
            let idxs: Vec<usize> = (n_train..records.len()).collect();
            let losses: Vec<f64> = idxs
                .par_chunks(REDUCE_CHUNK)
                .map(|chunk| {
                    chunk
                        .iter()
                        .map(|&i| {
                            let mut rng = val_rng(tcfg.seed, i);
                            pretrain_example(
                                &params,
                                mcfg,
                                &records[i].samples,
                                &mut rng,
                                false,
                                None,
                            )
                        })
                        .sum::<Result<f64, _>>()
                })
                .collect::<Result<_, _>>()?;
            losses.iter().sum::<f64>() / n_val as f64
        } else {
            train_loss
        };
        log.push(LogRow { epoch, split: "train".into(), metric: "recon_mae".into(), value: train_loss });
        log.push(LogRow { epoch, split: "val".into(), metric: "recon_mae".into(), value: val_loss });
        // the same number expressed on the 0..255 quantization grid
        log.push(LogRow {
            epoch,
            split: "val".into(),
            metric: "recon_mae_8bit".into(),
            value: val_loss * 255.0 / 2.0,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
        }
    }
    Ok(TrainOutcome {
        final_params: params,
        best_params: best.1,
        best_epoch: best.2,
        optim: state,
        log,
    })
}

/// Class logits for every record, dropout disabled. Parallel over fixed
/// chunks; order-preserving.
pub fn eval_logits(
    params: &ParamSet,
    mcfg: &ModelConfig,
    records: &[SignalRecord],
) -> Result<Vec<Vec<f64>>, TrainError> {
    check_dataset(records, mcfg)?;
    let rows: Vec<Vec<Vec<f64>>> = records
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|r| {
                    let signal = dequantize_8bit(&r.samples);
                    let mut tape = Tape::new();
                    let mut vars = VarMap::new(params);
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let logits = model::classify_logits(
                        &mut tape, &mut vars, mcfg, &signal, &mut rng, false,
                    )?;
                    Ok(tape.value(logits).data().to_vec())
                })
                .collect::<Result<Vec<_>, TrainError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// One masked reconstruction pass for plotting: returns the dequantized
/// original, a per-sample visibility flag, and the decoder output.
pub fn reconstruct_one(
    params: &ParamSet,
    mcfg: &ModelConfig,
    samples: &[u8],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<bool>, Vec<f64>), TrainError> {
    let signal = dequantize_8bit(samples);
    let grid = patchify(&signal, mcfg.patch_size)?;
    let plan = sample_mask(grid.patch_count(), mcfg.mask_ratio, rng)?;
    let (vis, vis_idx, _, _) = split_visible(&grid, &plan)?;
    let mut tape = Tape::new();
    let mut vars = VarMap::new(params);
    let patches = tape.leaf(Tensor::new(vec![vis_idx.len(), mcfg.patch_size], vis)?)?;
    let z = model::encode(&mut tape, &mut vars, mcfg, patches, &vis_idx, rng, false)?;
    let recon = model::decode(&mut tape, &mut vars, mcfg, z, &plan, rng, false)?;
    let recon_flat = tape.value(recon).data().to_vec();
    let mut visible_flags = vec![true; signal.len()];
    for &p in &plan.masked {
        for s in p * mcfg.patch_size..(p + 1) * mcfg.patch_size {
            visible_flags[s] = false;
        }
    }
    Ok((signal, visible_flags, recon_flat))
}

#[derive(Debug)]
pub enum Init {
    Random,
    /// Pre-trained parameters; encoder weights are copied over, decoder
    /// weights are discarded, the class head starts fresh.
    Encoder(ParamSet),
}

/// Supervised fine-tuning (or from-scratch training) of the classifier.
pub fn finetune(
    records: &[SignalRecord],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    init: Init,
) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    mcfg.validate()?;
    check_dataset(records, mcfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut params = model::init_params(mcfg, &mut rng)?;
    if let Init::Encoder(pre) = &init {
        for i in 0..params.len() {
            let name = params.name(i).to_string();
            if name.starts_with("enc.") {
                let src = pre.get(&name).ok_or_else(|| {
                    TrainError::BadConfig(format!("checkpoint missing encoder parameter {name}"))
                })?;
                if src.shape() != params.tensor(i).shape() {
                    return Err(TrainError::BadConfig(format!(
                        "checkpoint parameter {name} has shape {:?}, config wants {:?}",
                        src.shape(),
                        params.tensor(i).shape()
                    )));
                }
                *params.tensor_mut(i) = src.clone();
            }
        }
    }
    let mut state = OptimState::new(&params);
    let (n_train, n_val) = split_train_val(records.len(), tcfg);
    let steps_per_epoch = n_train.div_ceil(tcfg.batch_size);
    let schedule = Schedule {
        base_lr: tcfg.base_lr,
        warmup_fraction: tcfg.warmup_fraction,
        total_steps: tcfg.epochs * steps_per_epoch,
    };

    let mut log = Vec::new();
    let mut best = (f64::NEG_INFINITY, params.clone(), 0);
    let mut step = 0usize;
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut shuffle_rng(tcfg.seed, epoch));
        let mut train_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let lr = lr_at(step, &schedule)?;
            let seed = tcfg.seed;
            let (loss, acc) = batch_grads(batch, &params, |idx, _pos, acc| {
                let mut rng = example_rng(seed, epoch, idx);
                finetune_example(
                    &params,
                    mcfg,
                    &records[idx].samples,
                    records[idx].label,
                    &mut rng,
                    true,
                    Some(acc),
                )
                .map(|(l, _)| l)
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "train loss".into(),
                    epoch,
                    example: batch[0],
                });
            }
            train_loss += loss * batch.len() as f64;
            apply_update(&mut params, &mut state, acc, batch.len(), lr)?;
            step += 1;
        }
        train_loss /= n_train as f64;
        log.push(LogRow { epoch, split: "train".into(), metric: "xent".into(), value: train_loss });

        if n_val > 0 {
            let idxs: Vec<usize> = (n_train..records.len()).collect();
            let evals: Vec<(f64, Vec<f64>, u16)> = idxs
                .par_chunks(REDUCE_CHUNK)
                .map(|chunk| {
                    chunk
                        .iter()
                        .map(|&i| {
                            let mut rng = val_rng(tcfg.seed, i);
                            finetune_example(
                                &params,
                                mcfg,
                                &records[i].samples,
                                records[i].label,
                                &mut rng,
                                false,
                                None,
                            )
                            .map(|(l, logits)| (l, logits, records[i].label))
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .flatten()
                .collect();
            let val_loss = evals.iter().map(|(l, _, _)| l).sum::<f64>() / n_val as f64;
            let logits: Vec<Vec<f64>> = evals.iter().map(|(_, l, _)| l.clone()).collect();
            let labels: Vec<u16> = evals.iter().map(|(_, _, y)| *y).collect();
            let top1 = crate::metrics::topk_accuracy(&logits, &labels, 1)
                .map_err(|e| TrainError::BadConfig(e.to_string()))?;
            let topk = crate::metrics::topk_accuracy(&logits, &labels, tcfg.topk)
                .map_err(|e| TrainError::BadConfig(e.to_string()))?;
            log.push(LogRow { epoch, split: "val".into(), metric: "xent".into(), value: val_loss });
            log.push(LogRow { epoch, split: "val".into(), metric: "top1".into(), value: top1 });
            log.push(LogRow {
                epoch,
                split: "val".into(),
                metric: format!("top{}", tcfg.topk),
                value: topk,
            });
            if top1 > best.0 {
                best = (top1, params.clone(), epoch);
            }
        } else {
            best = (0.0, params.clone(), epoch);
        }
    }
    Ok(TrainOutcome {
        final_params: params,
        best_params: best.1,
        best_epoch: best.2,
        optim: state,
        log,
    })
}
