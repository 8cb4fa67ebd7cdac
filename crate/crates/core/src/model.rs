//! The 1D ViT-MAE: patch embedding, learnable positional embeddings, pre-LN
//! transformer encoder with optionally non-square attention, lightweight
//! decoder with a shared mask token, reconstruction head and classification
//! head.

use crate::autodiff::{Tape, Var};
use crate::params::ParamSet;
use crate::patching::MaskPlan;
use crate::tensor::{Tensor, TensorError};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

pub const LAYER_NORM_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub signal_length: usize,
    pub d_model_enc: usize,
    pub d_model_dec: usize,
    pub heads: usize,
    /// Encoder per-head width; non-square attention when != d_model_enc/heads.
    pub d_head: usize,
    /// Decoder per-head width, scaled with d_model_dec in the presets.
    pub d_head_dec: usize,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub dropout: f64,
    pub mask_ratio: f64,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Named presets: model-size grid T/S/M/L plus the head-dimension grid
    /// M-dh32/M-dh64/M-dh128/M-dh64-h3/M-dh64-h5.
    pub fn preset(name: &str) -> Result<Self, ModelError> {
        let base = |d_enc: usize, d_dec: usize, h: usize, l_enc: usize, l_dec: usize| ModelConfig {
            patch_size: 32,
            signal_length: 512,
            d_model_enc: d_enc,
            d_model_dec: d_dec,
            heads: h,
            d_head: 32,
            d_head_dec: 16,
            layers_enc: l_enc,
            layers_dec: l_dec,
            dropout: 0.1,
            mask_ratio: 0.75,
            num_classes: 200,
        };
        let m = base(128, 64, 4, 6, 2);
        let cfg = match name {
            "T" => base(32, 16, 1, 2, 1),
            "S" => base(64, 32, 2, 3, 1),
            "M" | "M-dh32" => m,
            "L" => base(192, 96, 6, 9, 3),
            "M-dh64" => ModelConfig { d_head: 64, d_head_dec: 32, ..m },
            "M-dh128" => ModelConfig { d_head: 128, d_head_dec: 64, ..m },
            "M-dh64-h3" => ModelConfig { heads: 3, d_head: 64, d_head_dec: 32, ..m },
            "M-dh64-h5" => ModelConfig { heads: 5, d_head: 64, d_head_dec: 32, ..m },
            other => return Err(ModelError::UnknownPreset(other.to_string())),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch_size == 0 || self.signal_length % self.patch_size != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "patch size {} must divide signal length {}",
                self.patch_size, self.signal_length
            )));
        }
        if self.d_head == 0 || self.d_head_dec == 0 || self.heads == 0 {
            return Err(ModelError::InvalidConfig("head dims must be >= 1".into()));
        }
        if self.layers_enc == 0 || self.layers_dec == 0 {
            return Err(ModelError::InvalidConfig("need at least one layer each".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig("dropout must be in [0,1)".into()));
        }
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        self.signal_length / self.patch_size
    }
}

fn trunc_normal_std<R: Rng>(rng: &mut R, shape: Vec<usize>, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            data.push(v);
        }
    }
    Tensor::new(shape, data).unwrap()
}

/// Embedding-table init: fixed small std.
fn trunc_normal<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    trunc_normal_std(rng, shape, INIT_STD)
}

/// Projection-matrix init: fan-in-scaled std, which keeps activation and
/// gradient magnitudes healthy across the small d_model values used here.
fn trunc_normal_fan_in<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    let std = 1.0 / (shape[0] as f64).sqrt();
    trunc_normal_std(rng, shape, std)
}

fn insert_block<R: Rng>(params: &mut ParamSet, prefix: &str, d: usize, hdh: usize, rng: &mut R) {
    params.insert(&format!("{prefix}.ln1.g"), Tensor::new(vec![d], vec![1.0; d]).unwrap());
    params.insert(&format!("{prefix}.ln1.b"), Tensor::zeros(vec![d]));
    for w in ["wq", "wk", "wv"] {
        params.insert(&format!("{prefix}.attn.{w}"), trunc_normal_fan_in(rng, vec![d, hdh]));
        params.insert(&format!("{prefix}.attn.b{}", &w[1..]), Tensor::zeros(vec![hdh]));
    }
    params.insert(&format!("{prefix}.attn.wo"), trunc_normal_fan_in(rng, vec![hdh, d]));
    params.insert(&format!("{prefix}.attn.bo"), Tensor::zeros(vec![d]));
    params.insert(&format!("{prefix}.ln2.g"), Tensor::new(vec![d], vec![1.0; d]).unwrap());
    params.insert(&format!("{prefix}.ln2.b"), Tensor::zeros(vec![d]));
    params.insert(&format!("{prefix}.mlp.w1"), trunc_normal_fan_in(rng, vec![d, 2 * d]));
    params.insert(&format!("{prefix}.mlp.b1"), Tensor::zeros(vec![2 * d]));
    params.insert(&format!("{prefix}.mlp.w2"), trunc_normal_fan_in(rng, vec![2 * d, d]));
    params.insert(&format!("{prefix}.mlp.b2"), Tensor::zeros(vec![d]));
}

/// Fresh parameter set for a config: fan-in-scaled truncated-normal
/// projection weights, std-0.02 embedding tables, zero biases, unit
/// layer-norm gains.
pub fn init_params<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<ParamSet, ModelError> {
    config.validate()?;
    let n = config.patch_count();
    let (de, dd) = (config.d_model_enc, config.d_model_dec);
    let mut params = ParamSet::new();
    params.insert("enc.proj.w", trunc_normal_fan_in(rng, vec![config.patch_size, de]));
    params.insert("enc.proj.b", Tensor::zeros(vec![de]));
    params.insert("enc.pos", trunc_normal(rng, vec![n, de]));
    for i in 0..config.layers_enc {
        insert_block(&mut params, &format!("enc.{i}"), de, config.heads * config.d_head, rng);
    }
    params.insert("enc.norm.g", Tensor::new(vec![de], vec![1.0; de]).unwrap());
    params.insert("enc.norm.b", Tensor::zeros(vec![de]));
    params.insert("dec.proj.w", trunc_normal_fan_in(rng, vec![de, dd]));
    params.insert("dec.proj.b", Tensor::zeros(vec![dd]));
    params.insert("dec.pos", trunc_normal(rng, vec![n, dd]));
    params.insert("dec.mask_token", trunc_normal(rng, vec![1, dd]));
    for i in 0..config.layers_dec {
        insert_block(&mut params, &format!("dec.{i}"), dd, config.heads * config.d_head_dec, rng);
    }
    params.insert("dec.norm.g", Tensor::new(vec![dd], vec![1.0; dd]).unwrap());
    params.insert("dec.norm.b", Tensor::zeros(vec![dd]));
    params.insert("dec.head.w", trunc_normal_fan_in(rng, vec![dd, config.patch_size]));
    params.insert("dec.head.b", Tensor::zeros(vec![config.patch_size]));
    params.insert(
        "cls.head.w",
        trunc_normal(rng, vec![config.patch_count() * de, config.num_classes]),
    );
    params.insert("cls.head.b", Tensor::zeros(vec![config.num_classes]));
    Ok(params)
}

/// Trainable-scalar counts split by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub embeddings: usize,
    pub heads: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.encoder_blocks + self.decoder_blocks + self.embeddings + self.heads
    }
}

pub fn param_count(config: &ModelConfig) -> Result<ParamCount, ModelError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let params = init_params(config, &mut rng)?;
    let mut count = ParamCount { encoder_blocks: 0, decoder_blocks: 0, embeddings: 0, heads: 0 };
    for (name, tensor) in params.iter() {
        let n = tensor.len();
        let block = name
            .split('.')
            .nth(1)
            .map(|s| s.chars().all(|c| c.is_ascii_digit()))
            .unwrap_or(false);
        if name.starts_with("enc.") && block {
            count.encoder_blocks += n;
        } else if name.starts_with("dec.") && block {
            count.decoder_blocks += n;
        } else if name.starts_with("dec.head") || name.starts_with("cls.head") {
            count.heads += n;
        } else {
            count.embeddings += n;
        }
    }
    Ok(count)
}

/// Per-forward cache of tape leaves for the parameters actually used,
/// so gradients can be routed back to named parameter slots.
pub struct VarMap<'p> {
    params: &'p ParamSet,
    vars: HashMap<usize, Var>,
}

impl<'p> VarMap<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        VarMap { params, vars: HashMap::new() }
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var, TensorError> {
        let idx = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(&v) = self.vars.get(&idx) {
            return Ok(v);
        }
        let v = tape.leaf(self.params.tensor(idx).clone())?;
        self.vars.insert(idx, v);
        Ok(v)
    }

    /// (parameter index, tape var) pairs for gradient routing.
    pub fn entries(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().map(|(&i, &v)| (i, v))
    }
}

fn linear(
    tape: &mut Tape,
    vars: &mut VarMap,
    x: Var,
    w: &str,
    b: &str,
) -> Result<Var, TensorError> {
    let wv = vars.var(tape, w)?;
    let bv = vars.var(tape, b)?;
    let y = tape.matmul(x, wv)?;
    tape.add_row(y, bv)
}

/// Multi-head self-attention with possibly non-square Q/K/V projections
/// (d_model x heads*d_head); W_O restores d_model.
#[allow(clippy::too_many_arguments)]
pub fn mhsa(
    tape: &mut Tape,
    vars: &mut VarMap,
    prefix: &str,
    x: Var,
    heads: usize,
    d_head: usize,
) -> Result<Var, TensorError> {
    let q = linear(tape, vars, x, &format!("{prefix}.attn.wq"), &format!("{prefix}.attn.bq"))?;
    let k = linear(tape, vars, x, &format!("{prefix}.attn.wk"), &format!("{prefix}.attn.bk"))?;
    let v = linear(tape, vars, x, &format!("{prefix}.attn.wv"), &format!("{prefix}.attn.bv"))?;
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for j in 0..heads {
        let qj = tape.slice_cols(q, j * d_head, d_head)?;
        let kj = tape.slice_cols(k, j * d_head, d_head)?;
        let vj = tape.slice_cols(v, j * d_head, d_head)?;
        let kt = tape.transpose(kj)?;
        let scores = tape.matmul(qj, kt)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax(scores)?;
        outputs.push(tape.matmul(attn, vj)?);
    }
    let cat = tape.concat_cols(&outputs)?;
    linear(tape, vars, cat, &format!("{prefix}.attn.wo"), &format!("{prefix}.attn.bo"))
}

/// One pre-LN transformer block: LN -> MHSA -> dropout -> residual,
/// LN -> MLP(GELU, 2x d_model) -> dropout -> residual.
#[allow(clippy::too_many_arguments)]
fn block<R: Rng>(
    tape: &mut Tape,
    vars: &mut VarMap,
    prefix: &str,
    x: Var,
    heads: usize,
    d_head: usize,
    dropout: f64,
    rng: &mut R,
    training: bool,
) -> Result<Var, TensorError> {
    let g1 = vars.var(tape, &format!("{prefix}.ln1.g"))?;
    let b1 = vars.var(tape, &format!("{prefix}.ln1.b"))?;
    let a = tape.layer_norm(x, g1, b1, LAYER_NORM_EPS)?;
    let a = mhsa(tape, vars, prefix, a, heads, d_head)?;
    let a = tape.dropout(a, dropout, rng, training)?;
    let x = tape.add(x, a)?;
    let g2 = vars.var(tape, &format!("{prefix}.ln2.g"))?;
    let b2 = vars.var(tape, &format!("{prefix}.ln2.b"))?;
    let m = tape.layer_norm(x, g2, b2, LAYER_NORM_EPS)?;
    let m = linear(tape, vars, m, &format!("{prefix}.mlp.w1"), &format!("{prefix}.mlp.b1"))?;
    let m = tape.gelu(m)?;
    let m = linear(tape, vars, m, &format!("{prefix}.mlp.w2"), &format!("{prefix}.mlp.b2"))?;
    let m = tape.dropout(m, dropout, rng, training)?;
    tape.add(x, m)
}

/// Project patches into the embedding space and add positional embeddings
/// for the given patch indices.
pub fn embed_patches(
    tape: &mut Tape,
    vars: &mut VarMap,
    patches: Var,
    indices: &[usize],
) -> Result<Var, TensorError> {
    let x = linear(tape, vars, patches, "enc.proj.w", "enc.proj.b")?;
    let pos = vars.var(tape, "enc.pos")?;
    let pos_rows = tape.gather_rows(pos, indices)?;
    tape.add(x, pos_rows)
}

/// Encoder: embed visible patches, run layers_enc pre-LN blocks, then a
/// final layer norm.
pub fn encode<R: Rng>(
    tape: &mut Tape,
    vars: &mut VarMap,
    config: &ModelConfig,
    patches: Var,
    indices: &[usize],
    rng: &mut R,
    training: bool,
) -> Result<Var, TensorError> {
    let mut x = embed_patches(tape, vars, patches, indices)?;
    for i in 0..config.layers_enc {
        x = block(
            tape,
            vars,
            &format!("enc.{i}"),
            x,
            config.heads,
            config.d_head,
            config.dropout,
            rng,
            training,
        )?;
    }
    let g = vars.var(tape, "enc.norm.g")?;
    let b = vars.var(tape, "enc.norm.b")?;
    tape.layer_norm(x, g, b, LAYER_NORM_EPS)
}

/// Decoder: project latents, scatter with the shared mask token, add decoder
/// positional embeddings, run layers_dec blocks, map every position to a
/// reconstructed patch.
pub fn decode<R: Rng>(
    tape: &mut Tape,
    vars: &mut VarMap,
    config: &ModelConfig,
    latents: Var,
    plan: &MaskPlan,
    rng: &mut R,
    training: bool,
) -> Result<Var, TensorError> {
    let z = linear(tape, vars, latents, "dec.proj.w", "dec.proj.b")?;
    let token = vars.var(tape, "dec.mask_token")?;
    let visible = plan.visible();
    let seq = tape.assemble_seq(z, token, &visible, &plan.masked)?;
    let pos = vars.var(tape, "dec.pos")?;
    let mut x = tape.add(seq, pos)?;
    for i in 0..config.layers_dec {
        x = block(
            tape,
            vars,
            &format!("dec.{i}"),
            x,
            config.heads,
            config.d_head_dec,
            config.dropout,
            rng,
            training,
        )?;
    }
    let g = vars.var(tape, "dec.norm.g")?;
    let b = vars.var(tape, "dec.norm.b")?;
    let x = tape.layer_norm(x, g, b, LAYER_NORM_EPS)?;
    linear(tape, vars, x, "dec.head.w", "dec.head.b")
}

/// Masked-patch reconstruction loss, Eq-style: mean absolute error over the
/// masked rows only.
pub fn mae_loss(
    tape: &mut Tape,
    reconstruction: Var,
    target: &Tensor,
    plan: &MaskPlan,
) -> Result<Var, TensorError> {
    tape.masked_l1(reconstruction, target, &plan.masked)
}

/// Classification logits for a full (unmasked) signal: encode all patches,
/// concatenate the patch latents in order, apply the linear class head.
/// Keeping the patch axis (rather than pooling it away) preserves the
/// positional information that an onset classifier depends on.
pub fn classify_logits<R: Rng>(
    tape: &mut Tape,
    vars: &mut VarMap,
    config: &ModelConfig,
    signal: &[f64],
    rng: &mut R,
    training: bool,
) -> Result<Var, TensorError> {
    let n = config.patch_count();
    debug_assert_eq!(signal.len(), config.signal_length);
    let patches = tape.leaf(Tensor::new(vec![n, config.patch_size], signal.to_vec())?)?;
    let indices: Vec<usize> = (0..n).collect();
    let latents = encode(tape, vars, config, patches, &indices, rng, training)?;
    let rows: Vec<Var> = (0..n)
        .map(|i| tape.gather_rows(latents, &[i]))
        .collect::<Result<_, _>>()?;
    let flat = tape.concat_cols(&rows)?;
    linear(tape, vars, flat, "cls.head.w", "cls.head.b")
}
