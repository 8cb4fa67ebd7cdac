//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Every forward call appends one node; `backward` walks the tape in reverse
//! index order, so gradient accumulation order is fixed and results are
//! bitwise deterministic for identical inputs.

use crate::params::ParamSet;
use crate::tensor::{Tensor, TensorError};
use rand::Rng;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// Matrix [n,d] plus a broadcast row [1,d].
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    /// Stores the softmax output implicitly (it is the node value).
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// Mask entries are 0 or 1/(1-rate).
    Dropout { x: Var, mask: Vec<f64> },
    GatherRows { table: Var, indices: Vec<usize> },
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    /// Scatter visible latents and a shared mask token into a full sequence.
    AssembleSeq {
        latents: Var,
        mask_token: Var,
        visible: Vec<usize>,
        masked: Vec<usize>,
    },
    MeanRows(Var),
    SumAll(Var),
    /// L1 over the masked rows only, averaged by |M|*P.
    MaskedL1 {
        recon: Var,
        target: Tensor,
        masked: Vec<usize>,
    },
    /// Softmax cross-entropy of a single logit row against one class index.
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(op: &'static str, expected: String, got: String) -> TensorError {
    TensorError::ShapeMismatch { op, expected, got }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("[m,k]x[k,n], lhs {:?}", ta.shape()),
                format!("rhs {:?}", tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(shape_err("transpose", "rank 2".into(), format!("{:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        self.push(Tensor::new(ta.shape().to_vec(), out)?, Op::Add(a, b), "add")
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (tx, tr) = (self.value(x), self.value(row));
        let d = tx.cols();
        if tr.len() != d {
            return Err(shape_err(
                "add_row",
                format!("row of {} values", d),
                format!("{:?}", tr.shape()),
            ));
        }
        let mut out = tx.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += tr.data()[i % d];
        }
        self.push(Tensor::new(tx.shape().to_vec(), out)?, Op::AddRow(x, row), "add_row")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Scale(x, c), "scale")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Gelu(x), "gelu")
    }

    /// Softmax along the last axis with max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let d = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_row(row);
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(x), "softmax")
    }

    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(shape_err(
                "layer_norm",
                format!("gamma/beta of {} values", d),
                format!("{:?}/{:?}", tg.shape(), tb.shape()),
            ));
        }
        let rows = tx.len() / d;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let src = &tx.data()[r * d..(r + 1) * d];
            let mean = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (src[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = tg.data()[j] * xh + tb.data()[j];
            }
        }
        let shape = tx.shape().to_vec();
        let xhat = Tensor::new(shape.clone(), xhat)?;
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            "layer_norm",
        )
    }

    pub fn dropout<R: Rng>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(shape_err("dropout", "rate in [0,1)".into(), format!("{rate}")));
        }
        if !training || rate == 0.0 {
            // Identity at inference; no rng draws so eval paths stay
            // reproducible regardless of rate.
            let t = self.value(x).clone();
            let mask = vec![1.0; t.len()];
            return self.push(t, Op::Dropout { x, mask }, "dropout");
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let mut mask = vec![0.0; t.len()];
        let mut out = vec![0.0; t.len()];
        for i in 0..t.len() {
            if rng.random::<f64>() >= rate {
                mask[i] = keep_scale;
                out[i] = t.data()[i] * keep_scale;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Dropout { x, mask }, "dropout")
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let d = t.cols();
        let rows = t.rows();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(shape_err(
                    "gather_rows",
                    format!("index < {}", rows),
                    format!("{}", i),
                ));
            }
            out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            Op::GatherRows { table, indices: indices.to_vec() },
            "gather_rows",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        let d = t.cols();
        if start + len > d {
            return Err(shape_err(
                "slice_cols",
                format!("start+len <= {}", d),
                format!("{}+{}", start, len),
            ));
        }
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.data()[r * d + start..r * d + start + len]);
        }
        self.push(
            Tensor::new(vec![rows, len], out)?,
            Op::SliceCols { x, start, len },
            "slice_cols",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                if t.rows() != rows {
                    return Err(shape_err(
                        "concat_cols",
                        format!("{} rows", rows),
                        format!("{} rows", t.rows()),
                    ));
                }
                let c = t.cols();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            "concat_cols",
        )
    }

    /// Build the decoder input sequence: visible latent rows at their patch
    /// positions, the shared mask token at every masked position.
    pub fn assemble_seq(
        &mut self,
        latents: Var,
        mask_token: Var,
        visible: &[usize],
        masked: &[usize],
    ) -> Result<Var, TensorError> {
        let tl = self.value(latents);
        let tm = self.value(mask_token);
        let d = tl.cols();
        if tm.len() != d {
            return Err(shape_err(
                "assemble_seq",
                format!("mask token of {} values", d),
                format!("{:?}", tm.shape()),
            ));
        }
        if tl.rows() != visible.len() {
            return Err(shape_err(
                "assemble_seq",
                format!("{} latent rows", visible.len()),
                format!("{}", tl.rows()),
            ));
        }
        let n = visible.len() + masked.len();
        let mut out = vec![0.0; n * d];
        for (r, &pos) in visible.iter().enumerate() {
            out[pos * d..(pos + 1) * d].copy_from_slice(&tl.data()[r * d..(r + 1) * d]);
        }
        for &pos in masked {
            out[pos * d..(pos + 1) * d].copy_from_slice(tm.data());
        }
        self.push(
            Tensor::new(vec![n, d], out)?,
            Op::AssembleSeq {
                latents,
                mask_token,
                visible: visible.to_vec(),
                masked: masked.to_vec(),
            },
            "assemble_seq",
        )
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let d = t.cols();
        let n = t.rows();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                out[j] += t.data()[r * d + j];
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        self.push(Tensor::new(vec![1, d], out)?, Op::MeanRows(x), "mean_rows")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), "sum_all")
    }

    /// Masked-patch mean absolute error: (1/(|M|*P)) sum over masked rows.
    pub fn masked_l1(
        &mut self,
        recon: Var,
        target: &Tensor,
        masked: &[usize],
    ) -> Result<Var, TensorError> {
        let t = self.value(recon);
        if t.shape() != target.shape() {
            return Err(shape_err(
                "masked_l1",
                format!("{:?}", target.shape()),
                format!("{:?}", t.shape()),
            ));
        }
        if masked.is_empty() {
            return Err(shape_err("masked_l1", "nonempty mask set".into(), "empty".into()));
        }
        let p = t.cols();
        let norm = (masked.len() * p) as f64;
        let mut s = 0.0;
        for &i in masked {
            for j in 0..p {
                s += (t.at(i, j) - target.at(i, j)).abs();
            }
        }
        self.push(
            Tensor::scalar(s / norm),
            Op::MaskedL1 {
                recon,
                target: target.clone(),
                masked: masked.to_vec(),
            },
            "masked_l1",
        )
    }

    /// Numerically stable softmax cross-entropy for one logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let t = self.value(logits);
        let c = t.len();
        if label >= c {
            return Err(shape_err("cross_entropy", format!("label < {}", c), format!("{}", label)));
        }
        let mut probs = t.data().to_vec();
        softmax_row(&mut probs);
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - t.data()[label];
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, label, probs },
            "cross_entropy",
        )
    }

    /// Reverse pass from a scalar root. Returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        if self.value(root).len() != 1 {
            return Err(shape_err(
                "backward",
                "scalar root".into(),
                format!("{:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| {
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(t),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = g . B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for c in 0..n {
                        let gv = g.data()[r * n + c];
                        if gv == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            da[r * k + j] += gv * tb.data()[j * n + c];
                        }
                    }
                }
                // dB = A^T . g
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    for j in 0..k {
                        let av = ta.data()[r * k + j];
                        if av == 0.0 {
                            continue;
                        }
                        for c in 0..n {
                            db[j * n + c] += av * g.data()[r * n + c];
                        }
                    }
                }
                acc(grads, *a, Tensor::new(vec![m, k], da)?);
                acc(grads, *b, Tensor::new(vec![k, n], db)?);
            }
            Op::Transpose(x) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let mut dx = vec![0.0; r * c];
                for i2 in 0..r {
                    for j in 0..c {
                        dx[j * r + i2] = g.data()[i2 * c + j];
                    }
                }
                acc(grads, *x, Tensor::new(vec![c, r], dx)?);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddRow(x, row) => {
                acc(grads, *x, g.clone());
                let d = self.value(*row).len();
                let mut dr = vec![0.0; d];
                for (idx, v) in g.data().iter().enumerate() {
                    dr[idx % d] += v;
                }
                let shape = self.value(*row).shape().to_vec();
                acc(grads, *row, Tensor::new(shape, dr)?);
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.data().iter().map(|v| v * c).collect();
                acc(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let dx: Vec<f64> = tx
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| gv * gelu_grad_scalar(v))
                    .collect();
                acc(grads, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let d = y.cols();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / d {
                    let ys = &y.data()[r * d..(r + 1) * d];
                    let gs = &g.data()[r * d..(r + 1) * d];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = ys[j] * (gs[j] - dot);
                    }
                }
                acc(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let tg = self.value(*gamma);
                let d = xhat.cols();
                let rows = xhat.len() / d;
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; xhat.len()];
                for r in 0..rows {
                    let xh = &xhat.data()[r * d..(r + 1) * d];
                    let gs = &g.data()[r * d..(r + 1) * d];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..d {
                        dgamma[j] += gs[j] * xh[j];
                        dbeta[j] += gs[j];
                        let dxh = gs[j] * tg.data()[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for j in 0..d {
                        let dxh = gs[j] * tg.data()[j];
                        dx[r * d + j] = inv_std[r] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                    }
                }
                acc(grads, *x, Tensor::new(xhat.shape().to_vec(), dx)?);
                let gshape = tg.shape().to_vec();
                acc(grads, *gamma, Tensor::new(gshape, dgamma)?);
                let bshape = self.value(*beta).shape().to_vec();
                acc(grads, *beta, Tensor::new(bshape, dbeta)?);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                acc(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::GatherRows { table, indices } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut dt = vec![0.0; t.len()];
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[idx * d + j] += g.data()[r * d + j];
                    }
                }
                acc(grads, *table, Tensor::new(t.shape().to_vec(), dt)?);
            }
            Op::SliceCols { x, start, len } => {
                let t = self.value(*x);
                let d = t.cols();
                let rows = t.rows();
                let mut dx = vec![0.0; t.len()];
                for r in 0..rows {
                    for j in 0..*len {
                        dx[r * d + start + j] = g.data()[r * len + j];
                    }
                }
                acc(grads, *x, Tensor::new(t.shape().to_vec(), dx)?);
            }
            Op::ConcatCols(parts) => {
                let rows = g.shape()[0];
                let total = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut dp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    acc(grads, p, Tensor::new(vec![rows, c], dp)?);
                    offset += c;
                }
            }
            Op::AssembleSeq { latents, mask_token, visible, masked } => {
                let d = g.shape()[1];
                let mut dl = Vec::with_capacity(visible.len() * d);
                for &pos in visible {
                    dl.extend_from_slice(&g.data()[pos * d..(pos + 1) * d]);
                }
                let mut dm = vec![0.0; d];
                for &pos in masked {
                    for j in 0..d {
                        dm[j] += g.data()[pos * d + j];
                    }
                }
                acc(grads, *latents, Tensor::new(vec![visible.len(), d], dl)?);
                let mshape = self.value(*mask_token).shape().to_vec();
                acc(grads, *mask_token, Tensor::new(mshape, dm)?);
            }
            Op::MeanRows(x) => {
                let t = self.value(*x);
                let d = t.cols();
                let n = t.rows();
                let mut dx = vec![0.0; t.len()];
                for r in 0..n {
                    for j in 0..d {
                        dx[r * d + j] = g.data()[j] / n as f64;
                    }
                }
                acc(grads, *x, Tensor::new(t.shape().to_vec(), dx)?);
            }
            Op::SumAll(x) => {
                let t = self.value(*x);
                let gv = g.scalar_value();
                acc(grads, *x, Tensor::new(t.shape().to_vec(), vec![gv; t.len()])?);
            }
            Op::MaskedL1 { recon, target, masked } => {
                let t = self.value(*recon);
                let p = t.cols();
                let norm = (masked.len() * p) as f64;
                let gv = g.scalar_value() / norm;
                let mut dx = vec![0.0; t.len()];
                for &r in masked {
                    for j in 0..p {
                        let diff = t.at(r, j) - target.at(r, j);
                        dx[r * p + j] = gv * diff.signum() * if diff == 0.0 { 0.0 } else { 1.0 };
                    }
                }
                acc(grads, *recon, Tensor::new(t.shape().to_vec(), dx)?);
            }
            Op::CrossEntropy { logits, label, probs } => {
                let gv = g.scalar_value();
                let mut dx: Vec<f64> = probs.iter().map(|p| p * gv).collect();
                dx[*label] -= gv;
                let shape = self.value(*logits).shape().to_vec();
                acc(grads, *logits, Tensor::new(shape, dx)?);
            }
        }
        Ok(())
    }
}

/// Cache-friendly i-k-j triple loop.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Exact erf-based GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `f` must be deterministic given the parameter set (no dropout) and return
/// the loss plus one gradient tensor per parameter, in parameter order.
/// When the parameter set holds more than `max_samples` scalars, a random
/// subsample of that many elements is checked instead.
pub fn grad_check<F, R>(
    mut f: F,
    params: &mut ParamSet,
    eps: f64,
    max_samples: usize,
    rng: &mut R,
) -> Result<f64, TensorError>
where
    F: FnMut(&ParamSet) -> Result<(f64, Vec<Tensor>), TensorError>,
    R: Rng,
{
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    let total: usize = (0..params.len()).map(|i| params.tensor(i).len()).sum();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    if total <= max_samples {
        for i in 0..params.len() {
            for j in 0..params.tensor(i).len() {
                picks.push((i, j));
            }
        }
    } else {
        for _ in 0..max_samples.max(256) {
            let i = rng.random_range(0..params.len());
            let j = rng.random_range(0..params.tensor(i).len());
            picks.push((i, j));
        }
    }
    let mut worst: f64 = 0.0;
    for (pi, ei) in picks {
        let orig = params.tensor(pi).data()[ei];
        params.tensor_mut(pi).data_mut()[ei] = orig + eps;
        let plus = f(params)?.0;
        params.tensor_mut(pi).data_mut()[ei] = orig - eps;
        let minus = f(params)?.0;
        params.tensor_mut(pi).data_mut()[ei] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[pi].data()[ei];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        let rel = (a - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
