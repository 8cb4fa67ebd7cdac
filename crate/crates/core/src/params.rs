//! Named trainable parameters with per-parameter gradient slots.

use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a parameter. Values are snapped to the f32 grid so the
    /// in-memory state matches what a checkpoint round trip reproduces.
    pub fn insert(&mut self, name: &str, mut tensor: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        tensor.round_to_f32();
        let grad = Tensor::zeros(tensor.shape().to_vec());
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.grads.push(grad);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn grad(&self, i: usize) -> &Tensor {
        &self.grads[i]
    }

    pub fn grad_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.grads[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).copied().map(move |i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = 0.0;
            }
        }
    }

    /// Accumulate `delta` into the gradient slot of parameter `i`.
    pub fn accumulate_grad(&mut self, i: usize, delta: &Tensor) {
        debug_assert_eq!(self.grads[i].shape(), delta.shape());
        for (g, d) in self.grads[i].data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_shapes_track_param_shapes() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![3, 4]));
        assert_eq!(p.grad(0).shape(), &[3, 4]);
        assert_eq!(p.position("w"), Some(0));
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![1]));
        p.insert("w", Tensor::zeros(vec![1]));
    }
}
