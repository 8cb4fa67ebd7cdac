//! Non-overlapping 1D patches and random mask plans.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

pub const SUPPORTED_PATCH_SIZES: [usize; 5] = [8, 16, 32, 64, 128];

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("patch size {0} does not divide signal length {1}")]
    NonDivisible(usize, usize),
    #[error("unsupported patch size {0} (supported: {SUPPORTED_PATCH_SIZES:?})")]
    UnsupportedPatchSize(usize),
    #[error("mask ratio {ratio} leaves {masked} masked of {n} patches; need both sets nonempty")]
    DegenerateRatio { ratio: f64, masked: usize, n: usize },
    #[error("mask plan for {0} patches does not match grid of {1}")]
    PlanMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub signal_length: usize,
    pub patch_size: usize,
    /// N rows of patch_size values, row-major.
    pub patches: Vec<f64>,
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.signal_length / self.patch_size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.patches[i * self.patch_size..(i + 1) * self.patch_size]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    /// Sorted masked indices, a strict nonempty subset of 0..n.
    pub masked: Vec<usize>,
    pub patch_count: usize,
}

impl MaskPlan {
    pub fn visible(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.patch_count - self.masked.len());
        let mut m = self.masked.iter().peekable();
        for i in 0..self.patch_count {
            if m.peek() == Some(&&i) {
                m.next();
            } else {
                out.push(i);
            }
        }
        out
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked.binary_search(&i).is_ok()
    }
}

/// Number of masked patches for a ratio: round-half-up.
pub fn mask_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64 + 0.5).floor() as usize
}

pub fn patchify(signal: &[f64], patch_size: usize) -> Result<PatchGrid, PatchError> {
    if !SUPPORTED_PATCH_SIZES.contains(&patch_size) {
        return Err(PatchError::UnsupportedPatchSize(patch_size));
    }
    if signal.len() % patch_size != 0 {
        return Err(PatchError::NonDivisible(patch_size, signal.len()));
    }
    Ok(PatchGrid {
        signal_length: signal.len(),
        patch_size,
        patches: signal.to_vec(),
    })
}

pub fn unpatchify(grid: &PatchGrid) -> Vec<f64> {
    grid.patches.clone()
}

/// Uniform sample without replacement of round(ratio*n) masked indices.
pub fn sample_mask<R: Rng>(n: usize, ratio: f64, rng: &mut R) -> Result<MaskPlan, PatchError> {
    let m = mask_count(n, ratio);
    if m == 0 || m >= n {
        return Err(PatchError::DegenerateRatio { ratio, masked: m, n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let mut masked = indices[..m].to_vec();
    masked.sort_unstable();
    Ok(MaskPlan { masked, patch_count: n })
}

/// Order-preserving partition into (visible patches, visible indices,
/// masked target patches, masked indices).
pub fn split_visible(
    grid: &PatchGrid,
    plan: &MaskPlan,
) -> Result<(Vec<f64>, Vec<usize>, Vec<f64>, Vec<usize>), PatchError> {
    let n = grid.patch_count();
    if plan.patch_count != n {
        return Err(PatchError::PlanMismatch(plan.patch_count, n));
    }
    if plan.masked.iter().any(|&i| i >= n) {
        return Err(PatchError::PlanMismatch(plan.patch_count, n));
    }
    let visible_idx = plan.visible();
    let mut visible = Vec::with_capacity(visible_idx.len() * grid.patch_size);
    for &i in &visible_idx {
        visible.extend_from_slice(grid.row(i));
    }
    let mut masked = Vec::with_capacity(plan.masked.len() * grid.patch_size);
    for &i in &plan.masked {
        masked.extend_from_slice(grid.row(i));
    }
    Ok((visible, visible_idx, masked, plan.masked.clone()))
}
