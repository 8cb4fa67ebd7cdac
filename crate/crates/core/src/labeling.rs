//! Matched-filter time-of-flight labeling via cross-correlation of a
//! received signal with its excitation template.

use crate::signal::TOF_CLASSES;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("signal length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation argmax maps to label {0}, outside class range 0..{TOF_CLASSES}")]
    OutOfClass(i64),
    #[error("empty signals")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct CorrelationResult {
    /// Lags tau in [-(N-1), N-1], ascending.
    pub lags: Vec<i64>,
    pub values: Vec<f64>,
    /// Argmax lag; ties break to the smallest lag.
    pub tau_max: i64,
}

fn mean_removed(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// C(tau) = sum_t r(t) * s(t + tau) with out-of-range terms zero.
/// Direct-sum semantics over the full lag range.
pub fn cross_correlation(r: &[f64], s: &[f64]) -> Result<CorrelationResult, LabelError> {
    if r.is_empty() {
        return Err(LabelError::Empty);
    }
    if r.len() != s.len() {
        return Err(LabelError::LengthMismatch(r.len(), s.len()));
    }
    let n = r.len() as i64;
    let mut lags = Vec::with_capacity((2 * n - 1) as usize);
    let mut values = Vec::with_capacity((2 * n - 1) as usize);
    let mut tau_max = -(n - 1);
    let mut best = f64::NEG_INFINITY;
    for tau in -(n - 1)..n {
        let mut c = 0.0;
        let lo = 0.max(-tau);
        let hi = n.min(n - tau);
        for t in lo..hi {
            c += r[t as usize] * s[(t + tau) as usize];
        }
        if c > best {
            best = c;
            tau_max = tau;
        }
        lags.push(tau);
        values.push(c);
    }
    Ok(CorrelationResult { lags, values, tau_max })
}

/// The ToF label of `received` given its excitation template (which starts
/// at sample 0). Both signals are mean-removed before correlating, which
/// cancels the 8-bit DC offset.
pub fn tof_label(received: &[f64], excitation: &[f64]) -> Result<u16, LabelError> {
    let r = mean_removed(received);
    let s = mean_removed(excitation);
    let corr = cross_correlation(&r, &s)?;
    // r(t) = s(t - k) peaks at tau = -k, so the label is -tau_max.
    let label = -corr.tau_max;
    if !(0..TOF_CLASSES as i64).contains(&label) {
        return Err(LabelError::OutOfClass(label));
    }
    Ok(label as u16)
}
