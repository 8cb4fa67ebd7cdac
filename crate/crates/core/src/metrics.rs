//! Evaluation metrics: top-k accuracy, classification-derived ToF error in
//! nanoseconds, and mean/std aggregation over independent runs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("k = {0} out of range 1..={1}")]
    BadK(usize, usize),
    #[error("label {0} out of range for {1} classes")]
    BadLabel(u16, usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Fraction of rows whose true label is among the k largest logits.
/// Ties are broken toward the lower class index, so results do not depend
/// on sort stability.
pub fn topk_accuracy(logits: &[Vec<f64>], labels: &[u16], k: usize) -> Result<f64, MetricError> {
    if logits.is_empty() {
        return Err(MetricError::Empty);
    }
    if logits.len() != labels.len() {
        return Err(MetricError::LengthMismatch(logits.len(), labels.len()));
    }
    let classes = logits[0].len();
    if k == 0 || k > classes {
        return Err(MetricError::BadK(k, classes));
    }
    let mut hits = 0usize;
    for (row, &label) in logits.iter().zip(labels) {
        let label = label as usize;
        if label >= classes {
            return Err(MetricError::BadLabel(label as u16, classes));
        }
        // rank of the true class: classes that strictly beat it, plus
        // equal-logit classes with a lower index
        let target = row[label];
        let mut rank = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > target || (v == target && c < label) {
                rank += 1;
            }
        }
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean absolute ToF error in nanoseconds: each class index is one sample
/// period apart, so the error is |pred - true| / sample_rate.
pub fn tof_mae_ns(pred: &[u16], truth: &[u16], sample_rate_hz: f64) -> Result<f64, MetricError> {
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    let period_ns = 1e9 / sample_rate_hz;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as i32 - t as i32).abs() as f64 * period_ns)
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub topk: f64,
    pub k: usize,
    pub tof_mae_ns: f64,
    /// confusion[truth][pred] counts
    pub confusion: Vec<Vec<u32>>,
}

impl EvalReport {
    pub fn from_logits(
        logits: &[Vec<f64>],
        labels: &[u16],
        k: usize,
        sample_rate_hz: f64,
    ) -> Result<Self, MetricError> {
        let top1 = topk_accuracy(logits, labels, 1)?;
        let topk = topk_accuracy(logits, labels, k)?;
        let classes = logits[0].len();
        let preds: Vec<u16> = logits.iter().map(|row| argmax(row) as u16).collect();
        let mae = tof_mae_ns(&preds, labels, sample_rate_hz)?;
        let mut confusion = vec![vec![0u32; classes]; classes];
        for (&p, &t) in preds.iter().zip(labels) {
            confusion[t as usize][p as usize] += 1;
        }
        Ok(EvalReport { top1, topk, k, tof_mae_ns: mae, confusion })
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("top1,{}\n", self.top1));
        out.push_str(&format!("top{},{}\n", self.k, self.topk));
        out.push_str(&format!("tof_mae_ns,{}\n", self.tof_mae_ns));
        out
    }

    pub fn table(&self) -> String {
        format!(
            "top-1 accuracy   {:>8.4}\ntop-{} accuracy   {:>8.4}\nToF MAE (ns)     {:>8.2}\n",
            self.top1, self.k, self.topk, self.tof_mae_ns
        )
    }
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub mean: f64,
    /// Sample standard deviation (n-1); None for a single run.
    pub std: Option<f64>,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<RunStats, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    } else {
        None
    };
    Ok(RunStats { mean, std, n })
}

/// Mean ± std of top-1, top-k and ToF MAE across runs.
pub fn aggregate_runs(
    reports: &[EvalReport],
) -> Result<(RunStats, RunStats, RunStats), MetricError> {
    if reports.is_empty() {
        return Err(MetricError::Empty);
    }
    let top1: Vec<f64> = reports.iter().map(|r| r.top1).collect();
    let topk: Vec<f64> = reports.iter().map(|r| r.topk).collect();
    let mae: Vec<f64> = reports.iter().map(|r| r.tof_mae_ns).collect();
    Ok((aggregate(&top1)?, aggregate(&topk)?, aggregate(&mae)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn topk_trivial_cases() {
        let logits = vec![vec![0.0; 200], vec![0.1; 200]];
        let labels = vec![7u16, 42];
        assert_eq!(topk_accuracy(&logits, &labels, 200).unwrap(), 1.0);

        let mut onehot = vec![vec![0.0; 200]; 3];
        let labels = vec![3u16, 199, 0];
        for (row, &l) in onehot.iter_mut().zip(&labels) {
            row[l as usize] = 1.0;
        }
        assert_eq!(topk_accuracy(&onehot, &labels, 1).unwrap(), 1.0);
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let b = 1000;
        let logits: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..50).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let labels: Vec<u16> = (0..b).map(|_| rng.random_range(0..50) as u16).collect();
        for k in [1usize, 2, 5, 10, 50] {
            let got = topk_accuracy(&logits, &labels, k).unwrap();
            // brute force: full sort with (value desc, index asc)
            let mut hits = 0;
            for (row, &l) in logits.iter().zip(&labels) {
                let mut order: Vec<usize> = (0..row.len()).collect();
                order.sort_by(|&a, &b| {
                    row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b))
                });
                if order[..k].contains(&(l as usize)) {
                    hits += 1;
                }
            }
            assert_eq!(got, hits as f64 / b as f64, "k={k}");
        }
    }

    #[test]
    fn topk_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let logits: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..20).map(|_| rng.random::<f64>()).collect())
            .collect();
        let labels: Vec<u16> = (0..200).map(|_| rng.random_range(0..20) as u16).collect();
        let mut prev = 0.0;
        for k in 1..=20 {
            let a = topk_accuracy(&logits, &labels, k).unwrap();
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn topk_tie_break_prefers_lower_index() {
        // all-equal logits: label 0 is "rank 0", label 1 is "rank 1"
        let logits = vec![vec![1.0; 3]];
        assert_eq!(topk_accuracy(&logits, &[0u16], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&logits, &[1u16], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&logits, &[1u16], 2).unwrap(), 1.0);
    }

    #[test]
    fn topk_rejects_bad_input() {
        let logits = vec![vec![0.0; 5]];
        assert!(topk_accuracy(&logits, &[9u16], 1).is_err());
        assert!(topk_accuracy(&logits, &[0u16], 0).is_err());
        assert!(topk_accuracy(&logits, &[0u16], 6).is_err());
        assert!(topk_accuracy(&[], &[], 1).is_err());
    }

    #[test]
    fn tof_mae_basic_arithmetic() {
        assert_eq!(tof_mae_ns(&[5, 7], &[5, 7], 60e6).unwrap(), 0.0);
        // 3 classes off at 60 MHz -> 3 * 16.666... = 50 ns
        let got = tof_mae_ns(&[10], &[7], 60e6).unwrap();
        assert!((got - 50.0).abs() < 1e-9, "{got}");
        // symmetry
        assert_eq!(
            tof_mae_ns(&[1, 2, 3], &[4, 4, 4], 60e6).unwrap(),
            tof_mae_ns(&[4, 4, 4], &[1, 2, 3], 60e6).unwrap()
        );
        assert!(tof_mae_ns(&[1], &[1, 2], 60e6).is_err());
    }

    #[test]
    fn tof_mae_equals_class_error_times_period() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let pred: Vec<u16> = (0..500).map(|_| rng.random_range(0..200) as u16).collect();
        let truth: Vec<u16> = (0..500).map(|_| rng.random_range(0..200) as u16).collect();
        let got = tof_mae_ns(&pred, &truth, 60e6).unwrap();
        let class_err: f64 = pred
            .iter()
            .zip(&truth)
            .map(|(&p, &t)| (p as f64 - t as f64).abs())
            .sum::<f64>()
            / 500.0;
        assert!((got - class_err * 16.666666666666668).abs() < 1e-9);
    }

    #[test]
    fn aggregate_two_point_and_single() {
        let s = aggregate(&[0.7, 0.9]).unwrap();
        assert!((s.mean - 0.8).abs() < 1e-12);
        assert!((s.std.unwrap() - 0.1414213562373095).abs() < 1e-12);
        assert_eq!(s.n, 2);

        let one = aggregate(&[0.5]).unwrap();
        assert_eq!(one.std, None);

        let same = aggregate(&[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(same.std, Some(0.0));

        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn report_confusion_rows_sum_to_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let logits: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..10).map(|_| rng.random::<f64>()).collect())
            .collect();
        let labels: Vec<u16> = (0..100).map(|_| rng.random_range(0..10) as u16).collect();
        let r = EvalReport::from_logits(&logits, &labels, 5, 60e6).unwrap();
        for c in 0..10u16 {
            let support = labels.iter().filter(|&&l| l == c).count() as u32;
            let row_sum: u32 = r.confusion[c as usize].iter().sum();
            assert_eq!(row_sum, support);
        }
        assert!(r.top1 <= r.topk);
        assert!(r.csv().contains("tof_mae_ns"));
    }
}
