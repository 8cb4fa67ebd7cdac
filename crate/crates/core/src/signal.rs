//! Synthetic ultrasound tone-burst generation with ground-truth onset labels,
//! 8-bit quantization and Shannon-entropy profiling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const TOF_CLASSES: usize = 200;

/// Sentinel for "no noise" requests.
pub const NO_NOISE_SNR_DB: f64 = f64::INFINITY;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid burst params: {0}")]
    InvalidParams(String),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("SNR undefined for an all-zero signal")]
    UndefinedSnr,
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    Hann,
    Rectangular,
}

impl std::str::FromStr for Envelope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hann" => Ok(Envelope::Hann),
            "rect" | "rectangular" => Ok(Envelope::Rectangular),
            other => Err(format!("unknown envelope {other:?} (expected hann|rect)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BurstParams {
    pub frequency_hz: f64,
    /// Normalized amplitude in (0, 1].
    pub amplitude: f64,
    pub burst_length: usize,
    /// Onset sample index; doubles as the ToF class label.
    pub onset: usize,
    pub peak_snr_db: f64,
    pub envelope: Envelope,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub seed: u64,
    pub signal_length: usize,
    pub sample_rate_hz: f64,
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
    pub amp_min: f64,
    pub amp_max: f64,
    pub burst_min: usize,
    pub burst_max: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub envelope: Envelope,
    pub no_noise: bool,
}

impl Default for DatasetSpec {
    /// Synthetic-dataset parameter ranges: 1-4 MHz, 0.2-1 amplitude,
    /// 200-400 sample bursts, 18-38 dB peak SNR at 60 MHz sampling.
    fn default() -> Self {
        DatasetSpec {
            count: 1000,
            seed: 0,
            signal_length: 512,
            sample_rate_hz: 60e6,
            freq_min_hz: 1.0e6,
            freq_max_hz: 4.0e6,
            amp_min: 0.2,
            amp_max: 1.0,
            burst_min: 200,
            burst_max: 400,
            snr_min_db: 18.0,
            snr_max_db: 38.0,
            envelope: Envelope::Hann,
            no_noise: false,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), SignalError> {
        if self.count == 0 {
            return Err(SignalError::InvalidSpec("count must be > 0".into()));
        }
        if self.signal_length == 0 || self.signal_length % 128 != 0 {
            // keeps every supported patch size {8,16,32,64,128} divisible
            return Err(SignalError::InvalidSpec(format!(
                "signal_length {} must be a positive multiple of 128",
                self.signal_length
            )));
        }
        if self.freq_min_hz > self.freq_max_hz
            || self.amp_min > self.amp_max
            || self.burst_min > self.burst_max
            || self.snr_min_db > self.snr_max_db
        {
            return Err(SignalError::InvalidSpec("min > max in a range".into()));
        }
        if self.amp_min <= 0.0 || self.amp_max > 1.0 {
            return Err(SignalError::InvalidSpec("amplitude range must be in (0,1]".into()));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(SignalError::InvalidSpec("sample rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalRecord {
    pub samples: Vec<u8>,
    pub label: u16,
    /// Generator parameters; absent for records loaded from disk.
    pub params: Option<BurstParams>,
}

/// Envelope value at burst-internal sample `n` of `len`. The first sample is
/// nonzero for both shapes, so the onset sample is well defined.
fn envelope_at(envelope: Envelope, n: usize, len: usize) -> f64 {
    match envelope {
        Envelope::Rectangular => 1.0,
        Envelope::Hann => {
            let phase = PI * (n as f64 + 1.0) / (len as f64 + 1.0);
            phase.sin() * phase.sin()
        }
    }
}

/// Clean tone burst: zeros before `onset`, enveloped sine from `onset`,
/// truncated at the window end, zeros after.
pub fn synth_burst(params: &BurstParams, spec: &DatasetSpec) -> Result<Vec<f64>, SignalError> {
    if params.onset >= spec.signal_length {
        return Err(SignalError::InvalidParams(format!(
            "onset {} beyond signal length {}",
            params.onset, spec.signal_length
        )));
    }
    if params.onset >= TOF_CLASSES {
        return Err(SignalError::InvalidParams(format!(
            "onset {} outside class range 0..{}",
            params.onset, TOF_CLASSES
        )));
    }
    if params.burst_length == 0 {
        return Err(SignalError::InvalidParams("zero burst length".into()));
    }
    let mut out = vec![0.0; spec.signal_length];
    let end = (params.onset + params.burst_length).min(spec.signal_length);
    let w = 2.0 * PI * params.frequency_hz / spec.sample_rate_hz;
    for t in params.onset..end {
        let n = t - params.onset;
        out[t] = params.amplitude * envelope_at(params.envelope, n, params.burst_length) * (w * n as f64).sin();
    }
    Ok(out)
}

/// The matched-filter excitation template: the same burst with onset 0.
pub fn excitation_template(params: &BurstParams, spec: &DatasetSpec) -> Result<Vec<f64>, SignalError> {
    let clean = BurstParams {
        onset: 0,
        peak_snr_db: NO_NOISE_SNR_DB,
        ..*params
    };
    synth_burst(&clean, spec)
}

/// Add white Gaussian noise at the requested peak SNR,
/// sigma = peak / 10^(snr/20) with peak = max|signal|.
pub fn add_noise<R: Rng>(
    signal: &[f64],
    peak_snr_db: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SignalError> {
    if peak_snr_db == NO_NOISE_SNR_DB {
        return Ok(signal.to_vec());
    }
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(SignalError::UndefinedSnr);
    }
    let sigma = peak / 10f64.powf(peak_snr_db / 20.0);
    Ok(signal
        .iter()
        .map(|v| v + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QuantStats {
    pub clipped: usize,
}

/// Map [-1,1] to u8 with round-half-away-from-zero; out-of-range inputs are
/// clipped silently and counted.
pub fn quantize_8bit(signal: &[f64]) -> (Vec<u8>, QuantStats) {
    let mut stats = QuantStats::default();
    let q = signal
        .iter()
        .map(|&x| {
            let clipped = x.clamp(-1.0, 1.0);
            if clipped != x {
                stats.clipped += 1;
            }
            let v = ((clipped + 1.0) / 2.0 * 255.0).round();
            v.clamp(0.0, 255.0) as u8
        })
        .collect();
    (q, stats)
}

pub fn dequantize_8bit(q: &[u8]) -> Vec<f64> {
    q.iter().map(|&v| v as f64 / 255.0 * 2.0 - 1.0).collect()
}

/// Per-record rng substream derived from (seed, record index).
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_params<R: Rng>(spec: &DatasetSpec, rng: &mut R) -> BurstParams {
    let frequency_hz = if spec.freq_min_hz == spec.freq_max_hz {
        spec.freq_min_hz
    } else {
        rng.random_range(spec.freq_min_hz..spec.freq_max_hz)
    };
    let amplitude = if spec.amp_min == spec.amp_max {
        spec.amp_min
    } else {
        rng.random_range(spec.amp_min..spec.amp_max)
    };
    let burst_length = rng.random_range(spec.burst_min..=spec.burst_max);
    let onset = rng.random_range(0..TOF_CLASSES);
    let peak_snr_db = if spec.no_noise {
        NO_NOISE_SNR_DB
    } else if spec.snr_min_db == spec.snr_max_db {
        spec.snr_min_db
    } else {
        rng.random_range(spec.snr_min_db..spec.snr_max_db)
    };
    BurstParams {
        frequency_hz,
        amplitude,
        burst_length,
        onset,
        peak_snr_db,
        envelope: spec.envelope,
    }
}

/// Generate one record deterministically from (spec.seed, index).
pub fn generate_record(spec: &DatasetSpec, index: u64) -> Result<SignalRecord, SignalError> {
    let mut rng = record_rng(spec.seed, index);
    let params = draw_params(spec, &mut rng);
    let clean = synth_burst(&params, spec)?;
    let noisy = add_noise(&clean, params.peak_snr_db, &mut rng)?;
    let (samples, _) = quantize_8bit(&noisy);
    Ok(SignalRecord {
        samples,
        label: params.onset as u16,
        params: Some(params),
    })
}

/// Generate the full dataset. Records are independent substreams, so the
/// result is identical regardless of generation parallelism.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SignalRecord>, SignalError> {
    spec.validate()?;
    (0..spec.count as u64)
        .into_par_iter()
        .map(|i| generate_record(spec, i))
        .collect()
}

/// Shannon entropy in bits over the pooled 256-bin amplitude histogram.
pub fn shannon_entropy<'a, I>(datasets: I) -> Result<f64, SignalError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut hist = [0u64; 256];
    let mut total = 0u64;
    for signal in datasets {
        for &s in signal {
            hist[s as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(SignalError::EmptyDataset);
    }
    let mut h = 0.0;
    for &c in &hist {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.log2();
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_params() -> BurstParams {
        BurstParams {
            frequency_hz: 2.0e6,
            amplitude: 0.8,
            burst_length: 250,
            onset: 73,
            peak_snr_db: NO_NOISE_SNR_DB,
            envelope: Envelope::Hann,
        }
    }

    #[test]
    fn pre_onset_silence_and_amplitude_bound() {
        let spec = DatasetSpec::default();
        let p = test_params();
        let s = synth_burst(&p, &spec).unwrap();
        for &v in &s[..p.onset] {
            assert_eq!(v, 0.0);
        }
        for &v in &s {
            assert!(v.abs() <= p.amplitude + 1e-12);
        }
    }

    #[test]
    fn onset_beyond_window_rejected() {
        let spec = DatasetSpec::default();
        let mut p = test_params();
        p.onset = 512;
        assert!(synth_burst(&p, &spec).is_err());
    }

    #[test]
    fn zero_crossing_spacing_matches_frequency() {
        // 1.875 MHz at 60 MHz -> 32 samples per period, sign changes every 16
        let spec = DatasetSpec::default();
        let p = BurstParams {
            frequency_hz: 1.875e6,
            amplitude: 1.0,
            burst_length: 320,
            onset: 0,
            peak_snr_db: NO_NOISE_SNR_DB,
            envelope: Envelope::Rectangular,
        };
        let s = synth_burst(&p, &spec).unwrap();
        let mut crossings = Vec::new();
        for t in 1..320 {
            if (s[t] > 0.0) != (s[t - 1] > 0.0) && s[t - 1] != 0.0 {
                crossings.push(t);
            }
        }
        for w in crossings.windows(2) {
            let spacing = w[1] - w[0];
            assert!((spacing as i64 - 16).abs() <= 1, "spacing {spacing}");
        }
    }

    #[test]
    fn no_noise_sentinel_is_identity() {
        let spec = DatasetSpec::default();
        let s = synth_burst(&test_params(), &spec).unwrap();
        let mut rng = record_rng(1, 0);
        assert_eq!(add_noise(&s, NO_NOISE_SNR_DB, &mut rng).unwrap(), s);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let spec = DatasetSpec::default();
        let s = synth_burst(&test_params(), &spec).unwrap();
        let a = add_noise(&s, 20.0, &mut record_rng(5, 3)).unwrap();
        let b = add_noise(&s, 20.0, &mut record_rng(5, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_zero_signal_has_undefined_snr() {
        let z = vec![0.0; 64];
        assert!(matches!(
            add_noise(&z, 20.0, &mut record_rng(0, 0)),
            Err(SignalError::UndefinedSnr)
        ));
    }

    #[test]
    fn noise_sigma_matches_requested_snr() {
        // sample-statistics oracle on a large draw
        let signal = vec![1.0; 1_000_000];
        let noisy = add_noise(&signal, 20.0, &mut record_rng(11, 0)).unwrap();
        let mean: f64 = noisy.iter().sum::<f64>() / noisy.len() as f64;
        let var: f64 = noisy.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (noisy.len() - 1) as f64;
        let est_snr = 20.0 * (1.0 / var.sqrt()).log10();
        assert!((est_snr - 20.0).abs() <= 0.1, "estimated snr {est_snr}");
    }

    #[test]
    fn quantizer_endpoints_and_midpoint() {
        let (q, stats) = quantize_8bit(&[-1.0, 1.0, 0.0]);
        assert_eq!(q, vec![0, 255, 128]);
        assert_eq!(stats.clipped, 0);
        let (_, stats) = quantize_8bit(&[1.5, -2.0]);
        assert_eq!(stats.clipped, 2);
    }

    #[test]
    fn quantize_round_trip_error_bound() {
        let mut rng = record_rng(17, 0);
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-1.2..1.2);
            let (q, _) = quantize_8bit(&[x]);
            let back = dequantize_8bit(&q)[0];
            assert!((back - x.clamp(-1.0, 1.0)).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn dataset_is_reproducible_and_in_range() {
        let spec = DatasetSpec {
            count: 200,
            seed: 42,
            ..DatasetSpec::default()
        };
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a.len(), 200);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.samples, rb.samples);
            assert_eq!(ra.label, rb.label);
        }
        for r in &a {
            assert!(r.label < 200);
            let p = r.params.as_ref().unwrap();
            assert_eq!(r.label as usize, p.onset);
            assert!(p.frequency_hz >= 1.0e6 && p.frequency_hz <= 4.0e6);
            assert!(p.amplitude >= 0.2 && p.amplitude <= 1.0);
            assert!((200..=400).contains(&p.burst_length));
            assert!(p.peak_snr_db >= 18.0 && p.peak_snr_db <= 38.0);
        }
    }

    #[test]
    fn noiseless_records_have_quiet_pre_onset_region() {
        let spec = DatasetSpec {
            count: 50,
            seed: 3,
            no_noise: true,
            ..DatasetSpec::default()
        };
        for r in generate_dataset(&spec).unwrap() {
            let zero_level = quantize_8bit(&[0.0]).0[0];
            for &s in &r.samples[..r.params.as_ref().unwrap().onset] {
                assert!((s as i16 - zero_level as i16).abs() <= 1);
            }
        }
    }

    #[test]
    fn empirical_peak_snr_matches_request() {
        // estimate sigma from the pre-onset noise-only region
        let spec = DatasetSpec {
            count: 400,
            seed: 9,
            snr_min_db: 25.0,
            snr_max_db: 25.0,
            ..DatasetSpec::default()
        };
        let mut checked = 0;
        for i in 0..spec.count as u64 {
            let mut rng = record_rng(spec.seed, i);
            let params = super::draw_params(&spec, &mut rng);
            if params.onset < 64 {
                continue;
            }
            let clean = synth_burst(&params, &spec).unwrap();
            let noisy = add_noise(&clean, params.peak_snr_db, &mut rng).unwrap();
            let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let head = &noisy[..params.onset];
            let mean: f64 = head.iter().sum::<f64>() / head.len() as f64;
            let var: f64 =
                head.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (head.len() - 1) as f64;
            let est = 20.0 * (peak / var.sqrt()).log10();
            assert!((est - 25.0).abs() <= 3.0, "record {i}: est {est}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn entropy_trivial_cases() {
        let uniform: Vec<u8> = (0..=255).collect();
        assert!((shannon_entropy([uniform.as_slice()]).unwrap() - 8.0).abs() < 1e-12);
        let constant = vec![7u8; 100];
        assert_eq!(shannon_entropy([constant.as_slice()]).unwrap(), 0.0);
        assert!(shannon_entropy(std::iter::empty::<&[u8]>()).is_err());
    }
}
