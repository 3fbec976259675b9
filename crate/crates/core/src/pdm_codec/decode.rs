use std::f64::consts::PI;

use super::PdmSignal;
use crate::error::{arg_err, format_err, Result};
use crate::signal_io::PcmSignal;

/// 16 taps per oversampling step, plus one to keep the filter odd-length.
pub fn default_taps(alpha: u16) -> usize {
    16 * alpha as usize + 1
}

/// Hamming-windowed sinc lowpass with cutoff `0.45 / alpha` cycles per PDM
/// sample, normalized to unit DC gain.
pub fn decimation_filter(alpha: u16, taps: usize) -> Vec<f64> {
    let fc = 0.45 / alpha as f64;
    let mid = (taps as f64 - 1.0) / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let t = k as f64 - mid;
            let ideal = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let window = if taps > 1 {
                0.54 - 0.46 * (2.0 * PI * k as f64 / (taps as f64 - 1.0)).cos()
            } else {
                1.0
            };
            ideal * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|c| *c /= sum);
    h
}

/// Decimates a PDM stream back to PCM at its base rate: lowpass, keep every
/// `alpha`-th sample, map `[0, 1]` to `[-1, 1]` and clamp.
///
/// The filter is applied centered, so output sample `j` lines up with input
/// base sample `j`. The first and last `taps / (2 * alpha)` samples carry
/// the zero-padded edge transient.
pub fn pdm2pcm(p: &PdmSignal, taps: usize) -> Result<PcmSignal> {
    if p.alpha == 0 {
        return format_err("oversampling ratio of 0");
    }
    if taps < 3 || taps % 2 == 0 {
        return arg_err(format!("decimation taps must be odd and >= 3, got {taps}"));
    }
    let alpha = p.alpha as usize;
    let h = decimation_filter(p.alpha, taps);
    let half = taps / 2;
    let n = p.bits.len();
    let out_len = n / alpha;

    let samples = (0..out_len)
        .map(|j| {
            let center = j * alpha;
            // y[center] = sum_k h[k] * x[center + half - k]
            let k_lo = (center + half).saturating_sub(n - 1);
            let k_hi = (center + half).min(taps - 1);
            let mut acc = 0.0;
            for (k, &hk) in h.iter().enumerate().take(k_hi + 1).skip(k_lo) {
                acc += hk * p.bits[center + half - k] as f64;
            }
            (2.0 * acc - 1.0).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(PcmSignal {
        samples,
        sample_rate_hz: p.base_rate_hz,
    })
}
