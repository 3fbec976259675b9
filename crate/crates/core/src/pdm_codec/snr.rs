use crate::error::{arg_err, Result};
use crate::signal_io::PcmSignal;

/// Reported when the residual vanishes.
pub const SNR_SENTINEL_DB: f64 = 400.0;

const MAX_LAG: usize = 64;

/// Signal-to-residual ratio in dB between a reference and a decoded signal.
///
/// `trim` samples are dropped at both ends to skip filter transients. The
/// decoded signal is first aligned to the best integer lag (within
/// `min(trim, 64)`), then fitted by least squares to the reference and its
/// central difference, which absorbs a scalar gain and a sub-sample delay.
/// Whatever the fit cannot explain is counted as noise.
pub fn measure_snr(reference: &PcmSignal, decoded: &PcmSignal, trim: usize) -> Result<f64> {
    if reference.len() != decoded.len() {
        return arg_err(format!(
            "length mismatch: reference {} vs decoded {}",
            reference.len(),
            decoded.len()
        ));
    }
    if reference.sample_rate_hz != decoded.sample_rate_hz {
        return arg_err("sample rate mismatch");
    }
    let n = reference.len();
    let trim = trim.max(1);
    if n <= 2 * trim + 2 {
        return arg_err(format!("{n} samples leave nothing after trimming {trim}"));
    }
    let r = &reference.samples;
    let d = &decoded.samples;
    let region = trim..n - trim;
    let ref_power: f64 = r[region.clone()].iter().map(|v| v * v).sum();
    if ref_power <= 0.0 {
        return arg_err("reference has zero power in the measured region");
    }

    if r[region.clone()] == d[region.clone()] {
        return Ok(SNR_SENTINEL_DB);
    }

    let max_lag = trim.min(MAX_LAG) as isize - 1;
    let at = |t: usize, lag: isize| d[(t as isize + lag) as usize];
    let lag = (-max_lag..=max_lag)
        .map(|lag| {
            let corr: f64 = region.clone().map(|t| r[t] * at(t, lag)).sum();
            (lag, corr)
        })
        .fold((0isize, f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
        .0;

    // normal equations for decoded ≈ a·r + b·r'
    let deriv = |t: usize| 0.5 * (r[t + 1] - r[t - 1]);
    let (mut srr, mut srd, mut sdd, mut sry, mut sdy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in region.clone() {
        let (u, v, y) = (r[t], deriv(t), at(t, lag));
        srr += u * u;
        srd += u * v;
        sdd += v * v;
        sry += u * y;
        sdy += v * y;
    }
    let det = srr * sdd - srd * srd;
    let (a, b) = if det.abs() > 1e-12 * srr * sdd.max(f64::MIN_POSITIVE) {
        ((sry * sdd - sdy * srd) / det, (sdy * srr - sry * srd) / det)
    } else {
        (sry / srr, 0.0)
    };

    let (mut sig, mut res) = (0.0, 0.0);
    for t in region {
        let fit = a * r[t] + b * deriv(t);
        let e = at(t, lag) - fit;
        sig += fit * fit;
        res += e * e;
    }
    if res <= sig * 1e-30 {
        return Ok(SNR_SENTINEL_DB);
    }
    Ok(10.0 * (sig / res).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize, f: f64, rate: u32, amp: f64, phase: f64) -> PcmSignal {
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / rate as f64 + phase).sin())
            .collect();
        PcmSignal::new(samples, rate).unwrap()
    }

    #[test]
    fn identical_signals_hit_sentinel() {
        let s = sine(4000, 1000.0, 16000, 0.9, 0.0);
        assert!(measure_snr(&s, &s, 32).unwrap() >= 300.0);
    }

    #[test]
    fn constructed_noise_at_minus_40_db() {
        let s = sine(16000, 1000.0, 16000, 0.5, 0.3);
        // deterministic white noise with power 1e-4 of the signal power
        let sig_power = 0.125;
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut noise: Vec<f64> = (0..16000)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let p: f64 = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        let k = (sig_power * 1e-4 / p).sqrt();
        noise.iter_mut().for_each(|v| *v *= k);
        let noisy = PcmSignal::new(
            s.samples.iter().zip(&noise).map(|(a, b)| a + b).collect(),
            16000,
        )
        .unwrap();
        let snr = measure_snr(&s, &noisy, 32).unwrap();
        assert!((snr - 40.0).abs() < 0.5, "snr {snr}");
    }

    #[test]
    fn gain_and_delay_are_absorbed() {
        let r = sine(8000, 700.0, 16000, 0.5, 0.0);
        let d = sine(8000, 700.0, 16000, 0.4, -0.05);
        assert!(measure_snr(&r, &d, 32).unwrap() > 100.0);
        let shifted = PcmSignal::new(
            (0..8000)
                .map(|i| if i >= 3 { r.samples[i - 3] } else { 0.0 })
                .collect(),
            16000,
        )
        .unwrap();
        assert!(measure_snr(&r, &shifted, 32).unwrap() > 100.0);
    }

    #[test]
    fn argument_errors() {
        let s = sine(100, 1000.0, 16000, 0.5, 0.0);
        let zero = PcmSignal::new(vec![0.0; 100], 16000).unwrap();
        assert!(measure_snr(&zero, &s, 8).is_err());
        let short = sine(50, 1000.0, 16000, 0.5, 0.0);
        assert!(measure_snr(&s, &short, 8).is_err());
        let other_rate = sine(100, 1000.0, 8000, 0.5, 0.0);
        assert!(measure_snr(&s, &other_rate, 8).is_err());
    }
}
