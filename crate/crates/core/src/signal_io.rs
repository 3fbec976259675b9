//! PCM waveforms: 16-bit mono WAV I/O, unipolar normalization and integer
//! oversampling onto the PDM grid.
//!
//! Only RIFF/WAVE with format tag 1, one channel and 16 bits per sample is
//! accepted. Anything else is rejected instead of converted.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, format_err, Error, Result};

/// Bipolar sampled waveform, samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

/// Waveform normalized to `[0, 1]`, the domain the 0/1 modulators expect.
#[derive(Debug, Clone, PartialEq)]
pub struct UnipolarSignal {
    pub samples: Vec<f64>,
    pub rate_hz: u32,
}

impl PcmSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return arg_err("sample rate must be positive");
        }
        if let Some(s) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return arg_err(format!("PCM sample {s} outside [-1, 1]"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

impl UnipolarSignal {
    pub fn new(samples: Vec<f64>, rate_hz: u32) -> Result<Self> {
        if rate_hz == 0 {
            return arg_err("sample rate must be positive");
        }
        if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return arg_err(format!("unipolar sample {s} outside [0, 1]"));
        }
        Ok(Self { samples, rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

const FULL_SCALE: f64 = 32768.0;

/// Decodes a 16-bit mono PCM WAV image held in memory.
pub fn parse_wav(bytes: &[u8]) -> Result<PcmSignal> {
    if bytes.len() < 12 {
        return format_err("file shorter than a RIFF header");
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return format_err("missing RIFF/WAVE signature");
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format(format!("chunk {:?} truncated", lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return format_err("fmt chunk shorter than 16 bytes");
                }
                let tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
        if data.is_some() && fmt.is_some() {
            break;
        }
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| Error::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no data chunk".into()))?;
    if tag != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "format tag {tag}, only integer PCM (1) is accepted"
        )));
    }
    if channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels, only mono is accepted"
        )));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{bits} bits per sample, only 16 is accepted"
        )));
    }
    if rate == 0 {
        return format_err("sample rate of 0 in header");
    }
    if data.len() % 2 != 0 {
        return format_err("data chunk has an odd byte count");
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / FULL_SCALE)
        .collect();
    Ok(PcmSignal {
        samples,
        sample_rate_hz: rate,
    })
}

fn lossy(id: &[u8]) -> String {
    String::from_utf8_lossy(id).into_owned()
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<PcmSignal> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes)
}

/// Quantizes a sample in `[-1, 1]` to the nearest 16-bit code.
pub fn quantize_i16(s: f64) -> i16 {
    (s * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(signal: &PcmSignal) -> Vec<u8> {
    let data_len = signal.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&signal.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(signal.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &signal.samples {
        out.extend_from_slice(&quantize_i16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(signal: &PcmSignal, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_wav(signal))?;
    Ok(())
}

/// Maps `[-1, 1]` onto `[0, 1]` with `(x + 1) / 2`.
pub fn to_unipolar(signal: &PcmSignal) -> UnipolarSignal {
    UnipolarSignal {
        samples: signal.samples.iter().map(|&x| (x + 1.0) * 0.5).collect(),
        rate_hz: signal.sample_rate_hz,
    }
}

/// Inverse of [`to_unipolar`].
pub fn to_bipolar(signal: &UnipolarSignal) -> PcmSignal {
    PcmSignal {
        samples: signal.samples.iter().map(|&y| y * 2.0 - 1.0).collect(),
        sample_rate_hz: signal.rate_hz,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Zero-order hold: each base sample repeated `alpha` times.
    #[default]
    Hold,
    /// Band-limited Blackman-windowed sinc interpolation.
    Sinc,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hold" => Ok(Interpolation::Hold),
            "sinc" => Ok(Interpolation::Sinc),
            other => arg_err(format!("unknown interpolation {other:?} (hold|sinc)")),
        }
    }
}

/// Half-width of the interpolation kernel, in base-rate samples.
const SINC_HALF_WIDTH: isize = 32;

/// Resamples onto a grid `alpha` times denser. Output is clamped to `[0, 1]`.
pub fn oversample(
    signal: &UnipolarSignal,
    alpha: u32,
    method: Interpolation,
) -> Result<UnipolarSignal> {
    if alpha == 0 {
        return arg_err("oversampling ratio must be at least 1");
    }
    let rate_hz = signal
        .rate_hz
        .checked_mul(alpha)
        .ok_or_else(|| Error::Argument("oversampled rate overflows u32".into()))?;
    if alpha == 1 {
        return Ok(signal.clone());
    }
    let a = alpha as usize;
    let samples = match method {
        Interpolation::Hold => signal
            .samples
            .iter()
            .flat_map(|&s| std::iter::repeat_n(s, a))
            .collect(),
        Interpolation::Sinc => sinc_interpolate(&signal.samples, a),
    };
    Ok(UnipolarSignal { samples, rate_hz })
}

fn sinc_interpolate(x: &[f64], alpha: usize) -> Vec<f64> {
    let w = SINC_HALF_WIDTH;
    // phase p uses taps at base offsets j in (-w, w]
    let phases: Vec<Vec<f64>> = (0..alpha)
        .map(|p| {
            let frac = p as f64 / alpha as f64;
            let mut taps: Vec<f64> = (-w + 1..=w)
                .map(|j| {
                    let t = frac - j as f64;
                    sinc(t) * blackman(t, w as f64)
                })
                .collect();
            let sum: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|c| *c /= sum);
            taps
        })
        .collect();

    let n = x.len() as isize;
    let mut out = Vec::with_capacity(x.len() * alpha);
    for i in 0..n {
        for taps in &phases {
            let mut acc = 0.0;
            for (c, j) in taps.iter().zip(-w + 1..=w) {
                let idx = i + j;
                if (0..n).contains(&idx) {
                    acc += c * x[idx as usize];
                }
            }
            out.push(acc.clamp(0.0, 1.0));
        }
    }
    out
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

fn blackman(t: f64, half_width: f64) -> f64 {
    if t.abs() >= half_width {
        return 0.0;
    }
    let r = t / half_width;
    0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos()
}
