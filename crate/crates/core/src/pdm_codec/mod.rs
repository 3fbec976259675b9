//! Pulse density modulation: first-order sigma-delta encoders (sequential,
//! integrate-and-fire and prefix-scan forms), a decimating decoder, an SNR
//! probe and the `PDM1` bitstream container.

mod container;
mod decode;
mod encode;
mod snr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::signal_io::{oversample, to_unipolar, Interpolation, PcmSignal};

pub use container::{decode_pdm, encode_pdm, read_pdm, write_pdm, PDM_MAGIC, PDM_VERSION};
pub use decode::{decimation_filter, default_taps, pdm2pcm};
pub use encode::{
    pcm2pdm_if, pcm2pdm_mod, pcm2pdm_par, pcm2pdm_par_chunked, pcm2pdm_seq, FIXED_FRAC_BITS,
};
pub use snr::{measure_snr, SNR_SENTINEL_DB};

/// A unipolar one-bit stream running at `base_rate_hz * alpha`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdmSignal {
    /// One element per PDM tick, each 0 or 1.
    pub bits: Vec<u8>,
    /// Rate of the PCM signal before oversampling.
    pub base_rate_hz: u32,
    /// Oversampling ratio.
    pub alpha: u16,
}

impl PdmSignal {
    pub fn new(bits: Vec<u8>, base_rate_hz: u32, alpha: u16) -> Result<Self> {
        if alpha == 0 {
            return arg_err("oversampling ratio must be at least 1");
        }
        if base_rate_hz == 0 {
            return arg_err("base rate must be positive");
        }
        if bits.iter().any(|&b| b > 1) {
            return arg_err("PDM bits must be 0 or 1");
        }
        Ok(Self {
            bits,
            base_rate_hz,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn effective_rate_hz(&self) -> u64 {
        self.base_rate_hz as u64 * self.alpha as u64
    }

    pub fn duration_s(&self) -> f64 {
        self.bits.len() as f64 / self.effective_rate_hz() as f64
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().map(|&b| b as u64).sum::<u64>() as f64 / self.bits.len() as f64
    }
}

/// Accumulated quantization error carried between calls, plus the firing
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulatorState {
    pub qe: f64,
    pub th: f64,
}

impl Default for ModulatorState {
    fn default() -> Self {
        Self { qe: 0.0, th: 1.0 }
    }
}

/// Which encoder turns the oversampled waveform into bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulator {
    /// Bipolar sigma-delta with +1/-1 output, mapped to 1/0.
    Seq,
    /// 0/1 sigma-delta, pulse when `qe + x > 0`.
    Mod,
    /// Integrate-and-fire with soft reset, pulse when `qe >= th`.
    If,
    /// Prefix-scan form of the integrate-and-fire encoder.
    #[default]
    Par,
}

impl std::str::FromStr for Modulator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq" => Ok(Modulator::Seq),
            "mod" => Ok(Modulator::Mod),
            "if" => Ok(Modulator::If),
            "par" => Ok(Modulator::Par),
            other => arg_err(format!("unknown modulator {other:?} (seq|mod|if|par)")),
        }
    }
}

impl std::fmt::Display for Modulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modulator::Seq => "seq",
            Modulator::Mod => "mod",
            Modulator::If => "if",
            Modulator::Par => "par",
        })
    }
}

/// Runs `algo` over a unipolar sequence already on the PDM grid. Every
/// encoder starts from `qe = 0`.
pub fn modulate(unipolar: &[f64], algo: Modulator) -> Result<Vec<u8>> {
    let state = ModulatorState::default();
    match algo {
        Modulator::Seq => {
            let bipolar: Vec<f64> = unipolar.iter().map(|&u| 2.0 * u - 1.0).collect();
            let (y, _) = pcm2pdm_seq(&bipolar, state)?;
            Ok(y.into_iter().map(|v| (v > 0) as u8).collect())
        }
        Modulator::Mod => Ok(pcm2pdm_mod(unipolar, state)?.0),
        Modulator::If => Ok(pcm2pdm_if(unipolar, state)?.0),
        Modulator::Par => pcm2pdm_par(unipolar, 1.0),
    }
}

/// Full PCM to PDM path: unipolar mapping, oversampling by `alpha`, then
/// modulation.
pub fn encode_pcm(
    pcm: &PcmSignal,
    alpha: u16,
    interpolation: Interpolation,
    algo: Modulator,
) -> Result<PdmSignal> {
    let up = oversample(&to_unipolar(pcm), alpha as u32, interpolation)?;
    let bits = modulate(&up.samples, algo)?;
    PdmSignal::new(bits, pcm.sample_rate_hz, alpha)
}
