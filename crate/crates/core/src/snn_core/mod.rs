//! Spiking network building blocks with hand-written reverse-mode passes.
//!
//! All tensors are time-major `steps × channels` grids. Every forward
//! function has a matching `*_backward` that takes the values recorded by
//! the forward pass and an upstream gradient.

mod conv;
mod delay;
mod neuron;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

pub use conv::{conv1d_backward, conv1d_forward, conv_output_len, Conv1d, ConvGrads};
pub use delay::{apply_delay, delay_backward, DelayVector, MAX_DELAY};
pub use neuron::{
    leaky_integrate, leaky_integrate_backward, leaky_integrate_sequential, li_backward, li_forward,
    paralif_backward, paralif_forward, paralif_recurrent_backward, paralif_recurrent_forward,
    surrogate_spike_grad, RecurrentGrads, SCAN_CHUNK,
};

/// Dense `steps × channels` grid, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub steps: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(steps: usize, channels: usize) -> Self {
        Self {
            steps,
            channels,
            data: vec![0.0; steps * channels],
        }
    }

    pub fn from_vec(steps: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != steps * channels {
            return arg_err(format!(
                "{} values cannot fill a {steps}x{channels} grid",
                data.len()
            ));
        }
        Ok(Self {
            steps,
            channels,
            data,
        })
    }

    /// Single-channel grid from a sequence.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            steps: values.len(),
            channels: 1,
            data: values,
        }
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.channels..(t + 1) * self.channels]
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.channels + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Binary spike raster with the step rate of the layer that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor {
    pub values: Grid,
    pub step_rate_hz: f64,
}

impl SpikeTensor {
    pub fn count(&self) -> f64 {
        self.values.data.iter().sum()
    }
}

/// Membrane potentials over time.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneTrace {
    pub values: Grid,
}

/// How the membrane is turned into spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeFn {
    /// Heaviside forward, fast-sigmoid surrogate backward.
    #[default]
    Heaviside,
    /// Smooth forward `0.5 + u / (1 + k|u|)`, `u = v - theta`, whose exact
    /// derivative is the surrogate. Used as a differentiable reference.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Membrane decay per step, in (0, 1).
    pub beta: f64,
    /// Firing threshold.
    pub theta: f64,
    /// Surrogate sharpness `k`.
    pub slope: f64,
    #[serde(default)]
    pub spike_fn: SpikeFn,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            beta: 0.95,
            theta: 1.0,
            slope: 10.0,
            spike_fn: SpikeFn::Heaviside,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return arg_err(format!("beta {} outside (0, 1)", self.beta));
        }
        if !(self.theta > 0.0) {
            return arg_err(format!("theta {} must be positive", self.theta));
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return arg_err(format!("surrogate slope {} must be positive", self.slope));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn spike(&self, v: f64) -> f64 {
        match self.spike_fn {
            SpikeFn::Heaviside => (v >= self.theta) as u8 as f64,
            SpikeFn::Relaxed => {
                let u = v - self.theta;
                0.5 + u / (1.0 + self.slope * u.abs())
            }
        }
    }
}
