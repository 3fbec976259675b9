use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Grid, SpikeTensor};
use crate::error::{arg_err, Error, Result};

/// Largest axonal delay, in steps of the layer's own rate.
pub const MAX_DELAY: u32 = 30;

/// Fixed per-channel axonal delays.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayVector {
    pub delays: Vec<u32>,
    pub seed: u64,
}

impl DelayVector {
    /// Uniform integer delays in `[0, MAX_DELAY]`.
    pub fn random(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            delays: (0..channels)
                .map(|_| rng.gen_range(0..=MAX_DELAY))
                .collect(),
            seed,
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            delays: vec![0; channels],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.delays.iter().find(|&&d| d > MAX_DELAY) {
            Some(d) => arg_err(format!("delay {d} exceeds {MAX_DELAY}")),
            None => Ok(()),
        }
    }
}

fn check(grid: &Grid, delays: &DelayVector) -> Result<()> {
    delays.validate()?;
    if delays.delays.len() != grid.channels {
        return Err(Error::Shape(format!(
            "{} delays for {} channels",
            delays.delays.len(),
            grid.channels
        )));
    }
    Ok(())
}

fn shift(grid: &Grid, delays: &[u32], forward: bool) -> Grid {
    let (steps, c) = (grid.steps, grid.channels);
    let mut out = Grid::zeros(steps, c);
    let offsets: Vec<usize> = delays.iter().map(|&d| d as usize * c).collect();
    let max = delays.iter().copied().max().unwrap_or(0) as usize;
    // rows whose every source lies inside the grid
    let full = if forward {
        max.min(steps)..steps
    } else {
        0..steps.saturating_sub(max)
    };
    for t in 0..steps {
        let dst = &mut out.data[t * c..(t + 1) * c];
        let base = t * c;
        if full.contains(&t) {
            for ((d, &off), ch) in dst.iter_mut().zip(&offsets).zip(0..) {
                let src = if forward {
                    base + ch - off
                } else {
                    base + ch + off
                };
                *d = grid.data[src];
            }
        } else {
            for ((d, &delay), ch) in dst.iter_mut().zip(delays).zip(0..) {
                let delay = delay as usize;
                let src = if forward {
                    t.checked_sub(delay)
                } else {
                    Some(t + delay)
                };
                if let Some(s) = src.filter(|&s| s < steps) {
                    *d = grid.data[s * c + ch];
                }
            }
        }
    }
    out
}

/// Channel `c` at step `t` takes the input from `t - d_c`; the first `d_c`
/// steps are silent and spikes pushed past the end are dropped.
pub fn apply_delay(spikes: &SpikeTensor, delays: &DelayVector) -> Result<SpikeTensor> {
    check(&spikes.values, delays)?;
    Ok(SpikeTensor {
        values: shift(&spikes.values, &delays.delays, true),
        step_rate_hz: spikes.step_rate_hz,
    })
}

/// Adjoint of [`apply_delay`]: shift gradients back by `d_c`.
pub fn delay_backward(grad_out: &Grid, delays: &DelayVector) -> Result<Grid> {
    check(grad_out, delays)?;
    Ok(shift(grad_out, &delays.delays, false))
}
