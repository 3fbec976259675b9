//! ParaLIF, recurrent ParaLIF and leaky-integrator neurons.
//!
//! The membrane follows `V[t] = beta·V[t-1] + (1-beta)·I[t]` from `V[-1] = 0`
//! with no reset, which is a first-order linear recurrence and therefore
//! evaluable by a prefix scan over time. Spikes are a pointwise function of
//! `V`.

use rayon::prelude::*;

use super::{Grid, MembraneTrace, NeuronParams, SpikeFn, SpikeTensor};
use crate::error::{Error, Result};

/// Time steps per scan block. Block boundaries are fixed, so results do not
/// depend on the number of worker threads.
pub const SCAN_CHUNK: usize = 1024;

/// Plain left-to-right evaluation of the membrane recurrence.
pub fn leaky_integrate_sequential(current: &Grid, beta: f64) -> Grid {
    let c = current.channels;
    let mut v = Grid::zeros(current.steps, c);
    let gain = 1.0 - beta;
    let mut state = vec![0.0; c];
    for t in 0..current.steps {
        for ((s, &i), out) in state.iter_mut().zip(current.row(t)).zip(v.row_mut(t)) {
            *s = beta * *s + gain * i;
            *out = *s;
        }
    }
    v
}

/// Three-phase blocked scan: every block integrates from rest in parallel,
/// block end states are chained in order, then each block adds
/// `beta^(t - start + 1) · carry_in`.
pub fn leaky_integrate(current: &Grid, beta: f64) -> Grid {
    let c = current.channels;
    if current.steps <= SCAN_CHUNK || c == 0 {
        return leaky_integrate_sequential(current, beta);
    }
    let gain = 1.0 - beta;
    let mut v = Grid::zeros(current.steps, c);
    let block = SCAN_CHUNK * c;

    v.data
        .par_chunks_mut(block)
        .zip(current.data.par_chunks(block))
        .for_each(|(out, inp)| {
            let mut state = vec![0.0; c];
            for (o_row, i_row) in out.chunks_mut(c).zip(inp.chunks(c)) {
                for ((s, &i), o) in state.iter_mut().zip(i_row).zip(o_row) {
                    *s = beta * *s + gain * i;
                    *o = *s;
                }
            }
        });

    let n_blocks = current.steps.div_ceil(SCAN_CHUNK);
    let mut carries = vec![vec![0.0; c]; n_blocks];
    for b in 1..n_blocks {
        let prev_len = SCAN_CHUNK;
        let decay = beta.powi(prev_len as i32);
        let end_row = &v.data[(b * SCAN_CHUNK - 1) * c..b * SCAN_CHUNK * c];
        let (done, rest) = carries.split_at_mut(b);
        for ((dst, &local_end), &prev) in rest[0].iter_mut().zip(end_row).zip(&done[b - 1]) {
            *dst = local_end + decay * prev;
        }
    }

    v.data
        .par_chunks_mut(block)
        .zip(carries.par_iter())
        .skip(1)
        .for_each(|(out, carry)| {
            let mut decay = beta;
            for row in out.chunks_mut(c) {
                for (o, &k) in row.iter_mut().zip(carry) {
                    *o += decay * k;
                }
                decay *= beta;
            }
        });
    v
}

/// Reverse of [`leaky_integrate`]: `A[t] = dV[t] + beta·A[t+1]`,
/// `dI[t] = (1-beta)·A[t]`.
pub fn leaky_integrate_backward(grad_v: &Grid, beta: f64) -> Grid {
    let c = grad_v.channels;
    let gain = 1.0 - beta;
    let mut gi = Grid::zeros(grad_v.steps, c);
    let mut acc = vec![0.0; c];
    for t in (0..grad_v.steps).rev() {
        for ((a, &g), out) in acc.iter_mut().zip(grad_v.row(t)).zip(gi.row_mut(t)) {
            *a = g + beta * *a;
            *out = gain * *a;
        }
    }
    gi
}

/// Derivative stand-in for the Heaviside step: `1 / (1 + k·|v - theta|)^2`.
#[inline]
pub fn surrogate_spike_grad(v: f64, params: &NeuronParams) -> f64 {
    let d = 1.0 + params.slope * (v - params.theta).abs();
    1.0 / (d * d)
}

fn spikes_of(v: &Grid, params: &NeuronParams) -> Grid {
    let theta = params.theta;
    let data = match params.spike_fn {
        SpikeFn::Heaviside => v.data.iter().map(|&x| (x >= theta) as u8 as f64).collect(),
        SpikeFn::Relaxed => v.data.iter().map(|&x| params.spike(x)).collect(),
    };
    Grid {
        steps: v.steps,
        channels: v.channels,
        data,
    }
}

/// Feed-forward ParaLIF: scan-evaluated membrane, then threshold.
pub fn paralif_forward(
    current: &Grid,
    params: &NeuronParams,
    step_rate_hz: f64,
) -> (SpikeTensor, MembraneTrace) {
    let v = leaky_integrate(current, params.beta);
    let s = spikes_of(&v, params);
    (
        SpikeTensor {
            values: s,
            step_rate_hz,
        },
        MembraneTrace { values: v },
    )
}

/// Gradient with respect to the input current, given the gradient on the
/// emitted spikes.
pub fn paralif_backward(
    membrane: &MembraneTrace,
    grad_spikes: &Grid,
    params: &NeuronParams,
) -> Grid {
    let grad_v = Grid {
        steps: grad_spikes.steps,
        channels: grad_spikes.channels,
        data: grad_spikes
            .data
            .iter()
            .zip(&membrane.values.data)
            .map(|(&g, &v)| g * surrogate_spike_grad(v, params))
            .collect(),
    };
    leaky_integrate_backward(&grad_v, params.beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentGrads {
    pub input: Grid,
    /// `c × c`, row = receiving channel.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_square(rec_weights: &[f64], rec_bias: &[f64], c: usize) -> Result<()> {
    if rec_weights.len() != c * c || rec_bias.len() != c {
        return Err(Error::Shape(format!(
            "recurrent weights must be {c}x{c} with {c} biases"
        )));
    }
    Ok(())
}

/// ParaLIF with channel recurrence through `ReLU(V[t-1])`. The feedback
/// breaks linearity, so time is walked sequentially.
pub fn paralif_recurrent_forward(
    current: &Grid,
    rec_weights: &[f64],
    rec_bias: &[f64],
    params: &NeuronParams,
    step_rate_hz: f64,
) -> Result<(SpikeTensor, MembraneTrace)> {
    let c = current.channels;
    check_square(rec_weights, rec_bias, c)?;
    let (beta, gain) = (params.beta, 1.0 - params.beta);
    let mut v = Grid::zeros(current.steps, c);
    let mut prev = vec![0.0f64; c];
    let mut relu = vec![0.0; c];
    for t in 0..current.steps {
        for (r, &p) in relu.iter_mut().zip(&prev) {
            *r = p.max(0.0);
        }
        let row = v.row_mut(t);
        for (o, out) in row.iter_mut().enumerate() {
            let w = &rec_weights[o * c..(o + 1) * c];
            let feedback: f64 = w.iter().zip(&relu).map(|(a, b)| a * b).sum();
            let drive = current.get(t, o) + feedback + rec_bias[o];
            *out = beta * prev[o] + gain * drive;
        }
        prev.copy_from_slice(row);
    }
    let s = spikes_of(&v, params);
    Ok((
        SpikeTensor {
            values: s,
            step_rate_hz,
        },
        MembraneTrace { values: v },
    ))
}

/// Backpropagation through time over the full sequence.
pub fn paralif_recurrent_backward(
    membrane: &MembraneTrace,
    rec_weights: &[f64],
    grad_spikes: &Grid,
    params: &NeuronParams,
) -> Result<RecurrentGrads> {
    let v = &membrane.values;
    let c = v.channels;
    if rec_weights.len() != c * c || grad_spikes.steps != v.steps || grad_spikes.channels != c {
        return Err(Error::Shape("recurrent backward shapes disagree".into()));
    }
    let (beta, gain) = (params.beta, 1.0 - params.beta);
    let mut g_in = Grid::zeros(v.steps, c);
    let mut g_w = vec![0.0; c * c];
    let mut g_b = vec![0.0; c];
    // dL/dV[t] arriving from step t+1
    let mut from_future = vec![0.0; c];
    let mut delta = vec![0.0; c];
    let mut back = vec![0.0; c];
    for t in (0..v.steps).rev() {
        let vt = v.row(t);
        for o in 0..c {
            delta[o] = grad_spikes.get(t, o) * surrogate_spike_grad(vt[o], params) + from_future[o];
        }
        let g_drive = g_in.row_mut(t);
        for (g, &d) in g_drive.iter_mut().zip(&delta) {
            *g = gain * d;
        }
        let g_drive = g_in.row(t);
        for (gb, &g) in g_b.iter_mut().zip(g_drive) {
            *gb += g;
        }
        if t > 0 {
            let vp = v.row(t - 1);
            for (o, &g) in g_drive.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (gw, &p) in g_w[o * c..(o + 1) * c].iter_mut().zip(vp) {
                    if p > 0.0 {
                        *gw += g * p;
                    }
                }
            }
            back.iter_mut().for_each(|b| *b = 0.0);
            for (o, &g) in g_drive.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (b, &w) in back.iter_mut().zip(&rec_weights[o * c..(o + 1) * c]) {
                    *b += w * g;
                }
            }
            for i in 0..c {
                let relu_grad = if vp[i] > 0.0 { back[i] } else { 0.0 };
                from_future[i] = beta * delta[i] + relu_grad;
            }
        }
    }
    Ok(RecurrentGrads {
        input: g_in,
        weights: g_w,
        bias: g_b,
    })
}

/// Non-spiking leaky integrator readout.
pub fn li_forward(current: &Grid, params: &NeuronParams) -> MembraneTrace {
    MembraneTrace {
        values: leaky_integrate(current, params.beta),
    }
}

pub fn li_backward(grad_v: &Grid, params: &NeuronParams) -> Grid {
    leaky_integrate_backward(grad_v, params.beta)
}
