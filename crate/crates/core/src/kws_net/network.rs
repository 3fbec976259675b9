use crate::error::{Error, Result};
use crate::snn_core::{
    apply_delay, conv1d_backward, conv1d_forward, delay_backward, li_backward, li_forward,
    paralif_backward, paralif_forward, paralif_recurrent_backward, paralif_recurrent_forward,
    Conv1d, ConvGrads, DelayVector, Grid, MembraneTrace, NeuronParams, SpikeTensor,
};

/// Channel recurrence `W·ReLU(V[t-1]) + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recurrent {
    /// `c × c`, row = receiving channel.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Recurrent {
    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; channels * channels],
            bias: vec![0.0; channels],
        }
    }
}

/// Convolution, ParaLIF (optionally recurrent), then axonal delay.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    pub conv: Conv1d,
    pub recurrent: Option<Recurrent>,
    pub delays: DelayVector,
}

/// A stack of hidden spiking blocks and a per-step dense readout into
/// leaky integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub blocks: Vec<HiddenBlock>,
    /// Kernel-1 convolution, i.e. a dense map applied at every step.
    pub readout: Conv1d,
    pub neuron: NeuronParams,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Readout membrane summed over time.
    pub logits: Vec<f64>,
    /// Spikes emitted by each hidden block, before the delay.
    pub spikes: Vec<SpikeTensor>,
}

#[derive(Debug, Clone)]
struct BlockRecord {
    input: Grid,
    membrane: MembraneTrace,
}

/// Values kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    blocks: Vec<BlockRecord>,
    readout_input: Option<Grid>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.readout_input.is_none()
    }

    pub fn clear(&mut self) {
        self.blocks.clear();
        self.readout_input = None;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub conv: ConvGrads,
    pub recurrent: Option<Recurrent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<BlockGrads>,
    pub readout: ConvGrads,
}

impl Gradients {
    /// Parameter gradients in declaration order, matching
    /// [`Network::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.conv.weights.as_slice());
            out.push(b.conv.bias.as_slice());
            if let Some(r) = &b.recurrent {
                out.push(r.weights.as_slice());
                out.push(r.bias.as_slice());
            }
        }
        out.push(self.readout.weights.as_slice());
        out.push(self.readout.bias.as_slice());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weights);
            out.push(&mut b.conv.bias);
            if let Some(r) = &mut b.recurrent {
                out.push(&mut r.weights);
                out.push(&mut r.bias);
            }
        }
        out.push(&mut self.readout.weights);
        out.push(&mut self.readout.bias);
        out
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }
}

impl Network {
    /// Parameter buffers in declaration order: per block conv weights, conv
    /// bias, then recurrent weights and bias when present; readout last.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weights);
            out.push(&mut b.conv.bias);
            if let Some(r) = &mut b.recurrent {
                out.push(&mut r.weights);
                out.push(&mut r.bias);
            }
        }
        out.push(&mut self.readout.weights);
        out.push(&mut self.readout.bias);
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.weights);
            out.push(&b.conv.bias);
            if let Some(r) = &b.recurrent {
                out.push(&r.weights);
                out.push(&r.bias);
            }
        }
        out.push(&self.readout.weights);
        out.push(&self.readout.bias);
        out
    }

    /// Names for [`Network::param_slices`], e.g. `l3.rec.weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let l = i + 1;
            out.push(format!("l{l}.conv.weight"));
            out.push(format!("l{l}.conv.bias"));
            if b.recurrent.is_some() {
                out.push(format!("l{l}.rec.weight"));
                out.push(format!("l{l}.rec.bias"));
            }
        }
        out.push("readout.weight".into());
        out.push("readout.bias".into());
        out
    }

    /// Trainable scalars; masked connections are not counted.
    pub fn trainable_params(&self) -> usize {
        let mut n = 0;
        for b in &self.blocks {
            n += b.conv.trainable_weights() + b.conv.bias.len();
            if let Some(r) = &b.recurrent {
                n += r.weights.len() + r.bias.len();
            }
        }
        n + self.readout.weights.len() + self.readout.bias.len()
    }

    pub fn classes(&self) -> usize {
        self.readout.c_out
    }

    /// Run the network on a `steps × c_in` input sampled at
    /// `input_rate_hz`. With a tape, the values needed by
    /// [`Network::backward`] are recorded into it.
    pub fn forward(
        &self,
        input: &Grid,
        input_rate_hz: f64,
        mut tape: Option<&mut Tape>,
    ) -> Result<ForwardOutput> {
        if let Some(t) = tape.as_deref_mut() {
            t.clear();
        }
        let p = &self.neuron;
        let mut x = input.clone();
        let mut rate = input_rate_hz;
        let mut spikes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let current = conv1d_forward(&x, &block.conv)?;
            rate /= block.conv.stride as f64;
            let (s, v) = match &block.recurrent {
                None => paralif_forward(&current, p, rate),
                Some(r) => paralif_recurrent_forward(&current, &r.weights, &r.bias, p, rate)?,
            };
            let delayed = apply_delay(&s, &block.delays)?;
            if let Some(t) = tape.as_deref_mut() {
                t.blocks.push(BlockRecord {
                    input: std::mem::replace(&mut x, delayed.values),
                    membrane: v,
                });
            } else {
                x = delayed.values;
            }
            spikes.push(s);
        }
        let current = conv1d_forward(&x, &self.readout)?;
        let v = li_forward(&current, p);
        let mut logits = vec![0.0; self.readout.c_out];
        for t in 0..v.values.steps {
            for (l, &m) in logits.iter_mut().zip(v.values.row(t)) {
                *l += m;
            }
        }
        if let Some(t) = tape {
            t.readout_input = Some(x);
        }
        Ok(ForwardOutput { logits, spikes })
    }

    /// Gradients of a scalar loss whose derivative with respect to the
    /// logits is `grad_logits`, using the values recorded on `tape`.
    pub fn backward(&self, tape: &Tape, grad_logits: &[f64]) -> Result<Gradients> {
        let Some(readout_input) = &tape.readout_input else {
            return Err(Error::State(
                "backward called before a recorded forward".into(),
            ));
        };
        if tape.blocks.len() != self.blocks.len() {
            return Err(Error::State(
                "tape was recorded by a different network".into(),
            ));
        }
        if grad_logits.len() != self.readout.c_out {
            return Err(Error::Shape(format!(
                "{} logit gradients for {} classes",
                grad_logits.len(),
                self.readout.c_out
            )));
        }
        let p = &self.neuron;
        let steps = conv_steps(readout_input, &self.readout)?;
        let mut g_v = Grid::zeros(steps, self.readout.c_out);
        for t in 0..steps {
            g_v.row_mut(t).copy_from_slice(grad_logits);
        }
        let g_current = li_backward(&g_v, p);
        let (readout, g_x) = conv1d_backward(readout_input, &self.readout, &g_current, true)?;
        let mut g_x = g_x.expect("input gradient requested");

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, (block, rec)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            let g_s = delay_backward(&g_x, &block.delays)?;
            let (g_current, recurrent) = match &block.recurrent {
                None => (paralif_backward(&rec.membrane, &g_s, p), None),
                Some(r) => {
                    let g = paralif_recurrent_backward(&rec.membrane, &r.weights, &g_s, p)?;
                    (
                        g.input,
                        Some(Recurrent {
                            weights: g.weights,
                            bias: g.bias,
                        }),
                    )
                }
            };
            let (conv, gx) = conv1d_backward(&rec.input, &block.conv, &g_current, i > 0)?;
            blocks.push(BlockGrads { conv, recurrent });
            if let Some(gx) = gx {
                g_x = gx;
            }
        }
        blocks.reverse();
        Ok(Gradients { blocks, readout })
    }

    /// Zero gradients shaped like this network.
    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockGrads {
                    conv: ConvGrads {
                        weights: vec![0.0; b.conv.weights.len()],
                        bias: vec![0.0; b.conv.bias.len()],
                    },
                    recurrent: b.recurrent.as_ref().map(|r| Recurrent::zeros(r.bias.len())),
                })
                .collect(),
            readout: ConvGrads {
                weights: vec![0.0; self.readout.weights.len()],
                bias: vec![0.0; self.readout.bias.len()],
            },
        }
    }
}

fn conv_steps(input: &Grid, conv: &Conv1d) -> Result<usize> {
    crate::snn_core::conv_output_len(input.steps, conv.kernel, conv.stride, conv.dilation)
        .ok_or_else(|| Error::Shape("recorded readout input too short".into()))
}
