//! The five-layer keyword-spotting network: four convolutional spiking
//! layers with optional recurrence and axonal delays, then a dense leaky
//! integrator readout whose membrane summed over time gives the logits.

mod checkpoint;
mod network;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::pdm_codec::PdmSignal;
use crate::snn_core::{conv_output_len, Conv1d, DelayVector, Grid, NeuronParams};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_SCHEMA,
};
pub use network::{BlockGrads, ForwardOutput, Gradients, HiddenBlock, Network, Recurrent, Tape};

/// Base audio rate every oversampling ratio multiplies.
pub const BASE_RATE_HZ: u32 = 16_000;

/// Hidden layers in the keyword-spotting topology.
pub const HIDDEN_LAYERS: usize = 4;

/// Sparsity percentages and the fan-in divisor each corresponds to.
pub const SPARSITY_LEVELS: [(u32, usize); 5] = [(0, 1), (50, 2), (75, 4), (88, 8), (94, 16)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Seeds {
    pub weights: u64,
    pub delays: u64,
    pub masks: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            weights: seed,
            delays: seed.wrapping_add(1),
            masks: seed.wrapping_add(2),
        }
    }
}

/// How PDM bits are presented to the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputPolarity {
    /// Bits as 0/1.
    #[default]
    Unipolar,
    /// Bits as -1/+1.
    Bipolar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub alpha: u32,
    pub hidden_channels: usize,
    pub classes: usize,
    pub recurrence: bool,
    pub delays: bool,
    /// Unmasked inputs per output channel in layers 2-4.
    pub fan_in: usize,
    pub seeds: Seeds,
    pub neuron: NeuronParams,
    #[serde(default)]
    pub input: InputPolarity,
    /// Multiplier on the initialization bound of the hidden convolutions.
    #[serde(default = "unit_gain")]
    pub init_gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            alpha: 64,
            hidden_channels: 128,
            classes: 35,
            recurrence: true,
            delays: true,
            fan_in: 128,
            seeds: Seeds::default(),
            neuron: NeuronParams::default(),
            input: InputPolarity::Unipolar,
            init_gain: 1.0,
        }
    }
}

impl NetworkSpec {
    pub fn layer1_kernel(&self) -> usize {
        3 * self.alpha as usize
    }

    pub fn layer1_stride(&self) -> usize {
        (3 * self.alpha as usize / 2).max(1)
    }

    pub fn input_rate_hz(&self) -> f64 {
        BASE_RATE_HZ as f64 * self.alpha as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 || self.alpha > u16::MAX as u32 {
            return arg_err(format!("oversampling ratio {} out of range", self.alpha));
        }
        if self.hidden_channels == 0 {
            return arg_err("hidden_channels must be positive");
        }
        if self.classes < 2 {
            return arg_err("need at least two classes");
        }
        if !(self.init_gain.is_finite() && self.init_gain > 0.0) {
            return arg_err("init_gain must be positive and finite");
        }
        sparsity_of(self.fan_in, self.hidden_channels)?;
        self.neuron.validate()
    }

    /// Output lengths of the four hidden layers for an input of `bits`
    /// samples, or `None` when the input is too short.
    pub fn layer_lengths(&self, bits: usize) -> Option<[usize; HIDDEN_LAYERS]> {
        let l1 = conv_output_len(bits, self.layer1_kernel(), self.layer1_stride(), 1)?;
        let l2 = conv_output_len(l1, 3, 3, 2)?;
        let l3 = conv_output_len(l2, 3, 3, 2)?;
        let l4 = conv_output_len(l3, 3, 3, 2)?;
        Some([l1, l2, l3, l4])
    }
}

/// Fan-in of layers 2-4 for a sparsity percentage in
/// [`SPARSITY_LEVELS`].
pub fn fan_in_for_sparsity(percent: u32, channels: usize) -> Result<usize> {
    let Some(&(_, div)) = SPARSITY_LEVELS.iter().find(|(p, _)| *p == percent) else {
        return arg_err(format!("sparsity {percent}% not one of 0, 50, 75, 88, 94"));
    };
    if channels % div != 0 {
        return arg_err(format!(
            "{channels} channels cannot be thinned to {percent}% sparsity"
        ));
    }
    Ok(channels / div)
}

/// Inverse of [`fan_in_for_sparsity`].
pub fn sparsity_of(fan_in: usize, channels: usize) -> Result<u32> {
    SPARSITY_LEVELS
        .iter()
        .find(|(_, d)| channels % d == 0 && channels / d == fan_in)
        .map(|&(p, _)| p)
        .ok_or_else(|| {
            Error::Argument(format!(
                "fan-in {fan_in} is not a supported sparsity level for {channels} channels"
            ))
        })
}

/// Exact trainable-scalar count of the network `spec` describes.
pub fn count_params(spec: &NetworkSpec) -> u64 {
    let c = spec.hidden_channels as u64;
    let alpha = spec.alpha as u64;
    let fan_in = spec.fan_in as u64;
    let classes = spec.classes as u64;
    let l1 = c * 3 * alpha + c;
    let hidden = 3 * (c * fan_in * 3 + c);
    let rec = if spec.recurrence { 2 * (c * c + c) } else { 0 };
    let readout = c * classes + classes;
    l1 + hidden + rec + readout
}

/// One `channels × channels` mask per layer 2-4; every output row keeps a
/// uniformly drawn subset of `fan_in` inputs.
pub fn make_masks(channels: usize, fan_in: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
    if fan_in == 0 || fan_in > channels {
        return arg_err(format!("fan-in {fan_in} outside 1..={channels}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..HIDDEN_LAYERS - 1)
        .map(|_| {
            if fan_in == channels {
                return vec![1; channels * channels];
            }
            let mut m = vec![0u8; channels * channels];
            for row in m.chunks_mut(channels) {
                for i in sample(&mut rng, channels, fan_in) {
                    row[i] = 1;
                }
            }
            m
        })
        .collect())
}

/// The network plus the spec that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub net: Network,
}

fn init_uniform(rng: &mut ChaCha8Rng, values: &mut [f64], bound: f64) {
    for v in values {
        *v = rng.gen_range(-bound..=bound);
    }
}

fn init_conv(rng: &mut ChaCha8Rng, conv: &mut Conv1d, scale: f64) {
    let active = match &conv.mask {
        Some(m) => m.iter().filter(|&&b| b != 0).count() / conv.c_out,
        None => conv.c_in,
    };
    let bound = (1.0 / (active * conv.kernel) as f64).sqrt() * scale;
    init_uniform(rng, &mut conv.weights, bound);
    if let Some(m) = &conv.mask {
        for (w, &on) in conv.weights.chunks_mut(conv.kernel).zip(m.iter()) {
            if on == 0 {
                w.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    init_uniform(rng, &mut conv.bias, bound);
}

/// Construct the network with seeded weights, masks and delays.
///
/// Weights and biases are uniform in `±sqrt(1/fan_in)`, scaled by
/// `init_gain` in the hidden layers. The readout bound
/// is further divided by the number of readout steps a one-second input
/// produces, since the logits sum the readout membrane over time.
pub fn build(spec: &NetworkSpec) -> Result<NetworkState> {
    spec.validate()?;
    let c = spec.hidden_channels;
    let masks = make_masks(c, spec.fan_in, spec.seeds.masks)?;
    let mut w_rng = ChaCha8Rng::seed_from_u64(spec.seeds.weights);
    let mut d_rng = ChaCha8Rng::seed_from_u64(spec.seeds.delays);

    let mut blocks = Vec::with_capacity(HIDDEN_LAYERS);
    for layer in 0..HIDDEN_LAYERS {
        let mut conv = if layer == 0 {
            Conv1d::zeros(1, c, spec.layer1_kernel(), spec.layer1_stride(), 1)
        } else {
            let mut conv = Conv1d::zeros(c, c, 3, 3, 2);
            if spec.fan_in < c {
                conv.mask = Some(masks[layer - 1].clone());
            }
            conv
        };
        init_conv(&mut w_rng, &mut conv, spec.init_gain);
        let recurrent = (spec.recurrence && layer >= 2).then(|| {
            let mut r = Recurrent::zeros(c);
            let bound = (1.0 / c as f64).sqrt();
            init_uniform(&mut w_rng, &mut r.weights, bound);
            init_uniform(&mut w_rng, &mut r.bias, bound);
            r
        });
        let delay_seed: u64 = d_rng.gen();
        let delays = if spec.delays {
            DelayVector::random(c, delay_seed)
        } else {
            DelayVector::zeros(c)
        };
        blocks.push(HiddenBlock {
            conv,
            recurrent,
            delays,
        });
    }

    let readout_steps = spec
        .layer_lengths(BASE_RATE_HZ as usize * spec.alpha as usize)
        .map_or(1, |l| l[HIDDEN_LAYERS - 1]);
    let mut readout = Conv1d::zeros(c, spec.classes, 1, 1, 1);
    init_conv(&mut w_rng, &mut readout, 1.0 / readout_steps as f64);

    let net = Network {
        blocks,
        readout,
        neuron: spec.neuron,
    };
    debug_assert_eq!(net.trainable_params() as u64, count_params(spec));
    Ok(NetworkState { spec: *spec, net })
}

impl NetworkState {
    /// Input grid for a PDM stream; rejects a mismatched ratio.
    pub fn input_grid(&self, pdm: &PdmSignal) -> Result<Grid> {
        if pdm.alpha as u32 != self.spec.alpha {
            return arg_err(format!(
                "stream oversampled {}x, network expects {}x",
                pdm.alpha, self.spec.alpha
            ));
        }
        let data = match self.spec.input {
            InputPolarity::Unipolar => pdm.bits.iter().map(|&b| b as f64).collect(),
            InputPolarity::Bipolar => pdm.bits.iter().map(|&b| 2.0 * b as f64 - 1.0).collect(),
        };
        Ok(Grid::column(data))
    }

    /// Logits and per-layer spike rasters for one stream.
    pub fn forward(&self, pdm: &PdmSignal) -> Result<ForwardOutput> {
        let x = self.input_grid(pdm)?;
        self.net.forward(&x, pdm.effective_rate_hz() as f64, None)
    }

    pub fn forward_recorded(&self, pdm: &PdmSignal, tape: &mut Tape) -> Result<ForwardOutput> {
        let x = self.input_grid(pdm)?;
        self.net
            .forward(&x, pdm.effective_rate_hz() as f64, Some(tape))
    }

    pub fn predict(&self, pdm: &PdmSignal) -> Result<usize> {
        Ok(argmax(&self.forward(pdm)?.logits))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(alpha: u32, fan_in: usize, rec: bool) -> NetworkSpec {
        NetworkSpec {
            alpha,
            fan_in,
            recurrence: rec,
            ..Default::default()
        }
    }

    #[test]
    fn layer1_geometry() {
        assert_eq!(
            (
                spec(1, 128, true).layer1_kernel(),
                spec(1, 128, true).layer1_stride()
            ),
            (3, 1)
        );
        assert_eq!(spec(10, 128, true).layer1_stride(), 15);
        assert_eq!(spec(64, 128, true).layer1_stride(), 96);
    }

    #[test]
    fn parameter_arithmetic() {
        assert_eq!(
            count_params(&spec(1, 128, true)),
            512 + 147_840 + 33_024 + 4_515
        );
        assert_eq!(count_params(&spec(64, 8, true)), 71_843);
        assert_eq!(
            count_params(&spec(10, 128, true)) - count_params(&spec(10, 128, false)),
            33_024
        );
    }

    #[test]
    fn stored_scalars_match_count() {
        for (alpha, fan_in, rec) in [(1, 128, true), (2, 64, false), (3, 8, true)] {
            let s = spec(alpha, fan_in, rec);
            let state = build(&s).unwrap();
            assert_eq!(state.net.trainable_params() as u64, count_params(&s));
        }
    }

    #[test]
    fn sparsity_table() {
        assert_eq!(fan_in_for_sparsity(94, 128).unwrap(), 8);
        assert_eq!(fan_in_for_sparsity(0, 16).unwrap(), 16);
        assert!(fan_in_for_sparsity(60, 128).is_err());
        assert!(build(&spec(1, 100, true)).is_err());
        assert_eq!(sparsity_of(32, 128).unwrap(), 75);
    }

    #[test]
    fn masks_have_exact_row_counts() {
        let m = make_masks(128, 64, 5).unwrap();
        assert_eq!(m.len(), 3);
        for layer in &m {
            for row in layer.chunks(128) {
                assert_eq!(row.iter().map(|&b| b as usize).sum::<usize>(), 64);
            }
        }
        assert!(make_masks(8, 8, 0)
            .unwrap()
            .iter()
            .flatten()
            .all(|&b| b == 1));
        assert_eq!(m, make_masks(128, 64, 5).unwrap());
    }

    #[test]
    fn one_second_lengths_at_64x() {
        assert_eq!(
            spec(64, 128, true).layer_lengths(1_024_000),
            Some([10_665, 3_554, 1_184, 394])
        );
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let s = NetworkSpec {
            hidden_channels: 16,
            classes: 4,
            fan_in: 4,
            alpha: 2,
            seeds: Seeds::all(9),
            ..Default::default()
        };
        assert_eq!(build(&s).unwrap(), build(&s).unwrap());
        let mut other = s;
        other.seeds.weights += 1;
        assert_ne!(build(&s).unwrap().net, build(&other).unwrap().net);
    }

    #[test]
    fn argmax_first_wins() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }
}
