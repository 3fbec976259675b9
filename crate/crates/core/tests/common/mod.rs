#![allow(dead_code)]

use pdm_kws::kws_net::{HiddenBlock, Network, Recurrent};
use pdm_kws::snn_core::{Conv1d, DelayVector, Grid, NeuronParams, SpikeFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two hidden blocks (plain, then masked + recurrent), 8 channels, both
/// delayed, into a 3-class leaky-integrator readout. Relaxed spikes make
/// the forward pass differentiable.
pub fn relaxed_network(seed: u64) -> (Network, Grid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |v: &mut Vec<f64>, scale: f64| {
        v.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
    };
    let c = 8;
    let mut l1 = Conv1d::zeros(2, c, 3, 1, 1);
    fill(&mut l1.weights, 1.5);
    fill(&mut l1.bias, 0.5);
    let mut l2 = Conv1d::zeros(c, c, 3, 1, 2);
    fill(&mut l2.weights, 0.8);
    fill(&mut l2.bias, 0.5);
    let mask: Vec<u8> = (0..c * c).map(|n| ((n * 5 + n / c) % 2) as u8).collect();
    l2.mask = Some(mask);
    let mut rec = Recurrent::zeros(c);
    fill(&mut rec.weights, 0.6);
    fill(&mut rec.bias, 0.3);
    let mut readout = Conv1d::zeros(c, 3, 1, 1, 1);
    fill(&mut readout.weights, 0.5);
    fill(&mut readout.bias, 0.2);
    let delays = |shift: u32| DelayVector {
        delays: (0..c as u32).map(|i| (i * 3 + shift) % 6).collect(),
        seed: 0,
    };
    let net = Network {
        blocks: vec![
            HiddenBlock {
                conv: l1,
                recurrent: None,
                delays: delays(0),
            },
            HiddenBlock {
                conv: l2,
                recurrent: Some(rec),
                delays: delays(1),
            },
        ],
        readout,
        neuron: NeuronParams {
            beta: 0.8,
            theta: 1.0,
            slope: 10.0,
            spike_fn: SpikeFn::Relaxed,
        },
    };
    let mut x = Grid::zeros(32, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for v in &mut x.data {
        *v = rng.gen_range(0.0..2.0);
    }
    (net, x)
}

fn loss(net: &Network, x: &Grid, w: &[f64]) -> f64 {
    let out = net.forward(x, 1.0, None).unwrap();
    out.logits.iter().zip(w).map(|(a, b)| a * b).sum()
}

pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
    pub masked_nonzero: usize,
}

/// Compare every analytic parameter gradient with a central difference.
/// Errors are relative to `max(|analytic|, |numeric|, 1e-3)`.
pub fn gradcheck(net: &Network, x: &Grid) -> GradCheck {
    let w = [0.7, -1.3, 0.4];
    let mut tape = Default::default();
    net.forward(x, 1.0, Some(&mut tape)).unwrap();
    let grads = net.backward(&tape, &w).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let masked: Vec<(usize, usize)> = {
        let conv = &net.blocks[1].conv;
        let mask = conv.mask.as_ref().unwrap();
        let block_index = 2; // l1 weight, l1 bias, then l2 weight
        (0..conv.weights.len())
            .filter(|i| mask[i / conv.kernel] == 0)
            .map(|i| (block_index, i))
            .collect()
    };
    let masked_nonzero = masked
        .iter()
        .filter(|&&(b, i)| analytic[b][i] != 0.0)
        .count();

    let h = 1e-6;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (b, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            if masked.contains(&(b, i)) {
                continue;
            }
            let orig = probe.param_slices()[b][i];
            probe.param_slices_mut()[b][i] = orig + h;
            let up = loss(&probe, x, &w);
            probe.param_slices_mut()[b][i] = orig - h;
            let down = loss(&probe, x, &w);
            probe.param_slices_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((grad[i] - numeric).abs() / denom);
            checked += 1;
        }
    }
    GradCheck {
        checked,
        worst_rel: worst,
        masked_nonzero,
    }
}
