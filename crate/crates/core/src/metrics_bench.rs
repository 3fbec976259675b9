//! Efficiency metrics (input sampling rate, spike rate, relative spike
//! rate, parameter count) and the encoder throughput benchmark.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::kws_net::BASE_RATE_HZ;
use crate::pdm_codec::{pcm2pdm_if, pcm2pdm_mod, pcm2pdm_par, pcm2pdm_par_chunked};
use crate::snn_core::SpikeTensor;
use crate::ModulatorState;

/// Input samples per second seen by the first layer.
pub fn input_sampling_rate(alpha: u32) -> f64 {
    BASE_RATE_HZ as f64 * alpha as f64
}

/// Hidden-layer spikes per second of audio.
pub fn spike_rate(layers: &[SpikeTensor], duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return arg_err("audio duration must be positive");
    }
    Ok(layers.iter().map(SpikeTensor::count).sum::<f64>() / duration_s)
}

/// Spikes per input sample.
pub fn relative_spike_rate(sr: f64, isr: f64) -> Result<f64> {
    if !(isr > 0.0) {
        return arg_err("input sampling rate must be positive");
    }
    Ok(sr / isr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub alpha: u32,
    /// Samples per second.
    pub isr: f64,
    /// Hidden-layer spikes per second.
    pub spike_rate: f64,
    /// Spikes per input sample.
    pub rsr: f64,
    /// Mean fraction of hidden neurons active per input sample.
    pub active_fraction: f64,
    pub params: u64,
    /// Percentage, when the report comes from an evaluation.
    pub accuracy: Option<f64>,
    pub layer_spike_rates: Vec<f64>,
}

impl MetricsReport {
    pub fn new(
        alpha: u32,
        spike_rate: f64,
        hidden_neurons: usize,
        params: u64,
        accuracy: Option<f64>,
        layer_spike_rates: Vec<f64>,
    ) -> Result<Self> {
        let isr = input_sampling_rate(alpha);
        let rsr = relative_spike_rate(spike_rate, isr)?;
        Ok(Self {
            alpha,
            isr,
            spike_rate,
            rsr,
            active_fraction: if hidden_neurons == 0 {
                0.0
            } else {
                rsr / hidden_neurons as f64
            },
            params,
            accuracy,
            layer_spike_rates,
        })
    }

    /// `rsr · isr` reproduces `spike_rate` to within float rounding.
    pub fn is_consistent(&self) -> bool {
        let back = self.rsr * self.isr;
        (back - self.spike_rate).abs() <= 1e-12 * self.spike_rate.abs().max(1.0)
            && self.isr == input_sampling_rate(self.alpha)
    }
}

/// Running spike totals over an evaluation set.
#[derive(Debug, Clone, Default)]
pub struct SpikeAccumulator {
    layer_spikes: Vec<f64>,
    duration_s: f64,
}

impl SpikeAccumulator {
    pub fn add(&mut self, layers: &[SpikeTensor], duration_s: f64) {
        if self.layer_spikes.len() < layers.len() {
            self.layer_spikes.resize(layers.len(), 0.0);
        }
        for (acc, l) in self.layer_spikes.iter_mut().zip(layers) {
            *acc += l.count();
        }
        self.duration_s += duration_s;
    }

    pub fn merge(&mut self, other: &SpikeAccumulator) {
        if self.layer_spikes.len() < other.layer_spikes.len() {
            self.layer_spikes.resize(other.layer_spikes.len(), 0.0);
        }
        for (a, b) in self.layer_spikes.iter_mut().zip(&other.layer_spikes) {
            *a += b;
        }
        self.duration_s += other.duration_s;
    }

    /// Per-layer spikes per second of audio.
    pub fn layer_rates(&self) -> Vec<f64> {
        if self.duration_s <= 0.0 {
            return vec![0.0; self.layer_spikes.len()];
        }
        self.layer_spikes
            .iter()
            .map(|s| s / self.duration_s)
            .collect()
    }

    pub fn spike_rate(&self) -> f64 {
        self.layer_rates().iter().sum()
    }
}

/// One row of the parameter/rate table: `alpha,sparsity,params,isr,sr,rsr`.
pub fn table_csv(rows: &[(MetricsReport, u32)]) -> String {
    let mut out = String::from("alpha,sparsity,params,isr,sr,rsr\n");
    for (r, sparsity) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.alpha, sparsity, r.params, r.isr, r.spike_rate, r.rsr
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub workers: usize,
    pub median_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub length: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    fn median_of(&self, variant: &str, workers: Option<usize>) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && workers.is_none_or(|w| r.workers == w))
            .map(|r| r.median_s)
            .last()
    }

    /// Sequential modulator time over chunked-scan time at the largest
    /// worker count benchmarked.
    pub fn speedup(&self) -> Option<f64> {
        let max_w = self
            .rows
            .iter()
            .filter(|r| r.variant == "par_chunked")
            .map(|r| r.workers)
            .max()?;
        Some(self.median_of("seq_mod", None)? / self.median_of("par_chunked", Some(max_w))?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,workers,length,repeats,median_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9}",
                r.variant, r.workers, self.length, self.repeats, r.median_s
            );
        }
        out
    }
}

/// Chunk length used by the benchmarked chunked encoder.
pub const BENCH_CHUNK: usize = 65_536;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_it<T>(repeats: usize, mut f: impl FnMut() -> T) -> f64 {
    std::hint::black_box(f()); // warm-up
    median(
        (0..repeats)
            .map(|_| {
                let t0 = Instant::now();
                std::hint::black_box(f());
                t0.elapsed().as_secs_f64()
            })
            .collect(),
    )
}

/// Random unipolar input for the benchmark.
pub fn bench_signal(length: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length).map(|_| rng.gen_range(0.0..=1.0)).collect()
}

/// Median wall-clock time of each encoder. Before timing, the scan outputs
/// are checked against each other bit for bit and the sequential pair for
/// the one-pulse bracketing of their running counts.
pub fn bench_codec(length: usize, repeats: usize, workers: &[usize]) -> Result<BenchReport> {
    if length == 0 || repeats == 0 {
        return arg_err("length and repeats must be positive");
    }
    if workers.is_empty() || workers.contains(&0) {
        return arg_err("worker counts must be positive");
    }
    let x = bench_signal(length, 0x5eed);
    let state = ModulatorState::default();
    let pools = workers
        .iter()
        .map(|&w| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::State(format!("thread pool: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let (m, _) = pcm2pdm_mod(&x, state)?;
    let (i, _) = pcm2pdm_if(&x, state)?;
    let p = pcm2pdm_par(&x, 1.0)?;
    if p != i {
        return Err(Error::State(
            "scan encoder disagrees with integrate-and-fire".into(),
        ));
    }
    for pool in &pools {
        if pool.install(|| pcm2pdm_par_chunked(&x, 1.0, BENCH_CHUNK))? != p {
            return Err(Error::State(
                "chunked encoder disagrees with scan encoder".into(),
            ));
        }
    }
    let (mut cm, mut ci) = (0i64, 0i64);
    for (a, b) in m.iter().zip(&i) {
        cm += *a as i64;
        ci += *b as i64;
        if (cm - ci).abs() > 1 {
            return Err(Error::State("sequential encoders drift apart".into()));
        }
    }

    let mut rows = vec![
        BenchRow {
            variant: "seq_mod".into(),
            workers: 1,
            median_s: time_it(repeats, || pcm2pdm_mod(&x, state)),
        },
        BenchRow {
            variant: "seq_if".into(),
            workers: 1,
            median_s: time_it(repeats, || pcm2pdm_if(&x, state)),
        },
        BenchRow {
            variant: "par".into(),
            workers: 1,
            median_s: time_it(repeats, || pcm2pdm_par(&x, 1.0)),
        },
    ];
    for (pool, &w) in pools.iter().zip(workers) {
        rows.push(BenchRow {
            variant: "par_chunked".into(),
            workers: w,
            median_s: pool
                .install(|| time_it(repeats, || pcm2pdm_par_chunked(&x, 1.0, BENCH_CHUNK))),
        });
    }
    Ok(BenchReport {
        length,
        repeats,
        rows,
    })
}
