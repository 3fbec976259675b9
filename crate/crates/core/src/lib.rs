//! Keyword spotting straight from PDM microphone bitstreams.
//!
//! The crate covers the whole path from a 16-bit PCM recording to a class
//! prediction: sigma-delta encoding into a one-bit PDM stream, a
//! 1D-convolutional spiking network that consumes those bits directly,
//! surrogate-gradient training, and the efficiency metrics used to compare
//! configurations (parameter count, spike rate, relative spike rate).

pub mod datasets;
pub mod error;
pub mod kws_net;
pub mod metrics_bench;
pub mod pdm_codec;
pub mod signal_io;
pub mod snn_core;
pub mod training;

pub use error::{Error, Result};
pub use kws_net::{build, count_params, NetworkSpec, NetworkState};
pub use metrics_bench::MetricsReport;
pub use pdm_codec::{Modulator, ModulatorState, PdmSignal};
pub use signal_io::{Interpolation, PcmSignal, UnipolarSignal};
pub use snn_core::{Grid, NeuronParams, SpikeTensor};
pub use training::TrainConfig;
