use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pdm_kws::datasets::{load_gsc, synth_dataset, write_dataset, Dataset, Split};
use pdm_kws::kws_net::{
    fan_in_for_sparsity, read_checkpoint, sparsity_of, write_checkpoint, Checkpoint, InputPolarity,
    NetworkSpec, Seeds,
};
use pdm_kws::metrics_bench::{bench_codec as run_bench, table_csv, MetricsReport};
use pdm_kws::pdm_codec::{
    default_taps, measure_snr, modulate, pcm2pdm_par_chunked, pdm2pcm, read_pdm, write_pdm,
};
use pdm_kws::signal_io::{oversample, read_wav, to_unipolar, write_wav};
use pdm_kws::training::{encode_split, evaluate, log_csv, train as run_train, TrainConfig};
use pdm_kws::{count_params, Interpolation, Modulator, PdmSignal};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{CliError, DATA_ENV};

pub struct Context {
    pub argv: Vec<String>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn get(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Polarity {
    Unipolar,
    Bipolar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 16 channels at 4x, bipolar input, init gain 4, lr 0.008, batch 8,
    /// no augmentation, 30 epochs.
    Desk,
    /// 128 channels at 64x, lr 0.002, batch 32, time-shift augmentation,
    /// 150 epochs.
    GscFull,
}

fn parse_modulator(s: &str) -> Result<Modulator, String> {
    s.parse().map_err(|e: pdm_kws::Error| e.to_string())
}

fn parse_interp(s: &str) -> Result<Interpolation, String> {
    s.parse().map_err(|e: pdm_kws::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: pdm_kws::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// 16-bit mono PCM WAV.
    #[arg(long = "in", value_name = "WAV")]
    input: PathBuf,
    /// Output PDM1 file.
    #[arg(long, value_name = "PDM")]
    out: PathBuf,
    /// Oversampling ratio.
    #[arg(long, default_value_t = 64)]
    osr: u16,
    /// seq | mod | if | par
    #[arg(long, default_value = "par", value_parser = parse_modulator)]
    algo: Modulator,
    /// hold | sinc
    #[arg(long, default_value = "hold", value_parser = parse_interp)]
    interp: Interpolation,
    /// Use the chunked scan encoder with this chunk length (par only).
    #[arg(long, value_name = "N")]
    chunk: Option<usize>,
}

pub fn encode(ctx: &Context, a: EncodeArgs) -> Result<(), CliError> {
    let pcm = read_wav(&a.input)?;
    let up = oversample(&to_unipolar(&pcm), a.osr as u32, a.interp)?;
    let bits = match a.chunk {
        Some(n) if a.algo == Modulator::Par => pcm2pdm_par_chunked(&up.samples, 1.0, n)?,
        Some(_) => return Err(CliError::user("--chunk only applies to --algo par")),
        None => modulate(&up.samples, a.algo)?,
    };
    let pdm = PdmSignal::new(bits, pcm.sample_rate_hz, a.osr)?;
    write_pdm(&pdm, &a.out)?;
    println!(
        "{} samples -> {} bits at {} Hz, density {:.4}",
        pcm.len(),
        pdm.len(),
        pdm.effective_rate_hz(),
        pdm.density()
    );
    let mut m = RunManifest::new("encode", ctx);
    m.input_file(&a.input)?;
    m.config =
        json!({"osr": a.osr, "algo": a.algo.to_string(), "interp": a.interp, "chunk": a.chunk});
    m.write_beside(&a.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// PDM1 file.
    #[arg(long = "in", value_name = "PDM")]
    input: PathBuf,
    /// Output 16-bit WAV at the base rate.
    #[arg(long, value_name = "WAV")]
    out: PathBuf,
    /// FIR taps (odd); defaults to 16·osr + 1.
    #[arg(long)]
    taps: Option<usize>,
    /// Print the SNR of the decoded signal against this WAV.
    #[arg(long, value_name = "WAV")]
    reference: Option<PathBuf>,
}

pub fn decode(ctx: &Context, a: DecodeArgs) -> Result<(), CliError> {
    let pdm = read_pdm(&a.input)?;
    let taps = a.taps.unwrap_or_else(|| default_taps(pdm.alpha));
    let pcm = pdm2pcm(&pdm, taps)?;
    write_wav(&pcm, &a.out)?;
    println!(
        "{} bits -> {} samples at {} Hz",
        pdm.len(),
        pcm.len(),
        pcm.sample_rate_hz
    );
    let mut m = RunManifest::new("decode", ctx);
    m.input_file(&a.input)?;
    let mut snr = None;
    if let Some(r) = &a.reference {
        let reference = read_wav(r)?;
        let trim = taps / pdm.alpha as usize + 1;
        let db = measure_snr(&reference, &pcm, trim)?;
        println!("snr {db:.2} dB");
        m.input_file(r)?;
        snr = Some(db);
    }
    m.config = json!({"taps": taps, "snr_db": snr});
    m.write_beside(&a.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Input length in samples.
    #[arg(long, default_value_t = 1 << 20)]
    length: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Worker counts for the chunked encoder.
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    threads: Vec<usize>,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Speedup floor the chunked encoder is held to.
const SPEEDUP_FLOOR: f64 = 5.0;

pub fn bench_codec(ctx: &Context, a: BenchArgs) -> Result<(), CliError> {
    let report = run_bench(a.length, a.repeats, &a.threads)?;
    let csv = report.to_csv();
    let speedup = report.speedup().unwrap_or(0.0);
    match &a.out {
        Some(path) => {
            fs::write(path, &csv)?;
            let mut m = RunManifest::new("bench-codec", ctx);
            m.config = json!({"length": a.length, "repeats": a.repeats, "threads": a.threads,
                              "speedup": speedup});
            m.write_beside(path)?;
        }
        None => print!("{csv}"),
    }
    let verdict = if speedup >= SPEEDUP_FLOOR {
        "meets"
    } else {
        "below"
    };
    println!("speedup {speedup:.2}x ({verdict} the {SPEEDUP_FLOOR}x floor)");
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth_data(ctx: &Context, a: SynthArgs) -> Result<(), CliError> {
    let ds = synth_dataset(a.classes, a.per_class, a.seed)?;
    write_dataset(&ds, &a.out)?;
    println!(
        "{} clips in {} classes: {} train, {} valid, {} test",
        ds.len(),
        ds.class_names.len(),
        ds.train.len(),
        ds.valid.len(),
        ds.test.len()
    );
    let mut m = RunManifest::new("synth-data", ctx);
    m.config = json!({"classes": a.classes, "per_class": a.per_class, "seed": a.seed});
    m.input_dataset(&a.out, &ds);
    m.write_beside(&a.out)?;
    Ok(())
}

/// Architecture and optimizer flags shared by `train` and `sweep`.
#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Hidden channels per layer.
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Time-shift augmentation.
    #[arg(long, value_enum)]
    aug: Option<OnOff>,
    /// Recurrence in layers 3 and 4.
    #[arg(long, value_enum, default_value = "on")]
    rec: OnOff,
    /// Axonal delays after every hidden layer.
    #[arg(long, value_enum, default_value = "on")]
    delays: OnOff,
    /// How PDM bits enter the first layer.
    #[arg(long, value_enum)]
    input: Option<Polarity>,
    /// Multiplier on the hidden-layer initialization bound.
    #[arg(long)]
    init_gain: Option<f64>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

struct Resolved {
    channels: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    aug: bool,
    input: InputPolarity,
    init_gain: f64,
}

impl ModelArgs {
    fn resolve(&self) -> Resolved {
        let base = match self.preset {
            Some(Preset::Desk) => Resolved {
                channels: 16,
                epochs: 30,
                batch: 8,
                lr: 0.008,
                aug: false,
                input: InputPolarity::Bipolar,
                init_gain: 4.0,
            },
            Some(Preset::GscFull) | None => Resolved {
                channels: 128,
                epochs: 150,
                batch: 32,
                lr: 0.002,
                aug: true,
                input: InputPolarity::Unipolar,
                init_gain: 1.0,
            },
        };
        Resolved {
            channels: self.channels.unwrap_or(base.channels),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch: self.batch.unwrap_or(base.batch),
            lr: self.lr.unwrap_or(base.lr),
            aug: self.aug.map_or(base.aug, OnOff::get),
            input: match self.input {
                Some(Polarity::Unipolar) => InputPolarity::Unipolar,
                Some(Polarity::Bipolar) => InputPolarity::Bipolar,
                None => base.input,
            },
            init_gain: self.init_gain.unwrap_or(base.init_gain),
        }
    }

    fn default_osr(&self) -> u32 {
        match self.preset {
            Some(Preset::Desk) => 4,
            _ => 64,
        }
    }

    fn spec(
        &self,
        osr: u32,
        sparsity: u32,
        classes: usize,
        seed: u64,
    ) -> Result<NetworkSpec, CliError> {
        let r = self.resolve();
        Ok(NetworkSpec {
            alpha: osr,
            hidden_channels: r.channels,
            classes,
            recurrence: self.rec.get(),
            delays: self.delays.get(),
            fan_in: fan_in_for_sparsity(sparsity, r.channels)?,
            seeds: Seeds::all(seed),
            input: r.input,
            init_gain: r.init_gain,
            ..Default::default()
        })
    }

    fn config(&self, seed: u64) -> TrainConfig {
        let r = self.resolve();
        TrainConfig {
            learning_rate: r.lr,
            epochs: r.epochs,
            batch_size: r.batch,
            augment: r.aug,
            seed,
            ..Default::default()
        }
    }
}

fn load_data(path: &Option<PathBuf>) -> Result<(PathBuf, Dataset), CliError> {
    let path = path
        .clone()
        .ok_or_else(|| CliError::user(format!("no dataset: pass --data or set {DATA_ENV}")))?;
    let ds = load_gsc(&path)?;
    Ok((path, ds))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root in the Speech Commands layout.
    #[arg(long, env = DATA_ENV)]
    data: Option<PathBuf>,
    /// Oversampling ratio.
    #[arg(long)]
    osr: Option<u32>,
    /// Percent of layer 2-4 connections removed: 0, 50, 75, 88 or 94.
    #[arg(long, default_value_t = 0)]
    sparsity: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<(), CliError> {
    let (data_path, ds) = load_data(&a.data)?;
    let osr = a.osr.unwrap_or_else(|| a.model.default_osr());
    let spec = a
        .model
        .spec(osr, a.sparsity, ds.class_names.len(), a.seed)?;
    let mut cfg = a.model.config(a.seed);
    let mut diag = a.out.as_os_str().to_owned();
    diag.push(".diverged");
    cfg.diagnostic_path = Some(PathBuf::from(diag));

    let mut lines = Vec::new();
    let outcome = run_train(&spec, &cfg, &ds, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:6.2}%  valid {:6.2}%  lr {:.2e}  sr {:.0}/s",
            e.epoch, e.loss, e.train_acc, e.valid_acc, e.lr, e.spike_rate
        );
        lines.push(e.clone());
        if let Some(path) = &a.log {
            if let Err(err) = fs::write(path, log_csv(&lines)) {
                log::warn!("could not update {}: {err}", path.display());
            }
        }
    })?;
    if let Some(path) = &a.log {
        fs::write(path, log_csv(&outcome.log))?;
    }

    let test = encode_split(&ds.test, osr, &cfg)?;
    let test_acc = if test.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.best, &test)?.accuracy)
    };
    let ckpt = Checkpoint {
        state: outcome.best.clone(),
        class_names: ds.class_names.clone(),
        extra: json!({
            "train_config": cfg,
            "best_epoch": outcome.best_epoch,
            "best_valid_acc": outcome.best_valid_acc,
            "test_acc": test_acc,
        }),
    };
    write_checkpoint(&ckpt, &a.out)?;
    println!(
        "best epoch {} valid {:.2}%{}",
        outcome.best_epoch,
        outcome.best_valid_acc,
        test_acc.map_or(String::new(), |t| format!(" test {t:.2}%"))
    );

    let mut m = RunManifest::new("train", ctx);
    m.input_dataset(&data_path, &ds);
    m.config = json!({
        "spec": spec,
        "train": cfg,
        "params": count_params(&spec),
        "initial_loss": outcome.initial_loss,
        "loss": "cross-entropy over time-summed readout membrane",
        "plateau_monitor": "validation accuracy",
    });
    if let Some(path) = &a.log {
        m.outputs.push(path.display().to_string());
    }
    m.write_beside(&a.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, env = DATA_ENV)]
    data: Option<PathBuf>,
    /// train | valid | test
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn evaluate_checkpoint(
    ckpt_path: &Path,
    data: &Option<PathBuf>,
    split: Split,
) -> Result<(Checkpoint, PathBuf, Dataset, pdm_kws::training::EvalReport), CliError> {
    let ckpt = read_checkpoint(ckpt_path)?;
    let (path, ds) = load_data(data)?;
    if ds.class_names != ckpt.class_names {
        return Err(CliError::user(
            "dataset classes differ from the ones the checkpoint was trained on",
        ));
    }
    let cfg = TrainConfig::default();
    let items = encode_split(ds.split(split), ckpt.state.spec.alpha, &cfg)?;
    let report = evaluate(&ckpt.state, &items)?;
    Ok((ckpt, path, ds, report))
}

pub fn eval(ctx: &Context, a: EvalArgs) -> Result<(), CliError> {
    let (_, data_path, ds, report) = evaluate_checkpoint(&a.ckpt, &a.data, a.split)?;
    println!(
        "accuracy {:.2}% ({}/{})  sr {:.1} spikes/s  rsr {:.4}  isr {}  params {}",
        report.accuracy,
        report.correct,
        report.total,
        report.metrics.spike_rate,
        report.metrics.rsr,
        report.metrics.isr,
        report.metrics.params
    );
    if let Some(path) = &a.json {
        fs::write(path, serde_json::to_vec_pretty(&report)?)?;
        let mut m = RunManifest::new("eval", ctx);
        m.input_file(&a.ckpt)?;
        m.input_dataset(&data_path, &ds);
        m.write_beside(path)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, env = DATA_ENV)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn metrics(ctx: &Context, a: MetricsArgs) -> Result<(), CliError> {
    let (ckpt, data_path, ds, report) = evaluate_checkpoint(&a.ckpt, &a.data, a.split)?;
    let spec = &ckpt.state.spec;
    let sparsity = sparsity_of(spec.fan_in, spec.hidden_channels)?;
    let csv = table_csv(&[(report.metrics, sparsity)]);
    match &a.out {
        Some(path) => {
            fs::write(path, &csv)?;
            let mut m = RunManifest::new("metrics", ctx);
            m.input_file(&a.ckpt)?;
            m.input_dataset(&data_path, &ds);
            m.write_beside(path)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value_t = 64)]
    osr: u32,
    #[arg(long, default_value_t = 0)]
    sparsity: u32,
    #[arg(long, default_value_t = 128)]
    channels: usize,
    #[arg(long, default_value_t = 35)]
    classes: usize,
    #[arg(long, value_enum, default_value = "on")]
    rec: OnOff,
    /// Print the full table over the standard ratios and sparsity levels.
    #[arg(long)]
    table: bool,
}

/// (alpha, sparsity) rows of the reference parameter table.
pub const TABLE_ROWS: [(u32, u32); 11] = [
    (1, 0),
    (2, 0),
    (4, 0),
    (8, 0),
    (16, 0),
    (32, 0),
    (64, 0),
    (64, 50),
    (64, 75),
    (64, 88),
    (64, 94),
];

pub fn params(a: ParamsArgs) -> Result<(), CliError> {
    let spec_for = |osr: u32, sparsity: u32| -> Result<NetworkSpec, CliError> {
        let spec = NetworkSpec {
            alpha: osr,
            hidden_channels: a.channels,
            classes: a.classes,
            recurrence: a.rec.get(),
            fan_in: fan_in_for_sparsity(sparsity, a.channels)?,
            ..Default::default()
        };
        spec.validate()?;
        Ok(spec)
    };
    if a.table {
        let mut rows = Vec::new();
        for (osr, sparsity) in TABLE_ROWS {
            let spec = spec_for(osr, sparsity)?;
            let report = MetricsReport::new(osr, 0.0, 0, count_params(&spec), None, vec![])?;
            rows.push((report, sparsity));
        }
        let mut out = String::from("alpha,sparsity,params,isr\n");
        for (r, s) in rows {
            let _ = writeln!(out, "{},{},{},{}", r.alpha, s, r.params, r.isr);
        }
        print!("{out}");
    } else {
        println!("{}", count_params(&spec_for(a.osr, a.sparsity)?));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, env = DATA_ENV)]
    data: Option<PathBuf>,
    /// Oversampling ratios to sweep.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    osr: Vec<u32>,
    /// Sparsity percentages to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    sparsity: Vec<u32>,
    /// One training run per seed and configuration.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[command(flatten)]
    model: ModelArgs,
    /// CSV output; a gnuplot script is written next to it.
    #[arg(long)]
    out: PathBuf,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn sweep(ctx: &Context, a: SweepArgs) -> Result<(), CliError> {
    if a.osr.len() > 1 && a.sparsity.len() > 1 {
        return Err(CliError::user("sweep either --osr or --sparsity, not both"));
    }
    if a.seeds.is_empty() {
        return Err(CliError::user("--seeds needs at least one value"));
    }
    let (data_path, ds) = load_data(&a.data)?;
    if ds.test.is_empty() {
        return Err(CliError::user("dataset has no test split"));
    }
    let by_sparsity = a.sparsity.len() > 1;
    let points: Vec<(u32, u32)> = if by_sparsity {
        a.sparsity.iter().map(|&s| (a.osr[0], s)).collect()
    } else {
        a.osr.iter().map(|&o| (o, a.sparsity[0])).collect()
    };

    let mut csv = String::from(if by_sparsity {
        "sparsity,accuracy_mean,accuracy_std\n"
    } else {
        "alpha,accuracy_mean,accuracy_std\n"
    });
    let mut runs = Vec::new();
    for (osr, sparsity) in points {
        let mut accs = Vec::new();
        for &seed in &a.seeds {
            let spec = a.model.spec(osr, sparsity, ds.class_names.len(), seed)?;
            let cfg = a.model.config(seed);
            let outcome = run_train(&spec, &cfg, &ds, |_| {})?;
            let test = encode_split(&ds.test, osr, &cfg)?;
            let acc = evaluate(&outcome.best, &test)?.accuracy;
            eprintln!("osr {osr} sparsity {sparsity}% seed {seed}: test {acc:.2}%");
            runs.push(json!({"osr": osr, "sparsity": sparsity, "seed": seed, "test_acc": acc}));
            accs.push(acc);
        }
        let (mean, std) = mean_std(&accs);
        let key = if by_sparsity { sparsity } else { osr };
        let _ = writeln!(csv, "{key},{mean:.4},{std:.4}");
    }
    fs::write(&a.out, &csv)?;

    let xlabel = if by_sparsity {
        "sparsity (%)"
    } else {
        "oversampling ratio"
    };
    let logscale = if by_sparsity {
        ""
    } else {
        "set logscale x 2\n"
    };
    let script = format!(
        "set datafile separator ','\nset key off\n{logscale}set xlabel '{xlabel}'\n\
         set ylabel 'test accuracy (%)'\nset terminal pngcairo size 640,480\n\
         set output '{png}'\nplot '{csv}' every ::1 using 1:2:3 with yerrorlines\n",
        png = a.out.with_extension("png").display(),
        csv = a.out.display(),
    );
    let gp = a.out.with_extension("gp");
    fs::write(&gp, script)?;
    print!("{csv}");

    let mut m = RunManifest::new("sweep", ctx);
    m.input_dataset(&data_path, &ds);
    m.config = json!({"runs": runs});
    m.outputs.push(gp.display().to_string());
    m.write_beside(&a.out)?;
    Ok(())
}
