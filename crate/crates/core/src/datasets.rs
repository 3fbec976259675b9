//! Labeled one-second utterances: the Speech Commands directory layout and
//! a seeded synthetic stand-in materialized in the same layout.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{arg_err, format_err, Error, Result};
use crate::signal_io::{quantize_i16, read_wav, write_wav, PcmSignal};

pub const CLIP_RATE_HZ: u32 = 16_000;
pub const VALIDATION_LIST: &str = "validation_list.txt";
pub const TESTING_LIST: &str = "testing_list.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    /// Exactly one second long.
    pub signal: PcmSignal,
    pub label: usize,
    /// Path relative to the dataset root, `class/file.wav`.
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => arg_err(format!("unknown split {other:?} (train|valid|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Alphabetical; the label is the index into this list.
    pub class_names: Vec<String>,
    pub train: Vec<LabeledUtterance>,
    pub valid: Vec<LabeledUtterance>,
    pub test: Vec<LabeledUtterance>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[LabeledUtterance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Zero-pads at the end or truncates to exactly `len` samples.
pub fn fit_length(mut signal: PcmSignal, len: usize) -> PcmSignal {
    signal.samples.resize(len, 0.0);
    signal
}

fn read_list(root: &Path, name: &str) -> Result<HashSet<String>> {
    let path = root.join(name);
    let text =
        fs::read_to_string(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.trim().replace('\\', "/"))
        .filter(|l| !l.is_empty())
        .collect())
}

/// Reads a Speech Commands style tree: one directory of WAVs per class plus
/// `validation_list.txt` and `testing_list.txt`. Files named in neither list
/// are training data. Directories starting with `_` or `.` are skipped.
pub fn load_gsc(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return format_err(format!("{} is not a directory", root.display()));
    }
    let mut class_names = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('_') || name.starts_with('.') {
            warn!("skipping non-class directory {name}");
            continue;
        }
        class_names.push(name);
    }
    if class_names.is_empty() {
        return format_err(format!("no class directories under {}", root.display()));
    }
    class_names.sort();
    let valid_list = read_list(root, VALIDATION_LIST)?;
    let test_list = read_list(root, TESTING_LIST)?;

    let mut files = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let mut names: Vec<String> = fs::read_dir(root.join(class))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
            .collect();
        names.sort();
        files.extend(names.into_iter().map(|n| (label, format!("{class}/{n}"))));
    }

    let clips: Vec<LabeledUtterance> = files
        .into_par_iter()
        .map(|(label, source)| {
            let signal = read_wav(root.join(&source))
                .map_err(|e| Error::Format(format!("{source}: {e}")))?;
            if signal.sample_rate_hz != CLIP_RATE_HZ {
                return Err(Error::UnsupportedFormat(format!(
                    "{source}: sampled at {} Hz, expected {CLIP_RATE_HZ}",
                    signal.sample_rate_hz
                )));
            }
            Ok(LabeledUtterance {
                signal: fit_length(signal, CLIP_RATE_HZ as usize),
                label,
                source,
            })
        })
        .collect::<Result<_>>()?;

    let mut ds = Dataset {
        class_names,
        ..Default::default()
    };
    for clip in clips {
        if test_list.contains(&clip.source) {
            ds.test.push(clip);
        } else if valid_list.contains(&clip.source) {
            ds.valid.push(clip);
        } else {
            ds.train.push(clip);
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Tone,
    UpChirp,
    DownChirp,
    Am,
}

const FAMILIES: [Family; 4] = [Family::Tone, Family::UpChirp, Family::DownChirp, Family::Am];

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Tone => "tone",
        Family::UpChirp => "up",
        Family::DownChirp => "down",
        Family::Am => "am",
    }
}

/// Centre frequency and waveform family of synthetic class `c`: four
/// octave-spaced frequencies from 400 Hz, the family advancing every four
/// classes, shifted up a quarter after all sixteen combinations.
fn class_shape(c: usize) -> (f64, Family) {
    let base = 400.0 * f64::from(1u32 << (c % 4));
    let family = FAMILIES[(c / 4) % 4];
    let cycle = (c / 16) as f64;
    (base * (1.0 + 0.25 * cycle), family)
}

pub fn synth_class_name(c: usize) -> String {
    let (f, family) = class_shape(c);
    format!("c{c:02}_{}_{}hz", family_name(family), f.round() as u32)
}

fn synth_clip(c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = CLIP_RATE_HZ as usize;
    let rate = CLIP_RATE_HZ as f64;
    let (f, family) = class_shape(c);
    let phase0 = rng.gen_range(0.0..2.0 * PI);
    let gain_db = rng.gen_range(-3.0..=3.0);
    let amp = 0.5 * 10f64.powf(gain_db / 20.0);
    let (f_lo, f_hi) = (f / 2f64.sqrt(), f * 2f64.sqrt());

    let clean: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let phase = match family {
                Family::Tone | Family::Am => 2.0 * PI * f * t,
                // linear sweep over one second
                Family::UpChirp => 2.0 * PI * (f_lo * t + 0.5 * (f_hi - f_lo) * t * t),
                Family::DownChirp => 2.0 * PI * (f_hi * t - 0.5 * (f_hi - f_lo) * t * t),
            };
            let env = match family {
                Family::Am => 0.6 + 0.4 * (2.0 * PI * 8.0 * t).sin(),
                _ => 1.0,
            };
            amp * env * (phase + phase0).sin()
        })
        .collect();
    let power = clean.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let noise = Normal::new(0.0, (power / 100.0).sqrt()).expect("finite noise level");
    clean
        .into_iter()
        .map(|x| {
            let s = (x + noise.sample(rng)).clamp(-1.0, 1.0);
            // store what a 16-bit WAV would hold, so disk and memory agree
            quantize_i16(s) as f64 / 32768.0
        })
        .collect()
}

/// `classes × per_class` synthetic one-second clips at 16 kHz with random
/// phase, ±3 dB gain and noise 20 dB below the signal. Each class is split
/// 80/10/10 into train/valid/test.
pub fn synth_dataset(classes: usize, per_class: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return arg_err("synthetic data needs at least two classes");
    }
    if per_class == 0 {
        return arg_err("per_class must be positive");
    }
    let class_names: Vec<String> = (0..classes).map(synth_class_name).collect();
    let clips: Vec<LabeledUtterance> = (0..classes * per_class)
        .into_par_iter()
        .map(|k| {
            let (c, i) = (k / per_class, k % per_class);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            LabeledUtterance {
                signal: PcmSignal {
                    samples: synth_clip(c, &mut rng),
                    sample_rate_hz: CLIP_RATE_HZ,
                },
                label: c,
                source: format!("{}/{}_{i:04}.wav", class_names[c], class_names[c]),
            }
        })
        .collect();

    let mut ds = Dataset {
        class_names,
        ..Default::default()
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = per_class * 8 / 10;
    let n_valid = per_class / 10;
    for chunk in clips.chunks(per_class) {
        let mut idx: Vec<usize> = (0..per_class).collect();
        idx.shuffle(&mut order_rng);
        for (rank, &i) in idx.iter().enumerate() {
            let clip = chunk[i].clone();
            if rank < n_train {
                ds.train.push(clip);
            } else if rank < n_train + n_valid {
                ds.valid.push(clip);
            } else {
                ds.test.push(clip);
            }
        }
    }
    for split in [&mut ds.train, &mut ds.valid, &mut ds.test] {
        split.sort_by(|a, b| a.source.cmp(&b.source));
    }
    Ok(ds)
}

/// Writes `ds` in the Speech Commands layout under `root`.
pub fn write_dataset(ds: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for class in &ds.class_names {
        fs::create_dir_all(root.join(class))?;
    }
    [&ds.train, &ds.valid, &ds.test]
        .into_par_iter()
        .flat_map(|s| s.par_iter())
        .try_for_each(|clip| write_wav(&clip.signal, root.join(&clip.source)))?;
    for (name, split) in [(VALIDATION_LIST, &ds.valid), (TESTING_LIST, &ds.test)] {
        let mut text = String::new();
        for clip in split {
            text.push_str(&clip.source);
            text.push('\n');
        }
        fs::write(root.join(name), text)?;
    }
    Ok(())
}
