use pdm_kws::datasets::{load_gsc, synth_class_name, synth_dataset, write_dataset, Split};
use pdm_kws::kws_net::{NetworkSpec, Seeds};
use pdm_kws::training::{encode_split, evaluate, train, PlateauScheduler, TrainConfig};
use rustfft::{num_complex::Complex, FftPlanner};

fn peak_bin(x: &[f64]) -> usize {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    (1..buf.len() / 2)
        .max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr()))
        .unwrap()
}

#[test]
fn tone_classes_peak_at_their_frequency() {
    let ds = synth_dataset(4, 10, 3).unwrap();
    let freqs = [400.0, 800.0, 1600.0, 3200.0];
    for u in ds.train.iter().chain(&ds.valid).chain(&ds.test) {
        // one-second clips at 16 kHz: one bin per hertz
        let bin = peak_bin(&u.signal.samples) as f64;
        let f = freqs[u.label];
        assert!(
            (bin - f).abs() <= 2.0,
            "{}: peak {bin} Hz, class {f} Hz",
            u.source
        );
        assert!(ds.class_names[u.label].contains(&format!("{}hz", f as u32)));
    }
}

#[test]
fn synthetic_set_is_seeded_and_split() {
    let a = synth_dataset(4, 20, 1).unwrap();
    assert_eq!(a, synth_dataset(4, 20, 1).unwrap());
    assert_ne!(a, synth_dataset(4, 20, 2).unwrap());
    assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (64, 8, 8));
    for label in 0..4 {
        assert_eq!(a.test.iter().filter(|u| u.label == label).count(), 2);
    }
    assert!(a.train.iter().all(|u| u.signal.len() == 16_000));
    assert_eq!(synth_class_name(0), a.class_names[0]);
}

#[test]
fn written_dataset_loads_back() {
    let ds = synth_dataset(3, 10, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    std::fs::create_dir(dir.path().join("_background_noise_")).unwrap();
    let back = load_gsc(dir.path()).unwrap();
    assert_eq!(back.class_names, ds.class_names);
    for split in [Split::Train, Split::Valid, Split::Test] {
        let (a, b) = (ds.split(split), back.split(split));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.source, y.source);
            assert_eq!(x.label, y.label);
            assert_eq!(x.signal, y.signal);
        }
    }
}

#[test]
fn missing_lists_are_format_errors() {
    let ds = synth_dataset(2, 10, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("testing_list.txt")).unwrap();
    assert!(matches!(
        load_gsc(dir.path()),
        Err(pdm_kws::Error::Format(_))
    ));
}

#[test]
fn plateau_reduces_after_patience_and_resets() {
    let mut s = PlateauScheduler::new(0.002, 0.7, 10);
    let lrs: Vec<f64> = (0..11).map(|_| s.observe(50.0)).collect();
    assert!(lrs[..10].iter().all(|&lr| lr == 0.002));
    assert!((lrs[10] - 0.0014).abs() < 1e-15);
    assert!((s.observe(60.0) - 0.0014).abs() < 1e-15);
}

#[test]
fn short_training_run_is_reproducible() {
    let ds = synth_dataset(2, 10, 5).unwrap();
    let spec = NetworkSpec {
        alpha: 1,
        hidden_channels: 4,
        classes: 2,
        fan_in: 4,
        seeds: Seeds::all(3),
        ..Default::default()
    };
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 7,
        ..Default::default()
    };
    let a = train(&spec, &cfg, &ds, |_| {}).unwrap();
    let b = train(&spec, &cfg, &ds, |_| {}).unwrap();
    assert_eq!(a.log.len(), 2);
    assert_eq!(a.best, b.best);
    assert!(
        (a.initial_loss - 2f64.ln()).abs() < 0.15,
        "{}",
        a.initial_loss
    );
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let c = one.install(|| train(&spec, &cfg, &ds, |_| {}).unwrap());
    assert_eq!(a.best, c.best);

    let test = encode_split(&ds.test, 1, &cfg).unwrap();
    let r = evaluate(&a.best, &test).unwrap();
    assert_eq!(r.total, ds.test.len());
    assert!(r.metrics.is_consistent());
}

#[test]
fn class_count_mismatch_is_rejected() {
    let ds = synth_dataset(2, 10, 5).unwrap();
    let spec = NetworkSpec {
        alpha: 1,
        hidden_channels: 4,
        classes: 3,
        fan_in: 4,
        ..Default::default()
    };
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    assert!(train(&spec, &cfg, &ds, |_| {}).is_err());
}
