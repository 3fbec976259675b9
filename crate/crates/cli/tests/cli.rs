use std::path::Path;
use std::process::{Command, Output};

fn pdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdm"))
        .args(args)
        .env_remove("PDM_KWS_DATA")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pdm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(out: &Path) -> serde_json::Value {
    let path = format!("{}.manifest.json", out.display());
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_tone(path: &Path) {
    let pcm: Vec<f64> = (0..8_000)
        .map(|t| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * t as f64 / 16_000.0).sin())
        .collect();
    let sig = pdm_kws::PcmSignal::new(pcm, 16_000).unwrap();
    std::fs::write(path, pdm_kws::signal_io::encode_wav(&sig)).unwrap();
}

#[test]
fn encode_then_decode_reports_snr() {
    let dir = tempfile::tempdir().unwrap();
    let (wav, bits, back) = (
        dir.path().join("a.wav"),
        dir.path().join("a.pdm"),
        dir.path().join("b.wav"),
    );
    write_tone(&wav);
    ok(&["encode", "--in", s(&wav), "--out", s(&bits), "--osr", "32"]);
    assert!(manifest(&bits).is_object());
    let text = ok(&[
        "decode",
        "--in",
        s(&bits),
        "--out",
        s(&back),
        "--reference",
        s(&wav),
    ]);
    let db: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("snr "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(db > 35.0, "{text}");
    assert!(back.exists());
}

#[test]
fn params_matches_the_table() {
    assert_eq!(
        ok(&["params", "--osr", "64", "--sparsity", "94"]).trim(),
        "71843"
    );
    assert_eq!(ok(&["params", "--osr", "1"]).trim(), "185891");
    assert_eq!(ok(&["params"]).trim(), "210083");
}

#[test]
fn bad_input_exits_with_one() {
    assert_eq!(pdm(&["encode", "--bogus"]).status.code(), Some(1));
    assert_eq!(pdm(&["params", "--sparsity", "33"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.wav");
    let out = dir.path().join("x.pdm");
    assert_eq!(
        pdm(&["encode", "--in", s(&missing), "--out", s(&out)])
            .status
            .code(),
        Some(1)
    );
    // no dataset given
    assert_eq!(pdm(&["train", "--out", s(&out)]).status.code(), Some(1));
}

#[test]
fn train_eval_and_sweep_on_a_tiny_set() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth-data",
        "--out",
        s(&data),
        "--classes",
        "2",
        "--per-class",
        "10",
    ]);

    let common = [
        "--preset",
        "desk",
        "--osr",
        "1",
        "--channels",
        "4",
        "--epochs",
        "1",
    ];
    let ckpt = dir.path().join("net.ckpt");
    let log = dir.path().join("log.csv");
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--log",
        s(&log),
    ];
    args.extend(common);
    ok(&args);
    assert!(ckpt.exists());
    assert!(std::fs::read_to_string(&log).unwrap().lines().count() >= 2);
    let m = manifest(&ckpt);
    assert_eq!(m["command"], "train");

    let json = dir.path().join("eval.json");
    let text = ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--json",
        s(&json),
    ]);
    assert!(text.starts_with("accuracy "), "{text}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(report["total"], 2);
    assert_eq!(manifest(&json)["command"], "eval");

    let csv = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep",
        "--data",
        s(&data),
        "--out",
        s(&csv),
        "--osr",
        "1,2",
    ];
    args.extend(&common[..2]);
    args.extend(&common[4..]);
    ok(&args);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,accuracy_mean,accuracy_std");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    assert!(csv.with_extension("gp").exists());
    assert_eq!(manifest(&csv)["command"], "sweep");

    let both = pdm(&[
        "sweep",
        "--data",
        s(&data),
        "--out",
        s(&csv),
        "--osr",
        "1,2",
        "--sparsity",
        "0,50",
    ]);
    assert_eq!(both.status.code(), Some(1));
}
