use std::path::Path;
use std::process::{Command, Output};

use lbccn::io::{read_wav, WavEncoding};

fn lbccn(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbccn"))
        .args(args)
        .env("LBCCN_DATA_DIR", data)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "exit {:?}\n{stderr}", out.status.code());
    format!("{}{stderr}", String::from_utf8_lossy(&out.stdout))
}

fn synth(data: &Path) {
    ok(&lbccn(
        data,
        &[
            "synth",
            "--count",
            "10",
            "--seed",
            "4",
            "--duration",
            "1",
            "--workers",
            "1",
        ],
    ));
}

#[test]
fn train_then_enhance_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let log = ok(&lbccn(
        &data,
        &["train", "--epochs", "1", "--limit", "1", "--crop-frames", "16"],
    ));
    assert!(log.contains("\"k\":0.5") && log.contains("\"q\":40"), "{log}");
    let ckpt = data.join("lbccn-ratfs.ckpt");
    assert!(ckpt.exists());

    let input = std::fs::read_dir(data.join("test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with("_noisy.wav"))
        .unwrap();
    let (off, on) = (dir.path().join("off.wav"), dir.path().join("on.wav"));
    let c = ckpt.to_str().unwrap();
    let i = input.to_str().unwrap();
    ok(&lbccn(
        &data,
        &[
            "enhance",
            "--checkpoint",
            c,
            "--input",
            i,
            "--output",
            off.to_str().unwrap(),
        ],
    ));
    ok(&lbccn(
        &data,
        &[
            "enhance",
            "--checkpoint",
            c,
            "--input",
            i,
            "--output",
            on.to_str().unwrap(),
            "--streaming",
        ],
    ));
    let (x, a, b) = (
        read_wav(&input).unwrap(),
        read_wav(&off).unwrap(),
        read_wav(&on).unwrap(),
    );
    for w in [&a, &b] {
        assert_eq!(
            (w.sample_rate, w.channels, w.frames()),
            (x.sample_rate, x.channels, x.frames())
        );
        assert_eq!(w.encoding, WavEncoding::Float32);
    }
    let diff = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0f32, f32::max);
    assert!(diff < 1e-5, "streaming differs by {diff}");

    let report = dir.path().join("eval.jsonl");
    let out = ok(&lbccn(
        &data,
        &["eval", "--checkpoint", c, "--report", report.to_str().unwrap()],
    ));
    assert!(out.contains("noisy") && out.contains("dSNR"), "{out}");
    let lines = std::fs::read_to_string(&report).unwrap();
    assert_eq!(lines.lines().count(), 1);
    let rec: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(rec["enhanced"]["snr_db"].is_array(), "{rec}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"k": 0.25, "epochs": 1, "limit": 1, "crop-frames": 16, "lr": 0.002}}"#,
    )
    .unwrap();
    let out = dir.path().join("m.ckpt");
    let log = ok(&lbccn(
        &data,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "train",
            "--k",
            "0.75",
            "--output",
            out.to_str().unwrap(),
        ],
    ));
    assert!(log.contains("\"k\":0.75"), "{log}");
    assert!(log.contains("\"lr\":0.002") && log.contains("\"epochs\":1"), "{log}");
    assert!(out.exists());
}

#[test]
fn grids_print_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data);
    let common = ["--epochs", "1", "--limit", "1", "--crop-frames", "16"];
    let mut args = vec!["sweep-k", "--ks", "0,1"];
    args.extend(common);
    let out = ok(&lbccn(&data, &args));
    assert!(out.contains("k=0 ") && out.contains("k=1 "), "{out}");

    let report = dir.path().join("q.json");
    let mut args = vec!["ablate-q", "--qs", "30", "--report", report.to_str().unwrap()];
    args.extend(common);
    let out = ok(&lbccn(&data, &args));
    assert!(out.contains("q=30 ratfs") && out.contains("q=40 masks"), "{out}");
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
}

#[test]
fn bench_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = lbccn(dir.path(), &["bench", "--seconds", "0.25", "--repetitions", "3"]);
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["real_params"], 26_622);
    assert!(v["rtf"].as_f64().unwrap() > 0.0);
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(lbccn(d, &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(lbccn(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(lbccn(d, &["train", "--variant", "spectral"]).status.code(), Some(2));
    // the dataset directory does not exist
    assert_eq!(lbccn(d, &["train", "--epochs", "1"]).status.code(), Some(3));
    assert_eq!(
        lbccn(
            d,
            &[
                "enhance",
                "--checkpoint",
                "none.ckpt",
                "--input",
                "a.wav",
                "--output",
                "b.wav"
            ]
        )
        .status
        .code(),
        Some(3)
    );

    let cfg = d.join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(
        lbccn(d, &["--config", cfg.to_str().unwrap(), "bench"]).status.code(),
        Some(2)
    );

    let junk = d.join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let out = lbccn(
        d,
        &[
            "enhance",
            "--checkpoint",
            junk.to_str().unwrap(),
            "--input",
            "a.wav",
            "--output",
            "b.wav",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
}
