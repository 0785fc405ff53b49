use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fti_core::eval::report::{Record, Report};
use fti_core::pipeline::RunConfig;

fn fti(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fti")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = fti(args);
    assert!(
        out.status.success(),
        "fti {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Short-schedule toy config plus a small synthetic dataset.
fn fixture(root: &Path) -> (PathBuf, PathBuf) {
    let mut cfg = RunConfig::toy();
    cfg.taa.epochs = 20;
    cfg.wgan.epochs = 4;
    let cfg_path = root.join("toy.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string().unwrap()).unwrap();
    let data = root.join("data");
    ok(&[
        "--config", s(&cfg_path), "synth-dataset", "--out-dir", s(&data),
        "--train-ids", "6", "--test-ids", "4", "--per-id", "2",
    ]);
    (cfg_path, data.join("manifest.jsonl"))
}

fn train(cfg: &Path, manifest: &Path, out: &Path) {
    ok(&["--config", s(cfg), "train-taa", "--manifest", s(manifest), "--out-dir", s(out)]);
    let taa = out.join("taa.ckpt");
    ok(&["--config", s(cfg), "train-flp", "--manifest", s(manifest), "--taa", s(&taa), "--out-dir", s(out)]);
}

#[test]
fn unknown_subcommand_fails_with_usage() {
    let out = fti(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("frobnicate"));
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = fti(&["--profile", "toy", "train-taa", "--manifest", "/no/such/manifest.jsonl", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("/no/such/manifest.jsonl"), "{err}");
}

#[test]
fn evaluate_reports_every_far_level() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, manifest) = fixture(dir.path());
    let run = dir.path().join("run");
    train(&cfg, &manifest, &run);
    let eval = dir.path().join("eval");
    ok(&[
        "--config", s(&cfg), "evaluate", "--manifest", s(&manifest),
        "--taa", s(&run.join("taa.ckpt")), "--flp", s(&run.join("flp.ckpt")), "--out-dir", s(&eval),
    ]);
    let rep = Report::load_jsonl(&eval.join("report.jsonl")).unwrap();
    let mut fars: Vec<f64> = rep
        .records
        .iter()
        .filter_map(|r| match r {
            Record::Verification(v) if v.protocol == fti_core::eval::Protocol::Type1 && v.f_target == "stub-fr-a" => Some(v.far),
            _ => None,
        })
        .collect();
    fars.sort_by(f64::total_cmp);
    assert_eq!(fars, [1e-4, 1e-3, 1e-2]);
    let md = std::fs::read_to_string(eval.join("report.md")).unwrap();
    assert_eq!(Report::from_markdown(&md).unwrap().to_markdown().unwrap(), md);

    let tmpl = dir.path().join("t.bin");
    let img = dir.path().join("data/images");
    let first = std::fs::read_dir(&img).unwrap().next().unwrap().unwrap().path();
    ok(&["--config", s(&cfg), "extract-template", "--image", s(&first), "--out", s(&tmpl)]);
    let atk = dir.path().join("attack");
    ok(&[
        "--config", s(&cfg), "attack", "--taa", s(&run.join("taa.ckpt")), "--flp", s(&run.join("flp.ckpt")),
        "--template", s(&tmpl), "--out-dir", s(&atk),
    ]);
    assert!(atk.join("t.png").exists());
}

#[test]
fn training_logs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, manifest) = fixture(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&cfg, &manifest, &a);
    train(&cfg, &manifest, &b);
    for f in ["metrics.jsonl", "taa.ckpt", "flp.ckpt", "critic.ckpt"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = dir.path().join("c");
    ok(&["--config", s(&cfg), "--seed", "99", "train-taa", "--manifest", s(&manifest), "--out-dir", s(&c)]);
    assert_ne!(std::fs::read(a.join("taa.ckpt")).unwrap(), std::fs::read(c.join("taa.ckpt")).unwrap());
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".fti.lock"), "1").unwrap();
    let out = fti(&["--profile", "toy", "synth-dataset", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}
