use std::path::Path;
use std::process::{Command, Output};

use splatfield::io::splatfile::load_splats;
use splatfield::io::synth::{generate_synthetic, write_synthetic, SyntheticSceneSpec};

fn splatfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatfield"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Gray level that survives 8-bit quantization exactly.
const GRAY: f64 = 128.0 / 255.0;

/// Small dataset with a flat gray background and no primitives.
fn blank_dataset(dir: &Path) -> std::path::PathBuf {
    let spec = SyntheticSceneSpec {
        width: 16,
        height: 16,
        focal: 16.0,
        frames: 12,
        supersample: 1,
        background: [GRAY; 3],
        primitives: Vec::new(),
        ..SyntheticSceneSpec::toy(0)
    };
    write_synthetic(&generate_synthetic(&spec).unwrap(), dir).unwrap()
}

#[test]
fn zero_iterations_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = blank_dataset(&dir.path().join("data"));
    let out = dir.path().join("run");
    let o = splatfield(&["train", "--data", p(&data), "--out", p(&out), "--iters", "0", "--toy"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_splats(&out.join("splats.hogs")).unwrap().len(), 100);
    for f in ["field.hogf", "optimizer.hogo", "loss.jsonl", "config.toml", "metrics.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(std::fs::read_to_string(out.join("loss.jsonl")).unwrap(), "");
}

#[test]
fn eval_of_a_perfect_render_reports_the_cap() {
    // Fully transparent splats leave only the background, which is exactly the
    // gray dataset.
    let dir = tempfile::tempdir().unwrap();
    let data = blank_dataset(&dir.path().join("data"));
    let out = dir.path().join("run");
    let o = splatfield(&["train", "--data", p(&data), "--out", p(&out), "--iters", "0", "--toy"]);
    assert!(o.status.success());
    let mut splats = load_splats(&out.join("splats.hogs")).unwrap();
    for s in &mut splats {
        s.opacity_logit = -100.0;
    }
    splatfield::io::splatfile::save_splats(&splats, &out.join("splats.hogs")).unwrap();
    let report = dir.path().join("report.json");
    let gray = format!("{GRAY},{GRAY},{GRAY}");
    let o = splatfield(&[
        "eval",
        "--scene",
        p(&out.join("splats.hogs")),
        "--field",
        p(&out.join("field.hogf")),
        "--data",
        p(&data),
        "--report",
        p(&report),
        "--background",
        &gray,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["mean_psnr"].as_f64().unwrap(), 99.0);
    assert_eq!(v["mean_ssim"].as_f64().unwrap(), 1.0);
    assert_eq!(v["views"].as_array().unwrap().len(), 2);

    let renders = dir.path().join("renders");
    let o = splatfield(&[
        "render",
        "--scene",
        p(&out.join("splats.hogs")),
        "--field",
        p(&out.join("field.hogf")),
        "--camera",
        p(&data),
        "--out",
        p(&renders),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(renders.join("0011.png").exists());
}

#[test]
fn bad_arguments_fail_with_usage() {
    let o = splatfield(&["train", "--bogus"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let o = splatfield(&["train", "--data", p(&missing), "--out", p(dir.path())]);
    assert!(!o.status.success());

    let o = splatfield(&["train", "--data", p(&missing), "--out", p(dir.path()), "--lambda", "2"]);
    assert!(!o.status.success());
}
