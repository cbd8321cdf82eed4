use std::path::PathBuf;
use std::process::{Command, Output};

fn samples() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn sample(name: &str) -> String {
    samples().join(name).to_str().unwrap().to_string()
}

fn luti(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_luti"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn luti")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(stdout(o).trim()).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

#[test]
fn mem_estimate_prints_bytes_and_megabytes() {
    let o = luti(&["mem-estimate", "--d", "4", "--m", "3", "--k", "1024"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "262144 bytes (0.25 MB)");
}

#[test]
fn embed_emits_one_row_per_point() {
    let o = luti(&["embed", "--lut", &sample("tiny.lut"), "--cloud", &sample("cloud.xyz"), "--mode", "irregular"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 64);
    assert!(rows.iter().all(|r| r.split(' ').count() == 8));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.txt");
    let o = luti(&[
        "embed", "--lut", &sample("tiny.lut"), "--cloud", &sample("cube.off"), "--mode", "nearest", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 8);
}

#[test]
fn register_self_to_self_converges_at_once() {
    let cloud = sample("cloud.xyz");
    let o = luti(&["register", "--lut", &sample("tiny.lut"), "--source", &cloud, "--target", &cloud]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["converged"], true);
    assert!(r["iterations"].as_u64().unwrap() <= 1);
    let m = &r["transform"];
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((m[i][j].as_f64().unwrap() - want).abs() < 1e-9);
        }
    }
}

#[test]
fn register_with_seed_is_byte_reproducible() {
    let args = ["register", "--lut", &sample("tiny.lut"), "--source", &sample("cloud.xyz"), "--seed", "3"];
    let strip = |o: &Output| {
        let mut v = json(o);
        v.as_object_mut().unwrap().remove("wall_ms");
        v.to_string()
    };
    let (a, b) = (luti(&args), luti(&args));
    assert!(a.status.success());
    assert_eq!(strip(&a), strip(&b));
    assert!(json(&a)["rot_err_deg"].is_number());
}

#[test]
fn bake_reproduces_the_golden_lut() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.lut");
    let o = luti(&["bake", "--model", &sample("model.json"), "--d", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(samples().join("tiny.lut")).unwrap());
    let r = json(&o);
    assert_eq!(r["k"], 8);
    assert_eq!(r["mode_hint"], 1);
}

#[test]
fn dump_slice_writes_a_grid_table() {
    let o = luti(&["dump-slice", "--lut", &sample("tiny.lut"), "--channels", "0,3", "--res", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap().split_whitespace().count(), 4);
    assert_eq!(lines.count(), 25);
}

#[test]
fn eval_rejects_mismatched_or_missing_data() {
    let o = luti(&[
        "eval", "--model", &sample("model.json"), "--test-per-class", "2", "--points", "64",
    ]);
    // the sample model has 4 classes and synthetic data has 8
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    let o = luti(&[
        "eval", "--model", &sample("model.json"), "--lut", &sample("tiny.lut"), "--dataset",
        &format!("dir:{}", samples().join("missing").display()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let records = dir.path().join("r.jsonl");
    let common = ["--train-per-class", "3", "--test-per-class", "2", "--points", "32"];
    let mut args = vec![
        "train", "--variant", "luti_irr_e2e", "--d", "3", "--k", "16", "--epochs", "2", "--seed", "5", "--out",
        model.to_str().unwrap(), "--records", records.to_str().unwrap(),
    ];
    args.extend(common);
    let o = luti(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = json(&o);
    assert_eq!(std::fs::read_to_string(&records).unwrap().lines().count(), 2);

    let mut args = vec!["eval", "--model", model.to_str().unwrap(), "--seed", "5"];
    args.extend(common);
    let o = luti(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["accuracy"], t["test_accuracy"]);
}

#[test]
fn bench_emits_one_record_per_kernel() {
    let o = luti(&["bench", "--suite", "embedding", "--d", "3", "--k", "16", "--n", "32", "--reps", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["mlp", "luti_uni", "luti_irr"]);
}

#[test]
fn exit_codes_follow_the_taxonomy() {
    assert_eq!(luti(&["--help"]).status.code(), Some(0));
    assert_eq!(luti(&["embed", "--bogus"]).status.code(), Some(1));
    assert_eq!(luti(&["mem-estimate", "--d", "0", "--k", "4"]).status.code(), Some(1));
    assert_eq!(luti(&["train", "--variant", "nope", "--out", "/dev/null"]).status.code(), Some(1));
    let missing = luti(&["embed", "--lut", "/nonexistent.lut", "--cloud", &sample("cloud.xyz")]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());
    let corrupt = luti(&["embed", "--lut", &sample("cloud.xyz"), "--cloud", &sample("cloud.xyz")]);
    assert_eq!(corrupt.status.code(), Some(2));
}

#[test]
fn every_subcommand_help_shows_defaults() {
    for (cmd, needle) in [
        ("bake", "--model"),
        ("embed", "[default: irregular]"),
        ("register", "[default: 0.01]"),
        ("train", "[default: 1]"),
        ("eval", "[default: synth]"),
        ("bench", "[default: 1024]"),
        ("dump-slice", "[default: 64]"),
        ("mem-estimate", "[default: 4]"),
    ] {
        let o = luti(&[cmd, "--help"]);
        assert!(o.status.success());
        assert!(stdout(&o).contains(needle), "{cmd}: {}", stdout(&o));
    }
}
