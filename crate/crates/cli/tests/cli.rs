use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PHANTOMS: &str = "working_size = 40\nn_source = 12\nn_target = 12\n";

const CONFIG: &str = r#"
working_size = 40
seg_epochs = 2
seg_base_channels = 4
uda_epochs = 1
gen_downsamples = 1
gen_residual_blocks = 1
gen_base_channels = 2
disc_layers = 3
disc_base_channels = 2
pool_size = 4
stl_epochs = 1
"#;

fn seuda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seuda"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seuda(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    source: PathBuf,
    target: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let phantoms = root.join("phantoms.toml");
    fs::write(&phantoms, PHANTOMS).unwrap();
    let config = root.join("run.toml");
    fs::write(&config, CONFIG).unwrap();
    let data = root.join("data");
    ok(&["make-phantoms", "--phantoms", s(&phantoms), "--out-dir", s(&data), "--seed", "4"]);
    Fixture {
        source: data.join("source/manifest.tsv"),
        target: data.join("target/manifest.tsv"),
        _dir: dir,
        root,
        config,
    }
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn make_phantoms_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let phantoms = dir.path().join("p.toml");
    fs::write(&phantoms, PHANTOMS).unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["make-phantoms", "--phantoms", s(&phantoms), "--out-dir", s(&out), "--seed", seed]);
        tree_bytes(&out)
    };
    let a = run("a", "9");
    let b = run("b", "9");
    let c = run("c", "10");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let pngs = a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 2 * (12 + 12));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = seuda(&["make-phantoms", "--out-dir", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(seuda(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(seuda(&["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(seuda(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.tsv");
    let out = seuda(&["train-seg", "--source", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverging_training_exits_2() {
    let f = fixture();
    let out = f.root.join("o");
    ok(&["--config", s(&f.config), "--epochs", "1", "train-seg", "--source", s(&f.source), "--out-dir", s(&out)]);
    let cfg = f.root.join("bad.toml");
    fs::write(&cfg, format!("{CONFIG}base_lr = 1e30\n")).unwrap();
    let seg = out.join("checkpoints/segmenter.ckpt");
    let res = seuda(&[
        "--config", s(&cfg), "train-uda", "--source", s(&f.source), "--target", s(&f.target), "--segmenter", s(&seg),
        "--out-dir", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn eval_on_identical_masks_scores_100() {
    let f = fixture();
    let out = f.root.join("eval");
    ok(&["eval", "--pred", s(&f.source), "--gt", s(&f.source), "--out-dir", s(&out), "--setting", "same"]);
    let text = fs::read_to_string(out.join("reports/same.jsonl")).unwrap();
    let report = seuda::metrics::MetricsReport::from_jsonl(&text).unwrap();
    assert_eq!(report.cases.len(), 12);
    for a in &report.aggregate {
        assert_eq!((a.dice, a.recall, a.precision), (100.0, 100.0, 100.0));
        assert_eq!(a.asd, Some(0.0));
    }
}

#[test]
fn bench_without_settings_exits_1() {
    let f = fixture();
    let out = seuda(&[
        "bench",
        "--source",
        s(&f.source),
        "--target",
        s(&f.target),
        "--segmenter",
        s(&f.root.join("missing.ckpt")),
        "--out-dir",
        s(&f.root.join("b")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no settings"));
}

#[test]
fn full_pipeline() {
    let f = fixture();
    let cfg = s(&f.config);
    let out = f.root.join("out");
    ok(&["--config", cfg, "train-seg", "--source", s(&f.source), "--out-dir", s(&out)]);
    let seg = out.join("checkpoints/segmenter.ckpt");
    assert!(seg.exists());
    let log = fs::read_to_string(out.join("logs/train-seg.jsonl")).unwrap();
    assert!(log.starts_with("{\"config\""));
    assert_eq!(log.lines().count(), 1 + 2);

    ok(&[
        "--config", cfg, "train-uda", "--source", s(&f.source), "--target", s(&f.target), "--segmenter", s(&seg),
        "--out-dir", s(&out),
    ]);
    let uda = out.join("checkpoints/uda.ckpt");
    assert!(uda.exists());

    ok(&["--config", cfg, "transform", "--uda", s(&uda), "--target", s(&f.target), "--out-dir", s(&out)]);
    let manifest = fs::read_to_string(out.join("transforms/uda/manifest.tsv")).unwrap();
    let pngs = fs::read_dir(out.join("transforms/uda/images")).unwrap().count();
    assert_eq!(manifest.lines().count(), pngs);
    assert_eq!(pngs, seuda::data::apportion(12, &[7, 1, 2]).unwrap()[2]);

    let bench = |dir: &Path, config: &str| {
        ok(&[
            "--config", config, "bench", "--settings", "S-test,T-noDA", "--source", s(&f.source), "--target",
            s(&f.target), "--segmenter", s(&seg), "--out-dir", s(dir),
        ])
    };
    let b1 = out.join("bench1");
    let table = bench(&b1, cfg);
    let rows = table.lines().filter(|l| l.starts_with("| S-test") || l.starts_with("| T-noDA")).count();
    assert_eq!(rows, 2);

    // Re-running from the config embedded in a report reproduces it.
    let report = b1.join("reports/T-noDA.jsonl");
    let b2 = out.join("bench2");
    bench(&b2, s(&report));
    assert_eq!(fs::read(&report).unwrap(), fs::read(b2.join("reports/T-noDA.jsonl")).unwrap());

    let st = out.join("stab");
    ok(&[
        "--config", cfg, "stability", "--seeds", "3,3", "--lambdas", "0,0.5", "--source", s(&f.source), "--target",
        s(&f.target), "--segmenter", s(&seg), "--out-dir", s(&st),
    ]);
    let body: serde_json::Value = serde_json::from_str(&fs::read_to_string(st.join("reports/stability.json")).unwrap()).unwrap();
    let entries = body["report"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for e in entries {
        assert_eq!(e["dice_std"].as_f64(), Some(0.0));
    }
}

#[test]
fn flags_override_config_file() {
    let f = fixture();
    let out = f.root.join("o");
    ok(&[
        "--config", s(&f.config), "--epochs", "1", "--seed", "7", "train-seg", "--source", s(&f.source), "--out-dir",
        s(&out),
    ]);
    let log = fs::read_to_string(out.join("logs/train-seg.jsonl")).unwrap();
    let head: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(head["config"]["seed"], 7);
    assert_eq!(head["config"]["seg_epochs"], 1);
    assert_eq!(log.lines().count(), 2);
}
