use std::path::Path;
use std::process::{Command, Output};

fn flycl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flycl")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"seed = 3

[data.synthetic]
prototypes = 8
dim = 12
classes = 4
xi = 0.4
noise = 0.05
train_per_prototype = 10
test_per_prototype = 5

[model]
learner = "fly"
m = 200
l = 10

[protocol]
classes_per_task = 2
seeds = 2

[output]
weights = "csv"
"#;

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let out = dir.path().join("out");
    let o = flycl(&["run", "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // the config is echoed byte for byte
    assert_eq!(std::fs::read_to_string(out.join("config.toml")).unwrap(), SMALL_CONFIG);
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("seed,task_index,metric,value"));
    // two seeds, two tasks, four metrics
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let files = summary["weight_files"].as_array().unwrap();
    assert_eq!(files.len(), 2);
    for f in files {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f}");
    }
}

#[test]
fn active_units_beyond_expansion_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, SMALL_CONFIG.replace("l = 10", "l = 201")).unwrap();
    let o = flycl(&["run", "--config", s(&config), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.l"));
    assert!(!dir.path().join("out").join("summary.json").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, SMALL_CONFIG.replace("m = 200", "m = 200\nwidth = 3")).unwrap();
    let o = flycl(&["run", "--config", s(&config), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = flycl(&["run", "--config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(flycl(&["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(flycl(&["run"]).status.code(), Some(1));
    assert_eq!(flycl(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_jobs_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let o = flycl(&["run", "--config", s(&config), "--jobs", "0", "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synth_writes_one_row_per_copy() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let o = flycl(&["synth", "--prototypes", "20", "--per-prototype", "200", "--seed", "4", "--out", s(path)]);
        assert!(o.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next(), Some("d=50,k=10"));
    assert_eq!(text.lines().count(), 1 + 20 * 200);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn noise_free_synth_repeats_each_prototype() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    let o = flycl(&["synth", "--prototypes", "3", "--dim", "5", "--classes", "3", "--noise", "0", "--per-prototype", "4", "--out", s(&path)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    for block in rows.chunks(4) {
        assert!(block.iter().all(|r| *r == block[0]));
    }
    assert_ne!(rows[0], rows[4]);
}

#[test]
fn held_out_split_shares_prototypes() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    let o = flycl(&[
        "synth", "--prototypes", "3", "--dim", "5", "--classes", "3", "--noise", "0", "--per-prototype", "2",
        "--out", s(&train), "--test-out", s(&test), "--test-per-prototype", "1",
    ]);
    assert!(o.status.success());
    let train = std::fs::read_to_string(&train).unwrap();
    let test = std::fs::read_to_string(&test).unwrap();
    // without noise every held-out row is a training row
    let rows: Vec<&str> = train.lines().collect();
    assert_eq!(test.lines().count(), 1 + 3);
    assert!(test.lines().all(|r| rows.contains(&r)));
}

#[test]
fn inspect_reports_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    std::fs::write(&path, "d=2,k=2\n5,0,1\n9,1,0\n5,1,1\n").unwrap();
    let o = flycl(&["inspect", s(&path)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dim"], 2);
    assert_eq!(v["classes"], 2);
    assert_eq!(v["class_counts"], serde_json::json!([2, 1]));
}

#[test]
fn theorem_report_on_orthogonal_prototypes() {
    let dir = tempfile::tempdir().unwrap();
    let o = flycl(&["theory", "theorem1", "--xi", "0", "--prototypes", "4", "--classes", "2", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("theorem1.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["pass"], 1);
    assert_eq!(v["report"]["fail"], 0);
}

#[test]
fn hijack_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = flycl(&["theory", "hijack", "--out", s(dir.path())]);
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("hijack.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["v1_hijacked"], true);
    assert_eq!(v["report"]["v4_stable"], true);
}
