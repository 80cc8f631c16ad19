use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smtw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smtw"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const TINY: &str = r#"{
    "master_seed": 3,
    "env": {"n": 3},
    "dataset": {"train_envs": 4, "demos_per_env": 1, "test_envs_analysis": 2, "test_envs_agent": 2},
    "smtw": {"policy_epochs": 1, "bonus_epochs": 1},
    "agent": {"lrs": [0.5], "repeats": 1, "episodes": 3, "episode_cap": 30}
}"#;

#[test]
fn gen_envs_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = smtw(dir.path(), &["gen-envs", "--n", "5", "--count", "200", "--seed", "7", "--out", name]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 201);
    let strip = |name: &str| {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .replace("a.jsonl", "X")
            .replace("b.jsonl", "X")
    };
    assert_eq!(strip("a.jsonl.manifest.json"), strip("b.jsonl.manifest.json"));
}

#[test]
fn pipeline_runs_end_to_end_and_guards_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.json"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let mut full = vec!["--config", "tiny.json"];
        full.extend_from_slice(args);
        let out = smtw(d, &full);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["gen-envs", "--role", "train", "--out", "train.jsonl"]);
    ok(&["gen-envs", "--role", "test-analysis", "--out", "test.jsonl"]);
    ok(&["gen-envs", "--role", "test-agent", "--out", "agent.jsonl"]);
    ok(&["gen-demos", "--instances", "train.jsonl", "--out", "demos.jsonl"]);
    ok(&["train-smtw", "--instances", "train.jsonl", "--demos", "demos.jsonl", "--out", "model"]);
    for f in ["policy.ckpt.json", "bonus.ckpt.json", "manifest.json"] {
        assert!(d.join("model").join(f).exists(), "{f}");
    }
    ok(&["eval-bonus", "--model", "model", "--instances", "test.jsonl", "--out", "analysis"]);
    for f in ["raw_values.csv", "summary.csv", "orderings.csv", "manifest.json"] {
        assert!(d.join("analysis").join(f).exists(), "{f}");
    }
    ok(&["train-agent", "--model", "model", "--instances", "agent.jsonl", "--threads", "2", "--out", "agent"]);
    let curves = fs::read_to_string(d.join("agent/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3 * 2 * 3);
    let report = ok(&["report", "--analysis", "analysis", "--agent", "agent", "--out", "report"]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")));
    assert!(d.join("report/report.md").exists());

    // rerunning the analysis reproduces it byte for byte
    ok(&["eval-bonus", "--model", "model", "--instances", "test.jsonl", "--out", "analysis2"]);
    for f in ["raw_values.csv", "summary.csv", "orderings.csv", "manifest.json"] {
        assert_eq!(
            fs::read(d.join("analysis").join(f)).unwrap(),
            fs::read(d.join("analysis2").join(f)).unwrap(),
            "{f}"
        );
    }

    // evaluating on training instances is refused
    let out = smtw(d, &["--config", "tiny.json", "eval-bonus", "--model", "model", "--instances", "train.jsonl", "--out", "x"]);
    assert_eq!(code(&out), 6);
    assert!(!d.join("x").exists());

    // an unknown format version is refused
    let text = fs::read_to_string(d.join("test.jsonl")).unwrap().replacen("\"format_version\":1", "\"format_version\":2", 1);
    fs::write(d.join("future.jsonl"), text).unwrap();
    let out = smtw(d, &["--config", "tiny.json", "eval-bonus", "--model", "model", "--instances", "future.jsonl", "--out", "y"]);
    assert_eq!(code(&out), 4);

    // missing input, malformed input, bad config, unknown flag
    let out = smtw(d, &["gen-demos", "--instances", "absent.jsonl"]);
    assert_eq!(code(&out), 3);
    fs::write(d.join("junk.jsonl"), "{\"format_version\":1,\"kind\":\"instances\",\"count\":1}\nnot json\n").unwrap();
    let out = smtw(d, &["gen-demos", "--instances", "junk.jsonl", "--out", "z.jsonl"]);
    assert_eq!(code(&out), 5);
    fs::write(d.join("bad.json"), r#"{"dataset": {"train_envs": 0}}"#).unwrap();
    let out = smtw(d, &["--config", "bad.json", "gen-envs"]);
    assert_eq!(code(&out), 7);
    let out = smtw(d, &["gen-envs", "--frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = smtw(dir.path(), &["verify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().filter(|l| l.starts_with("[PASS]")).count(), 4);
}

#[test]
fn help_documents_every_subcommand() {
    let out = smtw(Path::new("."), &["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["gen-envs", "gen-demos", "train-smtw", "eval-bonus", "train-agent", "report", "verify"] {
        assert!(text.contains(sub), "{sub}");
    }
}
