use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prefview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefview"))
        .args(args)
        .env_remove("PREFVIEW_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = r#"{
  "seed": 5,
  "reconstructions_per_round": 4,
  "voxel_resolution": 24,
  "ppo_updates_per_iteration": 2,
  "ppo": {"n_steps": 64},
  "reward": {"epochs": 3},
  "eval_episodes": 3
}"#;

fn init_small(root: &Path) -> String {
    let cfg = root.join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let dir = root.join("exp");
    ok(&prefview(&["init", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]));
    dir.to_str().unwrap().to_string()
}

fn lines(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn init_run_evaluate_export() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = init_small(tmp.path());
    let d = Path::new(&dir);
    for f in ["config.json", "scene.json", "state.json", "trajectories.jsonl", "preferences.jsonl"] {
        assert!(d.join(f).exists(), "{f}");
    }
    for sub in ["checkpoints", "frames", "reports", "reconstructions", "logs"] {
        assert!(d.join(sub).is_dir(), "{sub}");
    }

    let out = ok(&prefview(&["run", "--dir", &dir, "--iterations", "1", "--labeler", "oracle"]));
    assert!(out.contains("iteration 0:"), "{out}");
    assert_eq!(lines(&d.join("preferences.jsonl")), 2);
    assert_eq!(lines(&d.join("logs/updates.jsonl")), 2);

    let first = ok(&prefview(&["evaluate", "--dir", &dir, "--against", "random"]));
    let saved = fs::read(d.join("reports/evaluation.json")).unwrap();
    let second = ok(&prefview(&["evaluate", "--dir", &dir, "--against", "random"]));
    assert_eq!(first, second);
    assert_eq!(saved, fs::read(d.join("reports/evaluation.json")).unwrap());
    assert!(first.contains("learned") && first.contains("random"));

    ok(&prefview(&["export", "--dir", &dir]));
    let curve = fs::read_to_string(d.join("reports/reward_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2);
    let snapshot: Vec<Vec<u8>> = ["reward_curve.csv", "path_length.csv", "metrics.csv", "summary.json"]
        .iter()
        .map(|f| fs::read(d.join("reports").join(f)).unwrap())
        .collect();
    ok(&prefview(&["export", "--dir", &dir]));
    for (f, before) in ["reward_curve.csv", "path_length.csv", "metrics.csv", "summary.json"].iter().zip(&snapshot) {
        assert_eq!(&fs::read(d.join("reports").join(f)).unwrap(), before, "{f} changed on re-export");
    }
    let summary: serde_json::Value = serde_json::from_slice(&snapshot[3]).unwrap();
    assert_eq!(summary["preference_lines"], lines(&d.join("preferences.jsonl")));
    assert_eq!(summary["per_iteration"][0]["records"], 2);
    assert_eq!(lines(&d.join("reports/path_length.csv")), 1 + 3);
    assert!(d.join("frames/eval-reference-00.png").exists());
}

#[test]
fn env_seed_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let dir = tmp.path().join("exp");
    let out = Command::new(env!("CARGO_BIN_EXE_prefview"))
        .args(["init", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .env("PREFVIEW_SEED", "77")
        .output()
        .unwrap();
    ok(&out);
    let c: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(c["seed"], 77);
}

#[test]
fn errors_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = init_small(tmp.path());

    // init refuses a non-empty directory
    let again = prefview(&["init", "--out", &dir]);
    assert!(!again.status.success());

    // a held lock blocks a second orchestrator
    fs::write(Path::new(&dir).join(".lock"), "1").unwrap();
    let locked = prefview(&["run", "--dir", &dir, "--iterations", "1"]);
    assert!(!locked.status.success());
    assert!(String::from_utf8_lossy(&locked.stderr).contains("locked"));
    fs::remove_file(Path::new(&dir).join(".lock")).unwrap();

    // export before any iteration
    let early = prefview(&["export", "--dir", &dir]);
    assert!(!early.status.success());

    let bad = prefview(&["run", "--dir", &dir, "--labeler", "crowd"]);
    assert!(!bad.status.success());

    let missing = prefview(&["evaluate", "--dir", tmp.path().join("nope").to_str().unwrap()]);
    assert!(!missing.status.success());

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"reconstructions_per_round": 3}"#).unwrap();
    let invalid = prefview(&["init", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!invalid.status.success());
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("even"));
}

#[test]
fn zero_iterations_matches_random_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = init_small(tmp.path());
    ok(&prefview(&["evaluate", "--dir", &dir]));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(Path::new(&dir).join("reports/evaluation.json")).unwrap()).unwrap();
    assert_eq!(report["policy_version"], 0);
    assert_eq!(report["policy"], report["random"]);
}
