use std::path::Path;
use std::process::{Command, Output};

fn rsmec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsmec")).args(args).output().expect("run rsmec")
}

fn ok(args: &[&str]) {
    let out = rsmec(args);
    assert!(out.status.success(), "rsmec {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// Tiny system so every mode finishes in seconds.
const SMALL: &str = "users = 2\nantennas = 2\nirs_elements = 4\nslots = 3\nstate_scale_draws = 8\n\
pooled_len = 4\ndense_width = 8\nhead_width = 8\nbatch = 4\nbuffer_capacity = 64\n";

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.txt");
    std::fs::write(&p, SMALL).unwrap();
    p.display().to_string()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn eval_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["--mode", "eval", "--config", &cfg, "--seeds", "7", "--eval-episodes", "4", "--trace", "--out", out.to_str().unwrap()]);
    }
    for f in ["metrics.csv", "manifest.json", "config.txt", "trace_full-local_seed7.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let text = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(text.starts_with("# version: "));
    assert!(text.contains("# config_hash: "));
    assert!(text.contains("# seeds: 7\n"));
    let rows = data_rows(&a.join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "full-local");
    assert_eq!(rows[0][6], "7");
}

#[test]
fn train_one_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    ok(&["--mode", "train", "--config", &cfg, "--episodes", "1", "--seeds", "3", "--out", out.to_str().unwrap()]);
    let json: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("agent") && n.ends_with(".json"))
        .collect();
    assert_eq!(json, vec!["agent_seed3.json".to_string()]);
    assert!(out.join("agent_seed3.bin").exists());
    assert!(!out.join("checkpoints_seed3").exists());
    let rows = data_rows(&out.join("train_log_seed3.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "0");
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["mode"], "train");
    assert_eq!(manifest["provenance"]["seeds"][0], 3);
    let ckpt: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("agent_seed3.json")).unwrap()).unwrap();
    assert_eq!(ckpt["meta"]["extra"]["run"]["seed"], 3);
    assert_eq!(ckpt["meta"]["extra"]["run"]["config_hash"].as_str().unwrap().len(), 16);

    // The trained agent serves learned policies in eval mode.
    let ev = dir.path().join("eval");
    ok(&[
        "--mode",
        "eval",
        "--config",
        &cfg,
        "--seeds",
        "3",
        "--eval-episodes",
        "2",
        "--policies",
        "cdeh,exhaustive,noma",
        "--checkpoint",
        out.join("agent_seed{seed}.json").to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
    ]);
    let rows = data_rows(&ev.join("metrics.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["cdeh", "exhaustive", "noma"]);
}

#[test]
fn sweep_rows_per_policy_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    ok(&[
        "--mode",
        "sweep",
        "--config",
        &cfg,
        "--sweep-axis",
        "K",
        "--sweep-values",
        "20,10",
        "--seeds",
        "1,2",
        "--episodes",
        "2",
        "--eval-episodes",
        "2",
        "--policies",
        "cdeh,direct,full-local",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = data_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 3 * 2 * 2);
    for policy in ["cdeh", "direct", "full-local"] {
        assert_eq!(rows.iter().filter(|r| r[0] == policy).count(), 2 * 2);
    }
    // Values ascending, then seeds, then policies.
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[2].clone(), r[6].clone())).collect();
    assert_eq!(keys[0], ("10".into(), "1".into()));
    assert_eq!(keys[3], ("10".into(), "2".into()));
    assert_eq!(keys[6], ("20".into(), "1".into()));
    assert!(rows.iter().all(|r| r[1] == "K"));
    // Full-local ignores the IRS entirely.
    let local: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == "full-local" && r[6] == "1").collect();
    assert_eq!(local[0][3], local[1][3]);
    assert!(out.join("points/K=10_seed1/agent.json").exists());
}

#[test]
fn resume_continues_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.txt");
    std::fs::write(&cfg_path, format!("{SMALL}checkpoint_every = 2\n")).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    ok(&["--mode", "train", "--config", cfg, "--episodes", "3", "--out", o]);
    assert!(out.join("checkpoints_seed0/ckpt_2.json").exists());
    ok(&["--mode", "train", "--config", cfg, "--episodes", "5", "--resume", "--out", o]);
    let rows = data_rows(&out.join("train_log_seed0.csv"));
    let episodes: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(episodes, ["0", "1", "2", "3", "4"]);
    assert!(out.join("checkpoints_seed0/ckpt_4.json").exists());
}

#[test]
fn bad_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "users = 3\n# comment\nantennas = four\n").unwrap();
    let out = rsmec(&["--mode", "eval", "--config", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn learned_policy_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = rsmec(&["--mode", "eval", "--policies", "cdeh", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn dqn_only_trains_and_evaluates_beside_cdeh() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("cdeh"), dir.path().join("dqn"));
    ok(&["--mode", "train", "--config", &cfg, "--episodes", "2", "--out", a.to_str().unwrap()]);
    ok(&["--mode", "train", "--config", &cfg, "--episodes", "2", "--learner", "dqn-only", "--out", b.to_str().unwrap()]);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["learner"], "dqn-only");

    let ev = dir.path().join("eval");
    let (ca, cb) = (a.join("agent_seed{seed}.json"), b.join("agent_seed{seed}.json"));
    let eval = |extra: &[&str]| {
        let mut v = vec!["--mode", "eval", "--config", &cfg, "--eval-episodes", "2", "--out", ev.to_str().unwrap()];
        v.extend_from_slice(extra);
        rsmec(&v)
    };
    let out = eval(&["--checkpoint", ca.to_str().unwrap(), "--checkpoint", cb.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = data_rows(&ev.join("metrics.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert!(names.contains(&"cdeh".to_string()) && names.contains(&"dqn-only".to_string()));

    // Only the DQN-only agent: CDEH presets are not served.
    let out = eval(&["--checkpoint", cb.to_str().unwrap(), "--policies", "cdeh"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cdeh agent"));
    let out = eval(&["--checkpoint", cb.to_str().unwrap(), "--checkpoint", cb.to_str().unwrap()]);
    assert!(!out.status.success());

    // A sweep trains the learners its policies need.
    let sw = dir.path().join("sweep");
    ok(&[
        "--mode", "sweep", "--config", &cfg, "--sweep-axis", "pmax", "--sweep-values", "1", "--episodes", "1", "--eval-episodes", "1",
        "--policies", "dqn-only,full-local", "--out", sw.to_str().unwrap(),
    ]);
    let point = sw.join("points/pmax=1_seed0");
    assert!(point.join("dqn-only_agent.json").exists());
    assert!(!point.join("agent.json").exists());
}
