use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn prefixsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefixsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("PREFIXSIM_SEED")
        .output()
        .expect("spawn prefixsim")
}

fn ok(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = prefixsim(args, dir);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn read(dir: &TempDir, name: &str) -> String {
    std::fs::read_to_string(dir.path().join(name)).unwrap()
}

fn small_trace(dir: &TempDir) {
    ok(&["generate", "--preset", "balanced", "--num-sessions", "60", "--seed", "4", "-o", "t.jsonl"], dir.path());
}

#[test]
fn generate_is_deterministic_and_seed_falls_back_to_env() {
    let d = TempDir::new().unwrap();
    let args = ["generate", "--preset", "tool_use", "--num-sessions", "20", "--seed", "9"];
    let a = ok(&args, d.path());
    let b = ok(&args, d.path());
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let env = Command::new(env!("CARGO_BIN_EXE_prefixsim"))
        .args(["generate", "--preset", "tool_use", "--num-sessions", "20"])
        .env("PREFIXSIM_SEED", "9")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(env.stdout, a);

    // The flag beats the environment.
    let flag = Command::new(env!("CARGO_BIN_EXE_prefixsim"))
        .args(["generate", "--preset", "tool_use", "--num-sessions", "20", "--seed", "10"])
        .env("PREFIXSIM_SEED", "9")
        .output()
        .unwrap();
    assert_ne!(flag.stdout, a);
}

#[test]
fn simulate_format_follows_extension() {
    let d = TempDir::new().unwrap();
    small_trace(&d);
    ok(&["simulate", "--trace", "t.jsonl", "--capacity-fraction", "0.2", "-o", "r.json"], d.path());
    ok(&["simulate", "--trace", "t.jsonl", "--capacity-fraction", "0.2", "-o", "r.csv"], d.path());
    let report: serde_json::Value = serde_json::from_str(&read(&d, "r.json")).unwrap();
    assert_eq!(report["policy"], "saecache");
    assert_eq!(report["schema"], "prefixsim/1");
    let csv = read(&d, "r.csv");
    assert!(csv.starts_with("record,index,"));
    assert!(csv.contains(&format!("summary,,,,,,,,,,,,overall_hit_ratio,{}", report["overall_hit_ratio"])));

    // Same run to stdout, forced to JSON.
    let stdout = ok(&["simulate", "--trace", "t.jsonl", "--capacity-fraction", "0.2", "--format", "json"], d.path());
    assert_eq!(String::from_utf8(stdout).unwrap(), read(&d, "r.json"));
}

#[test]
fn flags_override_config_file() {
    let d = TempDir::new().unwrap();
    std::fs::write(
        d.path().join("exp.toml"),
        "preset = \"balanced\"\nseed = 2\nnum_sessions = 40\n\n[sim]\npolicy = \"lru\"\ncapacity = { fraction = 0.1 }\n",
    )
    .unwrap();
    let from_file: serde_json::Value = serde_json::from_slice(&ok(&["simulate", "-c", "exp.toml"], d.path())).unwrap();
    assert_eq!(from_file["policy"], "lru");
    assert_eq!(from_file["seed"], 2);

    let flagged: serde_json::Value =
        serde_json::from_slice(&ok(&["simulate", "-c", "exp.toml", "--policy", "lfu", "--seed", "3"], d.path())).unwrap();
    assert_eq!(flagged["policy"], "lfu");
    assert_eq!(flagged["seed"], 3);
    assert!(flagged["capacity_blocks"].as_u64().is_some());

    std::fs::write(d.path().join("bad.toml"), "polcy = \"lru\"\n").unwrap();
    let out = prefixsim(&["simulate", "-c", "bad.toml"], d.path());
    assert!(!out.status.success());
}

#[test]
fn sweep_writes_partial_results_and_fails_on_bad_cells() {
    let d = TempDir::new().unwrap();
    let base = ["sweep", "--preset", "balanced", "--num-sessions", "40", "--seed", "1"];
    let mut args = base.to_vec();
    args.extend(["--axis", "policy=lru,saecache", "--axis", "capacity_fraction=0.1,-1", "-o", "s.csv"]);
    let out = prefixsim(&args, d.path());
    assert!(!out.status.success());
    let csv = read(&d, "s.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("cell,sweep_policy,sweep_capacity_fraction,policy,"));
    assert!(lines[1].starts_with("0,lru,0.1,lru,"));
    assert!(lines[2].contains("must be positive"));
    assert!(lines[3].starts_with("2,saecache,0.1,saecache,"));
}

#[test]
fn sweep_output_does_not_depend_on_jobs() {
    let d = TempDir::new().unwrap();
    let run = |jobs: &str| {
        ok(
            &["sweep", "--preset", "multi_turn_dominant", "--num-sessions", "40", "--axis", "capacity_fraction=0.05,0.1,0.2", "-j", jobs, "--format", "json"],
            d.path(),
        )
    };
    let one = run("1");
    assert_eq!(one, run("3"));
    let rows: serde_json::Value = serde_json::from_slice(&one).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
}

#[test]
fn sweep_needs_an_axis() {
    let d = TempDir::new().unwrap();
    assert!(!prefixsim(&["sweep", "--preset", "balanced"], d.path()).status.success());
}

#[test]
fn fit_writes_both_tables() {
    let d = TempDir::new().unwrap();
    small_trace(&d);
    let csv = String::from_utf8(ok(&["fit", "--trace", "t.jsonl", "--thresholds", "0,1,2"], d.path())).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("table,model,threshold_s"));
    assert_eq!(lines.iter().filter(|l| l.starts_with("fit,")).count(), 3);
    assert_eq!(lines.iter().filter(|l| l.starts_with("threshold,")).count(), 3);
}

#[test]
fn trained_model_drives_simulation() {
    let d = TempDir::new().unwrap();
    small_trace(&d);
    ok(
        &["train-predictor", "--trace", "t.jsonl", "--epochs", "4", "--hidden", "8,4", "--seed", "1", "--model-out", "m.json", "--curve-out", "c.csv"],
        d.path(),
    );
    let curve = read(&d, "c.csv");
    assert_eq!(curve.lines().next(), Some("epoch,loss,accuracy"));
    assert_eq!(curve.lines().count(), 5);
    let model = read(&d, "m.json");
    ok(
        &["train-predictor", "--trace", "t.jsonl", "--epochs", "4", "--hidden", "8,4", "--seed", "1", "--model-out", "m2.json", "--curve-out", "c2.csv"],
        d.path(),
    );
    assert_eq!(model, read(&d, "m2.json"));

    let r: serde_json::Value = serde_json::from_slice(&ok(&["simulate", "--trace", "t.jsonl", "--model", "m.json"], d.path())).unwrap();
    assert!(r["overall_hit_ratio"].as_f64().unwrap() > 0.0);

    let no_model = prefixsim(&["simulate", "--trace", "t.jsonl", "--predictor", "mlp"], d.path());
    assert!(!no_model.status.success());
}

#[test]
fn characterize_and_probe() {
    let d = TempDir::new().unwrap();
    ok(&["generate", "--probe", "--probe-requests", "300", "-o", "p.jsonl"], d.path());
    let r: serde_json::Value = serde_json::from_slice(&ok(&["characterize", "--trace", "p.jsonl"], d.path())).unwrap();
    assert_eq!(r["num_requests"], 300);
    assert_eq!(r["evictions"], 0);
    assert!(r["per_type_reuse"]["system_prompt"]["combined_pct"].as_f64().unwrap() > 80.0);
}

#[test]
fn errors_exit_nonzero() {
    let d = TempDir::new().unwrap();
    for args in [
        &["simulate", "--preset", "nope"][..],
        &["simulate", "--trace", "missing.jsonl"],
        &["simulate", "--preset", "balanced", "--trace", "x.jsonl"],
        &["simulate", "--preset", "balanced", "--capacity-fraction", "0"],
    ] {
        let out = prefixsim(args, d.path());
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
