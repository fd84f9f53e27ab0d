use std::path::Path;
use std::process::Command;

fn ratioctl(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ratioctl")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    std::fs::write(&path, "record_states = false\n[timing]\nmax_experiment = 240.0\n[controllers.mpc]\nga_generations = 2\n").unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_bundle_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("sim");
    let o = ratioctl(&["simulate", "--controller", "bangbang", "--seed", "4", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trial_bangbang_0.csv", "inputs_bangbang_0.csv", "decisions_bangbang_0.csv", "report.json", "table3.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let table = std::fs::read_to_string(out.join("table3.csv")).unwrap();
    assert!(table.starts_with("controller,e_bar,e_bar_f,t_s_mean\nbangbang,"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["manifest"]["seed"], 4);
    assert_eq!(report["manifest"]["config"]["timing"]["max_experiment"], 240.0);
    assert!(report["manifest"]["version"].as_str().unwrap().starts_with('v'));
}

#[test]
fn campaign_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = ratioctl(&["campaign", "--mode", "agent", "--trials", "2", "--seed", "9", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for k in ["bangbang", "pi", "mpc"] {
            for j in 0..2 {
                assert!(out.join(format!("trial_{k}_{j}.csv")).exists());
                assert!(out.join(format!("events_{k}_{j}.csv")).exists());
            }
        }
        tables.push(std::fs::read(out.join("table3.csv")).unwrap());
        tables.push(std::fs::read(out.join("trial_mpc_1.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[2]);
    assert_eq!(tables[1], tables[3]);
    assert_eq!(String::from_utf8_lossy(&tables[0]).lines().count(), 4);
}

#[test]
fn equilibria_lists_three_points_without_input() {
    let dir = tempfile::tempdir().unwrap();
    let o = ratioctl(&["equilibria", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.matches("stable").count() - text.matches("unstable").count(), 2);
    assert!(text.contains("saddle"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("equilibria.json")).unwrap()).unwrap();
    assert_eq!(json["equilibria"].as_array().unwrap().len(), 3);
}

#[test]
fn rejects_bad_arguments() {
    assert!(!ratioctl(&["simulate", "--controller", "pid"]).status.success());
    assert!(!ratioctl(&["campaign", "--mode", "sometimes"]).status.success());
    assert!(!ratioctl(&["simulate", "--trials", "3"]).status.success());
    assert!(!ratioctl(&["equilibria", "--u-a", "500"]).status.success());
    assert!(!ratioctl(&["simulate", "--config", "/nonexistent/cfg.toml"]).status.success());
}
