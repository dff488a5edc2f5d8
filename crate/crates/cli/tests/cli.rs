use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn netalloc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netalloc"))
        .args(args)
        .current_dir(dir)
        .env_remove("NETALLOC_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_scenario(dir: &Path, name: &str, seed: &str) {
    let o = netalloc(&["generate", "--subcarriers", "6", "--seed", seed, "--out", name], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path(), "a.json", "7");
    small_scenario(dir.path(), "b.json", "7");
    small_scenario(dir.path(), "c.json", "8");
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_ne!(read("a.json"), read("c.json"));
}

#[test]
fn generate_defaults_and_degenerate_link() {
    let dir = tempfile::tempdir().unwrap();
    assert!(netalloc(&["generate", "--out", "d.json"], dir.path()).status.success());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    let params = &json["params"];
    assert_eq!(params["num_cells"], 3);
    assert_eq!(params["num_subcarriers"], 32);
    assert_eq!(params["users_per_cell"], serde_json::json!([2, 2, 2]));
    assert_eq!(params["cell_radius"], 40.0);
    assert_eq!(params["noise_power"], 1e-6);
    assert_eq!(params["snr_gap"], 1.0);
    assert_eq!(params["weights"], serde_json::json!([1.0, 1.0, 1.0]));
    let o = netalloc(&["generate", "--cells", "1", "--users-per-cell", "1", "--out", "one.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn bad_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = netalloc(&["generate", "--cells", "three"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = netalloc(&["generate", "--cells", "0", "--out", "x.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn solve_trace_crosses_psi_at_reported_iteration() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path(), "s.json", "3");
    let o = netalloc(&["solve", "s.json", "--method", "ocd", "--psi", "0.1", "--rounds", "1", "--out", "t.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stderr(&o);
    assert!(summary.contains("converged=true"), "{summary}");
    let iterations: usize = summary
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("iterations="))
        .unwrap()
        .parse()
        .unwrap();
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "round,phase,iter,wsmr,delta_p_norm,messages,bytes,elapsed_s");
    let power: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect::<Vec<_>>()).filter(|f| f[1] == "power").collect();
    assert_eq!(power.len(), iterations);
    let deltas: Vec<f64> = power.iter().map(|f| f[4].parse().unwrap()).collect();
    assert!(deltas[iterations - 1] < 0.1);
    assert!(deltas[..iterations - 1].iter().all(|&d| d >= 0.1));
}

#[test]
fn lr_trace_has_same_schema() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path(), "s.json", "3");
    let o = netalloc(&["solve", "s.json", "--method", "lr", "--rounds", "1", "--max-iter", "30"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("round,phase,iter,wsmr,delta_p_norm,messages,bytes,elapsed_s\n"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8));
}

#[test]
fn solve_without_timing_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    small_scenario(dir.path(), "s.json", "4");
    let run = || netalloc(&["solve", "s.json", "--no-timing"], dir.path()).stdout;
    assert_eq!(run(), run());
}

#[test]
fn missing_scenario_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = netalloc(&["solve", "nowhere.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.json"));
}

#[test]
fn malformed_scenario_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\"params\": 3}").unwrap();
    let o = netalloc(&["solve", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"));
}

#[test]
fn montecarlo_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["montecarlo", "--realizations", "10", "--subcarriers", "4", "--seed", "9", "--rounds", "2"];
    let a = netalloc(&args, dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let csv = String::from_utf8(a.stdout.clone()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "seed,method,wsmr,iters_to_psi,converged");
    assert_eq!(lines.count(), 30);
    assert!(stderr(&a).contains("ocd="));
    let b = netalloc(&args, dir.path());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn montecarlo_thread_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["montecarlo", "--realizations", "4", "--subcarriers", "4", "--rounds", "2"];
    let one = Command::new(env!("CARGO_BIN_EXE_netalloc"))
        .args(args)
        .env("NETALLOC_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    let many = Command::new(env!("CARGO_BIN_EXE_netalloc"))
        .args(args)
        .env("NETALLOC_THREADS", "3")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(one.status.success());
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn bad_thread_count_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_netalloc"))
        .args(["oracle", "--count", "1"])
        .env("NETALLOC_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("NETALLOC_THREADS"));
}

#[test]
fn montecarlo_sweep_has_budget_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = netalloc(
        &["montecarlo", "--realizations", "2", "--subcarriers", "4", "--rounds", "1", "--pmax-sweep", "0.5,2", "--out", "e.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(csv.starts_with("p_max,seed,method,wsmr,iters_to_psi,converged\n"));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn oracle_reports_zero_gap_and_refuses_large() {
    let dir = tempfile::tempdir().unwrap();
    let o = netalloc(&["oracle", "--users", "2", "--subcarriers", "10", "--count", "20"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max_relative_gap=0.000000000000e0"));

    let o = netalloc(&["oracle", "--kind", "power", "--users", "2", "--subcarriers", "2", "--count", "5"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    let gap: f64 = out.trim().rsplit('=').next().unwrap().parse().unwrap();
    assert!(gap <= 0.01, "{out}");

    let o = netalloc(&["oracle", "--users", "3", "--subcarriers", "9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("4096"));
    let o = netalloc(&["oracle", "--kind", "power", "--subcarriers", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
