use std::path::Path;

use lanechange::cli::{run_with_output, EXIT_CONFIG, EXIT_OK};

fn run(dir: &Path, args: &[&str]) -> (i32, String) {
    let mut full = vec!["lanechange".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    full.extend(["--out".to_string(), dir.display().to_string()]);
    let mut out = Vec::new();
    let code = run_with_output(full, &mut out);
    (code, String::from_utf8(out).unwrap())
}

const FAST: [&str; 4] = [
    "--set",
    "filter.joint_particles=200",
    "--set",
    "filter.aggressiveness_particles=200",
];

#[test]
fn episode_writes_trace_and_summary() {
    let d = tempfile::tempdir().unwrap();
    let mut args = vec!["episode", "--seed", "7", "--planner", "pomcpow", "--iterations", "30"];
    args.extend(FAST);
    let (code, out) = run(d.path(), &args);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("planner pomcpow seed 7 "), "{out}");
    let trace = std::fs::read_to_string(d.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,vehicle,x,y,vx,vy,"));
    assert!(trace.lines().count() > 2);
    for f in ["config.toml", "manifest.txt"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(d.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains(env!("CARGO_PKG_VERSION")));

    let d2 = tempfile::tempdir().unwrap();
    let (_, out2) = run(d2.path(), &args);
    assert_eq!(out, out2);
    assert_eq!(trace, std::fs::read_to_string(d2.path().join("trace.csv")).unwrap());
}

#[test]
fn pareto_has_a_row_per_lambda_and_planner() {
    let d = tempfile::tempdir().unwrap();
    let mut args = vec![
        "pareto",
        "--episodes",
        "2",
        "--iterations",
        "20",
        "--planner",
        "assume_normal",
        "--planner",
        "mean_state_mdp",
    ];
    args.extend(FAST);
    let (code, _) = run(d.path(), &args);
    assert_eq!(code, EXIT_OK);
    let csv = std::fs::read_to_string(d.path().join("pareto.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("planner,lambda,n,success_rate,unsafe_rate,safe_and_successful,hard_brakes_per_km"));
    assert_eq!(lines.count(), 5 * 2);
    assert!(d.path().join("plots/pareto_assume_normal.csv").exists());
}

#[test]
fn config_errors_exit_with_code_two() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "planner.iterations = 0\n").unwrap();
    let (code, _) = run(d.path(), &["pareto", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    let (code, _) = run(d.path(), &["pareto", "--config", "/no/such/file.toml"]);
    assert_eq!(code, EXIT_CONFIG);
    let (code, _) = run(d.path(), &["episode", "--planner", "greedy"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn validate_passes() {
    let d = tempfile::tempdir().unwrap();
    let (code, out) = run(d.path(), &["validate", "--set", "validate.fuzz_episodes=20"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let target = d.path().join("from_env");
    std::env::set_var("LANECHANGE_OUT", &target);
    let mut out = Vec::new();
    let code = run_with_output(["lanechange", "validate", "--set", "validate.fuzz_episodes=2"], &mut out);
    std::env::remove_var("LANECHANGE_OUT");
    assert_eq!(code, EXIT_OK);
    assert!(target.join("validate.txt").exists());
}
