use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn fedtd(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedtd"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("FEDTD_THREADS", t),
        None => cmd.env_remove("FEDTD_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn base_spec() -> Value {
    json!({
        "family": {"n": 10, "d": 3, "gamma": 0.9, "epsilon": 0.05, "epsilon1": 0.1, "n_agents": 4, "seed": 11},
        "run": {
            "local_steps": 5,
            "rounds": 200,
            "local_step_size": 0.05,
            "sampling_mode": "markov",
            "seeds": [1, 2],
            "sweep_agents": [1, 2, 4]
        }
    })
}

fn write_spec(dir: &Path, spec: &Value) -> PathBuf {
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

fn run_cmd(sub: &str, spec: &Value, extra: &[&str]) -> (TempDir, Output) {
    let dir = TempDir::new().unwrap();
    let spec_path = write_spec(dir.path(), spec);
    let out_dir = dir.path().join("out");
    let mut args = vec![
        sub,
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = fedtd(&args, None);
    (dir, out)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&fedtd(&["--help"], None)), 0);
    assert_eq!(code(&fedtd(&["--version"], None)), 0);
    assert_eq!(code(&fedtd(&["run", "--help"], None)), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&fedtd(&[], None)), 1);
    assert_eq!(code(&fedtd(&["frobnicate"], None)), 1);
    assert_eq!(code(&fedtd(&["run"], None)), 1);
    assert_eq!(code(&fedtd(&["run", "--spec", "/nonexistent/spec.json"], None)), 1);
}

#[test]
fn malformed_and_invalid_specs_exit_one() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(code(&fedtd(&["run", "--spec", path.to_str().unwrap()], None)), 1);

    let mut spec = base_spec();
    spec["family"]["gamma"] = json!(1.5);
    assert_eq!(code(&run_cmd("run", &spec, &[]).1), 1);

    let mut spec = base_spec();
    spec["run"]["unknown_field"] = json!(true);
    assert_eq!(code(&run_cmd("run", &spec, &[]).1), 1);
}

#[test]
fn bad_thread_count_exits_one() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), &base_spec());
    let out = dir.path().join("o");
    let args = ["run", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(code(&fedtd(&args, Some("0"))), 1);
    assert_eq!(code(&fedtd(&args, Some("lots"))), 1);
}

#[test]
fn generate_writes_family_file() {
    let (dir, out) = run_cmd("generate", &base_spec(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let family = read_json(&dir.path().join("out/family.json"));
    assert_eq!(family["n"], 10);
    assert_eq!(family["gamma"], 0.9);
    assert_eq!(family["r_max"], 1.0);
    let agents = family["agents"].as_array().unwrap();
    assert_eq!(agents.len(), 4);
    for a in agents {
        let p = a["P"].as_array().unwrap();
        assert_eq!(p.len(), 10);
        for row in p {
            let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(a["R"].as_array().unwrap().len(), 10);
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pair (0, 1)"));
    assert!(!stdout.contains("NOT ergodic"));
}

#[test]
fn unreachable_heterogeneity_exits_two() {
    let mut spec = base_spec();
    spec["family"] = json!({"n": 3, "d": 1, "gamma": 0.9, "epsilon": 0.9, "epsilon1": 0.1, "n_agents": 50, "seed": 1});
    let (_dir, out) = run_cmd("generate", &spec, &[]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_trace_and_summary() {
    let mut spec = base_spec();
    spec["outputs"] = json!({"emit_svg": true});
    let (dir, out) = run_cmd("run", &spec, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    for seed in [1, 2] {
        let text = std::fs::read_to_string(out_dir.join(format!("trace_seed{seed}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,err_sq_agent1,err_sq_agent_min,err_sq_agent_max,err_sq_virtual,dbar_value_err_agent1"
        );
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 201);
        for (t, r) in rows.iter().enumerate() {
            assert_eq!(r[0], t as f64);
            assert!(r[2] <= r[1] && r[1] <= r[3]);
        }
    }
    let summary = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(summary["diverged_seeds"], 0);
    assert_eq!(summary["spec"]["run"]["rounds"], 200);
    assert_eq!(summary["seeds"][0]["averaged_iterate"].as_array().unwrap().len(), 3);
    let systems = read_json(&out_dir.join("systems.json"));
    assert_eq!(systems["agents"].as_array().unwrap().len(), 4);
    assert!(systems["virtual"]["kappa"].as_f64().unwrap() >= 1.0);
    let svg = std::fs::read_to_string(out_dir.join("error.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn family_file_reproduces_generated_run() {
    let (dir, out) = run_cmd("generate", &base_spec(), &[]);
    assert_eq!(code(&out), 0);
    let family = dir.path().join("out/family.json");
    let (a, out_a) = run_cmd("run", &base_spec(), &[]);
    let (b, out_b) = run_cmd("run", &base_spec(), &["--family", family.to_str().unwrap()]);
    assert_eq!(code(&out_a), 0);
    assert_eq!(code(&out_b), 0);
    let ta = std::fs::read(a.path().join("out/trace_seed1.csv")).unwrap();
    let tb = std::fs::read(b.path().join("out/trace_seed1.csv")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn family_mismatch_exits_one() {
    let (dir, _) = run_cmd("generate", &base_spec(), &[]);
    let family = dir.path().join("out/family.json");
    let mut spec = base_spec();
    spec["family"]["n_agents"] = json!(3);
    let (_d, out) = run_cmd("run", &spec, &["--family", family.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn all_seeds_diverging_exits_three() {
    let mut spec = base_spec();
    spec["run"]["local_step_size"] = json!(50.0);
    spec["run"]["projection"] = json!("disabled");
    spec["run"]["sampling_mode"] = json!("iid");
    let (dir, out) = run_cmd("run", &spec, &[]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("out/summary.json"));
    assert_eq!(summary["diverged_seeds"], 2);
    assert_eq!(summary["seeds"][0]["diverged"], true);
}

#[test]
fn projection_prevents_divergence() {
    let mut spec = base_spec();
    spec["run"]["local_step_size"] = json!(50.0);
    spec["run"]["sampling_mode"] = json!("iid");
    let (_dir, out) = run_cmd("run", &spec, &[]);
    assert_eq!(code(&out), 0);
}

#[test]
fn sweep_reports_every_agent_count() {
    let (dir, out) = run_cmd("sweep", &base_spec(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = read_json(&dir.path().join("out/sweep.json"));
    let points = sweep["points"].as_array().unwrap();
    let counts: Vec<u64> = points.iter().map(|p| p["n_agents"].as_u64().unwrap()).collect();
    assert_eq!(counts, vec![1, 2, 4]);
    assert_eq!(points[0]["speedup"], 1.0);
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 6);
    assert!(dir.path().join("out/sweep_N4_seed2.csv").exists());
}

#[test]
fn sweep_without_single_agent_baseline_exits_one() {
    let mut spec = base_spec();
    spec["run"]["sweep_agents"] = json!([2, 4]);
    assert_eq!(code(&run_cmd("sweep", &spec, &[]).1), 1);
}

#[test]
fn verify_bounds_reports_checks() {
    let mut spec = base_spec();
    spec["family"]["epsilon"] = json!(1e-3);
    spec["family"]["epsilon1"] = json!(1e-3);
    let (dir, out) = run_cmd("verify-bounds", &spec, &[]);
    assert_eq!(code(&out), 0);
    let report = read_json(&dir.path().join("out/bounds.json"));
    assert_eq!(report["failures"], 0);
    let names: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for expected in [
        "stationary_l1_gap",
        "a_bar_gap",
        "b_bar_gap",
        "theta_star_gap",
        "pseudo_gradient_heterogeneity",
    ] {
        assert!(names.contains(&expected), "missing {expected}");
    }
}

fn bias_spec() -> Value {
    json!({
        "family": {"n": 6, "d": 3, "gamma": 0.8, "epsilon": 0.1, "epsilon1": 0.1, "n_agents": 2, "seed": 4},
        "run": {
            "local_steps": 1,
            "rounds": 10,
            "local_step_size": 0.1,
            "sampling_mode": "meanpath",
            "seeds": [0],
            "bias_rounds": 20000
        }
    })
}

#[test]
fn bias_check_matches_closed_form() {
    let (dir, out) = run_cmd("bias-check", &bias_spec(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("out/bias.json"));
    assert_eq!(report["points"].as_array().unwrap().len(), 3);
    assert!(report["max_deviation"].as_f64().unwrap() < 1e-8);
}

#[test]
fn unstable_bias_step_exits_four() {
    let mut spec = bias_spec();
    spec["run"]["bias_alphas"] = json!([1e4]);
    let (_dir, out) = run_cmd("bias-check", &spec, &[]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bias_check_needs_two_agents() {
    let mut spec = bias_spec();
    spec["family"]["n_agents"] = json!(3);
    assert_eq!(code(&run_cmd("bias-check", &spec, &[]).1), 1);
}

#[test]
fn mixing_reports_each_agent() {
    let (dir, out) = run_cmd("mixing", &base_spec(), &[]);
    assert_eq!(code(&out), 0);
    let report = read_json(&dir.path().join("out/mixing.json"));
    let agents = report["agents"].as_array().unwrap();
    assert_eq!(agents.len(), 4);
    let max = agents.iter().map(|a| a["tau"].as_u64().unwrap()).max().unwrap();
    assert_eq!(report["family_tau"].as_u64().unwrap(), max);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("agent 3: tau_mix"));
    assert!(stdout.contains("family max tau_mix"));
}

#[test]
fn output_is_independent_of_thread_count() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), &base_spec());
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = fedtd(
            &[
                "sweep",
                "--spec",
                spec.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
            Some(threads),
        );
        assert_eq!(code(&o), 0);
        files.push((
            std::fs::read(out.join("sweep.json")).unwrap(),
            std::fs::read(out.join("sweep_N4_seed1.csv")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
}
