use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmfilter"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data lines of a CSV file, without the metadata comment block.
fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

fn generate(problem: &str, dir: &Path, extra: &[&str]) -> Output {
    let problem = scenario(problem);
    let mut args = vec!["generate", s(&problem), "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn demo_generate_reference_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = generate("demo_n4.json", tmp.path(), &["--count", "50", "--seed", "0", "--max-iters", "200"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for file in ["trajectories.csv", "report.json", "residuals.csv", "violations.csv", "results.json", "proposals.json", "solutions.json"] {
        assert!(tmp.path().join(file).exists(), "{file}");
    }
    let report = read_json(&tmp.path().join("report.json"));
    let r = &report["report"];
    assert_eq!(r["batch_size"], 50);
    assert_eq!(r["feasible"], 48);
    assert!(r["feasible_fraction"].as_f64().unwrap() > 0.0);
    assert!(r["mean_pairwise_cosine"].as_f64().is_some());
    assert_eq!(report["meta"]["seed"], 0);
    assert_eq!(report["meta"]["degree"], 10);
    assert_eq!(report["meta"]["H"], 50);

    let traj = fs::read_to_string(tmp.path().join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("# swarmfilter "));
    assert!(traj.contains("seed=0 rho=1.0 tol_residual=0.001 tol_eq=1e-8"));
    assert!(traj.contains("degree=10 H=50"));
    let rows = data_lines(&tmp.path().join("trajectories.csv"));
    assert_eq!(rows[0], "proposal_id,robot,t,x,y,z,vx,vy,vz,ax,ay,az");
    assert_eq!(rows.len() - 1, 48 * 4 * 51);

    let residuals = data_lines(&tmp.path().join("residuals.csv"));
    assert_eq!(residuals[0], "proposal_id,iter,res_inf,res_l2");
    let total: u64 = r["total_iterations"].as_u64().unwrap();
    assert_eq!(residuals.len() as u64 - 1, total);
}

#[test]
fn single_robot_generates_only_feasible_results() {
    let tmp = tempfile::tempdir().unwrap();
    let out = generate("single_robot.json", tmp.path(), &["--count", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["report"]["feasible"], 5);
    assert_eq!(report["report"]["feasible_fraction"], 1.0);
}

#[test]
fn flags_override_problem_file_settings() {
    let tmp = tempfile::tempdir().unwrap();
    // the file sets count 5 and seed 3
    let out = generate("single_robot.json", tmp.path(), &[]);
    assert_eq!(code(&out), 0);
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["report"]["batch_size"], 5);
    assert_eq!(report["meta"]["seed"], 3);

    let out = generate("single_robot.json", tmp.path(), &["--count", "2", "--seed", "9", "--rho", "2.5"]);
    assert_eq!(code(&out), 0);
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["report"]["batch_size"], 2);
    assert_eq!(report["meta"]["seed"], 9);
    assert_eq!(report["meta"]["rho"], 2.5);
}

#[test]
fn zero_count_exits_with_no_feasible_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["generate", s(&scenario("demo_n4.json")), "--count", "0", "--out-dir", s(tmp.path()), "--log-level", "error"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("--count 0"));
}

#[test]
fn invalid_problems_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut doc = read_json(&scenario("demo_n4.json"));
    doc["boundary"][0]["start"]["p"] = serde_json::json!([9.0, 0.0, 1.0]);
    doc["boundary"][1]["goal"]["p"] = serde_json::json!([-2.0, 0.0, 1.0]);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, doc.to_string()).unwrap();
    let out = run(&["generate", s(&bad), "--out-dir", s(tmp.path()), "--log-level", "error"]);
    assert_eq!(code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("robot 0"), "{msg}");
    assert!(msg.contains("goal"), "{msg}");

    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&run(&["generate", s(&missing), "--out-dir", s(tmp.path())])), 2);
    assert_eq!(code(&generate("demo_n4.json", tmp.path(), &["--max-iters", "0"])), 2);
    assert_eq!(code(&generate("demo_n4.json", tmp.path(), &["--degree", "3"])), 2);
}

#[test]
fn malformed_proposals_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let demo = scenario("demo_n4.json");
    let cases = [
        ("not-json.json", "this is not json".to_string()),
        ("wrong-type.json", r#"{"dim": 132, "count": 1, "data": 5}"#.to_string()),
        ("wrong-dim.json", r#"{"dim": 3, "count": 1, "data": [[1, 2, 3]]}"#.to_string()),
        ("wrong-count.json", format!(r#"{{"dim": 132, "count": 2, "data": [{:?}]}}"#, vec![0.0; 132])),
    ];
    for (name, body) in cases {
        let path = tmp.path().join(name);
        fs::write(&path, body).unwrap();
        let out = run(&["filter", s(&demo), "--proposals", s(&path), "--out-dir", s(tmp.path()), "--log-level", "error"]);
        assert_eq!(code(&out), 2, "{name}");
        let msg = stderr(&out);
        assert!(msg.contains("schema") || msg.contains("dimension") || msg.contains("count"), "{name}: {msg}");
    }
}

#[test]
fn filtering_feasible_proposals_leaves_them_in_place() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(code(&generate("single_robot.json", &first, &["--count", "3"])), 0);
    let solutions = read_json(&first.join("solutions.json"));
    let proposals = serde_json::json!({
        "dim": solutions["dim"],
        "count": 1,
        "data": [solutions["xi0"][0]],
    });
    let path = tmp.path().join("feasible.json");
    fs::write(&path, proposals.to_string()).unwrap();
    let second = tmp.path().join("second");
    let out = run(&["filter", s(&scenario("single_robot.json")), "--proposals", s(&path), "--out-dir", s(&second)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&second.join("report.json"));
    assert!(report["report"]["displacement_max"].as_f64().unwrap() <= 1e-6);
    assert_eq!(report["report"]["feasible"], 1);
}

#[test]
fn warm_start_from_prior_run_needs_fewer_iterations() {
    let tmp = tempfile::tempdir().unwrap();
    let demo = scenario("demo_n4.json");
    let prior = tmp.path().join("prior");
    assert_eq!(code(&generate("demo_n4.json", &prior, &["--count", "12", "--seed", "4"])), 0);
    let proposals = prior.join("proposals.json");

    let cold = tmp.path().join("cold");
    let out = run(&["filter", s(&demo), "--proposals", s(&proposals), "--out-dir", s(&cold)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let warm = tmp.path().join("warm");
    let ws = prior.join("solutions.json");
    let out = run(&["filter", s(&demo), "--proposals", s(&proposals), "--warmstart", s(&ws), "--out-dir", s(&warm)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let cold_iters = read_json(&cold.join("report.json"))["report"]["total_iterations"].as_u64().unwrap();
    let warm_iters = read_json(&warm.join("report.json"))["report"]["total_iterations"].as_u64().unwrap();
    assert!(warm_iters < cold_iters, "warm {warm_iters} vs cold {cold_iters}");

    let short = tmp.path().join("short.json");
    let mut doc = read_json(&ws);
    doc["count"] = 1.into();
    doc["xi0"] = Value::Array(vec![doc["xi0"][0].clone()]);
    doc["lambda0"] = Value::Array(vec![doc["lambda0"][0].clone()]);
    fs::write(&short, doc.to_string()).unwrap();
    let out = run(&["filter", s(&demo), "--proposals", s(&proposals), "--warmstart", s(&short), "--out-dir", s(&warm)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&generate("demo_n4.json", &a, &["--count", "8", "--threads", "1"])), 0);
    assert_eq!(code(&generate("demo_n4.json", &b, &["--count", "8", "--threads", "4"])), 0);
    for file in ["trajectories.csv", "residuals.csv", "results.json", "solutions.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

const QUICK_GRID: &str = "iters=50:400:50 batch=1,4 timing-batch=3 repeats=1 strategies=zero,projected,warmstart";

fn bench(dir: &Path, grid: &str) -> Output {
    run(&["bench", s(&scenario("demo_n4.json")), "--grid", grid, "--out-dir", s(dir), "--max-iters", "60"])
}

#[test]
fn bench_writes_tables_and_scripts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bench(tmp.path(), QUICK_GRID);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["fig5a", "fig5b", "fig6", "fig7"] {
        let csv = fs::read_to_string(tmp.path().join(format!("{name}.csv"))).unwrap();
        assert!(csv.starts_with("# swarmfilter "), "{name}");
        assert!(csv.contains("degree=10 H=50"), "{name}");
        let gp = fs::read_to_string(tmp.path().join(format!("{name}.gp"))).unwrap();
        assert!(gp.contains(&format!("{name}.csv")), "{name}");
    }
    assert_eq!(data_lines(&tmp.path().join("fig5a.csv"))[0], "n,batch,feasible_fraction");
    assert_eq!(data_lines(&tmp.path().join("fig5b.csv"))[0], "n,mean_pairwise_cosine");
    let fig6 = data_lines(&tmp.path().join("fig6.csv"));
    assert_eq!(fig6[0], "sweep,batch,iters,seconds,per_proposal_seconds");
    assert_eq!(fig6.iter().filter(|l| l.starts_with("iters,")).count(), 8);
    assert_eq!(fig6.iter().filter(|l| l.starts_with("batch,")).count(), 2);
    let fig7 = data_lines(&tmp.path().join("fig7.csv"));
    assert_eq!(fig7[0], "strategy,iter,res_inf");
    for strategy in ["zero", "projected", "warmstart"] {
        assert_eq!(fig7.iter().filter(|l| l.starts_with(&format!("{strategy},"))).count(), 60);
    }
}

#[test]
fn bench_is_reproducible_apart_from_timing() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let grid = "iters=10,20 batch=1,4 timing-batch=2 repeats=1 strategies=zero";
    assert_eq!(code(&bench(&a, grid)), 0);
    assert_eq!(code(&bench(&b, grid)), 0);
    for file in ["fig5a.csv", "fig5b.csv", "fig7.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn invalid_grid_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    for grid in ["iters=400:50:50", "speed=fast", "batch=", "strategies=magic"] {
        let out = bench(tmp.path(), grid);
        assert_eq!(code(&out), 2, "{grid}");
    }
}

#[test]
fn help_lists_defaults() {
    let out = run(&["generate", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["--count", "[default: 20]", "--rho", "[default: 1.0]", "--max-iters", "[default: 200]", "--tol", "--threads", "--out-dir"] {
        assert!(text.contains(needle), "{needle}");
    }
}
