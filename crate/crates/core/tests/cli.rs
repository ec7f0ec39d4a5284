//! End-to-end runs of the `twostage` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use tempfile::TempDir;

fn twostage(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_twostage"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

/// `y = 1 + x − 0.5 w + e` with `x` driven by `z1`, `z2` and an error
/// correlated with `e`; `z3..z8` are noise.
fn write_iv_csv(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = || rng.sample::<f64, _>(StandardNormal);
    let mut s = String::from("y,x,w,z1,z2,z3,z4,z5,z6,z7,z8\n");
    for _ in 0..200 {
        let z: Vec<f64> = (0..8).map(|_| g()).collect();
        let (w, e) = (g(), g());
        let v = 0.5 * e + g();
        let x = 0.8 * z[0] + 0.6 * z[1] + 0.3 * w + v;
        let y = 1.0 + x - 0.5 * w + e;
        let row: Vec<String> = [y, x, w]
            .iter()
            .chain(&z)
            .map(|t| format!("{t:.6}"))
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    let path = dir.join("iv.csv");
    fs::write(&path, s).unwrap();
    path
}

/// `y = 2 + 1.5 m1 + 0.5 x + e`, `m1 = 1 + x + u`; `m2..m6` are noise.
fn write_mediation_csv(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut g = || rng.sample::<f64, _>(StandardNormal);
    let mut s = String::from("y,x,m1,m2,m3,m4,m5,m6\n");
    for _ in 0..150 {
        let x = g();
        let m1 = 1.0 + x + g();
        let noise: Vec<f64> = (0..5).map(|_| g()).collect();
        let y = 2.0 + 1.5 * m1 + 0.5 * x + g();
        let row: Vec<String> = [y, x, m1]
            .iter()
            .chain(&noise)
            .map(|t| format!("{t:.6}"))
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    let path = dir.join("med.csv");
    fs::write(&path, s).unwrap();
    path
}

fn data_lines(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn missing_required_option_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let (code, _, err) = twostage(&["select", "--input", input.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("\"kind\""), "{err}");
}

#[test]
fn unknown_column_exits_with_data_code() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let (code, _, err) = twostage(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "nope",
    ]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn missing_input_file_exits_with_data_code() {
    let (code, _, err) = twostage(&[
        "select",
        "--input",
        "/nonexistent/data.csv",
        "--response",
        "y",
    ]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn select_reports_the_signal_and_writes_graph_files() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let prefix = dir.path().join("sel");
    let (code, out, err) = twostage(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "x",
        "--candidates",
        "z1,z2,z3,z4,z5,z6,z7,z8",
        "--graph",
        prefix.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0, "{err}");
    let lines = data_lines(&out);
    assert_eq!(
        lines[0],
        "variable,status,estimate,se,p_value,trigger,correlation"
    );
    assert!(lines.iter().any(|l| l.starts_with("z1,selected")), "{out}");
    assert!(lines.iter().any(|l| l.starts_with("z2,selected")), "{out}");

    let nodes = fs::read_to_string(dir.path().join("sel_nodes.csv")).unwrap();
    let edges = fs::read_to_string(dir.path().join("sel_edges.csv")).unwrap();
    assert!(nodes.starts_with("variable,status,sign"), "{nodes}");
    assert!(edges.starts_with("source,target,correlation"), "{edges}");
}

#[test]
fn select_json_echoes_the_resolved_config() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let (code, out, err) = twostage(&[
        "select",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "x",
        "--method",
        "lasso",
        "--seed",
        "3",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["meta"]["command"], "select");
    assert_eq!(v["meta"]["config"]["method"], "lasso");
    assert_eq!(v["meta"]["config"]["seed"], 3);
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let config = dir.path().join("select.toml");
    fs::write(
        &config,
        format!(
            "input = {:?}\nresponse = \"x\"\nmethod = \"lasso\"\nformat = \"csv\"\n",
            input.to_str().unwrap()
        ),
    )
    .unwrap();
    let (code, out, err) = twostage(&[
        "select",
        "--config",
        config.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["meta"]["config"]["method"], "lasso");

    fs::write(&config, "respons = \"x\"\n").unwrap();
    let (code, _, err) = twostage(&["select", "--config", config.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn exactly_identified_fit_reports_sargan_as_not_available() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let (code, out, err) = twostage(&[
        "fit-iv",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "y",
        "--endogenous",
        "x",
        "--exogenous",
        "w",
        "--instruments",
        "z1",
        "--selector",
        "all",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["diagnostics"]["sargan"], "n/a");
    let methods: Vec<&str> = v["estimates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["TSLS", "LIML", "FULLER"]);
}

#[test]
fn over_identified_fit_in_csv() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let (code, out, err) = twostage(&[
        "fit-iv",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "y",
        "--endogenous",
        "x",
        "--exogenous",
        "w",
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(
        out.lines()
            .any(|l| l.starts_with("# sargan:") && l.contains("df")),
        "{out}"
    );
    let lines = data_lines(&out);
    assert!(
        lines[0].starts_with("method,k,coefficient,beta,se_classical,se_robust"),
        "{out}"
    );
    let x_rows: Vec<&&str> = lines
        .iter()
        .filter(|l| l.split(',').nth(2) == Some("x"))
        .collect();
    assert_eq!(x_rows.len(), 3, "{out}");
    for row in x_rows {
        let beta: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!((beta - 1.0).abs() < 0.3, "{row}");
    }
}

#[test]
fn empty_instrument_selection_exits_with_its_own_code() {
    let dir = TempDir::new().unwrap();
    let input = write_iv_csv(dir.path());
    let (code, _, err) = twostage(&[
        "fit-iv",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "y",
        "--endogenous",
        "x",
        "--instruments",
        "z3,z4,z5,z6,z7,z8",
    ]);
    assert_eq!(code, 5, "{err}");
    assert!(err.contains("\"code\":5"), "{err}");
}

#[test]
fn mediation_fit_finds_the_mediator() {
    let dir = TempDir::new().unwrap();
    let input = write_mediation_csv(dir.path());
    let (code, out, err) = twostage(&[
        "fit-mediation",
        "--input",
        input.to_str().unwrap(),
        "--response",
        "y",
        "--exposure",
        "x",
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0, "{err}");
    let lines = data_lines(&out);
    assert_eq!(lines[0], "path,variable,estimate,se,t,p");
    assert!(lines.iter().any(|l| l.starts_with("b,m1,")), "{out}");
    assert!(!lines.iter().any(|l| l.starts_with("b,m2,")), "{out}");
}

#[test]
fn simulate_iv_has_one_row_per_selector_and_estimator() {
    let (code, out, err) = twostage(&[
        "simulate-iv",
        "--n",
        "100",
        "--p",
        "100",
        "--mu2",
        "30",
        "--reps",
        "3",
        "--seed",
        "4",
    ]);
    assert_eq!(code, 0, "{err}");
    let lines = data_lines(&out);
    assert_eq!(
        lines[0],
        "selector,estimator,N0,bias,MAD,TP,FP,p_value,CP,contributing,failures"
    );
    assert_eq!(lines.len(), 7, "{out}");
}

#[test]
fn simulate_mediation_columns() {
    let (code, out, err) = twostage(&[
        "simulate-mediation",
        "--p",
        "30",
        "--reps",
        "3",
        "--seed",
        "4",
    ]);
    assert_eq!(code, 0, "{err}");
    let lines = data_lines(&out);
    assert_eq!(
        lines[0],
        "selector,scenario,setting,beta1,beta2,N0,TP,FP,b_ne_0,c_prime_ne_0,bias_beta2,MAD_beta2,CP_beta2,b_detect,found,failures"
    );
    assert_eq!(lines.len(), 3, "{out}");
}

#[test]
fn infeasible_simulation_design_is_a_usage_error() {
    let (code, _, err) = twostage(&["simulate-iv", "--p", "100", "--mu2", "180", "--reps", "2"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn thread_count_does_not_change_simulation_output() {
    let iv = [
        "simulate-iv",
        "--n",
        "100",
        "--p",
        "100",
        "--mu2",
        "30",
        "--reps",
        "6",
        "--seed",
        "9",
    ];
    let med = [
        "simulate-mediation",
        "--p",
        "30",
        "--reps",
        "6",
        "--seed",
        "9",
    ];
    for args in [&iv[..], &med[..]] {
        let one: Vec<&str> = ["--threads", "1"].iter().chain(args).copied().collect();
        let eight: Vec<&str> = ["--threads", "8"].iter().chain(args).copied().collect();
        let (c1, a, _) = twostage(&one);
        let (c8, b, _) = twostage(&eight);
        assert_eq!((c1, c8), (0, 0));
        assert_eq!(a, b);
    }
}

#[test]
fn output_file_receives_the_report() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("sim.csv");
    let (code, out, err) = twostage(&[
        "simulate-mediation",
        "--p",
        "30",
        "--reps",
        "2",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let written = fs::read_to_string(&out_path).unwrap();
    assert!(data_lines(&written)[0].starts_with("selector,scenario"));
    assert!(!out.contains("selector,scenario"));
}
