use std::path::PathBuf;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_countstat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Value of `column` in the first data row of a CSV result.
fn field(csv: &str, column: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header
        .iter()
        .position(|h| *h == column)
        .unwrap_or_else(|| panic!("no column {column} in {header:?}"));
    row[i].to_string()
}

fn num(csv: &str, column: &str) -> f64 {
    field(csv, column).parse().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("countstat-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn fc_limit_for_zero_events() {
    let out = stdout(&[
        "limit", "--method", "fc", "--n", "0", "--b", "3.0", "--cl", "0.90",
    ]);
    assert!((num(&out, "upper") - 1.08).abs() < 0.01, "{out}");
    assert_eq!(num(&out, "lower"), 0.0);
}

#[test]
fn bayes_limit_from_model_file() {
    let path = scratch("eff10.toml");
    std::fs::write(&path, "b_mean = 3.0\neff_rel_sigma = 0.1\n").unwrap();
    let out = stdout(&[
        "--model",
        path.to_str().unwrap(),
        "limit",
        "--method",
        "bayes",
        "--n",
        "3",
    ]);
    assert!((num(&out, "upper") - 4.46).abs() < 0.02, "{out}");
}

#[test]
fn zero_count_has_unit_pvalue() {
    let out = stdout(&["pvalue", "--n", "0", "--b", "3.0"]);
    assert_eq!(num(&out, "p"), 1.0);
}

#[test]
fn coverage_csv_has_one_row_per_point() {
    let out = stdout(&[
        "--seed",
        "7",
        "coverage",
        "--method",
        "classical",
        "--b",
        "3",
        "--s-min",
        "0",
        "--s-max",
        "0.5",
        "--s-step",
        "0.5",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "s_true,coverage,stderr,n_toys");
    for row in &lines[1..] {
        let c: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(c > 0.85 && c <= 1.0, "{row}");
    }
}

#[test]
fn seeded_output_is_byte_identical() {
    let args = [
        "--seed", "11", "coverage", "--method", "fc", "--b", "3", "--s-min", "1", "--s-max", "1",
    ];
    assert_eq!(stdout(&args), stdout(&args));
    let threaded = [
        "--threads",
        "2",
        "--seed",
        "11",
        "coverage",
        "--method",
        "fc",
        "--b",
        "3",
        "--s-min",
        "1",
        "--s-max",
        "1",
    ];
    assert_eq!(stdout(&args), stdout(&threaded));
}

#[test]
fn json_round_trips_with_manifest() {
    let out = stdout(&[
        "--format",
        "json",
        "--seed",
        "3",
        "sensitivity",
        "--kind",
        "punzi",
        "--b",
        "3",
    ]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["manifest"]["command"], "sensitivity");
    assert_eq!(doc["manifest"]["seed"], 3);
    assert!(doc["manifest"]["version"].is_string());
    assert!(doc["manifest"]["parameters"]["model"]["background"]["mean"].as_f64() == Some(3.0));
    let s_min = doc["results"][0]["s_min"].as_f64().unwrap();
    assert!(s_min > 0.0);
}

#[test]
fn csv_file_output_writes_manifest_sidecar() {
    let path = scratch("limit.csv");
    let p = path.to_str().unwrap();
    let out = run(&[
        "--out", p, "limit", "--method", "cls", "--n", "3", "--b", "3",
    ]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(&path)
        .unwrap()
        .starts_with("method,"));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{p}.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(side["command"], "limit");
}

#[test]
fn stochastic_commands_require_a_seed() {
    for args in [
        &["coverage", "--method", "fc", "--b", "3"][..],
        &["sensitivity", "--kind", "median", "--b", "3"],
        &["combine", "--weight-bias", "observed"],
        &[
            "systematics",
            "--nominal",
            "0",
            "--covariance",
            "1",
            "--linear",
            "1",
        ],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("--seed"),
            "{args:?}"
        );
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        run(&["limit", "--method", "nope", "--n", "1", "--b", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["limit", "--method", "fc", "--n", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["--threads", "0", "pvalue", "--n", "1", "--b", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["pvalue", "--combine", "0.1,0.2"]).status.code(),
        Some(2)
    );
    let path = scratch("bad.toml");
    std::fs::write(&path, "b_mean = 3.0\nbogus = 1\n").unwrap();
    let out = run(&[
        "--model",
        path.to_str().unwrap(),
        "limit",
        "--method",
        "bayes",
        "--n",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn compute_errors_exit_one() {
    assert_eq!(
        run(&["--seed", "1", "coverage", "--method", "fc", "--b", "3", "--toys", "100"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(&[
            "--out",
            "/nonexistent-dir/x.csv",
            "pvalue",
            "--n",
            "1",
            "--b",
            "1"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn every_subcommand_has_help() {
    for cmd in [
        &["limit"][..],
        &["pvalue"],
        &["cls"],
        &["sensitivity"],
        &["coverage"],
        &["systematics"],
        &["combine"],
        &["blind"],
        &["unblind"],
        &["gof", "chi2"],
        &["gof", "delta-chi2"],
        &["gof", "energy"],
    ] {
        let mut args = cmd.to_vec();
        args.push("--help");
        let out = stdout(&args);
        assert!(out.contains("Usage:") && out.len() > 200, "{cmd:?}");
    }
}

#[test]
fn blind_then_unblind_restores_value() {
    let out = stdout(&["blind", "--value", "0.123456789", "--key", "secret"]);
    let (b, c) = (field(&out, "blinded"), field(&out, "carry"));
    assert_ne!(b, "0.123456789");
    let back = stdout(&["unblind", "--value", &b, "--carry", &c, "--key", "secret"]);
    assert_eq!(num(&back, "value"), 0.123456789);
}

#[test]
fn combine_reads_measurement_csv() {
    let path = scratch("m.csv");
    std::fs::write(&path, "value,sigma,label\n1,1,a\n3,1,b\n").unwrap();
    let out = stdout(&["combine", "--input", path.to_str().unwrap()]);
    assert_eq!(num(&out, "a_best"), 2.0);
    assert!((num(&out, "sigma_best") - 0.5f64.sqrt()).abs() < 1e-5);
}

#[test]
fn delta_chi2_from_values() {
    let out = stdout(&[
        "gof",
        "delta-chi2",
        "--chi2-restricted",
        "125",
        "--chi2-extended",
        "100",
        "--k",
        "1",
    ]);
    assert!((num(&out, "sigma") - 5.0).abs() < 1e-5);
}
