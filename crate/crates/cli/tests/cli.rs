//! End-to-end CLI behavior: exit codes, report schema validation, CSV
//! mode, and the report envelope contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_errlab")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_json(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("errlab-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path.display().to_string()
}

const RULE: &str =
    r#"{"states":2,"initial":0,"transitions":[[0,1],[0,1]],"decisions":["skip","select"]}"#;
const STRATEGY: &str =
    r#"{"states":1,"initial":0,"transitions":[[0,0]],"bets":[{"stake":0.5,"predict":1}]}"#;
const GRID_STRUCTURE: &str =
    r#"{"vars":["x"],"sigma":{"kind":"diag","values":[1]},"law":{"kind":"grid","lo":0,"hi":1,"points":200}}"#;
const FAMILY_SPEC: &str = r#"{"family":{"term":"sin(k*pi*x)/k^2","param":"k","count":12}}"#;

/// One successful report per command, validated against the shipped
/// draft-07 schema.
#[test]
fn all_reports_validate_against_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas/report-v1.json");
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();

    let dir = tmp_dir("schema");
    let seq = write(&dir, "seq.txt", "0110111001011101\n");
    let rule = write(&dir, "rule.json", RULE);
    let strat = write(&dir, "strat.json", STRATEGY);
    let structure = write(&dir, "grid.json", GRID_STRUCTURE);
    let spec = write(&dir, "family.json", FAMILY_SPEC);
    let out_seq = dir.join("gen.txt").display().to_string();

    let commands: Vec<Vec<&str>> = vec![
        vec!["propagate", "--expr", "x*y", "--point", "2,3", "--sigma", "diag:0.01,0.04", "--vars", "x,y"],
        vec!["oracle", "--expr", "x*y", "--point", "2,3", "--sigma", "diag:0.01,0.04", "--vars", "x,y", "--samples", "2000"],
        vec!["coherence-demo"],
        vec!["limit", "--spec", &spec, "--structure", &structure],
        vec!["sequence", "generate", "--kind", "champernowne", "--count", "1000", "--out", &out_seq],
        vec!["sequence", "analyze", "--in", &seq, "--kmax", "2"],
        vec!["sequence", "select", "--in", &seq, "--rule", &rule],
        vec!["sequence", "bet", "--in", &seq, "--strategy", &strat],
    ];
    for args in &commands {
        let report = run_json(args);
        let errors: Vec<String> = validator
            .iter_errors(&report)
            .map(|e| e.to_string())
            .collect();
        assert!(errors.is_empty(), "{args:?}: {errors:?}");
        assert_eq!(report["schema"], "report-v1");
        assert_eq!(report["config"]["seed"], 0);
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    // usage/config errors: 2
    let cases2: Vec<Vec<&str>> = vec![
        vec!["propagate", "--expr", "x*(", "--point", "1,1", "--sigma", "diag:1,1", "--vars", "x,y"],
        vec!["propagate", "--expr", "x*q", "--point", "1,1", "--sigma", "diag:1,1", "--vars", "x,y"],
        vec!["propagate", "--expr", "x", "--point", "1", "--sigma", "diag:1"],
        vec!["oracle", "--expr", "x", "--point", "1", "--sigma", "diag:1", "--vars", "x", "--samples", "10"],
    ];
    for args in &cases2 {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }

    // runtime domain errors: 3
    let cases3: Vec<Vec<&str>> = vec![
        vec!["propagate", "--expr", "log(x)", "--point", "0", "--sigma", "diag:1", "--vars", "x"],
        vec!["propagate", "--expr", "1/x", "--point", "0", "--sigma", "diag:1", "--vars", "x"],
        vec!["sequence", "analyze", "--in", "/nonexistent/seq.txt"],
    ];
    for args in &cases3 {
        let out = run(args);
        assert_eq!(out.status.code(), Some(3), "{args:?}");
    }

    // limit spec with too few terms: 2
    let dir = tmp_dir("exit");
    let structure = write(&dir, "grid.json", GRID_STRUCTURE);
    let spec = write(&dir, "short.json", r#"{"exprs":["x","x*x"]}"#);
    let out = run(&["limit", "--spec", &spec, "--structure", &structure]);
    assert_eq!(out.status.code(), Some(2));

    // bad rule JSON: 2
    let seq = write(&dir, "seq.txt", "0101");
    let badrule = write(&dir, "bad.json", r#"{"states":1}"#);
    let out = run(&["sequence", "select", "--in", &seq, "--rule", &badrule]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn csv_mode_flattens_results() {
    let out = run(&[
        "propagate", "--csv", "--expr", "x*y", "--point", "2,3",
        "--sigma", "diag:0.01,0.04", "--vars", "x,y",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("gamma,0.25\n"), "{text}");
    assert!(text.contains("gradient[0],3.0\n"), "{text}");
    assert!(!text.contains('{'), "CSV mode must not emit JSON: {text}");
}

#[test]
fn paper_prefix_through_the_cli() {
    let dir = tmp_dir("champ");
    let out_path = dir.join("c.txt").display().to_string();
    run_json(&["sequence", "generate", "--kind", "champernowne", "--count", "17", "--out", &out_path]);
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.trim(), "01101110010111011");
}

#[test]
fn analyze_all_zeros_k1_deviation_half() {
    let dir = tmp_dir("zeros");
    let seq = write(&dir, "zeros.txt", &"0".repeat(1000));
    let report = run_json(&["sequence", "analyze", "--in", &seq, "--kmax", "1"]);
    let dev = report["results"]["normality"]["rows"][0]["max_abs_deviation"]
        .as_f64()
        .unwrap();
    assert_eq!(dev, 0.5);
}

#[test]
fn zero_stake_trajectory_is_flat() {
    let dir = tmp_dir("flat");
    let seq = write(&dir, "seq.txt", "010101");
    let strat = write(
        &dir,
        "zero.json",
        r#"{"states":1,"initial":0,"transitions":[[0,0]],"bets":[{"stake":0.0,"predict":1}]}"#,
    );
    let report = run_json(&["sequence", "bet", "--in", &seq, "--strategy", &strat, "--initial", "2.5"]);
    let traj = report["results"]["trajectory"].as_array().unwrap();
    assert_eq!(traj.len(), 7);
    assert!(traj.iter().all(|v| v.as_f64().unwrap() == 2.5));
}

#[test]
fn packed_format_round_trips() {
    let dir = tmp_dir("packed");
    let out_path = dir.join("bits.bin").display().to_string();
    let rep = run_json(&[
        "sequence", "generate", "--kind", "prng", "--count", "64",
        "--seed", "9", "--out", &out_path, "--format", "packed",
    ]);
    let mean = rep["results"]["mean"].as_f64().unwrap();
    let rep2 = run_json(&["sequence", "analyze", "--in", &out_path, "--format", "packed", "--kmax", "1"]);
    assert_eq!(rep2["results"]["mean"].as_f64().unwrap(), mean);
    assert_eq!(rep2["results"]["length"], 64);
}
