use std::path::Path;
use std::process::{Command, Output};

use mixkin::commands::check_agreement;
use mixkin::exit_code;
use mixkin_core::kinship::{LrReport, MarkerLr, Method, Relationship};
use mixkin_core::Error;

const SCENARIO: &str = r#"
seed = 21
contributors = ["F", "O"]

[panel]
markers = 10
alleles = 6

[[people]]
id = "F"

[[people]]
id = "M"

[[people]]
id = "O"

[[people]]
id = "C"
child_of = ["F", "M"]
typed = true

[[traces]]
id = "T1"
mu = 1200.0
sigma = 0.4
xi = 0.03
phi = [0.65, 0.35]

[kinship]
relationship = "parent-of-child"
child = "C"
"#;

fn mixkin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixkin")).args(args).output().expect("binary runs")
}

fn simulated(dir: &Path) {
    let scenario = dir.join("scenario.toml");
    std::fs::write(&scenario, SCENARIO).unwrap();
    let out = mixkin(&["simulate", scenario.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn fit_lr_deconvolve_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let case = dir.path().join("case.toml");
    let case = case.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();

    let fit = mixkin(&["fit", case, "--out", out]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let csv = read(out_dir.join("fit.csv"));
    assert!(csv.starts_with("trace,parameter,estimate,se\n"));
    assert_eq!(csv.lines().count(), 1 + 5);
    let manifest: serde_json::Value = serde_json::from_str(&read(out_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    assert!(manifest["params_context"].is_string());

    let params = out_dir.join("fit.csv");
    let params = params.to_str().unwrap();
    let lr = mixkin(&["lr", case, "--params", params, "--out", out]);
    assert!(lr.status.success(), "{}", String::from_utf8_lossy(&lr.stderr));
    let stdout = String::from_utf8_lossy(&lr.stdout);
    assert!(stdout.contains("posterior probability at prior 0.5"));
    let summary = read(out_dir.join("lr_summary.csv"));
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "method,log10_lr,lr,posterior_uniform_prior");
    let methods: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["wlr", "aln", "mbn", "rpt"]);
    let log10: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert!(log10.iter().all(|v| *v == log10[0]));
    assert_eq!(read(out_dir.join("lr_wlr.csv")).lines().count(), 11);

    let dec = mixkin(&["deconvolve", case, "--params", params, "--top", "2", "--contributor", "F", "--out", out]);
    assert!(dec.status.success(), "{}", String::from_utf8_lossy(&dec.stderr));
    let dec = read(out_dir.join("deconvolution.csv"));
    let rows: Vec<Vec<&str>> = dec.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert!(rows.len() <= 20 && rows.len() >= 10);
    assert!(rows.iter().all(|r| r[1] == "F" && (r[6] == "yes" || r[6] == "no")));

    let report = mixkin(&["report", case, "--params", params, "--out", out]);
    assert!(report.status.success());
    let text = read(out_dir.join("report.txt"));
    assert!(text.contains("Genotype ranking") && text.contains("Run manifest"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let case = dir.path().join("case.toml");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        for cmd in ["fit", "lr"] {
            let o = mixkin(&["--threads", threads, cmd, case.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        }
        outputs.push([read(out.join("fit.csv")), read(out.join("lr_summary.csv"))]);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn replicate_files_are_numbered() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    std::fs::write(&scenario, SCENARIO).unwrap();
    let out = mixkin(&["simulate", scenario.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--replicates", "2"]);
    assert!(out.status.success());
    for name in ["T1_r001.csv", "T1_r002.csv", "case_r002.toml", "profile_C_r001.csv", "frequencies.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert_ne!(read(dir.path().join("T1_r001.csv")), read(dir.path().join("T1_r002.csv")));
}

#[test]
fn union_of_precomputed_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixkin(&["lr", "--union-lrs", "370,2.4", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let csv = read(dir.path().join("union.csv"));
    assert!(csv.contains("weighted,1;1,186.200"));
    assert!(csv.contains("min,,2.40000"));
    assert!(csv.contains("max,,370.000"));
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixkin(&["fit", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    simulated(dir.path());
    let case = dir.path().join("case.toml");
    let out = mixkin(&["lr", case.to_str().unwrap(), "--method", "mbn", "--relationship", "parent-of-child-with-mother", "--mother", "C"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_error_kind() {
    assert_eq!(exit_code(&Error::Convergence("x".into()).into()), 3);
    assert_eq!(exit_code(&Error::Invariant("x".into()).into()), 4);
    assert_eq!(exit_code(&Error::Validation("x".into()).into()), 2);
    let wrapped = anyhow::Error::from(Error::Invariant("x".into())).context("while running");
    assert_eq!(exit_code(&wrapped), 4);
}

fn report(method: Method, lrs: &[f64]) -> LrReport {
    LrReport {
        method,
        target: "U1".into(),
        relationship: Relationship::ParentOfChild,
        markers: lrs
            .iter()
            .enumerate()
            .map(|(i, &lr)| MarkerLr {
                marker: format!("M{i}"),
                lr,
            })
            .collect(),
        log10_lr: lrs.iter().map(|x| x.log10()).sum(),
        context_id: String::new(),
    }
}

#[test]
fn disagreeing_methods_are_an_invariant_violation() {
    let a = report(Method::Wlr, &[2.0, 3.0]);
    let b = report(Method::Aln, &[2.0, 3.0 * (1.0 + 1e-12)]);
    assert!(check_agreement(&[a.clone(), b]).is_ok());
    let c = report(Method::Rpt, &[2.0, 3.0 * (1.0 + 1e-6)]);
    assert!(matches!(check_agreement(&[a, c]), Err(Error::Invariant(_))));
}
