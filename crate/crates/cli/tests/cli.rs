use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ltrc_sieve::estimator::{fit, FitConfig};
use ltrc_sieve::simulation::{simulate_dataset, ErrorLaw, SimScenario};

const SYNTHETIC: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_349.csv");

fn ltrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltrc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ltrc-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synthetic_fit(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "fit",
        "--input",
        SYNTHETIC,
        "--response",
        "y",
        "--event",
        "event",
        "--trunc",
        "trunc",
        "--covars",
        "x1,x2,x3,x4,x5",
        "--knots",
        "2",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    ltrc(&args)
}

#[test]
fn bundled_dataset_fit_writes_five_coefficients() {
    let dir = scratch("bundled");
    let o = synthetic_fit(&dir, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.join("coefficients.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("covariate,estimate,std_error,ci_lower,ci_upper,p_value"));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], "ltrc-sieve/1");
    assert_eq!(doc["knots"]["n_interior"], 2);
    assert_eq!(doc["beta"].as_array().unwrap().len(), 5);
    let hazard = fs::read_to_string(dir.join("loghazard.csv")).unwrap();
    assert_eq!(hazard.lines().count(), 202);
}

#[test]
fn reruns_are_byte_identical() {
    let a = scratch("rerun-a");
    let b = scratch("rerun-b");
    assert!(synthetic_fit(&a, &["--threads", "1"]).status.success());
    assert!(synthetic_fit(&b, &["--threads", "1"]).status.success());
    for f in ["coefficients.csv", "loghazard.csv", "fit.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn generated_dataset_round_trips_to_the_in_memory_fit() {
    let dir = scratch("roundtrip");
    let csv = dir.join("data.csv");
    let o = ltrc(&[
        "generate",
        "--error",
        "gumbel",
        "--n",
        "200",
        "--seed",
        "4",
        "--out",
        s(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.join("fit");
    let o = ltrc(&[
        "fit",
        "--input",
        s(&csv),
        "--response",
        "y",
        "--event",
        "event",
        "--trunc",
        "trunc",
        "--covars",
        "x1,x2",
        "--knots",
        "1",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let sc = SimScenario::new(ErrorLaw::Gumbel, 200, 1, 4);
    let data = simulate_dataset(&sc, &mut sc.rep_rng(0)).data;
    let f = fit(&data, 1, &FitConfig::default().with_seed(3)).unwrap();
    let table = fs::read_to_string(out.join("coefficients.csv")).unwrap();
    let estimates: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    let expected: Vec<String> = f.theta_hat.beta.iter().map(|b| b.to_string()).collect();
    assert_eq!(estimates, expected);
}

#[test]
fn logit_transform_names_the_offending_row() {
    let dir = scratch("logit");
    let csv = dir.join("d.csv");
    fs::write(&csv, "y,x\n0.5,1\n1.0,2\n0.3,3\n").unwrap();
    let o = ltrc(&[
        "fit",
        "--input",
        s(&csv),
        "--response",
        "y",
        "--covars",
        "x",
        "--transform",
        "logit",
        "--knots",
        "0",
        "--out",
        s(&dir),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("row 2") && e.contains("logit"), "{e}");
}

#[test]
fn truncation_order_violations_are_listed() {
    let dir = scratch("order");
    let csv = dir.join("d.csv");
    fs::write(&csv, "y,t,x\n0.5,0.1,1\n1.0,2,2\n0.3,0.5,3\n0.9,,4\n").unwrap();
    let o = ltrc(&[
        "fit",
        "--input",
        s(&csv),
        "--response",
        "y",
        "--trunc",
        "t",
        "--covars",
        "x",
        "--knots",
        "0",
        "--out",
        s(&dir),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("offending rows: 2, 3\n"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn constant_covariate_is_rejected() {
    let dir = scratch("constant");
    let csv = dir.join("d.csv");
    fs::write(&csv, "y,x,one\n0.5,1,1\n1.0,2,1\n0.3,3,1\n").unwrap();
    let o = ltrc(&[
        "fit",
        "--input",
        s(&csv),
        "--response",
        "y",
        "--covars",
        "x,one",
        "--knots",
        "0",
        "--out",
        s(&dir),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`one` is constant"), "{}", stderr(&o));
}

#[test]
fn tab_delimited_input_matches_comma_input() {
    let dir = scratch("tab");
    let tsv = dir.join("d.tsv");
    fs::write(
        &tsv,
        fs::read_to_string(SYNTHETIC).unwrap().replace(',', "\t"),
    )
    .unwrap();
    let a = dir.join("a");
    let b = dir.join("b");
    assert!(synthetic_fit(&a, &[]).status.success());
    let o = ltrc(&[
        "fit",
        "--input",
        s(&tsv),
        "--delimiter",
        "tab",
        "--response",
        "y",
        "--event",
        "event",
        "--trunc",
        "trunc",
        "--covars",
        "x1,x2,x3,x4,x5",
        "--knots",
        "2",
        "--out",
        s(&b),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(a.join("coefficients.csv")).unwrap(),
        fs::read(b.join("coefficients.csv")).unwrap()
    );
}

#[test]
fn simulate_smoke_run_is_well_formed() {
    let dir = scratch("simulate");
    let o = ltrc(&[
        "simulate",
        "--error",
        "mix_shift",
        "--n",
        "200",
        "--reps",
        "2",
        "--knots",
        "3",
        "--curve-sample",
        "1",
        "--out",
        s(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with(
        "error,n,reps_used,coefficient,bias_x1e3,var1_x1e3,var2_x1e3,var3_x1e3,coverage_pct\n"
    ));
    let curves = fs::read_to_string(dir.join("curves.csv")).unwrap();
    assert!(curves.starts_with("s,truth,mean,rep_0\n"));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], "ltrc-sieve/1");
    assert_eq!(doc["report"]["knots_used"], serde_json::json!([3, 3]));
    assert_eq!(doc["report"]["replications"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_error_law_is_a_usage_error() {
    let o = ltrc(&["simulate", "--error", "cauchy", "--n", "10", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown error law `cauchy`"));
}

#[test]
fn cross_validation_writes_its_selection() {
    let dir = scratch("cv");
    let o = ltrc(&[
        "cv",
        "--input",
        SYNTHETIC,
        "--response",
        "y",
        "--trunc",
        "trunc",
        "--covars",
        "x1,x2,x3,x4,x5",
        "--candidates",
        "1,2",
        "--folds",
        "3",
        "--out",
        s(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("selected: "));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("cv.json")).unwrap()).unwrap();
    let chosen = doc["selection"]["chosen"].as_u64().unwrap();
    assert!(chosen == 1 || chosen == 2);
    assert_eq!(doc["selection"]["scores"].as_array().unwrap().len(), 2);
}
