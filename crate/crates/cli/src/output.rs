//! Output tables and documents.
//!
//! Every command writes one JSON document carrying [`SCHEMA_VERSION`] next to
//! its delimited tables; the version covers the column layout of those
//! tables too.

use std::fs;
use std::path::Path;

use ltrc_sieve::estimator::{FitResult, KnotSelection, StartRecord};
use ltrc_sieve::inference::InferenceReport;
use ltrc_sieve::simulation::SimReport;
use serde::Serialize;

use crate::dataset::{ColumnMap, Transform};
use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: &str = "ltrc-sieve/1";

/// Points on the exported log-hazard grid.
const LOGHAZARD_POINTS: usize = 201;

fn table(path: &Path, rows: Vec<Vec<String>>) -> Result<()> {
    let err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn document<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn strings<const N: usize>(v: [&str; N]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[derive(Serialize)]
struct Settings<'a> {
    input: &'a Path,
    columns: &'a ColumnMap,
    transform: Transform,
    seed: u64,
}

#[derive(Serialize)]
struct Knots<'a> {
    n_interior: usize,
    positions: &'a [f64],
    domain: [f64; 2],
    selection: Option<&'a KnotSelection>,
}

#[derive(Serialize)]
struct FitDocument<'a> {
    schema_version: &'static str,
    settings: Settings<'a>,
    n: usize,
    covariates: &'a [String],
    converged: bool,
    loglik: f64,
    beta: &'a [f64],
    gamma: &'a [f64],
    covariate_center: &'a [f64],
    gamma_at_floor: &'a [usize],
    knots: Knots<'a>,
    naive_beta: &'a [f64],
    naive_se: &'a [f64],
    converged_starts: usize,
    winner: usize,
    starts: &'a [StartRecord],
    diagnostics: &'a ltrc_sieve::estimator::FitDiagnostics,
    inference: Option<&'a InferenceReport>,
}

pub struct FitOutput<'a> {
    pub input: &'a Path,
    pub columns: &'a ColumnMap,
    pub transform: Transform,
    pub seed: u64,
    pub n: usize,
    pub covariates: &'a [String],
    pub fit: &'a FitResult,
    pub inference: Option<&'a InferenceReport>,
    pub selection: Option<&'a KnotSelection>,
}

/// `coefficients.csv`, `fit.json` and `loghazard.csv`.
pub fn write_fit(dir: &Path, out: &FitOutput<'_>) -> Result<()> {
    ensure_dir(dir)?;
    let f = out.fit;
    if let Some(inf) = out.inference {
        let se = inf.std_errors();
        let mut rows = vec![strings([
            "covariate",
            "estimate",
            "std_error",
            "ci_lower",
            "ci_upper",
            "p_value",
            "std_error_score",
        ])];
        for (j, name) in out.covariates.iter().enumerate() {
            rows.push(vec![
                name.clone(),
                f.theta_hat.beta[j].to_string(),
                se[j].to_string(),
                inf.ci_lo[j].to_string(),
                inf.ci_hi[j].to_string(),
                inf.p_values[j].to_string(),
                inf.var1[(j, j)].max(0.0).sqrt().to_string(),
            ]);
        }
        table(&dir.join("coefficients.csv"), rows)?;
    }

    let shift: f64 = f
        .center
        .iter()
        .zip(&f.theta_hat.beta)
        .map(|(c, b)| c * b)
        .sum();
    let lo = f.domain.domain_lo() - shift;
    let hi = f.domain.domain_hi() - shift;
    let mut rows = vec![strings(["s", "log_hazard"])];
    for i in 0..LOGHAZARD_POINTS {
        let s = lo + (hi - lo) * i as f64 / (LOGHAZARD_POINTS - 1) as f64;
        rows.push(vec![s.to_string(), f.log_hazard(s).to_string()]);
    }
    table(&dir.join("loghazard.csv"), rows)?;

    let doc = FitDocument {
        schema_version: SCHEMA_VERSION,
        settings: Settings {
            input: out.input,
            columns: out.columns,
            transform: out.transform,
            seed: out.seed,
        },
        n: out.n,
        covariates: out.covariates,
        converged: f.converged,
        loglik: f.loglik,
        beta: &f.theta_hat.beta,
        gamma: &f.theta_hat.gamma,
        covariate_center: &f.center,
        gamma_at_floor: &f.at_floor,
        knots: Knots {
            n_interior: f.domain.n_interior(),
            positions: f.domain.interior_knots(),
            domain: [f.domain.domain_lo(), f.domain.domain_hi()],
            selection: out.selection,
        },
        naive_beta: &f.naive_beta,
        naive_se: &f.naive_se,
        converged_starts: f.converged_starts,
        winner: f.winner,
        starts: &f.start_trajectories,
        diagnostics: &f.diagnostics,
        inference: out.inference,
    };
    document(&dir.join("fit.json"), &doc)
}

#[derive(Serialize)]
struct SimDocument<'a> {
    schema_version: &'static str,
    report: &'a SimReport,
}

/// `metrics.csv`, `curves.csv` and `report.json`.
pub fn write_simulation(dir: &Path, report: &SimReport, curve_sample: usize) -> Result<()> {
    ensure_dir(dir)?;
    let sc = &report.scenario;
    let mut rows = vec![strings([
        "error",
        "n",
        "reps_used",
        "coefficient",
        "bias_x1e3",
        "var1_x1e3",
        "var2_x1e3",
        "var3_x1e3",
        "coverage_pct",
    ])];
    for (j, c) in report.coefficients.iter().enumerate() {
        rows.push(vec![
            sc.error_law.name().to_string(),
            sc.n.to_string(),
            report.reps_used.to_string(),
            format!("beta{}", j + 1),
            (1e3 * c.bias).to_string(),
            (1e3 * c.var1_mean).to_string(),
            (1e3 * c.var2_mean).to_string(),
            (1e3 * c.var3_empirical).to_string(),
            (100.0 * c.coverage95).to_string(),
        ]);
    }
    table(&dir.join("metrics.csv"), rows)?;

    let curves = &report.curves;
    let sample = curves.per_rep.len().min(curve_sample);
    let mut header = strings(["s", "truth", "mean"]);
    header.extend((0..sample).map(|r| format!("rep_{r}")));
    let mut rows = vec![header];
    for (i, s) in curves.grid.iter().enumerate() {
        let mut r = vec![
            s.to_string(),
            curves.truth[i].to_string(),
            curves.mean[i].to_string(),
        ];
        r.extend(curves.per_rep[..sample].iter().map(|c| c[i].to_string()));
        rows.push(r);
    }
    table(&dir.join("curves.csv"), rows)?;

    document(
        &dir.join("report.json"),
        &SimDocument {
            schema_version: SCHEMA_VERSION,
            report,
        },
    )
}

#[derive(Serialize)]
struct CvDocument<'a> {
    schema_version: &'static str,
    folds: usize,
    seed: u64,
    selection: &'a KnotSelection,
}

/// `cv.json`.
pub fn write_cv(dir: &Path, selection: &KnotSelection, folds: usize, seed: u64) -> Result<()> {
    ensure_dir(dir)?;
    document(
        &dir.join("cv.json"),
        &CvDocument {
            schema_version: SCHEMA_VERSION,
            folds,
            seed,
            selection,
        },
    )
}
