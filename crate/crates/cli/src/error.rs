use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("response must exceed truncation time; offending rows: {}", list_rows(.0))]
    TruncationOrder(Vec<usize>),

    #[error(
        "covariate `{0}` is constant; an intercept-like column is not identifiable \
         because the log hazard already absorbs the error location"
    )]
    ConstantCovariate(String),

    #[error("no covariates given")]
    NoCovariates,

    #[error("dataset has no rows")]
    EmptyDataset,

    #[error("invalid --knots value `{0}`: expected a non-negative integer or `cv`")]
    Knots(String),

    #[error(
        "unknown error law `{0}` (expected normal, gumbel, gumbel_min, mix_wide or mix_shift)"
    )]
    UnknownLaw(String),

    #[error(transparent)]
    Model(#[from] ltrc_sieve::Error),

    #[error("no start converged (best score max-norm {score:.3e}); results written for diagnosis")]
    NotConverged { score: f64 },

    #[error("serializing output: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

fn list_rows(rows: &[usize]) -> String {
    let shown: Vec<String> = rows.iter().take(10).map(|r| r.to_string()).collect();
    let more = if rows.len() > 10 {
        format!(" and {} more", rows.len() - 10)
    } else {
        String::new()
    };
    format!("{}{more}", shown.join(", "))
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
