//! `ltrc`: sieve regression for left-truncated, right-censored responses.

mod dataset;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ltrc_sieve::estimator::{fit, select_knots, FitConfig};
use ltrc_sieve::inference::infer;
use ltrc_sieve::simulation::{
    run_study, simulate_dataset, synthetic_left_truncated, ErrorLaw, KnotChoice, SimScenario,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dataset::{ColumnMap, Delimiter, Transform};
use error::{CliError, Result};

#[derive(Parser)]
#[command(name = "ltrc", version, about)]
struct Cli {
    /// Worker threads; defaults to all cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a dataset.
    Fit(FitArgs),
    /// Cross-validate the number of interior knots.
    Cv(CvArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Write a simulated dataset.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    response: String,
    /// Event indicator column (1 observed, 0 censored); absent means all observed.
    #[arg(long)]
    event: Option<String>,
    /// Truncation time column; blank cells mean no truncation.
    #[arg(long)]
    trunc: Option<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    covars: Vec<String>,
    #[arg(long, value_enum, default_value_t = Delimiter::Comma)]
    delimiter: Delimiter,
    /// Applied to response and truncation columns alike.
    #[arg(long, value_enum, default_value_t = Transform::None)]
    transform: Transform,
}

impl DataArgs {
    fn columns(&self) -> ColumnMap {
        ColumnMap {
            response: self.response.clone(),
            event: self.event.clone(),
            trunc: self.trunc.clone(),
            covars: self.covars.clone(),
        }
    }
}

#[derive(Clone, Debug)]
enum KnotArg {
    Fixed(usize),
    Cv,
}

fn parse_knots(s: &str) -> std::result::Result<KnotArg, String> {
    if s == "cv" {
        return Ok(KnotArg::Cv);
    }
    s.parse()
        .map(KnotArg::Fixed)
        .map_err(|_| CliError::Knots(s.to_string()).to_string())
}

#[derive(Args)]
struct CvOptions {
    /// Candidate interior-knot counts for cross-validation.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3, 4, 5])]
    candidates: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Interior knots: a count or `cv`.
    #[arg(long, value_parser = parse_knots, default_value = "cv")]
    knots: KnotArg,
    #[command(flatten)]
    cv: CvOptions,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cv: CvOptions,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// normal, gumbel, gumbel_min, mix_wide or mix_shift.
    #[arg(long, value_parser = parse_law)]
    error: ErrorLaw,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Interior knots: a count or `cv`; defaults to the published choice for
    /// the error law and sample size.
    #[arg(long, value_parser = parse_knots)]
    knots: Option<KnotArg>,
    #[command(flatten)]
    cv: CvOptions,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replication curves copied into curves.csv.
    #[arg(long, default_value_t = 100)]
    curve_sample: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    /// Two covariates with uniform truncation and censoring.
    Scenario,
    /// Five covariates, left truncation only.
    Synthetic,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = Design::Scenario)]
    design: Design,
    #[arg(long, value_parser = parse_law, default_value = "normal")]
    error: ErrorLaw,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_law(s: &str) -> std::result::Result<ErrorLaw, String> {
    ErrorLaw::from_name(s).ok_or_else(|| CliError::UnknownLaw(s.to_string()).to_string())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let columns = args.data.columns();
    let ds = dataset::read(
        &args.data.input,
        &columns,
        args.data.delimiter,
        args.data.transform,
    )?;
    let config = FitConfig::default().with_seed(args.seed);
    let (knots, selection) = match args.knots {
        KnotArg::Fixed(k) => (k, None),
        KnotArg::Cv => {
            let sel = select_knots(&ds.data, &args.cv.candidates, args.cv.folds, &config)?;
            (sel.chosen, Some(sel))
        }
    };
    let f = fit(&ds.data, knots, &config)?;
    let inference = if f.converged {
        Some(infer(&f, &ds.data)?)
    } else {
        None
    };
    output::write_fit(
        &args.out,
        &output::FitOutput {
            input: &args.data.input,
            columns: &columns,
            transform: args.data.transform,
            seed: args.seed,
            n: ds.data.len(),
            covariates: &ds.covariates,
            fit: &f,
            inference: inference.as_ref(),
            selection: selection.as_ref(),
        },
    )?;
    let Some(inf) = inference else {
        return Err(CliError::NotConverged {
            score: f.diagnostics.score_max_norm,
        });
    };
    println!(
        "n = {}, interior knots = {knots}, log-likelihood = {:.4}",
        ds.data.len(),
        f.loglik
    );
    println!(
        "{:<16} {:>10} {:>10} {:>22} {:>10}",
        "covariate", "estimate", "se", "95% CI", "p-value"
    );
    let se = inf.std_errors();
    for (j, name) in ds.covariates.iter().enumerate() {
        println!(
            "{:<16} {:>10.4} {:>10.4} {:>22} {:>10.3e}",
            name,
            f.theta_hat.beta[j],
            se[j],
            format!("({:.4}, {:.4})", inf.ci_lo[j], inf.ci_hi[j]),
            inf.p_values[j]
        );
    }
    for note in &inf.method_notes {
        println!("note: {note}");
    }
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> Result<()> {
    let ds = dataset::read(
        &args.data.input,
        &args.data.columns(),
        args.data.delimiter,
        args.data.transform,
    )?;
    let config = FitConfig::default().with_seed(args.seed);
    let sel = select_knots(&ds.data, &args.cv.candidates, args.cv.folds, &config)?;
    println!("{:>8} {:>20}", "knots", "mean held-out ll");
    for s in &sel.scores {
        let v = match s.mean_heldout {
            Some(v) if v.abs() < 1e9 => format!("{v:.4}"),
            Some(v) => format!("{v:.4e}"),
            None if sel.scores.len() == 1 => "not scored".to_string(),
            None => "failed".to_string(),
        };
        println!("{:>8} {:>20}", s.n_interior, v);
    }
    println!("selected: {}", sel.chosen);
    if let Some(dir) = &args.out {
        output::write_cv(dir, &sel, args.cv.folds, args.seed)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let knots = match &args.knots {
        None => KnotChoice::Default,
        Some(KnotArg::Fixed(k)) => KnotChoice::Fixed(*k),
        Some(KnotArg::Cv) => KnotChoice::Cv {
            candidates: args.cv.candidates.clone(),
            folds: args.cv.folds,
        },
    };
    let scenario = SimScenario::new(args.error, args.n, args.reps, args.seed).with_knots(knots);
    let report = run_study(&scenario)?;
    output::write_simulation(&args.out, &report, args.curve_sample)?;
    println!(
        "{} n={} reps used {}/{}; truncated {:.1}%, censored {:.1}%",
        args.error.name(),
        args.n,
        report.reps_used,
        args.reps,
        report.pct_truncated,
        report.pct_censored
    );
    println!(
        "{:<6} {:>10} {:>10} {:>10} {:>10} {:>9}",
        "coef", "bias×1e3", "var1×1e3", "var2×1e3", "var3×1e3", "cover %"
    );
    for (j, c) in report.coefficients.iter().enumerate() {
        println!(
            "beta{:<2} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>9.1}",
            j + 1,
            1e3 * c.bias,
            1e3 * c.var1_mean,
            1e3 * c.var2_mean,
            1e3 * c.var3_empirical,
            100.0 * c.coverage95
        );
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let (names, data): (Vec<String>, _) = match args.design {
        Design::Scenario => {
            let sc = SimScenario::new(args.error, args.n, 1, args.seed);
            let sim = simulate_dataset(&sc, &mut sc.rep_rng(0));
            (vec!["x1".into(), "x2".into()], sim.data)
        }
        Design::Synthetic => {
            let data = synthetic_left_truncated(args.n, &mut ChaCha8Rng::seed_from_u64(args.seed));
            ((1..=5).map(|j| format!("x{j}")).collect(), data)
        }
    };
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        output::ensure_dir(dir)?;
    }
    dataset::write(&args.out, &names, &data)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
