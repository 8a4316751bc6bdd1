//! Data generation and Monte Carlo replication for the linear model
//! `Y* = β₁X₁ + β₂X₂ + e` with uniform truncation and censoring.

use std::f64::consts::PI;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimator::{fit, select_knots, FitConfig};
use crate::inference::infer;
use crate::likelihood::Observation;

pub const X1_RANGE: (f64, f64) = (-3.0, 3.0);
pub const X2_PROB: f64 = 0.5;
pub const TRUNCATION_RANGE: (f64, f64) = (-6.0, 1.0);
pub const CENSORING_RANGE: (f64, f64) = (1.0, 7.0);

/// Radius (max-norm) within which a start counts as reaching the truth.
pub const NEAR_TRUTH: f64 = 0.5;

/// Points on the log-hazard grid.
pub const CURVE_POINTS: usize = 101;

/// Error distribution of the regression model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLaw {
    /// `N(0, 1)`.
    Normal,
    /// Standard extreme value law of the maximum, `F(s) = exp(−e^{−s})`.
    Gumbel,
    /// Standard extreme value law of the minimum, `F(s) = 1 − exp(−e^{s})`;
    /// its log hazard is `s`.
    GumbelMin,
    /// `0.5 N(0, 1) + 0.5 N(0, 3²)`.
    MixWide,
    /// `0.5 N(0, 1) + 0.5 N(−1, 0.5²)`.
    MixShift,
}

impl ErrorLaw {
    pub const ALL: [ErrorLaw; 5] = [
        ErrorLaw::Normal,
        ErrorLaw::Gumbel,
        ErrorLaw::GumbelMin,
        ErrorLaw::MixWide,
        ErrorLaw::MixShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorLaw::Normal => "normal",
            ErrorLaw::Gumbel => "gumbel",
            ErrorLaw::GumbelMin => "gumbel_min",
            ErrorLaw::MixWide => "mix_wide",
            ErrorLaw::MixShift => "mix_shift",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }

    /// Normal components `(weight, mean, sd)` for the Gaussian laws.
    fn components(self) -> &'static [(f64, f64, f64)] {
        match self {
            ErrorLaw::Normal => &[(1.0, 0.0, 1.0)],
            ErrorLaw::MixWide => &[(0.5, 0.0, 1.0), (0.5, 0.0, 3.0)],
            ErrorLaw::MixShift => &[(0.5, 0.0, 1.0), (0.5, -1.0, 0.5)],
            ErrorLaw::Gumbel | ErrorLaw::GumbelMin => &[],
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ErrorLaw::Gumbel | ErrorLaw::GumbelMin => {
                // Open interval keeps both logarithms finite.
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                let w = (-u.ln()).ln();
                if self == ErrorLaw::Gumbel {
                    -w
                } else {
                    w
                }
            }
            _ => {
                let comps = self.components();
                let (_, mu, sd) = if comps.len() == 1 || rng.random_bool(0.5) {
                    comps[0]
                } else {
                    comps[1]
                };
                let z: f64 = StandardNormal.sample(rng);
                mu + sd * z
            }
        }
    }

    pub fn pdf(self, s: f64) -> f64 {
        match self {
            ErrorLaw::Gumbel => {
                let z = (-s).exp();
                z * (-z).exp()
            }
            ErrorLaw::GumbelMin => (s - s.exp()).exp(),
            _ => self
                .components()
                .iter()
                .map(|&(w, mu, sd)| w * normal_pdf((s - mu) / sd) / sd)
                .sum(),
        }
    }

    pub fn cdf(self, s: f64) -> f64 {
        match self {
            ErrorLaw::Gumbel => (-(-s).exp()).exp(),
            ErrorLaw::GumbelMin => -(-s.exp()).exp_m1(),
            _ => self
                .components()
                .iter()
                .map(|&(w, mu, sd)| w * 0.5 * erfc(-(s - mu) / (sd * std::f64::consts::SQRT_2)))
                .sum(),
        }
    }

    /// `log(1 − F(s))`, accurate in the upper tail.
    pub fn log_sf(self, s: f64) -> f64 {
        match self {
            ErrorLaw::Gumbel => (-(-(-s).exp()).exp_m1()).ln(),
            ErrorLaw::GumbelMin => -s.exp(),
            _ => log_sum_exp(
                self.components()
                    .iter()
                    .map(|&(w, mu, sd)| w.ln() + normal_log_sf((s - mu) / sd)),
            ),
        }
    }

    pub fn log_pdf(self, s: f64) -> f64 {
        match self {
            ErrorLaw::Gumbel => -s - (-s).exp(),
            ErrorLaw::GumbelMin => s - s.exp(),
            _ => log_sum_exp(self.components().iter().map(|&(w, mu, sd)| {
                let z = (s - mu) / sd;
                w.ln() - 0.5 * z * z - 0.5 * (2.0 * PI).ln() - sd.ln()
            })),
        }
    }

    /// `log λ(s) = log f(s) − log(1 − F(s))`.
    pub fn true_log_hazard(self, s: f64) -> f64 {
        match self {
            ErrorLaw::GumbelMin => s,
            ErrorLaw::Gumbel => {
                let z = (-s).exp();
                // log(z e^{−z} / (1 − e^{−z})) written to stay finite for
                // both small and large z.
                -z - (-(-z).exp_m1() / z).ln()
            }
            _ => self.log_pdf(s) - self.log_sf(s),
        }
    }

    /// `F⁻¹(p)` by bisection.
    pub fn quantile(self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.cdf(lo) > p {
            lo *= 2.0;
        }
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Interior knot counts chosen by cross-validation for each law at
    /// `n = 200, 400, 800`; other sizes use the nearest of those.
    pub fn default_knots(self, n: usize) -> usize {
        let row = match self {
            ErrorLaw::Normal => [1, 1, 1],
            ErrorLaw::Gumbel | ErrorLaw::GumbelMin => [1, 1, 2],
            ErrorLaw::MixWide => [2, 3, 4],
            ErrorLaw::MixShift => [2, 2, 3],
        };
        if n < 300 {
            row[0]
        } else if n < 600 {
            row[1]
        } else {
            row[2]
        }
    }
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `log P(Z > z)` for a standard normal `Z`.
pub fn normal_log_sf(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills ratio: 1 − Φ(z) = φ(z)/z · (1 − 1/z² + 3/z⁴ − 15/z⁶ + …).
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Interior knot count per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotChoice {
    /// The cross-validated counts used for the published design.
    Default,
    Fixed(usize),
    Cv {
        candidates: Vec<usize>,
        folds: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub error_law: ErrorLaw,
    pub n: usize,
    pub reps: usize,
    pub beta_true: Vec<f64>,
    pub seed: u64,
    pub knots: KnotChoice,
    pub fit: FitConfig,
}

impl SimScenario {
    pub fn new(error_law: ErrorLaw, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            error_law,
            n,
            reps,
            beta_true: vec![1.0, 1.0],
            seed,
            knots: KnotChoice::Default,
            fit: FitConfig::default(),
        }
    }

    pub fn with_knots(mut self, knots: KnotChoice) -> Self {
        self.knots = knots;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.reps == 0 {
            return Err(Error::InvalidConfig("n and reps must be positive".into()));
        }
        if self.beta_true.len() != 2 || self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig(
                "beta_true must hold two finite coefficients".into(),
            ));
        }
        if let KnotChoice::Cv { candidates, folds } = &self.knots {
            if candidates.is_empty() || *folds < 2 {
                return Err(Error::InvalidConfig(
                    "cross-validation needs candidates and at least two folds".into(),
                ));
            }
        }
        self.fit.validate()
    }

    /// Generator for replication `rep`, independent of every other
    /// replication.
    pub fn rep_rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedData {
    pub data: Vec<Observation>,
    /// Draws generated, kept or not.
    pub attempts: usize,
    pub truncated: usize,
    pub censored: usize,
}

/// Draws subjects until `scenario.n` survive truncation.
pub fn simulate_dataset<R: Rng + ?Sized>(scenario: &SimScenario, rng: &mut R) -> SimulatedData {
    let x1 = Uniform::new(X1_RANGE.0, X1_RANGE.1).expect("valid range");
    let x2 = Bernoulli::new(X2_PROB).expect("valid probability");
    let tr = Uniform::new(TRUNCATION_RANGE.0, TRUNCATION_RANGE.1).expect("valid range");
    let cr = Uniform::new(CENSORING_RANGE.0, CENSORING_RANGE.1).expect("valid range");
    let b = &scenario.beta_true;
    let mut out = SimulatedData {
        data: Vec::with_capacity(scenario.n),
        attempts: 0,
        truncated: 0,
        censored: 0,
    };
    while out.data.len() < scenario.n {
        out.attempts += 1;
        let x = vec![x1.sample(rng), if x2.sample(rng) { 1.0 } else { 0.0 }];
        let e = scenario.error_law.draw(rng);
        let t = tr.sample(rng);
        let c = cr.sample(rng);
        let ystar = b[0] * x[0] + b[1] * x[1] + e;
        if ystar <= t {
            out.truncated += 1;
            continue;
        }
        let delta = ystar <= c;
        if !delta {
            out.censored += 1;
        }
        out.data
            .push(Observation::new(ystar.min(c), delta, Some(t), x));
    }
    out
}

/// Coefficients of the synthetic left-truncation-only design.
pub const SYNTHETIC_BETA: [f64; 5] = [0.8, -0.5, 0.3, 0.6, -0.4];

/// A left-truncated, uncensored dataset with five covariates (one
/// continuous, four binary) and standard normal errors.
pub fn synthetic_left_truncated<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Observation> {
    let probs = [0.5, 0.3, 0.6, 0.4];
    let tr = Uniform::new(-4.0, 1.0).expect("valid range");
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let mut x = vec![Normal::new(0.0, 1.0).expect("unit sd").sample(rng)];
        for &p in &probs {
            x.push(if rng.random_bool(p) { 1.0 } else { 0.0 });
        }
        let e: f64 = StandardNormal.sample(rng);
        let y = x
            .iter()
            .zip(&SYNTHETIC_BETA)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + e;
        let t = tr.sample(rng);
        if y > t {
            data.push(Observation::new(y, true, Some(t), x));
        }
    }
    data
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub knots: usize,
    pub attempts: usize,
    pub truncated: usize,
    pub censored: usize,
    pub converged: bool,
    pub beta_hat: Vec<f64>,
    /// Least-squares estimate the starts were drawn around.
    pub naive_beta: Vec<f64>,
    pub var1: Vec<f64>,
    pub var2: Vec<f64>,
    pub covered: Vec<bool>,
    /// Fraction of starts ending within [`NEAR_TRUTH`] of the truth.
    pub near_fraction: f64,
    /// `ĝ` on the report grid.
    pub curve: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub bias: f64,
    pub var1_mean: f64,
    pub var2_mean: f64,
    pub var3_empirical: f64,
    pub coverage95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHazardCurves {
    pub grid: Vec<f64>,
    /// One row per included replication.
    pub per_rep: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: SimScenario,
    pub coefficients: Vec<CoefSummary>,
    pub pct_truncated: f64,
    pub pct_censored: f64,
    pub convergence_fraction: f64,
    pub reps_used: usize,
    pub failed_reps: usize,
    pub knots_used: Vec<usize>,
    pub curves: LogHazardCurves,
    pub replications: Vec<RepOutcome>,
}

/// Evenly spaced grid over the middle `mass` of the error law.
pub fn central_grid(law: ErrorLaw, mass: f64, points: usize) -> Vec<f64> {
    let tail = 0.5 * (1.0 - mass);
    let lo = law.quantile(tail);
    let hi = law.quantile(1.0 - tail);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// One dataset → fit → inference pipeline.
pub fn run_replication(scenario: &SimScenario, rep: usize, grid: &[f64]) -> RepOutcome {
    let mut rng = scenario.rep_rng(rep);
    let sim = simulate_dataset(scenario, &mut rng);
    let config = scenario.fit.clone().with_seed(rng.random());
    let mut out = RepOutcome {
        rep,
        knots: 0,
        attempts: sim.attempts,
        truncated: sim.truncated,
        censored: sim.censored,
        converged: false,
        beta_hat: Vec::new(),
        naive_beta: Vec::new(),
        var1: Vec::new(),
        var2: Vec::new(),
        covered: Vec::new(),
        near_fraction: 0.0,
        curve: Vec::new(),
        error: None,
    };
    let knots = match &scenario.knots {
        KnotChoice::Default => Ok(scenario.error_law.default_knots(scenario.n)),
        KnotChoice::Fixed(k) => Ok(*k),
        KnotChoice::Cv { candidates, folds } => {
            select_knots(&sim.data, candidates, *folds, &config).map(|s| s.chosen)
        }
    };
    let result = knots.and_then(|k| {
        out.knots = k;
        let f = fit(&sim.data, k, &config)?;
        let inf = infer(&f, &sim.data)?;
        Ok((f, inf))
    });
    match result {
        Ok((f, inf)) => {
            out.converged = f.converged;
            out.near_fraction = f.start_fraction_near(&scenario.beta_true, NEAR_TRUTH);
            out.covered = inf.covers(&scenario.beta_true);
            out.var1 = (0..2).map(|j| inf.var1[(j, j)]).collect();
            out.var2 = (0..2).map(|j| inf.var2[(j, j)]).collect();
            out.curve = grid.iter().map(|&s| f.log_hazard(s)).collect();
            out.beta_hat = f.theta_hat.beta;
            out.naive_beta = f.naive_beta;
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Runs all replications and aggregates them. Replications whose fit failed
/// or did not converge are counted in `failed_reps` and left out of every
/// aggregate except the truncation and censoring percentages.
pub fn run_study(scenario: &SimScenario) -> Result<SimReport> {
    scenario.validate()?;
    let grid = central_grid(scenario.error_law, 0.95, CURVE_POINTS);
    let reps: Vec<RepOutcome> = (0..scenario.reps)
        .into_par_iter()
        .map(|r| run_replication(scenario, r, &grid))
        .collect();
    Ok(aggregate(scenario, grid, reps))
}

fn aggregate(scenario: &SimScenario, grid: Vec<f64>, reps: Vec<RepOutcome>) -> SimReport {
    let attempts: usize = reps.iter().map(|r| r.attempts).sum();
    let truncated: usize = reps.iter().map(|r| r.truncated).sum();
    let censored: usize = reps.iter().map(|r| r.censored).sum();
    let kept = attempts - truncated;
    let used: Vec<&RepOutcome> = reps.iter().filter(|r| r.converged).collect();
    let failed = reps.len() - used.len();
    if failed > 0 {
        warn!(
            "{}: {failed} of {} replications excluded (failed or not converged)",
            scenario.error_law.name(),
            reps.len()
        );
    }
    let m = used.len() as f64;
    let mean = |f: &dyn Fn(&RepOutcome) -> f64| used.iter().map(|r| f(r)).sum::<f64>() / m;

    let coefficients = (0..2)
        .map(|j| {
            let avg = mean(&|r| r.beta_hat[j]);
            let var3 = if used.len() > 1 {
                used.iter()
                    .map(|r| (r.beta_hat[j] - avg).powi(2))
                    .sum::<f64>()
                    / (m - 1.0)
            } else {
                0.0
            };
            CoefSummary {
                bias: avg - scenario.beta_true[j],
                var1_mean: mean(&|r| r.var1[j]),
                var2_mean: mean(&|r| r.var2[j]),
                var3_empirical: var3,
                coverage95: mean(&|r| if r.covered[j] { 1.0 } else { 0.0 }),
            }
        })
        .collect();

    let per_rep: Vec<Vec<f64>> = used.iter().map(|r| r.curve.clone()).collect();
    let curve_mean = (0..grid.len())
        .map(|i| per_rep.iter().map(|c| c[i]).sum::<f64>() / m)
        .collect();
    let truth = grid
        .iter()
        .map(|&s| scenario.error_law.true_log_hazard(s))
        .collect();

    SimReport {
        scenario: scenario.clone(),
        coefficients,
        pct_truncated: 100.0 * truncated as f64 / attempts as f64,
        pct_censored: 100.0 * censored as f64 / kept as f64,
        convergence_fraction: mean(&|r| r.near_fraction),
        reps_used: used.len(),
        failed_reps: failed,
        knots_used: reps.iter().map(|r| r.knots).collect(),
        curves: LogHazardCurves {
            grid,
            per_rep,
            mean: curve_mean,
            truth,
        },
        replications: reps,
    }
}

/// Empirical truncation and censoring percentages over `subjects` kept
/// subjects, without fitting.
pub fn operating_characteristics(law: ErrorLaw, subjects: usize, seed: u64) -> (f64, f64) {
    let scenario = SimScenario::new(law, subjects, 1, seed);
    let sim = simulate_dataset(&scenario, &mut scenario.rep_rng(0));
    (
        100.0 * sim.truncated as f64 / sim.attempts as f64,
        100.0 * sim.censored as f64 / sim.data.len() as f64,
    )
}
