//! Multi-start maximization of the sieve log-likelihood.
//!
//! Each fit computes a naive least-squares estimate from the uncensored
//! subjects, perturbs it into a set of random starting points, runs a
//! preconditioned gradient ascent from each, and keeps the converged run with
//! the largest log-likelihood.
//!
//! Covariates are centered at their sample means before fitting. The model
//! has no intercept, so this only moves the location of the error, which the
//! log hazard absorbs; it makes the fit invariant to shifting a covariate.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, KnotPlacement};
use crate::error::{Error, Result};
use crate::likelihood::{dot, validate, Detail, Evaluation, Observation, SieveLikelihood, Theta};
use crate::linalg::{self, min_eigenvalue, symmetric_inverse};

/// Floor applied to the diagonal preconditioner.
pub const DIAGONAL_FLOOR: f64 = 1e-8;

/// Largest diagonal damping tried before falling back to the pure diagonal
/// step.
pub const MAX_DAMPING: f64 = 1e6;

/// Lower bound on each log-hazard coefficient. Where no events fall the
/// likelihood keeps rising as a coefficient decreases; `e^{-50}` is already
/// indistinguishable from a zero hazard.
pub const GAMMA_FLOOR: f64 = -50.0;

/// Starts whose final residuals fall outside the basis domain for more than
/// this fraction of subjects are not eligible as the estimate.
pub const MAX_OUTSIDE_FRACTION: f64 = 0.05;

/// Fraction of the residual range padded onto each side of the basis domain.
pub const DOMAIN_PADDING: f64 = 0.01;

/// Ascent direction used by [`maximize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchDirection {
    /// Score scaled by the absolute diagonal of the information matrix.
    Diagonal,
    /// Newton steps on the negated information, damped towards the diagonal
    /// step (`(−H + μ D)⁻¹ score`, smallest working `μ`) where it is not
    /// positive definite.
    #[default]
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_starts: usize,
    /// Multiplier on the naive standard errors for start perturbations.
    pub noise_scale: f64,
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the score.
    pub grad_tol: f64,
    pub step_shrink: f64,
    pub max_halvings: usize,
    pub seed: u64,
    pub placement: KnotPlacement,
    pub search: SearchDirection,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 10,
            noise_scale: 3.0,
            max_iter: 500,
            grad_tol: 1e-6,
            step_shrink: 0.5,
            max_halvings: 30,
            seed: 0,
            placement: KnotPlacement::Uniform,
            search: SearchDirection::default(),
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and non-negative");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("step_shrink must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Outcome of one ascent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximizeOutcome {
    pub theta: Theta,
    pub loglik: f64,
    pub converged: bool,
    pub iters: usize,
    pub score_max_norm: f64,
    /// Log-likelihood after each accepted iteration, starting point first.
    pub path: Vec<f64>,
    pub overflow_events: usize,
    pub outside_events: usize,
    /// Residuals outside the basis domain at the final point.
    pub outside_final: usize,
    /// Indices into `θ` held at [`GAMMA_FLOOR`] at the final point.
    pub at_floor: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub initial: Theta,
    pub final_theta: Theta,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub score_max_norm: f64,
    pub outside_final: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Residual evaluations outside the basis domain, summed over all
    /// likelihood evaluations of all starts.
    pub outside_events: usize,
    /// Trial points rejected because the log hazard exceeded the cap.
    pub overflow_events: usize,
    /// Max-norm of the score over coefficients not held at the floor.
    pub score_max_norm: f64,
    /// Condition number of the negated information over free coefficients.
    pub information_condition: f64,
    /// The negated information is positive definite at the estimate.
    pub locally_concave: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub loglik: f64,
    /// At least one start converged and the estimate comes from one.
    pub converged: bool,
    /// Observed information `∂²ℓ/∂θ∂θᵀ` at the estimate.
    #[serde(with = "linalg::rows")]
    pub info_full: DMatrix<f64>,
    /// Indices into `θ` of log-hazard coefficients held at [`GAMMA_FLOOR`].
    pub at_floor: Vec<usize>,
    pub converged_starts: usize,
    pub winner: usize,
    pub start_trajectories: Vec<StartRecord>,
    pub domain: BasisSpec,
    pub naive_beta: Vec<f64>,
    pub naive_se: Vec<f64>,
    /// Covariate means subtracted before fitting. `theta_hat`, `domain`,
    /// `loglik` and `info_full` refer to the centered covariates.
    pub center: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

/// Least squares of `y` on `x` over uncensored subjects, ignoring truncation.
///
/// An auxiliary intercept is fitted and discarded so the slopes do not
/// depend on the location of the error or of the covariates.
pub fn naive_ls(data: &[Observation]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = validate(data)?;
    let events: Vec<&Observation> = data.iter().filter(|o| o.delta).collect();
    let p = d + 1;
    if events.len() <= p {
        return Err(Error::TooFewEvents {
            needed: p,
            found: events.len(),
        });
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut row = vec![1.0; p];
    for o in &events {
        row[1..].copy_from_slice(&o.x);
        for i in 0..p {
            xty[i] += row[i] * o.y;
            for j in 0..p {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
    }
    let inv = symmetric_inverse(&xtx);
    if inv.pseudo {
        return Err(Error::SingularDesign);
    }
    let coef = &inv.matrix * xty;
    let rss: f64 = events
        .iter()
        .map(|o| {
            let fit = coef[0] + dot(&o.x, &coef.as_slice()[1..]);
            (o.y - fit).powi(2)
        })
        .sum();
    let sigma2 = rss / (events.len() - p) as f64;
    let beta = coef.as_slice()[1..].to_vec();
    let se = (1..p)
        .map(|j| (sigma2 * inv.matrix[(j, j)]).max(0.0).sqrt())
        .collect();
    Ok((beta, se))
}

/// `config.n_starts` points with `β ~ N(beta0, (noise_scale · se0)²)` and
/// `γ ~ N(0, I)`.
pub fn initial_points<R: Rng + ?Sized>(
    beta0: &[f64],
    se0: &[f64],
    k: usize,
    config: &FitConfig,
    rng: &mut R,
) -> Vec<Theta> {
    (0..config.n_starts)
        .map(|_| {
            let beta = beta0
                .iter()
                .zip(se0)
                .map(|(&b, &se)| {
                    let sd = config.noise_scale * se;
                    b + Normal::new(0.0, sd).expect("finite sd").sample(rng)
                })
                .collect();
            let gamma = (0..k).map(|_| StandardNormal.sample(rng)).collect();
            Theta::new(beta, gamma)
        })
        .collect()
}

/// Residual domain `[min − pad, max + pad]` over all `ε` and observed `τ`
/// at `beta`.
pub fn residual_domain(data: &[Observation], beta: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for o in data {
        let fit = dot(&o.x, beta);
        let e = o.y - fit;
        lo = lo.min(e);
        hi = hi.max(e);
        if let Some(t) = o.t {
            lo = lo.min(t - fit);
            hi = hi.max(t - fit);
        }
    }
    let pad = DOMAIN_PADDING * (hi - lo).max(f64::EPSILON);
    (lo - pad, hi + pad)
}

/// Preconditioned gradient ascent from `start`.
pub fn maximize(
    start: &Theta,
    data: &[Observation],
    spec: &BasisSpec,
    config: &FitConfig,
) -> Result<MaximizeOutcome> {
    let model = SieveLikelihood::new(data, spec)?;
    if start.beta.len() != model.dim() || start.gamma.len() != model.basis_count() {
        return Err(Error::DimensionMismatch {
            expected: model.dim() + model.basis_count(),
            found: start.len(),
        });
    }
    Ok(maximize_model(start, &model, config))
}

/// [`maximize`] on a prepared likelihood.
///
/// Log-hazard coefficients are kept at or above [`GAMMA_FLOOR`]; those at the
/// floor with a negative score are held fixed and left out of the
/// convergence test.
pub fn maximize_model(
    start: &Theta,
    model: &SieveLikelihood<'_>,
    config: &FitConfig,
) -> MaximizeOutcome {
    let d = model.dim();
    let mut overflow_events = 0;
    let mut outside_events = 0;
    let mut theta = project(start.to_vec(), d);
    let failed = |theta: Theta| MaximizeOutcome {
        theta,
        loglik: f64::NEG_INFINITY,
        converged: false,
        iters: 0,
        score_max_norm: f64::INFINITY,
        path: Vec::new(),
        overflow_events: 1,
        outside_events: 0,
        outside_final: 0,
        at_floor: Vec::new(),
    };
    let mut current = match model.evaluate_unchecked(&theta, Detail::Information) {
        Ok(ev) => ev,
        Err(_) => return failed(theta),
    };
    outside_events += current.outside;
    let mut path = vec![current.loglik];
    let mut iters = 0;
    let mut converged = false;

    loop {
        let held = held_at_floor(&theta, &current.score, d);
        if free_max_abs(&current.score, &held) <= config.grad_tol {
            converged = true;
            break;
        }
        if iters >= config.max_iter {
            break;
        }
        let direction = ascent_direction(&current, &held, config.search);
        let base = theta.to_vec();
        let mut step = 1.0;
        let mut accepted = None;
        for halving in 0..=config.max_halvings {
            let trial: Vec<f64> = base
                .iter()
                .zip(&direction)
                .map(|(x, g)| x + step * g)
                .collect();
            let trial = project(trial, d);
            // The first trial is usually accepted once the search settles,
            // so evaluate it in full and save a second pass.
            let detail = if halving == 0 {
                Detail::Information
            } else {
                Detail::Value
            };
            match model.evaluate_unchecked(&trial, detail) {
                Ok(ev) => {
                    outside_events += ev.outside;
                    if ev.loglik > current.loglik {
                        accepted = Some((trial, ev));
                        break;
                    }
                }
                Err(_) => overflow_events += 1,
            }
            step *= config.step_shrink;
        }
        let Some((trial, ev)) = accepted else {
            break;
        };
        let ev = if ev.information.is_some() {
            ev
        } else {
            match model.evaluate_unchecked(&trial, Detail::Information) {
                Ok(ev) => ev,
                Err(_) => {
                    overflow_events += 1;
                    break;
                }
            }
        };
        theta = trial;
        current = ev;
        path.push(current.loglik);
        iters += 1;
    }

    let at_floor = held_at_floor(&theta, &current.score, d);
    MaximizeOutcome {
        loglik: current.loglik,
        converged,
        iters,
        score_max_norm: free_max_abs(&current.score, &at_floor),
        path,
        overflow_events,
        outside_events,
        outside_final: current.outside,
        at_floor,
        theta,
    }
}

fn project(mut v: Vec<f64>, d: usize) -> Theta {
    for g in &mut v[d..] {
        *g = g.max(GAMMA_FLOOR);
    }
    Theta::from_slice(&v, d)
}

fn held_at_floor(theta: &Theta, score: &[f64], d: usize) -> Vec<usize> {
    theta
        .gamma
        .iter()
        .enumerate()
        .filter(|&(k, &g)| g <= GAMMA_FLOOR && score[d + k] <= 0.0)
        .map(|(k, _)| d + k)
        .collect()
}

fn free_max_abs(score: &[f64], held: &[usize]) -> f64 {
    score
        .iter()
        .enumerate()
        .filter(|(i, _)| !held.contains(i))
        .fold(0.0, |m, (_, v)| m.max(v.abs()))
}

/// Indices not in `held`.
pub(crate) fn free_indices(p: usize, held: &[usize]) -> Vec<usize> {
    (0..p).filter(|i| !held.contains(i)).collect()
}

fn ascent_direction(ev: &Evaluation, held: &[usize], search: SearchDirection) -> Vec<f64> {
    let info = ev.information.as_ref().expect("information evaluated");
    let p = info.nrows();
    let free = free_indices(p, held);
    let mut dir = vec![0.0; p];
    let diag: Vec<f64> = free
        .iter()
        .map(|&i| info[(i, i)].abs().max(DIAGONAL_FLOOR))
        .collect();
    if search == SearchDirection::Hybrid {
        // Equilibrate by the diagonal first: weakly identified coefficients
        // have curvature many orders below the rest.
        let m = free.len();
        let scale: Vec<f64> = diag.iter().map(|d| d.sqrt().recip()).collect();
        let scaled = DMatrix::from_fn(m, m, |i, j| -info[(free[i], free[j])] * scale[i] * scale[j]);
        let rhs = DVector::from_fn(m, |i, _| ev.score[free[i]] * scale[i]);
        let mut mu = 0.0;
        while mu <= MAX_DAMPING {
            let mut a = scaled.clone();
            for i in 0..m {
                a[(i, i)] += mu;
            }
            if let Some(chol) = a.cholesky() {
                let y = chol.solve(&rhs);
                for (i, &f) in free.iter().enumerate() {
                    dir[f] = y[i] * scale[i];
                }
                return dir;
            }
            mu = if mu == 0.0 { 1e-3 } else { mu * 10.0 };
        }
    }
    for (i, &f) in free.iter().enumerate() {
        dir[f] = ev.score[f] / diag[i];
    }
    dir
}

/// Column means of the covariates.
pub fn covariate_means(data: &[Observation]) -> Vec<f64> {
    let d = data.first().map_or(0, |o| o.x.len());
    let mut mean = vec![0.0; d];
    for o in data {
        for (m, x) in mean.iter_mut().zip(&o.x) {
            *m += x;
        }
    }
    let n = data.len().max(1) as f64;
    mean.iter().map(|m| m / n).collect()
}

/// `data` with `center` subtracted from every covariate row.
pub fn center_covariates(data: &[Observation], center: &[f64]) -> Vec<Observation> {
    data.iter()
        .map(|o| Observation {
            x: o.x.iter().zip(center).map(|(x, c)| x - c).collect(),
            ..o.clone()
        })
        .collect()
}

/// Fits the model with `n_interior` interior knots.
pub fn fit(data: &[Observation], n_interior: usize, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    validate(data)?;
    let center = covariate_means(data);
    let data = center_covariates(data, &center);
    let (beta0, se0) = naive_ls(&data)?;
    let (lo, hi) = residual_domain(&data, &beta0);
    let sample: Vec<f64> = data.iter().map(|o| o.y - dot(&o.x, &beta0)).collect();
    let spec = BasisSpec::with_placement(config.placement, lo, hi, n_interior, &sample)?;
    fit_on_basis(&data, spec, beta0, se0, center, config)
}

fn fit_on_basis(
    data: &[Observation],
    spec: BasisSpec,
    beta0: Vec<f64>,
    se0: Vec<f64>,
    center: Vec<f64>,
    config: &FitConfig,
) -> Result<FitResult> {
    let model = SieveLikelihood::new(data, &spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts = initial_points(&beta0, &se0, spec.basis_count(), config, &mut rng);
    let outcomes: Vec<MaximizeOutcome> = starts
        .par_iter()
        .map(|s| maximize_model(s, &model, config))
        .collect();

    let max_outside = MAX_OUTSIDE_FRACTION * data.len() as f64;
    let eligible =
        |o: &MaximizeOutcome| o.loglik.is_finite() && o.outside_final as f64 <= max_outside;
    let mut winner: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if o.converged && eligible(o) && winner.is_none_or(|w| o.loglik > outcomes[w].loglik) {
            winner = Some(i);
        }
    }
    let converged = winner.is_some();
    if winner.is_none() {
        for (i, o) in outcomes.iter().enumerate() {
            if eligible(o) && winner.is_none_or(|w| o.loglik > outcomes[w].loglik) {
                winner = Some(i);
            }
        }
    }
    if winner.is_none() {
        for (i, o) in outcomes.iter().enumerate() {
            if o.loglik.is_finite() && winner.is_none_or(|w| o.loglik > outcomes[w].loglik) {
                winner = Some(i);
            }
        }
    }
    let winner = winner.ok_or(Error::Evaluation(crate::error::EvalError::Overflow))?;
    let best = &outcomes[winner];
    let ev = model.evaluate(&best.theta, Detail::Information)?;
    let info = ev.information.expect("requested information");
    let at_floor = best.at_floor.clone();
    let free = free_indices(info.nrows(), &at_floor);
    let neg = DMatrix::from_fn(free.len(), free.len(), |i, j| -info[(free[i], free[j])]);
    let inverse = symmetric_inverse(&neg);
    let locally_concave = min_eigenvalue(&neg) > 0.0;
    if !locally_concave {
        warn!("negated information is not positive definite at the estimate");
    }

    let start_trajectories = starts
        .into_iter()
        .zip(&outcomes)
        .map(|(initial, o)| StartRecord {
            initial,
            final_theta: o.theta.clone(),
            loglik: o.loglik,
            iterations: o.iters,
            converged: o.converged,
            score_max_norm: o.score_max_norm,
            outside_final: o.outside_final,
        })
        .collect();

    Ok(FitResult {
        theta_hat: best.theta.clone(),
        loglik: ev.loglik,
        converged,
        info_full: info,
        at_floor,
        converged_starts: outcomes.iter().filter(|o| o.converged).count(),
        winner,
        start_trajectories,
        domain: spec,
        naive_beta: beta0,
        naive_se: se0,
        center,
        diagnostics: FitDiagnostics {
            outside_events: outcomes.iter().map(|o| o.outside_events).sum(),
            overflow_events: outcomes.iter().map(|o| o.overflow_events).sum(),
            score_max_norm: best.score_max_norm,
            information_condition: inverse.condition,
            locally_concave,
        },
    })
}

impl FitResult {
    /// Fitted log hazard `ĝ(s)` of the error `Y − Xᵀβ` on the original
    /// covariate scale.
    pub fn log_hazard(&self, s: f64) -> f64 {
        let shift = dot(&self.center, &self.theta_hat.beta);
        self.domain
            .eval_spline(&self.theta_hat.gamma, s + shift)
            .value
    }

    /// `data` on the centered covariate scale the fit works in.
    pub fn centered(&self, data: &[Observation]) -> Vec<Observation> {
        center_covariates(data, &self.center)
    }

    /// Fraction of starts whose final `β` lies within `radius` (max-norm) of
    /// `truth`.
    pub fn start_fraction_near(&self, truth: &[f64], radius: f64) -> f64 {
        let near = self
            .start_trajectories
            .iter()
            .filter(|s| {
                s.final_theta
                    .beta
                    .iter()
                    .zip(truth)
                    .all(|(b, t)| (b - t).abs() < radius)
            })
            .count();
        near as f64 / self.start_trajectories.len() as f64
    }
}

/// Held-out performance of one candidate knot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub n_interior: usize,
    /// Mean held-out log-likelihood over folds; `None` when a fold failed.
    pub mean_heldout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSelection {
    pub chosen: usize,
    pub scores: Vec<CandidateScore>,
}

/// K-fold cross-validation of the interior-knot count by held-out sieve
/// log-likelihood. Ties go to fewer knots.
pub fn select_knots(
    data: &[Observation],
    candidates: &[usize],
    folds: usize,
    config: &FitConfig,
) -> Result<KnotSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate knot counts".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidConfig("need at least two folds".into()));
    }
    validate(data)?;
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() == 1 {
        return Ok(KnotSelection {
            chosen: sorted[0],
            scores: vec![CandidateScore {
                n_interior: sorted[0],
                mean_heldout: None,
            }],
        });
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; data.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let splits: Vec<(Vec<Observation>, Vec<Observation>)> = (0..folds)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = data
                .iter()
                .cloned()
                .enumerate()
                .partition(|(i, _)| fold_of[*i] == f);
            (
                train.into_iter().map(|(_, o)| o).collect(),
                test.into_iter().map(|(_, o)| o).collect(),
            )
        })
        .collect();

    let scores: Vec<CandidateScore> = sorted
        .par_iter()
        .map(|&m| {
            let mut total = 0.0;
            for (train, test) in &splits {
                let heldout = fit(train, m, config)
                    .ok()
                    .filter(|r| r.converged)
                    .and_then(|r| {
                        crate::likelihood::log_likelihood(
                            &r.theta_hat,
                            &r.centered(test),
                            &r.domain,
                        )
                        .ok()
                    });
                match heldout {
                    Some(v) => total += v,
                    None => {
                        warn!("cross-validation: {m} interior knots failed on a fold; skipping");
                        return CandidateScore {
                            n_interior: m,
                            mean_heldout: None,
                        };
                    }
                }
            }
            CandidateScore {
                n_interior: m,
                mean_heldout: Some(total / folds as f64),
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for s in &scores {
        if let Some(v) = s.mean_heldout {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((s.n_interior, v));
            }
        }
    }
    let (chosen, _) = best.ok_or(Error::AllCandidatesFailed)?;
    Ok(KnotSelection { chosen, scores })
}
