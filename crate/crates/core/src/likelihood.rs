//! Sieve log-likelihood, score and observed information for the bundled
//! parameters `(β, γ)`.
//!
//! With residuals `ε = y − xᵀβ`, `τ = t − xᵀβ` and log hazard
//! `g(u) = Σ γ_k B_k(u)`, each subject contributes
//!
//! ```text
//! Δ g(ε) − ∫_τ^ε exp{g(u)} du
//! ```
//!
//! For subjects without truncation the lower limit is the fixed basis edge
//! `a`; it does not move with `β`, so it contributes nothing to the
//! `β`-derivatives.
//!
//! Integrals are evaluated through cumulative tables: full-span integrals
//! of `exp{g}`, `B_k exp{g}` and `B_k B_l exp{g}` are computed once per
//! parameter value, and each subject only adds the two partial spans at its
//! own limits.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, LocalBasis, PiecewiseBasis};
use crate::error::{Error, EvalError, Result};
use crate::quadrature::GaussLegendre;

/// Exponent cap; any `g` above this makes the evaluation invalid.
pub const EXP_CAP: f64 = 700.0;

/// One subject: response `y`, event indicator, optional truncation time and
/// covariates, all on the (possibly transformed) analysis scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub delta: bool,
    pub t: Option<f64>,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn new(y: f64, delta: bool, t: Option<f64>, x: Vec<f64>) -> Self {
        Self { y, delta, t, x }
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |reason: &str| Error::InvalidObservation {
            index,
            reason: reason.to_string(),
        };
        if !self.y.is_finite() {
            return Err(bad("response is not finite"));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(bad("covariate is not finite"));
        }
        if let Some(t) = self.t {
            if !t.is_finite() {
                return Err(bad("truncation time is not finite"));
            }
            if self.y <= t {
                return Err(bad("response does not exceed its truncation time"));
            }
        }
        Ok(())
    }
}

/// Checks every observation and returns the common covariate dimension.
pub fn validate(data: &[Observation]) -> Result<usize> {
    let first = data.first().ok_or(Error::EmptyData)?;
    let d = first.x.len();
    for (i, obs) in data.iter().enumerate() {
        if obs.x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: obs.x.len(),
            });
        }
        obs.check(i)?;
    }
    Ok(d)
}

/// Regression coefficients `beta` and spline coefficients `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Theta {
    pub fn new(beta: Vec<f64>, gamma: Vec<f64>) -> Self {
        Self { beta, gamma }
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        Self::new(vec![0.0; d], vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(β, γ)` stacked.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn from_slice(v: &[f64], d: usize) -> Self {
        Self::new(v[..d].to_vec(), v[d..].to_vec())
    }
}

/// `(ε, τ)` for one subject; `τ` is `None` without truncation.
pub fn residuals(theta: &Theta, obs: &Observation) -> (f64, Option<f64>) {
    let fit = dot(&obs.x, &theta.beta);
    (obs.y - fit, obs.t.map(|t| t - fit))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How much of the derivative information to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Detail {
    Value,
    Score,
    Information,
}

/// Result of one likelihood evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loglik: f64,
    /// `∂ℓ/∂(β, γ)`; empty at [`Detail::Value`].
    pub score: Vec<f64>,
    /// `∂²ℓ/∂θ∂θᵀ` (negative definite near a maximum); present only at
    /// [`Detail::Information`].
    pub information: Option<DMatrix<f64>>,
    /// Residuals that fell outside the basis domain.
    pub outside: usize,
}

/// The sieve likelihood of a fixed dataset on a fixed basis.
#[derive(Debug, Clone)]
pub struct SieveLikelihood<'a> {
    data: &'a [Observation],
    spec: &'a BasisSpec,
    pw: PiecewiseBasis,
    rule: GaussLegendre,
    /// Per span: quadrature weights and basis values at the span's nodes.
    span_nodes: Vec<Vec<(f64, [f64; 4])>>,
    d: usize,
}

struct Tables {
    /// Per span: `∫ exp{g}`, `∫ B exp{g}` and `∫ B Bᵀ exp{g}` over the whole
    /// span, for the four basis functions active there.
    s0: Vec<f64>,
    s1: Vec<[f64; 4]>,
    s2: Vec<[[f64; 4]; 4]>,
}

struct Accumulator {
    integral: f64,
    /// Signed coverage of whole spans as a difference array: `+sign` at the
    /// first covered span and `−sign` after the last. Entries are integers.
    cover: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl<'a> SieveLikelihood<'a> {
    pub fn new(data: &'a [Observation], spec: &'a BasisSpec) -> Result<Self> {
        let d = validate(data)?;
        let pw = PiecewiseBasis::new(spec);
        let rule = GaussLegendre::default();
        let span_nodes = pw
            .breakpoints()
            .windows(2)
            .enumerate()
            .map(|(j, w)| {
                rule.mapped(w[0], w[1])
                    .map(|(x, wt)| (wt, pw.values_in_span(j, x - w[0])))
                    .collect()
            })
            .collect();
        Ok(Self {
            data,
            spec,
            pw,
            rule,
            span_nodes,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn basis_count(&self) -> usize {
        self.spec.basis_count()
    }

    pub fn spec(&self) -> &BasisSpec {
        self.spec
    }

    pub fn data(&self) -> &[Observation] {
        self.data
    }

    fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.beta.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: theta.beta.len(),
            });
        }
        if theta.gamma.len() != self.basis_count() {
            return Err(Error::DimensionMismatch {
                expected: self.basis_count(),
                found: theta.gamma.len(),
            });
        }
        Ok(())
    }

    pub fn log_likelihood(&self, theta: &Theta) -> Result<f64> {
        Ok(self.evaluate(theta, Detail::Value)?.loglik)
    }

    pub fn score(&self, theta: &Theta) -> Result<Vec<f64>> {
        Ok(self.evaluate(theta, Detail::Score)?.score)
    }

    pub fn information(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        Ok(self
            .evaluate(theta, Detail::Information)?
            .information
            .expect("requested information"))
    }

    /// Evaluates the log-likelihood and, depending on `detail`, its first and
    /// second derivatives.
    pub fn evaluate(&self, theta: &Theta, detail: Detail) -> Result<Evaluation> {
        self.check_theta(theta)?;
        Ok(self.evaluate_unchecked(theta, detail)?)
    }

    /// Evaluation without the dimension check; overflow and non-finite
    /// results are the only failures.
    pub fn evaluate_unchecked(
        &self,
        theta: &Theta,
        detail: Detail,
    ) -> std::result::Result<Evaluation, EvalError> {
        let d = self.d;
        let k = self.basis_count();
        let p = d + k;
        let gamma = &theta.gamma;
        let tables = self.tables(gamma, detail)?;
        let n_spans = self.pw.n_spans();
        let mut acc = Accumulator {
            integral: 0.0,
            cover: vec![0.0; n_spans + 1],
            g1: vec![0.0; if detail >= Detail::Score { k } else { 0 }],
            g2: vec![
                0.0;
                if detail >= Detail::Information {
                    k * k
                } else {
                    0
                }
            ],
        };
        let mut score = vec![0.0; if detail >= Detail::Score { p } else { 0 }];
        let mut info = vec![
            0.0;
            if detail >= Detail::Information {
                p * p
            } else {
                0
            }
        ];
        let mut point_sum = 0.0;
        let mut outside = 0usize;
        let a = self.pw.domain_lo();

        for obs in self.data {
            let fit = dot(&obs.x, &theta.beta);
            let eps = obs.y - fit;
            let tau = obs.t.map(|t| t - fit);
            let delta = if obs.delta { 1.0 } else { 0.0 };

            let le = self.pw.local(eps);
            outside += le.outside as usize;
            let ge = le.combine(gamma);
            let exp_e = capped_exp(ge.value)?;
            point_sum += delta * ge.value;

            let lower = tau.unwrap_or(a);
            if lower <= eps {
                self.add_interval(lower, eps, 1.0, gamma, &mut acc, detail)?;
            } else {
                self.add_interval(eps, lower, -1.0, gamma, &mut acc, detail)?;
            }

            let lt: Option<(LocalBasis, f64, f64)> = match tau {
                Some(tau) => {
                    let lt = self.pw.local(tau);
                    outside += lt.outside as usize;
                    let gt = lt.combine(gamma);
                    Some((lt, capped_exp(gt.value)?, gt.d1))
                }
                None => None,
            };

            if detail >= Detail::Score {
                let mut w = -delta * ge.d1 + exp_e;
                if let Some((_, exp_t, _)) = lt {
                    w -= exp_t;
                }
                for (s, x) in score[..d].iter_mut().zip(&obs.x) {
                    *s += x * w;
                }
                for r in 0..4 {
                    score[d + le.first + r] += delta * le.values[0][r];
                }
            }

            if detail >= Detail::Information {
                let mut w = delta * ge.d2 - exp_e * ge.d1;
                if let Some((_, exp_t, d1_t)) = lt {
                    w += exp_t * d1_t;
                }
                for i in 0..d {
                    for j in 0..d {
                        info[i * p + j] += w * obs.x[i] * obs.x[j];
                    }
                }
                for r in 0..4 {
                    let col = d + le.first + r;
                    let v = -delta * le.values[1][r] + le.values[0][r] * exp_e;
                    for i in 0..d {
                        info[i * p + col] += obs.x[i] * v;
                    }
                }
                if let Some((lt, exp_t, _)) = lt {
                    for r in 0..4 {
                        let col = d + lt.first + r;
                        let v = -lt.values[0][r] * exp_t;
                        for i in 0..d {
                            info[i * p + col] += obs.x[i] * v;
                        }
                    }
                }
            }
        }

        let mut cover = Vec::with_capacity(n_spans);
        let mut running = 0.0;
        for c in &acc.cover[..n_spans] {
            running += c;
            cover.push(running);
        }
        let integral = acc.integral
            + cover
                .iter()
                .zip(&tables.s0)
                .map(|(c, v)| c * v)
                .sum::<f64>();
        let loglik = point_sum - integral;
        if !loglik.is_finite() {
            return Err(EvalError::NonFinite);
        }

        if detail >= Detail::Score {
            for (j, &c) in cover.iter().enumerate() {
                if c != 0.0 {
                    for r in 0..4 {
                        acc.g1[j + r] += c * tables.s1[j][r];
                        if detail >= Detail::Information {
                            for q in 0..4 {
                                acc.g2[(j + r) * k + j + q] += c * tables.s2[j][r][q];
                            }
                        }
                    }
                }
            }
            for kk in 0..k {
                score[d + kk] -= acc.g1[kk];
            }
        }

        let information = if detail >= Detail::Information {
            for r in 0..k {
                for c in 0..k {
                    info[(d + r) * p + d + c] = -acc.g2[r * k + c];
                }
            }
            for i in 0..d {
                for c in d..p {
                    info[c * p + i] = info[i * p + c];
                }
            }
            Some(DMatrix::from_row_slice(p, p, &info))
        } else {
            None
        };

        Ok(Evaluation {
            loglik,
            score,
            information,
            outside,
        })
    }

    fn tables(&self, gamma: &[f64], detail: Detail) -> std::result::Result<Tables, EvalError> {
        let want1 = detail >= Detail::Score;
        let want2 = detail >= Detail::Information;
        let m = self.span_nodes.len();
        let mut t0 = Vec::with_capacity(m);
        let mut t1 = Vec::with_capacity(if want1 { m } else { 0 });
        let mut t2 = Vec::with_capacity(if want2 { m } else { 0 });
        for (j, nodes) in self.span_nodes.iter().enumerate() {
            let g = &gamma[j..j + 4];
            let mut s0 = 0.0;
            let mut s1 = [0.0; 4];
            let mut s2 = [[0.0; 4]; 4];
            for (w, b) in nodes {
                let we = w * capped_exp(dot(b, g))?;
                s0 += we;
                if want1 {
                    for r in 0..4 {
                        s1[r] += we * b[r];
                        if want2 {
                            for q in 0..4 {
                                s2[r][q] += we * b[r] * b[q];
                            }
                        }
                    }
                }
            }
            t0.push(s0);
            if want1 {
                t1.push(s1);
            }
            if want2 {
                t2.push(s2);
            }
        }
        Ok(Tables {
            s0: t0,
            s1: t1,
            s2: t2,
        })
    }

    /// Adds `sign · ∫_l^u {1, B, BBᵀ} exp{g}` for `l ≤ u`. Whole spans are
    /// recorded as coverage against the span tables; partial spans and the
    /// pieces beyond the domain are integrated directly.
    fn add_interval(
        &self,
        l: f64,
        u: f64,
        sign: f64,
        gamma: &[f64],
        acc: &mut Accumulator,
        detail: Detail,
    ) -> std::result::Result<(), EvalError> {
        let k = gamma.len();
        let want1 = detail >= Detail::Score;
        let want2 = detail >= Detail::Information;
        let breaks = self.pw.breakpoints();
        let (a, b) = (self.pw.domain_lo(), self.pw.domain_hi());

        let partial = |j: usize, lo: f64, hi: f64, acc: &mut Accumulator| {
            if hi <= lo {
                return Ok(());
            }
            let g = &gamma[j..j + 4];
            let p = breaks[j];
            for (x, w) in self.rule.mapped(lo, hi) {
                let basis = self.pw.values_in_span(j, x - p);
                let we = sign * w * capped_exp(dot(&basis, g))?;
                acc.integral += we;
                if want1 {
                    for r in 0..4 {
                        acc.g1[j + r] += we * basis[r];
                        if want2 {
                            for q in 0..4 {
                                acc.g2[(j + r) * k + j + q] += we * basis[r] * basis[q];
                            }
                        }
                    }
                }
            }
            Ok(())
        };

        let last = self.pw.n_spans() - 1;
        if l < a {
            partial(0, l, u.min(a), acc)?;
        }
        if u > b {
            partial(last, l.max(b), u, acc)?;
        }
        let (lo, hi) = (l.max(a), u.min(b));
        if hi <= lo {
            return Ok(());
        }
        let jl = self.pw.span_of(lo);
        let ju = self.pw.span_of(hi);
        if jl == ju {
            return partial(jl, lo, hi, acc);
        }
        partial(jl, lo, breaks[jl + 1], acc)?;
        if jl + 1 < ju {
            acc.cover[jl + 1] += sign;
            acc.cover[ju] -= sign;
        }
        partial(ju, breaks[ju], hi, acc)
    }
}

#[inline]
fn capped_exp(g: f64) -> std::result::Result<f64, EvalError> {
    if g > EXP_CAP {
        Err(EvalError::Overflow)
    } else if g.is_nan() {
        Err(EvalError::NonFinite)
    } else {
        Ok(g.exp())
    }
}

/// Sieve log-likelihood of `data` at `theta`.
pub fn log_likelihood(theta: &Theta, data: &[Observation], spec: &BasisSpec) -> Result<f64> {
    SieveLikelihood::new(data, spec)?.log_likelihood(theta)
}

/// Gradient of [`log_likelihood`] with respect to `(β, γ)`.
pub fn score(theta: &Theta, data: &[Observation], spec: &BasisSpec) -> Result<Vec<f64>> {
    SieveLikelihood::new(data, spec)?.score(theta)
}

/// Hessian of [`log_likelihood`] with respect to `(β, γ)`.
pub fn information(theta: &Theta, data: &[Observation], spec: &BasisSpec) -> Result<DMatrix<f64>> {
    SieveLikelihood::new(data, spec)?.information(theta)
}
