//! Variance estimation for `β̂`.
//!
//! `Var1` is the inverse of the summed outer products of the plug-in efficient
//! scores; `Var2` is the `β`-block of the inverted negative observed
//! information of `(β, γ)`. Intervals and Wald tests use `Var2`.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::likelihood::{residuals, validate, Observation, Theta, EXP_CAP};
use crate::linalg::{self, symmetric_inverse, CONDITION_LIMIT};

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub estimate: Vec<f64>,
    #[serde(with = "linalg::rows")]
    pub var1: DMatrix<f64>,
    #[serde(with = "linalg::rows")]
    pub var2: DMatrix<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub z: Vec<f64>,
    pub p_values: Vec<f64>,
    pub var1_condition: f64,
    pub var2_condition: f64,
    pub method_notes: Vec<String>,
}

impl InferenceReport {
    /// Standard errors from `Var2`.
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.var2.nrows())
            .map(|j| self.var2[(j, j)].max(0.0).sqrt())
            .collect()
    }

    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        truth
            .iter()
            .enumerate()
            .map(|(j, t)| self.ci_lo[j] <= *t && *t <= self.ci_hi[j])
            .collect()
    }
}

/// Risk-set bookkeeping for the fitted residuals.
///
/// A subject is at risk at `s` when `τ̂ ≤ s ≤ ε̂`; untruncated subjects
/// use the basis edge as `τ̂`. Subjects with `τ̂ > ε̂` are never at risk.
struct RiskSets {
    /// Ascending `ε̂` with suffix sums of `(1, x)` over `ε̂_j ≥ eps[r]`.
    eps: Vec<f64>,
    eps_suffix: Vec<Vec<f64>>,
    /// Ascending `τ̂` with suffix sums of `(1, x)` over `τ̂_j ≥ tau[r]`.
    tau: Vec<f64>,
    tau_suffix: Vec<Vec<f64>>,
}

impl RiskSets {
    fn new(theta: &Theta, data: &[Observation], domain_lo: f64) -> Self {
        let d = theta.beta.len();
        let mut e_pts = Vec::new();
        let mut t_pts = Vec::new();
        for o in data {
            let (e, t) = residuals(theta, o);
            let t = t.unwrap_or(domain_lo);
            if t <= e {
                e_pts.push((e, &o.x));
                t_pts.push((t, &o.x));
            }
        }
        let suffix = |pts: &mut Vec<(f64, &Vec<f64>)>| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut sums = vec![vec![0.0; d + 1]; pts.len() + 1];
            for r in (0..pts.len()).rev() {
                let mut acc = sums[r + 1].clone();
                acc[0] += 1.0;
                for (a, x) in acc[1..].iter_mut().zip(pts[r].1) {
                    *a += x;
                }
                sums[r] = acc;
            }
            let keys = pts.iter().map(|p| p.0).collect();
            (keys, sums)
        };
        let (eps, eps_suffix) = suffix(&mut e_pts);
        let (tau, tau_suffix) = suffix(&mut t_pts);
        Self {
            eps,
            eps_suffix,
            tau,
            tau_suffix,
        }
    }

    /// Count and covariate sum over `{ε̂ ≥ s} \ {τ̂ > s}`.
    fn totals(&self, s: f64) -> Vec<f64> {
        let ie = self.eps.partition_point(|&e| e < s);
        let it = self.tau.partition_point(|&t| t <= s);
        self.eps_suffix[ie]
            .iter()
            .zip(&self.tau_suffix[it])
            .map(|(a, b)| a - b)
            .collect()
    }

    fn mean(&self, s: f64) -> Option<Vec<f64>> {
        let tot = self.totals(s);
        // Counts are exact integers stored in f64.
        if tot[0] < 0.5 {
            return None;
        }
        Some(tot[1..].iter().map(|v| v / tot[0]).collect())
    }

    /// Every point where the risk set can change, ascending and unique.
    fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.eps.iter().chain(&self.tau).copied().collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }
}

/// Covariate mean over the risk set `{τ̂ ≤ s ≤ ε̂}` at `theta`; `None` when
/// the risk set is empty.
pub fn xbar(s: f64, theta: &Theta, data: &[Observation], spec: &BasisSpec) -> Option<Vec<f64>> {
    RiskSets::new(theta, data, spec.domain_lo()).mean(s)
}

/// Plug-in efficient scores `l̂*_i`, one vector of length `d` per subject.
///
/// Each score is the jump part `Δ (x − X̄(ε̂)) (−ġ(ε̂))` minus the
/// compensator `∫_τ̂^ε̂ (x − X̄(u)) (−ġ(u)) exp{ĝ(u)} du`. Since
/// `ġ exp{ĝ}` is the derivative of `exp{ĝ}` and `X̄` is a step function,
/// the compensator is evaluated exactly as a sum over the steps of `X̄`.
pub fn efficient_scores(
    theta: &Theta,
    data: &[Observation],
    spec: &BasisSpec,
) -> Result<Vec<Vec<f64>>> {
    let d = validate(data)?;
    if theta.beta.len() != d || theta.gamma.len() != spec.basis_count() {
        return Err(Error::DimensionMismatch {
            expected: d + spec.basis_count(),
            found: theta.len(),
        });
    }
    let h = |s: f64| -> Result<f64> {
        let g = spec.eval_spline(&theta.gamma, s).value;
        if g > EXP_CAP {
            return Err(crate::error::EvalError::Overflow.into());
        }
        Ok(g.exp())
    };
    let risk = RiskSets::new(theta, data, spec.domain_lo());
    let pts = risk.breakpoints();

    // cum[r] = ∫_{pts[0]}^{pts[r]} X̄(u) d exp{ĝ(u)}.
    let mut cum = vec![vec![0.0; d]; pts.len()];
    let mut h_prev = match pts.first() {
        Some(&p) => h(p)?,
        None => 0.0,
    };
    for r in 1..pts.len() {
        let h_next = h(pts[r])?;
        let mut acc = cum[r - 1].clone();
        if let Some(m) = risk.mean(0.5 * (pts[r - 1] + pts[r])) {
            for (a, v) in acc.iter_mut().zip(&m) {
                *a += v * (h_next - h_prev);
            }
        }
        cum[r] = acc;
        h_prev = h_next;
    }
    let locate = |s: f64| pts.partition_point(|&p| p < s);

    data.iter()
        .map(|o| {
            let (e, t) = residuals(theta, o);
            let t = t.unwrap_or(spec.domain_lo());
            let mut l = vec![0.0; d];
            if o.delta {
                let gd = spec.eval_spline(&theta.gamma, e).d1;
                if gd != 0.0 {
                    let m = risk.mean(e).unwrap_or_else(|| o.x.clone());
                    for j in 0..d {
                        l[j] -= gd * (o.x[j] - m[j]);
                    }
                }
            }
            if t <= e {
                let dh = h(e)? - h(t)?;
                let (ie, it) = (locate(e), locate(t));
                for j in 0..d {
                    // −∫ (x − X̄)(−ġ) e^ĝ = x ∫ ġ e^ĝ − ∫ X̄ ġ e^ĝ.
                    l[j] += o.x[j] * dh - (cum[ie][j] - cum[it][j]);
                }
            }
            Ok(l)
        })
        .collect()
}

/// `Var1`, `Var2`, 95% intervals and Wald p-values.
///
/// `at_floor` lists log-hazard coefficients held at their lower bound; they
/// are treated as fixed and dropped from the information before inversion.
pub fn variance_estimates(
    theta: &Theta,
    info_full: &DMatrix<f64>,
    at_floor: &[usize],
    scores: &[Vec<f64>],
) -> Result<InferenceReport> {
    let d = theta.beta.len();
    let p = theta.len();
    if info_full.nrows() != p || info_full.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: info_full.nrows(),
        });
    }
    let mut notes = Vec::new();

    let mut outer = DMatrix::<f64>::zeros(d, d);
    for l in scores {
        if l.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: l.len(),
            });
        }
        for a in 0..d {
            for b in 0..d {
                outer[(a, b)] += l[a] * l[b];
            }
        }
    }
    let inv1 = symmetric_inverse(&outer);
    if inv1.pseudo {
        let msg = format!(
            "efficient-score information is near singular (condition {:.3e} above {:.0e}); Var1 uses a pseudo-inverse",
            inv1.condition, CONDITION_LIMIT
        );
        warn!("{msg}");
        notes.push(msg);
    }

    if at_floor.iter().any(|&i| i < d || i >= p) {
        return Err(Error::InvalidConfig(
            "only log-hazard coefficients can be held at the floor".into(),
        ));
    }
    let free: Vec<usize> = (0..p).filter(|i| !at_floor.contains(i)).collect();
    if !at_floor.is_empty() {
        notes.push(format!(
            "{} log-hazard coefficient(s) at the lower bound were held fixed for Var2",
            at_floor.len()
        ));
    }
    let neg = DMatrix::from_fn(free.len(), free.len(), |i, j| {
        -info_full[(free[i], free[j])]
    });
    let inv2 = symmetric_inverse(&neg);
    if inv2.pseudo {
        let msg = format!(
            "observed information is near singular (condition {:.3e}); Var2 uses a pseudo-inverse",
            inv2.condition
        );
        warn!("{msg}");
        notes.push(msg);
    }
    let var2 = inv2.matrix.view((0, 0), (d, d)).into_owned();
    if (0..d).any(|j| var2[(j, j)] <= 0.0) {
        let msg = "Var2 has a non-positive diagonal entry; the estimate may not be a local maximum"
            .to_string();
        warn!("{msg}");
        notes.push(msg);
    }

    let mut ci_lo = Vec::with_capacity(d);
    let mut ci_hi = Vec::with_capacity(d);
    let mut z = Vec::with_capacity(d);
    let mut p_values = Vec::with_capacity(d);
    for j in 0..d {
        let b = theta.beta[j];
        let se = var2[(j, j)].max(0.0).sqrt();
        ci_lo.push(b - Z_975 * se);
        ci_hi.push(b + Z_975 * se);
        let zj = b / se;
        z.push(zj);
        p_values.push(if zj.is_finite() {
            erfc(zj.abs() / std::f64::consts::SQRT_2)
        } else {
            f64::NAN
        });
    }

    Ok(InferenceReport {
        estimate: theta.beta.clone(),
        var1: inv1.matrix,
        var2,
        ci_lo,
        ci_hi,
        z,
        p_values,
        var1_condition: inv1.condition,
        var2_condition: inv2.condition,
        method_notes: notes,
    })
}

/// Efficient scores and variance estimates for a fit.
pub fn infer(fit: &FitResult, data: &[Observation]) -> Result<InferenceReport> {
    let scores = efficient_scores(&fit.theta_hat, &fit.centered(data), &fit.domain)?;
    variance_estimates(&fit.theta_hat, &fit.info_full, &fit.at_floor, &scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;

    fn fixture() -> (Vec<Observation>, BasisSpec) {
        let data = vec![
            Observation::new(1.0, true, Some(-1.0), vec![0.5]),
            Observation::new(0.2, false, None, vec![-1.0]),
            Observation::new(2.0, true, Some(0.5), vec![2.0]),
        ];
        (data, build_basis(-3.0, 3.0, 1).unwrap())
    }

    #[test]
    fn full_risk_set_gives_plain_mean() {
        let (data, spec) = fixture();
        let theta = Theta::zeros(1, spec.basis_count());
        let data: Vec<Observation> = data
            .into_iter()
            .map(|o| Observation { t: None, ..o })
            .collect();
        let m = xbar(-2.0, &theta, &data[..2], &spec).unwrap();
        assert!((m[0] - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn singleton_risk_set() {
        let (data, spec) = fixture();
        let theta = Theta::zeros(1, spec.basis_count());
        assert_eq!(xbar(1.5, &theta, &data, &spec), Some(vec![2.0]));
        assert_eq!(xbar(2.5, &theta, &data, &spec), None);
    }

    #[test]
    fn constant_hazard_gives_zero_scores() {
        let (data, spec) = fixture();
        let theta = Theta::new(vec![0.3], vec![0.7; spec.basis_count()]);
        for l in efficient_scores(&theta, &data, &spec).unwrap() {
            assert!(l[0].abs() < 1e-14);
        }
    }

    #[test]
    fn identical_covariates_give_zero_scores() {
        let spec = build_basis(-3.0, 3.0, 2).unwrap();
        let data = vec![
            Observation::new(1.0, true, Some(-1.0), vec![0.4]),
            Observation::new(0.5, true, None, vec![0.4]),
        ];
        let theta = Theta::new(vec![0.1], vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.2]);
        for l in efficient_scores(&theta, &data, &spec).unwrap() {
            assert!(l[0].abs() < 1e-12, "{l:?}");
        }
    }

    #[test]
    fn var2_is_beta_block_of_inverse() {
        let theta = Theta::new(vec![1.0], vec![0.0, 0.0]);
        let info = -DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let scores = vec![vec![1.0], vec![-2.0]];
        let rep = variance_estimates(&theta, &info, &[], &scores).unwrap();
        let inv = (-&info).try_inverse().unwrap();
        assert!((rep.var2[(0, 0)] - inv[(0, 0)]).abs() < 1e-14);
        assert!((rep.var1[(0, 0)] - 0.2).abs() < 1e-14);
        let se = inv[(0, 0)].sqrt();
        assert!((rep.ci_hi[0] - 1.0 - Z_975 * se).abs() < 1e-14);
        let p = erfc((1.0 / se) / std::f64::consts::SQRT_2);
        assert!((rep.p_values[0] - p).abs() < 1e-15);
        assert!(rep.method_notes.is_empty());
    }

    #[test]
    fn singular_score_matrix_is_noted() {
        let theta = Theta::new(vec![1.0, 2.0], vec![]);
        let info = -DMatrix::<f64>::identity(2, 2);
        let scores = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let rep = variance_estimates(&theta, &info, &[], &scores).unwrap();
        assert_eq!(rep.method_notes.len(), 1);
        assert!(rep.var1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn held_coefficients_are_dropped_before_inversion() {
        let theta = Theta::new(vec![1.0], vec![-50.0, 0.0]);
        let info = -DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 1.0, 1.0, 1e-30, 0.0, 1.0, 0.0, 2.0]);
        let scores = vec![vec![1.0], vec![-2.0]];
        let rep = variance_estimates(&theta, &info, &[1], &scores).unwrap();
        // Inverse of [[4, 1], [1, 2]] has (0, 0) entry 2/7.
        assert!((rep.var2[(0, 0)] - 2.0 / 7.0).abs() < 1e-14);
        assert_eq!(rep.method_notes.len(), 1);
        assert!(variance_estimates(&theta, &info, &[0], &scores).is_err());
    }
}
