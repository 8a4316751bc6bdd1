//! Cubic B-spline basis on a bounded residual domain.
//!
//! The basis is built on the clamped knot vector
//! `a, a, a, a, ξ₁, …, ξₘ, b, b, b, b`, which yields `m + 4` basis
//! functions. Evaluation uses the Cox–de Boor triangle restricted to the
//! four functions that are nonzero on the active knot span. Outside `[a, b]`
//! each function continues the cubic of the nearest boundary span, so a
//! spline built on it is smooth everywhere. Partition of unity still holds
//! there, nonnegativity does not.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial degree of every basis built by this module.
pub const DEGREE: usize = 3;

const ORDER: usize = DEGREE + 1;

/// Knot placement rule for [`BasisSpec`] construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotPlacement {
    /// `a + j (b - a) / (m + 1)` for `j = 1..=m`.
    #[default]
    Uniform,
    /// Equally spaced empirical quantiles of a reference sample.
    Quantile,
}

/// Cubic B-spline basis configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBasis")]
pub struct BasisSpec {
    domain_lo: f64,
    domain_hi: f64,
    interior_knots: Vec<f64>,
    #[serde(skip)]
    knots: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBasis {
    domain_lo: f64,
    domain_hi: f64,
    interior_knots: Vec<f64>,
}

impl TryFrom<RawBasis> for BasisSpec {
    type Error = Error;

    fn try_from(raw: RawBasis) -> Result<Self> {
        Self::new(raw.domain_lo, raw.domain_hi, raw.interior_knots)
    }
}

/// Values and first two derivatives of the (up to) four basis functions that
/// are nonzero at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBasis {
    /// Global index of the first nonzero basis function.
    pub first: usize,
    /// `values[order][r]` is the `order`-th derivative of basis `first + r`.
    pub values: [[f64; ORDER]; 3],
    /// The point was outside `[a, b]`.
    pub outside: bool,
}

/// A spline and its derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub outside: bool,
}

impl BasisSpec {
    /// Basis on `[lo, hi]` with explicitly supplied interior knots.
    pub fn new(domain_lo: f64, domain_hi: f64, interior_knots: Vec<f64>) -> Result<Self> {
        check_domain(domain_lo, domain_hi)?;
        let ordered = interior_knots.windows(2).all(|w| w[0] < w[1]);
        let inside = interior_knots
            .iter()
            .all(|&k| k.is_finite() && k > domain_lo && k < domain_hi);
        if !ordered || !inside {
            return Err(Error::InvalidKnots {
                lo: domain_lo,
                hi: domain_hi,
            });
        }
        let mut knots = Vec::with_capacity(interior_knots.len() + 2 * ORDER);
        knots.extend(std::iter::repeat_n(domain_lo, ORDER));
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(domain_hi, ORDER));
        Ok(Self {
            domain_lo,
            domain_hi,
            interior_knots,
            knots,
        })
    }

    /// Equally spaced interior knots.
    pub fn uniform(domain_lo: f64, domain_hi: f64, n_interior: usize) -> Result<Self> {
        check_domain(domain_lo, domain_hi)?;
        let width = domain_hi - domain_lo;
        let knots = (1..=n_interior)
            .map(|j| domain_lo + j as f64 * width / (n_interior + 1) as f64)
            .collect();
        Self::new(domain_lo, domain_hi, knots)
    }

    /// Interior knots at the `j / (m + 1)` empirical quantiles of `sample`.
    /// Fails if the quantiles are tied or fall on the domain boundary.
    pub fn quantile(
        domain_lo: f64,
        domain_hi: f64,
        n_interior: usize,
        sample: &[f64],
    ) -> Result<Self> {
        check_domain(domain_lo, domain_hi)?;
        if n_interior == 0 {
            return Self::new(domain_lo, domain_hi, Vec::new());
        }
        if sample.is_empty() {
            return Err(Error::InvalidKnots {
                lo: domain_lo,
                hi: domain_hi,
            });
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let knots = (1..=n_interior)
            .map(|j| empirical_quantile(&sorted, j as f64 / (n_interior + 1) as f64))
            .collect();
        Self::new(domain_lo, domain_hi, knots)
    }

    pub fn with_placement(
        placement: KnotPlacement,
        domain_lo: f64,
        domain_hi: f64,
        n_interior: usize,
        sample: &[f64],
    ) -> Result<Self> {
        match placement {
            KnotPlacement::Uniform => Self::uniform(domain_lo, domain_hi, n_interior),
            KnotPlacement::Quantile => Self::quantile(domain_lo, domain_hi, n_interior, sample),
        }
    }

    pub fn domain_lo(&self) -> f64 {
        self.domain_lo
    }

    pub fn domain_hi(&self) -> f64 {
        self.domain_hi
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn n_interior(&self) -> usize {
        self.interior_knots.len()
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    /// Number of basis functions, `n_interior + 4`.
    pub fn basis_count(&self) -> usize {
        self.interior_knots.len() + ORDER
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct breakpoints `a, ξ₁, …, ξₘ, b`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut points = Vec::with_capacity(self.interior_knots.len() + 2);
        points.push(self.domain_lo);
        points.extend_from_slice(&self.interior_knots);
        points.push(self.domain_hi);
        points
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.domain_lo && s <= self.domain_hi
    }

    /// Index of the inter-breakpoint span containing `s` (clamped).
    pub fn span_of(&self, s: f64) -> usize {
        let m = self.interior_knots.len();
        self.interior_knots.partition_point(|&k| k <= s).min(m)
    }

    /// The nonzero basis functions at `s` with their first and second
    /// derivatives.
    pub fn local(&self, s: f64) -> LocalBasis {
        let outside = s < self.domain_lo || s > self.domain_hi;
        // Knot-vector index of the span [t_i, t_{i+1}) containing s, or of
        // the nearest boundary span.
        let span = DEGREE + self.span_of(s);
        LocalBasis {
            first: span - DEGREE,
            values: local_derivatives(&self.knots, span, s),
            outside,
        }
    }

    /// All `K` basis functions (or their derivative of the given order) at
    /// `s`.
    ///
    /// # Panics
    ///
    /// If `order > 2`.
    pub fn eval(&self, s: f64, order: usize) -> Vec<f64> {
        assert!(order <= 2, "derivative order must be 0, 1 or 2");
        let local = self.local(s);
        let mut out = vec![0.0; self.basis_count()];
        out[local.first..local.first + ORDER].copy_from_slice(&local.values[order]);
        out
    }

    /// `Σ_k coef_k B_k(s)` and its first two derivatives.
    pub fn eval_spline(&self, coef: &[f64], s: f64) -> SplineValue {
        debug_assert_eq!(coef.len(), self.basis_count());
        let local = self.local(s);
        local.combine(coef)
    }

    /// Greville abscissae; a spline with these coefficients is the identity
    /// function on `[a, b]`.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.basis_count())
            .map(|k| self.knots[k + 1..k + ORDER].iter().sum::<f64>() / DEGREE as f64)
            .collect()
    }
}

impl LocalBasis {
    /// Spline value and derivatives for global coefficients `coef`.
    pub fn combine(&self, coef: &[f64]) -> SplineValue {
        let c = &coef[self.first..self.first + ORDER];
        let dot = |row: &[f64; ORDER]| row.iter().zip(c).map(|(b, g)| b * g).sum::<f64>();
        SplineValue {
            value: dot(&self.values[0]),
            d1: dot(&self.values[1]),
            d2: dot(&self.values[2]),
            outside: self.outside,
        }
    }
}

/// Power-form representation of the basis on each inter-breakpoint span.
///
/// On span `j` (between breakpoints `p_j` and `p_{j+1}`) the nonzero
/// functions are `B_j, …, B_{j+3}`, each a cubic in `v = s - p_j`. Evaluating
/// the cubics is several times cheaper than running the recursion, which
/// matters inside the likelihood's quadrature loops.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseBasis {
    breaks: Vec<f64>,
    interior: Vec<f64>,
    /// `coef[j][r][p]`: coefficient of `v^p` for basis `j + r` on span `j`.
    coef: Vec<[[f64; ORDER]; ORDER]>,
}

impl PiecewiseBasis {
    pub fn new(spec: &BasisSpec) -> Self {
        let breaks = spec.breakpoints();
        let coef = breaks
            .windows(2)
            .map(|w| {
                let (p, h) = (w[0], w[1] - w[0]);
                let at = spec.local(p);
                let mid = spec.local(p + 0.5 * h);
                debug_assert_eq!(at.first, mid.first);
                let mut c = [[0.0; ORDER]; ORDER];
                for r in 0..ORDER {
                    let d3 = (mid.values[2][r] - at.values[2][r]) / (0.5 * h);
                    c[r] = [
                        at.values[0][r],
                        at.values[1][r],
                        0.5 * at.values[2][r],
                        d3 / 6.0,
                    ];
                }
                c
            })
            .collect();
        Self {
            breaks,
            interior: spec.interior_knots.clone(),
            coef,
        }
    }

    pub fn n_spans(&self) -> usize {
        self.coef.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn domain_lo(&self) -> f64 {
        self.breaks[0]
    }

    pub fn domain_hi(&self) -> f64 {
        self.breaks[self.breaks.len() - 1]
    }

    /// Span index of `s`; points outside the domain map to the boundary
    /// spans.
    pub fn span_of(&self, s: f64) -> usize {
        self.interior.partition_point(|&k| k <= s)
    }

    /// Values of the four nonzero functions on span `j` at offset `v`.
    #[inline]
    pub fn values_in_span(&self, j: usize, v: f64) -> [f64; ORDER] {
        let c = &self.coef[j];
        let mut out = [0.0; ORDER];
        for r in 0..ORDER {
            out[r] = c[r][0] + v * (c[r][1] + v * (c[r][2] + v * c[r][3]));
        }
        out
    }

    /// Same contract as [`BasisSpec::local`].
    pub fn local(&self, s: f64) -> LocalBasis {
        let outside = s < self.domain_lo() || s > self.domain_hi();
        let j = self.span_of(s).min(self.n_spans() - 1);
        let v = s - self.breaks[j];
        let c = &self.coef[j];
        let mut values = [[0.0; ORDER]; 3];
        for r in 0..ORDER {
            let [c0, c1, c2, c3] = c[r];
            values[0][r] = c0 + v * (c1 + v * (c2 + v * c3));
            values[1][r] = c1 + v * (2.0 * c2 + 3.0 * v * c3);
            values[2][r] = 2.0 * c2 + 6.0 * v * c3;
        }
        LocalBasis {
            first: j,
            values,
            outside,
        }
    }
}

/// Builds a basis via [`BasisSpec::uniform`].
pub fn build_basis(domain_lo: f64, domain_hi: f64, n_interior: usize) -> Result<BasisSpec> {
    BasisSpec::uniform(domain_lo, domain_hi, n_interior)
}

/// `B_k(s)`, `Ḃ_k(s)` or `B̈_k(s)` for every `k`.
pub fn eval_basis(spec: &BasisSpec, s: f64, order: usize) -> Vec<f64> {
    spec.eval(s, order)
}

fn check_domain(lo: f64, hi: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(Error::InvalidDomain { lo, hi })
    }
}

/// Linear-interpolation quantile of a sorted sample.
pub(crate) fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Degree-0..=3 basis values on knot span `span`, then first and second
/// derivatives of the cubic functions from the lower-degree rows.
fn local_derivatives(t: &[f64], span: usize, x: f64) -> [[f64; ORDER]; 3] {
    // tri[q][r]: degree-q basis function with global index span - q + r.
    let mut tri = [[0.0; ORDER]; ORDER];
    tri[0][0] = 1.0;
    let mut left = [0.0; ORDER];
    let mut right = [0.0; ORDER];
    for q in 1..ORDER {
        left[q] = x - t[span + 1 - q];
        right[q] = t[span + q] - x;
        let mut saved = 0.0;
        for r in 0..q {
            let denom = right[r + 1] + left[q - r];
            let temp = tri[q - 1][r] / denom;
            tri[q][r] = saved + right[r + 1] * temp;
            saved = left[q - r] * temp;
        }
        tri[q][q] = saved;
    }

    // Value of the degree-q function with global index `idx`, zero when it is
    // not supported on this span.
    let lower = |q: usize, idx: isize| -> f64 {
        let r = idx - (span as isize - q as isize);
        if (0..=q as isize).contains(&r) {
            tri[q][r as usize]
        } else {
            0.0
        }
    };
    let ratio = |num: f64, lo: usize, hi: usize| -> f64 {
        let width = t[hi] - t[lo];
        if width > 0.0 {
            num / width
        } else {
            0.0
        }
    };
    // First derivative of the degree-q function with index idx.
    let d1 = |q: usize, idx: isize| -> f64 {
        let i = idx as usize;
        q as f64
            * (ratio(lower(q - 1, idx), i, i + q) - ratio(lower(q - 1, idx + 1), i + 1, i + q + 1))
    };

    let mut out = [[0.0; ORDER]; 3];
    for r in 0..ORDER {
        let idx = (span - DEGREE + r) as isize;
        let i = idx as usize;
        out[0][r] = tri[DEGREE][r];
        out[1][r] = d1(DEGREE, idx);
        out[2][r] = DEGREE as f64
            * (ratio(d1(DEGREE - 1, idx), i, i + DEGREE)
                - ratio(d1(DEGREE - 1, idx + 1), i + 1, i + DEGREE + 1));
    }
    out
}
