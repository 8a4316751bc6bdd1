//! Composite Gauss–Legendre quadrature over B-spline knot spans.

use std::f64::consts::PI;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};

/// Points per inter-knot span.
pub const RULE_ORDER: usize = 16;

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes are the roots of `P_n`, located by Newton's method from the
    /// Chebyshev-like initial guesses `cos(π (i - 1/4) / (n + 1/2))`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let half = n.div_ceil(2);
        for i in 0..half {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut deriv = 0.0;
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                deriv = dp;
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            if dp != 0.0 {
                deriv = dp;
            }
            let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped affinely to `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        self.mapped(lo, hi).map(|(x, w)| w * f(x)).sum()
    }
}

impl Default for GaussLegendre {
    fn default() -> Self {
        Self::new(RULE_ORDER)
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights of a composite rule over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Ordinal of the sub-interval of `[lo, hi]` that each node belongs to.
    pub span_index: Vec<usize>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Composite grid over `[lo, hi]`, split at every breakpoint of `spec`
/// (boundaries included) that lies strictly inside the interval. Pieces
/// outside the domain are kept; the basis is constant there.
pub fn quadrature_grid(spec: &BasisSpec, lo: f64, hi: f64) -> Result<QuadratureGrid> {
    quadrature_grid_with(&GaussLegendre::default(), spec, lo, hi)
}

pub fn quadrature_grid_with(
    rule: &GaussLegendre,
    spec: &BasisSpec,
    lo: f64,
    hi: f64,
) -> Result<QuadratureGrid> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidLimits { lo, hi });
    }
    let mut grid = QuadratureGrid::default();
    if lo == hi {
        return Ok(grid);
    }
    let mut cuts = vec![lo];
    cuts.extend(spec.breakpoints().into_iter().filter(|&p| p > lo && p < hi));
    cuts.push(hi);
    for (span, w) in cuts.windows(2).enumerate() {
        for (x, wt) in rule.mapped(w[0], w[1]) {
            grid.nodes.push(x);
            grid.weights.push(wt);
            grid.span_index.push(span);
        }
    }
    Ok(grid)
}
