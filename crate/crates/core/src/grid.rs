//! Uniform grids on `[a, b]`, prefix/suffix quadrature weights and the
//! second-order finite differences used for every `d/dξ`.
//!
//! Truncation points ξ are always grid nodes, so a truncated integral over
//! `[a, ξ_j]` is a prefix sum over nodes `0..=j` and an integral over
//! `[t_i, b]` is a suffix sum over nodes `i..N`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{CMatrix, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("interval endpoints must be finite (got a = {a}, b = {b})")]
    NonFinite { a: f64, b: f64 },
    #[error("empty or reversed interval: b = {b} must exceed a = {a}")]
    BadInterval { a: f64, b: f64 },
    #[error("a grid needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node index {index} out of range for a grid of {n_nodes} nodes")]
    IndexOutOfRange { index: usize, n_nodes: usize },
    #[error("empty integration interval (truncation at the left endpoint)")]
    EmptyInterval,
    #[error("{samples} samples but {weights} weights")]
    LengthMismatch { samples: usize, weights: usize },
    #[error("differentiation needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
}

/// Uniform partition `t_j = a + j·h`, `j = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    h: f64,
    nodes: Vec<f64>,
}

pub fn make_grid(a: f64, b: f64, n_nodes: usize) -> Result<Grid, GridError> {
    if !a.is_finite() || !b.is_finite() {
        return Err(GridError::NonFinite { a, b });
    }
    if b <= a {
        return Err(GridError::BadInterval { a, b });
    }
    if n_nodes < 3 {
        return Err(GridError::TooFewNodes(n_nodes));
    }
    let h = (b - a) / (n_nodes - 1) as f64;
    let mut nodes: Vec<f64> = (0..n_nodes).map(|j| a + j as f64 * h).collect();
    nodes[n_nodes - 1] = b;
    Ok(Grid { a, b, h, nodes })
}

impl Grid {
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// Index of the node within `1e-9·h` of `x`, if any.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = (x - self.a) / self.h;
        let j = r.round();
        if j < 0.0 || j as usize >= self.nodes.len() || (r - j).abs() > 1e-9 {
            None
        } else {
            Some(j as usize)
        }
    }

    pub fn prefix_weights(&self, j: usize, rule: Rule) -> Result<QuadratureWeights, GridError> {
        prefix_weights(self, j, rule)
    }

    pub fn suffix_weights(&self, i: usize, rule: Rule) -> Result<QuadratureWeights, GridError> {
        suffix_weights(self, i, rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    #[default]
    Trapezoid,
    Simpson,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureWeights {
    /// Rule actually applied.
    pub rule: Rule,
    /// Set when Simpson was requested on an even node count.
    pub fell_back: bool,
    pub weights: Vec<f64>,
}

impl QuadratureWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Weights for `count` equally spaced nodes with spacing `h`. A single node
/// spans an empty interval and gets weight zero.
pub fn span_weights(h: f64, count: usize, rule: Rule) -> QuadratureWeights {
    match count {
        0 => QuadratureWeights {
            rule: Rule::Trapezoid,
            fell_back: false,
            weights: Vec::new(),
        },
        1 => QuadratureWeights {
            rule: Rule::Trapezoid,
            fell_back: rule == Rule::Simpson,
            weights: vec![0.0],
        },
        _ => {
            if rule == Rule::Simpson && count % 2 == 1 {
                let weights = (0..count)
                    .map(|k| {
                        let c = if k == 0 || k == count - 1 {
                            1.0
                        } else if k % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        c * h / 3.0
                    })
                    .collect();
                QuadratureWeights {
                    rule: Rule::Simpson,
                    fell_back: false,
                    weights,
                }
            } else {
                let mut weights = vec![h; count];
                weights[0] = 0.5 * h;
                weights[count - 1] = 0.5 * h;
                QuadratureWeights {
                    rule: Rule::Trapezoid,
                    fell_back: rule == Rule::Simpson,
                    weights,
                }
            }
        }
    }
}

/// Weights for `∫_a^{t_j}` on nodes `t_0..=t_j`.
pub fn prefix_weights(grid: &Grid, j: usize, rule: Rule) -> Result<QuadratureWeights, GridError> {
    if j >= grid.n_nodes() {
        return Err(GridError::IndexOutOfRange {
            index: j,
            n_nodes: grid.n_nodes(),
        });
    }
    if j == 0 {
        return Err(GridError::EmptyInterval);
    }
    Ok(span_weights(grid.h, j + 1, rule))
}

/// Weights for `∫_{t_i}^b` on nodes `t_i..t_{N-1}`; `i = N-1` is the empty
/// interval and yields a single zero weight.
pub fn suffix_weights(grid: &Grid, i: usize, rule: Rule) -> Result<QuadratureWeights, GridError> {
    if i >= grid.n_nodes() {
        return Err(GridError::IndexOutOfRange {
            index: i,
            n_nodes: grid.n_nodes(),
        });
    }
    Ok(span_weights(grid.h, grid.n_nodes() - i, rule))
}

/// `Σ_j w_j · samples_j`, block-wise.
pub fn integrate(samples: &[CMatrix], w: &QuadratureWeights) -> Result<CMatrix, GridError> {
    if samples.len() != w.weights.len() {
        return Err(GridError::LengthMismatch {
            samples: samples.len(),
            weights: w.weights.len(),
        });
    }
    let Some(first) = samples.first() else {
        return Err(GridError::EmptyInterval);
    };
    let mut acc = CMatrix::zeros(first.rows(), first.cols());
    for (s, &wj) in samples.iter().zip(&w.weights) {
        acc.axpy(C64::new(wj, 0.0), s);
    }
    Ok(acc)
}

/// Second-order finite differences on a uniform sequence with spacing `h`:
/// central in the interior, three-point one-sided at both ends.
pub fn diff_uniform(values: &[CMatrix], h: f64) -> Result<Vec<CMatrix>, GridError> {
    let n = values.len();
    if n < 3 {
        return Err(GridError::TooFewSamples(n));
    }
    let inv = 1.0 / (2.0 * h);
    let combo = |terms: &[(f64, usize)]| {
        let mut out = CMatrix::zeros(values[0].rows(), values[0].cols());
        for &(c, k) in terms {
            out.axpy(C64::new(c * inv, 0.0), &values[k]);
        }
        out
    };
    let mut out = Vec::with_capacity(n);
    out.push(combo(&[(-3.0, 0), (4.0, 1), (-1.0, 2)]));
    for i in 1..n - 1 {
        out.push(combo(&[(1.0, i + 1), (-1.0, i - 1)]));
    }
    out.push(combo(&[(3.0, n - 1), (-4.0, n - 2), (1.0, n - 3)]));
    Ok(out)
}

/// [`diff_uniform`] with the grid's spacing; `values[j]` sits at ξ = t_j.
pub fn diff_along_xi(values: &[CMatrix], grid: &Grid) -> Result<Vec<CMatrix>, GridError> {
    if values.len() > grid.n_nodes() {
        return Err(GridError::LengthMismatch {
            samples: values.len(),
            weights: grid.n_nodes(),
        });
    }
    diff_uniform(values, grid.h)
}

/// Running trapezoid integral: `out[j] = ∫_{x_0}^{x_j}` of the samples.
pub fn cumulative_trapezoid(values: &[CMatrix], h: f64) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(values.len());
    let Some(first) = values.first() else {
        return out;
    };
    let mut acc = CMatrix::zeros(first.rows(), first.cols());
    out.push(acc.clone());
    for pair in values.windows(2) {
        acc.axpy(C64::new(0.5 * h, 0.0), &pair[0]);
        acc.axpy(C64::new(0.5 * h, 0.0), &pair[1]);
        out.push(acc.clone());
    }
    out
}
