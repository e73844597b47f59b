//! Dense Nyström discretization: direct solves of the full and truncated
//! systems and the resolvent kernels `Γ_ξ`.
//!
//! This module is the reference every other solver is checked against, so it
//! deliberately stays naive: assemble the block matrix `I − K·W`, factor it
//! with partial pivoting, solve.

use thiserror::Error;

use crate::grid::{span_weights, Grid, Rule};
use crate::kernels::{KernelTable, VectorTable};
use crate::linalg::{CMatrix, LinalgError, Lu, C64};
use crate::parallel::{map_indices, Execution};

/// Condition estimates above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Relative residual expected from a backward-stable LU solve.
pub const LU_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NystromError {
    #[error(
        "no unique solution at this resolution: truncated system at xi = {xi} (node {xi_index}) \
         is numerically singular (condition estimate {condition:e})"
    )]
    Singular {
        xi_index: usize,
        xi: f64,
        condition: f64,
    },
    #[error("right-hand side has {got} samples of dimension {got_m}, expected {want} of dimension {want_m}")]
    Shape {
        got: usize,
        got_m: usize,
        want: usize,
        want_m: usize,
    },
    #[error("{0}")]
    Grid(#[from] crate::grid::GridError),
}

#[derive(Debug, Clone)]
pub struct DirectSolve {
    pub phi: VectorTable,
    /// `‖φ − KWφ − f‖ / (‖f‖ + ‖KW‖·‖φ‖)` on the full grid.
    pub residual_norm: f64,
    pub condition_estimate: f64,
}

#[derive(Debug, Clone)]
pub struct TruncatedSolve {
    pub xi_index: usize,
    /// `φ(t_0..=t_j)`.
    pub phi: Vec<CMatrix>,
    pub residual_norm: f64,
    pub condition_estimate: f64,
}

/// `Γ_ξ(t_p, t_q)` for `ξ = t_j`, `0 ≤ p, q ≤ j`.
#[derive(Debug, Clone)]
pub struct ResolventTable {
    pub xi_index: usize,
    m: usize,
    gamma: CMatrix,
    /// Relative residual of `Γ − ∫K Γ = K`.
    pub left_residual: f64,
    /// Relative residual of `Γ − ∫Γ K = K` (verified, not solved).
    pub right_residual: f64,
    pub condition_estimate: f64,
}

impl ResolventTable {
    pub fn block(&self, p: usize, q: usize) -> CMatrix {
        self.gamma.block(p * self.m, q * self.m, self.m, self.m)
    }

    pub fn block_dim(&self) -> usize {
        self.m
    }

    /// Number of nodes in `[a, ξ]`.
    pub fn len(&self) -> usize {
        self.xi_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.gamma
    }
}

/// `K(t_i, t_k)` for `i, k ∈ nodes` assembled as one dense matrix.
pub(crate) fn kernel_matrix(k: &KernelTable, nodes: &[usize]) -> CMatrix {
    let m = k.block_dim();
    let n = nodes.len();
    let mut out = CMatrix::zeros(n * m, n * m);
    for (p, &i) in nodes.iter().enumerate() {
        for (q, &j) in nodes.iter().enumerate() {
            out.set_block(p * m, q * m, k.block(i, j));
        }
    }
    out
}

/// Scales block column `q` by `w[q]` (`K·W`).
pub(crate) fn scale_block_columns(a: &CMatrix, m: usize, w: &[f64]) -> CMatrix {
    CMatrix::from_fn(a.rows(), a.cols(), |r, c| a[(r, c)] * w[c / m])
}

/// Scales block row `p` by `w[p]` (`W·K`).
pub(crate) fn scale_block_rows(a: &CMatrix, m: usize, w: &[f64]) -> CMatrix {
    CMatrix::from_fn(a.rows(), a.cols(), |r, c| a[(r, c)] * w[r / m])
}

pub(crate) fn stack(samples: &[CMatrix]) -> CMatrix {
    let m = samples.first().map_or(0, CMatrix::rows);
    let mut out = CMatrix::zeros(samples.len() * m, 1);
    for (i, s) in samples.iter().enumerate() {
        out.set_block(i * m, 0, s);
    }
    out
}

pub(crate) fn unstack(v: &CMatrix, m: usize) -> Vec<CMatrix> {
    (0..v.rows() / m).map(|i| v.block(i * m, 0, m, v.cols())).collect()
}

/// Block column of `n` identities, `(n·m) × m`.
pub(crate) fn identity_column(n: usize, m: usize) -> CMatrix {
    let mut out = CMatrix::zeros(n * m, m);
    let id = CMatrix::identity(m);
    for i in 0..n {
        out.set_block(i * m, 0, &id);
    }
    out
}

/// Factors `a`, refusing exact or numerical singularity.
pub(crate) fn factor_checked(a: &CMatrix, xi_index: usize, xi: f64) -> Result<(Lu, f64), NystromError> {
    match Lu::factor(a) {
        Ok(lu) => {
            let condition = lu.condition_estimate();
            if !condition.is_finite() || condition > SINGULAR_CONDITION {
                Err(NystromError::Singular {
                    xi_index,
                    xi,
                    condition,
                })
            } else {
                Ok((lu, condition))
            }
        }
        Err(LinalgError::ZeroPivot { .. }) => Err(NystromError::Singular {
            xi_index,
            xi,
            condition: f64::INFINITY,
        }),
        Err(e) => unreachable!("Nyström matrices are square: {e}"),
    }
}

fn relative_residual(r: &CMatrix, f: &CMatrix, op_norm: f64, x: &CMatrix) -> f64 {
    let denom = f.max_abs() + op_norm * x.max_abs();
    if denom == 0.0 {
        r.max_abs()
    } else {
        r.max_abs() / denom
    }
}

fn check_rhs(k: &KernelTable, f: &VectorTable) -> Result<(), NystromError> {
    if f.len() != k.n_nodes() || f.m != k.block_dim() {
        return Err(NystromError::Shape {
            got: f.len(),
            got_m: f.m,
            want: k.n_nodes(),
            want_m: k.block_dim(),
        });
    }
    Ok(())
}

fn solve_prefix(
    k: &KernelTable,
    f: &[CMatrix],
    j: usize,
    rule: Rule,
) -> Result<(Vec<CMatrix>, f64, f64), NystromError> {
    let m = k.block_dim();
    let nodes: Vec<usize> = (0..=j).collect();
    let w = span_weights(k.grid().h(), j + 1, rule).weights;
    let kw = scale_block_columns(&kernel_matrix(k, &nodes), m, &w);
    let a = &CMatrix::identity((j + 1) * m) - &kw;
    let (lu, condition) = factor_checked(&a, j, k.grid().node(j))?;
    let rhs = stack(&f[..=j]);
    let x = lu.solve(&rhs);
    let r = &(&a * &x) - &rhs;
    let residual = relative_residual(&r, &rhs, kw.norm_inf(), &x);
    Ok((unstack(&x, m), residual, condition))
}

/// Solves `φ − ∫_a^b K φ = f` on the full grid (trapezoid weights).
pub fn solve_full(k: &KernelTable, f: &VectorTable) -> Result<DirectSolve, NystromError> {
    solve_full_with(k, f, Rule::Trapezoid)
}

pub fn solve_full_with(k: &KernelTable, f: &VectorTable, rule: Rule) -> Result<DirectSolve, NystromError> {
    check_rhs(k, f)?;
    let (phi, residual_norm, condition_estimate) =
        solve_prefix(k, &f.samples, k.n_nodes() - 1, rule)?;
    Ok(DirectSolve {
        phi: VectorTable::from_samples(k.grid(), f.m, phi),
        residual_norm,
        condition_estimate,
    })
}

/// Solves the truncated system on `[a, t_j]`.
pub fn solve_truncated(k: &KernelTable, f: &VectorTable, j: usize) -> Result<TruncatedSolve, NystromError> {
    check_rhs(k, f)?;
    if j >= k.n_nodes() {
        return Err(crate::grid::GridError::IndexOutOfRange {
            index: j,
            n_nodes: k.n_nodes(),
        }
        .into());
    }
    let (phi, residual_norm, condition_estimate) = solve_prefix(k, &f.samples, j, Rule::Trapezoid)?;
    Ok(TruncatedSolve {
        xi_index: j,
        phi,
        residual_norm,
        condition_estimate,
    })
}

/// Residual of the full discretized equation at a candidate `φ`, relative to
/// `‖f‖ + ‖KW‖·‖φ‖`.
pub fn full_residual(k: &KernelTable, f: &VectorTable, phi: &VectorTable) -> f64 {
    let m = k.block_dim();
    let n = k.n_nodes();
    let nodes: Vec<usize> = (0..n).collect();
    let w = span_weights(k.grid().h(), n, Rule::Trapezoid).weights;
    let kw = scale_block_columns(&kernel_matrix(k, &nodes), m, &w);
    let x = stack(&phi.samples);
    let rhs = stack(&f.samples);
    let r = &(&x - &(&kw * &x)) - &rhs;
    relative_residual(&r, &rhs, kw.norm_inf(), &x)
}

/// Resolvent `Γ_ξ` for `ξ = t_j` from `Γ − K W Γ = K`.
pub fn resolvent(k: &KernelTable, j: usize) -> Result<ResolventTable, NystromError> {
    let m = k.block_dim();
    let nodes: Vec<usize> = (0..=j).collect();
    let w = span_weights(k.grid().h(), j + 1, Rule::Trapezoid).weights;
    let kmat = kernel_matrix(k, &nodes);
    let kw = scale_block_columns(&kmat, m, &w);
    let wk = scale_block_rows(&kmat, m, &w);
    let a = &CMatrix::identity((j + 1) * m) - &kw;
    let (lu, condition) = factor_checked(&a, j, k.grid().node(j))?;
    let gamma = lu.solve(&kmat);

    let r1 = &(&(&gamma - &(&kw * &gamma)) - &kmat);
    let r2 = &(&(&gamma - &(&gamma * &wk)) - &kmat);
    let denom = |op: f64| kmat.max_abs() + gamma.max_abs() * (1.0 + op);
    let rel = |r: &CMatrix, op: f64| {
        let d = denom(op);
        if d == 0.0 {
            r.max_abs()
        } else {
            r.max_abs() / d
        }
    };
    Ok(ResolventTable {
        xi_index: j,
        m,
        left_residual: rel(r1, kw.norm_inf()),
        right_residual: rel(r2, wk.norm_one()),
        gamma,
        condition_estimate: condition,
    })
}

/// `Γ_{t_j}` for every node `j`.
pub fn resolvent_family(k: &KernelTable) -> Result<Vec<ResolventTable>, NystromError> {
    resolvent_family_with(k, Execution::default())
}

pub fn resolvent_family_with(k: &KernelTable, exec: Execution) -> Result<Vec<ResolventTable>, NystromError> {
    map_indices(exec, k.n_nodes(), |j| resolvent(k, j))
        .into_iter()
        .collect()
}

/// Max over `(t, s, ξ)` of `‖∂_ξ Γ_ξ(t,s) − Γ_ξ(t,ξ) Γ_ξ(ξ,s)‖` with the
/// ξ-derivative taken by finite differences over the family.
pub fn resolvent_evolution_residual(k: &KernelTable) -> Result<f64, NystromError> {
    let family = resolvent_family(k)?;
    evolution_residual_from(&family, k.grid())
}

pub fn evolution_residual_from(family: &[ResolventTable], grid: &Grid) -> Result<f64, NystromError> {
    let n = family.len();
    if n < 3 {
        return Err(crate::grid::GridError::TooFewSamples(n).into());
    }
    let h = grid.h();
    let mut worst: f64 = 0.0;
    for p in 0..n {
        for q in 0..n {
            let j0 = p.max(q);
            if n - j0 < 3 {
                continue;
            }
            let seq: Vec<CMatrix> = (j0..n).map(|j| family[j].block(p, q)).collect();
            let d = crate::grid::diff_uniform(&seq, h)?;
            for (off, dj) in d.iter().enumerate() {
                let j = j0 + off;
                let prod = &family[j].block(p, j) * &family[j].block(j, q);
                worst = worst.max((dj - &prod).max_abs());
            }
        }
    }
    Ok(worst)
}

/// Two-sweep solve: `g = (I + lower Volterra part) f`, then
/// `φ = (I + upper Volterra part) g`, both built from the resolvent family.
pub fn solve_via_resolvent(k: &KernelTable, f: &VectorTable) -> Result<DirectSolve, NystromError> {
    check_rhs(k, f)?;
    let family = resolvent_family(k)?;
    Ok(solve_via_resolvent_from(k, f, &family))
}

pub fn solve_via_resolvent_from(k: &KernelTable, f: &VectorTable, family: &[ResolventTable]) -> DirectSolve {
    let grid = k.grid();
    let n = grid.n_nodes();
    let h = grid.h();
    let g: Vec<CMatrix> = (0..n)
        .map(|i| {
            let w = span_weights(h, i + 1, Rule::Trapezoid).weights;
            let mut acc = f.samples[i].clone();
            for (s, &ws) in w.iter().enumerate() {
                if ws != 0.0 {
                    acc.axpy(C64::new(ws, 0.0), &(&family[i].block(i, s) * &f.samples[s]));
                }
            }
            acc
        })
        .collect();
    let phi: Vec<CMatrix> = (0..n)
        .map(|i| {
            let w = span_weights(h, n - i, Rule::Trapezoid).weights;
            let mut acc = g[i].clone();
            for (off, &wx) in w.iter().enumerate() {
                let j = i + off;
                if wx != 0.0 {
                    acc.axpy(C64::new(wx, 0.0), &(&family[j].block(i, j) * &g[j]));
                }
            }
            acc
        })
        .collect();
    let phi = VectorTable::from_samples(grid, f.m, phi);
    let residual_norm = full_residual(k, f, &phi);
    let condition_estimate = family
        .iter()
        .map(|r| r.condition_estimate)
        .fold(0.0, f64::max);
    DirectSolve {
        phi,
        residual_norm,
        condition_estimate,
    }
}
