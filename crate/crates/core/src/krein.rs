//! Krein's reconstruction for matrix kernels.
//!
//! For every truncation point ξ = t_j the module solves
//!
//! ```text
//! g(t,ξ)  − ∫_a^ξ K(t,s) g(s,ξ) ds  = I
//! g*(t,ξ) − ∫_a^ξ g*(s,ξ) K(s,t) ds = I
//! ```
//!
//! accumulates `M(ξ) = ∫_a^ξ g(t,ξ) dt` with `M'(ξ) = g*(ξ,ξ) g(ξ,ξ)`, and
//! reconstructs the solution of the full system as
//!
//! ```text
//! φ(t) = g(t,b) M'(b)⁻¹ v(b) − ∫_t^b g(t,ξ) d/dξ[M'(ξ)⁻¹ v(ξ)] dξ,
//! v(ξ) = d/dξ ∫_a^ξ g*(s,ξ) f(s) ds.
//! ```
//!
//! Products keep exactly this order; for m ≥ 2 the factors do not commute.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::grid::{cumulative_trapezoid, diff_uniform, span_weights, Grid, GridError, Rule};
use crate::kernels::{KernelTable, VectorTable};
use crate::linalg::{CMatrix, Lu, C64, ZERO};
use crate::nystrom::{
    factor_checked, identity_column, kernel_matrix, scale_block_columns, scale_block_rows, NystromError,
    ResolventTable,
};
use crate::parallel::{map_indices, Execution};

/// Relative threshold on `|det M'(ξ)|` (scaled by `max‖M'‖^m`).
pub const CONDITION_37_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KreinError {
    #[error(
        "truncated system is singular at xi = {xi} (node {xi_index}, condition estimate {condition:e})"
    )]
    SingularTruncation {
        xi_index: usize,
        xi: f64,
        condition: f64,
    },
    #[error(
        "truncated system degenerates between xi = {left} and xi = {right} \
         (determinant changes sign between nodes {} and {xi_index})", xi_index - 1
    )]
    DegenerateBetween {
        xi_index: usize,
        left: f64,
        right: f64,
    },
    #[error(
        "Krein formula inapplicable: det M'(xi) vanishes at xi = {xi} (node {xi_index}), \
         |det| = {abs_det:e} <= {threshold:e}"
    )]
    Inapplicable {
        xi_index: usize,
        xi: f64,
        abs_det: f64,
        threshold: f64,
    },
    #[error("scalar formula needs a 1x1 kernel, got block dimension {0}")]
    NotScalar(usize),
    #[error("right-hand side does not match the family ({0})")]
    Shape(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Nystrom(NystromError),
}

impl From<NystromError> for KreinError {
    fn from(e: NystromError) -> Self {
        match e {
            NystromError::Singular {
                xi_index,
                xi,
                condition,
            } => KreinError::SingularTruncation {
                xi_index,
                xi,
                condition,
            },
            other => KreinError::Nystrom(other),
        }
    }
}

impl KreinError {
    /// The truncation point at which the method broke down, if any.
    pub fn degenerate_xi(&self) -> Option<f64> {
        match self {
            KreinError::SingularTruncation { xi, .. } | KreinError::Inapplicable { xi, .. } => Some(*xi),
            KreinError::DegenerateBetween { left, right, .. } => Some(0.5 * (left + right)),
            _ => None,
        }
    }
}

/// `g(t_i, ξ_j)` and `g*(t_i, ξ_j)` for `0 ≤ i ≤ j < N`.
#[derive(Debug, Clone)]
pub struct TruncatedFamily {
    grid: Grid,
    m: usize,
    g: Vec<Vec<CMatrix>>,
    g_star: Vec<Vec<CMatrix>>,
    /// Relative residual of the `g` and `g*` systems per ξ.
    pub residuals: Vec<(f64, f64)>,
    pub condition_estimates: Vec<f64>,
    /// `ln|det(I − K W)|` and its phase per ξ.
    pub log_abs_det: Vec<f64>,
    pub det_phase: Vec<f64>,
}

impl TruncatedFamily {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn block_dim(&self) -> usize {
        self.m
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    /// `g(t_i, ξ_j)`, `i ≤ j`.
    pub fn g(&self, i: usize, j: usize) -> &CMatrix {
        &self.g[j][i]
    }

    /// `g*(t_i, ξ_j)`, `i ≤ j`.
    pub fn g_star(&self, i: usize, j: usize) -> &CMatrix {
        &self.g_star[j][i]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|&(a, b)| a.max(b))
            .fold(0.0, f64::max)
    }
}

struct Column {
    g: Vec<CMatrix>,
    g_star: Vec<CMatrix>,
    residuals: (f64, f64),
    condition: f64,
    log_abs_det: f64,
    det_phase: f64,
}

fn solve_column(k: &KernelTable, j: usize) -> Result<Column, KreinError> {
    let m = k.block_dim();
    let n = j + 1;
    let nodes: Vec<usize> = (0..n).collect();
    let w = span_weights(k.grid().h(), n, Rule::Trapezoid).weights;
    let kmat = kernel_matrix(k, &nodes);
    let id = CMatrix::identity(n * m);
    let e = identity_column(n, m);

    // g: (I − K W) G = E
    let a = &id - &scale_block_columns(&kmat, m, &w);
    let (lu, condition) = factor_checked(&a, j, k.grid().node(j))?;
    let gcol = lu.solve(&e);
    let r_g = (&(&a * &gcol) - &e).max_abs() / (1.0 + a.norm_inf() * gcol.max_abs());

    // g*: rows R with R (I − W K) = Eᵀ, i.e. (I − W K)ᵀ Rᵀ = E
    let c = &id - &scale_block_rows(&kmat, m, &w);
    let lu_c = Lu::factor(&c).map_err(|_| KreinError::SingularTruncation {
        xi_index: j,
        xi: k.grid().node(j),
        condition: f64::INFINITY,
    })?;
    let rt = lu_c.solve_transpose(&e);
    let r = rt.transpose();
    let et = e.transpose();
    let r_star = (&(&r * &c) - &et).max_abs() / (1.0 + c.norm_one() * r.max_abs());

    Ok(Column {
        g: (0..n).map(|i| gcol.block(i * m, 0, m, m)).collect(),
        g_star: (0..n).map(|i| r.block(0, i * m, m, m)).collect(),
        residuals: (r_g, r_star),
        condition,
        log_abs_det: lu.log_abs_det(),
        det_phase: lu.det_phase(),
    })
}

fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    } else if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Solves both truncated equations at every ξ node.
///
/// Fails at the first ξ whose truncated system is numerically singular, or
/// when `det(I − K W)` turns by more than a quarter revolution between
/// neighbouring nodes (a zero crossed between grid points).
pub fn build_family(k: &KernelTable) -> Result<TruncatedFamily, KreinError> {
    build_family_with(k, Execution::default())
}

pub fn build_family_with(k: &KernelTable, exec: Execution) -> Result<TruncatedFamily, KreinError> {
    let n = k.n_nodes();
    let columns: Vec<Column> = map_indices(exec, n, |j| solve_column(k, j))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let grid = k.grid();
    for j in 1..n {
        let jump = wrap_angle(columns[j].det_phase - columns[j - 1].det_phase);
        if jump.abs() > FRAC_PI_2 {
            return Err(KreinError::DegenerateBetween {
                xi_index: j,
                left: grid.node(j - 1),
                right: grid.node(j),
            });
        }
    }
    let mut fam = TruncatedFamily {
        grid: grid.clone(),
        m: k.block_dim(),
        g: Vec::with_capacity(n),
        g_star: Vec::with_capacity(n),
        residuals: Vec::with_capacity(n),
        condition_estimates: Vec::with_capacity(n),
        log_abs_det: Vec::with_capacity(n),
        det_phase: Vec::with_capacity(n),
    };
    for c in columns {
        fam.g.push(c.g);
        fam.g_star.push(c.g_star);
        fam.residuals.push(c.residuals);
        fam.condition_estimates.push(c.condition);
        fam.log_abs_det.push(c.log_abs_det);
        fam.det_phase.push(c.det_phase);
    }
    Ok(fam)
}

/// Largest deviation in a pair of identities, one for `g` and one for `g*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairResidual {
    pub g: f64,
    pub g_star: f64,
}

impl PairResidual {
    pub fn max(&self) -> f64 {
        self.g.max(self.g_star)
    }
}

/// `g(t,ξ) − I − ∫_a^ξ Γ_ξ(t,s) ds` and `g*(t,ξ) − I − ∫_a^ξ Γ_ξ(s,t) ds`
/// over the whole triangle.
pub fn representation_gap(fam: &TruncatedFamily, resolvents: &[ResolventTable]) -> PairResidual {
    let m = fam.m;
    let id = CMatrix::identity(m);
    let mut out = PairResidual { g: 0.0, g_star: 0.0 };
    for (j, res) in resolvents.iter().enumerate().take(fam.n_nodes()) {
        let w = span_weights(fam.grid.h(), j + 1, Rule::Trapezoid).weights;
        for i in 0..=j {
            let mut rep = id.clone();
            let mut rep_star = id.clone();
            for (s, &ws) in w.iter().enumerate() {
                rep.axpy(C64::new(ws, 0.0), &res.block(i, s));
                rep_star.axpy(C64::new(ws, 0.0), &res.block(s, i));
            }
            out.g = out.g.max((fam.g(i, j) - &rep).max_abs());
            out.g_star = out.g_star.max((fam.g_star(i, j) - &rep_star).max_abs());
        }
    }
    out
}

/// ξ-derivative identities
/// `∂_ξ g(t,ξ) = Γ_ξ(t,ξ) g(ξ,ξ)` and `∂_ξ g*(t,ξ) = g*(ξ,ξ) Γ_ξ(ξ,t)`,
/// with `∂_ξ` by finite differences along each row of the triangle.
pub fn family_xi_derivative_check(
    fam: &TruncatedFamily,
    resolvents: &[ResolventTable],
) -> Result<PairResidual, KreinError> {
    let n = fam.n_nodes();
    if n < 3 {
        return Err(GridError::TooFewSamples(n).into());
    }
    let h = fam.grid.h();
    let mut out = PairResidual { g: 0.0, g_star: 0.0 };
    for i in 0..n.saturating_sub(2) {
        let seq: Vec<CMatrix> = (i..n).map(|j| fam.g(i, j).clone()).collect();
        let seq_star: Vec<CMatrix> = (i..n).map(|j| fam.g_star(i, j).clone()).collect();
        let d = diff_uniform(&seq, h)?;
        let d_star = diff_uniform(&seq_star, h)?;
        for (off, (dj, dsj)) in d.iter().zip(&d_star).enumerate() {
            let j = i + off;
            let rhs = &resolvents[j].block(i, j) * fam.g(j, j);
            let rhs_star = fam.g_star(j, j) * &resolvents[j].block(j, i);
            out.g = out.g.max((dj - &rhs).max_abs());
            out.g_star = out.g_star.max((dsj - &rhs_star).max_abs());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Accumulator {
    /// `M(ξ_j) = ∫_a^{ξ_j} g(t,ξ_j) dt`.
    pub m: Vec<CMatrix>,
    /// `∫_a^{ξ_j} g*(t,ξ_j) dt`, the second expression for the same M.
    pub m_adjoint: Vec<CMatrix>,
    /// `∫_a^{ξ_j} g*(s,s) g(s,s) ds`.
    pub m_integrated: Vec<CMatrix>,
    /// `M'(ξ_j) = g*(ξ_j,ξ_j) g(ξ_j,ξ_j)`.
    pub m_prime: Vec<CMatrix>,
    pub det_m_prime: Vec<C64>,
    pub invertible: Vec<bool>,
    /// `CONDITION_37_TOL · (max‖M'‖)^m`.
    pub threshold: f64,
    /// `max_j ‖M(ξ_j) − ∫ M'‖`.
    pub route_gap: f64,
    /// `max_j ‖∫g − ∫g*‖`.
    pub adjoint_gap: f64,
    /// `max_j |det(g* g) − det(g g*)|`, relative to `max|det M'|`.
    pub det_order_gap: f64,
}

pub fn build_accumulator(fam: &TruncatedFamily) -> Accumulator {
    let n = fam.n_nodes();
    let m = fam.m;
    let h = fam.grid.h();
    let mut mv = Vec::with_capacity(n);
    let mut mv_adj = Vec::with_capacity(n);
    for j in 0..n {
        let w = span_weights(h, j + 1, Rule::Trapezoid).weights;
        let mut acc = CMatrix::zeros(m, m);
        let mut acc_adj = CMatrix::zeros(m, m);
        for (i, &wi) in w.iter().enumerate() {
            acc.axpy(C64::new(wi, 0.0), fam.g(i, j));
            acc_adj.axpy(C64::new(wi, 0.0), fam.g_star(i, j));
        }
        mv.push(acc);
        mv_adj.push(acc_adj);
    }
    let m_prime: Vec<CMatrix> = (0..n).map(|j| fam.g_star(j, j) * fam.g(j, j)).collect();
    let m_integrated = cumulative_trapezoid(&m_prime, h);
    let det = |b: &CMatrix| b.determinant().unwrap_or(ZERO);
    let det_m_prime: Vec<C64> = m_prime.iter().map(det).collect();
    let det_reversed: Vec<C64> = (0..n).map(|j| det(&(fam.g(j, j) * fam.g_star(j, j)))).collect();
    let scale = m_prime.iter().map(CMatrix::norm_inf).fold(0.0, f64::max);
    let threshold = CONDITION_37_TOL * scale.powi(m as i32);
    let invertible = det_m_prime.iter().map(|d| d.norm() > threshold).collect();
    let max_gap = |a: &[CMatrix], b: &[CMatrix]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).max_abs())
            .fold(0.0, f64::max)
    };
    let det_scale = det_m_prime.iter().map(|d| d.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let det_order_gap = det_m_prime
        .iter()
        .zip(&det_reversed)
        .map(|(a, b)| (a - b).norm() / det_scale)
        .fold(0.0, f64::max);
    Accumulator {
        route_gap: max_gap(&mv, &m_integrated),
        adjoint_gap: max_gap(&mv, &mv_adj),
        m: mv,
        m_adjoint: mv_adj,
        m_integrated,
        m_prime,
        det_m_prime,
        invertible,
        threshold,
        det_order_gap,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition37Report {
    pub min_abs_det: f64,
    pub threshold: f64,
    pub per_xi: Vec<bool>,
    pub first_failure: Option<usize>,
}

impl Condition37Report {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

/// Checks `det M'(ξ) ≠ 0` at every node.
pub fn check_condition_37(acc: &Accumulator) -> Condition37Report {
    Condition37Report {
        min_abs_det: acc.det_m_prime.iter().map(|d| d.norm()).fold(f64::INFINITY, f64::min),
        threshold: acc.threshold,
        per_xi: acc.invertible.clone(),
        first_failure: acc.invertible.iter().position(|ok| !ok),
    }
}

#[derive(Debug, Clone)]
pub struct KreinSolution {
    pub phi: VectorTable,
    /// Boundary term `g(t,b) M'(b)⁻¹ v(b)`.
    pub j1: VectorTable,
    /// Integral term `−∫_t^b g(t,ξ) z(ξ) dξ`.
    pub j2: VectorTable,
    pub condition_37_ok: bool,
    pub min_abs_det_m_prime: f64,
}

fn check_f(fam: &TruncatedFamily, f: &VectorTable) -> Result<(), KreinError> {
    if f.len() != fam.n_nodes() || f.m != fam.m {
        return Err(KreinError::Shape(format!(
            "{} samples of dimension {}, family has {} nodes of dimension {}",
            f.len(),
            f.m,
            fam.n_nodes(),
            fam.m
        )));
    }
    Ok(())
}

fn inapplicable(fam: &TruncatedFamily, acc: &Accumulator, j: usize) -> KreinError {
    KreinError::Inapplicable {
        xi_index: j,
        xi: fam.grid.node(j),
        abs_det: acc.det_m_prime[j].norm(),
        threshold: acc.threshold,
    }
}

/// `u(ξ_j) = ∫_a^{ξ_j} g*(s,ξ_j) f(s) ds`.
fn moment(fam: &TruncatedFamily, f: &VectorTable) -> Vec<CMatrix> {
    let h = fam.grid.h();
    (0..fam.n_nodes())
        .map(|j| {
            let w = span_weights(h, j + 1, Rule::Trapezoid).weights;
            let mut acc = CMatrix::zeros(fam.m, 1);
            for (s, &ws) in w.iter().enumerate() {
                if ws != 0.0 {
                    acc.axpy(C64::new(ws, 0.0), &(fam.g_star(s, j) * &f.samples[s]));
                }
            }
            acc
        })
        .collect()
}

/// Reconstructs `φ` from the truncated family.
pub fn krein_solve(fam: &TruncatedFamily, acc: &Accumulator, f: &VectorTable) -> Result<KreinSolution, KreinError> {
    check_f(fam, f)?;
    let report = check_condition_37(acc);
    if let Some(j) = report.first_failure {
        return Err(inapplicable(fam, acc, j));
    }
    let n = fam.n_nodes();
    let h = fam.grid.h();
    let u = moment(fam, f);
    let v = diff_uniform(&u, h)?;
    let w: Vec<CMatrix> = acc
        .m_prime
        .iter()
        .zip(&v)
        .enumerate()
        .map(|(j, (mp, vj))| {
            Lu::factor(mp)
                .map(|lu| lu.solve(vj))
                .map_err(|_| inapplicable(fam, acc, j))
        })
        .collect::<Result<_, _>>()?;
    let z = diff_uniform(&w, h)?;

    let last = n - 1;
    let j1: Vec<CMatrix> = (0..n).map(|i| fam.g(i, last) * &w[last]).collect();
    let j2: Vec<CMatrix> = (0..n)
        .map(|i| {
            let sw = span_weights(h, n - i, Rule::Trapezoid).weights;
            let mut acc = CMatrix::zeros(fam.m, 1);
            for (off, &wx) in sw.iter().enumerate() {
                let j = i + off;
                if wx != 0.0 {
                    acc.axpy(C64::new(-wx, 0.0), &(fam.g(i, j) * &z[j]));
                }
            }
            acc
        })
        .collect();
    let phi: Vec<CMatrix> = j1.iter().zip(&j2).map(|(a, b)| a + b).collect();
    let grid = &fam.grid;
    Ok(KreinSolution {
        phi: VectorTable::from_samples(grid, fam.m, phi),
        j1: VectorTable::from_samples(grid, fam.m, j1),
        j2: VectorTable::from_samples(grid, fam.m, j2),
        condition_37_ok: true,
        min_abs_det_m_prime: report.min_abs_det,
    })
}

/// Scalar form of the reconstruction, written with divisions and the
/// bracket multiplying `g(t,b)` from the left:
///
/// ```text
/// φ(t) = [v(ξ)/M'(ξ)]_{ξ=b} g(t,b) − ∫_t^b g(t,ξ) d/dξ(v(ξ)/M'(ξ)) dξ,
/// M'(ξ) = g(ξ,ξ) g*(ξ,ξ).
/// ```
pub fn krein_solve_scalar(fam: &TruncatedFamily, f: &VectorTable) -> Result<Vec<C64>, KreinError> {
    if fam.m != 1 {
        return Err(KreinError::NotScalar(fam.m));
    }
    check_f(fam, f)?;
    let n = fam.n_nodes();
    let h = fam.grid.h();
    let g = |i: usize, j: usize| fam.g(i, j)[(0, 0)];
    let gs = |i: usize, j: usize| fam.g_star(i, j)[(0, 0)];
    let fv = |i: usize| f.samples[i][(0, 0)];
    let deriv = |x: &[C64]| -> Vec<C64> {
        let k = x.len();
        (0..k)
            .map(|i| {
                if i == 0 {
                    (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h)
                } else if i == k - 1 {
                    (3.0 * x[k - 1] - 4.0 * x[k - 2] + x[k - 3]) / (2.0 * h)
                } else {
                    (x[i + 1] - x[i - 1]) / (2.0 * h)
                }
            })
            .collect()
    };
    let mp: Vec<C64> = (0..n).map(|j| g(j, j) * gs(j, j)).collect();
    let scale = mp.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(j) = mp.iter().position(|z| z.norm() <= CONDITION_37_TOL * scale) {
        return Err(KreinError::Inapplicable {
            xi_index: j,
            xi: fam.grid.node(j),
            abs_det: mp[j].norm(),
            threshold: CONDITION_37_TOL * scale,
        });
    }
    let u: Vec<C64> = (0..n)
        .map(|j| {
            let w = span_weights(h, j + 1, Rule::Trapezoid).weights;
            w.iter().enumerate().map(|(s, &ws)| gs(s, j) * fv(s) * ws).sum()
        })
        .collect();
    let v = deriv(&u);
    let ratio: Vec<C64> = v.iter().zip(&mp).map(|(a, b)| a / b).collect();
    let z = deriv(&ratio);
    Ok((0..n)
        .map(|i| {
            let sw = span_weights(h, n - i, Rule::Trapezoid).weights;
            let tail: C64 = sw
                .iter()
                .enumerate()
                .map(|(off, &wx)| g(i, i + off) * z[i + off] * wx)
                .sum();
            ratio[n - 1] * g(i, n - 1) - tail
        })
        .collect())
}

/// Family, accumulator and reconstruction in one call.
pub fn solve(k: &KernelTable, f: &VectorTable) -> Result<KreinSolution, KreinError> {
    let fam = build_family(k)?;
    let acc = build_accumulator(&fam);
    krein_solve(&fam, &acc, f)
}
