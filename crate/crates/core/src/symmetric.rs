//! Even difference kernels `K(t,s) = −H(t−s)` with `H(−t) = H(t)`.
//!
//! Covers the symmetry `g(t,ξ) = g(ξ−t,ξ)`, the determinant formula
//! `det g(ξ,ξ) = exp ∫_0^ξ tr Γ_t(0,t) dt`, the reconstruction on `[a,b]`,
//! the centered formulation on `[−L, L]` built from
//!
//! ```text
//! q(t,ξ) + ∫_{−ξ}^{ξ} H(t−s) q(s,ξ) ds = I,   −ξ ≤ t ≤ ξ,
//! M(ξ) = ∫_0^ξ q(s,ξ) ds,
//! ```
//!
//! and the decoupling of the antidiagonal 2×2 kernel.

use thiserror::Error;

use crate::grid::{cumulative_trapezoid, diff_uniform, span_weights, Grid, GridError, Rule};
use crate::kernels::{l1_norm, KernelTable, VectorTable};
use crate::krein::{
    build_accumulator, build_family, krein_solve, Accumulator, KreinError, KreinSolution, TruncatedFamily,
    CONDITION_37_TOL,
};
use crate::linalg::{CMatrix, Lu, C64, ONE};
use crate::nystrom::{
    factor_checked, identity_column, kernel_matrix, scale_block_columns, NystromError, ResolventTable,
};
use crate::parallel::{map_indices, Execution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymmetricError {
    #[error("kernel `{0}` is not an even difference kernel")]
    NotEvenDifference(String),
    #[error("centered problems need an interval symmetric about 0, got [{a}, {b}]")]
    NotCentered { a: f64, b: f64 },
    #[error("centered problems need an odd node count of at least 5 so that 0 is a node, got {0}")]
    NodeCount(usize),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Krein(#[from] KreinError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl From<NystromError> for SymmetricError {
    fn from(e: NystromError) -> Self {
        SymmetricError::Krein(e.into())
    }
}

fn require_even(k: &KernelTable) -> Result<(), SymmetricError> {
    if k.is_even_difference() {
        Ok(())
    } else {
        Err(SymmetricError::NotEvenDifference(format!("{:?}", k.kind())))
    }
}

/// `max ‖g(t_i,ξ_j) − g(ξ_j − t_i, ξ_j)‖` together with the same gap for
/// `g*`; returns the larger.
pub fn symmetry_check(k: &KernelTable, fam: &TruncatedFamily) -> Result<f64, SymmetricError> {
    require_even(k)?;
    let mut gap: f64 = 0.0;
    for j in 0..fam.n_nodes() {
        for i in 0..=j {
            gap = gap
                .max((fam.g(i, j) - fam.g(j - i, j)).max_abs())
                .max((fam.g_star(i, j) - fam.g_star(j - i, j)).max_abs());
        }
    }
    Ok(gap)
}

#[derive(Debug, Clone)]
pub struct LiouvilleReport {
    pub det_g_diag: Vec<C64>,
    pub det_g_star_diag: Vec<C64>,
    /// `exp ∫_0^{ξ_j} tr Γ_t(0,t) dt`.
    pub exp_trace_integral: Vec<C64>,
    /// `exp ∫_0^{ξ_j} tr Γ_t(t,0) dt`.
    pub exp_trace_integral_swapped: Vec<C64>,
    pub max_relative_gap: f64,
    pub max_relative_gap_swapped: f64,
    /// `max |det g* − det g| / |det g|` on the diagonal.
    pub adjoint_det_gap: f64,
    pub min_abs_det: f64,
}

pub fn liouville_check(
    k: &KernelTable,
    fam: &TruncatedFamily,
    resolvents: &[ResolventTable],
) -> Result<LiouvilleReport, SymmetricError> {
    require_even(k)?;
    let n = fam.n_nodes();
    if resolvents.len() != n {
        return Err(SymmetricError::Shape(format!(
            "{} resolvent tables for {n} nodes",
            resolvents.len()
        )));
    }
    let h = fam.grid().h();
    let det = |b: &CMatrix| b.determinant().unwrap_or(C64::new(0.0, 0.0));
    let det_g: Vec<C64> = (0..n).map(|j| det(fam.g(j, j))).collect();
    let det_gs: Vec<C64> = (0..n).map(|j| det(fam.g_star(j, j))).collect();
    let exp_of = |traces: Vec<CMatrix>| -> Vec<C64> {
        cumulative_trapezoid(&traces, h)
            .iter()
            .map(|x| x[(0, 0)].exp())
            .collect()
    };
    let tr: Vec<CMatrix> = (0..n)
        .map(|j| CMatrix::scalar(resolvents[j].block(0, j).trace()))
        .collect();
    let tr_swapped: Vec<CMatrix> = (0..n)
        .map(|j| CMatrix::scalar(resolvents[j].block(j, 0).trace()))
        .collect();
    let e = exp_of(tr);
    let e_swapped = exp_of(tr_swapped);
    let rel = |a: &[C64], b: &[C64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm() / x.norm())
            .fold(0.0, f64::max)
    };
    Ok(LiouvilleReport {
        max_relative_gap: rel(&det_g, &e),
        max_relative_gap_swapped: rel(&det_g, &e_swapped),
        adjoint_det_gap: rel(&det_g, &det_gs),
        min_abs_det: det_g.iter().map(|d| d.norm()).fold(f64::INFINITY, f64::min),
        det_g_diag: det_g,
        det_g_star_diag: det_gs,
        exp_trace_integral: e,
        exp_trace_integral_swapped: e_swapped,
    })
}

/// Reconstruction on `[a,b]` for an even difference kernel.
pub fn solve_theorem_4_1(k: &KernelTable, f: &VectorTable) -> Result<(KreinSolution, Accumulator), SymmetricError> {
    require_even(k)?;
    let fam = build_family(k)?;
    let acc = build_accumulator(&fam);
    let sol = krein_solve(&fam, &acc, f)?;
    Ok((sol, acc))
}

/// The reconstruction with `g(s,ξ)` in place of `g*(s,ξ)` inside the
/// moment and the bracket applied before `g(t,b)`.
pub fn theorem_4_1_variant(fam: &TruncatedFamily, acc: &Accumulator, f: &VectorTable) -> Result<VectorTable, KreinError> {
    let n = fam.n_nodes();
    let m = fam.block_dim();
    let h = fam.grid().h();
    if f.len() != n || f.m != m {
        return Err(KreinError::Shape(format!("{} samples of dimension {}", f.len(), f.m)));
    }
    let u: Vec<CMatrix> = (0..n)
        .map(|j| {
            let w = span_weights(h, j + 1, Rule::Trapezoid).weights;
            let mut acc = CMatrix::zeros(m, 1);
            for (s, &ws) in w.iter().enumerate() {
                acc.axpy(C64::new(ws, 0.0), &(fam.g(s, j) * &f.samples[s]));
            }
            acc
        })
        .collect();
    let v = diff_uniform(&u, h)?;
    let w: Vec<CMatrix> = acc
        .m_prime
        .iter()
        .zip(&v)
        .enumerate()
        .map(|(j, (mp, vj))| {
            Lu::factor(mp).map(|lu| lu.solve(vj)).map_err(|_| KreinError::Inapplicable {
                xi_index: j,
                xi: fam.grid().node(j),
                abs_det: 0.0,
                threshold: acc.threshold,
            })
        })
        .collect::<Result<_, _>>()?;
    let z = diff_uniform(&w, h)?;
    let last = n - 1;
    let phi = (0..n)
        .map(|i| {
            let head = if m == 1 {
                fam.g(i, last).scale(w[last][(0, 0)])
            } else {
                fam.g(i, last) * &w[last]
            };
            let sw = span_weights(h, n - i, Rule::Trapezoid).weights;
            let mut out = head;
            for (off, &wx) in sw.iter().enumerate() {
                out.axpy(C64::new(-wx, 0.0), &(fam.g(i, i + off) * &z[i + off]));
            }
            out
        })
        .collect();
    Ok(VectorTable::from_samples(fam.grid(), m, phi))
}

/// `q(t_i, ξ_j)` on a grid over `[−L, L]` with an odd number of nodes;
/// `ξ_j = j·h` for `j = 0..=c` where `c` is the index of `t = 0`.
#[derive(Debug, Clone)]
pub struct CenteredFamily {
    grid: Grid,
    m: usize,
    center: usize,
    q: Vec<Vec<CMatrix>>,
    /// `M(ξ_j) = ∫_0^{ξ_j} q(s,ξ_j) ds`.
    pub m_centered: Vec<CMatrix>,
    pub m_prime: Vec<CMatrix>,
    pub det_m_prime: Vec<C64>,
    pub invertible: Vec<bool>,
    pub threshold: f64,
    pub residuals: Vec<f64>,
}

impl CenteredFamily {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn block_dim(&self) -> usize {
        self.m
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// Number of ξ values, `c + 1`.
    pub fn n_xi(&self) -> usize {
        self.center + 1
    }

    pub fn xi(&self, j: usize) -> f64 {
        j as f64 * self.grid.h()
    }

    /// `q(t_i, ξ_j)` for a global node index with `|i − c| ≤ j`.
    pub fn q(&self, i: usize, j: usize) -> &CMatrix {
        let lo = self.center - j;
        &self.q[j][i - lo]
    }

    /// `max ‖q(t,ξ) − q(−t,ξ)‖`.
    pub fn evenness_gap(&self) -> f64 {
        let c = self.center;
        let mut gap: f64 = 0.0;
        for j in 0..self.n_xi() {
            for d in 0..=j {
                gap = gap.max((self.q(c + d, j) - self.q(c - d, j)).max_abs());
            }
        }
        gap
    }

    /// `det q(ξ_j, ξ_j)`.
    pub fn det_q_diag(&self) -> Vec<C64> {
        (0..self.n_xi())
            .map(|j| {
                self.q(self.center + j, j)
                    .determinant()
                    .unwrap_or(C64::new(0.0, 0.0))
            })
            .collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_abs_det_m_prime(&self) -> f64 {
        self.det_m_prime
            .iter()
            .map(|d| d.norm())
            .fold(f64::INFINITY, f64::min)
    }

    fn inapplicable(&self, j: usize) -> KreinError {
        KreinError::Inapplicable {
            xi_index: j,
            xi: self.xi(j),
            abs_det: self.det_m_prime[j].norm(),
            threshold: self.threshold,
        }
    }
}

fn centered_center(grid: &Grid) -> Result<usize, SymmetricError> {
    let n = grid.n_nodes();
    if n.is_multiple_of(2) || n < 5 {
        return Err(SymmetricError::NodeCount(n));
    }
    let (a, b) = (grid.a(), grid.b());
    if (a + b).abs() > 1e-12 * (b - a) {
        return Err(SymmetricError::NotCentered { a, b });
    }
    Ok((n - 1) / 2)
}

fn solve_q(k: &KernelTable, center: usize, j: usize) -> Result<(Vec<CMatrix>, f64), SymmetricError> {
    let m = k.block_dim();
    let h = k.grid().h();
    let nodes: Vec<usize> = (center - j..=center + j).collect();
    let w = span_weights(h, nodes.len(), Rule::Trapezoid).weights;
    let a = &CMatrix::identity(nodes.len() * m) - &scale_block_columns(&kernel_matrix(k, &nodes), m, &w);
    let e = identity_column(nodes.len(), m);
    let (lu, _) = factor_checked(&a, j, j as f64 * h)?;
    let x = lu.solve(&e);
    let residual = (&(&a * &x) - &e).max_abs() / (1.0 + a.norm_inf() * x.max_abs());
    Ok(((0..nodes.len()).map(|p| x.block(p * m, 0, m, m)).collect(), residual))
}

pub fn build_centered_family(k: &KernelTable) -> Result<CenteredFamily, SymmetricError> {
    build_centered_family_with(k, Execution::default())
}

pub fn build_centered_family_with(k: &KernelTable, exec: Execution) -> Result<CenteredFamily, SymmetricError> {
    require_even(k)?;
    let grid = k.grid().clone();
    let center = centered_center(&grid)?;
    let m = k.block_dim();
    let h = grid.h();
    let solved: Vec<(Vec<CMatrix>, f64)> = map_indices(exec, center + 1, |j| solve_q(k, center, j))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let (q, residuals): (Vec<_>, Vec<_>) = solved.into_iter().unzip();
    let m_centered: Vec<CMatrix> = q
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let w = span_weights(h, j + 1, Rule::Trapezoid).weights;
            let mut acc = CMatrix::zeros(m, m);
            for (d, &wd) in w.iter().enumerate() {
                acc.axpy(C64::new(wd, 0.0), &col[j + d]);
            }
            acc
        })
        .collect();
    let m_prime = diff_uniform(&m_centered, h)?;
    let det_m_prime: Vec<C64> = m_prime
        .iter()
        .map(|b| b.determinant().unwrap_or(C64::new(0.0, 0.0)))
        .collect();
    let scale = m_prime.iter().map(CMatrix::norm_inf).fold(0.0, f64::max);
    let threshold = CONDITION_37_TOL * scale.powi(m as i32);
    let invertible = det_m_prime.iter().map(|d| d.norm() > threshold).collect();
    Ok(CenteredFamily {
        grid,
        m,
        center,
        q,
        m_centered,
        m_prime,
        det_m_prime,
        invertible,
        threshold,
        residuals,
    })
}

#[derive(Debug, Clone)]
pub struct CenteredSolution {
    pub phi: VectorTable,
    /// `½ q(t,L) M'(L)⁻¹ V(L)`.
    pub term_boundary: VectorTable,
    /// `−½ ∫_{|t|}^L q(t,ξ) d/dξ[M'(ξ)⁻¹ V(ξ)] dξ`.
    pub term_integral: VectorTable,
    /// `−½ d/dt ∫_{|t|}^L q(t,ξ) M'(ξ)⁻¹ ∫_{−ξ}^{ξ} q(s,ξ) f'(s) ds dξ`.
    pub term_stieltjes: VectorTable,
    pub min_abs_det_m_prime: f64,
    /// Set for m ≥ 2, where the product order is a reading of the formula
    /// and should be confirmed against the direct solve.
    pub needs_oracle_check: bool,
}

/// Solution of `φ(t) + ∫_{−L}^{L} H(t−s) φ(s) ds = f(t)` from the centered
/// family. `f_prime` is `f'` sampled on the same grid; when absent it is
/// obtained by finite differences.
pub fn solve_theorem_4_2(
    fam: &CenteredFamily,
    f: &VectorTable,
    f_prime: Option<&VectorTable>,
) -> Result<CenteredSolution, SymmetricError> {
    let n = fam.grid.n_nodes();
    let m = fam.m;
    if f.len() != n || f.m != m {
        return Err(SymmetricError::Shape(format!(
            "right-hand side has {} samples of dimension {}, expected {n} of dimension {m}",
            f.len(),
            f.m
        )));
    }
    if let Some(j) = fam.invertible.iter().position(|ok| !ok) {
        return Err(fam.inapplicable(j).into());
    }
    let h = fam.grid.h();
    let c = fam.center;
    let nx = fam.n_xi();
    let fp_samples = match f_prime {
        Some(fp) => {
            if fp.len() != n || fp.m != m {
                return Err(SymmetricError::Shape("derivative table does not match f".into()));
            }
            fp.samples.clone()
        }
        None => diff_uniform(&f.samples, h)?,
    };

    let weighted = |values: &[CMatrix], j: usize| -> CMatrix {
        let w = span_weights(h, 2 * j + 1, Rule::Trapezoid).weights;
        let mut acc = CMatrix::zeros(m, 1);
        for (p, &wp) in w.iter().enumerate() {
            let i = c - j + p;
            acc.axpy(C64::new(wp, 0.0), &(fam.q(i, j) * &values[i]));
        }
        acc
    };
    let lus: Vec<Lu> = fam
        .m_prime
        .iter()
        .enumerate()
        .map(|(j, mp)| Lu::factor(mp).map_err(|_| fam.inapplicable(j)))
        .collect::<Result<_, _>>()?;

    let moment: Vec<CMatrix> = (0..nx).map(|j| weighted(&f.samples, j)).collect();
    let v = diff_uniform(&moment, h)?;
    let w: Vec<CMatrix> = v.iter().zip(&lus).map(|(vj, lu)| lu.solve(vj)).collect();
    let z = diff_uniform(&w, h)?;
    let r: Vec<CMatrix> = (0..nx)
        .map(|j| lus[j].solve(&weighted(&fp_samples, j)))
        .collect();

    // ∫_{|t_i|}^{L} q(t_i,ξ) x(ξ) dξ
    let tail = |i: usize, x: &[CMatrix]| -> CMatrix {
        let d = i.abs_diff(c);
        let sw = span_weights(h, nx - d, Rule::Trapezoid).weights;
        let mut acc = CMatrix::zeros(m, 1);
        for (off, &wx) in sw.iter().enumerate() {
            let j = d + off;
            acc.axpy(C64::new(wx, 0.0), &(fam.q(i, j) * &x[j]));
        }
        acc
    };
    let last = nx - 1;
    let boundary: Vec<CMatrix> = (0..n)
        .map(|i| (fam.q(i, last) * &w[last]).scale_real(0.5))
        .collect();
    let integral: Vec<CMatrix> = (0..n).map(|i| tail(i, &z).scale_real(-0.5)).collect();
    let y: Vec<CMatrix> = (0..n).map(|i| tail(i, &r)).collect();
    let stieltjes: Vec<CMatrix> = diff_uniform(&y, h)?
        .into_iter()
        .map(|d| d.scale_real(-0.5))
        .collect();
    let phi = (0..n)
        .map(|i| &(&boundary[i] + &integral[i]) + &stieltjes[i])
        .collect();
    let grid = &fam.grid;
    Ok(CenteredSolution {
        phi: VectorTable::from_samples(grid, m, phi),
        term_boundary: VectorTable::from_samples(grid, m, boundary),
        term_integral: VectorTable::from_samples(grid, m, integral),
        term_stieltjes: VectorTable::from_samples(grid, m, stieltjes),
        min_abs_det_m_prime: fam.min_abs_det_m_prime(),
        needs_oracle_check: m >= 2,
    })
}

#[derive(Debug, Clone)]
pub struct Example41Report {
    /// `max |q_direct − q_decoupled|` entrywise over all `(t, ξ)`.
    pub max_gap: f64,
    pub det_q_diag: Vec<C64>,
    pub min_abs_det_q_diag: f64,
    /// `∫_{−2L}^{2L} |h_k(t)| dt`.
    pub l1_norms: (f64, f64),
    /// Raised when an L1 norm is not below 1.
    pub l1_warning: bool,
    /// Gap to the closed reduction when `h1 ≡ 0` on the lattice.
    pub plug_in_gap: Option<f64>,
}

/// Solves the q-equation for `H = [[0, h1], [h2, 0]]` directly and through
/// the decoupled scalar equations
///
/// ```text
/// q11 − ∫h1 ∫h2 q11 = 1,   q21 = −∫h2 q11,
/// q22 − ∫h2 ∫h1 q22 = 1,   q12 = −∫h1 q22,
/// ```
///
/// all integrals over `[−ξ, ξ]`.
pub fn example_4_1_reduction(
    h1: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    h2: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    grid: &Grid,
) -> Result<Example41Report, SymmetricError> {
    let center = centered_center(grid)?;
    let spec = crate::kernels::KernelSpec::antidiag_block(h1.clone(), h2.clone());
    let table = crate::kernels::sample_kernel(&spec, grid).map_err(|e| SymmetricError::Shape(e.to_string()))?;
    let fam = build_centered_family(&table)?;
    let h = grid.h();
    let half = grid.b() - grid.a();
    let l1_norms = (l1_norm(&h1, half), l1_norm(&h2, half));
    let lattice_h1_zero = (0..grid.n_nodes()).all(|d| h1(d as f64 * h) == 0.0 && h1(-(d as f64) * h) == 0.0);

    let mut max_gap: f64 = 0.0;
    let mut plug_in_gap: f64 = 0.0;
    for j in 0..=center {
        let nodes: Vec<usize> = (center - j..=center + j).collect();
        let len = nodes.len();
        let w = span_weights(h, len, Rule::Trapezoid).weights;
        let lattice = |hk: &dyn Fn(f64) -> f64| {
            CMatrix::from_fn(len, len, |p, k| C64::new(hk((p as f64 - k as f64) * h) * w[k], 0.0))
        };
        let a1 = lattice(&h1);
        let a2 = lattice(&h2);
        let ones = CMatrix::from_fn(len, 1, |_, _| ONE);
        let id = CMatrix::identity(len);
        let solve = |op: CMatrix| -> Result<CMatrix, SymmetricError> {
            let (lu, _) = factor_checked(&op, j, j as f64 * h)?;
            Ok(lu.solve(&ones))
        };
        let q11 = solve(&id - &(&a1 * &a2))?;
        let q22 = solve(&id - &(&a2 * &a1))?;
        let q21 = -&(&a2 * &q11);
        let q12 = -&(&a1 * &q22);
        for (p, &i) in nodes.iter().enumerate() {
            let direct = fam.q(i, j);
            let decoupled = CMatrix::from_vec(2, 2, vec![q11[(p, 0)], q12[(p, 0)], q21[(p, 0)], q22[(p, 0)]]);
            max_gap = max_gap.max((direct - &decoupled).max_abs());
            if lattice_h1_zero {
                let quad: C64 = (0..len).map(|k| -a2[(p, k)]).sum();
                let closed = CMatrix::from_vec(2, 2, vec![ONE, C64::new(0.0, 0.0), quad, ONE]);
                plug_in_gap = plug_in_gap.max((direct - &closed).max_abs());
            }
        }
    }
    let det_q_diag = fam.det_q_diag();
    Ok(Example41Report {
        max_gap,
        min_abs_det_q_diag: det_q_diag.iter().map(|d| d.norm()).fold(f64::INFINITY, f64::min),
        det_q_diag,
        l1_warning: l1_norms.0 >= 1.0 || l1_norms.1 >= 1.0,
        l1_norms,
        plug_in_gap: lattice_h1_zero.then_some(plug_in_gap),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernels::{sample_kernel, KernelSpec};
    use crate::krein::check_condition_37;
    use crate::nystrom::{resolvent_family, solve_full};

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn even_const(v: f64) -> KernelSpec {
        KernelSpec::difference("const", 1, true, move |_| CMatrix::scalar(c(v)))
    }

    fn gauss() -> KernelSpec {
        KernelSpec::difference("gauss", 1, true, |u| CMatrix::scalar(c(0.6 * (-u * u).exp())))
    }

    fn table(spec: &KernelSpec, a: f64, b: f64, n: usize) -> KernelTable {
        sample_kernel(spec, &make_grid(a, b, n).unwrap()).unwrap()
    }

    #[test]
    fn symmetry_of_g_and_g_star() {
        let k = table(&KernelSpec::zero(2), 0.0, 1.0, 9);
        assert_eq!(symmetry_check(&k, &build_family(&k).unwrap()).unwrap(), 0.0);

        let k = table(&even_const(0.5), 0.0, 1.0, 17);
        let fam = build_family(&k).unwrap();
        assert!(symmetry_check(&k, &fam).unwrap() < 1e-13);
        for (j, &xi) in k.grid().nodes().iter().enumerate() {
            assert!((fam.g(0, j)[(0, 0)] - c(1.0 / (1.0 + 0.5 * xi))).norm() < 1e-13);
        }

        let k = table(&KernelSpec::antidiag_block(|u| 0.5 * u.cos(), |u| 0.3 + u * u), 0.0, 1.0, 17);
        assert!(symmetry_check(&k, &build_family(&k).unwrap()).unwrap() < 1e-12);

        let k = table(&KernelSpec::separable_scalar(), 0.0, 1.0, 9);
        let fam = build_family(&k).unwrap();
        assert!(matches!(symmetry_check(&k, &fam), Err(SymmetricError::NotEvenDifference(_))));
    }

    #[test]
    fn liouville_constant_kernel() {
        let k = table(&even_const(0.5), 0.0, 1.0, 33);
        let fam = build_family(&k).unwrap();
        let res = resolvent_family(&k).unwrap();
        let rep = liouville_check(&k, &fam, &res).unwrap();
        for (j, &xi) in k.grid().nodes().iter().enumerate() {
            assert!((rep.det_g_diag[j] - c(1.0 / (1.0 + 0.5 * xi))).norm() < 1e-12);
        }
        let h = k.grid().h();
        assert!(rep.max_relative_gap < 10.0 * h * h, "{}", rep.max_relative_gap);
        assert!((rep.max_relative_gap - rep.max_relative_gap_swapped).abs() < 1e-12);
        assert!(rep.adjoint_det_gap < 1e-12);
        assert!(rep.min_abs_det > 0.1);
    }

    #[test]
    fn liouville_gap_is_second_order() {
        let gaps: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&n| {
                let k = table(&KernelSpec::antidiag_block(|u| 0.5 * u.cos(), |u| 0.4 * (-u * u).exp()), 0.0, 1.0, n);
                let rep = liouville_check(&k, &build_family(&k).unwrap(), &resolvent_family(&k).unwrap()).unwrap();
                assert!(rep.adjoint_det_gap < 1e-10);
                rep.max_relative_gap
            })
            .collect();
        assert!((gaps[1] / gaps[2]).log2() > 1.8, "{gaps:?}");
    }

    #[test]
    fn theorem_4_1_examples() {
        let k = table(&KernelSpec::zero(1), 0.0, 1.0, 17);
        let f = VectorTable::from_fn(k.grid(), 1, |t| vec![c(t.exp())]);
        let (sol, acc) = solve_theorem_4_1(&k, &f).unwrap();
        assert!(sol.phi.sup_distance(&f) < 1e-2);
        assert!(check_condition_37(&acc).passed());

        let k = table(&even_const(0.5), 0.0, 1.0, 33);
        let f = VectorTable::constant(k.grid(), 1, c(1.0));
        let (sol, _) = solve_theorem_4_1(&k, &f).unwrap();
        for p in &sol.phi.samples {
            assert!((p[(0, 0)] - c(2.0 / 3.0)).norm() < 1e-3);
        }

        let k = table(&KernelSpec::antidiag_block(|_| 0.5, |_| 0.5), 0.0, 0.5, 33);
        let f = VectorTable::constant(k.grid(), 2, c(1.0));
        let (sol, _) = solve_theorem_4_1(&k, &f).unwrap();
        let oracle = solve_full(&k, &f).unwrap();
        assert!(sol.phi.sup_distance(&oracle.phi) < 1e-3);
    }

    #[test]
    fn variant_reading_agrees_for_scalar_kernels() {
        let k = table(&gauss(), 0.0, 1.0, 17);
        let f = VectorTable::from_fn(k.grid(), 1, |t| vec![c(1.0 + t)]);
        let fam = build_family(&k).unwrap();
        let acc = build_accumulator(&fam);
        let a = krein_solve(&fam, &acc, &f).unwrap();
        let b = theorem_4_1_variant(&fam, &acc, &f).unwrap();
        assert!(a.phi.sup_distance(&b) < 1e-12);
    }

    #[test]
    fn condition_holds_for_even_kernels() {
        for spec in [even_const(0.5), gauss(), KernelSpec::antidiag_block(|_| 0.5, |_| 0.5)] {
            let k = table(&spec, 0.0, 1.0, 17);
            let acc = build_accumulator(&build_family(&k).unwrap());
            assert!(check_condition_37(&acc).passed(), "{spec:?}");
        }
    }

    #[test]
    fn perturbed_kernel_keeps_determinant_bound() {
        let eps = 0.05;
        let base = table(&even_const(0.5), 0.0, 1.0, 33);
        let pert = table(
            &KernelSpec::difference("pert", 1, true, move |u| CMatrix::scalar(c(0.5 + eps * (3.0 * u).cos()))),
            0.0,
            1.0,
            33,
        );
        let rep = liouville_check(&base, &build_family(&base).unwrap(), &resolvent_family(&base).unwrap()).unwrap();
        let fam_eps = build_family(&pert).unwrap();
        for j in 0..33 {
            let d = fam_eps.g(j, j)[(0, 0)].norm();
            assert!(d >= (-1.0f64).exp() * rep.exp_trace_integral[j].norm());
        }
    }

    #[test]
    fn centered_family_basics() {
        let k = table(&KernelSpec::zero(1), -0.5, 0.5, 9);
        let fam = build_centered_family(&k).unwrap();
        assert_eq!(fam.center(), 4);
        for j in 0..5 {
            assert!((fam.m_centered[j][(0, 0)] - c(fam.xi(j))).norm() < 1e-15);
            assert!((fam.m_prime[j][(0, 0)] - c(1.0)).norm() < 1e-12);
        }
        let k = table(&gauss(), -0.5, 0.5, 17);
        let fam = build_centered_family(&k).unwrap();
        assert!(fam.evenness_gap() < 1e-13);
        assert!(fam.max_residual() < 1e-13);

        let k = table(&gauss(), -0.5, 0.5, 16);
        assert_eq!(build_centered_family(&k).unwrap_err(), SymmetricError::NodeCount(16));
        let k = table(&gauss(), 0.0, 1.0, 17);
        assert!(matches!(build_centered_family(&k), Err(SymmetricError::NotCentered { .. })));
    }

    #[test]
    fn theorem_4_2_zero_kernel_returns_f() {
        let k = table(&KernelSpec::zero(1), -0.5, 0.5, 33);
        let fam = build_centered_family(&k).unwrap();
        let f = VectorTable::from_fn(k.grid(), 1, |t| vec![c((2.0 * t).sin() + t * t)]);
        let fp = VectorTable::from_fn(k.grid(), 1, |t| vec![c(2.0 * (2.0 * t).cos() + 2.0 * t)]);
        let sol = solve_theorem_4_2(&fam, &f, Some(&fp)).unwrap();
        assert!(sol.phi.sup_distance(&f) < 1e-2);
        assert!(!sol.needs_oracle_check);
    }

    #[test]
    fn theorem_4_2_constant_kernel() {
        let gaps: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&n| {
                let k = table(&even_const(0.5), -0.5, 0.5, n);
                let fam = build_centered_family(&k).unwrap();
                let f = VectorTable::constant(k.grid(), 1, c(1.0));
                let zero = VectorTable::constant(k.grid(), 1, c(0.0));
                let sol = solve_theorem_4_2(&fam, &f, Some(&zero)).unwrap();
                assert!(sol.term_stieltjes.sup_norm() < 1e-14);
                sol.phi
                    .samples
                    .iter()
                    .map(|p| (p[(0, 0)] - c(2.0 / 3.0)).norm())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(gaps.iter().all(|&g| g < 1e-12), "{gaps:?}");
    }

    #[test]
    fn theorem_4_2_linear_rhs_matches_oracle() {
        let k = table(&gauss(), -0.5, 0.5, 65);
        let fam = build_centered_family(&k).unwrap();
        let f = VectorTable::from_fn(k.grid(), 1, |t| vec![c(t)]);
        let sol = solve_theorem_4_2(&fam, &f, None).unwrap();
        let oracle = solve_full(&k, &f).unwrap();
        assert!(sol.phi.sup_distance(&oracle.phi) < 1e-3);
    }

    #[test]
    fn example_4_1_routes() {
        let g = make_grid(-0.25, 0.25, 17).unwrap();
        let rep = example_4_1_reduction(|_| 0.0, |_| 0.0, &g).unwrap();
        assert_eq!(rep.max_gap, 0.0);
        assert_eq!(rep.plug_in_gap, Some(0.0));

        let rep = example_4_1_reduction(|_| 0.5, |_| 0.5, &g).unwrap();
        assert!(rep.max_gap < 1e-12);
        assert!(!rep.l1_warning);
        assert!((rep.l1_norms.0 - 0.5).abs() < 1e-12);
        assert!(rep.min_abs_det_q_diag > 0.1);

        let rep = example_4_1_reduction(|_| 0.0, |u| (-u * u).exp(), &g).unwrap();
        assert!(rep.plug_in_gap.unwrap() < 1e-13);

        let wide = make_grid(-0.5, 0.5, 17).unwrap();
        let rep = example_4_1_reduction(|_| 0.5, |_| 0.5, &wide).unwrap();
        assert!(rep.l1_warning);
    }
}
