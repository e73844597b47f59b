//! Kernel specifications, sampled kernel tables and the built-in catalog.
//!
//! Internally every kernel is stored in the form `φ − ∫ K φ = f`. Difference
//! kernels are declared through `H` with `K(t, s) = −H(t − s)`, the form
//! `φ + ∫ H(t − s) φ(s) ds = f`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::grid::Grid;
use crate::linalg::{CMatrix, C64, ZERO};

/// Relative tolerance for the evenness check `H(u) = H(−u)`.
pub const EVENNESS_TOL: f64 = 1e-10;

pub type BlockFn = Arc<dyn Fn(f64, f64) -> CMatrix + Send + Sync>;
pub type DifferenceFn = Arc<dyn Fn(f64) -> CMatrix + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("kernel `{kernel}` requires parameter `{param}`")]
    MissingParam { kernel: String, param: &'static str },
    #[error("kernel `{kernel}` does not take parameter `{param}`")]
    UnexpectedParam { kernel: String, param: &'static str },
    #[error("kernel `{kernel}`: {message}")]
    Shape { kernel: String, message: String },
    #[error(transparent)]
    Expression(#[from] ExprError),
    #[error("kernel `{kernel}` is not finite at (t, s) = ({t}, {s})")]
    NonFinite { kernel: String, t: f64, s: f64 },
    #[error("kernel `{kernel}` is declared even but max |H(u) - H(-u)| = {defect:e} (scale {scale:e})")]
    NotEven {
        kernel: String,
        defect: f64,
        scale: f64,
    },
    #[error("evaluator of kernel `{kernel}` returned a {got:?} block, expected {m}x{m}")]
    BlockShape {
        kernel: String,
        got: (usize, usize),
        m: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    General,
    Difference,
}

#[derive(Clone)]
enum Evaluator {
    General(BlockFn),
    Difference { h: DifferenceFn, even: bool },
}

/// A matrix kernel given by an evaluator callback.
#[derive(Clone)]
pub struct KernelSpec {
    name: String,
    m: usize,
    eval: Evaluator,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("kind", &self.kind())
            .field("even", &self.is_even())
            .finish()
    }
}

impl KernelSpec {
    /// General kernel `K(t, s)`.
    pub fn general(
        name: impl Into<String>,
        m: usize,
        k: impl Fn(f64, f64) -> CMatrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            m,
            eval: Evaluator::General(Arc::new(k)),
        }
    }

    /// Difference kernel given through `H`, with `K(t, s) = −H(t − s)`.
    pub fn difference(
        name: impl Into<String>,
        m: usize,
        even: bool,
        h: impl Fn(f64) -> CMatrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            m,
            eval: Evaluator::Difference {
                h: Arc::new(h),
                even,
            },
        }
    }

    pub fn zero(m: usize) -> Self {
        Self::difference("zero", m, true, move |_| CMatrix::zeros(m, m))
    }

    pub fn constant_scalar(c: C64) -> Self {
        Self::difference("constant_scalar", 1, true, move |_| CMatrix::scalar(-c))
    }

    /// `K(t, s) = t·s`.
    pub fn separable_scalar() -> Self {
        Self::general("separable_scalar", 1, |t, s| {
            CMatrix::scalar(C64::new(t * s, 0.0))
        })
    }

    /// `H(t) = [[0, h1(t)], [h2(t), 0]]`, declared even.
    pub fn antidiag_block(
        h1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::difference("antidiag_block", 2, true, move |u| {
            CMatrix::from_real(2, 2, &[0.0, h1(u), h2(u), 0.0])
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn block_dim(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> KernelKind {
        match self.eval {
            Evaluator::General(_) => KernelKind::General,
            Evaluator::Difference { .. } => KernelKind::Difference,
        }
    }

    pub fn is_even(&self) -> bool {
        matches!(self.eval, Evaluator::Difference { even: true, .. })
    }

    /// `K(t, s)` in the `φ − ∫Kφ = f` convention.
    pub fn eval(&self, t: f64, s: f64) -> CMatrix {
        match &self.eval {
            Evaluator::General(k) => k(t, s),
            Evaluator::Difference { h, .. } => -&h(t - s),
        }
    }

    /// `H(u)` for difference kernels.
    pub fn h(&self, u: f64) -> Option<CMatrix> {
        match &self.eval {
            Evaluator::General(_) => None,
            Evaluator::Difference { h, .. } => Some(h(u)),
        }
    }

    fn check_block(&self, b: &CMatrix, t: f64, s: f64) -> Result<(), KernelError> {
        if b.shape() != (self.m, self.m) {
            return Err(KernelError::BlockShape {
                kernel: self.name.clone(),
                got: b.shape(),
                m: self.m,
            });
        }
        if !b.is_finite() {
            return Err(KernelError::NonFinite {
                kernel: self.name.clone(),
                t,
                s,
            });
        }
        Ok(())
    }
}

/// `K(t_i, t_j)` for every pair of grid nodes.
#[derive(Debug, Clone)]
pub struct KernelTable {
    grid: Grid,
    m: usize,
    kind: KernelKind,
    even: bool,
    blocks: Vec<CMatrix>,
}

impl KernelTable {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn block_dim(&self) -> usize {
        self.m
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn is_even_difference(&self) -> bool {
        self.kind == KernelKind::Difference && self.even
    }

    pub fn block(&self, i: usize, j: usize) -> &CMatrix {
        &self.blocks[i * self.grid.n_nodes() + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(CMatrix::max_abs).fold(0.0, f64::max)
    }

    /// Largest deviation from block-Toeplitz structure, relative to the
    /// table's largest entry.
    pub fn toeplitz_defect(&self) -> f64 {
        let n = self.n_nodes();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 1..n {
            for j in 1..n {
                let d = (self.block(i, j) - self.block(i - 1, j - 1)).max_abs();
                worst = worst.max(d / scale);
            }
        }
        worst
    }
}

/// Samples `f(t_i)`, each an m×1 column.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorTable {
    pub grid: Grid,
    pub m: usize,
    pub samples: Vec<CMatrix>,
}

impl VectorTable {
    pub fn from_fn(grid: &Grid, m: usize, f: impl Fn(f64) -> Vec<C64>) -> Self {
        let samples = grid
            .nodes()
            .iter()
            .map(|&t| {
                let v = f(t);
                assert_eq!(v.len(), m, "right-hand side has wrong dimension");
                CMatrix::column(&v)
            })
            .collect();
        Self {
            grid: grid.clone(),
            m,
            samples,
        }
    }

    pub fn from_samples(grid: &Grid, m: usize, samples: Vec<CMatrix>) -> Self {
        assert_eq!(samples.len(), grid.n_nodes());
        Self {
            grid: grid.clone(),
            m,
            samples,
        }
    }

    /// `f ≡ c` in every component.
    pub fn constant(grid: &Grid, m: usize, c: C64) -> Self {
        Self::from_fn(grid, m, |_| vec![c; m])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().map(CMatrix::max_abs).fold(0.0, f64::max)
    }

    /// `max_i |self_i − other_i|` entrywise.
    pub fn sup_distance(&self, other: &VectorTable) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).max_abs())
            .fold(0.0, f64::max)
    }

    pub fn component(&self, i: usize, k: usize) -> C64 {
        self.samples[i][(k, 0)]
    }
}

pub fn sample_kernel(spec: &KernelSpec, grid: &Grid) -> Result<KernelTable, KernelError> {
    let n = grid.n_nodes();
    let m = spec.m;
    let mut blocks = Vec::with_capacity(n * n);
    let (kind, even) = match &spec.eval {
        Evaluator::General(k) => {
            for &t in grid.nodes() {
                for &s in grid.nodes() {
                    let b = k(t, s);
                    spec.check_block(&b, t, s)?;
                    blocks.push(b);
                }
            }
            (KernelKind::General, false)
        }
        Evaluator::Difference { h, even } => {
            // H on the lattice u_k = k·h, k = −(N−1)..=(N−1)
            let offsets: Vec<CMatrix> = (0..2 * n - 1)
                .map(|k| {
                    let u = (k as f64 - (n - 1) as f64) * grid.h();
                    let b = h(u);
                    spec.check_block(&b, u, 0.0).map(|_| b)
                })
                .collect::<Result<_, _>>()?;
            if *even {
                let scale = offsets.iter().map(CMatrix::max_abs).fold(0.0, f64::max);
                let defect = (0..n)
                    .map(|k| (&offsets[n - 1 + k] - &offsets[n - 1 - k]).max_abs())
                    .fold(0.0, f64::max);
                if defect > EVENNESS_TOL * scale {
                    return Err(KernelError::NotEven {
                        kernel: spec.name.clone(),
                        defect,
                        scale,
                    });
                }
            }
            for i in 0..n {
                for j in 0..n {
                    blocks.push(-&offsets[n - 1 + i - j]);
                }
            }
            (KernelKind::Difference, *even)
        }
    };
    Ok(KernelTable {
        grid: grid.clone(),
        m,
        kind,
        even,
        blocks,
    })
}

/// Catalog entry as it appears in a problem file's `[kernel]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_im: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2: Option<String>,
    /// Real parts of the entries, row by row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<String>>>,
}

impl KernelConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    fn present(&self) -> [(&'static str, bool); 6] {
        [
            ("c", self.c.is_some()),
            ("c_im", self.c_im.is_some()),
            ("h1", self.h1.is_some()),
            ("h2", self.h2.is_some()),
            ("re", self.re.is_some()),
            ("im", self.im.is_some()),
        ]
    }

    fn only(&self, allowed: &[&str]) -> Result<(), KernelError> {
        for (param, set) in self.present() {
            if set && !allowed.contains(&param) {
                return Err(KernelError::UnexpectedParam {
                    kernel: self.name.clone(),
                    param,
                });
            }
        }
        Ok(())
    }

    fn require<'a, T>(&self, v: &'a Option<T>, param: &'static str) -> Result<&'a T, KernelError> {
        v.as_ref().ok_or(KernelError::MissingParam {
            kernel: self.name.clone(),
            param,
        })
    }
}

pub const CATALOG_NAMES: &[&str] = &[
    "zero",
    "constant_scalar",
    "separable_scalar",
    "antidiag_block",
    "matrix",
    "even_difference",
];

/// Builds the named kernel. `block_dim` sizes the zero kernel (default 1)
/// and must agree with the dimension other kernels force.
pub fn catalog(cfg: &KernelConfig, block_dim: Option<usize>) -> Result<KernelSpec, KernelError> {
    let spec = match cfg.name.as_str() {
        "zero" => {
            cfg.only(&[])?;
            KernelSpec::zero(block_dim.unwrap_or(1))
        }
        "constant_scalar" => {
            cfg.only(&["c", "c_im"])?;
            let c = *cfg.require(&cfg.c, "c")?;
            KernelSpec::constant_scalar(C64::new(c, cfg.c_im.unwrap_or(0.0)))
        }
        "separable_scalar" => {
            cfg.only(&[])?;
            KernelSpec::separable_scalar()
        }
        "antidiag_block" => {
            cfg.only(&["h1", "h2"])?;
            let h1 = Expr::parse(cfg.require(&cfg.h1, "h1")?)?;
            let h2 = Expr::parse(cfg.require(&cfg.h2, "h2")?)?;
            KernelSpec::antidiag_block(move |u| h1.eval(u), move |u| h2.eval(u))
        }
        "matrix" => {
            cfg.only(&["re", "im"])?;
            let (m, re, im) = entry_exprs(cfg, Expr::parse_two)?;
            KernelSpec::general("matrix", m, move |t, s| {
                CMatrix::from_fn(m, m, |i, j| {
                    let r = re[i][j].eval2(t, s);
                    let c = im.as_ref().map_or(0.0, |im| im[i][j].eval2(t, s));
                    C64::new(r, c)
                })
            })
        }
        "even_difference" => {
            cfg.only(&["re", "im"])?;
            let (m, re, im) = entry_exprs(cfg, Expr::parse)?;
            KernelSpec::difference("even_difference", m, true, move |u| {
                CMatrix::from_fn(m, m, |i, j| {
                    let r = re[i][j].eval(u);
                    let c = im.as_ref().map_or(0.0, |im| im[i][j].eval(u));
                    C64::new(r, c)
                })
            })
        }
        other => return Err(KernelError::UnknownKernel(other.to_string())),
    };
    if let Some(m) = block_dim {
        if m != spec.m {
            return Err(KernelError::Shape {
                kernel: cfg.name.clone(),
                message: format!("block_dim = {m} but the kernel is {0}x{0}", spec.m),
            });
        }
    }
    Ok(spec)
}

type ExprGrid = Vec<Vec<Expr>>;

fn entry_exprs(
    cfg: &KernelConfig,
    parse: fn(&str) -> Result<Expr, ExprError>,
) -> Result<(usize, ExprGrid, Option<ExprGrid>), KernelError> {
    let shape_err = |message: String| KernelError::Shape {
        kernel: cfg.name.clone(),
        message,
    };
    let parse_grid = |rows: &Vec<Vec<String>>| -> Result<ExprGrid, KernelError> {
        let m = rows.len();
        if m == 0 {
            return Err(shape_err("empty entry table".into()));
        }
        rows.iter()
            .map(|row| {
                if row.len() != m {
                    return Err(shape_err(format!("entry table must be {m}x{m}")));
                }
                row.iter()
                    .map(|s| parse(s).map_err(KernelError::from))
                    .collect()
            })
            .collect()
    };
    let re = parse_grid(cfg.require(&cfg.re, "re")?)?;
    let m = re.len();
    let im = cfg.im.as_ref().map(parse_grid).transpose()?;
    if let Some(im) = &im {
        if im.len() != m {
            return Err(shape_err("`re` and `im` tables differ in size".into()));
        }
    }
    Ok((m, re, im))
}

/// `∫_{-L}^{L} |h(u)| du` by composite Simpson on 4096 panels.
pub fn l1_norm(h: impl Fn(f64) -> f64, half_width: f64) -> f64 {
    let panels = 4096;
    let step = 2.0 * half_width / panels as f64;
    let mut acc = 0.0;
    for k in 0..=panels {
        let u = -half_width + k as f64 * step;
        let c = if k == 0 || k == panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += c * h(u).abs();
    }
    acc * step / 3.0
}

/// `true` when every entry of the block is exactly zero.
pub fn is_zero_block(b: &CMatrix) -> bool {
    b.as_slice().iter().all(|&z| z == ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn re(b: &CMatrix) -> f64 {
        b[(0, 0)].re
    }

    #[test]
    fn zero_kernel_table_is_zero() {
        let g = make_grid(0.0, 1.0, 7).unwrap();
        let t = sample_kernel(&KernelSpec::zero(3), &g).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert!(is_zero_block(t.block(i, j)));
                assert_eq!(t.block(i, j).shape(), (3, 3));
            }
        }
    }

    #[test]
    fn constant_difference_kernel_flips_sign() {
        let g = make_grid(0.0, 1.0, 5).unwrap();
        let spec = KernelSpec::difference("half", 1, true, |_| CMatrix::from_real(1, 1, &[0.5]));
        let t = sample_kernel(&spec, &g).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(re(t.block(i, j)), -0.5);
            }
        }
    }

    #[test]
    fn odd_kernel_declared_even_is_rejected() {
        let g = make_grid(0.0, 1.0, 5).unwrap();
        let spec = KernelSpec::difference("odd", 1, true, |u| CMatrix::from_real(1, 1, &[u]));
        assert!(matches!(sample_kernel(&spec, &g), Err(KernelError::NotEven { .. })));
        let spec = KernelSpec::difference("odd", 1, false, |u| CMatrix::from_real(1, 1, &[u]));
        assert!(sample_kernel(&spec, &g).is_ok());
    }

    #[test]
    fn non_finite_kernel_is_rejected() {
        let g = make_grid(0.0, 1.0, 5).unwrap();
        let spec = KernelSpec::general("pole", 1, |t, _| CMatrix::from_real(1, 1, &[1.0 / t]));
        assert!(matches!(sample_kernel(&spec, &g), Err(KernelError::NonFinite { .. })));
    }

    #[test]
    fn catalog_examples() {
        let k = catalog(
            &KernelConfig {
                c: Some(0.5),
                ..KernelConfig::named("constant_scalar")
            },
            None,
        )
        .unwrap();
        assert!(k.is_even());
        assert_eq!(re(&k.eval(0.3, 0.9)), 0.5);

        let k = catalog(
            &KernelConfig {
                h1: Some("0.5".into()),
                h2: Some("1/2".into()),
                ..KernelConfig::named("antidiag_block")
            },
            None,
        )
        .unwrap();
        assert_eq!(k.block_dim(), 2);
        assert_eq!(k.h(0.0).unwrap(), CMatrix::from_real(2, 2, &[0.0, 0.5, 0.5, 0.0]));

        let k = catalog(&KernelConfig::named("separable_scalar"), None).unwrap();
        assert_eq!(re(&k.eval(0.5, 0.5)), 0.25);

        assert_eq!(
            catalog(&KernelConfig::named("magic"), None).unwrap_err(),
            KernelError::UnknownKernel("magic".into())
        );
        assert!(matches!(
            catalog(&KernelConfig::named("constant_scalar"), None),
            Err(KernelError::MissingParam { param: "c", .. })
        ));
        assert!(matches!(
            catalog(
                &KernelConfig {
                    h1: Some("1".into()),
                    ..KernelConfig::named("separable_scalar")
                },
                None
            ),
            Err(KernelError::UnexpectedParam { param: "h1", .. })
        ));
        assert!(matches!(
            catalog(&KernelConfig::named("separable_scalar"), Some(2)),
            Err(KernelError::Shape { .. })
        ));
        assert_eq!(catalog(&KernelConfig::named("zero"), Some(3)).unwrap().block_dim(), 3);
    }

    #[test]
    fn matrix_catalog_entry_is_complex() {
        let cfg = KernelConfig {
            re: Some(vec![
                vec!["t*s".into(), "0".into()],
                vec!["1".into(), "cos(t-s)".into()],
            ]),
            im: Some(vec![
                vec!["0".into(), "s".into()],
                vec!["0".into(), "0".into()],
            ]),
            ..KernelConfig::named("matrix")
        };
        let k = catalog(&cfg, Some(2)).unwrap();
        let b = k.eval(0.5, 0.25);
        assert_eq!(b[(0, 0)], C64::new(0.125, 0.0));
        assert_eq!(b[(0, 1)], C64::new(0.0, 0.25));
        let bad = KernelConfig {
            re: Some(vec![vec!["1".into(), "2".into()]]),
            ..KernelConfig::named("matrix")
        };
        assert!(matches!(catalog(&bad, None), Err(KernelError::Shape { .. })));
    }

    #[test]
    fn sampling_is_evaluation_exact() {
        let g = make_grid(-0.4, 1.3, 9).unwrap();
        let spec = KernelSpec::general("mix", 2, |t, s| {
            CMatrix::from_fn(2, 2, |i, j| C64::new((t * (i + 1) as f64).sin() * s, (s - t) * j as f64))
        });
        let tab = sample_kernel(&spec, &g).unwrap();
        for (i, &t) in g.nodes().iter().enumerate() {
            for (j, &s) in g.nodes().iter().enumerate() {
                assert_eq!(tab.block(i, j), &spec.eval(t, s));
            }
        }
    }

    #[test]
    fn difference_tables_are_block_toeplitz_and_even() {
        let g = make_grid(0.0, 0.5, 17).unwrap();
        let spec = KernelSpec::antidiag_block(|u| 0.5 * (-u * u).exp(), |u| 0.3 * u.cos());
        let tab = sample_kernel(&spec, &g).unwrap();
        assert!(tab.toeplitz_defect() <= 1e-12);
        assert!(tab.is_even_difference());
        for i in 0..17 {
            for j in 0..17 {
                assert_eq!(tab.block(i, j), tab.block(j, i));
            }
        }
    }

    #[test]
    fn l1_norm_of_constant() {
        assert!((l1_norm(|_| 0.5, 1.0) - 1.0).abs() < 1e-12);
        assert!((l1_norm(|u| u, 1.0) - 1.0).abs() < 1e-6);
    }
}
