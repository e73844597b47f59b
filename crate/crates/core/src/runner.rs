//! Runs a problem file on every requested grid and writes the results.
//!
//! Each grid size is solved independently (concurrently when the `parallel`
//! feature is on). The direct Nyström solve always runs next to the chosen
//! solver so that every record carries the gap between the two.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::expr::Expr;
use crate::grid::make_grid;
use crate::kernels::{sample_kernel, KernelTable, VectorTable};
use crate::krein::{
    build_accumulator, build_family, check_condition_37, family_xi_derivative_check, krein_solve,
    representation_gap, KreinError,
};
use crate::linalg::C64;
use crate::nystrom::{
    evolution_residual_from, full_residual, resolvent_family, solve_full, solve_via_resolvent_from, NystromError,
};
use crate::parallel::{map_slice, Execution};
use crate::problem::{Format, ProblemSpec, SpecError, Solver};
use crate::symmetric::{
    build_centered_family, liouville_check, solve_theorem_4_2, symmetry_check, theorem_4_1_variant, SymmetricError,
};

/// Gaps below this are rounding noise and get no convergence order.
const ORDER_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("spec error: {0}")]
    Spec(#[from] SpecError),
    #[error("{n_nodes}-node grid: {message}")]
    Inapplicable {
        n_nodes: usize,
        xi: Option<f64>,
        message: String,
    },
    #[error("{n_nodes}-node grid: {message}")]
    Solver { n_nodes: usize, message: String },
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Spec(_) => 2,
            RunError::Inapplicable { .. } | RunError::Solver { .. } => 3,
            RunError::Io { .. } => 4,
        }
    }
}

/// `f64` written with 17 significant digits; non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let raw = RawValue::from_string(format_real(self.0)).map_err(serde::ser::Error::custom)?;
            raw.serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

fn real(x: Option<f64>) -> Option<Real> {
    x.map(Real)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionPoint {
    pub t: Real,
    pub re_phi: Vec<Real>,
    pub im_phi: Vec<Real>,
}

/// Identity residuals; `None` where the identity does not apply to the
/// chosen solver.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Identities {
    pub resolvent_left: Option<Real>,
    pub resolvent_right: Option<Real>,
    pub resolvent_evolution: Option<Real>,
    pub family_residual: Option<Real>,
    pub representation: Option<Real>,
    pub xi_derivative: Option<Real>,
    pub m_routes: Option<Real>,
    pub m_adjoint_routes: Option<Real>,
    pub det_order: Option<Real>,
    pub symmetry: Option<Real>,
    pub liouville: Option<Real>,
    pub liouville_swapped: Option<Real>,
    pub adjoint_det: Option<Real>,
    pub variant_reading_gap: Option<Real>,
    pub centered_evenness: Option<Real>,
}

impl Identities {
    fn entries(&self) -> [(&'static str, Option<Real>); 15] {
        [
            ("resolvent_left", self.resolvent_left),
            ("resolvent_right", self.resolvent_right),
            ("resolvent_evolution", self.resolvent_evolution),
            ("family_residual", self.family_residual),
            ("representation", self.representation),
            ("xi_derivative", self.xi_derivative),
            ("m_routes", self.m_routes),
            ("m_adjoint_routes", self.m_adjoint_routes),
            ("det_order", self.det_order),
            ("symmetry", self.symmetry),
            ("liouville", self.liouville),
            ("liouville_swapped", self.liouville_swapped),
            ("adjoint_det", self.adjoint_det),
            ("variant_reading_gap", self.variant_reading_gap),
            ("centered_evenness", self.centered_evenness),
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRecord {
    pub n_nodes: usize,
    pub h: Real,
    pub status: &'static str,
    pub error: Option<String>,
    pub degenerate_xi: Option<Real>,
    /// Residual of the original equation at the chosen solver's solution.
    pub solution_residual: Option<Real>,
    pub oracle_residual: Option<Real>,
    /// `max |φ − φ_oracle|`.
    pub oracle_gap: Option<Real>,
    /// `max |φ − φ_oracle| / max |φ_oracle|`.
    pub oracle_relative_gap: Option<Real>,
    pub condition_37_min: Option<Real>,
    pub oracle_check_required: bool,
    pub identities: Identities,
    pub solution: Vec<SolutionPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub solver: String,
    pub kernel: String,
    pub block_dim: usize,
    pub interval: [Real; 2],
    pub grids: Vec<usize>,
    pub status: &'static str,
    pub error: Option<String>,
    /// Smallest `|det M'(ξ)|` over all grids.
    pub condition_37_min: Option<Real>,
    /// Observed orders between successive grids, keyed by quantity.
    pub orders: BTreeMap<String, Vec<Option<Real>>>,
    pub records: Vec<GridRecord>,
}

fn empty_record(n: usize, h: f64) -> GridRecord {
    GridRecord {
        n_nodes: n,
        h: Real(h),
        status: "ok",
        error: None,
        degenerate_xi: None,
        solution_residual: None,
        oracle_residual: None,
        oracle_gap: None,
        oracle_relative_gap: None,
        condition_37_min: None,
        oracle_check_required: false,
        identities: Identities::default(),
        solution: Vec::new(),
    }
}

fn krein_failure(n: usize, e: KreinError) -> RunError {
    let xi = e.degenerate_xi();
    let message = match &e {
        KreinError::Inapplicable { .. } => e.to_string(),
        KreinError::SingularTruncation { .. } | KreinError::DegenerateBetween { .. } => {
            format!("Krein formula inapplicable: {e}")
        }
        _ => return RunError::Solver { n_nodes: n, message: e.to_string() },
    };
    RunError::Inapplicable { n_nodes: n, xi, message }
}

fn symmetric_failure(n: usize, e: SymmetricError) -> RunError {
    match e {
        SymmetricError::Krein(k) => krein_failure(n, k),
        other => RunError::Solver {
            n_nodes: n,
            message: other.to_string(),
        },
    }
}

fn nystrom_failure(n: usize, what: &str, e: NystromError) -> RunError {
    match e {
        NystromError::Singular { xi, .. } => RunError::Inapplicable {
            n_nodes: n,
            xi: Some(xi),
            message: format!("{what} inapplicable: {e}"),
        },
        other => RunError::Solver {
            n_nodes: n,
            message: format!("{what}: {other}"),
        },
    }
}

struct Problem {
    solver: Solver,
    kernel: crate::kernels::KernelSpec,
    rhs: Vec<Expr>,
    rhs_prime: Vec<Expr>,
    a: f64,
    b: f64,
    m: usize,
}

fn max_left_right(family: &[crate::nystrom::ResolventTable]) -> (f64, f64) {
    family.iter().fold((0.0, 0.0), |(l, r), t| {
        (f64::max(l, t.left_residual), f64::max(r, t.right_residual))
    })
}

fn run_grid(p: &Problem, n: usize) -> (GridRecord, Option<RunError>) {
    let centered = p.solver == Solver::Theorem42;
    let shift = if centered { 0.5 * (p.a + p.b) } else { 0.0 };
    let (lo, hi) = (p.a - shift, p.b - shift);
    let grid = match make_grid(lo, hi, n) {
        Ok(g) => g,
        Err(e) => {
            let mut rec = empty_record(n, f64::NAN);
            let err = RunError::Solver { n_nodes: n, message: e.to_string() };
            rec.status = "failed";
            rec.error = Some(err.to_string());
            return (rec, Some(err));
        }
    };
    let mut rec = empty_record(n, grid.h());
    let result = solve_grid(p, n, &grid, shift, &mut rec);
    match result {
        Ok(()) => (rec, None),
        Err(e) => {
            rec.status = "failed";
            rec.error = Some(e.to_string());
            if let RunError::Inapplicable { xi: Some(xi), .. } = &e {
                rec.degenerate_xi = Some(Real(*xi));
            }
            (rec, Some(e))
        }
    }
}

fn solve_grid(
    p: &Problem,
    n: usize,
    grid: &crate::grid::Grid,
    shift: f64,
    rec: &mut GridRecord,
) -> Result<(), RunError> {
    let m = p.m;
    let k: KernelTable = sample_kernel(&p.kernel, grid).map_err(|e| RunError::Solver {
        n_nodes: n,
        message: e.to_string(),
    })?;
    let sample = |exprs: &[Expr]| {
        VectorTable::from_fn(grid, m, |t| exprs.iter().map(|e| C64::new(e.eval(t + shift), 0.0)).collect())
    };
    let f = sample(&p.rhs);

    let oracle = solve_full(&k, &f).map_err(|e| nystrom_failure(n, "Nyström oracle", e))?;
    rec.oracle_residual = Some(Real(oracle.residual_norm));

    let ids = &mut rec.identities;
    let phi = match p.solver {
        Solver::Nystrom => oracle.phi.clone(),
        Solver::Resolvent35 => {
            let family = resolvent_family(&k).map_err(|e| nystrom_failure(n, "resolvent solve", e))?;
            let (l, r) = max_left_right(&family);
            ids.resolvent_left = Some(Real(l));
            ids.resolvent_right = Some(Real(r));
            ids.resolvent_evolution = evolution_residual_from(&family, grid).ok().map(Real);
            solve_via_resolvent_from(&k, &f, &family).phi
        }
        Solver::Krein34 | Solver::Theorem41 => {
            let fam = build_family(&k).map_err(|e| krein_failure(n, e))?;
            let acc = build_accumulator(&fam);
            let cond = check_condition_37(&acc);
            rec.condition_37_min = Some(Real(cond.min_abs_det));
            ids.family_residual = Some(Real(fam.max_residual()));
            ids.m_routes = Some(Real(acc.route_gap));
            ids.m_adjoint_routes = Some(Real(acc.adjoint_gap));
            ids.det_order = Some(Real(acc.det_order_gap));
            if let Ok(family) = resolvent_family(&k) {
                let (l, r) = max_left_right(&family);
                ids.resolvent_left = Some(Real(l));
                ids.resolvent_right = Some(Real(r));
                ids.resolvent_evolution = evolution_residual_from(&family, grid).ok().map(Real);
                ids.representation = Some(Real(representation_gap(&fam, &family).max()));
                ids.xi_derivative = real(family_xi_derivative_check(&fam, &family).ok().map(|r| r.max()));
                if p.solver == Solver::Theorem41 {
                    ids.symmetry = symmetry_check(&k, &fam).ok().map(Real);
                    if let Ok(rep) = liouville_check(&k, &fam, &family) {
                        ids.liouville = Some(Real(rep.max_relative_gap));
                        ids.liouville_swapped = Some(Real(rep.max_relative_gap_swapped));
                        ids.adjoint_det = Some(Real(rep.adjoint_det_gap));
                    }
                }
            }
            let sol = krein_solve(&fam, &acc, &f).map_err(|e| krein_failure(n, e))?;
            if p.solver == Solver::Theorem41 {
                ids.variant_reading_gap = theorem_4_1_variant(&fam, &acc, &f)
                    .ok()
                    .map(|v| Real(v.sup_distance(&sol.phi)));
            }
            sol.phi
        }
        Solver::Theorem42 => {
            let fam = build_centered_family(&k).map_err(|e| symmetric_failure(n, e))?;
            rec.condition_37_min = Some(Real(fam.min_abs_det_m_prime()));
            ids.family_residual = Some(Real(fam.max_residual()));
            ids.centered_evenness = Some(Real(fam.evenness_gap()));
            let fp = sample(&p.rhs_prime);
            let sol = solve_theorem_4_2(&fam, &f, Some(&fp)).map_err(|e| symmetric_failure(n, e))?;
            rec.oracle_check_required = sol.needs_oracle_check;
            sol.phi
        }
    };

    let gap = phi.sup_distance(&oracle.phi);
    rec.oracle_gap = Some(Real(gap));
    let scale = oracle.phi.sup_norm();
    rec.oracle_relative_gap = Some(Real(if scale > 0.0 { gap / scale } else { gap }));
    rec.solution_residual = Some(Real(full_residual(&k, &f, &phi)));
    rec.solution = grid
        .nodes()
        .iter()
        .zip(&phi.samples)
        .map(|(&t, v)| SolutionPoint {
            t: Real(t + shift),
            re_phi: (0..m).map(|c| Real(v[(c, 0)].re)).collect(),
            im_phi: (0..m).map(|c| Real(v[(c, 0)].im)).collect(),
        })
        .collect();
    Ok(())
}

/// `ln(e_k / e_{k+1}) / ln(h_k / h_{k+1})` for successive records.
fn orders_of(records: &[GridRecord], pick: impl Fn(&GridRecord) -> Option<Real>) -> Vec<Option<Real>> {
    records
        .windows(2)
        .map(|w| {
            let (e0, e1) = (pick(&w[0])?.0, pick(&w[1])?.0);
            if e0 <= ORDER_FLOOR || e1 <= ORDER_FLOOR || w[0].status != "ok" || w[1].status != "ok" {
                return None;
            }
            let p = (e0 / e1).ln() / (w[0].h.0 / w[1].h.0).ln();
            p.is_finite().then_some(Real(p))
        })
        .collect()
}

/// Solves every grid of the problem. The report is complete even when some
/// grid fails; the first failure (in grid order) is returned alongside it.
pub fn run(spec: &ProblemSpec) -> Result<(RunReport, Option<RunError>), RunError> {
    spec.validate()?;
    let kernel = spec.kernel_spec()?;
    let rhs = spec.rhs_exprs()?;
    let problem = Problem {
        solver: spec.solver,
        m: kernel.block_dim(),
        rhs_prime: rhs.iter().map(Expr::derivative).collect(),
        rhs,
        kernel,
        a: spec.interval.a,
        b: spec.interval.b,
    };
    let outcomes = map_slice(Execution::default(), &spec.grids, |&n| run_grid(&problem, n));
    let mut records = Vec::with_capacity(outcomes.len());
    let mut first_error = None;
    for (rec, err) in outcomes {
        if first_error.is_none() {
            first_error = err;
        }
        records.push(rec);
    }

    let mut orders = BTreeMap::new();
    orders.insert("oracle_gap".to_string(), orders_of(&records, |r| r.oracle_gap));
    orders.insert("solution_residual".to_string(), orders_of(&records, |r| r.solution_residual));
    let names = Identities::default().entries().map(|(name, _)| name);
    for (idx, name) in names.iter().enumerate() {
        if records.iter().any(|r| r.identities.entries()[idx].1.is_some()) {
            orders.insert(
                format!("identities.{name}"),
                orders_of(&records, |r| r.identities.entries()[idx].1),
            );
        }
    }
    let condition_37_min = records
        .iter()
        .filter_map(|r| r.condition_37_min.map(|x| x.0))
        .reduce(f64::min)
        .map(Real);
    let report = RunReport {
        solver: spec.solver.name().to_string(),
        kernel: spec.kernel.name.clone(),
        block_dim: problem.m,
        interval: [Real(spec.interval.a), Real(spec.interval.b)],
        grids: spec.grids.clone(),
        status: if first_error.is_some() { "failed" } else { "ok" },
        error: first_error.as_ref().map(ToString::to_string),
        condition_37_min,
        orders,
        records,
    };
    Ok((report, first_error))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> RunError + '_ {
    move |e| RunError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn cell(x: Option<Real>) -> String {
    x.filter(|r| r.0.is_finite()).map_or(String::new(), |r| format_real(r.0))
}

/// Column names of the per-grid solution tables.
pub fn solution_header(m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for c in 1..=m {
        h.push(format!("re_phi_{c}"));
        h.push(format!("im_phi_{c}"));
    }
    h
}

/// Column names of `summary.csv`.
pub fn summary_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "n_nodes",
        "h",
        "status",
        "solution_residual",
        "oracle_residual",
        "oracle_gap",
        "oracle_relative_gap",
        "oracle_gap_order",
        "condition_37_min",
        "degenerate_xi",
    ]
    .iter()
    .map(ToString::to_string)
    .collect();
    h.extend(Identities::default().entries().iter().map(|(n, _)| n.to_string()));
    h.push("error".into());
    h
}

/// Writes the report into `dir`: `solution_n<N>.csv` per solved grid plus
/// `summary.csv`, or a single `report.json`.
pub fn emit(report: &RunReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    match format {
        Format::Json => {
            let path = dir.join("report.json");
            let text = serde_json::to_string_pretty(report).map_err(|e| RunError::Io {
                path: path.clone(),
                source: std::io::Error::other(e),
            })?;
            fs::write(&path, text + "\n").map_err(io_err(&path))?;
            written.push(path);
        }
        Format::Csv => {
            for rec in report.records.iter().filter(|r| !r.solution.is_empty()) {
                let path = dir.join(format!("solution_n{}.csv", rec.n_nodes));
                let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
                w.write_record(solution_header(report.block_dim)).map_err(csv_err(&path))?;
                for pt in &rec.solution {
                    let mut row = vec![format_real(pt.t.0)];
                    for (re, im) in pt.re_phi.iter().zip(&pt.im_phi) {
                        row.push(format_real(re.0));
                        row.push(format_real(im.0));
                    }
                    w.write_record(&row).map_err(csv_err(&path))?;
                }
                w.flush().map_err(io_err(&path))?;
                written.push(path);
            }
            let path = dir.join("summary.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
            w.write_record(summary_header()).map_err(csv_err(&path))?;
            let gap_orders = report.orders.get("oracle_gap");
            for (i, rec) in report.records.iter().enumerate() {
                let order = if i == 0 {
                    None
                } else {
                    gap_orders.and_then(|o| o.get(i - 1).copied().flatten())
                };
                let mut row = vec![
                    rec.n_nodes.to_string(),
                    cell(Some(rec.h)),
                    rec.status.to_string(),
                    cell(rec.solution_residual),
                    cell(rec.oracle_residual),
                    cell(rec.oracle_gap),
                    cell(rec.oracle_relative_gap),
                    cell(order),
                    cell(rec.condition_37_min),
                    cell(rec.degenerate_xi),
                ];
                row.extend(rec.identities.entries().iter().map(|(_, v)| cell(*v)));
                row.push(rec.error.clone().unwrap_or_default());
                w.write_record(&row).map_err(csv_err(&path))?;
            }
            w.flush().map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}
