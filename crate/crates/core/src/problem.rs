//! Problem files.
//!
//! A problem is a TOML document:
//!
//! ```toml
//! solver = "krein_34"        # nystrom | resolvent_35 | krein_34 | theorem_4_1 | theorem_4_2
//! grids = [9, 17, 33]        # node counts, each at least 3
//! block_dim = 1              # optional; checked against the kernel
//!
//! [interval]
//! a = 0.0
//! b = 1.0
//!
//! [kernel]
//! name = "constant_scalar"   # see `kernels::CATALOG_NAMES`
//! c = 0.5
//!
//! [rhs]
//! f = ["1"]                  # one expression in `t` per component
//!
//! [output]                   # optional
//! dir = "out"
//! format = "csv"             # csv | json
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::kernels::{catalog, KernelConfig, KernelError, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    #[serde(rename = "nystrom")]
    Nystrom,
    #[serde(rename = "resolvent_35")]
    Resolvent35,
    #[serde(rename = "krein_34")]
    Krein34,
    #[serde(rename = "theorem_4_1")]
    Theorem41,
    #[serde(rename = "theorem_4_2")]
    Theorem42,
}

impl Solver {
    pub const NAMES: [&'static str; 5] = ["nystrom", "resolvent_35", "krein_34", "theorem_4_1", "theorem_4_2"];

    pub fn name(self) -> &'static str {
        match self {
            Solver::Nystrom => "nystrom",
            Solver::Resolvent35 => "resolvent_35",
            Solver::Krein34 => "krein_34",
            Solver::Theorem41 => "theorem_4_1",
            Solver::Theorem42 => "theorem_4_2",
        }
    }

    /// `true` for the solvers built on the truncated families.
    pub fn is_krein(self) -> bool {
        matches!(self, Solver::Krein34 | Solver::Theorem41 | Solver::Theorem42)
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Solver {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        Ok(match s {
            "nystrom" => Solver::Nystrom,
            "resolvent_35" => Solver::Resolvent35,
            "krein_34" => Solver::Krein34,
            "theorem_4_1" => Solver::Theorem41,
            "theorem_4_2" => Solver::Theorem42,
            other => {
                return Err(SpecError::Invalid {
                    field: "solver".into(),
                    message: format!("unknown solver `{other}`, expected one of {}", Self::NAMES.join(", ")),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, SpecError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(SpecError::Invalid {
                field: "format".into(),
                message: format!("unknown format `{other}`, expected csv or json"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rhs {
    pub f: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub solver: Solver,
    pub grids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_dim: Option<usize>,
    pub interval: Interval,
    pub kernel: KernelConfig,
    pub rhs: Rhs,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("line {line}, column {column}: {field}{message}")]
    Parse {
        line: usize,
        column: usize,
        /// `"key: "` when the offending key could be located, else empty.
        field: String,
        message: String,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("kernel: {0}")]
    Kernel(#[from] KernelError),
    #[error("{field}: {source}")]
    Expression { field: String, source: ExprError },
    #[error("cannot serialize problem: {0}")]
    Serialize(#[from] toml::ser::Error),
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn key_on_line(text: &str, line: usize) -> Option<String> {
    let l = text.lines().nth(line - 1)?;
    let (key, _) = l.split_once('=')?;
    let key = key.trim();
    (!key.is_empty()).then(|| key.to_string())
}

/// Parses and validates a problem file.
pub fn parse_spec(text: &str) -> Result<ProblemSpec, SpecError> {
    let spec: ProblemSpec = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        let field = key_on_line(text, line).map_or(String::new(), |k| format!("{k}: "));
        SpecError::Parse {
            line,
            column,
            field,
            message: e.message().to_string(),
        }
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn to_toml(spec: &ProblemSpec) -> Result<String, SpecError> {
    Ok(toml::to_string(spec)?)
}

fn invalid(field: &str, message: impl Into<String>) -> SpecError {
    SpecError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl ProblemSpec {
    /// Checks everything that does not require solving.
    pub fn validate(&self) -> Result<(), SpecError> {
        let Interval { a, b } = self.interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid("interval", format!("need finite a < b, got [{a}, {b}]")));
        }
        self.check_grids(&self.grids)?;
        let kernel = self.kernel_spec()?;
        let m = kernel.block_dim();
        if self.rhs.f.len() != m {
            return Err(invalid(
                "rhs.f",
                format!("kernel is {m}x{m} but {} component(s) were given", self.rhs.f.len()),
            ));
        }
        let rhs = self.rhs_exprs()?;
        match self.solver {
            Solver::Theorem41 | Solver::Theorem42 if !kernel.is_even() => {
                return Err(invalid(
                    "solver",
                    format!("{} needs an even difference kernel, `{}` is not one", self.solver, kernel.name()),
                ))
            }
            Solver::Theorem42 => {
                if let Some(i) = rhs.iter().position(|e| !e.is_smooth()) {
                    return Err(invalid(
                        &format!("rhs.f[{i}]"),
                        "theorem_4_2 needs a continuously differentiable right-hand side",
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Grid sizes valid for this problem's solver.
    pub fn check_grids(&self, grids: &[usize]) -> Result<(), SpecError> {
        if grids.is_empty() {
            return Err(invalid("grids", "at least one grid size is required"));
        }
        for &n in grids {
            if n < 3 {
                return Err(invalid("grids", format!("grid sizes must be at least 3, got {n}")));
            }
            if self.solver == Solver::Theorem42 && (n % 2 == 0 || n < 5) {
                return Err(invalid(
                    "grids",
                    format!("theorem_4_2 needs odd grid sizes of at least 5 so that the midpoint is a node, got {n}"),
                ));
            }
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, SpecError> {
        Ok(catalog(&self.kernel, self.block_dim)?)
    }

    pub fn rhs_exprs(&self) -> Result<Vec<Expr>, SpecError> {
        self.rhs
            .f
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Expr::parse(s).map_err(|source| SpecError::Expression {
                    field: format!("rhs.f[{i}]"),
                    source,
                })
            })
            .collect()
    }
}
