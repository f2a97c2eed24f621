//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! domain.kind = interval
//! domain.a = -1
//! domain.b = 1
//! domain.n = 256
//! nonlinearity.kind = neg_sign
//! solver.selection_rule = mid
//! output.dir = out
//! emit.svg = true
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{build_disk_mesh, build_interval_mesh, build_rectangle_mesh, Mesh, MeshError};
use crate::nonlinearity::{self, NonlinearityError, NonlinearitySpec, SelectionRule};
use crate::solver::SolverOptions;
use crate::verify::RadialSolution;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config key `{key}` (line {line}): {message}")]
    Value {
        key: String,
        line: usize,
        message: String,
    },
    #[error("config is missing required key `{0}`")]
    Missing(String),
    #[error("mesh file {0} does not exist")]
    MeshNotFound(PathBuf),
    #[error("mesh file {path}: {source}")]
    MeshFile { path: PathBuf, source: MeshError },
    #[error("domain: {0}")]
    Mesh(#[from] MeshError),
    #[error("nonlinearity: {0}")]
    Nonlinearity(#[from] NonlinearityError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Interval {
        a: f64,
        b: f64,
        n: usize,
    },
    Rectangle {
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
    },
    Disk {
        radius: f64,
        refinement: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RhsSpec {
    /// Catalog entry with its numeric parameters.
    Catalog {
        name: String,
        params: BTreeMap<String, f64>,
    },
    /// `f(x, s) = e(x)`, given as an expression in `x`, `y`, `z`.
    Prescribed { expression: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub residual_tol: f64,
    pub vi_tol: f64,
    pub vi_trials: usize,
    pub analytic_tol: f64,
    pub bruteforce_step: f64,
    pub bruteforce_tol: f64,
    /// Overrides the default jump window `h`.
    pub tol_jump: Option<f64>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            residual_tol: 1e-2,
            vi_tol: 1e-6,
            vi_trials: 200,
            analytic_tol: 2e-2,
            bruteforce_step: 1e-2,
            bruteforce_tol: 1e-3,
            tol_jump: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emit {
    pub csv: bool,
    pub svg: bool,
    pub report: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub rhs: RhsSpec,
    pub solver: SolverOptions,
    pub verify: VerifySettings,
    pub output_dir: PathBuf,
    pub emit: Emit,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Parsed key-value pairs that remember their line numbers.
struct Table {
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("invalid key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("key `{key}` has no value"),
                });
            }
            if let Some(prev) = entries.get(key).map(|e: &Entry| e.line) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {prev})"),
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(Self { entries })
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Value {
                key: key.to_string(),
                line,
                message: format!("cannot parse `{v}`: {e}"),
            }),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn unused(&self) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find(|(_, e)| !e.used)
            .map(|(k, e)| (k.as_str(), e.line))
    }
}

const CATALOG_PARAMS: &[(&str, &[&str])] = &[
    ("zero", &[]),
    ("constant", &["a"]),
    ("neg_sign", &[]),
    ("heaviside", &[]),
    ("step", &["a", "b", "s0"]),
    ("power", &["c", "r"]),
];

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut t = Table::parse(text)?;
        let kind: String = t.require("domain.kind")?;
        let domain = match kind.as_str() {
            "interval" => DomainSpec::Interval {
                a: t.or("domain.a", -1.0)?,
                b: t.or("domain.b", 1.0)?,
                n: t.require("domain.n")?,
            },
            "rectangle" => DomainSpec::Rectangle {
                lx: t.or("domain.lx", 1.0)?,
                ly: t.or("domain.ly", 1.0)?,
                nx: t.require("domain.nx")?,
                ny: t.require("domain.ny")?,
            },
            "disk" => DomainSpec::Disk {
                radius: t.or("domain.radius", 1.0)?,
                refinement: t.require("domain.refinement")?,
            },
            "file" => {
                let p: String = t.require("domain.path")?;
                let path = base.join(p);
                if !path.is_file() {
                    return Err(ConfigError::MeshNotFound(path));
                }
                DomainSpec::File { path }
            }
            other => {
                return Err(ConfigError::Value {
                    key: "domain.kind".into(),
                    line: t.line_of("domain.kind"),
                    message: format!(
                        "unknown domain `{other}` (expected interval, rectangle, disk or file)"
                    ),
                })
            }
        };

        let kind: String = t.require("nonlinearity.kind")?;
        let rhs = if kind == "prescribed" {
            let expression: String = t.require("nonlinearity.e")?;
            if let Err(e) = evalexpr::build_operator_tree(&expression) {
                return Err(ConfigError::Value {
                    key: "nonlinearity.e".into(),
                    line: t.line_of("nonlinearity.e"),
                    message: e.to_string(),
                });
            }
            RhsSpec::Prescribed { expression }
        } else {
            let Some((_, names)) = CATALOG_PARAMS.iter().find(|(n, _)| *n == kind) else {
                return Err(ConfigError::Value {
                    key: "nonlinearity.kind".into(),
                    line: t.line_of("nonlinearity.kind"),
                    message: format!("unknown nonlinearity `{kind}`"),
                });
            };
            let mut params = BTreeMap::new();
            for name in names.iter() {
                if let Some(v) = t.get::<f64>(&format!("nonlinearity.{name}"))? {
                    params.insert(name.to_string(), v);
                }
            }
            RhsSpec::Catalog { name: kind, params }
        };

        let d = SolverOptions::default();
        let solver = SolverOptions {
            inner_tol: t.or("solver.inner_tol", d.inner_tol)?,
            outer_tol: t.or("solver.outer_tol", d.outer_tol)?,
            max_inner: t.or("solver.max_inner", d.max_inner)?,
            max_outer: t.or("solver.max_outer", d.max_outer)?,
            working_margin: t.or("solver.working_margin", d.working_margin)?,
            damping: t.or("solver.damping", d.damping)?,
            initial: d.initial,
            selection_rule: t.or::<SelectionRule>("solver.selection_rule", d.selection_rule)?,
            stationarity_trials: t.or("solver.stationarity_trials", d.stationarity_trials)?,
            seed: t.or("solver.seed", d.seed)?,
        };
        if let Err(e) = solver.validate() {
            return Err(ConfigError::Value {
                key: "solver".into(),
                line: 0,
                message: e.to_string(),
            });
        }

        let v = VerifySettings::default();
        let verify = VerifySettings {
            residual_tol: t.or("verify.residual_tol", v.residual_tol)?,
            vi_tol: t.or("verify.vi_tol", v.vi_tol)?,
            vi_trials: t.or("verify.vi_trials", v.vi_trials)?,
            analytic_tol: t.or("verify.analytic_tol", v.analytic_tol)?,
            bruteforce_step: t.or("verify.bruteforce_step", v.bruteforce_step)?,
            bruteforce_tol: t.or("verify.bruteforce_tol", v.bruteforce_tol)?,
            tol_jump: t.get("verify.tol_jump")?,
        };

        let output_dir = base.join(t.or("output.dir", String::from("out"))?);
        let emit = Emit {
            csv: t.or("emit.csv", true)?,
            svg: t.or("emit.svg", false)?,
            report: t.or("emit.report", true)?,
        };

        if let Some((key, line)) = t.unused() {
            return Err(ConfigError::Value {
                key: key.to_string(),
                line,
                message: "unknown or inapplicable key".into(),
            });
        }
        Ok(Self {
            domain,
            rhs,
            solver,
            verify,
            output_dir,
            emit,
        })
    }

    pub fn build_mesh(&self) -> Result<Mesh, ConfigError> {
        Ok(match &self.domain {
            DomainSpec::Interval { a, b, n } => build_interval_mesh(*a, *b, *n)?,
            DomainSpec::Rectangle { lx, ly, nx, ny } => build_rectangle_mesh(*lx, *ly, *nx, *ny)?,
            DomainSpec::Disk { radius, refinement } => build_disk_mesh(*radius, *refinement)?,
            DomainSpec::File { path } => {
                Mesh::read(path).map_err(|source| ConfigError::MeshFile {
                    path: path.clone(),
                    source,
                })?
            }
        })
    }

    /// Builds the right-hand side. A prescribed expression gets the growth
    /// constant `max |e|` over the mesh nodes.
    pub fn build_spec(&self, mesh: &Mesh) -> Result<NonlinearitySpec, ConfigError> {
        match &self.rhs {
            RhsSpec::Catalog { name, params } => Ok(nonlinearity::from_catalog(name, |p| {
                params.get(p).copied()
            })?),
            RhsSpec::Prescribed { expression } => {
                if let Some(a) = self.constant_rhs() {
                    return Ok(nonlinearity::constant(a));
                }
                let tree = Arc::new(
                    evalexpr::build_operator_tree(expression)
                        .map_err(|e| NonlinearityError::Invalid(e.to_string()))?,
                );
                let mut c: f64 = 0.0;
                for (i, x) in mesh.nodes().enumerate() {
                    let v = eval_expression(&tree, x).map_err(|e| {
                        NonlinearityError::Invalid(format!("e({x:?}) at node {i}: {e}"))
                    })?;
                    c = c.max(v.abs());
                }
                let rule = Arc::clone(&tree);
                Ok(NonlinearitySpec::with_jumps(
                    format!("prescribed({expression})"),
                    Arc::new(move |x, _| eval_expression(&rule, x).unwrap_or(f64::NAN)),
                    vec![],
                    c,
                    2.0,
                )?)
            }
        }
    }

    /// Value of `e` when the right-hand side does not depend on `x` or `u`.
    pub fn constant_rhs(&self) -> Option<f64> {
        match &self.rhs {
            RhsSpec::Catalog { name, params } => match name.as_str() {
                "zero" => Some(0.0),
                "constant" => params.get("a").copied(),
                _ => None,
            },
            RhsSpec::Prescribed { expression } => {
                let tree = evalexpr::build_operator_tree(expression).ok()?;
                let uses_vars = tree.iter_variable_identifiers().next().is_some();
                if uses_vars {
                    return None;
                }
                tree.eval_number().ok()
            }
        }
    }

    /// Closed-form solution for constant right-hand sides on a ball centred
    /// at the origin (symmetric intervals and disks).
    pub fn analytic(&self) -> Option<RadialSolution> {
        let a = self.constant_rhs()?;
        match self.domain {
            DomainSpec::Interval { a: lo, b: hi, .. } if lo == -hi => {
                Some(crate::verify::analytic_radial(a, hi, 1))
            }
            DomainSpec::Disk { radius, .. } => Some(crate::verify::analytic_radial(a, radius, 2)),
            _ => None,
        }
    }
}

fn eval_expression(tree: &evalexpr::Node, x: &[f64]) -> Result<f64, evalexpr::EvalexprError> {
    use evalexpr::{ContextWithMutableVariables, HashMapContext, Value};
    let mut ctx = HashMapContext::new();
    for (name, v) in ["x", "y", "z"].iter().zip(x.iter()) {
        ctx.set_value((*name).into(), Value::Float(*v))?;
    }
    tree.eval_number_with_context(&ctx)
}
