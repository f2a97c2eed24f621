//! Solution tables and text reports.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::energy::EnergyBounds;
use crate::mesh::{Field, Mesh};
use crate::solver::SolveResult;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("solution csv line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("solution csv has {found} rows, mesh has {expected} nodes")]
    RowCount { expected: usize, found: usize },
    #[error("solution csv row for node {node} does not match the mesh coordinates")]
    Coordinates { node: usize },
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// One row per node: index, coordinates, `u`, `ζ`, inclusion residual.
/// Values use 17 significant digits so they round-trip exactly.
pub fn solution_csv(mesh: &Mesh, u: &Field, zeta: &[f64], residual: &[f64]) -> String {
    let mut out = solution_csv_header(mesh.dim());
    out.push('\n');
    for (i, x) in mesh.nodes().enumerate() {
        let _ = write!(out, "{i}");
        for c in x {
            let _ = write!(out, ",{c:.16e}");
        }
        let _ = writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e}",
            u.values()[i],
            zeta[i],
            residual[i]
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTable {
    pub u: Field,
    pub zeta: Vec<f64>,
}

/// Reads a table written by [`solution_csv`] and checks it against `mesh`.
pub fn read_solution_csv(path: &Path, mesh: &Mesh) -> Result<SolutionTable, CsvError> {
    let text = std::fs::read_to_string(path).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_solution_csv(&text, mesh)
}

pub fn parse_solution_csv(text: &str, mesh: &Mesh) -> Result<SolutionTable, CsvError> {
    let dim = mesh.dim();
    let columns = dim + 4;
    let mut lines = text.lines().enumerate();
    let expected_header = solution_csv_header(dim);
    match lines.next() {
        Some((_, h)) if h.trim() == expected_header => {}
        Some((_, h)) => {
            return Err(CsvError::Format {
                line: 1,
                message: format!("header `{h}` does not match `{expected_header}`"),
            })
        }
        None => {
            return Err(CsvError::Format {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let rows = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .count();
    if rows != mesh.node_count() {
        return Err(CsvError::RowCount {
            expected: mesh.node_count(),
            found: rows,
        });
    }
    let mut u = Vec::with_capacity(mesh.node_count());
    let mut zeta = Vec::with_capacity(mesh.node_count());
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != columns {
            return Err(CsvError::Format {
                line,
                message: format!("expected {columns} columns, found {}", fields.len()),
            });
        }
        let node: usize = fields[0].trim().parse().map_err(|_| CsvError::Format {
            line,
            message: format!("bad node index `{}`", fields[0]),
        })?;
        if node != u.len() {
            return Err(CsvError::Format {
                line,
                message: format!("expected node {}, found {node}", u.len()),
            });
        }
        let mut nums = Vec::with_capacity(columns - 1);
        for f in &fields[1..] {
            nums.push(f.trim().parse::<f64>().map_err(|_| CsvError::Format {
                line,
                message: format!("bad number `{f}`"),
            })?);
        }
        let x = mesh.node(node);
        let scale = x.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        if x.iter()
            .zip(&nums[..dim])
            .any(|(a, b)| (a - b).abs() > 1e-12 * scale)
        {
            return Err(CsvError::Coordinates { node });
        }
        u.push(nums[dim]);
        zeta.push(nums[dim + 1]);
    }
    Ok(SolutionTable {
        u: Field::new(u),
        zeta,
    })
}

fn solution_csv_header(dim: usize) -> String {
    let mut h = String::from("node");
    for axis in &AXES[..dim] {
        h.push(',');
        h.push_str(axis);
    }
    h.push_str(",u,zeta,residual");
    h
}

/// Everything `report.txt` needs beyond the solve result.
pub struct ReportContext<'a> {
    pub nonlinearity: &'a str,
    pub mesh: &'a Mesh,
    pub bounds: EnergyBounds,
    pub verification: Option<String>,
    pub analytic_linf_error: Option<f64>,
}

pub fn report_text(ctx: &ReportContext<'_>, r: &SolveResult) -> String {
    let mut out = String::new();
    let m = ctx.mesh;
    let _ = writeln!(out, "nonlinearity = {}", ctx.nonlinearity);
    let _ = writeln!(out, "dim = {}", m.dim());
    let _ = writeln!(out, "nodes = {}", m.node_count());
    let _ = writeln!(out, "elements = {}", m.element_count());
    let _ = writeln!(out, "h = {:.16e}", m.h());
    let _ = writeln!(out, "energy = {:.16e}", r.energy());
    let _ = writeln!(out, "converged = {}", r.converged);
    let _ = writeln!(out, "outer_iterations = {}", r.outer_iterations);
    let _ = writeln!(out, "inner_iterations = {}", r.inner_iterations);
    let _ = writeln!(out, "escapes = {}", r.escapes);
    let _ = writeln!(out, "stationarity = {:.16e}", r.stationarity);
    let _ = writeln!(out, "inclusion_residual = {:.16e}", r.residual);
    let _ = writeln!(
        out,
        "max_iterate_gradient = {:.16e}",
        r.max_iterate_gradient
    );
    let _ = writeln!(out, "max_iterate_abs = {:.16e}", r.max_iterate_abs);
    let _ = writeln!(out, "c_omega = {:.16e}", ctx.bounds.c_omega);
    let _ = writeln!(out, "c1 = {:.16e}", ctx.bounds.c1);
    let _ = writeln!(out, "c2 = {:.16e}", ctx.bounds.c2);
    let _ = writeln!(out, "energy_lower_bound = {:.16e}", ctx.bounds.lower_bound);
    if let Some(e) = ctx.analytic_linf_error {
        let _ = writeln!(out, "analytic_linf_error = {e:.16e}");
    }
    let trace: Vec<String> = r.energy_trace.iter().map(|e| format!("{e:.16e}")).collect();
    let _ = writeln!(out, "energy_trace = {}", trace.join(","));
    if let Some(v) = &ctx.verification {
        for line in v.lines() {
            let _ = writeln!(out, "verify.{line}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_rectangle_mesh};

    #[test]
    fn csv_round_trip_is_exact() {
        let m = build_rectangle_mesh(1.0, 1.0, 3, 3).unwrap();
        let u = Field::from_fn(&m, |x| (x[0] * 0.1).sin() * x[1] / 3.0);
        let zeta: Vec<f64> = (0..m.node_count())
            .map(|i| 1.0 / (i as f64 + 3.0))
            .collect();
        let res = vec![0.0; m.node_count()];
        let text = solution_csv(&m, &u, &zeta, &res);
        let t = parse_solution_csv(&text, &m).unwrap();
        assert_eq!(t.u, u);
        assert_eq!(t.zeta, zeta);
    }

    #[test]
    fn csv_shape_errors() {
        let m = build_interval_mesh(-1.0, 1.0, 4).unwrap();
        let u = Field::zeros(&m);
        let z = vec![0.0; 5];
        let text = solution_csv(&m, &u, &z, &z);
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            parse_solution_csv(&truncated, &m),
            Err(CsvError::RowCount {
                expected: 5,
                found: 2
            })
        ));
        let other = build_interval_mesh(-1.0, 1.0, 5).unwrap();
        assert!(parse_solution_csv(&text, &other).is_err());
        let cut = &text[..text.len() - 30];
        assert!(parse_solution_csv(cut, &m).is_err());
        let m2 = build_rectangle_mesh(1.0, 1.0, 1, 1).unwrap();
        assert!(matches!(
            parse_solution_csv(&text, &m2),
            Err(CsvError::Format { line: 1, .. })
        ));
    }
}
