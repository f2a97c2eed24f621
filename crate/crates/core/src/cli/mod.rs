//! Batch front end behind the `mcm` binary.
//!
//! Verbs: `solve`, `verify`, `sweep` and `mesh-info`. Every run is described
//! by a flat key-value config file (see [`config`]). Exit codes: 0 on
//! success, 1 on configuration or input errors, 2 when a solve does not
//! converge or a verification check fails.

pub mod config;
pub mod output;
pub mod svg;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::energy::{self, EnergyError};
use crate::mesh::Mesh;
use crate::nonlinearity::{NonlinearitySpec, SelectionRule};
use crate::solver::{self, SolveResult, SolverError};
use crate::verify::{self, ResidualOptions, VerificationReport, VerifyConfig, VerifyError};

use config::{ConfigError, DomainSpec, RunConfig};
use output::CsvError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("verify: {0}")]
    Verify(#[from] VerifyError),
    #[error("energy: {0}")]
    Energy(#[from] EnergyError),
    #[error("{path}: {source}")]
    Mesh {
        path: PathBuf,
        source: crate::mesh::MeshError,
    },
    #[error("sweep: {0}")]
    Sweep(String),
    #[error("thread pool: {0}")]
    Threads(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "mcm",
    version,
    about = "Minkowski mean-curvature Dirichlet problems with jumping right-hand sides"
)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for trial-field randomness; overrides `solver.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve and write solution.csv, report.txt and optionally solution.svg.
    Solve,
    /// Re-check a written solution against its config.
    Verify(VerifyArgs),
    /// Solve once per parameter value and tabulate the results.
    Sweep(SweepArgs),
    /// Print mesh statistics.
    MeshInfo(MeshInfoArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Solution table (default: `<out>/solution.csv`).
    #[arg(long)]
    pub solution: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// One of n, refinement, selection_rule, outer_tol.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values; an empty list does nothing.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub values: String,
    /// Run the values concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct MeshInfoArgs {
    /// Also write the mesh in text format.
    #[arg(long)]
    pub export: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Threads(e.to_string()))?;
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::Missing("--config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    pool.install(|| match &cli.command {
        Command::Solve => {
            let outcome = solve_to_dir(&cfg, &cfg.output_dir)?;
            print!("{}", outcome.summary);
            Ok(if outcome.converged {
                EXIT_OK
            } else {
                EXIT_FAILED
            })
        }
        Command::Verify(args) => cmd_verify(&cfg, args),
        Command::Sweep(args) => cmd_sweep(&cfg, args),
        Command::MeshInfo(args) => cmd_mesh_info(&cfg, args),
    })
}

/// Condensed result of one solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub converged: bool,
    pub energy: f64,
    pub analytic_linf_error: Option<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub summary: String,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn verify_config(cfg: &RunConfig, mesh: &Mesh) -> VerifyConfig {
    let s = &cfg.verify;
    let mut residual = ResidualOptions {
        margin: cfg.solver.working_margin,
        ..ResidualOptions::for_mesh(mesh)
    };
    if let Some(t) = s.tol_jump {
        residual.tol_jump = t;
    }
    VerifyConfig {
        residual,
        residual_tol: s.residual_tol,
        vi_tol: s.vi_tol,
        vi_trials: s.vi_trials,
        seed: cfg.solver.seed,
        analytic: cfg.analytic(),
        analytic_tol: s.analytic_tol,
        bruteforce_step: (mesh.interior_nodes().count() <= 4).then_some(s.bruteforce_step),
        bruteforce_tol: s.bruteforce_tol,
    }
}

/// A failed inner solve still yields a field; it is reported as a
/// non-converged run.
fn solve_or_last(
    mesh: &Mesh,
    spec: &NonlinearitySpec,
    cfg: &RunConfig,
) -> Result<(SolveResult, Option<String>), CliError> {
    let err = match solver::solve_inclusion(mesh, spec, &cfg.solver) {
        Ok(r) => return Ok((r, None)),
        Err(e) => e,
    };
    let message = err.to_string();
    let last = match err {
        SolverError::NonConvergence { last, .. } | SolverError::LineSearchStalled { last, .. } => {
            last
        }
        other => return Err(other.into()),
    };
    let energy = energy::total_energy(mesh, &last, spec)?.value();
    let zeta = solver::nodal_selection(mesh, &last, spec, cfg.solver.selection_rule);
    let result = SolveResult {
        zeta,
        inner_iterations: 0,
        outer_iterations: 0,
        energy_trace: vec![energy],
        stationarity: f64::NAN,
        converged: false,
        residual: f64::NAN,
        max_iterate_gradient: mesh.max_gradient_norm(last.values()),
        max_iterate_abs: last.linf_norm(),
        escapes: 0,
        u: last,
    };
    Ok((result, Some(message)))
}

/// Runs one solve and writes the configured outputs into `dir`.
pub fn solve_to_dir(cfg: &RunConfig, dir: &Path) -> Result<SolveOutcome, CliError> {
    let mesh = cfg.build_mesh()?;
    let spec = cfg.build_spec(&mesh)?;
    let (result, failure) = solve_or_last(&mesh, &spec, cfg)?;
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let vcfg = verify_config(cfg, &mesh);
    let residual = verify::inclusion_residual(&mesh, &result.u, &spec, &vcfg.residual)?;
    let analytic_linf_error = vcfg.analytic.map(|a| a.linf_error(&mesh, &result.u));
    if cfg.emit.csv {
        let csv = output::solution_csv(&mesh, &result.u, &result.zeta, &residual);
        write_file(&dir.join("solution.csv"), &csv)?;
    }
    if cfg.emit.report {
        let report = verify::verify_solution(&mesh, &result.u, &result.zeta, &spec, &vcfg)?;
        let mut text = output::report_text(
            &output::ReportContext {
                nonlinearity: spec.name(),
                mesh: &mesh,
                bounds: energy::bounds(&mesh, &spec),
                verification: Some(report.to_key_value()),
                analytic_linf_error,
            },
            &result,
        );
        if let Some(f) = &failure {
            text.push_str(&format!("failure = {f}\n"));
        }
        write_file(&dir.join("report.txt"), &text)?;
    }
    if cfg.emit.svg {
        match svg::solution_svg(&mesh, &result.u, &result.zeta, &spec) {
            Some(s) => write_file(&dir.join("solution.svg"), &s)?,
            None => eprintln!("note: no SVG for {}-dimensional meshes", mesh.dim()),
        }
    }

    let mut summary = format!(
        "{}: energy {:.10e}, converged {}, outer {}, inner {}, stationarity {:.3e}, residual {:.3e}\n",
        spec.name(),
        result.energy(),
        result.converged,
        result.outer_iterations,
        result.inner_iterations,
        result.stationarity,
        result.residual
    );
    if let Some(f) = &failure {
        summary.push_str(&format!("inner solve failed: {f}\n"));
    }
    Ok(SolveOutcome {
        converged: result.converged,
        energy: result.energy(),
        analytic_linf_error,
        outer_iterations: result.outer_iterations,
        inner_iterations: result.inner_iterations,
        summary,
    })
}

/// Loads a solution table and runs every enabled check.
pub fn verify_from_csv(cfg: &RunConfig, csv: &Path) -> Result<VerificationReport, CliError> {
    let mesh = cfg.build_mesh()?;
    let spec = cfg.build_spec(&mesh)?;
    let table = output::read_solution_csv(csv, &mesh)?;
    let vcfg = verify_config(cfg, &mesh);
    Ok(verify::verify_solution(
        &mesh,
        &table.u,
        &table.zeta,
        &spec,
        &vcfg,
    )?)
}

fn cmd_verify(cfg: &RunConfig, args: &VerifyArgs) -> Result<i32, CliError> {
    let csv = args
        .solution
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("solution.csv"));
    let report = verify_from_csv(cfg, &csv)?;
    print!("{}", report.to_key_value());
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    N,
    Refinement,
    SelectionRule,
    OuterTol,
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" => Ok(Self::N),
            "refinement" => Ok(Self::Refinement),
            "selection_rule" => Ok(Self::SelectionRule),
            "outer_tol" => Ok(Self::OuterTol),
            other => Err(CliError::Sweep(format!(
                "unknown parameter `{other}` (expected n, refinement, selection_rule or outer_tol)"
            ))),
        }
    }
}

fn parse_value<T: std::str::FromStr>(param: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Sweep(format!("invalid value `{v}` for {param}")))
}

/// Copy of `cfg` with one parameter replaced.
pub fn apply_sweep_value(
    cfg: &RunConfig,
    param: SweepParam,
    value: &str,
) -> Result<RunConfig, CliError> {
    let mut c = cfg.clone();
    match param {
        SweepParam::N => {
            let v: usize = parse_value("n", value)?;
            match &mut c.domain {
                DomainSpec::Interval { n, .. } => *n = v,
                DomainSpec::Rectangle { nx, ny, .. } => {
                    *nx = v;
                    *ny = v;
                }
                _ => {
                    return Err(CliError::Sweep(
                        "n applies to interval and rectangle domains".into(),
                    ))
                }
            }
        }
        SweepParam::Refinement => {
            let v: usize = parse_value("refinement", value)?;
            match &mut c.domain {
                DomainSpec::Disk { refinement, .. } => *refinement = v,
                _ => return Err(CliError::Sweep("refinement applies to disk domains".into())),
            }
        }
        SweepParam::SelectionRule => {
            c.solver.selection_rule = value
                .parse::<SelectionRule>()
                .map_err(|e| CliError::Sweep(e.to_string()))?;
        }
        SweepParam::OuterTol => {
            c.solver.outer_tol = parse_value("outer_tol", value)?;
            c.solver
                .validate()
                .map_err(|e| CliError::Sweep(e.to_string()))?;
        }
    }
    Ok(c)
}

/// Solves once per value into `<out>/<param>_<value>/` and returns the
/// rows of `sweep.csv`, in input order.
pub fn run_sweep(
    cfg: &RunConfig,
    param: &str,
    values: &[String],
    parallel: bool,
) -> Result<Vec<(String, SolveOutcome)>, CliError> {
    let p: SweepParam = param.parse()?;
    let one = |v: &String| -> Result<(String, SolveOutcome), CliError> {
        let c = apply_sweep_value(cfg, p, v)?;
        let dir = cfg.output_dir.join(format!("{param}_{v}"));
        Ok((v.clone(), solve_to_dir(&c, &dir)?))
    };
    if parallel {
        values.par_iter().map(one).collect()
    } else {
        values.iter().map(one).collect()
    }
}

pub fn sweep_csv(rows: &[(String, SolveOutcome)]) -> String {
    let mut out =
        String::from("value,energy,linf_error,outer_iterations,inner_iterations,converged\n");
    for (v, o) in rows {
        let err = o
            .analytic_linf_error
            .map_or("none".to_string(), |e| format!("{e:.16e}"));
        out.push_str(&format!(
            "{v},{:.16e},{err},{},{},{}\n",
            o.energy, o.outer_iterations, o.inner_iterations, o.converged
        ));
    }
    out
}

fn cmd_sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<i32, CliError> {
    args.param.parse::<SweepParam>()?;
    let values: Vec<String> = args
        .values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect();
    if values.is_empty() {
        println!("sweep: no values, nothing to do");
        return Ok(EXIT_OK);
    }
    let rows = run_sweep(cfg, &args.param, &values, args.parallel)?;
    let table = sweep_csv(&rows);
    write_file(&cfg.output_dir.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(if rows.iter().all(|(_, o)| o.converged) {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

pub fn mesh_info(mesh: &Mesh) -> String {
    let measures = mesh.element_measures();
    let min = measures.iter().copied().fold(f64::INFINITY, f64::min);
    let max = measures.iter().copied().fold(0.0, f64::max);
    format!(
        "dim = {}\nnodes = {}\nelements = {}\nboundary_nodes = {}\ninterior_nodes = {}\nh = {:.16e}\nvolume = {:.16e}\ninradius = {:.16e}\nmin_element_measure = {:.16e}\nmax_element_measure = {:.16e}\n",
        mesh.dim(),
        mesh.node_count(),
        mesh.element_count(),
        mesh.boundary_nodes().len(),
        mesh.interior_nodes().count(),
        mesh.h(),
        mesh.volume(),
        mesh.inradius(),
        min,
        max
    )
}

fn cmd_mesh_info(cfg: &RunConfig, args: &MeshInfoArgs) -> Result<i32, CliError> {
    let mesh = cfg.build_mesh()?;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(mesh_info(&mesh).as_bytes());
    if let Some(path) = &args.export {
        mesh.write(path).map_err(|e| CliError::Mesh {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_param_names() {
        assert_eq!("n".parse::<SweepParam>().unwrap(), SweepParam::N);
        assert!("h".parse::<SweepParam>().is_err());
    }

    #[test]
    fn sweep_values_apply() {
        let cfg = RunConfig::parse(
            "domain.kind = interval\ndomain.n = 4\nnonlinearity.kind = neg_sign",
            Path::new("."),
        )
        .unwrap();
        let c = apply_sweep_value(&cfg, SweepParam::N, "32").unwrap();
        assert_eq!(
            c.domain,
            DomainSpec::Interval {
                a: -1.0,
                b: 1.0,
                n: 32
            }
        );
        let c = apply_sweep_value(&cfg, SweepParam::SelectionRule, "hi").unwrap();
        assert_eq!(c.solver.selection_rule, SelectionRule::Hi);
        assert!(apply_sweep_value(&cfg, SweepParam::Refinement, "2").is_err());
        assert!(apply_sweep_value(&cfg, SweepParam::OuterTol, "-1").is_err());
    }
}
