//! Two-level solution procedure.
//!
//! The inner level minimizes the strictly convex functional
//! `Ψ(w) + Σ_i w_i e_i |ω_i|` over zero-boundary fields with element
//! gradients inside the unit ball, i.e. it solves `M(w) = e` for a given
//! nodal right-hand side. The outer level freezes a selection `ζ` of the
//! bracket `[f̲(x, u), f̄(x, u)]`, solves the inner problem with `e = ζ` and
//! repeats until the iterate reproduces itself, with an energy safeguard
//! that keeps `I = Ψ + 𝓕` nonincreasing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::energy::{self, psi_gradient, psi_unchecked, EnergyError};
use crate::linalg::{EnvelopeCholesky, LinalgError, TripletBuilder};
use crate::mesh::{Field, Mesh, MeshError};
use crate::nonlinearity::{NonlinearitySpec, SelectionRule};
use crate::verify::{self, ResidualOptions};

/// Energy increase tolerated before the safeguard steps in.
const ENERGY_SLACK: f64 = 1e-12;
/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Consecutive Newton steps without halving the residual before giving up.
const STAGNATION_LIMIT: usize = 12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("right-hand side has {found} values, mesh has {expected} nodes")]
    RhsSize { expected: usize, found: usize },
    #[error("right-hand side is not finite at node {node}")]
    NonFiniteRhs { node: usize },
    #[error("initial field is not strictly feasible: {0}")]
    InfeasibleInitial(String),
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Field,
    },
    #[error("line search stalled after {iterations} iterations (residual {residual:e})")]
    LineSearchStalled {
        iterations: usize,
        residual: f64,
        last: Field,
    },
    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum InitialGuess {
    #[default]
    Zero,
    Field(Field),
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Threshold on `max_i |∂J/∂w_i| / |ω_i|` over interior nodes.
    pub inner_tol: f64,
    /// Threshold on `‖u_{k+1} - u_k‖∞`.
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Every iterate keeps element gradients at most `1 - working_margin`.
    pub working_margin: f64,
    /// Backtracking factor.
    pub damping: f64,
    pub initial: InitialGuess,
    pub selection_rule: SelectionRule,
    pub stationarity_trials: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            inner_tol: 1e-10,
            outer_tol: 1e-8,
            max_inner: 200,
            max_outer: 100,
            working_margin: 1e-12,
            damping: 0.5,
            initial: InitialGuess::Zero,
            selection_rule: SelectionRule::Mid,
            stationarity_trials: 100,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidOptions(m));
        if !(self.inner_tol > 0.0) {
            return bad(format!(
                "inner_tol must be positive, got {}",
                self.inner_tol
            ));
        }
        if !(self.outer_tol > 0.0) {
            return bad(format!(
                "outer_tol must be positive, got {}",
                self.outer_tol
            ));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad(format!("damping must lie in (0, 1), got {}", self.damping));
        }
        if !(self.working_margin > 0.0 && self.working_margin < 0.5) {
            return bad(format!(
                "working_margin must lie in (0, 0.5), got {}",
                self.working_margin
            ));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        Ok(())
    }
}

/// Result of one prescribed right-hand-side solve.
#[derive(Debug, Clone)]
pub struct PrescribedSolution {
    pub u: Field,
    pub iterations: usize,
    /// Final `max_i |∂J/∂w_i| / |ω_i|` over interior nodes.
    pub residual: f64,
    /// Objective value at every accepted iterate, starting point included.
    pub objective_trace: Vec<f64>,
    /// Largest element gradient norm over all iterates.
    pub max_gradient_norm: f64,
    /// Largest `|w_i|` over all iterates.
    pub max_abs: f64,
}

struct InteriorMap {
    nodes: Vec<usize>,
    index: Vec<Option<usize>>,
}

impl InteriorMap {
    fn new(mesh: &Mesh) -> Self {
        let nodes: Vec<usize> = mesh.interior_nodes().collect();
        let mut index = vec![None; mesh.node_count()];
        for (k, &n) in nodes.iter().enumerate() {
            index[n] = Some(k);
        }
        Self { nodes, index }
    }
}

fn objective(mesh: &Mesh, values: &[f64], rhs: &[f64]) -> f64 {
    psi_unchecked(mesh, values) + energy::lumped_inner(mesh, values, rhs)
}

/// Weighted residual `max_i |G_i| / |ω_i|` over interior nodes.
fn density_residual(mesh: &Mesh, interior: &InteriorMap, grad: &[f64]) -> f64 {
    interior
        .nodes
        .iter()
        .map(|&n| (grad[n] / mesh.node_weight(n)).abs())
        .fold(0.0, f64::max)
}

fn objective_gradient(
    mesh: &Mesh,
    field: &Field,
    rhs: &[f64],
    margin: f64,
) -> Result<Vec<f64>, SolverError> {
    let mut g = psi_gradient(mesh, field, margin)?;
    for (i, gi) in g.iter_mut().enumerate() {
        *gi += mesh.node_weight(i) * rhs[i];
    }
    if g.iter().any(|v| v.is_nan()) {
        return Err(SolverError::NotANumber("objective gradient"));
    }
    Ok(g)
}

/// Hessian of Ψ restricted to interior nodes.
///
/// Per element the density `1 - √(1 - |g|²)` has Hessian
/// `s I + s³ g gᵀ` with `s = (1 - |g|²)^{-1/2}`.
fn assemble_hessian(
    mesh: &Mesh,
    interior: &InteriorMap,
    values: &[f64],
) -> crate::linalg::SymmetricCsr {
    let dim = mesh.dim();
    let mut builder = TripletBuilder::new(interior.nodes.len());
    let mut g = [0.0; 3];
    for e in 0..mesh.element_count() {
        mesh.gradient_into(values, e, &mut g[..dim]);
        let t: f64 = g[..dim].iter().map(|x| x * x).sum();
        let s = 1.0 / (1.0 - t).sqrt();
        let s3 = s * s * s;
        let meas = mesh.element_measure(e);
        let el = mesh.element(e);
        for (a, &na) in el.iter().enumerate() {
            let Some(ia) = interior.index[na] else {
                continue;
            };
            let pa = mesh.basis_gradient(e, a);
            let ga: f64 = g[..dim].iter().zip(pa).map(|(x, y)| x * y).sum();
            for (b, &nb) in el.iter().enumerate() {
                let Some(ib) = interior.index[nb] else {
                    continue;
                };
                let pb = mesh.basis_gradient(e, b);
                let gb: f64 = g[..dim].iter().zip(pb).map(|(x, y)| x * y).sum();
                let pab: f64 = pa.iter().zip(pb).map(|(x, y)| x * y).sum();
                builder.add(ia, ib, meas * (s * pab + s3 * ga * gb));
            }
        }
    }
    builder.build()
}

fn check_initial(mesh: &Mesh, field: &Field, margin: f64) -> Result<(), SolverError> {
    mesh.check_field(field)?;
    if !field.is_dirichlet_zero(mesh) {
        return Err(SolverError::InfeasibleInitial(
            "nonzero values on boundary nodes".into(),
        ));
    }
    let g = mesh.max_gradient_norm(field.values());
    if !(g <= 1.0 - margin) {
        return Err(SolverError::InfeasibleInitial(format!(
            "max element gradient {g} exceeds 1 - {margin:e}"
        )));
    }
    Ok(())
}

/// Solves `M(w) = e` with `w = 0` on the boundary by damped Newton on the
/// interior nodal values of `Ψ(w) + Σ_i |ω_i| e_i w_i`.
///
/// The backtracking line search rejects every trial point with an element
/// gradient beyond `1 - working_margin`, so all iterates stay strictly
/// inside the feasible set.
pub fn solve_prescribed(
    mesh: &Mesh,
    rhs: &[f64],
    opts: &SolverOptions,
) -> Result<PrescribedSolution, SolverError> {
    opts.validate()?;
    if rhs.len() != mesh.node_count() {
        return Err(SolverError::RhsSize {
            expected: mesh.node_count(),
            found: rhs.len(),
        });
    }
    if let Some(node) = rhs.iter().position(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteRhs { node });
    }
    let margin = opts.working_margin;
    let interior = InteriorMap::new(mesh);
    let mut u = match &opts.initial {
        InitialGuess::Zero => Field::zeros(mesh),
        InitialGuess::Field(f) => {
            check_initial(mesh, f, margin)?;
            f.clone()
        }
    };

    let mut j = objective(mesh, u.values(), rhs);
    let mut trace = vec![j];
    let mut max_grad = mesh.max_gradient_norm(u.values());
    let mut max_abs = u.linf_norm();
    let mut grad = objective_gradient(mesh, &u, rhs, margin)?;
    let mut residual = density_residual(mesh, &interior, &grad);

    if interior.nodes.is_empty() {
        return Ok(PrescribedSolution {
            u,
            iterations: 0,
            residual: 0.0,
            objective_trace: trace,
            max_gradient_norm: max_grad,
            max_abs,
        });
    }

    let mut iterations = 0;
    let mut best_residual = residual;
    let mut stagnant = 0;
    while residual > opts.inner_tol {
        // a residual that stops improving has reached the rounding floor of
        // the gradient evaluation (typical when |∇u| is very close to 1)
        if iterations >= opts.max_inner || stagnant >= STAGNATION_LIMIT {
            return Err(SolverError::NonConvergence {
                iterations,
                residual,
                last: u,
            });
        }
        iterations += 1;

        let hessian = assemble_hessian(mesh, &interior, u.values());
        let chol = EnvelopeCholesky::factor(&hessian)?;
        let rhs_int: Vec<f64> = interior.nodes.iter().map(|&n| -grad[n]).collect();
        let step = chol.solve(&rhs_int)?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NotANumber("Newton direction"));
        }
        let slope: f64 = interior
            .nodes
            .iter()
            .zip(&step)
            .map(|(&n, d)| grad[n] * d)
            .sum();
        // below this, the decrease is lost in the rounding of J itself
        let noise = 64.0 * f64::EPSILON * (1.0 + j.abs() + psi_unchecked(mesh, u.values()));

        let mut alpha = 1.0;
        let accepted = loop {
            let mut trial = u.clone();
            for (&n, d) in interior.nodes.iter().zip(&step) {
                trial.values_mut()[n] += alpha * d;
            }
            let g_trial = mesh.max_gradient_norm(trial.values());
            if g_trial <= 1.0 - margin {
                let j_trial = objective(mesh, trial.values(), rhs);
                if j_trial.is_nan() {
                    return Err(SolverError::NotANumber("objective"));
                }
                if j_trial <= j + ARMIJO * alpha * slope {
                    break Some((trial, j_trial, g_trial));
                }
                if slope.abs() <= noise {
                    let grad_trial = objective_gradient(mesh, &trial, rhs, margin)?;
                    if density_residual(mesh, &interior, &grad_trial) < residual {
                        break Some((trial, j_trial, g_trial));
                    }
                }
            }
            alpha *= opts.damping;
            if alpha < 1e-20 {
                break None;
            }
        };
        let Some((trial, j_trial, g_trial)) = accepted else {
            return Err(SolverError::LineSearchStalled {
                iterations,
                residual,
                last: u,
            });
        };
        u = trial;
        j = j_trial;
        trace.push(j);
        max_grad = max_grad.max(g_trial);
        max_abs = max_abs.max(u.linf_norm());
        grad = objective_gradient(mesh, &u, rhs, margin)?;
        residual = density_residual(mesh, &interior, &grad);
        if residual < 0.5 * best_residual {
            best_residual = residual;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
    }

    Ok(PrescribedSolution {
        u,
        iterations,
        residual,
        objective_trace: trace,
        max_gradient_norm: max_grad,
        max_abs,
    })
}

/// Outcome of the selection fixed-point iteration.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: Field,
    /// Selection `ζ_u` at the final iterate, see [`certifying_selection`].
    pub zeta: Vec<f64>,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// `I` at the starting point and after every outer step.
    pub energy_trace: Vec<f64>,
    /// Certificate `ε` from [`stationarity_measure`].
    pub stationarity: f64,
    pub converged: bool,
    /// Largest nodal inclusion residual at the final iterate.
    pub residual: f64,
    /// Largest element gradient norm over every inner and outer iterate.
    pub max_iterate_gradient: f64,
    /// Largest `|u_i|` over every inner and outer iterate.
    pub max_iterate_abs: f64,
    /// Outer steps that left a fixed point through a one-sided selection.
    pub escapes: usize,
}

impl SolveResult {
    pub fn energy(&self) -> f64 {
        *self.energy_trace.last().unwrap()
    }
}

/// `ζ(x_i, u_i)` at every node.
pub fn nodal_selection(
    mesh: &Mesh,
    u: &Field,
    spec: &NonlinearitySpec,
    rule: SelectionRule,
) -> Vec<f64> {
    mesh.nodes()
        .zip(u.values())
        .map(|(x, &s)| spec.selection(x, s, rule))
        .collect()
}

/// [`nodal_selection`], except at nodes on a jump, where the bracket element
/// closest to the discrete operator `M_h(u)` (zero on the boundary) is
/// taken. For a discrete solution this is the `ζ_u` with `u = v_{ζ_u}`.
pub fn certifying_selection(
    mesh: &Mesh,
    u: &Field,
    spec: &NonlinearitySpec,
    rule: SelectionRule,
    margin: f64,
) -> Result<Vec<f64>, SolverError> {
    let mut zeta = nodal_selection(mesh, u, spec, rule);
    let m = verify::weak_operator(mesh, u, margin)?;
    for i in 0..mesh.node_count() {
        let (x, s) = (mesh.node(i), u.values()[i]);
        if spec.is_jump_point(x, s) {
            let b = spec.bracket(x, s);
            zeta[i] = m[i].clamp(b.lo, b.hi);
        }
    }
    Ok(zeta)
}

fn finite_energy(mesh: &Mesh, u: &Field, spec: &NonlinearitySpec) -> Result<f64, SolverError> {
    Ok(energy::total_energy(mesh, u, spec)?.value())
}

/// Replaces an energy-increasing step by the best point of
/// `u + λ (candidate - u)`, `λ = 1/2, 1/4, ...`; stays at `u` if none helps.
fn safeguard(
    mesh: &Mesh,
    spec: &NonlinearitySpec,
    u: &Field,
    energy_u: f64,
    candidate: Field,
) -> Result<(Field, f64, bool), SolverError> {
    let e_cand = finite_energy(mesh, &candidate, spec)?;
    if e_cand <= energy_u + ENERGY_SLACK {
        return Ok((candidate, e_cand, false));
    }
    let mut best: Option<(Field, f64)> = None;
    let mut lambda = 0.5;
    for _ in 0..40 {
        let v = u.lerp(&candidate, lambda);
        let e = finite_energy(mesh, &v, spec)?;
        if best.as_ref().map_or(true, |(_, b)| e < *b) {
            best = Some((v, e));
        }
        lambda *= 0.5;
    }
    match best {
        Some((v, e)) if e < energy_u => Ok((v, e, true)),
        _ => Ok((u.clone(), energy_u, true)),
    }
}

fn interior_equal(mesh: &Mesh, a: &[f64], b: &[f64]) -> bool {
    mesh.interior_nodes().all(|i| a[i] == b[i])
}

/// Iterates `u ← solve_prescribed(ζ(u))` from `opts.initial`.
///
/// When the iteration reproduces a point where some interior nodes sit on a
/// jump level, the one-sided selections `lo` and `hi` at those nodes are also
/// tried; a step is taken if it lowers `I` by more than the energy slack.
pub fn solve_inclusion(
    mesh: &Mesh,
    spec: &NonlinearitySpec,
    opts: &SolverOptions,
) -> Result<SolveResult, SolverError> {
    opts.validate()?;
    let rule = opts.selection_rule;
    let mut u = match &opts.initial {
        InitialGuess::Zero => Field::zeros(mesh),
        InitialGuess::Field(f) => {
            check_initial(mesh, f, opts.working_margin)?;
            f.clone()
        }
    };
    // every inner solve is warm-started from zero so that it is a pure
    // function of its right-hand side
    let inner_opts = SolverOptions {
        initial: InitialGuess::Zero,
        ..opts.clone()
    };

    let mut energy = finite_energy(mesh, &u, spec)?;
    let mut trace = vec![energy];
    let mut zeta = nodal_selection(mesh, &u, spec, rule);
    let mut inner_iterations = 0;
    let mut max_grad = mesh.max_gradient_norm(u.values());
    let mut max_abs = u.linf_norm();
    let mut outer_iterations = 0;
    let mut fixed_point = false;
    let mut escapes = 0;

    while outer_iterations < opts.max_outer {
        outer_iterations += 1;
        let inner = solve_prescribed(mesh, &zeta, &inner_opts)?;
        inner_iterations += inner.iterations;
        max_grad = max_grad.max(inner.max_gradient_norm);
        max_abs = max_abs.max(inner.max_abs);

        let (next, next_energy, damped) = safeguard(mesh, spec, &u, energy, inner.u)?;
        max_grad = max_grad.max(mesh.max_gradient_norm(next.values()));
        max_abs = max_abs.max(next.linf_norm());
        let next_zeta = nodal_selection(mesh, &next, spec, rule);
        let step = next.linf_distance(&u);
        let reproduced = !damped && interior_equal(mesh, &next_zeta, &zeta);

        u = next;
        energy = next_energy;
        zeta = next_zeta;
        trace.push(energy);

        if step <= opts.outer_tol || reproduced {
            match escape_step(mesh, spec, &u, energy, &inner_opts)? {
                Some(esc) => {
                    escapes += 1;
                    inner_iterations += esc.inner_iterations;
                    max_grad = max_grad.max(esc.max_gradient);
                    max_abs = max_abs.max(esc.max_abs);
                    u = esc.u;
                    energy = esc.energy;
                    zeta = nodal_selection(mesh, &u, spec, rule);
                    *trace.last_mut().unwrap() = energy;
                }
                None => {
                    fixed_point = true;
                    break;
                }
            }
        }
    }

    let zeta = certifying_selection(mesh, &u, spec, rule, opts.working_margin)?;
    let stationarity =
        stationarity_measure(mesh, &u, spec, rule, opts.stationarity_trials, opts.seed)?;
    let residual_opts = ResidualOptions {
        margin: opts.working_margin,
        ..ResidualOptions::for_mesh(mesh)
    };
    let residual = verify::inclusion_residual(mesh, &u, spec, &residual_opts)?
        .into_iter()
        .fold(0.0, f64::max);
    let converged = fixed_point && stationarity <= opts.outer_tol * (1.0 + energy.abs());

    Ok(SolveResult {
        u,
        zeta,
        inner_iterations,
        outer_iterations,
        energy_trace: trace,
        stationarity,
        converged,
        residual,
        max_iterate_gradient: max_grad,
        max_iterate_abs: max_abs,
        escapes,
    })
}

struct Escape {
    u: Field,
    energy: f64,
    inner_iterations: usize,
    max_gradient: f64,
    max_abs: f64,
}

fn escape_step(
    mesh: &Mesh,
    spec: &NonlinearitySpec,
    u: &Field,
    energy_u: f64,
    inner_opts: &SolverOptions,
) -> Result<Option<Escape>, SolverError> {
    let on_jump = mesh
        .interior_nodes()
        .any(|i| spec.is_jump_point(mesh.node(i), u.values()[i]));
    if !on_jump {
        return Ok(None);
    }
    let mut best: Option<Escape> = None;
    let mut inner_iterations = 0;
    for alt in [SelectionRule::Lo, SelectionRule::Hi] {
        if alt == inner_opts.selection_rule {
            continue;
        }
        let zeta = nodal_selection(mesh, u, spec, alt);
        let inner = solve_prescribed(mesh, &zeta, inner_opts)?;
        inner_iterations += inner.iterations;
        let (max_gradient, max_abs) = (inner.max_gradient_norm, inner.max_abs);
        let (v, e, _) = safeguard(mesh, spec, u, energy_u, inner.u)?;
        let improves = e < energy_u - ENERGY_SLACK;
        if improves && best.as_ref().map_or(true, |b| e < b.energy) {
            best = Some(Escape {
                max_gradient: max_gradient.max(mesh.max_gradient_norm(v.values())),
                max_abs: max_abs.max(v.linf_norm()),
                u: v,
                energy: e,
                inner_iterations: 0,
            });
        }
    }
    Ok(best.map(|mut b| {
        b.inner_iterations = inner_iterations;
        b
    }))
}

/// Numerical certificate for the critical-point inequality at `u`.
///
/// For trial fields `v` in the feasible set it evaluates
/// `D(v) = ⟨ζ_u, v - u⟩ + Ψ(v) - Ψ(u)` (lumped inner product), taking at
/// jump nodes whichever bracket endpoint makes the nodal term larger, and
/// returns `max(0, max_v -D(v) / ‖v - u‖∞)`. Trials are convex combinations
/// `u + λ (w - u)` of random feasible fields `w` with `λ` cycling through
/// `1, 0.1, 0.01, 0.001`, so both global and local directions are probed.
pub fn stationarity_measure(
    mesh: &Mesh,
    u: &Field,
    spec: &NonlinearitySpec,
    rule: SelectionRule,
    trial_count: usize,
    seed: u64,
) -> Result<f64, SolverError> {
    mesh.check_field(u)?;
    let psi_u = match energy::psi(mesh, u)? {
        energy::ExtendedReal::Finite(v) => v,
        energy::ExtendedReal::PlusInfinity => {
            return Err(SolverError::InfeasibleInitial(
                "stationarity requested at an infeasible field".into(),
            ))
        }
    };
    let brackets: Vec<_> = mesh
        .nodes()
        .zip(u.values())
        .map(|(x, &s)| {
            let jump = spec.is_jump_point(x, s);
            (jump, spec.bracket(x, s), spec.selection(x, s, rule))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambdas = [1.0, 0.1, 0.01, 0.001];
    let mut eps: f64 = 0.0;
    for k in 0..trial_count {
        let w = verify::random_trial_field(mesh, &mut rng);
        let lambda = lambdas[k % lambdas.len()] * rng.gen_range(0.5..1.0);
        let v = u.lerp(&w, lambda);
        let dist = v.linf_distance(u);
        if dist == 0.0 {
            continue;
        }
        let psi_v = match energy::psi(mesh, &v)? {
            energy::ExtendedReal::Finite(p) => p,
            energy::ExtendedReal::PlusInfinity => continue,
        };
        let mut pairing = 0.0;
        for (i, &(jump, b, z)) in brackets.iter().enumerate() {
            let dv = v.values()[i] - u.values()[i];
            let zi = if jump {
                if dv > 0.0 {
                    b.hi
                } else {
                    b.lo
                }
            } else {
                z
            };
            pairing += mesh.node_weight(i) * zi * dv;
        }
        let d = pairing + psi_v - psi_u;
        eps = eps.max(-d / dist);
    }
    Ok(eps)
}
