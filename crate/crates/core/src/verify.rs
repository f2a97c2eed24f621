//! Independent checks of computed solutions: nodal inclusion residuals, the
//! variational inequality, closed-form radial solutions and exhaustive
//! minimization on tiny meshes.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::energy::{self, psi_gradient, EnergyError, ExtendedReal, DEFAULT_GRADIENT_MARGIN};
use crate::mesh::{Field, Mesh, MeshError};
use crate::nonlinearity::NonlinearitySpec;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("brute force supports at most 4 interior nodes, mesh has {0}")]
    TooManyNodes(usize),
    #[error("grid step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("{0}")]
    Infeasible(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Knobs of the nodal inclusion test.
#[derive(Debug, Clone)]
pub struct ResidualOptions {
    /// Widening `τ_f` of the bracket on both sides.
    pub bracket_slack: f64,
    /// Nodes with `|u_i - s★(x_i)| <= tol_jump` are tested against the full
    /// jump interval.
    pub tol_jump: f64,
    /// Strict-feasibility margin passed to the Ψ gradient.
    pub margin: f64,
}

impl ResidualOptions {
    /// Defaults with the jump window equal to the mesh size.
    pub fn for_mesh(mesh: &Mesh) -> Self {
        Self {
            bracket_slack: 0.0,
            tol_jump: mesh.h(),
            margin: DEFAULT_GRADIENT_MARGIN,
        }
    }
}

/// Lumped weak form of `M(u)`: `m_i = -(∂Ψ/∂u_i) / |ω_i|` at interior nodes,
/// zero on the boundary.
pub fn weak_operator(mesh: &Mesh, u: &Field, margin: f64) -> Result<Vec<f64>, EnergyError> {
    let g = psi_gradient(mesh, u, margin)?;
    Ok((0..mesh.node_count())
        .map(|i| {
            if mesh.is_boundary(i) {
                0.0
            } else {
                -g[i] / mesh.node_weight(i)
            }
        })
        .collect())
}

/// Per-node distance of the discrete `M(u)` to `[f̲(x_i, u_i), f̄(x_i, u_i)]`.
pub fn inclusion_residual(
    mesh: &Mesh,
    u: &Field,
    spec: &NonlinearitySpec,
    opts: &ResidualOptions,
) -> Result<Vec<f64>, EnergyError> {
    let m = weak_operator(mesh, u, opts.margin)?;
    Ok((0..mesh.node_count())
        .map(|i| {
            if mesh.is_boundary(i) {
                return 0.0;
            }
            let x = mesh.node(i);
            let s = u.values()[i];
            let mut b = spec.bracket(x, s);
            for j in spec.jumps().into_iter().flatten() {
                if ((j.level)(x) - s).abs() <= opts.tol_jump {
                    let (lo, hi) = ((j.below)(x), (j.above)(x));
                    b.lo = b.lo.min(lo.min(hi));
                    b.hi = b.hi.max(lo.max(hi));
                }
            }
            b.distance(m[i], opts.bracket_slack)
        })
        .collect())
}

/// Random feasible competitor: a sum of smooth bumps (or, one time in four,
/// raw nodal noise) with zero boundary values, scaled so that its largest
/// element gradient is a random fraction of 0.9.
pub fn random_trial_field(mesh: &Mesh, rng: &mut impl Rng) -> Field {
    let n = mesh.node_count();
    let diam = {
        let mut lo = vec![f64::INFINITY; mesh.dim()];
        let mut hi = vec![f64::NEG_INFINITY; mesh.dim()];
        for p in mesh.nodes() {
            for k in 0..mesh.dim() {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(a, b)| (b - a).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut values = vec![0.0; n];
    if rng.gen_range(0..4) == 0 {
        for v in values.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    } else {
        let bumps = rng.gen_range(1..=4);
        for _ in 0..bumps {
            let center = mesh.node(rng.gen_range(0..n)).to_vec();
            let radius = diam * rng.gen_range(0.1..0.7);
            let amp: f64 = rng.gen_range(-1.0..1.0);
            for (v, p) in values.iter_mut().zip(mesh.nodes()) {
                let r2: f64 = p
                    .iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    / (radius * radius);
                if r2 < 1.0 {
                    *v += amp * (1.0 - r2).powi(2);
                }
            }
        }
    }
    let mut f = Field::new(values);
    f.zero_boundary(mesh);
    let g = mesh.max_gradient_norm(f.values());
    if g > 0.0 {
        f = f.scaled(0.9 * rng.gen_range(0.05..1.0) / g);
    }
    f
}

/// Distance to the nearest boundary node, scaled so its steepest element has
/// gradient 0.9.
pub fn scaled_cone(mesh: &Mesh) -> Field {
    let mut f = Field::from_fn(mesh, |p| {
        mesh.boundary_nodes()
            .iter()
            .map(|&b| {
                mesh.node(b)
                    .iter()
                    .zip(p)
                    .map(|(a, c)| (a - c).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    });
    f.zero_boundary(mesh);
    let g = mesh.max_gradient_norm(f.values());
    if g > 0.0 {
        f = f.scaled(0.9 / g);
    }
    f
}

/// Smallest `S(w) = Ψ(w) - Ψ(u) + ⟨ζ, w - u⟩` over a deterministic suite
/// (`u`, zero, ± the scaled cone at full, half and tenth amplitude) and
/// `trials` random feasible `w`.
pub fn variational_inequality_check(
    mesh: &Mesh,
    u: &Field,
    zeta: &[f64],
    trials: usize,
    seed: u64,
) -> Result<f64, VerifyError> {
    mesh.check_field(u)?;
    let psi_u = energy::psi(mesh, u)?
        .finite()
        .ok_or_else(|| VerifyError::Infeasible("u is outside the feasible set".into()))?;
    if zeta.len() != mesh.node_count() || zeta.iter().any(|z| !z.is_finite()) {
        return Err(VerifyError::Infeasible(
            "zeta must hold one finite value per node".into(),
        ));
    }
    let slack = |w: &Field| -> Result<Option<f64>, VerifyError> {
        let psi_w = match energy::psi(mesh, w)? {
            ExtendedReal::Finite(p) => p,
            ExtendedReal::PlusInfinity => return Ok(None),
        };
        let diff: Vec<f64> = w
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Some(
            psi_w - psi_u + energy::lumped_inner(mesh, zeta, &diff),
        ))
    };
    let cone = scaled_cone(mesh);
    let mut suite = vec![u.clone(), Field::zeros(mesh)];
    for amp in [1.0, -1.0, 0.5, -0.5, 0.1, -0.1] {
        suite.push(cone.scaled(amp));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    suite.extend((0..trials).map(|_| random_trial_field(mesh, &mut rng)));
    let mut min_slack = f64::INFINITY;
    for w in &suite {
        if let Some(s) = slack(w)? {
            min_slack = min_slack.min(s);
        }
    }
    Ok(min_slack)
}

/// Closed-form solution of `M(v) = a` on the ball of radius `R` in `ℝ^N`
/// with zero boundary values:
/// `u(r) = (N/a) (√(1 + (a r/N)²) - √(1 + (a R/N)²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialSolution {
    pub a: f64,
    pub radius: f64,
    pub dim: usize,
}

pub fn analytic_radial(a: f64, radius: f64, dim: usize) -> RadialSolution {
    RadialSolution { a, radius, dim }
}

impl RadialSolution {
    pub fn value(&self, r: f64) -> f64 {
        if self.a == 0.0 {
            return 0.0;
        }
        let n = self.dim as f64;
        let k = self.a / n;
        ((1.0 + (k * r).powi(2)).sqrt() - (1.0 + (k * self.radius).powi(2)).sqrt()) / k
    }

    /// `u'(r) = (a r/N) / √(1 + (a r/N)²)`.
    pub fn derivative(&self, r: f64) -> f64 {
        let z = self.a * r / self.dim as f64;
        z / (1.0 + z * z).sqrt()
    }

    /// Value at a point, using `r = |x|`.
    pub fn at(&self, x: &[f64]) -> f64 {
        self.value(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Nodal `L∞` distance between `u` and this solution.
    pub fn linf_error(&self, mesh: &Mesh, u: &Field) -> f64 {
        mesh.nodes()
            .zip(u.values())
            .map(|(x, v)| (v - self.at(x)).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub field: Field,
    pub energy: f64,
    pub configurations: usize,
}

/// Exhaustive minimization of `I` over nodal values `k · grid_step` in
/// `[-c(Ω), c(Ω)]` at up to four interior nodes, restricted to the feasible
/// set. Ties go to the lexicographically smallest configuration.
pub fn brute_force_minimize(
    mesh: &Mesh,
    spec: &NonlinearitySpec,
    grid_step: f64,
) -> Result<BruteForceResult, VerifyError> {
    if !(grid_step > 0.0) {
        return Err(VerifyError::InvalidStep(grid_step));
    }
    let interior: Vec<usize> = mesh.interior_nodes().collect();
    if interior.len() > 4 {
        return Err(VerifyError::TooManyNodes(interior.len()));
    }
    let c = mesh.inradius();
    let kmax = (c / grid_step + 1e-9).floor() as i64;
    let levels: Vec<f64> = (-kmax..=kmax).map(|k| k as f64 * grid_step).collect();
    let m = levels.len();

    // F(x_i, level) weighted by |ω_i|, tabulated once per node
    let mut potential = Vec::with_capacity(interior.len());
    for &i in &interior {
        let row: Result<Vec<f64>, _> = levels
            .iter()
            .map(|&s| {
                spec.primitive(mesh.node(i), s)
                    .map(|f| mesh.node_weight(i) * f)
            })
            .collect();
        potential.push(row.map_err(EnergyError::from)?);
    }

    let d = interior.len();
    if d == 0 {
        let field = Field::zeros(mesh);
        let energy = energy::total_energy(mesh, &field, spec)?.value();
        return Ok(BruteForceResult {
            field,
            energy,
            configurations: 1,
        });
    }
    let total: usize = m.pow(d as u32);
    let best = (0..m)
        .into_par_iter()
        .filter_map(|first| {
            let mut values = vec![0.0; mesh.node_count()];
            let mut idx = vec![0usize; d];
            idx[0] = first;
            let inner = m.pow(d as u32 - 1);
            let mut local: Option<(f64, Vec<usize>)> = None;
            for _ in 0..inner {
                for (k, &node) in interior.iter().enumerate() {
                    values[node] = levels[idx[k]];
                }
                if mesh.max_gradient_norm(&values) <= 1.0 {
                    let e = energy::psi_unchecked(mesh, &values)
                        + idx
                            .iter()
                            .enumerate()
                            .map(|(k, &j)| potential[k][j])
                            .sum::<f64>();
                    if local.as_ref().map_or(true, |(b, _)| e < *b) {
                        local = Some((e, idx.clone()));
                    }
                }
                // odometer over the trailing indices
                for k in (1..d).rev() {
                    idx[k] += 1;
                    if idx[k] < m {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            local
        })
        .reduce_with(|a, b| match a.0.partial_cmp(&b.0) {
            Some(std::cmp::Ordering::Less) => a,
            Some(std::cmp::Ordering::Greater) => b,
            _ => {
                if a.1 <= b.1 {
                    a
                } else {
                    b
                }
            }
        });
    let (_, idx) = best.ok_or_else(|| VerifyError::Infeasible("no feasible grid point".into()))?;
    let mut field = Field::zeros(mesh);
    for (k, &node) in interior.iter().enumerate() {
        field.values_mut()[node] = levels[idx[k]];
    }
    let energy = energy::total_energy(mesh, &field, spec)?.value();
    Ok(BruteForceResult {
        field,
        energy,
        configurations: total,
    })
}

/// Thresholds and optional oracles for [`verify_solution`].
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub residual: ResidualOptions,
    pub residual_tol: f64,
    pub vi_tol: f64,
    pub vi_trials: usize,
    pub seed: u64,
    pub analytic: Option<RadialSolution>,
    pub analytic_tol: f64,
    /// Grid step for the exhaustive search; only used on meshes with at
    /// most four interior nodes.
    pub bruteforce_step: Option<f64>,
    pub bruteforce_tol: f64,
}

impl VerifyConfig {
    pub fn for_mesh(mesh: &Mesh) -> Self {
        Self {
            residual: ResidualOptions::for_mesh(mesh),
            residual_tol: 1e-2,
            vi_tol: 1e-6,
            vi_trials: 200,
            seed: 0,
            analytic: None,
            analytic_tol: 2e-2,
            bruteforce_step: None,
            bruteforce_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub max_inclusion_residual: f64,
    pub residual_passed: bool,
    pub vi_min_slack: f64,
    pub vi_passed: bool,
    pub analytic_linf_error: Option<f64>,
    pub analytic_passed: Option<bool>,
    pub bruteforce_gap: Option<f64>,
    pub bruteforce_passed: Option<bool>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.residual_passed
            && self.vi_passed
            && self.analytic_passed.unwrap_or(true)
            && self.bruteforce_passed.unwrap_or(true)
    }

    /// Flat `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:.17e}"));
        let flag = |v: Option<bool>| v.map_or("skipped".to_string(), |b| b.to_string());
        let _ = writeln!(
            out,
            "max_inclusion_residual = {:.17e}",
            self.max_inclusion_residual
        );
        let _ = writeln!(out, "residual_passed = {}", self.residual_passed);
        let _ = writeln!(out, "vi_min_slack = {:.17e}", self.vi_min_slack);
        let _ = writeln!(out, "vi_passed = {}", self.vi_passed);
        let _ = writeln!(
            out,
            "analytic_linf_error = {}",
            opt(self.analytic_linf_error)
        );
        let _ = writeln!(out, "analytic_passed = {}", flag(self.analytic_passed));
        let _ = writeln!(out, "bruteforce_gap = {}", opt(self.bruteforce_gap));
        let _ = writeln!(out, "bruteforce_passed = {}", flag(self.bruteforce_passed));
        let _ = writeln!(out, "passed = {}", self.passed());
        out
    }
}

/// Runs every enabled check on the pair `(u, ζ)`.
pub fn verify_solution(
    mesh: &Mesh,
    u: &Field,
    zeta: &[f64],
    spec: &NonlinearitySpec,
    cfg: &VerifyConfig,
) -> Result<VerificationReport, VerifyError> {
    let max_res = inclusion_residual(mesh, u, spec, &cfg.residual)?
        .into_iter()
        .fold(0.0, f64::max);
    let vi = variational_inequality_check(mesh, u, zeta, cfg.vi_trials, cfg.seed)?;
    let analytic = cfg.analytic.map(|a| a.linf_error(mesh, u));
    let gap = match cfg.bruteforce_step {
        Some(step) if mesh.interior_nodes().count() <= 4 => {
            let bf = brute_force_minimize(mesh, spec, step)?;
            let e = energy::total_energy(mesh, u, spec)?.value();
            Some(e - bf.energy)
        }
        _ => None,
    };
    Ok(VerificationReport {
        max_inclusion_residual: max_res,
        residual_passed: max_res <= cfg.residual_tol,
        vi_min_slack: vi,
        vi_passed: vi >= -cfg.vi_tol,
        analytic_linf_error: analytic,
        analytic_passed: analytic.map(|e| e <= cfg.analytic_tol),
        bruteforce_gap: gap,
        bruteforce_passed: gap.map(|g| g <= cfg.bruteforce_tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, build_interval_mesh};
    use crate::nonlinearity::{constant, neg_sign, zero};
    use crate::solver::{solve_inclusion, SolverOptions};

    #[test]
    fn residuals_of_zero_field() {
        let m = build_interval_mesh(-1.0, 1.0, 16).unwrap();
        let u = Field::zeros(&m);
        let opts = ResidualOptions::for_mesh(&m);
        let r = inclusion_residual(&m, &u, &neg_sign(), &opts).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let r = inclusion_residual(&m, &u, &constant(1.0), &opts).unwrap();
        for i in 0..m.node_count() {
            assert_eq!(r[i], if m.is_boundary(i) { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn residual_of_converged_constant_run() {
        let m = build_interval_mesh(-1.0, 1.0, 256).unwrap();
        let r = solve_inclusion(&m, &constant(1.0), &SolverOptions::default()).unwrap();
        let opts = ResidualOptions {
            margin: 1e-12,
            ..ResidualOptions::for_mesh(&m)
        };
        let res = inclusion_residual(&m, &r.u, &constant(1.0), &opts).unwrap();
        assert!(res.iter().all(|&v| v <= 1e-2));
    }

    #[test]
    fn vi_slack_examples() {
        let m = build_interval_mesh(-1.0, 1.0, 64).unwrap();
        let u = Field::zeros(&m);
        let zeta = vec![1.0; m.node_count()];
        // S(u) = 0 enters through the suite, so min S <= 0
        assert!(variational_inequality_check(&m, &u, &zeta, 0, 0).unwrap() <= 0.0);
        // S(-t cone) = 2 (1 - √(1 - t²)) - t < 0 for small t
        let t = 0.3;
        let w = Field::from_fn(&m, |x| -t * (1.0 - x[0].abs()));
        let psi_w = energy::psi(&m, &w).unwrap().value();
        let s = psi_w + energy::lumped_inner(&m, &zeta, w.values());
        assert!((s - (2.0 * (1.0 - (1.0 - t * t).sqrt()) - t)).abs() < 1e-3);
        assert!(variational_inequality_check(&m, &u, &zeta, 50, 1).unwrap() < -0.1);
    }

    #[test]
    fn radial_formula() {
        let u = analytic_radial(1.0, 1.0, 1);
        assert!((u.value(0.0) - (1.0 - 2.0f64.sqrt())).abs() < 1e-15);
        assert!((u.derivative(1.0) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(u.value(1.0), 0.0);
        let v = analytic_radial(2.0, 1.0, 2);
        for r in [0.0, 0.3, 0.77, 1.0] {
            assert!((v.value(r) - ((1.0 + r * r).sqrt() - 2.0f64.sqrt())).abs() < 1e-15);
        }
        for (a, r, n) in [(-3.0, 2.0, 3), (0.5, 0.1, 2), (7.0, 1.5, 1)] {
            assert!(analytic_radial(a, r, n).value(r).abs() < 1e-14);
        }
        assert_eq!(analytic_radial(0.0, 1.0, 2).value(0.3), 0.0);
    }

    #[test]
    fn radial_ode_residual_by_finite_differences() {
        // (r^{N-1} u' / √(1 - u'²))' = a r^{N-1}, checked with central
        // differences of a numerically differentiated u
        for (a, radius, n) in [
            (1.0, 1.0, 1usize),
            (2.0, 1.0, 2),
            (-1.5, 2.0, 3),
            (4.0, 0.7, 2),
        ] {
            let sol = analytic_radial(a, radius, n);
            let du = |r: f64| {
                let h = 1e-5;
                (sol.value(r + h) - sol.value(r - h)) / (2.0 * h)
            };
            let flux = |r: f64| {
                let d = du(r);
                r.powi(n as i32 - 1) * d / (1.0 - d * d).sqrt()
            };
            for k in 1..40 {
                let r = radius * k as f64 / 40.0;
                let h = 1e-3;
                let lhs = (flux(r + h) - flux(r - h)) / (2.0 * h);
                let rhs = a * r.powi(n as i32 - 1);
                assert!(
                    (lhs - rhs).abs() < 1e-5 * (1.0 + rhs.abs()),
                    "a={a} n={n} r={r}"
                );
                assert!(du(r).abs() < 1.0);
            }
        }
    }

    #[test]
    fn brute_force_examples() {
        let m = build_interval_mesh(-1.0, 1.0, 4).unwrap();
        let r = brute_force_minimize(&m, &zero(), 0.05).unwrap();
        assert_eq!(r.energy, 0.0);
        assert!(r.field.values().iter().all(|&v| v == 0.0));
        let r = brute_force_minimize(&m, &constant(1.0), 0.05).unwrap();
        assert!(r.field.values().iter().all(|&v| v <= 0.0));
        assert!(r.energy < 0.0);
        let too_big = build_interval_mesh(-1.0, 1.0, 6).unwrap();
        assert!(matches!(
            brute_force_minimize(&too_big, &zero(), 0.1),
            Err(VerifyError::TooManyNodes(5))
        ));
        assert!(brute_force_minimize(&m, &zero(), 0.0).is_err());
    }

    #[test]
    fn brute_force_beats_sampled_fields() {
        let m = build_interval_mesh(-1.0, 1.0, 4).unwrap();
        let spec = neg_sign();
        let bf = brute_force_minimize(&m, &spec, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let w = random_trial_field(&m, &mut rng);
            let e = energy::total_energy(&m, &w, &spec).unwrap().value();
            // grid points near w are feasible up to the grid resolution
            assert!(bf.energy <= e + 0.05);
        }
    }

    #[test]
    fn trial_fields_are_feasible() {
        let m = build_disk_mesh(1.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let w = random_trial_field(&m, &mut rng);
            assert!(w.is_dirichlet_zero(&m));
            assert!(m.max_gradient_norm(w.values()) <= 0.9 + 1e-12);
        }
        let c = scaled_cone(&m);
        assert!((m.max_gradient_norm(c.values()) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_flat() {
        let m = build_interval_mesh(-1.0, 1.0, 8).unwrap();
        let u = Field::zeros(&m);
        let zeta = vec![0.0; m.node_count()];
        let rep = verify_solution(&m, &u, &zeta, &zero(), &VerifyConfig::for_mesh(&m)).unwrap();
        assert!(rep.passed());
        let text = rep.to_key_value();
        assert!(text.contains("passed = true"));
        assert!(text.contains("analytic_passed = skipped"));
    }
}
