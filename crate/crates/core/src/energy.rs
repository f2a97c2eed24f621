//! Discrete energies on P1 fields: the relativistic area term `Ψ`, the
//! potential `𝓕 = ∫ F(x, v)` with lumped quadrature, their sum, membership
//! in the gradient-constrained set and the a priori energy bounds.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use thiserror::Error;

use crate::mesh::{Field, Mesh, MeshError};
use crate::nonlinearity::{NonlinearityError, NonlinearitySpec};

/// Default strict-feasibility margin for [`psi_gradient`].
pub const DEFAULT_GRADIENT_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("element {element} has gradient norm {norm} beyond 1 - margin ({margin:e})")]
    MarginViolated {
        element: usize,
        norm: f64,
        margin: f64,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
}

/// A real number or `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PlusInfinity,
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    /// The value as `f64`, with `+∞` mapped to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            Self::Finite(v) => *v,
            Self::PlusInfinity => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(*v),
            Self::PlusInfinity => None,
        }
    }
}

impl PartialOrd for ExtendedReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Self::Finite(a), Self::Finite(b)) => a.partial_cmp(b),
            (Self::Finite(_), Self::PlusInfinity) => Some(Ordering::Less),
            (Self::PlusInfinity, Self::Finite(_)) => Some(Ordering::Greater),
            (Self::PlusInfinity, Self::PlusInfinity) => Some(Ordering::Equal),
        }
    }
}

impl Add for ExtendedReal {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (Self::Finite(a), Self::Finite(b)) => Self::Finite(a + b),
            _ => Self::PlusInfinity,
        }
    }
}

impl Add<f64> for ExtendedReal {
    type Output = Self;

    fn add(self, rhs: f64) -> Self {
        self + Self::Finite(rhs)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v}"),
            Self::PlusInfinity => f.write_str("+inf"),
        }
    }
}

/// Membership in the discrete set `{‖∇v‖∞ ≤ 1, v = 0 on ∂Ω}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub in_k0: bool,
    pub max_element_gradient_norm: f64,
    pub boundary_violation: f64,
}

/// `c(Ω)` and the constants bounding `|ζ|`, `|F(x, v)|` and `I` from below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBounds {
    pub c_omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub lower_bound: f64,
}

pub fn feasibility(mesh: &Mesh, field: &Field) -> Result<Feasibility, MeshError> {
    mesh.check_field(field)?;
    let max_norm = mesh.max_gradient_norm(field.values());
    let boundary_violation = mesh
        .boundary_nodes()
        .iter()
        .map(|&b| field.values()[b].abs())
        .fold(0.0, f64::max);
    Ok(Feasibility {
        in_k0: max_norm <= 1.0 && boundary_violation == 0.0,
        max_element_gradient_norm: max_norm,
        boundary_violation,
    })
}

/// `1 - √(1 - t)` for `t = |g|²`, written to avoid cancellation near 0.
#[inline]
pub(crate) fn area_density(t: f64) -> f64 {
    t / (1.0 + (1.0 - t).sqrt())
}

/// Ψ summed over elements without the feasibility test.
pub(crate) fn psi_unchecked(mesh: &Mesh, values: &[f64]) -> f64 {
    let mut g = [0.0; 3];
    let dim = mesh.dim();
    let mut total = 0.0;
    for e in 0..mesh.element_count() {
        mesh.gradient_into(values, e, &mut g[..dim]);
        let t: f64 = g[..dim].iter().map(|x| x * x).sum();
        total += mesh.element_measure(e) * area_density(t);
    }
    total
}

/// `Ψ(v) = Σ_T |T| (1 - √(1 - |∇v|_T|²))` on the feasible set, `+∞` off it.
pub fn psi(mesh: &Mesh, field: &Field) -> Result<ExtendedReal, MeshError> {
    if !feasibility(mesh, field)?.in_k0 {
        return Ok(ExtendedReal::PlusInfinity);
    }
    Ok(ExtendedReal::Finite(psi_unchecked(mesh, field.values())))
}

/// Exact gradient of the discrete Ψ with respect to all nodal values.
///
/// Entries at boundary nodes are included; Dirichlet solves mask them.
pub fn psi_gradient(mesh: &Mesh, field: &Field, margin: f64) -> Result<Vec<f64>, EnergyError> {
    mesh.check_field(field)?;
    let dim = mesh.dim();
    let mut out = vec![0.0; mesh.node_count()];
    let mut g = [0.0; 3];
    for e in 0..mesh.element_count() {
        mesh.gradient_into(field.values(), e, &mut g[..dim]);
        let t: f64 = g[..dim].iter().map(|x| x * x).sum();
        let norm = t.sqrt();
        if !(norm <= 1.0 - margin) {
            return Err(EnergyError::MarginViolated {
                element: e,
                norm,
                margin,
            });
        }
        let scale = mesh.element_measure(e) / (1.0 - t).sqrt();
        for (local, &n) in mesh.element(e).iter().enumerate() {
            let dphi = mesh.basis_gradient(e, local);
            let dot: f64 = g[..dim].iter().zip(dphi).map(|(a, b)| a * b).sum();
            out[n] += scale * dot;
        }
    }
    Ok(out)
}

/// `Σ_i w_i a_i b_i` with the lumped node weights.
pub fn lumped_inner(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.node_weights()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

/// `𝓕(v) ≈ Σ_i w_i F(x_i, v_i)`.
pub fn script_f(mesh: &Mesh, field: &Field, spec: &NonlinearitySpec) -> Result<f64, EnergyError> {
    mesh.check_field(field)?;
    let mut total = 0.0;
    for (i, (x, &v)) in mesh.nodes().zip(field.values()).enumerate() {
        if v != 0.0 {
            total += mesh.node_weight(i) * spec.primitive(x, v)?;
        }
    }
    Ok(total)
}

/// `I = Ψ + 𝓕`, `+∞` off the feasible set.
pub fn total_energy(
    mesh: &Mesh,
    field: &Field,
    spec: &NonlinearitySpec,
) -> Result<ExtendedReal, EnergyError> {
    let p = psi(mesh, field)?;
    if !p.is_finite() {
        return Ok(ExtendedReal::PlusInfinity);
    }
    Ok(p + script_f(mesh, field, spec)?)
}

/// `C₁ = C (1 + c^(q-1))`, `C₂ = C (c + c^q / q)` and `I ≥ -C₂ vol(Ω)`.
pub fn bounds(mesh: &Mesh, spec: &NonlinearitySpec) -> EnergyBounds {
    let c_omega = mesh.inradius();
    let (c, q) = (spec.growth_c(), spec.growth_q());
    let c1 = c * (1.0 + c_omega.powf(q - 1.0));
    let c2 = c * (c_omega + c_omega.powf(q) / q);
    EnergyBounds {
        c_omega,
        c1,
        c2,
        lower_bound: -c2 * mesh.volume(),
    }
}
