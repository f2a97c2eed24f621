//! Solver and verification toolkit for the Dirichlet problem
//!
//! ```text
//! div(∇u / √(1 - |∇u|²)) ∈ [f̲(x, u), f̄(x, u)]  in Ω,   u = 0 on ∂Ω
//! ```
//!
//! where `f` may jump in `u`. Solutions are computed as critical points of
//! `I = Ψ + 𝓕` over P1 fields with element gradients in the closed unit
//! ball, with `Ψ` the relativistic area functional and `𝓕 = ∫ F(x, u)`.

pub mod cli;
pub mod energy;
pub mod linalg;
pub mod mesh;
pub mod nonlinearity;
pub mod solver;
pub mod verify;

pub use energy::{EnergyBounds, ExtendedReal, Feasibility};
pub use mesh::{Field, Mesh};
pub use nonlinearity::{Bracket, NonlinearitySpec, SelectionRule};
pub use solver::{SolveResult, SolverOptions};
