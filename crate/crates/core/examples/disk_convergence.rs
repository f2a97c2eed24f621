//! Refinement study for `M(u) = 2` on the unit disk against the closed form
//! `u = √(1 + r²) - √2`.
//!
//! ```text
//! cargo run --release --example disk_convergence
//! ```

use std::time::Instant;

use mcm_core::mesh::build_disk_mesh;
use mcm_core::solver::{solve_prescribed, SolverOptions};
use mcm_core::verify::analytic_radial;

fn main() {
    let exact = analytic_radial(2.0, 1.0, 2);
    let mut prev: Option<f64> = None;
    println!("level,nodes,h,linf_error,ratio,newton_iterations,seconds");
    for level in 1..=6 {
        let mesh = build_disk_mesh(1.0, level).expect("disk mesh");
        let start = Instant::now();
        let rhs = vec![2.0; mesh.node_count()];
        let sol = solve_prescribed(&mesh, &rhs, &SolverOptions::default()).expect("solve");
        let err = exact.linf_error(&mesh, &sol.u);
        let ratio = prev.map_or(String::from("-"), |p| format!("{:.3}", err / p));
        println!(
            "{level},{},{:.5},{err:.4e},{ratio},{},{:.3}",
            mesh.node_count(),
            mesh.h(),
            sol.iterations,
            start.elapsed().as_secs_f64()
        );
        prev = Some(err);
    }
}
