//! Acceptance suite. Runs every criterion, prints one
//! `criterion N: PASS|FAIL ...` line each and exits nonzero if any failed.
//!
//! ```text
//! cargo test --release --test acceptance
//! ```

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcm_core::energy::{bounds, psi, psi_gradient};
use mcm_core::mesh::{build_disk_mesh, build_interval_mesh, build_rectangle_mesh, Field, Mesh};
use mcm_core::nonlinearity::{constant, heaviside, neg_sign, power, step, zero, NonlinearitySpec};
use mcm_core::solver::{solve_inclusion, solve_prescribed, SolveResult, SolverOptions};
use mcm_core::verify::{
    analytic_radial, brute_force_minimize, random_trial_field, variational_inequality_check,
};
use mcm_core::SelectionRule;

struct Verdict {
    criterion: usize,
    pass: bool,
    detail: String,
}

fn verdict(criterion: usize, pass: bool, detail: String) -> Verdict {
    Verdict {
        criterion,
        pass,
        detail,
    }
}

fn neg_sign_energy() -> f64 {
    let l = (1.0 + 2f64.sqrt()).ln();
    2.0 - 2.0 * l - (2f64.sqrt() - l)
}

struct Run {
    label: String,
    mesh: Mesh,
    spec: NonlinearitySpec,
    opts: SolverOptions,
    result: SolveResult,
}

/// Every catalog problem on an interval and a disk, plus the three
/// selection rules for the sign problem.
fn catalog_runs() -> Vec<Run> {
    let specs = || {
        vec![
            zero(),
            constant(1.0),
            constant(-2.0),
            neg_sign(),
            heaviside(),
            step(0.5, -1.0, 0.1),
            step(-1.0, 1.0, 0.0),
            power(1.0, 3.0).unwrap(),
            power(-2.0, 2.5).unwrap(),
        ]
    };
    let meshes = [
        ("interval(64)", build_interval_mesh(-1.0, 1.0, 64).unwrap()),
        ("disk(3)", build_disk_mesh(1.0, 3).unwrap()),
    ];
    let mut runs = Vec::new();
    for (mesh_name, mesh) in &meshes {
        for spec in specs() {
            for rule in [SelectionRule::Lo, SelectionRule::Mid, SelectionRule::Hi] {
                if rule != SelectionRule::Mid && spec.name() != "neg_sign" {
                    continue;
                }
                let opts = SolverOptions {
                    selection_rule: rule,
                    stationarity_trials: 200,
                    ..SolverOptions::default()
                };
                let result = solve_inclusion(mesh, &spec, &opts).unwrap();
                runs.push(Run {
                    label: format!("{}/{}/{rule}", mesh_name, spec.name()),
                    mesh: mesh.clone(),
                    spec: spec.clone(),
                    opts,
                    result,
                });
            }
        }
    }
    runs
}

fn criterion_01_interval_closed_form() -> Verdict {
    let start = Instant::now();
    let m = build_interval_mesh(-1.0, 1.0, 256).unwrap();
    let sol = solve_prescribed(&m, &vec![1.0; m.node_count()], &SolverOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let exact = |x: f64| (1.0 + x * x).sqrt() - 2f64.sqrt();
    let err = m
        .nodes()
        .zip(sol.u.values())
        .map(|(x, v)| (v - exact(x[0])).abs())
        .fold(0.0, f64::max);
    let mid = m.nodes().position(|x| x[0] == 0.0).unwrap();
    let err0 = (sol.u.values()[mid] - (1.0 - 2f64.sqrt())).abs();
    let grad = m.max_gradient_norm(sol.u.values());
    let pass = err <= 5e-4 && err0 <= 5e-4 && grad <= 0.5f64.sqrt() + 1e-3 && secs <= 1.0;
    verdict(
        1,
        pass,
        format!("linf {err:.3e}, |u(0) - (1-√2)| {err0:.3e}, max grad {grad:.6}, {secs:.3}s"),
    )
}

fn criterion_02_disk_closed_form_and_refinement() -> Verdict {
    let exact = analytic_radial(2.0, 1.0, 2);
    let start = Instant::now();
    let mut errors = Vec::new();
    for level in [4, 5] {
        let m = build_disk_mesh(1.0, level).unwrap();
        let sol =
            solve_prescribed(&m, &vec![2.0; m.node_count()], &SolverOptions::default()).unwrap();
        errors.push(exact.linf_error(&m, &sol.u));
    }
    let secs = start.elapsed().as_secs_f64();
    let ratio = errors[1] / errors[0];
    let halves = (0.5 * 0.7..=0.5 * 1.3).contains(&ratio);
    let pass = errors[0] <= 2e-2 && halves && secs <= 30.0;
    verdict(
        2,
        pass,
        format!(
            "linf(4) {:.3e} (<= 2e-2: {}), linf(5) {:.3e}, ratio {ratio:.3} (in [0.35, 0.65]: {halves}), {secs:.2}s",
            errors[0],
            errors[0] <= 2e-2,
            errors[1]
        ),
    )
}

fn criterion_03_sign_inclusion() -> Verdict {
    let m = build_interval_mesh(-1.0, 1.0, 256).unwrap();
    let opts = SolverOptions {
        stationarity_trials: 200,
        ..SolverOptions::default()
    };
    let r = solve_inclusion(&m, &neg_sign(), &opts).unwrap();
    let gap = (r.energy() - neg_sign_energy()).abs();
    let pass = r.converged && r.residual <= 1e-2 && gap <= 2e-3 && r.stationarity <= 1e-6;
    verdict(
        3,
        pass,
        format!(
            "converged {}, residual {:.3e}, energy {:.6} (gap {gap:.2e}), eps {:.2e}",
            r.converged,
            r.residual,
            r.energy(),
            r.stationarity
        ),
    )
}

fn criterion_04_05_09_catalog_suite() -> Vec<Verdict> {
    let runs = catalog_runs();
    let mut bound_violations = Vec::new();
    let mut k0_violations = Vec::new();
    let mut vi_failures = Vec::new();
    let mut converged = 0;
    let mut worst_vi = f64::INFINITY;
    for run in &runs {
        let b = bounds(&run.mesh, &run.spec);
        if run.result.energy_trace.iter().any(|&e| e < b.lower_bound) {
            bound_violations.push(run.label.clone());
        }
        let r = &run.result;
        if r.max_iterate_abs > run.mesh.inradius() + run.mesh.h()
            || r.max_iterate_gradient > 1.0 - run.opts.working_margin
        {
            k0_violations.push(run.label.clone());
        }
        if r.converged {
            converged += 1;
            let s = variational_inequality_check(&run.mesh, &r.u, &r.zeta, 200, 0).unwrap();
            worst_vi = worst_vi.min(s);
            if s < -1e-6 {
                vi_failures.push(format!("{} ({s:.2e})", run.label));
            }
        }
    }
    let n = runs.len();
    let c4 = bound_violations.is_empty();
    let c5 = k0_violations.is_empty();
    let c9 = vi_failures.is_empty() && converged > 0;
    vec![
        verdict(
            4,
            c4,
            format!("energy traces >= -C2 vol on {n} runs, violations {bound_violations:?}"),
        ),
        verdict(
            5,
            c5,
            format!(
                "iterates within inradius + h and gradient margin on {n} runs, violations {k0_violations:?}"
            ),
        ),
        verdict(
            9,
            c9,
            format!(
                "VI min slack {worst_vi:.2e} over {converged}/{n} converged runs, failures {vi_failures:?}"
            ),
        ),
    ]
}

fn criterion_06_brute_force_oracle() -> Verdict {
    let m = build_interval_mesh(-1.0, 1.0, 4).unwrap();
    assert_eq!(m.interior_nodes().count(), 3);
    let r = solve_inclusion(&m, &neg_sign(), &SolverOptions::default()).unwrap();
    let start = Instant::now();
    let bf = brute_force_minimize(&m, &neg_sign(), 0.01).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.energy() <= bf.energy + 1e-3 && secs <= 60.0;
    verdict(
        6,
        pass,
        format!(
            "solver {:.6}, brute force {:.6} over {} configurations in {secs:.2}s",
            r.energy(),
            bf.energy,
            bf.configurations
        ),
    )
}

fn criterion_07_gradient_finite_differences() -> Verdict {
    let m = build_rectangle_mesh(1.0, 1.0, 6, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u = random_trial_field(&m, &mut rng);
        let g = psi_gradient(&m, &u, 1e-9).unwrap();
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..m.node_count() {
            let mut plus = u.clone();
            let mut minus = u.clone();
            plus.values_mut()[i] += step;
            minus.values_mut()[i] -= step;
            let fd =
                (psi(&m, &plus).unwrap().value() - psi(&m, &minus).unwrap().value()) / (2.0 * step);
            // an exactly vanishing component is measured against ‖g‖∞
            let denom = if g[i] != 0.0 { g[i].abs() } else { gmax };
            if denom > 0.0 {
                worst = worst.max((fd - g[i]).abs() / denom);
            }
        }
    }
    verdict(
        7,
        worst <= 1e-6,
        format!("worst componentwise relative error {worst:.2e} over 50 fields"),
    )
}

fn criterion_08_convexity() -> Verdict {
    let m = build_disk_mesh(1.0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let u = random_trial_field(&m, &mut rng);
        let v = random_trial_field(&m, &mut rng);
        let lambda: f64 = rng.gen_range(0.0..1.0);
        let w = v.lerp(&u, lambda);
        let p = |f: &Field| psi(&m, f).unwrap().value();
        let slack = lambda * p(&u) + (1.0 - lambda) * p(&v) - p(&w);
        worst = worst.min(slack);
    }
    verdict(
        8,
        worst >= -1e-12,
        format!("min slack {worst:.3e} over 1000 pairs"),
    )
}

fn criterion_10_heaviside_brackets() -> Verdict {
    let h = heaviside();
    let x = [0.3];
    let at_jump = (h.lower_envelope(&x, 0.0), h.upper_envelope(&x, 0.0));
    let below = (h.lower_envelope(&x, -0.1), h.upper_envelope(&x, -0.1));
    let above = (h.lower_envelope(&x, 0.1), h.upper_envelope(&x, 0.1));
    let pass = at_jump == (0.0, 1.0)
        && below == (h.evaluate(&x, -0.1), h.evaluate(&x, -0.1))
        && above == (h.evaluate(&x, 0.1), h.evaluate(&x, 0.1))
        && below == (0.0, 0.0)
        && above == (1.0, 1.0);
    verdict(
        10,
        pass,
        format!("at 0 {at_jump:?}, at -0.1 {below:?}, at 0.1 {above:?}"),
    )
}

fn main() {
    let start = Instant::now();
    let mut verdicts = vec![
        criterion_01_interval_closed_form(),
        criterion_02_disk_closed_form_and_refinement(),
        criterion_03_sign_inclusion(),
    ];
    verdicts.extend(criterion_04_05_09_catalog_suite());
    verdicts.extend([
        criterion_06_brute_force_oracle(),
        criterion_07_gradient_finite_differences(),
        criterion_08_convexity(),
        criterion_10_heaviside_brackets(),
    ]);
    verdicts.sort_by_key(|v| v.criterion);
    for v in &verdicts {
        println!(
            "criterion {:2}: {} {}",
            v.criterion,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed: Vec<usize> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| v.criterion)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.2}s",
        verdicts.len() - failed.len(),
        verdicts.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
