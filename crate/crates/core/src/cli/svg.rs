//! Plain-text SVG plots of a solution.
//!
//! 1D meshes give a polyline of `u(x)` with dashed guides at the jump
//! levels; 2D meshes give two panels of colored triangles, one for `u` and
//! one for `ζ`.

use std::fmt::Write as _;

use crate::mesh::{Field, Mesh};
use crate::nonlinearity::NonlinearitySpec;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const PAD: f64 = 40.0;

/// Returns `None` for meshes of dimension 3 or more.
pub fn solution_svg(
    mesh: &Mesh,
    u: &Field,
    zeta: &[f64],
    spec: &NonlinearitySpec,
) -> Option<String> {
    match mesh.dim() {
        1 => Some(plot_1d(mesh, u, spec)),
        2 => Some(plot_2d(mesh, u, zeta)),
        _ => None,
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !(lo.is_finite() && hi.is_finite()) {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

fn plot_1d(mesh: &Mesh, u: &Field, spec: &NonlinearitySpec) -> String {
    let mut order: Vec<usize> = (0..mesh.node_count()).collect();
    order.sort_by(|&a, &b| mesh.node(a)[0].total_cmp(&mesh.node(b)[0]));
    let xs: Vec<f64> = order.iter().map(|&i| mesh.node(i)[0]).collect();
    let levels: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| spec.jump_levels(mesh.node(i)))
        .collect();
    let (x0, x1) = range(xs.iter().copied());
    let (y0, y1) = range(u.values().iter().copied());
    // show a level only when it falls near the plotted range
    let margin = 0.25 * (y1 - y0);
    let (y0, y1) = (y0 - 0.05 * (y1 - y0), y1 + 0.05 * (y1 - y0));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * PAD);
    let sy = |y: f64| HEIGHT - PAD - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * PAD);

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    );
    let n_levels = levels.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..n_levels {
        let pts: Vec<String> = xs
            .iter()
            .zip(&levels)
            .filter_map(|(&x, l)| l.get(k).map(|&v| (x, v)))
            .filter(|&(_, v)| v >= y0 - margin && v <= y1 + margin)
            .map(|(x, v)| format!("{:.3},{:.3}", sx(x), sy(v.clamp(y0, y1))))
            .collect();
        if pts.len() > 1 {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="gray" stroke-dasharray="6,4"/>"#,
                pts.join(" ")
            );
        }
    }
    let pts: Vec<String> = order
        .iter()
        .map(|&i| format!("{:.3},{:.3}", sx(mesh.node(i)[0]), sy(u.values()[i])))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{}" font-size="12">x in [{x0:.4}, {x1:.4}]</text>"#,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="24" font-size="12">u in [{:.4e}, {:.4e}]</text>"#,
        u.values().iter().copied().fold(f64::INFINITY, f64::min),
        u.values().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    );
    out.push_str("</svg>\n");
    out
}

/// Blue (low) through white to red (high).
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let s = t / 0.5;
        (40.0 + 215.0 * s, 80.0 + 175.0 * s, 200.0 + 55.0 * s)
    } else {
        let s = (t - 0.5) / 0.5;
        (255.0 - 35.0 * s, 255.0 - 200.0 * s, 255.0 - 215.0 * s)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

fn panel(out: &mut String, mesh: &Mesh, values: &[f64], left: f64, title: &str) {
    let side = HEIGHT - 2.0 * PAD;
    let (bx0, bx1) = range(mesh.nodes().map(|x| x[0]));
    let (by0, by1) = range(mesh.nodes().map(|x| x[1]));
    let scale = side / (bx1 - bx0).max(by1 - by0);
    let px = |x: f64| left + (x - bx0) * scale;
    let py = |y: f64| HEIGHT - PAD - (y - by0) * scale;
    let (v0, v1) = range(values.iter().copied());
    for e in 0..mesh.element_count() {
        let el = mesh.element(e);
        let mean = el.iter().map(|&i| values[i]).sum::<f64>() / el.len() as f64;
        let pts: Vec<String> = el
            .iter()
            .map(|&i| format!("{:.3},{:.3}", px(mesh.node(i)[0]), py(mesh.node(i)[1])))
            .collect();
        let c = color((mean - v0) / (v1 - v0));
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{c}" stroke="{c}" stroke-width="0.3"/>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{left}" y="24" font-size="12">{title} in [{v0:.4e}, {v1:.4e}]</text>"#
    );
}

fn plot_2d(mesh: &Mesh, u: &Field, zeta: &[f64]) -> String {
    let w = 2.0 * (HEIGHT - PAD) + PAD;
    let mut out = String::new();
    header(&mut out, w, HEIGHT);
    panel(&mut out, mesh, u.values(), PAD, "u");
    panel(&mut out, mesh, zeta, HEIGHT, "zeta");
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, build_interval_mesh};
    use crate::nonlinearity::{neg_sign, zero};

    #[test]
    fn one_dimensional_plot_has_level_guide() {
        let m = build_interval_mesh(-1.0, 1.0, 8).unwrap();
        let u = Field::from_fn(&m, |x| 0.3 * (1.0 - x[0] * x[0]));
        let svg = solution_svg(&m, &u, &[0.0; 9], &neg_sign()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        let svg = solution_svg(&m, &u, &[0.0; 9], &zero()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn two_dimensional_plot_has_two_panels() {
        let m = build_disk_mesh(1.0, 1).unwrap();
        let u = Field::zeros(&m);
        let svg = solution_svg(&m, &u, &vec![1.0; m.node_count()], &zero()).unwrap();
        assert_eq!(svg.matches("<polygon").count(), 2 * m.element_count());
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(color(0.0), "#2850c8");
        assert_eq!(color(0.5), "#ffffff");
        assert_eq!(color(1.0), "#dc3728");
    }
}
