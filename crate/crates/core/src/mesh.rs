//! Simplicial P1 meshes, nodal fields and the discrete bound on `‖v‖∞` over
//! the gradient-constrained set.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh parameters: {0}")]
    InvalidParameters(String),
    #[error("element {element} has nonpositive measure {measure:e}")]
    DegenerateElement { element: usize, measure: f64 },
    #[error("element {element} references node {node}, but the mesh has {count} nodes")]
    NodeOutOfRange {
        element: usize,
        node: usize,
        count: usize,
    },
    #[error("boundary references node {node}, but the mesh has {count} nodes")]
    BoundaryOutOfRange { node: usize, count: usize },
    #[error("element index {index} out of range ({count} elements)")]
    ElementOutOfRange { index: usize, count: usize },
    #[error("field has {found} values, mesh has {expected} nodes")]
    FieldSize { expected: usize, found: usize },
    #[error("mesh file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh file: {0}")]
    Io(#[from] std::io::Error),
}

/// Simplicial mesh of a bounded domain with marked boundary nodes.
///
/// Element measures, lumped node weights and the gradients of the
/// barycentric basis functions are computed once at construction.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    elements: Vec<Vec<usize>>,
    boundary_nodes: Vec<usize>,
    on_boundary: Vec<bool>,
    element_measure: Vec<f64>,
    node_weight: Vec<f64>,
    // per element, per local vertex: gradient of the hat function (length dim)
    basis_grads: Vec<Vec<f64>>,
    h: f64,
}

impl Mesh {
    /// Builds a mesh from flat node coordinates (stride `dim`), simplices and
    /// boundary node indices.
    pub fn new(
        dim: usize,
        coords: Vec<f64>,
        elements: Vec<Vec<usize>>,
        boundary: Vec<usize>,
    ) -> Result<Self, MeshError> {
        if !(1..=3).contains(&dim) {
            return Err(MeshError::InvalidParameters(format!(
                "dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if coords.len() % dim != 0 {
            return Err(MeshError::InvalidParameters(format!(
                "{} coordinates do not split into {dim}-tuples",
                coords.len()
            )));
        }
        let count = coords.len() / dim;
        if elements.is_empty() {
            return Err(MeshError::InvalidParameters("mesh has no elements".into()));
        }
        for (e, el) in elements.iter().enumerate() {
            if el.len() != dim + 1 {
                return Err(MeshError::InvalidParameters(format!(
                    "element {e} has {} vertices, expected {}",
                    el.len(),
                    dim + 1
                )));
            }
            if let Some(&node) = el.iter().find(|&&n| n >= count) {
                return Err(MeshError::NodeOutOfRange {
                    element: e,
                    node,
                    count,
                });
            }
        }
        let mut on_boundary = vec![false; count];
        for &b in &boundary {
            if b >= count {
                return Err(MeshError::BoundaryOutOfRange { node: b, count });
            }
            on_boundary[b] = true;
        }
        let boundary_nodes: Vec<usize> = (0..count).filter(|&i| on_boundary[i]).collect();
        if dim == 1 && boundary_nodes.len() != 2 {
            return Err(MeshError::InvalidParameters(format!(
                "a 1D mesh needs exactly two boundary nodes, got {}",
                boundary_nodes.len()
            )));
        }

        let mut element_measure = Vec::with_capacity(elements.len());
        let mut basis_grads = Vec::with_capacity(elements.len());
        let mut node_weight = vec![0.0; count];
        let mut h: f64 = 0.0;
        let point = |i: usize| &coords[i * dim..(i + 1) * dim];
        for (e, el) in elements.iter().enumerate() {
            let (measure, grads) = simplex_geometry(dim, el, &point);
            if !(measure > 0.0) || !measure.is_finite() {
                return Err(MeshError::DegenerateElement {
                    element: e,
                    measure,
                });
            }
            for &n in el {
                node_weight[n] += measure / (dim + 1) as f64;
            }
            for a in 0..el.len() {
                for b in a + 1..el.len() {
                    let d: f64 = point(el[a])
                        .iter()
                        .zip(point(el[b]))
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum();
                    h = h.max(d.sqrt());
                }
            }
            element_measure.push(measure);
            basis_grads.push(grads);
        }

        Ok(Self {
            dim,
            coords,
            elements,
            boundary_nodes,
            on_boundary,
            element_measure,
            node_weight,
            basis_grads,
            h,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.on_boundary.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks(self.dim)
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e]
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.on_boundary[i]
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(|&i| !self.on_boundary[i])
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        self.element_measure[e]
    }

    pub fn element_measures(&self) -> &[f64] {
        &self.element_measure
    }

    pub fn node_weight(&self, i: usize) -> f64 {
        self.node_weight[i]
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weight
    }

    /// Gradient of the hat function of local vertex `local` on element `e`.
    pub fn basis_gradient(&self, e: usize, local: usize) -> &[f64] {
        &self.basis_grads[e][local * self.dim..(local + 1) * self.dim]
    }

    pub fn volume(&self) -> f64 {
        self.element_measure.iter().sum()
    }

    /// Longest element edge.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Constant gradient of the P1 interpolant of `field` on element `e`.
    pub fn element_gradient(&self, field: &Field, e: usize) -> Result<Vec<f64>, MeshError> {
        self.check_field(field)?;
        if e >= self.elements.len() {
            return Err(MeshError::ElementOutOfRange {
                index: e,
                count: self.elements.len(),
            });
        }
        let mut g = vec![0.0; self.dim];
        self.gradient_into(field.values(), e, &mut g);
        Ok(g)
    }

    /// Unchecked gradient kernel over raw nodal values.
    pub(crate) fn gradient_into(&self, values: &[f64], e: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (local, &n) in self.elements[e].iter().enumerate() {
            let v = values[n];
            for (o, d) in out.iter_mut().zip(self.basis_gradient(e, local)) {
                *o += v * d;
            }
        }
    }

    /// Euclidean norm of the element gradient, unchecked.
    pub(crate) fn gradient_norm(&self, values: &[f64], e: usize) -> f64 {
        let mut buf = [0.0; 3];
        let g = &mut buf[..self.dim];
        self.gradient_into(values, e, g);
        g.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest element gradient norm of `values`.
    pub fn max_gradient_norm(&self, values: &[f64]) -> f64 {
        (0..self.elements.len())
            .map(|e| self.gradient_norm(values, e))
            .fold(0.0, f64::max)
    }

    /// Largest distance from an interior node to its nearest boundary node.
    ///
    /// Any field with zero boundary values and element gradients of norm at
    /// most one satisfies `|v(x_i)| <= dist(x_i, boundary)`, so this bounds
    /// `‖v‖∞` over the discrete feasible set up to one mesh size.
    pub fn inradius(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in self.interior_nodes() {
            let p = self.node(i);
            let nearest = self
                .boundary_nodes
                .iter()
                .map(|&b| {
                    self.node(b)
                        .iter()
                        .zip(p)
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            if nearest.is_finite() {
                best = best.max(nearest.sqrt());
            }
        }
        best
    }

    pub fn check_field(&self, field: &Field) -> Result<(), MeshError> {
        if field.len() != self.node_count() {
            return Err(MeshError::FieldSize {
                expected: self.node_count(),
                found: field.len(),
            });
        }
        Ok(())
    }

    /// Nodes sharing an element with each node, including the node itself.
    pub fn node_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.node_count()];
        for el in &self.elements {
            for &a in el {
                nbrs[a].extend_from_slice(el);
            }
        }
        for list in &mut nbrs {
            list.sort_unstable();
            list.dedup();
        }
        nbrs
    }

    /// Serializes to the plain-text mesh format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "nodes {}", self.node_count());
        for p in self.nodes() {
            let line: Vec<String> = p.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        let _ = writeln!(out, "elements {}", self.elements.len());
        for el in &self.elements {
            let line: Vec<String> = el.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        let _ = writeln!(out, "boundary");
        let line: Vec<String> = self.boundary_nodes.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = LineReader::new(text);
        let dim = lines.header("dim")?;
        if !(1..=3).contains(&dim) {
            return Err(lines.error(format!("unsupported dimension {dim}")));
        }
        let node_count = lines.header("nodes")?;
        let mut coords = Vec::with_capacity(node_count * dim);
        for _ in 0..node_count {
            let row = lines.row::<f64>("node coordinates")?;
            if row.len() != dim {
                return Err(lines.error(format!("expected {dim} coordinates, found {}", row.len())));
            }
            coords.extend(row);
        }
        let element_count = lines.header("elements")?;
        let element_line = lines.last;
        let mut elements = Vec::with_capacity(element_count);
        for _ in 0..element_count {
            let row = lines.row::<usize>("element indices")?;
            if row.len() != dim + 1 {
                return Err(lines.error(format!(
                    "expected {} indices, found {}",
                    dim + 1,
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&i| i >= node_count) {
                return Err(lines.error(format!(
                    "node index {bad} out of range ({node_count} nodes)"
                )));
            }
            elements.push(row);
        }
        let keyword = lines.next_line("`boundary`")?;
        if keyword != "boundary" {
            return Err(lines.error(format!("expected `boundary`, found `{keyword}`")));
        }
        let boundary = if lines.at_end() {
            Vec::new()
        } else {
            let row = lines.row::<usize>("boundary indices")?;
            if let Some(&bad) = row.iter().find(|&&i| i >= node_count) {
                return Err(lines.error(format!(
                    "boundary index {bad} out of range ({node_count} nodes)"
                )));
            }
            row
        };
        Self::new(dim, coords, elements, boundary).map_err(|e| MeshError::Parse {
            line: element_line,
            message: e.to_string(),
        })
    }
}

/// Nonblank, comment-stripped lines with 1-based numbering.
struct LineReader<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Self {
            lines: it.peekable(),
            last: 0,
        }
    }

    fn error(&self, message: String) -> MeshError {
        MeshError::Parse {
            line: self.last.max(1),
            message,
        }
    }

    fn at_end(&mut self) -> bool {
        self.lines.peek().is_none()
    }

    fn next_line(&mut self, what: &str) -> Result<&'a str, MeshError> {
        match self.lines.next() {
            Some((line, text)) => {
                self.last = line;
                Ok(text)
            }
            None => {
                self.last += 1;
                Err(self.error(format!("unexpected end of file, expected {what}")))
            }
        }
    }

    fn header(&mut self, key: &str) -> Result<usize, MeshError> {
        let text = self.next_line(&format!("`{key}`"))?;
        let mut parts = text.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => v
                .parse()
                .map_err(|_| self.error(format!("invalid count `{v}` for `{key}`"))),
            _ => Err(self.error(format!("expected `{key} <count>`, found `{text}`"))),
        }
    }

    fn row<T: std::str::FromStr>(&mut self, what: &str) -> Result<Vec<T>, MeshError> {
        let text = self.next_line(what)?;
        parse_row(self.last, text)
    }
}

fn parse_row<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>, MeshError> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse().map_err(|_| MeshError::Parse {
                line,
                message: format!("cannot parse `{tok}`"),
            })
        })
        .collect()
}

/// Measure and hat-function gradients of one simplex.
fn simplex_geometry<'a>(
    dim: usize,
    el: &[usize],
    point: &impl Fn(usize) -> &'a [f64],
) -> (f64, Vec<f64>) {
    // jac[r][c] = x_{c+1}[r] - x_0[r]
    let x0 = point(el[0]);
    let mut jac = [[0.0f64; 3]; 3];
    for c in 0..dim {
        let xc = point(el[c + 1]);
        for r in 0..dim {
            jac[r][c] = xc[r] - x0[r];
        }
    }
    let det = match dim {
        1 => jac[0][0],
        2 => jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0],
        _ => {
            jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0])
        }
    };
    let factorial = [1.0, 1.0, 2.0, 6.0][dim];
    let measure = det.abs() / factorial;
    if det == 0.0 || !det.is_finite() {
        return (0.0, vec![0.0; dim * (dim + 1)]);
    }
    // rows of jac^{-1} are the gradients of barycentric coordinates 1..=dim
    let inv = invert(dim, &jac, det);
    let mut grads = vec![0.0; dim * (dim + 1)];
    for k in 0..dim {
        for r in 0..dim {
            grads[(k + 1) * dim + r] = inv[k][r];
            grads[r] -= inv[k][r];
        }
    }
    (measure, grads)
}

fn invert(dim: usize, m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let mut inv = [[0.0; 3]; 3];
    match dim {
        1 => inv[0][0] = 1.0 / det,
        2 => {
            inv[0][0] = m[1][1] / det;
            inv[0][1] = -m[0][1] / det;
            inv[1][0] = -m[1][0] / det;
            inv[1][1] = m[0][0] / det;
        }
        _ => {
            for r in 0..3 {
                for c in 0..3 {
                    // cofactor of (c, r), transposed
                    let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
                    let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
                    inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
                }
            }
        }
    }
    inv
}

/// Uniform mesh of `[a, b]` with `n` elements.
pub fn build_interval_mesh(a: f64, b: f64, n: usize) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidParameters(
            "interval mesh needs at least one element".into(),
        ));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(MeshError::InvalidParameters(format!(
            "interval endpoints must satisfy a < b, got ({a}, {b})"
        )));
    }
    let coords: Vec<f64> = (0..=n)
        .map(|i| {
            if i == n {
                b
            } else {
                a + (b - a) * i as f64 / n as f64
            }
        })
        .collect();
    let elements = (0..n).map(|i| vec![i, i + 1]).collect();
    Mesh::new(1, coords, elements, vec![0, n])
}

/// Rectangle `[0, lx] x [0, ly]` on an `nx` by `ny` grid, each cell split
/// into two triangles along its lower-left to upper-right diagonal.
pub fn build_rectangle_mesh(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh, MeshError> {
    if !(lx > 0.0 && ly > 0.0) || nx == 0 || ny == 0 {
        return Err(MeshError::InvalidParameters(format!(
            "rectangle needs positive sides and counts, got ({lx}, {ly}, {nx}, {ny})"
        )));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut coords = Vec::with_capacity(2 * (nx + 1) * (ny + 1));
    let mut boundary = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx {
                lx
            } else {
                lx * i as f64 / nx as f64
            };
            let y = if j == ny {
                ly
            } else {
                ly * j as f64 / ny as f64
            };
            coords.push(x);
            coords.push(y);
            if i == 0 || j == 0 || i == nx || j == ny {
                boundary.push(id(i, j));
            }
        }
    }
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            elements.push(vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::new(2, coords, elements, boundary)
}

/// Disk of the given radius: a hexagon fan refined `refinement` times by
/// edge bisection, with every new boundary midpoint pushed onto the circle.
pub fn build_disk_mesh(radius: f64, refinement: usize) -> Result<Mesh, MeshError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(MeshError::InvalidParameters(format!(
            "disk radius must be positive, got {radius}"
        )));
    }
    let mut points: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    for k in 0..6 {
        let t = std::f64::consts::PI * k as f64 / 3.0;
        points.push([radius * t.cos(), radius * t.sin()]);
    }
    let mut tris: Vec<[usize; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();

    for _ in 0..refinement {
        let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &tris {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edge_use.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, points: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (p, q) = (points[a], points[b]);
                let mut m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
                if edge_use[&key] == 1 {
                    let r = m[0].hypot(m[1]);
                    m = [m[0] * radius / r, m[1] * radius / r];
                }
                points.push(m);
                points.len() - 1
            })
        };
        let mut next = Vec::with_capacity(4 * tris.len());
        for t in &tris {
            let ab = mid(t[0], t[1], &mut points);
            let bc = mid(t[1], t[2], &mut points);
            let ca = mid(t[2], t[0], &mut points);
            next.push([t[0], ab, ca]);
            next.push([ab, t[1], bc]);
            next.push([ca, bc, t[2]]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }

    let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *edge_use.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut boundary: Vec<usize> = edge_use
        .iter()
        .filter(|(_, &c)| c == 1)
        .flat_map(|(&(a, b), _)| [a, b])
        .collect();
    boundary.sort_unstable();
    boundary.dedup();

    let coords = points.iter().flat_map(|p| p.iter().copied()).collect();
    let elements = tris.iter().map(|t| t.to_vec()).collect();
    Mesh::new(2, coords, elements, boundary)
}

/// Nodal values of a P1 function on some mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            values: vec![0.0; mesh.node_count()],
        }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(&[f64]) -> f64) -> Self {
        Self {
            values: mesh.nodes().map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True when every boundary node carries exactly zero.
    pub fn is_dirichlet_zero(&self, mesh: &Mesh) -> bool {
        mesh.boundary_nodes().iter().all(|&b| self.values[b] == 0.0)
    }

    pub fn zero_boundary(&mut self, mesh: &Mesh) {
        for &b in mesh.boundary_nodes() {
            self.values[b] = 0.0;
        }
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn linf_distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `self + t * (other - self)`.
    pub fn lerp(&self, other: &Field, t: f64) -> Field {
        Field::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + t * (b - a))
                .collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> Field {
        Field::new(self.values.iter().map(|v| s * v).collect())
    }
}
