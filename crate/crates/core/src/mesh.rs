//! Polygonal meshes: generation, POLYMESH I/O and validation.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate domain [{x0}, {x1}] x [{y0}, {y1}]")]
    DegenerateDomain { x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("grid must have at least one cell per direction (got {nx} x {ny})")]
    EmptyGrid { nx: usize, ny: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("element {element}: {reason}")]
    InvalidElement { element: usize, reason: String },
    #[error("face {face}: {reason}")]
    InvalidFace { face: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Element {
    /// Counterclockwise vertex loop.
    pub vertex_ids: Vec<usize>,
    /// Faces sorted by global index.
    pub face_ids: Vec<usize>,
    pub centroid: Point,
    pub diameter: f64,
    pub measure: f64,
}

#[derive(Debug, Clone)]
pub struct Face {
    pub vertex_ids: [usize; 2],
    /// Lower-indexed element first; the second is absent on the boundary.
    pub elements: (usize, Option<usize>),
    /// Unit normal pointing out of `elements.0`.
    pub normal: Point,
    pub midpoint: Point,
    pub diameter: f64,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.elements.1.is_none()
    }

    /// Unit tangent, the normal rotated counterclockwise by a quarter turn.
    pub fn tangent(&self) -> Point {
        [-self.normal[1], self.normal[0]]
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub vertices: Vec<Point>,
    pub elements: Vec<Element>,
    pub faces: Vec<Face>,
    pub h: f64,
}

impl Mesh {
    /// Builds a mesh from counterclockwise vertex loops, inferring and deduplicating faces.
    pub fn from_polygons(vertices: Vec<Point>, loops: Vec<Vec<usize>>) -> Result<Mesh, MeshError> {
        let mut faces: Vec<Face> = Vec::new();
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut elements = Vec::with_capacity(loops.len());
        for (t, lp) in loops.into_iter().enumerate() {
            if lp.len() < 3 {
                return Err(MeshError::InvalidElement { element: t, reason: format!("{} vertices", lp.len()) });
            }
            for &v in &lp {
                if v >= vertices.len() {
                    return Err(MeshError::InvalidElement { element: t, reason: format!("vertex index {v} out of range") });
                }
            }
            if let Some(reason) = simplicity_violation(&vertices, &lp) {
                return Err(MeshError::InvalidElement { element: t, reason });
            }
            let area = signed_area(&vertices, &lp);
            if area <= 0.0 {
                return Err(MeshError::InvalidElement {
                    element: t,
                    reason: format!("vertex loop is not counterclockwise (signed area {area:e})"),
                });
            }
            let m = lp.len();
            let mut face_ids = Vec::with_capacity(m);
            for i in 0..m {
                let a = lp[i];
                let b = lp[(i + 1) % m];
                let key = (a.min(b), a.max(b));
                let fid = match lookup.get(&key) {
                    Some(&fid) => {
                        let face = &mut faces[fid];
                        if face.elements.1.is_some() || face.elements.0 == t {
                            return Err(MeshError::InvalidFace {
                                face: fid,
                                reason: "edge shared by more than two elements".into(),
                            });
                        }
                        if face.vertex_ids != [b, a] {
                            return Err(MeshError::InvalidElement {
                                element: t,
                                reason: format!("inconsistent orientation along edge ({a}, {b})"),
                            });
                        }
                        face.elements.1 = Some(t);
                        fid
                    }
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let d = [pb[0] - pa[0], pb[1] - pa[1]];
                        let len = d[0].hypot(d[1]);
                        if len <= 0.0 {
                            return Err(MeshError::InvalidElement { element: t, reason: "zero-length edge".into() });
                        }
                        faces.push(Face {
                            vertex_ids: [a, b],
                            elements: (t, None),
                            normal: [d[1] / len, -d[0] / len],
                            midpoint: [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])],
                            diameter: len,
                        });
                        lookup.insert(key, faces.len() - 1);
                        faces.len() - 1
                    }
                };
                face_ids.push(fid);
            }
            face_ids.sort_unstable();
            let centroid = polygon_centroid(&vertices, &lp);
            let diameter = polygon_diameter(&vertices, &lp);
            elements.push(Element { vertex_ids: lp, face_ids, centroid, diameter, measure: area });
        }
        let h = elements.iter().map(|e| e.diameter).fold(0.0, f64::max);
        Ok(Mesh { dim: 2, vertices, elements, faces, h })
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_boundary_faces(&self) -> usize {
        self.faces.iter().filter(|f| f.is_boundary()).count()
    }

    pub fn num_interior_faces(&self) -> usize {
        self.num_faces() - self.num_boundary_faces()
    }

    /// Outward normal of face `f` relative to element `t`.
    pub fn normal(&self, t: usize, f: usize) -> Point {
        let face = &self.faces[f];
        if face.elements.0 == t {
            face.normal
        } else {
            [-face.normal[0], -face.normal[1]]
        }
    }

    /// +1 if `t` owns face `f` (the face normal points out of `t`), -1 otherwise.
    pub fn orientation(&self, t: usize, f: usize) -> f64 {
        if self.faces[f].elements.0 == t {
            1.0
        } else {
            -1.0
        }
    }

    pub fn perimeter(&self, t: usize) -> f64 {
        self.elements[t].face_ids.iter().map(|&f| self.faces[f].diameter).sum()
    }

    pub fn area(&self) -> f64 {
        self.elements.iter().map(|e| e.measure).sum()
    }

    /// Axis-aligned bounding box `[xmin, xmax, ymin, ymax]` of the vertex set.
    pub fn bounding_box(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for p in &self.vertices {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].max(p[0]);
            b[2] = b[2].min(p[1]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    /// First element whose closed polygon contains `x` (within a relative tolerance).
    pub fn locate(&self, x: Point) -> Option<usize> {
        self.elements.iter().position(|e| {
            let tol = 1e-12 * e.diameter;
            let m = e.vertex_ids.len();
            (0..m).all(|i| {
                let a = self.vertices[e.vertex_ids[i]];
                let b = self.vertices[e.vertex_ids[(i + 1) % m]];
                let cross = (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]);
                cross >= -tol * (b[0] - a[0]).hypot(b[1] - a[1])
            })
        })
    }
}

pub fn build_cartesian(nx: usize, ny: usize, domain: [f64; 4]) -> Result<Mesh, MeshError> {
    let [x0, x1, y0, y1] = domain;
    if !(x1 > x0 && y1 > y0) || !domain.iter().all(|v| v.is_finite()) {
        return Err(MeshError::DegenerateDomain { x0, x1, y0, y1 });
    }
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyGrid { nx, ny });
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { x1 } else { x0 + (x1 - x0) * i as f64 / nx as f64 };
            let y = if j == ny { y1 } else { y0 + (y1 - y0) * j as f64 / ny as f64 };
            vertices.push([x, y]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut loops = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            loops.push(vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }
    Mesh::from_polygons(vertices, loops)
}

pub fn load_polymesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    parse_polymesh(&fs::read_to_string(path)?)
}

pub fn parse_polymesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| MeshError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") })
    };
    let (ln, header) = next("header")?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("POLYMESH") || tok.next() != Some("2") || tok.next().is_some() {
        return Err(MeshError::Parse { line: ln, msg: format!("expected header \"POLYMESH 2\", got {header:?}") });
    }
    let (ln, l) = next("vertex count")?;
    let nv: usize = parse_tok(l, ln)?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = next("vertex")?;
        let v: Vec<f64> = l.split_whitespace().map(|s| parse_tok(s, ln)).collect::<Result<_, _>>()?;
        if v.len() != 2 || !v.iter().all(|c| c.is_finite()) {
            return Err(MeshError::Parse { line: ln, msg: "vertex needs two finite coordinates".into() });
        }
        vertices.push([v[0], v[1]]);
    }
    let (ln, l) = next("element count")?;
    let ne: usize = parse_tok(l, ln)?;
    let mut loops = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, l) = next("element")?;
        let ids: Vec<usize> = l.split_whitespace().map(|s| parse_tok(s, ln)).collect::<Result<_, _>>()?;
        if ids.is_empty() || ids[0] != ids.len() - 1 {
            return Err(MeshError::Parse { line: ln, msg: "element line must be \"m i1 .. im\"".into() });
        }
        loops.push(ids[1..].to_vec());
    }
    if let Some((ln, _)) = lines.next() {
        return Err(MeshError::Parse { line: ln, msg: "trailing content".into() });
    }
    Mesh::from_polygons(vertices, loops)
}

fn parse_tok<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, MeshError> {
    s.trim().parse().map_err(|_| MeshError::Parse { line, msg: format!("cannot parse {s:?}") })
}

pub fn save_polymesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write!(out, "{}", format_polymesh(mesh))?;
    out.flush()?;
    Ok(())
}

/// Coordinates use the shortest round-tripping decimal representation.
pub fn format_polymesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    s.push_str("POLYMESH 2\n");
    s.push_str(&format!("{}\n", mesh.vertices.len()));
    for v in &mesh.vertices {
        s.push_str(&format!("{:?} {:?}\n", v[0], v[1]));
    }
    s.push_str(&format!("{}\n", mesh.elements.len()));
    for e in &mesh.elements {
        s.push_str(&e.vertex_ids.len().to_string());
        for v in &e.vertex_ids {
            s.push_str(&format!(" {v}"));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveMeasure { element: usize, measure: f64 },
    Orientation { element: usize },
    NonSimple { element: usize, reason: String },
    CentroidOutsideHull { element: usize },
    NormalClosure { element: usize, defect: f64 },
    FaceAdjacency { face: usize, reason: String },
    NonUnitNormal { face: usize, norm: f64 },
    NormalDirection { face: usize },
    NonPositiveFace { face: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveMeasure { element, measure } => write!(f, "element {element}: measure {measure:e}"),
            Violation::Orientation { element } => write!(f, "element {element}: clockwise vertex loop"),
            Violation::NonSimple { element, reason } => write!(f, "element {element}: not simple ({reason})"),
            Violation::CentroidOutsideHull { element } => write!(f, "element {element}: centroid outside hull"),
            Violation::NormalClosure { element, defect } => write!(f, "element {element}: sum |F| n = {defect:e}"),
            Violation::FaceAdjacency { face, reason } => write!(f, "face {face}: {reason}"),
            Violation::NonUnitNormal { face, norm } => write!(f, "face {face}: |n| = {norm}"),
            Violation::NormalDirection { face } => write!(f, "face {face}: normal not outward from first element"),
            Violation::NonPositiveFace { face } => write!(f, "face {face}: non-positive length"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeshReport {
    pub violations: Vec<Violation>,
    /// min over elements of min face diameter / element diameter.
    pub regularity: f64,
}

impl MeshReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks all mesh, element and face invariants from the stored data.
pub fn validate(mesh: &Mesh) -> MeshReport {
    let mut violations = Vec::new();
    let mut regularity = f64::INFINITY;
    let mut incidence = vec![0usize; mesh.faces.len()];
    for (t, e) in mesh.elements.iter().enumerate() {
        if let Some(reason) = simplicity_violation(&mesh.vertices, &e.vertex_ids) {
            violations.push(Violation::NonSimple { element: t, reason });
        }
        let area = if e.vertex_ids.len() >= 3 { signed_area(&mesh.vertices, &e.vertex_ids) } else { 0.0 };
        if area < 0.0 {
            violations.push(Violation::Orientation { element: t });
        }
        if e.measure <= 0.0 || area == 0.0 {
            violations.push(Violation::NonPositiveMeasure { element: t, measure: e.measure });
        }
        if !inside_hull(&mesh.vertices, &e.vertex_ids, e.centroid) {
            violations.push(Violation::CentroidOutsideHull { element: t });
        }
        let mut closure = [0.0, 0.0];
        let mut perimeter = 0.0;
        for &f in &e.face_ids {
            let Some(face) = mesh.faces.get(f) else {
                violations.push(Violation::FaceAdjacency { face: f, reason: format!("referenced by element {t} but missing") });
                continue;
            };
            incidence[f] += 1;
            if face.elements.0 != t && face.elements.1 != Some(t) {
                violations.push(Violation::FaceAdjacency { face: f, reason: format!("does not list element {t}") });
            }
            let n = mesh.normal(t, f);
            closure[0] += face.diameter * n[0];
            closure[1] += face.diameter * n[1];
            perimeter += face.diameter;
            if e.diameter > 0.0 {
                regularity = regularity.min(face.diameter / e.diameter);
            }
        }
        let defect = closure[0].hypot(closure[1]);
        if defect > 1e-13 * perimeter {
            violations.push(Violation::NormalClosure { element: t, defect });
        }
    }
    for (fid, face) in mesh.faces.iter().enumerate() {
        let expected = if face.is_boundary() { 1 } else { 2 };
        if incidence[fid] != expected {
            violations.push(Violation::FaceAdjacency {
                face: fid,
                reason: format!("{} incident elements, adjacency lists {expected}", incidence[fid]),
            });
        }
        if let Some(t2) = face.elements.1 {
            if t2 <= face.elements.0 {
                violations.push(Violation::FaceAdjacency { face: fid, reason: "first element is not the lower index".into() });
            }
        }
        let norm = face.normal[0].hypot(face.normal[1]);
        if (norm - 1.0).abs() > 1e-14 {
            violations.push(Violation::NonUnitNormal { face: fid, norm });
        }
        if face.diameter <= 0.0 {
            violations.push(Violation::NonPositiveFace { face: fid });
        }
        if let Some(owner) = mesh.elements.get(face.elements.0) {
            let c = owner.centroid;
            let d = [face.midpoint[0] - c[0], face.midpoint[1] - c[1]];
            if d[0] * face.normal[0] + d[1] * face.normal[1] <= 0.0 {
                violations.push(Violation::NormalDirection { face: fid });
            }
        }
    }
    if !regularity.is_finite() {
        regularity = 0.0;
    }
    MeshReport { violations, regularity }
}

pub fn signed_area(vertices: &[Point], lp: &[usize]) -> f64 {
    let m = lp.len();
    let mut a = 0.0;
    for i in 0..m {
        let p = vertices[lp[i]];
        let q = vertices[lp[(i + 1) % m]];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

/// Area-weighted centroid, computed relative to the first vertex to limit cancellation.
pub fn polygon_centroid(vertices: &[Point], lp: &[usize]) -> Point {
    let o = vertices[lp[0]];
    let m = lp.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let p = vertices[lp[i]];
        let q = vertices[lp[(i + 1) % m]];
        let (px, py) = (p[0] - o[0], p[1] - o[1]);
        let (qx, qy) = (q[0] - o[0], q[1] - o[1]);
        let c = px * qy - qx * py;
        a += c;
        cx += (px + qx) * c;
        cy += (py + qy) * c;
    }
    [o[0] + cx / (3.0 * a), o[1] + cy / (3.0 * a)]
}

pub fn polygon_diameter(vertices: &[Point], lp: &[usize]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, &a) in lp.iter().enumerate() {
        for &b in &lp[i + 1..] {
            let (p, q) = (vertices[a], vertices[b]);
            d = d.max((p[0] - q[0]).hypot(p[1] - q[1]));
        }
    }
    d
}

fn simplicity_violation(vertices: &[Point], lp: &[usize]) -> Option<String> {
    let m = lp.len();
    for i in 0..m {
        for j in i + 1..m {
            if lp[i] == lp[j] || vertices[lp[i]] == vertices[lp[j]] {
                return Some(format!("repeated vertex {} at loop positions {i} and {j}", lp[i]));
            }
        }
    }
    for i in 0..m {
        let (a, b) = (vertices[lp[i]], vertices[lp[(i + 1) % m]]);
        for j in i + 1..m {
            // adjacent edges share a vertex and are skipped
            if j == i + 1 || (i == 0 && j == m - 1) {
                continue;
            }
            let (c, d) = (vertices[lp[j]], vertices[lp[(j + 1) % m]]);
            if segments_intersect(a, b, c, d) {
                return Some(format!("edges {i} and {j} intersect"));
            }
        }
    }
    None
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    let on = |p: Point, q: Point, r: Point| {
        r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on(a, b, c)) || (o2 == 0.0 && on(a, b, d)) || (o3 == 0.0 && on(c, d, a)) || (o4 == 0.0 && on(c, d, b))
}

/// Point-in-convex-hull test by gift wrapping the (few) polygon vertices.
fn inside_hull(vertices: &[Point], lp: &[usize], x: Point) -> bool {
    let mut pts: Vec<Point> = lp.iter().map(|&i| vertices[i]).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    if pts.len() < 3 {
        return false;
    }
    let mut hull: Vec<Point> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let scale = hull.iter().fold(0.0f64, |s, p| s.max(p[0].abs()).max(p[1].abs())).max(1.0);
    let m = hull.len();
    (0..m).all(|i| orient(hull[i], hull[(i + 1) % m], x) >= -1e-14 * scale * scale)
}

/// Regular hexagon of circumradius `r` centred at `c`, as vertices and one CCW loop.
pub fn regular_hexagon(c: Point, r: f64) -> (Vec<Point>, Vec<usize>) {
    let v = (0..6)
        .map(|i| {
            let a = std::f64::consts::PI / 3.0 * i as f64;
            [c[0] + r * a.cos(), c[1] + r * a.sin()]
        })
        .collect();
    (v, (0..6).collect())
}

/// Cartesian grid with interior vertices displaced pseudo-randomly by up to
/// `amplitude` times the cell size. Horizontal edges of even columns carry an
/// extra (displaced) mid-edge vertex, so even columns hold hexagons and odd
/// columns quadrilaterals. Boundary vertices stay on the boundary.
pub fn build_perturbed_polygonal(n: usize, domain: [f64; 4], amplitude: f64, seed: u64) -> Result<Mesh, MeshError> {
    let [x0, x1, y0, y1] = domain;
    if !(x1 > x0 && y1 > y0) {
        return Err(MeshError::DegenerateDomain { x0, x1, y0, y1 });
    }
    if n == 0 {
        return Err(MeshError::EmptyGrid { nx: n, ny: n });
    }
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut rand = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let mut vertices = Vec::new();
    let mut corner = vec![0usize; (n + 1) * (n + 1)];
    for j in 0..=n {
        for i in 0..=n {
            let mut p = [x0 + dx * i as f64, y0 + dy * j as f64];
            if i > 0 && i < n && j > 0 && j < n {
                p[0] += amplitude * dx * rand();
                p[1] += amplitude * dy * rand();
            }
            corner[j * (n + 1) + i] = vertices.len();
            vertices.push(p);
        }
    }
    // mid-edge vertices on horizontal edges of even columns
    let mut mid = HashMap::new();
    for j in 0..=n {
        for i in (0..n).step_by(2) {
            let a = vertices[corner[j * (n + 1) + i]];
            let b = vertices[corner[j * (n + 1) + i + 1]];
            let off = if j > 0 && j < n { 0.3 * amplitude * dy * rand() } else { 0.0 };
            mid.insert((i, j), vertices.len());
            vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]) + off]);
        }
    }
    let mut loops = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let c = |ii: usize, jj: usize| corner[jj * (n + 1) + ii];
            let mut lp = vec![c(i, j)];
            if let Some(&m) = mid.get(&(i, j)) {
                lp.push(m);
            }
            lp.push(c(i + 1, j));
            lp.push(c(i + 1, j + 1));
            if let Some(&m) = mid.get(&(i, j + 1)) {
                lp.push(m);
            }
            lp.push(c(i, j + 1));
            loops.push(lp);
        }
    }
    Mesh::from_polygons(vertices, loops)
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: [f64; 4] = [0.0, 1.0, 0.0, 1.0];

    #[test]
    fn single_cell() {
        let m = build_cartesian(1, 1, UNIT).unwrap();
        assert_eq!(m.num_elements(), 1);
        assert_eq!(m.num_faces(), 4);
        assert_eq!(m.num_boundary_faces(), 4);
    }

    #[test]
    fn kovasznay_grid_diameter() {
        let m = build_cartesian(4, 4, [-0.5, 1.5, 0.0, 2.0]).unwrap();
        assert_eq!(m.num_elements(), 16);
        for e in &m.elements {
            assert!((e.diameter - 0.5 * 2f64.sqrt()).abs() < 1e-15);
        }
        assert!((m.h - 0.5 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn face_count_formula() {
        let m = build_cartesian(128, 128, UNIT).unwrap();
        assert_eq!(m.num_elements(), 16384);
        assert_eq!(m.num_faces(), 2 * 128 * 129);
        assert_eq!(m.num_interior_faces(), 2 * 128 * 127);
    }

    #[test]
    fn degenerate_input_rejected() {
        assert!(matches!(build_cartesian(2, 2, [0.0, 0.0, 0.0, 1.0]), Err(MeshError::DegenerateDomain { .. })));
        assert!(matches!(build_cartesian(0, 2, UNIT), Err(MeshError::EmptyGrid { .. })));
    }

    #[test]
    fn cartesian_report() {
        let r = validate(&build_cartesian(5, 5, UNIT).unwrap());
        assert!(r.is_valid(), "{:?}", r.violations);
        assert!((r.regularity - 1.0 / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn unit_square_file_matches_generator() {
        let m = parse_polymesh("POLYMESH 2\n4\n0 0\n1 0\n0 1\n1 1\n1\n4 0 1 3 2\n").unwrap();
        let c = build_cartesian(1, 1, UNIT).unwrap();
        assert_eq!(m.vertices, c.vertices);
        assert_eq!(m.elements[0].vertex_ids, c.elements[0].vertex_ids);
        assert_eq!(m.elements[0].face_ids, c.elements[0].face_ids);
        for (a, b) in m.faces.iter().zip(&c.faces) {
            assert_eq!(a.vertex_ids, b.vertex_ids);
            assert_eq!(a.normal, b.normal);
        }
    }

    #[test]
    fn hexagon_file() {
        let (v, lp) = regular_hexagon([0.0, 0.0], 1.0);
        let m = Mesh::from_polygons(v, vec![lp]).unwrap();
        let m = parse_polymesh(&format_polymesh(&m)).unwrap();
        assert_eq!(m.num_elements(), 1);
        assert_eq!(m.num_faces(), 6);
        assert!(m.faces.iter().all(|f| f.is_boundary()));
        assert!((m.area() - 1.5 * 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn two_triangles_share_one_face() {
        let m = parse_polymesh("POLYMESH 2\n4\n0 0\n1 0\n1 1\n0 1\n2\n3 0 1 2\n3 0 2 3\n").unwrap();
        assert_eq!(m.num_interior_faces(), 1);
        let f = m.faces.iter().position(|f| !f.is_boundary()).unwrap();
        let (n0, n1) = (m.normal(0, f), m.normal(1, f));
        assert_eq!(n0, [-n1[0], -n1[1]]);
        assert!((n0[0] + 0.5f64.sqrt()).abs() < 1e-15 && (n0[1] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn malformed_files() {
        for (text, line) in [
            ("POLYMESH 3\n", 1),
            ("POLYMESH 2\n1\n0 zero\n", 3),
            ("POLYMESH 2\n3\n0 0\n1 0\n0 1\n1\n4 0 1 2\n", 7),
            ("POLYMESH 2\n3\n0 0\n1 0\n0 1\n1\n3 0 1 2\nextra\n", 8),
        ] {
            match parse_polymesh(text) {
                Err(MeshError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(matches!(parse_polymesh("POLYMESH 2\n2\n0 0\n1 0\n"), Err(MeshError::Parse { .. })));
    }

    #[test]
    fn invalid_loops_name_the_element() {
        // clockwise second element
        let r = parse_polymesh("POLYMESH 2\n4\n0 0\n1 0\n1 1\n0 1\n2\n3 0 1 2\n3 0 3 2\n");
        assert!(matches!(r, Err(MeshError::InvalidElement { element: 1, .. })), "{r:?}");
        // bow tie
        let r = parse_polymesh("POLYMESH 2\n4\n0 0\n1 1\n1 0\n0 1\n1\n4 0 1 2 3\n");
        assert!(matches!(r, Err(MeshError::InvalidElement { element: 0, .. })), "{r:?}");
    }

    #[test]
    fn validation_flags_flipped_and_repeated() {
        let mut m = build_cartesian(2, 2, UNIT).unwrap();
        m.elements[3].vertex_ids.reverse();
        assert!(validate(&m).violations.iter().any(|v| matches!(v, Violation::Orientation { element: 3 })));

        let mut m = build_cartesian(2, 2, UNIT).unwrap();
        let first = m.elements[1].vertex_ids[0];
        m.elements[1].vertex_ids.push(first);
        assert!(validate(&m).violations.iter().any(|v| matches!(v, Violation::NonSimple { element: 1, .. })));
    }

    #[test]
    fn polymesh_round_trip() {
        let m = build_perturbed_polygonal(6, UNIT, 0.2, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.txt");
        save_polymesh(&m, &path).unwrap();
        let back = load_polymesh(&path).unwrap();
        assert_eq!(back.vertices, m.vertices);
        for (a, b) in back.elements.iter().zip(&m.elements) {
            assert_eq!(a.face_ids, b.face_ids);
            assert!((a.measure - b.measure).abs() <= 1e-15);
        }
    }

    #[test]
    fn locate_points() {
        let m = build_cartesian(4, 4, UNIT).unwrap();
        assert_eq!(m.locate([0.1, 0.1]), Some(0));
        assert_eq!(m.locate([0.9, 0.9]), Some(15));
        assert_eq!(m.locate([1.5, 0.5]), None);
    }
}
