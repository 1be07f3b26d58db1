//! Convex polytopes of dimension 1 to 3 used as material interpolation domains.
//!
//! Every polytope exposes Wachspress generalized barycentric coordinates (with
//! analytic gradients) and the exact Euclidean projection onto itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points farther than this outside the polytope are rejected by [`Polytope::barycentric`].
pub const INSIDE_TOL: f64 = 1e-12;
/// Points within this distance outside are treated as feasible by [`Polytope::project`].
const PROJECTION_TOL: f64 = 1e-13;
/// Minimal distance to the faces at which 3D coordinates are evaluated.
const NUDGE: f64 = 1e-12;
const GEOMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("vertices are not in convex position: {0}")]
    NonConvexInput(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("point {point:?} lies outside the polytope (distance {distance:e})")]
    PointOutsidePolytope { point: Vec<f64>, distance: f64 },
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Weights and gradients of generalized barycentric coordinates at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricResult {
    pub weights: Vec<f64>,
    /// Row-major `n x dim`: row `i` is the gradient of weight `i`.
    pub gradients: Vec<f64>,
    pub dim: usize,
}

impl BarycentricResult {
    pub fn gradient(&self, i: usize) -> &[f64] {
        &self.gradients[i * self.dim..(i + 1) * self.dim]
    }
}

/// Serializable description of a polytope, as found in study configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PolytopeSpec {
    Segment {
        #[serde(default)]
        a: f64,
        #[serde(default = "one")]
        b: f64,
    },
    RegularPolygon {
        n: usize,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
    Diamond {
        m: usize,
    },
    Polyhedron {
        vertices: Vec<[f64; 3]>,
        faces: Vec<Vec<usize>>,
    },
}

fn one() -> f64 {
    1.0
}

impl PolytopeSpec {
    pub fn build(&self) -> Result<Polytope, PolytopeError> {
        match self {
            PolytopeSpec::Segment { a, b } => Polytope::segment(*a, *b),
            PolytopeSpec::RegularPolygon { n } => Polytope::regular_polygon(*n),
            PolytopeSpec::Polygon { vertices } => Polytope::polygon(vertices),
            PolytopeSpec::Diamond { m } => Polytope::diamond(*m),
            PolytopeSpec::Polyhedron { vertices, faces } => Polytope::polyhedron(vertices, faces),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Polytope {
    dim: usize,
    vertices: Vec<[f64; 3]>,
    faces: Vec<Vec<usize>>,
    centroid: [f64; 3],
    geometry: Geometry,
    label: String,
}

#[derive(Debug, Clone)]
enum Geometry {
    Segment,
    Polygon(PolygonData),
    Polyhedron(PolyhedronData),
}

/// The signed area of the triangle `(p, v_j, v_{j+1})` is `area_const[j] + area_grad[j] . p`.
#[derive(Debug, Clone)]
struct PolygonData {
    area_const: Vec<f64>,
    area_grad: Vec<[f64; 2]>,
    corner_area: Vec<f64>,
    edge_len: Vec<f64>,
}

/// Face `f` has distance `offsets[f] - normals[f] . x` to a point `x` (positive inside).
#[derive(Debug, Clone)]
struct PolyhedronData {
    normals: Vec<[f64; 3]>,
    offsets: Vec<f64>,
    /// Per vertex: fan triangles of its dual face, as face triples with the
    /// (positive) determinant of their normals.
    fans: Vec<Vec<([usize; 3], f64)>>,
    edges: Vec<(usize, usize)>,
    centroid_clearance: f64,
}

impl Polytope {
    /// Generic constructor dispatching on `dim`.
    pub fn new(
        dim: usize,
        vertices: &[Vec<f64>],
        faces: Option<&[Vec<usize>]>,
    ) -> Result<Self, PolytopeError> {
        for v in vertices {
            if v.len() != dim {
                return Err(PolytopeError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        match dim {
            1 => {
                if vertices.len() != 2 {
                    return Err(PolytopeError::DegenerateGeometry(format!(
                        "a segment needs exactly 2 vertices, got {}",
                        vertices.len()
                    )));
                }
                Self::segment(vertices[0][0], vertices[1][0])
            }
            2 => {
                let v: Vec<[f64; 2]> = vertices.iter().map(|p| [p[0], p[1]]).collect();
                Self::polygon(&v)
            }
            3 => {
                let v: Vec<[f64; 3]> = vertices.iter().map(|p| [p[0], p[1], p[2]]).collect();
                let faces = faces.ok_or_else(|| {
                    PolytopeError::DegenerateGeometry("a polyhedron needs face loops".into())
                })?;
                Self::polyhedron(&v, faces)
            }
            d => Err(PolytopeError::DegenerateGeometry(format!(
                "unsupported dimension {d}"
            ))),
        }
    }

    pub fn segment(a: f64, b: f64) -> Result<Self, PolytopeError> {
        if !a.is_finite() || !b.is_finite() {
            return Err(PolytopeError::DegenerateGeometry("non-finite vertex".into()));
        }
        if (b - a).abs() <= GEOMETRY_TOL {
            return Err(PolytopeError::DegenerateGeometry(
                "segment vertices coincide".into(),
            ));
        }
        Ok(Self {
            dim: 1,
            vertices: vec![[a, 0.0, 0.0], [b, 0.0, 0.0]],
            faces: Vec::new(),
            centroid: [0.5 * (a + b), 0.0, 0.0],
            geometry: Geometry::Segment,
            label: "segment".into(),
        })
    }

    /// Regular polygon of circumradius 1 with vertex `k` at angle `2 pi k / n`.
    pub fn regular_polygon(n: usize) -> Result<Self, PolytopeError> {
        if n < 3 {
            return Err(PolytopeError::DegenerateGeometry(format!(
                "a polygon needs at least 3 vertices, got {n}"
            )));
        }
        let vertices: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        let mut p = Self::polygon(&vertices)?;
        p.label = format!("regular_polygon({n})");
        Ok(p)
    }

    /// Convex polygon with counter-clockwise vertices.
    pub fn polygon(vertices: &[[f64; 2]]) -> Result<Self, PolytopeError> {
        let n = vertices.len();
        if n < 3 {
            return Err(PolytopeError::DegenerateGeometry(format!(
                "a polygon needs at least 3 vertices, got {n}"
            )));
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(PolytopeError::DegenerateGeometry("non-finite vertex".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                let d = dist2(&vertices[i], &vertices[j]);
                if d <= GEOMETRY_TOL {
                    return Err(PolytopeError::DegenerateGeometry(format!(
                        "vertices {i} and {j} coincide"
                    )));
                }
            }
        }
        let area2: f64 = (0..n)
            .map(|i| cross2(&vertices[i], &vertices[(i + 1) % n]))
            .sum();
        if area2.abs() <= GEOMETRY_TOL {
            return Err(PolytopeError::DegenerateGeometry("zero area polygon".into()));
        }
        let mut turning = 0.0;
        for i in 0..n {
            let prev = vertices[(i + n - 1) % n];
            let cur = vertices[i];
            let next = vertices[(i + 1) % n];
            let e0 = [cur[0] - prev[0], cur[1] - prev[1]];
            let e1 = [next[0] - cur[0], next[1] - cur[1]];
            let c = e0[0] * e1[1] - e0[1] * e1[0];
            let scale = (e0[0].hypot(e0[1])) * (e1[0].hypot(e1[1]));
            if c <= GEOMETRY_TOL * scale {
                return Err(PolytopeError::NonConvexInput(format!(
                    "vertex {i} is not a strictly convex counter-clockwise corner"
                )));
            }
            turning += c.atan2(e0[0] * e1[0] + e0[1] * e1[1]);
        }
        if (turning - 2.0 * std::f64::consts::PI).abs() > 1e-6 {
            return Err(PolytopeError::NonConvexInput(
                "polygon winds more than once".into(),
            ));
        }

        let mut area_const = Vec::with_capacity(n);
        let mut area_grad = Vec::with_capacity(n);
        let mut edge_len = Vec::with_capacity(n);
        let mut corner_area = Vec::with_capacity(n);
        for j in 0..n {
            let a = vertices[j];
            let b = vertices[(j + 1) % n];
            area_const.push(0.5 * cross2(&a, &b));
            area_grad.push([0.5 * (a[1] - b[1]), 0.5 * (b[0] - a[0])]);
            edge_len.push((b[0] - a[0]).hypot(b[1] - a[1]));
            let prev = vertices[(j + n - 1) % n];
            corner_area.push(0.5 * triangle_cross(&prev, &a, &b));
        }
        let centroid = vertex_mean(vertices.iter().map(|v| [v[0], v[1], 0.0]));
        Ok(Self {
            dim: 2,
            vertices: vertices.iter().map(|v| [v[0], v[1], 0.0]).collect(),
            faces: Vec::new(),
            centroid,
            geometry: Geometry::Polygon(PolygonData {
                area_const,
                area_grad,
                corner_area,
                edge_len,
            }),
            label: format!("polygon({n})"),
        })
    }

    /// Bipyramid over a regular `m`-gon equator of radius 1 in the plane `z = 0`,
    /// with apexes at `(0, 0, 1)` (vertex `m`) and `(0, 0, -1)` (vertex `m + 1`).
    pub fn diamond(m: usize) -> Result<Self, PolytopeError> {
        if m < 3 {
            return Err(PolytopeError::DegenerateGeometry(format!(
                "a diamond equator needs at least 3 vertices, got {m}"
            )));
        }
        let mut vertices: Vec<[f64; 3]> = (0..m)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
        vertices.push([0.0, 0.0, 1.0]);
        vertices.push([0.0, 0.0, -1.0]);
        let mut faces = Vec::with_capacity(2 * m);
        for i in 0..m {
            faces.push(vec![i, (i + 1) % m, m]);
        }
        for i in 0..m {
            faces.push(vec![(i + 1) % m, i, m + 1]);
        }
        let mut p = Self::polyhedron(&vertices, &faces)?;
        p.label = format!("diamond({m})");
        Ok(p)
    }

    /// Convex polyhedron from vertices and face loops. Loops may have either
    /// orientation; they are reoriented outward.
    pub fn polyhedron(vertices: &[[f64; 3]], faces: &[Vec<usize>]) -> Result<Self, PolytopeError> {
        let nv = vertices.len();
        if nv < 4 {
            return Err(PolytopeError::DegenerateGeometry(format!(
                "a polyhedron needs at least 4 vertices, got {nv}"
            )));
        }
        if vertices.iter().flatten().any(|x| !x.is_finite()) {
            return Err(PolytopeError::DegenerateGeometry("non-finite vertex".into()));
        }
        for i in 0..nv {
            for j in i + 1..nv {
                if dist2(&vertices[i], &vertices[j]) <= GEOMETRY_TOL {
                    return Err(PolytopeError::DegenerateGeometry(format!(
                        "vertices {i} and {j} coincide"
                    )));
                }
            }
        }
        if faces.len() < 4 {
            return Err(PolytopeError::DegenerateGeometry(format!(
                "a polyhedron needs at least 4 faces, got {}",
                faces.len()
            )));
        }
        let centroid = vertex_mean(vertices.iter().copied());

        let mut loops: Vec<Vec<usize>> = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut offsets = Vec::with_capacity(faces.len());
        for (f, face) in faces.iter().enumerate() {
            if face.len() < 3 {
                return Err(PolytopeError::DegenerateGeometry(format!(
                    "face {f} has fewer than 3 vertices"
                )));
            }
            if face.iter().any(|&i| i >= nv) {
                return Err(PolytopeError::DegenerateGeometry(format!(
                    "face {f} references a missing vertex"
                )));
            }
            let mut sorted = face.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != face.len() {
                return Err(PolytopeError::DegenerateGeometry(format!(
                    "face {f} repeats a vertex"
                )));
            }
            // Newell normal
            let mut n = [0.0; 3];
            for k in 0..face.len() {
                let a = vertices[face[k]];
                let b = vertices[face[(k + 1) % face.len()]];
                n[0] += (a[1] - b[1]) * (a[2] + b[2]);
                n[1] += (a[2] - b[2]) * (a[0] + b[0]);
                n[2] += (a[0] - b[0]) * (a[1] + b[1]);
            }
            let len = norm3(&n);
            if len <= GEOMETRY_TOL {
                return Err(PolytopeError::DegenerateGeometry(format!(
                    "face {f} has zero area"
                )));
            }
            let mut n = [n[0] / len, n[1] / len, n[2] / len];
            let mut lp = face.clone();
            let v0 = vertices[face[0]];
            if dot3(&n, &sub3(&centroid, &v0)) > 0.0 {
                n = [-n[0], -n[1], -n[2]];
                lp.reverse();
            }
            let offset = dot3(&n, &v0);
            for &i in face {
                if (dot3(&n, &vertices[i]) - offset).abs() > 1e-9 {
                    return Err(PolytopeError::NonConvexInput(format!(
                        "face {f} is not planar"
                    )));
                }
            }
            normals.push(n);
            offsets.push(offset);
            loops.push(lp);
        }

        // convex position: every vertex strictly inside the planes of faces it is not on
        for (f, lp) in loops.iter().enumerate() {
            for (i, v) in vertices.iter().enumerate() {
                let h = offsets[f] - dot3(&normals[f], v);
                let on_face = lp.contains(&i);
                if h < -1e-9 {
                    return Err(PolytopeError::NonConvexInput(format!(
                        "vertex {i} lies outside the plane of face {f}"
                    )));
                }
                if !on_face && h <= 1e-9 {
                    return Err(PolytopeError::NonConvexInput(format!(
                        "vertex {i} lies on the plane of face {f} without belonging to it"
                    )));
                }
            }
        }

        // closure: each directed edge exactly once, with its twin in another face
        let mut directed = std::collections::HashMap::new();
        for (f, lp) in loops.iter().enumerate() {
            for k in 0..lp.len() {
                let e = (lp[k], lp[(k + 1) % lp.len()]);
                if directed.insert(e, f).is_some() {
                    return Err(PolytopeError::DegenerateGeometry(format!(
                        "edge {:?} is shared by more than two faces",
                        e
                    )));
                }
            }
        }
        let mut edges = Vec::new();
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(PolytopeError::DegenerateGeometry(format!(
                    "faces do not close around edge ({a}, {b})"
                )));
            }
            if a < b {
                edges.push((a, b));
            }
        }
        edges.sort_unstable();

        // dual-face fans
        let mut fans = Vec::with_capacity(nv);
        for v in 0..nv {
            let incident: Vec<usize> = (0..loops.len()).filter(|&f| loops[f].contains(&v)).collect();
            if incident.len() < 3 {
                return Err(PolytopeError::NonConvexInput(format!(
                    "vertex {v} is not extreme (on {} faces)",
                    incident.len()
                )));
            }
            let mut cycle = vec![incident[0]];
            loop {
                let f = *cycle.last().unwrap();
                let lp = &loops[f];
                let k = lp.iter().position(|&x| x == v).unwrap();
                let prev = lp[(k + lp.len() - 1) % lp.len()];
                let g = directed[&(v, prev)];
                if g == cycle[0] {
                    break;
                }
                if cycle.len() > incident.len() {
                    return Err(PolytopeError::DegenerateGeometry(format!(
                        "faces around vertex {v} do not form a single cycle"
                    )));
                }
                cycle.push(g);
            }
            if cycle.len() != incident.len() {
                return Err(PolytopeError::DegenerateGeometry(format!(
                    "faces around vertex {v} do not form a single cycle"
                )));
            }
            let mut tris = Vec::with_capacity(cycle.len() - 2);
            for j in 1..cycle.len() - 1 {
                let t = [cycle[0], cycle[j], cycle[j + 1]];
                tris.push((t, det3(&normals[t[0]], &normals[t[1]], &normals[t[2]])));
            }
            let total: f64 = tris.iter().map(|t| t.1).sum();
            if total.abs() <= GEOMETRY_TOL {
                return Err(PolytopeError::DegenerateGeometry(format!(
                    "vertex {v} has a flat face fan"
                )));
            }
            let sign = total.signum();
            for t in tris.iter_mut() {
                t.1 *= sign;
                if t.1 < -1e-12 {
                    return Err(PolytopeError::NonConvexInput(format!(
                        "face fan around vertex {v} is not convex"
                    )));
                }
            }
            fans.push(tris);
        }
        if let Some(v) = (0..nv).find(|v| !loops.iter().any(|lp| lp.contains(v))) {
            return Err(PolytopeError::DegenerateGeometry(format!(
                "vertex {v} is not used by any face"
            )));
        }

        let centroid_clearance = (0..loops.len())
            .map(|f| offsets[f] - dot3(&normals[f], &centroid))
            .fold(f64::INFINITY, f64::min);
        if centroid_clearance <= GEOMETRY_TOL {
            return Err(PolytopeError::DegenerateGeometry(
                "polyhedron has empty interior".into(),
            ));
        }

        Ok(Self {
            dim: 3,
            vertices: vertices.to_vec(),
            faces: loops,
            centroid,
            geometry: Geometry::Polyhedron(PolyhedronData {
                normals,
                offsets,
                fans,
                edges,
                centroid_clearance,
            }),
            label: format!("polyhedron({nv} vertices, {} faces)", faces.len()),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i][..self.dim]
    }

    /// Outward-oriented face loops (empty unless `dim == 3`).
    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid[..self.dim]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Largest distance by which `p` violates one of the facet constraints
    /// (non-positive inside).
    pub fn exterior_distance(&self, p: &[f64]) -> f64 {
        match &self.geometry {
            Geometry::Segment => {
                let (lo, hi) = self.segment_bounds();
                (lo - p[0]).max(p[0] - hi)
            }
            Geometry::Polygon(data) => (0..self.vertices.len())
                .map(|j| -2.0 * data.area(j, p) / data.edge_len[j])
                .fold(f64::NEG_INFINITY, f64::max),
            Geometry::Polyhedron(data) => (0..data.normals.len())
                .map(|f| -data.height(f, p))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        self.exterior_distance(p) <= tol
    }

    fn segment_bounds(&self) -> (f64, f64) {
        let a = self.vertices[0][0];
        let b = self.vertices[1][0];
        (a.min(b), a.max(b))
    }

    fn check_dim(&self, p: &[f64]) -> Result<(), PolytopeError> {
        if p.len() != self.dim {
            return Err(PolytopeError::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        Ok(())
    }

    /// Wachspress coordinates and their gradients at `p`.
    pub fn barycentric(&self, p: &[f64]) -> Result<BarycentricResult, PolytopeError> {
        self.check_dim(p)?;
        let distance = self.exterior_distance(p);
        if !(distance <= INSIDE_TOL) {
            return Err(PolytopeError::PointOutsidePolytope {
                point: p.to_vec(),
                distance,
            });
        }
        Ok(match &self.geometry {
            Geometry::Segment => {
                let a = self.vertices[0][0];
                let b = self.vertices[1][0];
                let len = b - a;
                BarycentricResult {
                    weights: vec![(b - p[0]) / len, (p[0] - a) / len],
                    gradients: vec![-1.0 / len, 1.0 / len],
                    dim: 1,
                }
            }
            Geometry::Polygon(data) => data.wachspress(p),
            Geometry::Polyhedron(data) => {
                let q = self.nudged(data, p);
                data.wachspress(&q)
            }
        })
    }

    /// Moves points that are closer than `NUDGE` to a face towards the vertex centroid.
    fn nudged(&self, data: &PolyhedronData, p: &[f64]) -> [f64; 3] {
        let hmin = (0..data.normals.len())
            .map(|f| data.height(f, p))
            .fold(f64::INFINITY, f64::min);
        if hmin >= NUDGE {
            return [p[0], p[1], p[2]];
        }
        let t = ((NUDGE - hmin) / data.centroid_clearance).min(1.0);
        let c = self.centroid;
        [
            p[0] + t * (c[0] - p[0]),
            p[1] + t * (c[1] - p[1]),
            p[2] + t * (c[2] - p[2]),
        ]
    }

    /// Euclidean projection onto the polytope.
    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.dim, "point dimension mismatch");
        if self.exterior_distance(p) <= PROJECTION_TOL {
            return p.to_vec();
        }
        match &self.geometry {
            Geometry::Segment => {
                let (lo, hi) = self.segment_bounds();
                vec![p[0].clamp(lo, hi)]
            }
            Geometry::Polygon(_) => {
                let n = self.vertices.len();
                let x = [p[0], p[1], 0.0];
                let mut best = self.vertices[0];
                let mut best_d = f64::INFINITY;
                for j in 0..n {
                    let q = closest_on_segment(&x, &self.vertices[j], &self.vertices[(j + 1) % n]);
                    let d = dist2(&q, &x);
                    if d < best_d {
                        best_d = d;
                        best = q;
                    }
                }
                vec![best[0], best[1]]
            }
            Geometry::Polyhedron(data) => {
                let x = [p[0], p[1], p[2]];
                let mut best = self.vertices[0];
                let mut best_d = f64::INFINITY;
                let mut consider = |q: [f64; 3]| {
                    let d = dist2(&q, &x);
                    if d < best_d {
                        best_d = d;
                        best = q;
                    }
                };
                for f in 0..data.normals.len() {
                    let h = data.height(f, &x);
                    if h >= 0.0 {
                        continue;
                    }
                    let n = data.normals[f];
                    let q = [x[0] + h * n[0], x[1] + h * n[1], x[2] + h * n[2]];
                    let inside = (0..data.normals.len())
                        .all(|g| g == f || data.height(g, &q) >= -PROJECTION_TOL);
                    if inside {
                        consider(q);
                    }
                }
                for &(a, b) in &data.edges {
                    consider(closest_on_segment(&x, &self.vertices[a], &self.vertices[b]));
                }
                for v in &self.vertices {
                    consider(*v);
                }
                best.to_vec()
            }
        }
    }

    /// A strictly interior point. Without a seed this is the vertex centroid;
    /// with a seed it is a random convex combination of the vertices pulled
    /// slightly towards the centroid.
    pub fn sample_interior(&self, seed: Option<u64>) -> Vec<f64> {
        let Some(seed) = seed else {
            return self.centroid().to_vec();
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        // uniform Dirichlet weights from exponential draws
        let raw: Vec<f64> = (0..self.vertices.len())
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let mut q = [0.0; 3];
        for (w, v) in raw.iter().zip(&self.vertices) {
            for k in 0..3 {
                q[k] += w / total * v[k];
            }
        }
        let c = self.centroid;
        (0..self.dim).map(|k| c[k] + 0.9 * (q[k] - c[k])).collect()
    }
}

impl PolygonData {
    fn area(&self, j: usize, p: &[f64]) -> f64 {
        self.area_const[j] + self.area_grad[j][0] * p[0] + self.area_grad[j][1] * p[1]
    }

    /// Denominator-free Wachspress form: `w_i = C_i * prod_{j != i-1, i} A_j(p)`.
    /// Well defined on the whole closed polygon.
    fn wachspress(&self, p: &[f64]) -> BarycentricResult {
        let n = self.area_const.len();
        let areas: Vec<f64> = (0..n).map(|j| self.area(j, p)).collect();
        let mut w = vec![0.0; n];
        let mut dw = vec![[0.0; 2]; n];
        let mut factors = Vec::with_capacity(n);
        for i in 0..n {
            factors.clear();
            let skip = (i + n - 1) % n;
            for j in 0..n {
                if j != i && j != skip {
                    factors.push((areas[j], self.area_grad[j]));
                }
            }
            let (prod, grad) = product_with_gradient(&factors);
            w[i] = self.corner_area[i] * prod;
            dw[i] = [self.corner_area[i] * grad[0], self.corner_area[i] * grad[1]];
        }
        normalize(w, dw)
    }
}

impl PolyhedronData {
    fn height(&self, f: usize, p: &[f64]) -> f64 {
        let n = self.normals[f];
        self.offsets[f] - (n[0] * p[0] + n[1] * p[1] + n[2] * p[2])
    }

    /// Wachspress weights through the dual-face volume construction, each fan
    /// term multiplied by the product of all face heights to avoid divisions.
    fn wachspress(&self, p: &[f64; 3]) -> BarycentricResult {
        let nf = self.normals.len();
        let nv = self.fans.len();
        let heights: Vec<f64> = (0..nf).map(|f| self.height(f, p)).collect();
        let mut w = vec![0.0; nv];
        let mut dw = vec![[0.0; 3]; nv];
        let mut factors = Vec::with_capacity(nf);
        for v in 0..nv {
            for &(tri, det) in &self.fans[v] {
                factors.clear();
                for f in 0..nf {
                    if !tri.contains(&f) {
                        let n = self.normals[f];
                        factors.push((heights[f], [-n[0], -n[1], -n[2]]));
                    }
                }
                let (prod, grad) = product_with_gradient(&factors);
                w[v] += det * prod;
                for k in 0..3 {
                    dw[v][k] += det * grad[k];
                }
            }
        }
        normalize(w, dw)
    }
}

fn normalize<const D: usize>(w: Vec<f64>, dw: Vec<[f64; D]>) -> BarycentricResult {
    let total: f64 = w.iter().sum();
    let mut total_grad = [0.0; D];
    for g in &dw {
        for k in 0..D {
            total_grad[k] += g[k];
        }
    }
    let weights: Vec<f64> = w.iter().map(|x| x / total).collect();
    let mut gradients = Vec::with_capacity(w.len() * D);
    for (i, g) in dw.iter().enumerate() {
        for k in 0..D {
            gradients.push((g[k] - weights[i] * total_grad[k]) / total);
        }
    }
    BarycentricResult {
        weights,
        gradients,
        dim: D,
    }
}

/// Product of affine factors and its gradient, via prefix/suffix products.
fn product_with_gradient<const D: usize>(factors: &[(f64, [f64; D])]) -> (f64, [f64; D]) {
    let m = factors.len();
    let mut suffix = vec![1.0; m + 1];
    for k in (0..m).rev() {
        suffix[k] = suffix[k + 1] * factors[k].0;
    }
    let mut grad = [0.0; D];
    let mut prefix = 1.0;
    for k in 0..m {
        let others = prefix * suffix[k + 1];
        for d in 0..D {
            grad[d] += factors[k].1[d] * others;
        }
        prefix *= factors[k].0;
    }
    (suffix[0], grad)
}

fn closest_on_segment(x: &[f64; 3], a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    let ab = sub3(b, a);
    let t = (dot3(&sub3(x, a), &ab) / dot3(&ab, &ab)).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]]
}

fn vertex_mean(vs: impl Iterator<Item = [f64; 3]>) -> [f64; 3] {
    let mut c = [0.0; 3];
    let mut n = 0usize;
    for v in vs {
        for k in 0..3 {
            c[k] += v[k];
        }
        n += 1;
    }
    c.map(|x| x / n as f64)
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cross2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn triangle_cross(a: &[f64; 2], b: &[f64; 2], c: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn det3(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
}
