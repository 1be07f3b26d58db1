//! Structured triangulation of one rotor pole: an annular sector made of a
//! design ring `[r_shaft, r_rotor]` and an airgap ring `(r_rotor, r_outer]`.
//!
//! The sector spans the angles `[-pole_angle / 2, pole_angle / 2]`. The radial
//! edge at `-pole_angle / 2` is the master edge, the one at `+pole_angle / 2`
//! the slave edge; slave node `k` is master node `k` rotated by `pole_angle`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh file, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Design,
    Airgap,
}

impl Region {
    fn as_str(self) -> &'static str {
        match self {
            Region::Design => "design",
            Region::Airgap => "airgap",
        }
    }
}

/// Sector dimensions in meters and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectorGeometry {
    pub r_shaft: f64,
    pub r_rotor: f64,
    pub r_outer: f64,
    pub pole_angle: f64,
}

impl Default for SectorGeometry {
    fn default() -> Self {
        Self {
            r_shaft: 0.030,
            r_rotor: 0.080,
            r_outer: 0.085,
            pole_angle: std::f64::consts::PI / 6.0,
        }
    }
}

impl SectorGeometry {
    pub fn validate(&self) -> Result<(), MeshError> {
        let Self {
            r_shaft,
            r_rotor,
            r_outer,
            pole_angle,
        } = *self;
        if !(r_shaft > 0.0 && r_shaft < r_rotor && r_rotor < r_outer && r_outer.is_finite()) {
            return Err(MeshError::InvalidGeometry(format!(
                "radii must satisfy 0 < r_shaft < r_rotor < r_outer, got {r_shaft}, {r_rotor}, {r_outer}"
            )));
        }
        if !(pole_angle > 0.0 && pole_angle <= std::f64::consts::PI) {
            return Err(MeshError::InvalidGeometry(format!(
                "pole angle must lie in (0, pi], got {pole_angle}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SectorMesh {
    pub geometry: SectorGeometry,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<Region>,
    pub inner_arc: Vec<usize>,
    pub outer_arc: Vec<usize>,
    /// Master and slave edges, paired by position, ordered by radius.
    pub master_edge: Vec<usize>,
    pub slave_edge: Vec<usize>,
    /// Slave-edge node at `r_rotor` (counter-clockwise end of the rotor arc).
    pub probe_left: usize,
    /// Master-edge node at `r_rotor`.
    pub probe_right: usize,
}

/// Number of layers and angular divisions for a requested element count.
fn divisions(geometry: &SectorGeometry, target: usize) -> (usize, usize, usize) {
    let g = geometry;
    let area = 0.5 * g.pole_angle * (g.r_outer * g.r_outer - g.r_shaft * g.r_shaft);
    let h = (2.0 * area / target.max(1) as f64).sqrt();
    let design_layers = (((g.r_rotor - g.r_shaft) / h).round() as usize).max(1);
    let gap_layers = (((g.r_outer - g.r_rotor) / h).round() as usize).max(1);
    let sectors =
        ((target as f64 / (2.0 * (design_layers + gap_layers) as f64)).round() as usize).max(1);
    (design_layers, gap_layers, sectors)
}

pub fn generate_sector_mesh(
    geometry: SectorGeometry,
    target_elements: usize,
) -> Result<SectorMesh, MeshError> {
    geometry.validate()?;
    if target_elements == 0 {
        return Err(MeshError::InvalidGeometry("target element count must be positive".into()));
    }
    let (design_layers, gap_layers, sectors) = divisions(&geometry, target_elements);
    generate_structured(geometry, design_layers, gap_layers, sectors)
}

/// Sector mesh with explicit layer counts: `design_layers` rings in the
/// design region, `gap_layers` in the airgap and `sectors` angular divisions.
pub fn generate_structured(
    geometry: SectorGeometry,
    design_layers: usize,
    gap_layers: usize,
    sectors: usize,
) -> Result<SectorMesh, MeshError> {
    geometry.validate()?;
    if design_layers == 0 || gap_layers == 0 || sectors == 0 {
        return Err(MeshError::InvalidGeometry("layer counts must be positive".into()));
    }
    let g = geometry;
    let mut radii = Vec::with_capacity(design_layers + gap_layers + 1);
    for i in 0..=design_layers {
        radii.push(g.r_shaft + (g.r_rotor - g.r_shaft) * i as f64 / design_layers as f64);
    }
    for i in 1..=gap_layers {
        radii.push(g.r_rotor + (g.r_outer - g.r_rotor) * i as f64 / gap_layers as f64);
    }
    // exact ring radii at the interfaces
    radii[design_layers] = g.r_rotor;
    *radii.last_mut().unwrap() = g.r_outer;

    let per_ring = sectors + 1;
    let mut nodes = Vec::with_capacity(radii.len() * per_ring);
    for &r in &radii {
        for j in 0..=sectors {
            let t = -0.5 * g.pole_angle + g.pole_angle * j as f64 / sectors as f64;
            nodes.push([r * t.cos(), r * t.sin()]);
        }
    }
    // slave nodes as exact images of master nodes
    let (s, c) = g.pole_angle.sin_cos();
    for ring in 0..radii.len() {
        let m = nodes[ring * per_ring];
        nodes[ring * per_ring + sectors] = [c * m[0] - s * m[1], s * m[0] + c * m[1]];
    }

    let id = |i: usize, j: usize| i * per_ring + j;
    let mut triangles = Vec::with_capacity(2 * (radii.len() - 1) * sectors);
    let mut regions = Vec::with_capacity(triangles.capacity());
    for i in 0..radii.len() - 1 {
        let region = if i < design_layers {
            Region::Design
        } else {
            Region::Airgap
        };
        for j in 0..sectors {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            regions.push(region);
            regions.push(region);
        }
    }
    let last = radii.len() - 1;
    let mesh = SectorMesh {
        geometry,
        inner_arc: (0..=sectors).map(|j| id(0, j)).collect(),
        outer_arc: (0..=sectors).map(|j| id(last, j)).collect(),
        master_edge: (0..radii.len()).map(|i| id(i, 0)).collect(),
        slave_edge: (0..radii.len()).map(|i| id(i, sectors)).collect(),
        probe_left: id(design_layers, sectors),
        probe_right: id(design_layers, 0),
        nodes,
        triangles,
        regions,
    };
    Ok(mesh)
}

impl SectorMesh {
    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn design_elements(&self) -> Vec<usize> {
        (0..self.triangles.len())
            .filter(|&e| self.regions[e] == Region::Design)
            .collect()
    }

    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.triangles[e].map(|i| self.nodes[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[e].map(|i| self.nodes[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn mean_edge_length(&self) -> f64 {
        let mut total = 0.0;
        for t in &self.triangles {
            for k in 0..3 {
                let a = self.nodes[t[k]];
                let b = self.nodes[t[(k + 1) % 3]];
                total += (b[0] - a[0]).hypot(b[1] - a[1]);
            }
        }
        total / (3 * self.triangles.len()) as f64
    }

    /// Checks orientation, region placement and the master/slave pairing.
    pub fn check(&self) -> Result<(), MeshError> {
        let g = &self.geometry;
        let scale = g.r_outer;
        for e in 0..self.triangles.len() {
            if self.triangles[e].iter().any(|&i| i >= self.nodes.len()) {
                return Err(MeshError::InvalidMesh(format!("element {e} references a missing node")));
            }
            let a = self.area(e);
            if !(a > 1e-14 * scale * scale) {
                return Err(MeshError::InvalidMesh(format!(
                    "element {e} is not positively oriented (area {a:e})"
                )));
            }
            let c = self.centroid(e);
            let r = c[0].hypot(c[1]);
            let ok = match self.regions[e] {
                Region::Design => r >= g.r_shaft - 1e-12 && r <= g.r_rotor + 1e-12,
                Region::Airgap => r > g.r_rotor - 1e-12 && r <= g.r_outer + 1e-12,
            };
            if !ok {
                return Err(MeshError::InvalidMesh(format!(
                    "element {e} ({:?}) has centroid radius {r}",
                    self.regions[e]
                )));
            }
            for &i in &self.triangles[e] {
                let p = self.nodes[i];
                let rn = p[0].hypot(p[1]);
                let inside = match self.regions[e] {
                    Region::Design => rn >= g.r_shaft - 1e-12 && rn <= g.r_rotor + 1e-12,
                    Region::Airgap => rn >= g.r_rotor - 1e-12 && rn <= g.r_outer + 1e-12,
                };
                if !inside {
                    return Err(MeshError::InvalidMesh(format!(
                        "element {e} has node {i} outside its region"
                    )));
                }
            }
        }
        if self.master_edge.len() != self.slave_edge.len() {
            return Err(MeshError::InvalidMesh("master and slave edges differ in size".into()));
        }
        let (s, c) = g.pole_angle.sin_cos();
        for (&m, &sl) in self.master_edge.iter().zip(&self.slave_edge) {
            let p = self.nodes[m];
            let q = self.nodes[sl];
            let rot = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            if (rot[0] - q[0]).hypot(rot[1] - q[1]) > 1e-12 {
                return Err(MeshError::InvalidMesh(format!(
                    "slave node {sl} is not the rotation of master node {m}"
                )));
            }
        }
        Ok(())
    }

    /// Plain-text export: a header, one node per line `id x y` and one element
    /// per line `id n1 n2 n3 region`.
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# sector r_shaft={:e} r_rotor={:e} r_outer={:e} pole_angle={:e}",
            g.r_shaft, g.r_rotor, g.r_outer, g.pole_angle
        );
        let _ = writeln!(s, "# nodes {}", self.nodes.len());
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "{i} {:e} {:e}", p[0], p[1]);
        }
        let _ = writeln!(s, "# elements {}", self.triangles.len());
        for (e, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{e} {} {} {} {}", t[0], t[1], t[2], self.regions[e].as_str());
        }
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parses [`SectorMesh::to_text`] output; boundary sets are recovered from
    /// the node radii and angles.
    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut geometry: Option<SectorGeometry> = None;
        let mut nodes = Vec::new();
        let mut triangles = Vec::new();
        let mut regions = Vec::new();
        let mut section = "";
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| MeshError::Parse {
                line: ln + 1,
                message,
            };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut words = rest.split_whitespace();
                match words.next() {
                    Some("sector") => {
                        let mut g = SectorGeometry::default();
                        for w in words {
                            let (k, v) = w
                                .split_once('=')
                                .ok_or_else(|| err(format!("bad header field {w}")))?;
                            let v: f64 = v.parse().map_err(|_| err(format!("bad number {v}")))?;
                            match k {
                                "r_shaft" => g.r_shaft = v,
                                "r_rotor" => g.r_rotor = v,
                                "r_outer" => g.r_outer = v,
                                "pole_angle" => g.pole_angle = v,
                                _ => return Err(err(format!("unknown header field {k}"))),
                            }
                        }
                        geometry = Some(g);
                    }
                    Some("nodes") => section = "nodes",
                    Some("elements") => section = "elements",
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match section {
                "nodes" => {
                    if fields.len() != 3 {
                        return Err(err("expected `id x y`".into()));
                    }
                    let id: usize = fields[0].parse().map_err(|_| err("bad node id".into()))?;
                    if id != nodes.len() {
                        return Err(err(format!("node ids must be consecutive, got {id}")));
                    }
                    let x: f64 = fields[1].parse().map_err(|_| err("bad x".into()))?;
                    let y: f64 = fields[2].parse().map_err(|_| err("bad y".into()))?;
                    nodes.push([x, y]);
                }
                "elements" => {
                    if fields.len() != 5 {
                        return Err(err("expected `id n1 n2 n3 region`".into()));
                    }
                    let id: usize = fields[0].parse().map_err(|_| err("bad element id".into()))?;
                    if id != triangles.len() {
                        return Err(err(format!("element ids must be consecutive, got {id}")));
                    }
                    let mut t = [0usize; 3];
                    for k in 0..3 {
                        t[k] = fields[k + 1].parse().map_err(|_| err("bad node index".into()))?;
                    }
                    let region = match fields[4] {
                        "design" => Region::Design,
                        "airgap" => Region::Airgap,
                        other => return Err(err(format!("unknown region {other}"))),
                    };
                    triangles.push(t);
                    regions.push(region);
                }
                _ => return Err(err("data before any section header".into())),
            }
        }
        let geometry = geometry.ok_or_else(|| MeshError::Parse {
            line: 1,
            message: "missing `# sector` header".into(),
        })?;
        geometry.validate()?;
        let g = geometry;
        let tol = 1e-9 * g.r_outer;
        let radius = |p: &[f64; 2]| p[0].hypot(p[1]);
        let on_ray = |p: &[f64; 2], t: f64| (p[1] * t.cos() - p[0] * t.sin()).abs() <= tol;
        let by_radius = |mut v: Vec<usize>, nodes: &[[f64; 2]]| {
            v.sort_by(|&a, &b| radius(&nodes[a]).total_cmp(&radius(&nodes[b])));
            v
        };
        let inner_arc: Vec<usize> = (0..nodes.len())
            .filter(|&i| (radius(&nodes[i]) - g.r_shaft).abs() <= tol)
            .collect();
        let outer_arc: Vec<usize> = (0..nodes.len())
            .filter(|&i| (radius(&nodes[i]) - g.r_outer).abs() <= tol)
            .collect();
        let master_edge = by_radius(
            (0..nodes.len()).filter(|&i| on_ray(&nodes[i], -0.5 * g.pole_angle)).collect(),
            &nodes,
        );
        let slave_edge = by_radius(
            (0..nodes.len()).filter(|&i| on_ray(&nodes[i], 0.5 * g.pole_angle)).collect(),
            &nodes,
        );
        let at_rotor = |edge: &[usize]| {
            edge.iter()
                .copied()
                .find(|&i| (radius(&nodes[i]) - g.r_rotor).abs() <= tol)
        };
        let probe_left = at_rotor(&slave_edge)
            .ok_or_else(|| MeshError::InvalidMesh("no slave-edge node at r_rotor".into()))?;
        let probe_right = at_rotor(&master_edge)
            .ok_or_else(|| MeshError::InvalidMesh("no master-edge node at r_rotor".into()))?;
        let mesh = SectorMesh {
            geometry,
            nodes,
            triangles,
            regions,
            inner_arc,
            outer_arc,
            master_edge,
            slave_edge,
            probe_left,
            probe_right,
        };
        mesh.check()?;
        Ok(mesh)
    }

    pub fn read_text(path: &Path) -> Result<Self, MeshError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
