#![allow(dead_code)]

use mmtopo::fem::{FemModel, NewtonOptions, SideCondition};
use mmtopo::interp::{build_tree, InterpTree, MaterialTree, NeveuLabel, NodeSpec, TreeSpec};
use mmtopo::materials::{MaterialCatalogue, MaterialsConfig, MU0};
use mmtopo::mesh::{generate_structured, SectorGeometry};
use mmtopo::polytope::Polytope;
use rand::Rng;

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn tri_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Classical rational Wachspress weights on a CCW convex polygon, strictly inside.
pub fn wachspress_2d(verts: &[[f64; 2]], p: [f64; 2]) -> Vec<f64> {
    let n = verts.len();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let prev = verts[(i + n - 1) % n];
            let next = verts[(i + 1) % n];
            let c = tri_area(prev, verts[i], next);
            c / (tri_area(p, prev, verts[i]) * tri_area(p, verts[i], next))
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Rational Wachspress weights on a convex polyhedron from outward face
/// loops: `w_v ~ sum_fan det(n_a, n_b, n_c) / (h_a h_b h_c)` with unit normals
/// and heights `h_f = (v_f - p) . n_f`.
pub fn wachspress_3d(poly: &Polytope, p: [f64; 3]) -> Vec<f64> {
    let v = |i: usize| {
        let s = poly.vertex(i);
        [s[0], s[1], s[2]]
    };
    let c = {
        let s = poly.centroid();
        [s[0], s[1], s[2]]
    };
    let newell = |f: &[usize]| {
        let mut n = [0.0; 3];
        for k in 0..f.len() {
            let a = v(f[k]);
            let b = v(f[(k + 1) % f.len()]);
            n[0] += (a[1] - b[1]) * (a[2] + b[2]);
            n[1] += (a[2] - b[2]) * (a[0] + b[0]);
            n[2] += (a[0] - b[0]) * (a[1] + b[1]);
        }
        n
    };
    // outward loops regardless of the stored orientation
    let faces: Vec<Vec<usize>> = poly
        .faces()
        .iter()
        .map(|f| {
            let mut f = f.clone();
            if dot3(newell(&f), sub(v(f[0]), c)) < 0.0 {
                f.reverse();
            }
            f
        })
        .collect();
    let normals: Vec<[f64; 3]> = faces
        .iter()
        .map(|f| {
            let n = newell(f);
            let l = dot3(n, n).sqrt();
            [n[0] / l, n[1] / l, n[2] / l]
        })
        .collect();
    let heights: Vec<f64> = faces
        .iter()
        .zip(&normals)
        .map(|(f, &n)| dot3(sub(v(f[0]), p), n))
        .collect();
    let nv = poly.vertex_count();
    let mut raw = vec![0.0; nv];
    for (vi, w) in raw.iter_mut().enumerate() {
        // faces around vi in cyclic order: the face after f shares edge (vi, prev_in_f)
        let incident: Vec<usize> = (0..faces.len()).filter(|&f| faces[f].contains(&vi)).collect();
        let mut order = vec![incident[0]];
        while order.len() < incident.len() {
            let f = &faces[*order.last().unwrap()];
            let k = f.iter().position(|&x| x == vi).unwrap();
            let prev = f[(k + f.len() - 1) % f.len()];
            let next_face = incident
                .iter()
                .copied()
                .find(|&g| {
                    let lg = &faces[g];
                    let kg = lg.iter().position(|&x| x == vi).unwrap();
                    lg[(kg + 1) % lg.len()] == prev
                })
                .unwrap();
            order.push(next_face);
        }
        for k in 1..order.len() - 1 {
            let (a, b, c) = (order[0], order[k], order[k + 1]);
            let det = dot3(normals[a], cross(normals[b], normals[c]));
            *w += det / (heights[a] * heights[b] * heights[c]);
        }
    }
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Random point strictly inside `poly`, at least `margin` from every facet.
pub fn interior_point<R: Rng>(poly: &Polytope, rng: &mut R, margin: f64) -> Vec<f64> {
    loop {
        let p = poly.sample_with(rng);
        if poly.exterior_distance(&p) < -margin {
            return p;
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// The polytopes of the interpolation suites.
pub fn suite_polytopes() -> Vec<Polytope> {
    let mut out = vec![Polytope::segment(0.0, 1.0).unwrap(), Polytope::segment(-2.0, 3.5).unwrap()];
    for n in 3..=16 {
        out.push(Polytope::regular_polygon(n).unwrap());
    }
    out.push(
        Polytope::polygon(&[[0.0, 0.0], [2.0, 0.1], [2.5, 1.5], [1.0, 2.2], [-0.3, 1.0]]).unwrap(),
    );
    for m in [3, 4, 6, 14] {
        out.push(Polytope::diamond(m).unwrap());
    }
    out
}

pub fn catalogue(linear_steel: bool) -> MaterialCatalogue {
    MaterialCatalogue::from_config(&MaterialsConfig {
        linear_steel,
        ..Default::default()
    })
    .unwrap()
}

pub fn rotor_tree(linear_steel: bool) -> MaterialTree {
    build_tree(&TreeSpec::recursive_rotor(), &catalogue(linear_steel)).unwrap()
}

pub fn small_model(side: SideCondition) -> FemModel {
    FemModel::new(
        generate_structured(SectorGeometry::default(), 4, 1, 5).unwrap(),
        side,
    )
}

/// Uniform design with every element on the vertex leading to `label`.
pub fn uniform_vertex_design(model: &FemModel, tree: &MaterialTree, label: &[usize]) -> Vec<f64> {
    let p = tree.tree.vertex_design(&NeveuLabel(label.to_vec())).unwrap();
    model.design_elements().iter().flat_map(|_| p.0.clone()).collect()
}

pub fn random_design<R: Rng>(model: &FemModel, tree: &MaterialTree, rng: &mut R) -> Vec<f64> {
    model
        .design_elements()
        .iter()
        .flat_map(|_| tree.tree.sample_design(rng).0)
        .collect()
}

/// Radial solution of `-(1/r)(r A')' = mu0 J` with `J` on `[r1, r2]`, zero on
/// `[r2, r3]` and `A(r1) = A(r3) = 0`.
pub struct AnnulusSolution {
    k: f64,
    r2: f64,
    c1: f64,
    c2: f64,
    d1: f64,
    d2: f64,
}

impl AnnulusSolution {
    pub fn new(r1: f64, r2: f64, r3: f64, mu0_j: f64) -> Self {
        let k = mu0_j;
        let c1 = k * ((r2 * r2 - r1 * r1) / 4.0 + r2 * r2 / 2.0 * (r3 / r2).ln()) / (r3 / r1).ln();
        let c2 = k * r1 * r1 / 4.0 - c1 * r1.ln();
        let d1 = c1 - k * r2 * r2 / 2.0;
        let d2 = -d1 * r3.ln();
        Self { k, r2, c1, c2, d1, d2 }
    }

    pub fn value(&self, r: f64) -> f64 {
        if r <= self.r2 {
            -self.k * r * r / 4.0 + self.c1 * r.ln() + self.c2
        } else {
            self.d1 * r.ln() + self.d2
        }
    }
}

/// Degree-4 symmetric quadrature on the reference triangle (barycentric, weight).
pub const DUNAVANT4: [([f64; 3], f64); 6] = [
    ([0.108103018168070, 0.445948490915965, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.108103018168070, 0.445948490915965], 0.223381589678011),
    ([0.445948490915965, 0.445948490915965, 0.108103018168070], 0.223381589678011),
    ([0.816847572980459, 0.091576213509771, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.816847572980459, 0.091576213509771], 0.109951743655322),
    ([0.091576213509771, 0.091576213509771, 0.816847572980459], 0.109951743655322),
];

pub fn random_polytope<R: Rng>(rng: &mut R) -> Polytope {
    match rng.gen_range(0..4) {
        0 => Polytope::segment(0.0, 1.0).unwrap(),
        1 => Polytope::regular_polygon(rng.gen_range(3..7)).unwrap(),
        2 => Polytope::polygon(&[[0.0, 0.0], [1.5, 0.2], [1.1, 1.3], [-0.2, 0.9]]).unwrap(),
        _ => Polytope::diamond(rng.gen_range(3..5)).unwrap(),
    }
}

/// Random tree of depth at most 3 with at most 20 scalar leaves.
pub fn random_tree<R: Rng>(rng: &mut R) -> InterpTree<f64> {
    loop {
        let mut entries = Vec::new();
        let mut leaves = 0;
        grow(rng, NeveuLabel::root(), &mut entries, &mut leaves);
        if leaves <= 20 {
            return InterpTree::new(entries).unwrap();
        }
    }
}

pub fn grow<R: Rng>(rng: &mut R, label: NeveuLabel, out: &mut Vec<(NeveuLabel, NodeSpec<f64>)>, leaves: &mut usize) {
    let internal = label.is_root() || (label.depth() < 3 && rng.gen_bool(0.35));
    if !internal {
        *leaves += 1;
        out.push((label, NodeSpec::Leaf(rng.gen_range(-5.0..5.0))));
        return;
    }
    let poly = random_polytope(rng);
    let n = poly.vertex_count();
    out.push((label.clone(), NodeSpec::Internal(poly)));
    for i in 1..=n {
        grow(rng, label.child(i), out, leaves);
    }
}

/// Independent flattening: walks every leaf label and multiplies the weights
/// of each ancestor polytope at its own slice of the design point.
pub fn flattened(tree: &InterpTree<f64>, rho: &[f64]) -> f64 {
    let labels = tree.internal_labels();
    let mut total = 0.0;
    for (label, value) in tree.leaves() {
        let mut w = 1.0;
        for depth in 0..label.depth() {
            let parent = NeveuLabel(label.0[..depth].to_vec());
            let slot = labels.iter().position(|l| *l == parent).unwrap();
            let off = tree.slot_offset(slot);
            let dim = tree.slot_dim(slot);
            let b = tree.slot_polytope(slot).barycentric(&rho[off..off + dim]).unwrap();
            w *= b.weights[label.0[depth] - 1];
        }
        total += w * value;
    }
    total
}

pub fn interior_design<R: Rng>(tree: &InterpTree<f64>, rng: &mut R, margin: f64) -> Vec<f64> {
    let mut rho = Vec::new();
    for slot in 0..tree.internal_count() {
        rho.extend(interior_point(tree.slot_polytope(slot), rng, margin));
    }
    rho
}

pub fn annulus_error(level: u32) -> (f64, f64) {
    let f = 2usize.pow(level);
    let geometry = SectorGeometry::default();
    let mesh = generate_structured(geometry, 10 * f, f, 4 * f).unwrap();
    let h = mesh.mean_edge_length();
    let model = FemModel::new(mesh, SideCondition::Periodic);
    let tree = rotor_tree(true);
    let rho = uniform_vertex_design(&model, &tree, &[3, 2, 1]);
    let st = model.solve_newton(&tree, &rho, 1.0, NewtonOptions { tol: 1e-12, max_iter: 50 }, None).unwrap();
    assert_eq!(st.newton_iterations, 1);
    let j = tree.catalogue.get(tree.catalogue.index_of("conductor_pos").unwrap()).current_density;
    let exact = AnnulusSolution::new(geometry.r_shaft, geometry.r_rotor, geometry.r_outer, MU0 * j);
    let mesh = model.mesh();
    let mut err2 = 0.0;
    for (e, t) in mesh.triangles.iter().enumerate() {
        let area = mesh.area(e);
        for (lam, w) in DUNAVANT4 {
            let mut x = [0.0; 2];
            let mut ah = 0.0;
            for k in 0..3 {
                x[0] += lam[k] * mesh.nodes[t[k]][0];
                x[1] += lam[k] * mesh.nodes[t[k]][1];
                ah += lam[k] * st.a[t[k]];
            }
            let d = ah - exact.value(x[0].hypot(x[1]));
            err2 += w * area * d * d;
        }
    }
    (h, err2.sqrt())
}
