//! Nonlinear 2D magnetostatics on a sector mesh with first-order triangles.
//!
//! The unknown is the out-of-plane vector potential `a` with `B = curl a =
//! (da/dy, -da/dx)`. The weak residual per test function `w` is
//!
//! `R(w) = int nu0 (B - Jp(B)) . curl w - s Jz w`
//!
//! where `Jp` and `Jz` come from the interpolation tree and `s = +-1` is the
//! supply sign. Both arcs carry `a = 0`; the radial edges are tied by a
//! master/slave reduction (`a_slave = -a_master` when anti-periodic).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::{Interpolant, MaterialTree, PropertyValue, TreeError};
use crate::linalg::{norm2, LinalgError, SymmetricFactor, SymmetricPattern};
use crate::materials::NU0;
use crate::mesh::{Region, SectorMesh};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e}, target {target:e})")]
    NewtonDivergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },
    #[error("singular system: {0}")]
    SingularSystem(#[from] LinalgError),
    #[error("design field has {got} values, expected {expected}")]
    DesignSize { expected: usize, got: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideCondition {
    /// `a(slave) = -a(master)`: one pole of an alternating machine.
    #[default]
    AntiPeriodic,
    /// `a(slave) = a(master)`.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// Geometric data of one first-order triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    /// `curl N_i = (dN_i/dy, -dN_i/dx)` for the three shape functions.
    pub curl: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(p: [[f64; 2]; 3]) -> Self {
        let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
        let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        // rows of the inverse Jacobian are the gradients of N_1 and N_2
        let g1 = [e2[1] / det, -e2[0] / det];
        let g2 = [-e1[1] / det, e1[0] / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        let curl = [g0, g1, g2].map(|g| [g[1], -g[0]]);
        Self {
            area: 0.5 * det,
            curl,
        }
    }

    pub fn flux_density(&self, a: [f64; 3]) -> [f64; 2] {
        let mut b = [0.0; 2];
        for i in 0..3 {
            b[0] += a[i] * self.curl[i][0];
            b[1] += a[i] * self.curl[i][1];
        }
        b
    }

    /// Local residual for flux density `b` and the material state `prop` at `b`.
    pub fn residual(&self, b: [f64; 2], prop: &PropertyValue, load_sign: f64) -> [f64; 3] {
        let h = [
            NU0 * (b[0] - prop.polarization[0]),
            NU0 * (b[1] - prop.polarization[1]),
        ];
        let load = load_sign * prop.current_density * self.area / 3.0;
        let mut r = [0.0; 3];
        for i in 0..3 {
            r[i] = self.area * (h[0] * self.curl[i][0] + h[1] * self.curl[i][1]) - load;
        }
        r
    }

    /// Local tangent `area nu0 curl_i^T (I - dJp/dB) curl_j`.
    pub fn stiffness(&self, prop: &PropertyValue) -> [[f64; 3]; 3] {
        let d = prop.d_polarization;
        let nu = [
            [NU0 * (1.0 - d[0][0]), -NU0 * d[0][1]],
            [-NU0 * d[1][0], NU0 * (1.0 - d[1][1])],
        ];
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            let ci = self.curl[i];
            for j in 0..3 {
                let cj = self.curl[j];
                let nc = [nu[0][0] * cj[0] + nu[0][1] * cj[1], nu[1][0] * cj[0] + nu[1][1] * cj[1]];
                k[i][j] = self.area * (ci[0] * nc[0] + ci[1] * nc[1]);
            }
        }
        k
    }
}

/// Converged (or intermediate) solution for one supply sign.
#[derive(Debug, Clone, PartialEq)]
pub struct FemState {
    /// Reduced degrees of freedom.
    pub u: Vec<f64>,
    /// Nodal vector potential (Wb/m), constraints applied.
    pub a: Vec<f64>,
    /// Flux density per element (T).
    pub b: Vec<[f64; 2]>,
    pub load_sign: f64,
    pub newton_iterations: usize,
    pub residual_norm: f64,
    pub load_norm: f64,
}

pub struct Assembly {
    pub residual: Vec<f64>,
    /// Jacobian values in the model's sparsity pattern.
    pub jacobian: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BothCases {
    pub plus: FemState,
    pub minus: FemState,
    pub phi_plus: f64,
    pub phi_minus: f64,
}

/// Leaf weights `(w, catalogue index)` per mesh element; empty for air.
#[derive(Debug, Clone)]
pub struct ElementMaterials {
    leaves: Vec<Vec<(f64, usize)>>,
}

impl ElementMaterials {
    pub fn property(&self, tree: &MaterialTree, e: usize, b: [f64; 2]) -> PropertyValue {
        let mut out = PropertyValue::default();
        for &(w, i) in &self.leaves[e] {
            out.add_scaled(w, &tree.material(i).property(b));
        }
        out
    }
}

/// Mesh plus boundary treatment and precomputed assembly data.
#[derive(Debug, Clone)]
pub struct FemModel {
    mesh: SectorMesh,
    side: SideCondition,
    node_dof: Vec<Option<(usize, f64)>>,
    n_dofs: usize,
    elements: Vec<ElementGeometry>,
    design_elements: Vec<usize>,
    design_index: Vec<Option<usize>>,
    pattern: SymmetricPattern,
    slots: Vec<[[usize; 3]; 3]>,
    flux_vector: Vec<f64>,
}

const NO_SLOT: usize = usize::MAX;

impl FemModel {
    pub fn new(mesh: SectorMesh, side: SideCondition) -> Self {
        let nn = mesh.nodes.len();
        let mut dirichlet = vec![false; nn];
        for &i in mesh.inner_arc.iter().chain(&mesh.outer_arc) {
            dirichlet[i] = true;
        }
        let mut master_of = vec![None; nn];
        for (&m, &s) in mesh.master_edge.iter().zip(&mesh.slave_edge) {
            if !dirichlet[s] && m != s {
                master_of[s] = Some(m);
            }
        }
        let mut node_dof = vec![None; nn];
        let mut n_dofs = 0;
        for i in 0..nn {
            if !dirichlet[i] && master_of[i].is_none() {
                node_dof[i] = Some((n_dofs, 1.0));
                n_dofs += 1;
            }
        }
        let coef = match side {
            SideCondition::AntiPeriodic => -1.0,
            SideCondition::Periodic => 1.0,
        };
        for i in 0..nn {
            if let Some(m) = master_of[i] {
                node_dof[i] = node_dof[m].map(|(d, c)| (d, coef * c));
            }
        }

        let elements: Vec<ElementGeometry> = mesh
            .triangles
            .iter()
            .map(|t| ElementGeometry::new(t.map(|i| mesh.nodes[i])))
            .collect();

        let mut entries = Vec::new();
        for t in &mesh.triangles {
            for &i in t {
                for &j in t {
                    if let (Some((di, _)), Some((dj, _))) = (node_dof[i], node_dof[j]) {
                        entries.push((di, dj));
                    }
                }
            }
        }
        let pattern = SymmetricPattern::from_entries(n_dofs, &entries);
        let slots = mesh
            .triangles
            .iter()
            .map(|t| {
                let mut s = [[NO_SLOT; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        if let (Some((di, _)), Some((dj, _))) = (node_dof[t[a]], node_dof[t[b]]) {
                            s[a][b] = pattern.slot(di, dj).expect("entry is in the pattern");
                        }
                    }
                }
                s
            })
            .collect();

        let mut flux_vector = vec![0.0; n_dofs];
        if let Some((d, c)) = node_dof[mesh.probe_left] {
            flux_vector[d] += c;
        }
        if let Some((d, c)) = node_dof[mesh.probe_right] {
            flux_vector[d] -= c;
        }

        let design_elements = mesh.design_elements();
        let mut design_index = vec![None; mesh.triangles.len()];
        for (k, &e) in design_elements.iter().enumerate() {
            design_index[e] = Some(k);
        }

        Self {
            mesh,
            side,
            node_dof,
            n_dofs,
            elements,
            design_elements,
            design_index,
            pattern,
            slots,
            flux_vector,
        }
    }

    pub fn mesh(&self) -> &SectorMesh {
        &self.mesh
    }

    pub fn side(&self) -> SideCondition {
        self.side
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn pattern(&self) -> &SymmetricPattern {
        &self.pattern
    }

    pub fn element(&self, e: usize) -> &ElementGeometry {
        &self.elements[e]
    }

    /// Indices of the design elements; design element `k` is mesh element `design_elements()[k]`.
    pub fn design_elements(&self) -> &[usize] {
        &self.design_elements
    }

    pub fn design_index(&self, e: usize) -> Option<usize> {
        self.design_index[e]
    }

    pub fn node_dof(&self, node: usize) -> Option<(usize, f64)> {
        self.node_dof[node]
    }

    /// `d phi / d u`, the reduced flux-extraction vector.
    pub fn flux_vector(&self) -> &[f64] {
        &self.flux_vector
    }

    /// Nodal values from reduced dofs.
    pub fn expand(&self, u: &[f64]) -> Vec<f64> {
        self.node_dof
            .iter()
            .map(|nd| nd.map_or(0.0, |(d, c)| c * u[d]))
            .collect()
    }

    pub fn local_values(&self, e: usize, u: &[f64]) -> [f64; 3] {
        self.mesh.triangles[e].map(|i| self.node_dof[i].map_or(0.0, |(d, c)| c * u[d]))
    }

    /// Adds a local vector into a reduced one.
    pub fn scatter(&self, e: usize, local: [f64; 3], global: &mut [f64]) {
        for (k, &i) in self.mesh.triangles[e].iter().enumerate() {
            if let Some((d, c)) = self.node_dof[i] {
                global[d] += c * local[k];
            }
        }
    }

    fn check_design(&self, tree: &MaterialTree, rho: &[f64]) -> Result<(), FemError> {
        let expected = self.design_elements.len() * tree.design_len();
        if rho.len() != expected {
            return Err(FemError::DesignSize {
                expected,
                got: rho.len(),
            });
        }
        Ok(())
    }

    /// Material state of element `e` at flux density `b`; airgap elements are air.
    pub fn element_property(
        &self,
        tree: &MaterialTree,
        rho: &[f64],
        e: usize,
        b: [f64; 2],
    ) -> Result<PropertyValue, TreeError> {
        match self.design_index[e] {
            Some(k) => {
                let n = tree.design_len();
                tree.eval_full(&rho[k * n..(k + 1) * n], b)
            }
            None => Ok(PropertyValue::default()),
        }
    }

    /// Leaf weights of every element for a fixed design.
    pub fn element_materials(&self, tree: &MaterialTree, rho: &[f64]) -> Result<ElementMaterials, FemError> {
        self.check_design(tree, rho)?;
        let n = tree.design_len();
        let leaves = (0..self.elements.len())
            .into_par_iter()
            .map(|e| match self.design_index[e] {
                Some(k) => Ok(tree
                    .tree
                    .leaf_products(&rho[k * n..(k + 1) * n])?
                    .into_iter()
                    .filter(|(w, _)| *w != 0.0)
                    .map(|(w, &i)| (w, i))
                    .collect()),
                None => Ok(Vec::new()),
            })
            .collect::<Result<_, TreeError>>()?;
        Ok(ElementMaterials { leaves })
    }

    /// Residual and (optionally) Jacobian of the reduced system at `u`.
    pub fn assemble(
        &self,
        tree: &MaterialTree,
        rho: &[f64],
        u: &[f64],
        load_sign: f64,
        with_jacobian: bool,
    ) -> Result<Assembly, FemError> {
        let mats = self.element_materials(tree, rho)?;
        Ok(self.assemble_with(tree, &mats, u, load_sign, with_jacobian))
    }

    /// [`FemModel::assemble`] with precomputed material weights.
    pub fn assemble_with(
        &self,
        tree: &MaterialTree,
        mats: &ElementMaterials,
        u: &[f64],
        load_sign: f64,
        with_jacobian: bool,
    ) -> Assembly {
        let local: Vec<([f64; 3], Option<[[f64; 3]; 3]>)> = (0..self.elements.len())
            .into_par_iter()
            .with_min_len(64)
            .map(|e| {
                let geom = &self.elements[e];
                let b = geom.flux_density(self.local_values(e, u));
                let prop = mats.property(tree, e, b);
                let r = geom.residual(b, &prop, load_sign);
                let k = with_jacobian.then(|| geom.stiffness(&prop));
                (r, k)
            })
            .collect();

        // sequential scatter keeps the summation order fixed
        let mut residual = vec![0.0; self.n_dofs];
        let mut values = with_jacobian.then(|| vec![0.0; self.pattern.nnz()]);
        for (e, (r, k)) in local.into_iter().enumerate() {
            self.scatter(e, r, &mut residual);
            if let (Some(values), Some(k)) = (values.as_mut(), k) {
                let t = &self.mesh.triangles[e];
                let coef = t.map(|i| self.node_dof[i].map_or(0.0, |(_, c)| c));
                for a in 0..3 {
                    for bb in 0..3 {
                        let s = self.slots[e][a][bb];
                        if s != NO_SLOT {
                            values[s] += coef[a] * coef[bb] * k[a][bb];
                        }
                    }
                }
            }
        }
        Assembly {
            residual,
            jacobian: values,
        }
    }

    pub fn factor_jacobian(&self, values: &[f64]) -> Result<SymmetricFactor, FemError> {
        Ok(self.pattern.factor(values)?)
    }

    /// Damped Newton iteration with step halving on the residual norm.
    pub fn solve_newton(
        &self,
        tree: &MaterialTree,
        rho: &[f64],
        load_sign: f64,
        options: NewtonOptions,
        initial: Option<&[f64]>,
    ) -> Result<FemState, FemError> {
        let mats = self.element_materials(tree, rho)?;
        self.solve_newton_with(tree, &mats, load_sign, options, initial)
    }

    pub fn solve_newton_with(
        &self,
        tree: &MaterialTree,
        mats: &ElementMaterials,
        load_sign: f64,
        options: NewtonOptions,
        initial: Option<&[f64]>,
    ) -> Result<FemState, FemError> {
        let zeros = vec![0.0; self.n_dofs];
        let load_norm = norm2(&self.assemble_with(tree, mats, &zeros, load_sign, false).residual);
        let target = if load_norm > 0.0 {
            options.tol * load_norm
        } else {
            1e-12
        };
        let mut u = match initial {
            Some(u0) if u0.len() == self.n_dofs => u0.to_vec(),
            _ => zeros,
        };
        let mut r = self.assemble_with(tree, mats, &u, load_sign, false).residual;
        let mut rn = norm2(&r);
        let mut iterations = 0;
        while rn > target {
            if iterations == options.max_iter {
                return Err(FemError::NewtonDivergence {
                    iterations,
                    residual: rn,
                    target,
                });
            }
            let jac = self
                .assemble_with(tree, mats, &u, load_sign, true)
                .jacobian
                .expect("jacobian requested");
            let factor = self.factor_jacobian(&jac)?;
            let neg: Vec<f64> = r.iter().map(|x| -x).collect();
            let du = factor.solve(&neg);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + t * d).collect();
                let rt = self.assemble_with(tree, mats, &trial, load_sign, false).residual;
                let rtn = norm2(&rt);
                if rtn < rn || t < 1e-6 {
                    u = trial;
                    r = rt;
                    rn = rtn;
                    break;
                }
                t *= 0.5;
            }
            iterations += 1;
        }
        Ok(self.state(u, load_sign, iterations, rn, load_norm))
    }

    fn state(
        &self,
        u: Vec<f64>,
        load_sign: f64,
        newton_iterations: usize,
        residual_norm: f64,
        load_norm: f64,
    ) -> FemState {
        let b = (0..self.elements.len())
            .map(|e| self.elements[e].flux_density(self.local_values(e, &u)))
            .collect();
        FemState {
            a: self.expand(&u),
            u,
            b,
            load_sign,
            newton_iterations,
            residual_norm,
            load_norm,
        }
    }

    /// Outward flux per unit depth through the rotor arc: `a(P_left) - a(P_right)`.
    pub fn compute_flux(&self, state: &FemState) -> f64 {
        state.a[self.mesh.probe_left] - state.a[self.mesh.probe_right]
    }

    /// Independent solves for both supply signs, run concurrently.
    pub fn solve_both_cases(
        &self,
        tree: &MaterialTree,
        rho: &[f64],
        options: NewtonOptions,
        warm: Option<(&[f64], &[f64])>,
    ) -> Result<BothCases, FemError> {
        let mats = self.element_materials(tree, rho)?;
        let (plus, minus) = rayon::join(
            || self.solve_newton_with(tree, &mats, 1.0, options, warm.map(|w| w.0)),
            || self.solve_newton_with(tree, &mats, -1.0, options, warm.map(|w| w.1)),
        );
        let (plus, minus) = (plus?, minus?);
        Ok(BothCases {
            phi_plus: self.compute_flux(&plus),
            phi_minus: self.compute_flux(&minus),
            plus,
            minus,
        })
    }

    pub fn is_design(&self, e: usize) -> bool {
        self.mesh.regions[e] == Region::Design
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{build_tree, TreeSpec};
    use crate::materials::default_catalogue;
    use crate::mesh::{generate_sector_mesh, SectorGeometry};

    #[test]
    fn zero_design_residual_vanishes() {
        let mesh = generate_sector_mesh(SectorGeometry::default(), 100).unwrap();
        let model = FemModel::new(mesh, SideCondition::AntiPeriodic);
        let tree = build_tree(&TreeSpec::recursive_rotor(), &default_catalogue()).unwrap();
        // every design element on the air vertex of the root triangle
        let air = tree.tree.vertex_design(&crate::interp::NeveuLabel(vec![1])).unwrap();
        let rho: Vec<f64> = model
            .design_elements()
            .iter()
            .flat_map(|_| air.0.clone())
            .collect();
        let asm = model
            .assemble(&tree, &rho, &vec![0.0; model.n_dofs()], 1.0, false)
            .unwrap();
        assert!(asm.residual.iter().all(|&r| r == 0.0));
        let st = model
            .solve_newton(&tree, &rho, 1.0, NewtonOptions::default(), None)
            .unwrap();
        assert_eq!(st.newton_iterations, 0);
        assert_eq!(model.compute_flux(&st), 0.0);
    }

    #[test]
    fn flux_of_manufactured_angle_field() {
        let mesh = generate_sector_mesh(SectorGeometry::default(), 200).unwrap();
        let pole = mesh.geometry.pole_angle;
        let model = FemModel::new(mesh.clone(), SideCondition::AntiPeriodic);
        let c = 0.37;
        let a: Vec<f64> = mesh.nodes.iter().map(|p| c * p[1].atan2(p[0])).collect();
        let state = FemState {
            u: Vec::new(),
            b: Vec::new(),
            a,
            load_sign: 1.0,
            newton_iterations: 0,
            residual_norm: 0.0,
            load_norm: 0.0,
        };
        assert!((model.compute_flux(&state) - c * pole).abs() < 1e-14);
    }

    #[test]
    fn anti_periodic_flux_vector() {
        let mesh = generate_sector_mesh(SectorGeometry::default(), 200).unwrap();
        let model = FemModel::new(mesh, SideCondition::AntiPeriodic);
        let nz: Vec<f64> = model.flux_vector().iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nz, vec![-2.0]);
    }
}
