//! Adjoint sensitivities of the dual-supply flux objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fem::{ElementMaterials, FemError, FemModel, FemState, NewtonOptions, SideCondition};
use crate::interp::{build_tree, MaterialTree, TreeSpec};
use crate::linalg::dot;
use crate::materials::{MaterialCatalogue, MaterialsConfig, NU0};
use crate::mesh::{generate_structured, SectorGeometry};

/// Which sign pattern combines the two fluxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// Maximize `(g+1)/2 phi+ + (g-1)/2 phi-`.
    #[default]
    Corrected,
    /// Maximize `(g+1)/2 phi+ - (g-1)/2 phi-`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub gamma: f64,
    #[serde(default)]
    pub convention: SignConvention,
}

impl ObjectiveSpec {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            convention: SignConvention::Corrected,
        }
    }

    /// Weights `(w+, w-)` with `J = w+ phi+ + w- phi-`.
    pub fn weights(&self) -> (f64, f64) {
        case_weights(self.gamma, self.convention)
    }

    pub fn value(&self, phi_plus: f64, phi_minus: f64) -> f64 {
        let (wp, wm) = self.weights();
        wp * phi_plus + wm * phi_minus
    }
}

pub fn case_weights(gamma: f64, convention: SignConvention) -> (f64, f64) {
    let wp = 0.5 * (gamma + 1.0);
    let wm = 0.5 * (gamma - 1.0);
    match convention {
        SignConvention::Corrected => (wp, wm),
        SignConvention::AsPrinted => (wp, -wm),
    }
}

/// `J = (gamma+1)/2 phi+ + (gamma-1)/2 phi-`, to be maximized.
pub fn objective(phi_plus: f64, phi_minus: f64, gamma: f64) -> f64 {
    ObjectiveSpec::new(gamma).value(phi_plus, phi_minus)
}

/// Gradient of a scalar with respect to every design coordinate, laid out
/// like the flat design vector (design element major).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityField {
    pub design_len: usize,
    pub values: Vec<f64>,
}

impl SensitivityField {
    pub fn zeros(design_elements: usize, design_len: usize) -> Self {
        Self {
            design_len,
            values: vec![0.0; design_elements * design_len],
        }
    }

    pub fn element(&self, k: usize) -> &[f64] {
        &self.values[k * self.design_len..(k + 1) * self.design_len]
    }

    /// Gradient of mesh element `e`; airgap elements get zeros.
    pub fn for_mesh_element(&self, model: &FemModel, e: usize) -> Vec<f64> {
        match model.design_index(e) {
            Some(k) => self.element(k).to_vec(),
            None => vec![0.0; self.design_len],
        }
    }

    pub fn combine(a: &Self, wa: f64, b: &Self, wb: f64) -> Self {
        Self {
            design_len: a.design_len,
            values: a
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| wa * x + wb * y)
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Solves `K^T lambda = c` with the converged tangent and the flux vector.
pub fn solve_adjoint(
    model: &FemModel,
    tree: &MaterialTree,
    rho: &[f64],
    state: &FemState,
) -> Result<Vec<f64>, FemError> {
    let mats = model.element_materials(tree, rho)?;
    solve_adjoint_with(model, tree, &mats, state, model.flux_vector())
}

/// Adjoint solve against an arbitrary right-hand side.
pub fn solve_adjoint_with(
    model: &FemModel,
    tree: &MaterialTree,
    mats: &ElementMaterials,
    state: &FemState,
    rhs: &[f64],
) -> Result<Vec<f64>, FemError> {
    if rhs.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; rhs.len()]);
    }
    // isotropic laws give a symmetric tangent, so K^T = K
    let jac = model
        .assemble_with(tree, mats, &state.u, state.load_sign, true)
        .jacobian
        .expect("jacobian requested");
    Ok(model.factor_jacobian(&jac)?.solve(rhs))
}

/// `d phi / d rho = -lambda^T dR/drho` for one supply sign.
pub fn flux_gradient(
    model: &FemModel,
    tree: &MaterialTree,
    rho: &[f64],
    state: &FemState,
    lambda: &[f64],
) -> Result<SensitivityField, FemError> {
    let n = tree.design_len();
    let design = model.design_elements();
    let per_element: Vec<Vec<f64>> = design
        .par_iter()
        .enumerate()
        .map(|(k, &e)| {
            let geom = model.element(e);
            let lam = model.local_values(e, lambda);
            let mut curl_lam = [0.0; 2];
            for i in 0..3 {
                curl_lam[0] += lam[i] * geom.curl[i][0];
                curl_lam[1] += lam[i] * geom.curl[i][1];
            }
            let lam_sum = lam[0] + lam[1] + lam[2];
            let drho = tree.eval_drho(&rho[k * n..(k + 1) * n], state.b[e])?;
            let mut g = Vec::with_capacity(n);
            for slot in drho {
                for d in slot {
                    // dR_i = -area nu0 dJp . curl_i - s area/3 dJz
                    let dr_lam = -geom.area * NU0 * (d.polarization[0] * curl_lam[0] + d.polarization[1] * curl_lam[1])
                        - state.load_sign * d.current_density * geom.area / 3.0 * lam_sum;
                    g.push(-dr_lam);
                }
            }
            Ok(g)
        })
        .collect::<Result<_, crate::interp::TreeError>>()?;
    Ok(SensitivityField {
        design_len: n,
        values: per_element.concat(),
    })
}

/// Single-case flux gradients `(g+, g-)`.
pub fn case_gradients(
    model: &FemModel,
    tree: &MaterialTree,
    rho: &[f64],
    plus: &FemState,
    minus: &FemState,
) -> Result<(SensitivityField, SensitivityField), FemError> {
    let mats = model.element_materials(tree, rho)?;
    let c = model.flux_vector();
    let (gp, gm) = rayon::join(
        || -> Result<_, FemError> {
            let lam = solve_adjoint_with(model, tree, &mats, plus, c)?;
            flux_gradient(model, tree, rho, plus, &lam)
        },
        || -> Result<_, FemError> {
            let lam = solve_adjoint_with(model, tree, &mats, minus, c)?;
            flux_gradient(model, tree, rho, minus, &lam)
        },
    );
    Ok((gp?, gm?))
}

/// `dJ/drho` combining both supply signs.
pub fn design_gradient(
    model: &FemModel,
    tree: &MaterialTree,
    rho: &[f64],
    plus: &FemState,
    minus: &FemState,
    objective: ObjectiveSpec,
) -> Result<SensitivityField, FemError> {
    let (gp, gm) = case_gradients(model, tree, rho, plus, minus)?;
    let (wp, wm) = objective.weights();
    Ok(SensitivityField::combine(&gp, wp, &gm, wm))
}

/// Predicted `d phi / d t` when every current density is scaled by `(1 + t)`.
pub fn load_scaling_sensitivity(
    model: &FemModel,
    tree: &MaterialTree,
    rho: &[f64],
    state: &FemState,
    lambda: &[f64],
) -> Result<f64, FemError> {
    // R_0 - R_s isolates the supply term s F
    let r_s = model.assemble(tree, rho, &state.u, state.load_sign, false)?.residual;
    let r_0 = model.assemble(tree, rho, &state.u, 0.0, false)?.residual;
    let f: Vec<f64> = r_0.iter().zip(&r_s).map(|(a, b)| a - b).collect();
    Ok(dot(lambda, &f))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub elements: usize,
    pub components: usize,
    pub nonlinear: bool,
    /// `max |g_adj - g_fd| / max |g_fd|`
    pub max_relative_error: f64,
    pub max_fd_magnitude: f64,
}

/// Small mesh with roughly `elements` triangles, at least half of them designable.
pub fn check_mesh(elements: usize) -> FemModel {
    let target = elements.max(8);
    let mut best = (usize::MAX, (2, 1, 2));
    for gap in 1..=2 {
        for design in 1..=16 {
            for sectors in 1..=32 {
                let count: usize = 2 * (design + gap) * sectors;
                let diff = count.abs_diff(target);
                if design >= gap && diff < best.0 {
                    best = (diff, (design, gap, sectors));
                }
            }
        }
    }
    let (d, g, s) = best.1;
    let mesh = generate_structured(SectorGeometry::default(), d, g, s).expect("default geometry is valid");
    FemModel::new(mesh, SideCondition::AntiPeriodic)
}

/// Compares adjoint gradients against central differences of the objective
/// for every design coordinate of a seeded random design.
pub fn check_gradients(elements: usize, seed: u64, nonlinear: bool, gamma: f64) -> Result<GradientCheck, FemError> {
    let model = check_mesh(elements);
    let config = MaterialsConfig {
        linear_steel: !nonlinear,
        ..Default::default()
    };
    let catalogue = MaterialCatalogue::from_config(&config).expect("default materials are valid");
    let tree = build_tree(&TreeSpec::recursive_rotor(), &catalogue)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = tree.design_len();
    let mut rho = Vec::with_capacity(model.design_elements().len() * n);
    for _ in model.design_elements() {
        let p = tree.tree.sample_design(&mut rng);
        rho.extend_from_slice(&p.0);
    }
    // keep samples off the boundary so central differences stay feasible
    let centroid = tree.tree.centroid_design();
    for (k, v) in rho.iter_mut().enumerate() {
        *v = 0.8 * *v + 0.2 * centroid.0[k % n];
    }

    let options = NewtonOptions {
        tol: 1e-12,
        max_iter: 50,
    };
    let spec = ObjectiveSpec::new(gamma);
    let both = model.solve_both_cases(&tree, &rho, options, None)?;
    let grad = design_gradient(&model, &tree, &rho, &both.plus, &both.minus, spec)?;
    let warm = (both.plus.u.clone(), both.minus.u.clone());

    let h = 1e-6;
    let fd: Vec<f64> = (0..rho.len())
        .into_par_iter()
        .map(|i| {
            let eval = |delta: f64| -> Result<f64, FemError> {
                let mut r = rho.clone();
                r[i] += delta;
                let s = model.solve_both_cases(&tree, &r, options, Some((&warm.0, &warm.1)))?;
                Ok(spec.value(s.phi_plus, s.phi_minus))
            };
            Ok((eval(h)? - eval(-h)?) / (2.0 * h))
        })
        .collect::<Result<_, FemError>>()?;

    let max_fd = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_err = fd
        .iter()
        .zip(&grad.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(GradientCheck {
        elements: model.mesh().element_count(),
        components: rho.len(),
        nonlinear,
        max_relative_error: if max_fd > 0.0 { max_err / max_fd } else { max_err },
        max_fd_magnitude: max_fd,
    })
}
