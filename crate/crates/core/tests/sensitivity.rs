mod common;

use common::*;
use mmtopo::fem::{FemModel, NewtonOptions, SideCondition};
use mmtopo::interp::{build_tree, TreeSpec};
use mmtopo::linalg::dot;
use mmtopo::materials::{default_catalogue, MaterialCatalogue, MaterialsConfig};
use mmtopo::mesh::{generate_structured, SectorGeometry};
use mmtopo::polytope::PolytopeSpec;
use mmtopo::sensitivity::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tight() -> NewtonOptions {
    NewtonOptions {
        tol: 1e-12,
        max_iter: 50,
    }
}

#[test]
fn objective_weights_and_values() {
    assert_eq!(objective(3.0, -2.0, 1.0), 3.0);
    assert_eq!(objective(3.0, -2.0, -1.0), 2.0);
    assert_eq!(objective(3.0, -2.0, 0.0), 2.5);
    assert_eq!(case_weights(0.4, SignConvention::Corrected), (0.7, -0.3));
    let (wp, wm) = case_weights(0.4, SignConvention::AsPrinted);
    let (cp, cm) = case_weights(0.4, SignConvention::Corrected);
    assert_eq!(wp, cp);
    assert_eq!(wm, -cm);
    let spec = ObjectiveSpec::new(-0.2);
    assert_eq!(spec.value(1.0, 2.0), 0.4 * 1.0 + (-0.6) * 2.0);
}

#[test]
fn zero_rhs_gives_zero_adjoint() {
    let model = small_model(SideCondition::AntiPeriodic);
    let tree = rotor_tree(false);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rho = random_design(&model, &tree, &mut rng);
    let st = model.solve_newton(&tree, &rho, 1.0, tight(), None).unwrap();
    let mats = model.element_materials(&tree, &rho).unwrap();
    let lam = solve_adjoint_with(&model, &tree, &mats, &st, &vec![0.0; model.n_dofs()]).unwrap();
    assert!(lam.iter().all(|&x| x == 0.0));
}

#[test]
fn linear_adjoint_satisfies_reciprocity() {
    let model = small_model(SideCondition::AntiPeriodic);
    let tree = rotor_tree(true);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let rho = random_design(&model, &tree, &mut rng);
    let st = model.solve_newton(&tree, &rho, 1.0, tight(), None).unwrap();
    let phi = model.compute_flux(&st);
    assert!((dot(model.flux_vector(), &st.u) - phi).abs() <= 1e-14 * phi.abs().max(1e-12));
    // phi = c^T K^-1 f = lambda^T f
    let lam = solve_adjoint(&model, &tree, &rho, &st).unwrap();
    let f: Vec<f64> = model
        .assemble(&tree, &rho, &vec![0.0; model.n_dofs()], 1.0, false)
        .unwrap()
        .residual
        .iter()
        .map(|r| -r)
        .collect();
    assert!((dot(&lam, &f) - phi).abs() <= 1e-10 * phi.abs());
}

fn scaled_tree(scale: f64) -> mmtopo::interp::MaterialTree {
    let cat = MaterialCatalogue::from_config(&MaterialsConfig {
        current_density: 1e7 * scale,
        ..Default::default()
    })
    .unwrap();
    build_tree(&TreeSpec::recursive_rotor(), &cat).unwrap()
}

#[test]
fn nonlinear_adjoint_predicts_load_scaling() {
    let model = small_model(SideCondition::AntiPeriodic);
    let tree = scaled_tree(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let rho = random_design(&model, &tree, &mut rng);
    for s in [1.0, -1.0] {
        let st = model.solve_newton(&tree, &rho, s, tight(), None).unwrap();
        let lam = solve_adjoint(&model, &tree, &rho, &st).unwrap();
        let predicted = load_scaling_sensitivity(&model, &tree, &rho, &st, &lam).unwrap();
        let h = 1e-4;
        let flux = |t: f64| {
            let tr = scaled_tree(1.0 + t);
            let st = model.solve_newton(&tr, &rho, s, tight(), Some(&st.u)).unwrap();
            model.compute_flux(&st)
        };
        let fd = (flux(h) - flux(-h)) / (2.0 * h);
        assert!(predicted.abs() > 0.0);
        assert!((fd - predicted).abs() <= 1e-6 * fd.abs(), "fd {fd} vs adjoint {predicted}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let linear = check_gradients(50, 3, false, 0.3).unwrap();
    assert!(linear.max_relative_error <= 1e-4, "{linear:?}");
    let nonlinear = check_gradients(50, 4, true, -0.6).unwrap();
    assert!(nonlinear.max_relative_error <= 1e-3, "{nonlinear:?}");
    assert_eq!(linear.components % 6, 0);
}

#[test]
fn gradient_is_linear_in_gamma() {
    let model = small_model(SideCondition::AntiPeriodic);
    let tree = rotor_tree(false);
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let rho = random_design(&model, &tree, &mut rng);
    let both = model.solve_both_cases(&tree, &rho, tight(), None).unwrap();
    let (gp, gm) = case_gradients(&model, &tree, &rho, &both.plus, &both.minus).unwrap();
    for gamma in [-1.0, -0.35, 0.0, 0.8, 1.0] {
        let g = design_gradient(&model, &tree, &rho, &both.plus, &both.minus, ObjectiveSpec::new(gamma)).unwrap();
        let (wp, wm) = ((gamma + 1.0) / 2.0, (gamma - 1.0) / 2.0);
        let scale = gp.max_abs().max(gm.max_abs());
        for i in 0..g.values.len() {
            let expected = wp * gp.values[i] + wm * gm.values[i];
            assert!((g.values[i] - expected).abs() <= 1e-14 * scale);
        }
    }
}

#[test]
fn airgap_elements_get_zero_gradient() {
    let model = small_model(SideCondition::AntiPeriodic);
    let tree = rotor_tree(false);
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let rho = random_design(&model, &tree, &mut rng);
    let both = model.solve_both_cases(&tree, &rho, tight(), None).unwrap();
    let g = design_gradient(&model, &tree, &rho, &both.plus, &both.minus, ObjectiveSpec::new(0.5)).unwrap();
    assert_eq!(g.values.len(), model.design_elements().len() * tree.design_len());
    assert!(g.values.iter().all(|v| v.is_finite()));
    let mut airgap = 0;
    for e in 0..model.mesh().element_count() {
        let local = g.for_mesh_element(&model, e);
        if model.is_design(e) {
            assert_eq!(local, g.element(model.design_index(e).unwrap()));
        } else {
            airgap += 1;
            assert!(local.iter().all(|&x| x == 0.0));
        }
    }
    assert!(airgap > 0);
}

#[test]
fn toy_problem_is_stationary() {
    // two design triangles carrying either of two opposed magnets: at gamma = 0
    // both supply cases see the same field, so J vanishes identically
    let mesh = generate_structured(SectorGeometry::default(), 1, 1, 1).unwrap();
    let model = FemModel::new(mesh, SideCondition::AntiPeriodic);
    assert_eq!(model.design_elements().len(), 2);
    let mut spec = TreeSpec { nodes: Vec::new() };
    spec.internal(&[], PolytopeSpec::Segment { a: 0.0, b: 1.0 })
        .leaf(&[1], "pm_000")
        .leaf(&[2], "pm_180");
    let tree = build_tree(&spec, &default_catalogue()).unwrap();
    let rho = vec![0.3, 0.55];
    let both = model.solve_both_cases(&tree, &rho, tight(), None).unwrap();
    let (gp, _) = case_gradients(&model, &tree, &rho, &both.plus, &both.minus).unwrap();
    assert!(gp.max_abs() > 0.0);
    let g = design_gradient(&model, &tree, &rho, &both.plus, &both.minus, ObjectiveSpec::new(0.0)).unwrap();
    assert!(g.max_abs() <= 1e-8 * gp.max_abs(), "{:?}", g.values);
}
