use mmtopo::materials::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reluctance_map(m: &MaterialModel, b: [f64; 2]) -> [f64; 2] {
    let j = m.polarization(b);
    [NU0 * (b[0] - j[0]), NU0 * (b[1] - j[1])]
}

#[test]
fn magnet_orientations() {
    let s3 = 3f64.sqrt() / 2.0;
    for (angle, jp) in [(0.0, [1.0, 0.0]), (90.0, [0.0, 1.0]), (30.0, [s3, 0.5])] {
        let m = pm_model(angle);
        let got = m.polarization([0.3, -2.0]);
        assert!((got[0] - jp[0]).abs() < 1e-15 && (got[1] - jp[1]).abs() < 1e-15, "{angle}: {got:?}");
        assert_eq!(m.d_polarization_db([0.3, -2.0]), [[0.0; 2]; 2]);
        assert_eq!(m.current_density, 0.0);
        assert!(m.is_linear());
    }
}

#[test]
fn steel_formula_values() {
    let steel = steel_model(1.9, 0.999).unwrap();
    let jp = steel.polarization([1.0, 0.0]);
    let direct = 1.9 * 0.999 / (1.9 + 0.999);
    assert!((jp[0] - direct).abs() < 1e-15 && jp[1] == 0.0);
    assert!((jp[0] - 0.6547).abs() < 5e-5);
    let far = steel.polarization([0.0, 1e9]);
    assert!((far[1] - 1.9).abs() < 1e-6);
    let d0 = steel.d_polarization_db([0.0, 0.0]);
    assert!((d0[0][0] - 0.999).abs() < 1e-15 && (d0[1][1] - 0.999).abs() < 1e-15 && d0[0][1] == 0.0);
    let mu_r = 1.0 / (1.0 - d0[0][0]);
    assert!((mu_r - 1000.0).abs() < 1e-9);
    assert!(!steel.is_linear());
}

#[test]
fn steel_tensor_matches_finite_differences() {
    let steel = steel_model(1.9, 0.999).unwrap();
    let h = 1e-7;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points = vec![[1e-6, 2e-6], [2.5, 0.0], [0.0, -2.5], [1.5, 2.0], [-0.1, 0.05]];
    for _ in 0..200 {
        points.push([rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
    }
    for b in points {
        let d = steel.d_polarization_db(b);
        for k in 0..2 {
            let mut hi = b;
            let mut lo = b;
            hi[k] += h;
            lo[k] -= h;
            let ph = steel.polarization(hi);
            let pl = steel.polarization(lo);
            for i in 0..2 {
                let fd = (ph[i] - pl[i]) / (2.0 * h);
                let scale = d[0][0].abs().max(d[1][1].abs());
                assert!((fd - d[i][k]).abs() <= 1e-5 * scale, "B {b:?} entry {i}{k}: fd {fd} vs {}", d[i][k]);
            }
        }
    }
}

#[test]
fn reluctance_map_is_strictly_monotone() {
    let cat = default_catalogue();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in &cat.entries {
        for _ in 0..10_000 {
            let b1 = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let b2 = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let h1 = reluctance_map(m, b1);
            let h2 = reluctance_map(m, b2);
            let ip = (h1[0] - h2[0]) * (b1[0] - b2[0]) + (h1[1] - h2[1]) * (b1[1] - b2[1]);
            assert!(ip > 0.0, "{}: {b1:?} {b2:?}", m.name);
        }
    }
}

#[test]
fn bounded_and_finite() {
    let cat = default_catalogue();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for m in &cat.entries {
        for _ in 0..1000 {
            let r = rng.gen_range(0.0..10.0);
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let b = [r * t.cos(), r * t.sin()];
            let j = m.polarization(b);
            let d = m.d_polarization_db(b);
            assert!(j.iter().chain(d.iter().flatten()).all(|x| x.is_finite()));
            let norm = j[0].hypot(j[1]);
            let bound = match m.kind {
                MaterialKind::Steel => 1.9,
                MaterialKind::Magnet => 1.0 + 1e-15,
                _ => 0.0,
            };
            assert!(norm <= bound, "{}: {norm}", m.name);
        }
    }
}

#[test]
fn catalogue_layout() {
    let cat = default_catalogue();
    assert_eq!(cat.len(), 16);
    for k in 0..12 {
        let m = cat.get(k);
        assert_eq!(m.kind, MaterialKind::Magnet);
        assert_eq!(m.name, format!("pm_{:03}", 30 * k));
        let t = (30.0 * k as f64).to_radians();
        let j = m.polarization([0.0, 0.0]);
        assert!((j[0] - t.cos()).abs() < 1e-15 && (j[1] - t.sin()).abs() < 1e-15);
    }
    assert_eq!(cat.get(12).current_density, 1e7);
    assert_eq!(cat.get(13).current_density, -1e7);
    assert_eq!(cat.get(14).kind, MaterialKind::Steel);
    assert_eq!(cat.get(15).kind, MaterialKind::Air);
    assert_eq!(cat.get(15).polarization([3.0, 1.0]), [0.0, 0.0]);
    assert_eq!(conductor_model(1).current_density, 1e7);
    assert_eq!(conductor_model(-1).polarization([1.0, 1.0]), [0.0, 0.0]);
    assert_eq!(air_model().current_density, 0.0);
    for m in &cat.entries {
        assert!(m.color.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

#[test]
fn invalid_steel_parameters() {
    assert!(matches!(steel_model(1.9, 1.0), Err(MaterialError::InvalidParameters(_))));
    assert!(matches!(steel_model(1.9, 0.0), Err(MaterialError::InvalidParameters(_))));
    assert!(matches!(steel_model(-1.0, 0.5), Err(MaterialError::InvalidParameters(_))));
    assert!(matches!(linear_steel_model(0.5), Err(MaterialError::InvalidParameters(_))));
    let bad = MaterialsConfig {
        steel_a: 1.5,
        ..Default::default()
    };
    assert!(MaterialCatalogue::from_config(&bad).is_err());
}

#[test]
fn linear_steel_has_initial_permeability() {
    let cat = MaterialCatalogue::from_config(&MaterialsConfig {
        linear_steel: true,
        ..Default::default()
    })
    .unwrap();
    let s = cat.get(14);
    assert!(s.is_linear());
    let j = s.polarization([2.0, 0.0]);
    assert!((j[0] - 2.0 * 0.999).abs() < 1e-12);
}
