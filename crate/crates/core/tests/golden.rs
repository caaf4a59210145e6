//! Stored values from a high-precision enumeration, compared at 1e-12.

use isinglab::exponents::{averaged_arm, shell_sum};
use isinglab::gibbs::{critical_beta_2d, enumerate_measure, magnetization_plus, BoundaryCondition, Method};
use isinglab::glauber::{RateFamily, RateModel};
use isinglab::lattice::Geometry;
use isinglab::spectral::build_generator;
use serde_json::Value;

fn golden(name: &str) -> Value {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn critical_beta_matches_stored() {
    let g = golden("arm_d2.json");
    assert!((critical_beta_2d() - num(&g["beta"])).abs() < 1e-15);
}

#[test]
fn plus_magnetization_small_cubes() {
    let g = golden("arm_d2.json");
    let b = critical_beta_2d();
    for l in [0usize, 1] {
        let (v, se) = magnetization_plus(l, 2, &Method::Exact, b).unwrap();
        assert_eq!(se, 0.0);
        assert!((v - num(&g["magnetization_plus"][l.to_string()])).abs() < 1e-12, "L={l}: {v}");
    }
    let m = enumerate_measure(&Geometry::cube(2, 1).unwrap(), &BoundaryCondition::Plus, b).unwrap();
    for (x, want) in g["site_magnetization_L1"].as_array().unwrap().iter().enumerate() {
        assert!((m.mean_spin(x) - num(want)).abs() < 1e-12);
    }
}

#[test]
fn averaged_arm_small_cubes() {
    let g = golden("arm_d2.json");
    let b = critical_beta_2d();
    for l in [0usize, 1] {
        let (v, _) = averaged_arm(2, l, &Method::Exact, b).unwrap();
        assert!((v - num(&g["averaged_arm"][l.to_string()])).abs() < 1e-12, "L={l}: {v}");
    }
    assert_eq!(averaged_arm(2, 1, &Method::Exact, 0.0).unwrap(), (0.0, 0.0));
}

#[test]
fn spectral_gaps() {
    let g = golden("spectral_gaps.json");
    let b = critical_beta_2d();
    let cases = [
        ("torus_2x2", Geometry::torus(2, 1).unwrap(), BoundaryCondition::Periodic),
        ("free_3x3", Geometry::cube(2, 1).unwrap(), BoundaryCondition::Free),
    ];
    for (key, geom, bc) in cases {
        for family in [RateFamily::Heatbath, RateFamily::Metropolis] {
            let sys = isinglab::gibbs::SpinSystem::new(geom.clone(), bc.clone()).unwrap();
            let model = RateModel::for_system(family, b, &sys).unwrap();
            let gen = build_generator(&geom, &bc, &model).unwrap();
            let want = num(&g[key][family.name()]);
            let dense = gen.spectral_gap().unwrap();
            assert!((dense - want).abs() < 1e-12, "{key} {family:?}: {dense} vs {want}");
            let (lanczos, _) = gen.gap_lanczos(gen.state_count(), 3).unwrap();
            assert!((lanczos - want).abs() < 1e-8);
            let power = gen.gap_power_iteration(200_000, 3).unwrap();
            assert!((power - want).abs() < 1e-8, "power iteration {power}");
        }
    }
}

#[test]
fn shell_sum_plateau() {
    let g = golden("shell_sum_d2_delta1.json");
    for (l, want) in g["scaled"].as_object().unwrap() {
        let l: u64 = l.parse().unwrap();
        let got = shell_sum(2, 1.0, l) * l as f64;
        assert!((got - num(want)).abs() < 1e-12 * num(want), "L={l}: {got}");
    }
    // the plateau is ζ(2)
    let top = shell_sum(2, 1.0, 100_000) * 1e5;
    assert!((top - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-3);
}
