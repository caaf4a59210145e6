//! Library results against independent oracles: brute-force sums written
//! from coordinates, closed forms, and Monte Carlo against enumeration.

use isinglab::exponents::{autocorrelation_mc, fit_power_law, AutocorrConfig, FitOptions, ScalingSeries};
use isinglab::gibbs::{
    critical_beta_2d, enumerate_measure, magnetization_plus, two_point, BoundaryCondition, McBudget, Method,
    SpinConfig, SpinSystem,
};
use isinglab::glauber::{simulate_ct, verify_rate_axioms, RateFamily, RateModel};
use isinglab::inequalities::{
    conditional_entropy_identity, random_test_function, second_moment_identity, verify_bodineau_helffer,
    verify_efron_stein, ConditionalStructure,
};
use isinglab::lattice::Geometry;
use isinglab::rng;
use isinglab::spectral::{lsi_constant, Generator, LsiSearch};
use rand::Rng;
use rand_distr::StandardNormal;

fn generator(geom: Geometry, bc: BoundaryCondition, family: RateFamily, beta: f64) -> Generator {
    let sys = SpinSystem::new(geom, bc).unwrap();
    let model = RateModel::for_system(family, beta, &sys).unwrap();
    Generator::new(sys, model).unwrap()
}

fn spin_of(state: usize, x: usize) -> i64 {
    if state >> x & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Energy of a `side × side` box in lexicographic order, with every
/// missing neighbour replaced by the boundary value `omega(coords)`.
fn box_energy(side: i64, state: usize, outside: &dyn Fn(i64, i64) -> i64) -> i64 {
    let idx = |i: i64, j: i64| (i * side + j) as usize;
    let mut e = 0;
    for i in 0..side {
        for j in 0..side {
            let s = spin_of(state, idx(i, j));
            for (di, dj) in [(1, 0), (0, 1), (-1, 0), (0, -1)] {
                let (a, b) = (i + di, j + dj);
                if (0..side).contains(&a) && (0..side).contains(&b) {
                    if (di, dj) == (1, 0) || (di, dj) == (0, 1) {
                        e += s * spin_of(state, idx(a, b));
                    }
                } else {
                    e += s * outside(a, b);
                }
            }
        }
    }
    e
}

fn brute_log_partition(side: i64, beta: f64, outside: &dyn Fn(i64, i64) -> i64) -> (f64, Vec<f64>) {
    let n = (side * side) as usize;
    let weights: Vec<f64> = (0..1usize << n).map(|s| (beta * box_energy(side, s, outside) as f64).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mags = (0..n)
        .map(|x| weights.iter().enumerate().map(|(s, w)| w * spin_of(s, x) as f64).sum::<f64>() / z)
        .collect();
    (z.ln(), mags)
}

#[test]
fn enumeration_matches_brute_force_on_the_three_by_three_cube() {
    let b = critical_beta_2d();
    let geom = Geometry::cube(2, 1).unwrap();
    let cases: Vec<(BoundaryCondition, Box<dyn Fn(i64, i64) -> i64>)> = vec![
        (BoundaryCondition::Plus, Box::new(|_, _| 1)),
        (BoundaryCondition::Minus, Box::new(|_, _| -1)),
        (BoundaryCondition::Free, Box::new(|_, _| 0)),
    ];
    for (bc, outside) in cases {
        let m = enumerate_measure(&geom, &bc, b).unwrap();
        let (logz, mags) = brute_log_partition(3, b, outside.as_ref());
        assert!((m.log_partition() - logz).abs() < 1e-12, "{bc}");
        for (x, want) in mags.iter().enumerate() {
            assert!((m.mean_spin(x) - want).abs() < 1e-12);
        }
        assert!(m.normalization_error() < 1e-12);
    }
}

#[test]
fn plus_minus_symmetry_and_fkg_bounds() {
    let b = critical_beta_2d();
    let geom = Geometry::cube(2, 1).unwrap();
    let plus = enumerate_measure(&geom, &BoundaryCondition::Plus, b).unwrap();
    let minus = enumerate_measure(&geom, &BoundaryCondition::Minus, b).unwrap();
    let o = geom.origin();
    assert!((plus.mean_spin(o) + minus.mean_spin(o)).abs() < 1e-14);
    let nb = geom.boundary().len();
    let mut r = rng::stream(5, "fkg-test", 0);
    for _ in 0..200 {
        let omega: Vec<i8> = (0..nb).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect();
        let m = enumerate_measure(&geom, &BoundaryCondition::Fixed(omega), b).unwrap();
        for x in 0..geom.site_count() {
            let v = m.mean_spin(x);
            assert!(v <= plus.mean_spin(x) + 1e-14 && v >= minus.mean_spin(x) - 1e-14);
        }
    }
    let (m0, _) = magnetization_plus(0, 2, &Method::Exact, b).unwrap();
    let (m1, _) = magnetization_plus(1, 2, &Method::Exact, b).unwrap();
    assert!(m1 <= m0);
}

#[test]
fn sampler_matches_enumeration_on_sixteen_spins() {
    let b = critical_beta_2d();
    let geom = Geometry::torus(2, 2).unwrap();
    let exact = enumerate_measure(&geom, &BoundaryCondition::Periodic, b).unwrap();
    let x = geom.origin();
    let y = geom.neighbors(x)[0];
    let budget = McBudget::new(20, 5000, 17);
    let (v, se) = two_point(&geom, &BoundaryCondition::Periodic, x, y, &Method::Mc(budget), b).unwrap();
    assert!((v - exact.two_point(x, y)).abs() <= 3.0 * se, "{v} ± {se} vs {}", exact.two_point(x, y));

    let cube = Geometry::cube(2, 1).unwrap();
    let exact = enumerate_measure(&cube, &BoundaryCondition::Plus, b).unwrap().mean_spin(cube.origin());
    let (v, se) = magnetization_plus(1, 2, &Method::Mc(McBudget::new(20, 5000, 18)), b).unwrap();
    assert!((v - exact).abs() <= 3.0 * se, "{v} ± {se} vs {exact}");
}

#[test]
fn single_spin_flip_count_is_poisson_half() {
    let geom = Geometry::cube(2, 0).unwrap();
    let sys = SpinSystem::new(geom, BoundaryCondition::Free).unwrap();
    let model = RateModel::for_system(RateFamily::Heatbath, 0.9, &sys).unwrap();
    let horizon = 6.0;
    let counts: Vec<f64> = (0..10_000u64)
        .map(|k| simulate_ct(&model, &sys, &SpinConfig::all_plus(1), horizon, k).unwrap().flip_count() as f64)
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - horizon / 2.0).abs() <= 3.0 * (var / n).sqrt(), "{mean}");
}

/// Empirical law of `σ(t)` from a fixed start against `P_t 1_s`.
fn kernel_matches(t: f64, tolerance_sigmas: f64) {
    let b = critical_beta_2d();
    let geom = Geometry::torus(2, 1).unwrap();
    let gen = generator(geom.clone(), BoundaryCondition::Periodic, RateFamily::Heatbath, b);
    let sys = gen.system().clone();
    let start = SpinConfig::all_plus(4);
    let runs = 10_000u64;
    let mut hist = vec![0.0; 16];
    for k in 0..runs {
        let end = simulate_ct(gen.model(), &sys, &start, t, 1000 + k).unwrap().final_config;
        hist[end.to_state() as usize] += 1.0;
    }
    for s in 0..16 {
        let indicator: Vec<f64> = (0..16).map(|u| if u == s { 1.0 } else { 0.0 }).collect();
        let p = gen.semigroup_apply(&indicator, t).unwrap()[start.to_state() as usize];
        let freq = hist[s] / runs as f64;
        let se = (p * (1.0 - p) / runs as f64).sqrt().max(1e-4);
        assert!((freq - p).abs() <= tolerance_sigmas * se, "t={t} state {s}: {freq} vs {p}");
    }
}

#[test]
fn uniformized_kernel_matches_matrix_exponential() {
    kernel_matches(0.7, 4.0);
}

#[test]
fn long_runs_reach_the_stationary_table() {
    kernel_matches(50.0, 4.0);
}

#[test]
fn infinite_temperature_autocorrelation_is_exponential() {
    let times = vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0];
    let est = autocorrelation_mc(&AutocorrConfig {
        sides: vec![4, 4],
        family: RateFamily::Heatbath,
        beta: 0.0,
        times: times.clone(),
        replicas: 2000,
        seed: 4,
        burn_in: 10,
    })
    .unwrap();
    assert_eq!(est.values[0], 1.0);
    for (i, t) in times.iter().enumerate() {
        let want = (-t as f64).exp();
        assert!((est.values[i] - want).abs() <= 4.0 * est.stderrs[i] + 1e-15, "t={t}: {} vs {want}", est.values[i]);
    }
}

#[test]
fn synthetic_power_law_recovers_its_exponent() {
    let x: Vec<f64> = (1..=20).map(|i| i as f64).collect();
    for seed in 0..100u64 {
        let mut r = rng::stream(seed, "synthetic-fit", 0);
        let y: Vec<f64> = x.iter().map(|v| (1.0 + 0.01 * r.sample::<f64, _>(StandardNormal)) / v).collect();
        let se: Vec<f64> = y.iter().map(|v| 0.01 * v).collect();
        let s = ScalingSeries::new("synthetic", x.clone(), y, se).unwrap();
        let f = fit_power_law(&s, (1.0, 20.0), &FitOptions { bootstrap: 200, seed }).unwrap().fit.unwrap();
        assert!((f.exponent + 1.0).abs() <= 0.02, "seed {seed}: {}", f.exponent);
        let again = fit_power_law(&s, (1.0, 20.0), &FitOptions { bootstrap: 200, seed }).unwrap().fit.unwrap();
        assert_eq!(f.exponent.to_bits(), again.exponent.to_bits());
        assert_eq!(f.exponent_stderr.to_bits(), again.exponent_stderr.to_bits());
    }
}

#[test]
fn single_spin_lsi_against_a_dense_scan() {
    let gen = generator(Geometry::cube(2, 0).unwrap(), BoundaryCondition::Free, RateFamily::Heatbath, 0.3);
    let mut best = f64::INFINITY;
    for k in 1..20_000 {
        let a = k as f64 / 20_000.0;
        for a in [a, -a] {
            if let Some(r) = gen.lsi_ratio(&[1.0 + a, 1.0 - a]) {
                best = best.min(r);
            }
        }
    }
    let est = lsi_constant(&gen, &LsiSearch::default()).unwrap();
    assert!((best - 1.0).abs() < 1e-6, "scan {best}");
    assert!((est.gamma_hat - best).abs() < 1e-6, "{} vs {best}", est.gamma_hat);
}

#[test]
fn infinite_temperature_tensorizes() {
    let mut values = Vec::new();
    for sides in [vec![1, 1], vec![1, 2], vec![2, 2], vec![2, 3]] {
        let gen = generator(Geometry::open_box(&sides).unwrap(), BoundaryCondition::Free, RateFamily::Heatbath, 0.0);
        assert!((gen.spectral_gap().unwrap() - 1.0).abs() < 1e-12);
        values.push(1.0 / lsi_constant(&gen, &LsiSearch::default()).unwrap().gamma_hat);
    }
    for v in &values {
        assert!((v - values[0]).abs() < 1e-4, "{values:?}");
    }
}

#[test]
fn inverse_lsi_grows_with_the_box() {
    let b = critical_beta_2d();
    let mut last = 0.0;
    for sides in [vec![1, 2], vec![2, 2], vec![2, 3], vec![3, 3]] {
        let gen = generator(Geometry::open_box(&sides).unwrap(), BoundaryCondition::Free, RateFamily::Heatbath, b);
        let inv = 1.0 / lsi_constant(&gen, &LsiSearch::default()).unwrap().gamma_hat;
        assert!(inv >= last - 1e-6, "{sides:?}: {inv} < {last}");
        last = inv;
    }
}

#[test]
fn asymmetric_boundary_gives_lsi_below_gap() {
    // with a plus boundary the measure is not flip symmetric
    let gen = generator(Geometry::cube(2, 1).unwrap(), BoundaryCondition::Plus, RateFamily::Heatbath, critical_beta_2d());
    let gap = gen.spectral_gap().unwrap();
    let est = lsi_constant(&gen, &LsiSearch::default()).unwrap();
    assert!(est.verify(&gen));
    assert!(est.gamma_hat <= gap + 1e-6, "{} vs {gap}", est.gamma_hat);
}

#[test]
fn decay_rate_is_the_first_overlapping_eigenvalue() {
    let b = critical_beta_2d();
    let gen = generator(Geometry::torus(2, 1).unwrap(), BoundaryCondition::Periodic, RateFamily::Heatbath, b);
    let s = gen.spin(0);
    let rate = gen.decay_rate(&s).unwrap();
    let times: Vec<f64> = vec![40.0, 41.0];
    let c = gen.time_correlation(&s, &times).unwrap();
    let slope = (c[0].ln() - c[1].ln()) / (times[1] - times[0]);
    assert!((slope - rate).abs() < 1e-6, "{slope} vs {rate}");
}

#[test]
fn autocorrelation_is_completely_monotone_on_fifty_points() {
    let b = critical_beta_2d();
    for geom in [Geometry::torus(2, 1).unwrap(), Geometry::periodic_box(&[2, 3]).unwrap()] {
        let gen = generator(geom, BoundaryCondition::Periodic, RateFamily::Metropolis, b);
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.2).collect();
        for i in 0..4 {
            let f = random_test_function(gen.state_count(), 3, i);
            let c = gen.time_correlation(&f, &times).unwrap();
            for k in 1..c.len() {
                assert!(c[k] <= c[k - 1] + 1e-10);
            }
            for k in 1..c.len() - 1 {
                assert!(c[k + 1] - 2.0 * c[k] + c[k - 1] >= -1e-10);
            }
        }
        let r = second_moment_identity(&gen, &times).unwrap();
        assert!(r.iter().all(|x| x.pass && x.margin < 1e-10));
    }
}

#[test]
fn metropolis_bounds_are_tight_on_the_free_cube() {
    let b = critical_beta_2d();
    let sys = SpinSystem::new(Geometry::cube(2, 1).unwrap(), BoundaryCondition::Free).unwrap();
    let model = RateModel::for_system(RateFamily::Metropolis, b, &sys).unwrap();
    let rep = verify_rate_axioms(&model, &sys, 0, 1);
    assert!(rep.all_pass() && rep.exhaustive);
    assert!((model.c_min() - (-8.0 * b).exp()).abs() < 1e-15);
    assert_eq!(model.c_max(), 1.0);
    assert!(rep.bounds_tight);
}

#[test]
fn bodineau_helffer_examples() {
    let b = critical_beta_2d();
    let gen = generator(Geometry::cube(2, 1).unwrap(), BoundaryCondition::Free, RateFamily::Heatbath, b);
    let gamma = lsi_constant(&gen, &LsiSearch::default()).unwrap().gamma_hat;
    let ones = vec![1.0; gen.state_count()];
    for r in verify_bodineau_helffer(&gen, gamma, &ones).unwrap() {
        assert!(r.pass && r.lhs.abs() < 1e-14 && r.rhs.abs() < 1e-12);
    }
    let s0 = gen.spin(gen.system().geometry().origin());
    let f: Vec<f64> = s0.iter().map(|s| (0.3 * s).exp()).collect();
    for r in verify_bodineau_helffer(&gen, gamma, &f).unwrap() {
        assert!(r.pass && r.margin > 0.0, "{r:?}");
    }
}

#[test]
fn efron_stein_equality_and_strictness() {
    let b = critical_beta_2d();
    let geom = Geometry::torus(2, 2).unwrap();
    let cs = ConditionalStructure::new(&geom, b, 3.0).unwrap();
    let dec = cs.decomposition().clone();
    assert_eq!(dec.blocks.len(), 4);
    let (a, c) = (dec.blocks[0][0], dec.blocks[1][0]);
    let n = cs.state_count();
    let spin = |s: usize, x: usize| spin_of(s, x) as f64;
    let additive: Vec<f64> = (0..n).map(|s| 2.0 * spin(s, a) + (0.5 * spin(s, c)).exp()).collect();
    let r = verify_efron_stein(&cs, None, &additive).unwrap();
    assert!((r.lhs - r.rhs).abs() < 1e-12, "{r:?}");
    let product: Vec<f64> = (0..n).map(|s| spin(s, a) * spin(s, c)).collect();
    let r = verify_efron_stein(&cs, None, &product).unwrap();
    assert!(r.pass && r.lhs < r.rhs - 1e-6, "{r:?}");
    let g = dec.grid[0];
    let on_grid: Vec<f64> = (0..n).map(|s| spin(s, g)).collect();
    let r = verify_efron_stein(&cs, None, &on_grid).unwrap();
    assert!(r.lhs.abs() < 1e-14 && r.pass);
}

#[test]
fn conditional_entropy_at_infinite_temperature() {
    let geom = Geometry::torus(2, 2).unwrap();
    let cs = ConditionalStructure::new(&geom, 0.0, 3.0).unwrap();
    let grid = cs.decomposition().grid.len() as f64;
    for w in cs.grid_configs().into_iter().step_by(97) {
        let r = conditional_entropy_identity(&cs, w);
        assert!(r.iter().all(|x| x.pass));
        assert!((r[0].lhs - grid * std::f64::consts::LN_2).abs() < 1e-10);
    }
}
