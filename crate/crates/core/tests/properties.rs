use isinglab::exponents::{fit_power_law, geometric_time_grid, shell_sum, FitOptions, ScalingSeries};
use isinglab::gibbs::{enumerate_measure, BoundaryCondition, SpinConfig, SpinSystem};
use isinglab::glauber::{verify_rate_axioms, RateFamily, RateModel};
use isinglab::inequalities::random_test_function;
use isinglab::lattice::Geometry;
use isinglab::rng;
use isinglab::spectral::Generator;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = RateFamily> {
    prop_oneof![Just(RateFamily::Heatbath), Just(RateFamily::Metropolis)]
}

/// Open or periodic boxes with sides at most 3.
fn small_system() -> impl Strategy<Value = SpinSystem> {
    (1usize..=3, 1usize..=3, any::<bool>(), 0u8..3).prop_map(|(a, b, periodic, bc)| {
        if periodic {
            let sides = [a.max(2), b.max(2)];
            SpinSystem::new(Geometry::periodic_box(&sides).unwrap(), BoundaryCondition::Periodic).unwrap()
        } else {
            let bc = [BoundaryCondition::Plus, BoundaryCondition::Minus, BoundaryCondition::Free][bc as usize].clone();
            SpinSystem::new(Geometry::open_box(&[a, b]).unwrap(), bc).unwrap()
        }
    })
}

fn generator(sys: SpinSystem, family: RateFamily, beta: f64) -> Generator {
    let model = RateModel::for_system(family, beta, &sys).unwrap();
    Generator::new(sys, model).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rate_axioms_hold(sys in small_system(), family in family(), beta in 0.0f64..1.5) {
        let model = RateModel::for_system(family, beta, &sys).unwrap();
        let rep = verify_rate_axioms(&model, &sys, 0, 0);
        prop_assert!(rep.all_pass(), "{rep:?}");
    }

    #[test]
    fn detailed_balance_against_boltzmann_ratio(family in family(), beta in 0.0f64..2.0, h in -6i32..=6) {
        let model = RateModel::new(family, beta, 6).unwrap();
        // a flip changes the sign of σ_x h
        let ratio = model.rate_for(h) / model.rate_for(-h);
        prop_assert!((ratio.ln() + 2.0 * beta * h as f64).abs() < 1e-12);
        prop_assert!(model.rate_for(h) >= model.c_min() - 1e-15 && model.rate_for(h) <= model.c_max() + 1e-15);
    }

    #[test]
    fn state_roundtrip(state in 0u64..(1 << 16)) {
        let c = SpinConfig::from_state(state, 16);
        prop_assert_eq!(c.to_state(), state);
        prop_assert_eq!(c.magnetization(), 2 * state.count_ones() as i64 - 16);
    }

    #[test]
    fn torus_neighbours_are_symmetric(a in 2usize..6, b in 2usize..6) {
        let g = Geometry::periodic_box(&[a, b]).unwrap();
        for x in 0..g.site_count() {
            for &y in g.neighbors(x) {
                prop_assert!(y != x && g.neighbors(y).contains(&x));
            }
        }
    }

    #[test]
    fn periodic_measure_is_flip_symmetric(a in 2usize..4, b in 2usize..4, beta in 0.0f64..1.0) {
        let g = Geometry::periodic_box(&[a, b]).unwrap();
        let m = enumerate_measure(&g, &BoundaryCondition::Periodic, beta).unwrap();
        let full = m.state_count() - 1;
        for s in 0..m.state_count() {
            prop_assert!((m.probs()[s] - m.probs()[full ^ s]).abs() <= 1e-15 * m.probs()[s].max(1e-300) + 1e-300);
        }
        prop_assert!(m.normalization_error() < 1e-12);
    }

    #[test]
    fn semigroup_preserves_means_and_contracts(sys in small_system(), family in family(), beta in 0.0f64..1.0,
                                               seed in any::<u64>(), t in 0.0f64..5.0) {
        let gen = generator(sys, family, beta);
        let f = random_test_function(gen.state_count(), seed, seed % 4);
        let pf = gen.semigroup_apply(&f, t).unwrap();
        let scale = gen.expectation(&f).abs().max(1.0);
        prop_assert!((gen.expectation(&pf) - gen.expectation(&f)).abs() < 1e-10 * scale);
        prop_assert!(gen.variance(&pf) <= gen.variance(&f) * (1.0 + 1e-10) + 1e-14);
        let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(pf.iter().all(|v| *v >= lo - 1e-9 * hi.abs().max(1.0) && *v <= hi + 1e-9 * hi.abs().max(1.0)));
    }

    #[test]
    fn spectral_gap_inequality(sys in small_system(), family in family(), beta in 0.0f64..1.0,
                               seed in any::<u64>(), t in 0.0f64..4.0) {
        let gen = generator(sys, family, beta);
        let gap = gen.spectral_gap().unwrap();
        prop_assert!(gap > 0.0);
        let f = random_test_function(gen.state_count(), seed, seed % 4);
        let pf = gen.semigroup_apply(&f, t).unwrap();
        prop_assert!(gen.variance(&pf) <= (-2.0 * gap * t).exp() * gen.variance(&f) * (1.0 + 1e-9) + 1e-14);
        prop_assert!(gen.dirichlet_form(&f).unwrap() >= gap * gen.variance(&f) * (1.0 - 1e-9) - 1e-14);
    }

    #[test]
    fn noiseless_power_laws_are_exact(exponent in -3.0f64..3.0, prefactor in 0.1f64..10.0) {
        let x: Vec<f64> = (1..=12).map(|k| k as f64 * 1.5).collect();
        let y: Vec<f64> = x.iter().map(|v| prefactor * v.powf(exponent)).collect();
        let se = vec![0.0; x.len()];
        let s = ScalingSeries::new("p", x, y, se).unwrap();
        let f = fit_power_law(&s, (0.0, 100.0), &FitOptions { bootstrap: 50, seed: 1 }).unwrap().fit.unwrap();
        prop_assert!((f.exponent - exponent).abs() < 1e-9);
        prop_assert!((f.log_prefactor - prefactor.ln()).abs() < 1e-9);
    }

    #[test]
    fn time_grids_are_increasing(t0 in 0.01f64..5.0, ratio in 1.05f64..3.0, t_max in 5.0f64..500.0) {
        let g = geometric_time_grid(t0, ratio, t_max).unwrap();
        prop_assert_eq!(g[0], 0.0);
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(*g.last().unwrap() <= t_max * (1.0 + 1e-12));
    }

    #[test]
    fn shell_sums_are_positive_and_decreasing(d in 2usize..4, delta in 0.05f64..1.0, l in 2u64..2000) {
        let a = shell_sum(d, delta, l);
        let b = shell_sum(d, delta, 2 * l);
        prop_assert!(a > 0.0 && b > 0.0 && b < a);
    }

    #[test]
    fn streams_are_reproducible_and_distinct(master in any::<u64>(), i in 0u64..1000) {
        use rand::Rng;
        let a: u64 = rng::stream(master, "prop", i).random();
        let b: u64 = rng::stream(master, "prop", i).random();
        let c: u64 = rng::stream(master, "prop", i + 1).random();
        let d: u64 = rng::stream(master, "other", i).random();
        prop_assert_eq!(a, b);
        prop_assert!(a != c && a != d);
    }
}
