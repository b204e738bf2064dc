use dpre::environment::{sample_field, GridSpec, SpaceGrid};
use dpre::polymer::{
    free_energy, gibbs_expectation, log_mean_exp, partition_function, sample_paths, wander_bound, FreeEnergyOptions,
    GibbsEnsemble,
};
use dpre::Kernel;
use proptest::prelude::*;

#[test]
fn zero_beta_partition_function_is_one() {
    let k = Kernel::polynomial4();
    let (t, dt) = (1.0, 0.05);
    let paths = sample_paths(50, t, dt, 4).unwrap();
    let grid = SpaceGrid::centered(wander_bound(t, 50), 0.05).unwrap();
    let f = sample_field(&k, &GridSpec::for_horizon(grid, t, dt).unwrap(), 8).unwrap();
    assert_eq!(partition_function(&f, &paths, 0.0).unwrap().value, 1.0);
    let g = gibbs_expectation(&f, &paths, 0.0, |p| p.endpoint()).unwrap();
    let plain = paths.iter().map(|p| p.endpoint()).sum::<f64>() / 50.0;
    assert!((g.value - plain).abs() < 1e-14);
    assert!((g.ess - 50.0).abs() < 1e-9);
}

#[test]
fn endpoint_variance_is_brownian() {
    let paths = sample_paths(20_000, 2.0, 0.05, 9).unwrap();
    let ends: Vec<f64> = paths.iter().map(|p| p.endpoint()).collect();
    let var = dpre::stats::variance(&ends);
    // Var of the sample variance of N(0, 2) is 2 * 4 / (n - 1)
    assert!((var - 2.0).abs() < 3.0 * (8.0f64 / 19_999.0).sqrt(), "{var}");
}

#[test]
fn quenched_free_energy_below_annealed_bound() {
    let k = Kernel::polynomial4();
    let opts = FreeEnergyOptions { dt: 0.05, dx: 0.05, n_fields: 20, n_paths: 500, seed: 1 };
    let e = free_energy(&k, 1.0, 2.0, &opts).unwrap();
    assert!(e.quenched.mean <= e.trivial_bound + 3.0 * e.quenched.stderr);
    assert!(e.quenched.mean <= e.replica_annealed + 1e-12);
}

proptest! {
    #[test]
    fn log_mean_exp_is_shift_equivariant(xs in prop::collection::vec(-50.0f64..50.0, 1..40), c in -500.0f64..500.0) {
        let a = log_mean_exp(&xs, None).log_value;
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((log_mean_exp(&shifted, None).log_value - a - c).abs() < 1e-9);
    }

    #[test]
    fn gibbs_weights_are_a_distribution(h in prop::collection::vec(-20.0f64..20.0, 1..60), beta in 0.0f64..3.0) {
        let g = GibbsEnsemble::new(&h, beta);
        let s: f64 = g.weights().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(g.weights().iter().all(|w| *w >= 0.0));
        prop_assert!(g.ess() >= 1.0 - 1e-9 && g.ess() <= h.len() as f64 + 1e-9);
    }

    #[test]
    fn sup_dominates_endpoint(seed in 0u64..500) {
        for p in sample_paths(5, 1.0, 0.05, seed).unwrap() {
            prop_assert!(p.sup_abs() >= p.endpoint().abs());
            prop_assert!(p.sup() >= 0.0);
        }
    }
}
