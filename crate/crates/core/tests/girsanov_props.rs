use dpre::environment::ShiftProfile;
use dpre::girsanov::{
    girsanov_density, girsanov_penalty, log_girsanov_density, shift_path, unshift_path, verify_entropic_bound,
    verify_martingale, verify_shift_law, EntropicConfig, ShiftLawConfig,
};
use dpre::polymer::{sample_paths, Path};
use dpre::stats::MeanSe;
use dpre::{BlockGeometry, Kernel};
use proptest::prelude::*;

#[test]
fn zero_shift_has_unit_density() {
    let r = verify_martingale(4.0, 0.55, 0, 0.05, 100, 1, 3.0).unwrap();
    assert_eq!(r.estimate.mean, 1.0);
}

#[test]
fn zero_shift_law_is_degenerate() {
    let cfg = ShiftLawConfig { t: 4.0, alpha: 0.55, k: 0, dt: 0.05, refine: 1, replicas: 10, level: 0.01, seed: 0 };
    let r = verify_shift_law(&Kernel::polynomial4(), &cfg).unwrap();
    assert!(r.degenerate && r.probes.is_empty());
}

#[test]
fn girsanov_reweighting_reproduces_block_probability() {
    // E[1_{L_0}(b) M_t(b)] over Wiener paths equals P(b in L_k), checked against
    // direct counting on an independent sample
    let (t, alpha, k, dt, n) = (4.0, 0.55, 1, 0.02, 40_000);
    let geom = BlockGeometry::new(t, alpha, 2).unwrap();
    let a = sample_paths(n, t, dt, 101).unwrap();
    let w: Vec<f64> =
        a.iter().map(|p| if p.in_block(&geom, 0) { girsanov_density(p, t, alpha, k) } else { 0.0 }).collect();
    let lhs = MeanSe::from_slice(&w);
    let b = sample_paths(n, t, dt, 202).unwrap();
    let hits: Vec<f64> = b.iter().map(|p| if p.in_block(&geom, k) { 1.0 } else { 0.0 }).collect();
    let rhs = MeanSe::from_slice(&hits);
    let z = (lhs.mean - rhs.mean) / (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
    assert!(z.abs() < 3.0, "{lhs:?} vs {rhs:?}");
}

#[test]
fn entropic_bound_at_zero_beta_is_field_free() {
    let cfg = EntropicConfig {
        t: 4.0,
        alpha: 0.55,
        k: 1,
        beta: 0.0,
        dt: 0.05,
        refine: 1,
        trunc: 2,
        tau: 0.5,
        n_paths: 400,
        n_fields: 3,
        seed: 9,
    };
    let r = verify_entropic_bound(&Kernel::polynomial4(), &cfg).unwrap();
    assert_eq!(r.violations, 0);
    assert!(r.replicas.windows(2).all(|w| w[0].log_lhs == w[1].log_lhs && w[0].log_rhs == w[1].log_rhs));
}

proptest! {
    #[test]
    fn constant_shift_round_trip_is_exact(vals in prop::collection::vec(-4096i64..4096, 2..50), off in -64i64..64) {
        // dyadic values keep every sum exact
        let p = Path::new(0.25, vals.iter().map(|v| *v as f64 / 64.0).collect()).unwrap();
        let prof = ShiftProfile::constant(off as f64 / 8.0);
        prop_assert_eq!(unshift_path(&shift_path(&p, &prof), &prof), p);
    }

    #[test]
    fn ramp_shift_round_trip(seed in 0u64..1000, k in -4i64..=4) {
        let p = &sample_paths(1, 8.0, 0.05, seed).unwrap()[0];
        let prof = ShiftProfile::ramp(8.0, 0.55, k);
        let back = unshift_path(&shift_path(p, &prof), &prof);
        for (a, b) in back.values.iter().zip(&p.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_bounds_density_on_central_block(u in -1.0f64..1.0, k in -3i64..=3, t in 2.0f64..100.0) {
        let alpha = 0.55;
        let mid = u * t.powf(alpha);
        prop_assert!(log_girsanov_density(mid, t, alpha, k) >= girsanov_penalty(t, alpha, k).ln() - 1e-9);
    }
}
