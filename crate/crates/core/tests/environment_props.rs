use dpre::environment::{
    read_field, sample_field, shift_aligned_dx, shift_environment, write_field, FieldCache, FieldSynthesizer, GridSpec,
    ShiftProfile, SpaceGrid,
};
use dpre::girsanov::aligned_grid;
use dpre::localization::{eta_blocks, eta_shift_gap};
use dpre::{BlockGeometry, Kernel};
use proptest::prelude::*;

#[test]
fn cache_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let k = Kernel::polynomial4();
    let spec = GridSpec::for_horizon(SpaceGrid::centered(2.0, 0.1).unwrap(), 1.0, 0.05).unwrap();
    let f = sample_field(&k, &spec, 11).unwrap();
    let path = dir.path().join("f.plwf");
    write_field(&path, &f).unwrap();
    let g = read_field(&path).unwrap();
    assert_eq!(f.data(), g.data());
    assert_eq!((f.grid, f.dt, f.n_rows, f.seed), (g.grid, g.dt, g.n_rows, g.seed));

    let cache = FieldCache::new(dir.path().join("cache")).unwrap();
    let a = cache.load_or_sample(&k, &spec, 5).unwrap();
    assert!(cache.path_for(&k, &spec, 5).exists());
    let b = cache.load_or_sample(&k, &spec, 5).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(a.data(), sample_field(&k, &spec, 5).unwrap().data());
}

#[test]
fn synthesizer_is_seed_deterministic() {
    let k = Kernel::polynomial4();
    let grid = SpaceGrid::centered(5.0, 0.05).unwrap();
    let mut a = FieldSynthesizer::new(&k, grid, 0.01, 3).unwrap();
    let mut b = FieldSynthesizer::new(&k, grid, 0.01, 3).unwrap();
    let (mut ra, mut rb) = (vec![0.0; grid.n], vec![0.0; grid.n]);
    for _ in 0..5 {
        a.next_row(&mut ra);
        b.next_row(&mut rb);
        assert_eq!(ra, rb);
    }
}

#[test]
fn aligned_spacing_divides_the_ramp() {
    let (t, alpha, dt) = (16.0f64, 0.55, 0.02);
    let dx = shift_aligned_dx(t, alpha, dt, 2);
    let per_step = 4.0 * t.powf(alpha) * dt / t;
    assert!(((per_step / dx) - 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn eta_shift_identity_is_bit_exact(k in -4i64..=4, seed in 0u64..1000) {
        let (t, alpha, dt) = (4.0, 0.55, 0.05);
        let geom = BlockGeometry::new(t, alpha, 4).unwrap();
        let h = geom.half_width();
        let grid = aligned_grid(t, alpha, dt, 1, -18.0 * h, 18.0 * h).unwrap();
        let field = sample_field(&Kernel::polynomial4(), &GridSpec::for_horizon(grid, t, dt).unwrap(), seed).unwrap();
        let shifted = shift_environment(&field, &ShiftProfile::ramp(t, alpha, k)).unwrap();
        prop_assert_eq!(eta_shift_gap(&field, &shifted, &geom, k).unwrap(), 0.0);
    }

    #[test]
    fn integer_constant_shift_copies_columns(j in -5i64..=5, seed in 0u64..1000) {
        let grid = SpaceGrid::centered(2.0, 0.125).unwrap();
        let field = sample_field(&Kernel::polynomial4(), &GridSpec::for_horizon(grid, 0.5, 0.05).unwrap(), seed).unwrap();
        let shifted = shift_environment(&field, &ShiftProfile::constant(j as f64 * 0.125)).unwrap();
        for c in 0..shifted.grid.n {
            let x = shifted.grid.x(c);
            let (src, w) = field.grid.locate(x + j as f64 * 0.125).unwrap();
            let src = if w == 1.0 { src + 1 } else { src };
            for i in 0..field.n_rows {
                prop_assert_eq!(shifted.row(i)[c], field.row(i)[src]);
            }
        }
    }

    #[test]
    fn block_averages_are_linear(seed in 0u64..1000) {
        let geom = BlockGeometry::new(2.0, 0.55, 1).unwrap();
        let grid = SpaceGrid::centered(5.0, 0.05).unwrap();
        let f = sample_field(&Kernel::polynomial4(), &GridSpec::for_horizon(grid, 2.0, 0.05).unwrap(), seed).unwrap();
        let e = eta_blocks(&f, &geom).unwrap();
        for (a, b) in e.eta.iter().zip(&e.eta_tilde) {
            prop_assert!((b - a * dpre::localization::eta_tilde_scale(2.0, 0.55)).abs() < 1e-14);
        }
    }
}
