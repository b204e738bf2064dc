//! Girsanov path shifts and the checks built on them: the martingale property of
//! the density, the entropic lower bound under common random numbers, and the law
//! invariance of shifted environments.

use crate::environment::{sample_field, shift_aligned_dx, shift_environment, FieldRealization, GridSpec, ShiftProfile, SpaceGrid};
use crate::error::{invalid, Result};
use crate::geometry::BlockGeometry;
use crate::kernel::{block_covariance, Kernel};
use crate::localization::{delta_dot_eta, delta_solve, eta_blocks, v_vector, NeumannOptions, WeightedVector};
use crate::polymer::{log_mean_exp, minus_hamiltonian, sample_paths, simulate_ensemble, Path};
use crate::rng::{derive_seed, tags};
use crate::stats::{ks_two_sample, MeanSe};
use serde::{Deserialize, Serialize};

/// Pass/fail record of one statistical or identity check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// `b'_s = b_s - h(s)` on the path grid.
pub fn shift_path(path: &Path, profile: &ShiftProfile) -> Path {
    let values = path.values.iter().enumerate().map(|(i, b)| b - profile.at(i as f64 * path.dt)).collect();
    Path { dt: path.dt, values }
}

/// Inverse of [`shift_path`]: `b_s = b'_s + h(s)`.
pub fn unshift_path(path: &Path, profile: &ShiftProfile) -> Path {
    let values = path.values.iter().enumerate().map(|(i, b)| b + profile.at(i as f64 * path.dt)).collect();
    Path { dt: path.dt, values }
}

/// `c = 4 k t^(alpha - 1)`, the slope of the ramp shift on `[0, t/2]`.
fn drift(t: f64, alpha: f64, k: i64) -> f64 {
    4.0 * k as f64 * t.powf(alpha - 1.0)
}

/// `M_t(b) = exp(-c b_{t/2} - c^2 t / 4)`: density of the shifted Wiener law,
/// evaluated on the shifted path.
pub fn girsanov_density(path: &Path, t: f64, alpha: f64, k: i64) -> f64 {
    log_girsanov_density(path.midpoint(), t, alpha, k).exp()
}

/// `log M_t` as a function of `b_{t/2}`.
pub fn log_girsanov_density(midpoint: f64, t: f64, alpha: f64, k: i64) -> f64 {
    let c = drift(t, alpha, k);
    -c * midpoint - 0.25 * c * c * t
}

/// `exp(-4 (|k| + k^2) t^(2 alpha - 1))`, a lower bound for `M_t` on `L_0`.
pub fn girsanov_penalty(t: f64, alpha: f64, k: i64) -> f64 {
    let k = k as f64;
    (-4.0 * (k.abs() + k * k) * t.powf(2.0 * alpha - 1.0)).exp()
}

/// Monte Carlo check that the density has mean one under the Wiener measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub t: f64,
    pub alpha: f64,
    pub k: i64,
    pub estimate: MeanSe,
    /// exact standard error `sqrt((exp(c^2 t / 2) - 1) / n)`
    pub exact_stderr: f64,
    pub n_sigma: f64,
    pub pass: bool,
}

pub fn verify_martingale(t: f64, alpha: f64, k: i64, dt: f64, n_paths: usize, seed: u64, n_sigma: f64) -> Result<MartingaleReport> {
    let stats = simulate_ensemble(t, dt, n_paths, seed, None, None)?;
    let d: Vec<f64> = stats.midpoint.iter().map(|&m| log_girsanov_density(m, t, alpha, k).exp()).collect();
    let estimate = MeanSe::from_slice(&d);
    let c = drift(t, alpha, k);
    let exact_stderr = ((0.5 * c * c * t).exp_m1() / n_paths as f64).sqrt();
    Ok(MartingaleReport { t, alpha, k, estimate, exact_stderr, n_sigma, pass: estimate.within(1.0, n_sigma) })
}

/// Settings for [`verify_entropic_bound`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EntropicConfig {
    pub t: f64,
    pub alpha: f64,
    pub k: i64,
    pub beta: f64,
    pub dt: f64,
    /// grid refinement over the shift-aligned spacing
    pub refine: usize,
    pub trunc: usize,
    pub tau: f64,
    pub n_paths: usize,
    pub n_fields: usize,
    pub seed: u64,
}

/// One environment's worth of the entropic comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropicReplica {
    /// `log` of the Girsanov route to the modified partition function at `k`
    pub log_lhs: f64,
    /// `log` of `penalty * Z~(0, W^{k,t})`
    pub log_rhs: f64,
    /// `log` of the direct estimate `E 1_{L_k} exp(beta X)` on the original field
    pub log_direct: f64,
    /// largest `|X(W, b + h) - X(W^{k,t}, b)|` over supported paths
    pub identity_gap: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropicReport {
    pub config: EntropicConfig,
    pub penalty: f64,
    /// paths in `L_0` (support of both sides)
    pub support: usize,
    /// paths in `L_k` (support of the direct estimate)
    pub direct_support: usize,
    pub replicas: Vec<EntropicReplica>,
    pub violations: usize,
    pub inconclusive: bool,
    pub max_identity_gap: f64,
}

/// Aligned grid through the origin covering `[lo, hi]` for shifts at horizon `t`.
pub fn aligned_grid(t: f64, alpha: f64, dt: f64, refine: usize, lo: f64, hi: f64) -> Result<SpaceGrid> {
    SpaceGrid::covering(lo, hi, shift_aligned_dx(t, alpha, dt, refine))
}

fn residual(field: &FieldRealization, path: &Path, delta: &WeightedVector, eta: &crate::localization::EtaVector) -> Result<f64> {
    Ok(minus_hamiltonian(field, path)? - delta_dot_eta(delta, eta)?)
}

/// Compare `Z~(k, W)` through the Girsanov transform with
/// `penalty * Z~(0, W^{k,t})` on the same Wiener paths.
///
/// Per path in `L_0` the two integrands differ by `M_t(b) >= penalty` and by the
/// interpolation gap between `X(W, b + h)` and `X(W^{k,t}, b)`, so a violation
/// beyond `beta * gap` signals a defect in the shift machinery.
pub fn verify_entropic_bound(kernel: &Kernel, cfg: &EntropicConfig) -> Result<EntropicReport> {
    if cfg.k == 0 {
        return Err(invalid("entropic comparison needs k != 0"));
    }
    let geom0 = BlockGeometry::new(cfg.t, cfg.alpha, cfg.trunc)?;
    let geomk = geom0.centered_at(cfg.k);
    let h = geom0.half_width();
    let reach = 2.0 * cfg.k as f64 * h;
    let m = cfg.trunc as f64;
    let lo = (-2.0 * m - 1.0) * h + reach.min(0.0) - h;
    let hi = (2.0 * m + 1.0) * h + reach.max(0.0) + h;
    let grid = aligned_grid(cfg.t, cfg.alpha, cfg.dt, cfg.refine, lo, hi)?;
    let spec = GridSpec::for_horizon(grid, cfg.t, cfg.dt)?;
    let profile = ShiftProfile::ramp(cfg.t, cfg.alpha, cfg.k);
    let opts = NeumannOptions::default();
    let c0 = block_covariance(kernel, &geom0)?;
    let ck = c0.recentered(cfg.k);
    let inside = |p: &Path| p.values.iter().all(|&b| b > grid.x0 + reach.abs() && b < grid.last() - reach.abs());

    let paths = sample_paths(cfg.n_paths, cfg.t, cfg.dt, derive_seed(cfg.seed, tags::PATHS, 0))?;
    // paths in L_0 with their CRN partners b + h and both localization vectors
    let mut crn = Vec::new();
    for p in paths.iter().filter(|p| p.in_block(&geom0, 0) && inside(p)) {
        let up = unshift_path(p, &profile);
        let d0 = delta_solve(&c0, &v_vector(kernel, &geom0, p, cfg.tau)?, &opts)?.delta;
        let dk = delta_solve(&ck, &v_vector(kernel, &geomk, &up, cfg.tau)?, &opts)?.delta;
        crn.push((p, up, d0, dk));
    }
    let mut direct = Vec::new();
    for p in paths.iter().filter(|p| p.in_block(&geom0, cfg.k) && inside(p)) {
        let dk = delta_solve(&ck, &v_vector(kernel, &geomk, p, cfg.tau)?, &opts)?.delta;
        direct.push((p, dk));
    }
    let penalty = girsanov_penalty(cfg.t, cfg.alpha, cfg.k);
    let n = cfg.n_paths as f64;
    let mut replicas = Vec::with_capacity(cfg.n_fields);
    for r in 0..cfg.n_fields {
        let w = sample_field(kernel, &spec, derive_seed(cfg.seed, tags::FIELD, r as u64))?;
        let wk = shift_environment(&w, &profile)?;
        let eta_w = eta_blocks(&w, &geomk)?;
        let eta_wk = eta_blocks(&wk, &geom0)?;
        let mut lhs_terms = Vec::with_capacity(crn.len());
        let mut rhs_terms = Vec::with_capacity(crn.len());
        let mut gap: f64 = 0.0;
        for (p, up, d0, dk) in &crn {
            let x_shift = residual(&wk, p, d0, &eta_wk)?;
            let x_orig = residual(&w, up, dk, &eta_w)?;
            gap = gap.max((x_shift - x_orig).abs());
            lhs_terms.push(log_girsanov_density(p.midpoint(), cfg.t, cfg.alpha, cfg.k) + cfg.beta * x_orig);
            rhs_terms.push(cfg.beta * x_shift);
        }
        let direct_terms: Vec<f64> =
            direct.iter().map(|(p, dk)| residual(&w, p, dk, &eta_w).map(|x| cfg.beta * x)).collect::<Result<_>>()?;
        // log of (1/n) sum over supported paths
        let lme = |terms: &[f64]| {
            if terms.is_empty() {
                f64::NEG_INFINITY
            } else {
                log_mean_exp(terms, None).log_value + (terms.len() as f64 / n).ln()
            }
        };
        let log_lhs = lme(&lhs_terms);
        let log_rhs = penalty.ln() + lme(&rhs_terms);
        let violation = !crn.is_empty() && log_lhs < log_rhs - cfg.beta * gap - 1e-12;
        replicas.push(EntropicReplica { log_lhs, log_rhs, log_direct: lme(&direct_terms), identity_gap: gap, violation });
    }
    let violations = replicas.iter().filter(|r| r.violation).count();
    let max_identity_gap = replicas.iter().map(|r| r.identity_gap).fold(0.0, f64::max);
    Ok(EntropicReport {
        config: *cfg,
        penalty,
        support: crn.len(),
        direct_support: direct.len(),
        replicas,
        violations,
        inconclusive: crn.is_empty(),
        max_identity_gap,
    })
}

/// Settings for [`verify_shift_law`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShiftLawConfig {
    pub t: f64,
    pub alpha: f64,
    pub k: i64,
    pub dt: f64,
    pub refine: usize,
    pub replicas: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftLawReport {
    pub config: ShiftLawConfig,
    /// `k = 0` makes the two pools identical in law by construction; nothing is tested
    pub degenerate: bool,
    pub probes: Vec<TestReport>,
    pub pass: bool,
}

/// Two-sample KS comparison of probes of `W^{k,t}` (pool A) against probes of an
/// independent unshifted pool (B), Bonferroni-corrected over the probes.
pub fn verify_shift_law(kernel: &Kernel, cfg: &ShiftLawConfig) -> Result<ShiftLawReport> {
    if cfg.k == 0 {
        return Ok(ShiftLawReport { config: *cfg, degenerate: true, probes: Vec::new(), pass: true });
    }
    let geom = BlockGeometry::new(cfg.t, cfg.alpha, 1)?;
    let h = geom.half_width();
    let reach = 2.0 * cfg.k as f64 * h;
    let lo = -3.0 * h + reach.min(0.0) - h;
    let hi = 3.0 * h + reach.max(0.0) + h;
    let grid = aligned_grid(cfg.t, cfg.alpha, cfg.dt, cfg.refine, lo, hi)?;
    let spec = GridSpec::for_horizon(grid, cfg.t, cfg.dt)?;
    let profile = ShiftProfile::ramp(cfg.t, cfg.alpha, cfg.k);
    let half = spec.n_rows / 2;
    let names = ["W(t,0)", "W(t/2,0)", "W(t,t^alpha)", "eta_0 vs eta_k", "eta_1 vs eta_1+k"];
    let probe = |f: &FieldRealization, eta_shift: i64| -> Result<[f64; 5]> {
        let col = |x: f64| f.grid.column_range(x, x + 0.5 * f.grid.dx).map(|r| r.start);
        let c0 = col(0.0)?;
        let ch = col(h)?;
        let g = geom.centered_at(eta_shift);
        let e = eta_blocks(f, &g)?;
        Ok([
            f.cumulative(f.n_rows, c0),
            f.cumulative(half, c0),
            f.cumulative(f.n_rows, ch),
            e.get(eta_shift).expect("in window"),
            e.get(eta_shift + 1).expect("in window"),
        ])
    };
    let mut pool_a = Vec::with_capacity(cfg.replicas);
    let mut pool_b = Vec::with_capacity(cfg.replicas);
    for r in 0..cfg.replicas {
        let wa = sample_field(kernel, &spec, derive_seed(cfg.seed, tags::POOL_A, r as u64))?;
        pool_a.push(probe(&shift_environment(&wa, &profile)?, 0)?);
        let wb = sample_field(kernel, &spec, derive_seed(cfg.seed, tags::POOL_B, r as u64))?;
        let mut pb = probe(&wb, cfg.k)?;
        let plain = probe(&wb, 0)?;
        pb[0..3].copy_from_slice(&plain[0..3]);
        pool_b.push(pb);
    }
    let threshold = cfg.level / names.len() as f64;
    let probes: Vec<TestReport> = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let a: Vec<f64> = pool_a.iter().map(|p| p[i]).collect();
            let b: Vec<f64> = pool_b.iter().map(|p| p[i]).collect();
            let ks = ks_two_sample(&a, &b);
            TestReport { name: format!("ks {name}"), statistic: ks.p_value, threshold, pass: ks.p_value >= threshold }
        })
        .collect();
    let pass = probes.iter().all(|p| p.pass);
    Ok(ShiftLawReport { config: *cfg, degenerate: false, probes, pass })
}
