//! Brownian path ensembles, the polymer energy, partition functions and Gibbs
//! expectations by self-normalized importance sampling from Wiener paths.
//!
//! Paths are generated step-major: the increments of step `i` for all paths come
//! from one stream keyed by `(seed, i)`, so path `j` does not depend on how many
//! paths are drawn after it, and the streaming engine [`simulate_ensemble`]
//! reproduces [`sample_paths`] exactly without storing paths.

use crate::environment::{interpolate_row, steps_for, FieldRealization, FieldSynthesizer, SpaceGrid};
use crate::error::{invalid, precondition, Result};
use crate::geometry::BlockGeometry;
use crate::kernel::Kernel;
use crate::rng::{derive_seed, stream_rng, tags};
use crate::stats::MeanSe;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `-zeta(1/2) / sqrt(2 pi)`: mean gap between the running maximum of Brownian
/// motion and its maximum on a grid of mesh `dt`, in units of `sqrt(dt)`.
pub const SUP_CORRECTION: f64 = 0.582_597_157_939_010_7;

/// Discretized path `b_{i dt}`, `i = 0..=N`, started at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Path {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || !(dt > 0.0) {
            return Err(invalid("a path needs at least one step and dt > 0"));
        }
        Ok(Path { dt, values })
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    /// `b_{t/2}`; the number of steps must be even.
    pub fn midpoint(&self) -> f64 {
        self.values[self.steps() / 2]
    }

    pub fn endpoint(&self) -> f64 {
        self.values[self.steps()]
    }

    /// Continuity-corrected estimate of `sup_s |b_s|`.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())) + SUP_CORRECTION * self.dt.sqrt()
    }

    /// Continuity-corrected estimate of `sup_s b_s`.
    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v)) + SUP_CORRECTION * self.dt.sqrt()
    }

    /// `k` when `b_s` stays in block `I_k` for all grid times `s` in `[t/2, t]`.
    pub fn block_index(&self, geom: &BlockGeometry) -> Option<i64> {
        let n = self.steps();
        let k = geom.block_of(self.values[n / 2]);
        self.values[n / 2..].iter().all(|&b| geom.block_of(b) == k).then_some(k)
    }

    /// Indicator of `L_k`.
    pub fn in_block(&self, geom: &BlockGeometry, k: i64) -> bool {
        self.block_index(geom) == Some(k)
    }
}

/// Increments of all paths at one step.
struct StepNoise {
    seed: u64,
    sqrt_dt: f64,
}

impl StepNoise {
    fn new(seed: u64, dt: f64) -> Self {
        StepNoise { seed: derive_seed(seed, tags::PATHS, 0), sqrt_dt: dt.sqrt() }
    }

    fn advance(&self, step: usize, positions: &mut [f64]) {
        let mut rng = stream_rng(self.seed, step as u64);
        for b in positions.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *b += self.sqrt_dt * z;
        }
    }
}

/// `n` independent Brownian paths on `[0, t]` with mesh `dt`.
pub fn sample_paths(n: usize, t: f64, dt: f64, seed: u64) -> Result<Vec<Path>> {
    let steps = steps_for(t, dt)?;
    let noise = StepNoise::new(seed, dt);
    let mut values: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(steps + 1)).collect();
    let mut pos = vec![0.0; n];
    for v in values.iter_mut() {
        v.push(0.0);
    }
    for i in 0..steps {
        noise.advance(i, &mut pos);
        for (v, &b) in values.iter_mut().zip(&pos) {
            v.push(b);
        }
    }
    Ok(values.into_iter().map(|v| Path { dt, values: v }).collect())
}

/// `n` Brownian paths conditioned on `L_k`, by rejection over seeded batches.
pub fn sample_paths_in_block(
    n: usize,
    t: f64,
    dt: f64,
    geom: &BlockGeometry,
    k: i64,
    seed: u64,
    max_batches: usize,
) -> Result<Vec<Path>> {
    let mut out = Vec::with_capacity(n);
    for batch in 0..max_batches {
        let paths = sample_paths(n.max(64), t, dt, derive_seed(seed, tags::CONDITIONED, batch as u64))?;
        out.extend(paths.into_iter().filter(|p| p.in_block(geom, k)));
        if out.len() >= n {
            out.truncate(n);
            return Ok(out);
        }
    }
    Err(precondition(format!("only {} of {n} paths landed in block {k} after {max_batches} batches", out.len())))
}

/// `-H_t(b) = sum_i dW_i(b_{s_i})`, left-point rule with linear interpolation.
pub fn minus_hamiltonian(field: &FieldRealization, path: &Path) -> Result<f64> {
    if path.steps() != field.n_rows || path.dt != field.dt {
        return Err(precondition(format!(
            "path ({} steps of {}) and field ({} rows of {}) disagree",
            path.steps(),
            path.dt,
            field.n_rows,
            field.dt
        )));
    }
    let mut acc = 0.0;
    for i in 0..field.n_rows {
        acc += interpolate_row(&field.grid, field.row(i), path.values[i])?;
    }
    Ok(acc)
}

/// Monte Carlo estimate of a mean of exponentials, carried in the log domain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PartitionEstimate {
    pub log_value: f64,
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// paths with nonzero indicator
    pub support: usize,
}

impl PartitionEstimate {
    /// No sampled path carried weight.
    pub fn low_support(&self) -> bool {
        self.support == 0
    }
}

/// `(1/n) sum_i 1_i exp(a_i)` with max-shift; `mask = None` keeps every term.
pub fn log_mean_exp(log_terms: &[f64], mask: Option<&[bool]>) -> PartitionEstimate {
    let n = log_terms.len();
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let m = (0..n).filter(|&i| keep(i)).map(|i| log_terms[i]).fold(f64::NEG_INFINITY, f64::max);
    let support = (0..n).filter(|&i| keep(i)).count();
    if support == 0 || !m.is_finite() {
        return PartitionEstimate { log_value: f64::NEG_INFINITY, value: 0.0, stderr: 0.0, n_paths: n, support };
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in (0..n).filter(|&i| keep(i)) {
        let e = (log_terms[i] - m).exp();
        s1 += e;
        s2 += e * e;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let var = if n > 1 { ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0) } else { f64::INFINITY };
    let log_value = m + mean.ln();
    PartitionEstimate { log_value, value: log_value.exp(), stderr: m.exp() * (var / nf).sqrt(), n_paths: n, support }
}

fn energies(field: &FieldRealization, paths: &[Path]) -> Result<Vec<f64>> {
    paths.iter().map(|p| minus_hamiltonian(field, p)).collect()
}

/// `Z_t = E_b exp(-beta H_t(b))`.
pub fn partition_function(field: &FieldRealization, paths: &[Path], beta: f64) -> Result<PartitionEstimate> {
    let a: Vec<f64> = energies(field, paths)?.into_iter().map(|e| beta * e).collect();
    Ok(log_mean_exp(&a, None))
}

/// `Z_t(k) = E_b 1_{L_k}(b) exp(-beta H_t(b))`.
pub fn restricted_partition(
    field: &FieldRealization,
    paths: &[Path],
    beta: f64,
    geom: &BlockGeometry,
    k: i64,
) -> Result<PartitionEstimate> {
    let a: Vec<f64> = energies(field, paths)?.into_iter().map(|e| beta * e).collect();
    let mask: Vec<bool> = paths.iter().map(|p| p.in_block(geom, k)).collect();
    Ok(log_mean_exp(&a, Some(&mask)))
}

/// `E_b 1_{L_k}(b) exp(beta (-H_t(b) - c_b))` where `c_b = sum_j delta_j(b) eta_j`
/// is supplied per path.
pub fn modified_partition(
    field: &FieldRealization,
    paths: &[Path],
    beta: f64,
    geom: &BlockGeometry,
    k: i64,
    corrections: &[f64],
) -> Result<PartitionEstimate> {
    if corrections.len() != paths.len() {
        return Err(invalid("one correction per path is required"));
    }
    let a: Vec<f64> =
        energies(field, paths)?.into_iter().zip(corrections).map(|(e, c)| beta * (e - c)).collect();
    let mask: Vec<bool> = paths.iter().map(|p| p.in_block(geom, k)).collect();
    Ok(log_mean_exp(&a, Some(&mask)))
}

/// Self-normalized weights `exp(beta (-H_i)) / sum_j exp(beta (-H_j))`.
#[derive(Debug, Clone)]
pub struct GibbsEnsemble {
    weights: Vec<f64>,
}

/// Gibbs expectation with its importance-sampling diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GibbsExpectation {
    pub value: f64,
    /// `1 / sum w_i^2`
    pub ess: f64,
    pub n_paths: usize,
}

impl GibbsExpectation {
    pub fn ess_fraction(&self) -> f64 {
        self.ess / self.n_paths as f64
    }
}

impl GibbsEnsemble {
    pub fn new(minus_h: &[f64], beta: f64) -> Self {
        let a: Vec<f64> = minus_h.iter().map(|e| beta * e).collect();
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = a.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= s;
        }
        GibbsEnsemble { weights: w }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn expectation(&self, values: &[f64]) -> GibbsExpectation {
        let value = self.weights.iter().zip(values).map(|(w, v)| w * v).sum();
        GibbsExpectation { value, ess: self.ess(), n_paths: self.weights.len() }
    }
}

/// `<f>_t` for one environment by reweighting Wiener paths.
pub fn gibbs_expectation<F: Fn(&Path) -> f64>(
    field: &FieldRealization,
    paths: &[Path],
    beta: f64,
    f: F,
) -> Result<GibbsExpectation> {
    let e = energies(field, paths)?;
    let values: Vec<f64> = paths.iter().map(f).collect();
    Ok(GibbsEnsemble::new(&e, beta).expectation(&values))
}

/// Per-path summaries produced by the streaming engine.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    /// `-H_t(b)` per path (zeros without an environment)
    pub minus_h: Vec<f64>,
    pub sup_abs: Vec<f64>,
    pub midpoint: Vec<f64>,
    pub endpoint: Vec<f64>,
    /// `Some(k)` when the path lies in `L_k`
    pub block: Vec<Option<i64>>,
}

/// Half-width that contains all of `n` Brownian paths on `[0, t]` except with
/// negligible probability.
pub fn wander_bound(t: f64, n: usize) -> f64 {
    t.sqrt() * ((2.0 * (4.0 * n.max(1) as f64).ln()).sqrt() + 4.0)
}

/// Environment used by [`simulate_ensemble`].
#[derive(Debug, Clone)]
pub struct StreamedField<'a> {
    pub kernel: &'a Kernel,
    pub grid: SpaceGrid,
    pub seed: u64,
}

/// Run `n_paths` paths through one environment row by row, never storing the
/// field or the paths. Results coincide with [`sample_paths`] and
/// [`crate::environment::sample_field`] under the same seeds.
pub fn simulate_ensemble(
    t: f64,
    dt: f64,
    n_paths: usize,
    path_seed: u64,
    field: Option<&StreamedField<'_>>,
    geom: Option<&BlockGeometry>,
) -> Result<EnsembleStats> {
    let steps = steps_for(t, dt)?;
    if geom.is_some() && steps % 2 != 0 {
        return Err(precondition("block membership needs an even number of steps"));
    }
    let noise = StepNoise::new(path_seed, dt);
    let mut synth = match field {
        Some(f) => Some(FieldSynthesizer::new(f.kernel, f.grid, dt, f.seed)?),
        None => None,
    };
    let mut row = vec![0.0; field.map_or(0, |f| f.grid.n)];
    let mut pos = vec![0.0; n_paths];
    let mut stats = EnsembleStats {
        minus_h: vec![0.0; n_paths],
        sup_abs: vec![0.0; n_paths],
        midpoint: vec![0.0; n_paths],
        endpoint: vec![0.0; n_paths],
        block: vec![None; n_paths],
    };
    let mut block_ok = vec![true; n_paths];
    let mut sup = vec![0.0f64; n_paths];
    for i in 0..=steps {
        if i == steps / 2 {
            stats.midpoint.copy_from_slice(&pos);
            if let Some(g) = geom {
                for (slot, &b) in stats.block.iter_mut().zip(&pos) {
                    *slot = Some(g.block_of(b));
                }
            }
        }
        if i > steps / 2 {
            if let Some(g) = geom {
                for ((ok, slot), &b) in block_ok.iter_mut().zip(&stats.block).zip(&pos) {
                    if *ok && slot.is_some_and(|k| g.block_of(b) != k) {
                        *ok = false;
                    }
                }
            }
        }
        for (s, &b) in sup.iter_mut().zip(&pos) {
            *s = s.max(b.abs());
        }
        if i == steps {
            break;
        }
        if let (Some(synth), Some(f)) = (synth.as_mut(), field) {
            synth.next_row(&mut row);
            for (e, &b) in stats.minus_h.iter_mut().zip(&pos) {
                *e += interpolate_row(&f.grid, &row, b)?;
            }
        }
        noise.advance(i, &mut pos);
    }
    stats.endpoint.copy_from_slice(&pos);
    let corr = SUP_CORRECTION * dt.sqrt();
    for (s, m) in stats.sup_abs.iter_mut().zip(&sup) {
        *s = m + corr;
    }
    for (slot, ok) in stats.block.iter_mut().zip(&block_ok) {
        if !ok {
            *slot = None;
        }
    }
    Ok(stats)
}

/// Options for [`free_energy`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FreeEnergyOptions {
    pub dt: f64,
    pub dx: f64,
    pub n_fields: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for FreeEnergyOptions {
    fn default() -> Self {
        FreeEnergyOptions { dt: 0.01, dx: 0.02, n_fields: 200, n_paths: 20_000, seed: 0 }
    }
}

/// Quenched and annealed-over-replicas estimates of `p_t = (1/t) E log Z_t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub t: f64,
    pub beta: f64,
    /// mean over environments of `log Z / t`
    pub quenched: MeanSe,
    /// `log(mean over environments of Z) / t`
    pub replica_annealed: f64,
    /// `beta^2 Q(0) / 2`
    pub trivial_bound: f64,
    pub min_ess_fraction: f64,
}

/// Free energy from `n_fields` environments with `n_paths` Wiener paths each.
pub fn free_energy(kernel: &Kernel, beta: f64, t: f64, opts: &FreeEnergyOptions) -> Result<FreeEnergyEstimate> {
    if opts.n_fields == 0 || opts.n_paths == 0 {
        return Err(invalid("need at least one environment and one path"));
    }
    let grid = SpaceGrid::centered(wander_bound(t, opts.n_paths), opts.dx)?;
    let mut log_z = Vec::with_capacity(opts.n_fields);
    let mut min_ess: f64 = 1.0;
    for r in 0..opts.n_fields {
        let f = StreamedField { kernel, grid, seed: derive_seed(opts.seed, tags::FIELD, r as u64) };
        let stats = simulate_ensemble(t, opts.dt, opts.n_paths, derive_seed(opts.seed, tags::PATHS, r as u64), Some(&f), None)?;
        let a: Vec<f64> = stats.minus_h.iter().map(|e| beta * e).collect();
        log_z.push(log_mean_exp(&a, None).log_value);
        min_ess = min_ess.min(GibbsEnsemble::new(&stats.minus_h, beta).ess() / opts.n_paths as f64);
    }
    let per_t: Vec<f64> = log_z.iter().map(|l| l / t).collect();
    let annealed = log_mean_exp(&log_z, None).log_value / t;
    Ok(FreeEnergyEstimate {
        t,
        beta,
        quenched: MeanSe::from_slice(&per_t),
        replica_annealed: annealed,
        trivial_bound: 0.5 * beta * beta * kernel.q0(),
        min_ess_fraction: min_ess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_field, GridSpec};

    #[test]
    fn path_prefix_is_stable() {
        let a = sample_paths(5, 1.0, 0.1, 3).unwrap();
        let b = sample_paths(9, 1.0, 0.1, 3).unwrap();
        assert_eq!(a[..], b[..5]);
        assert_eq!(a[0].values[0], 0.0);
        assert_eq!(a[0].steps(), 10);
    }

    #[test]
    fn streaming_matches_materialized() {
        let k = Kernel::polynomial4();
        let (t, dt, n) = (2.0, 0.05, 40);
        let grid = SpaceGrid::centered(wander_bound(t, n), 0.05).unwrap();
        let geom = BlockGeometry::new(t, 0.55, 2).unwrap();
        let paths = sample_paths(n, t, dt, 17).unwrap();
        let field = sample_field(&k, &GridSpec::for_horizon(grid, t, dt).unwrap(), 99).unwrap();
        let sf = StreamedField { kernel: &k, grid, seed: 99 };
        let st = simulate_ensemble(t, dt, n, 17, Some(&sf), Some(&geom)).unwrap();
        for (j, p) in paths.iter().enumerate() {
            assert_eq!(st.minus_h[j], minus_hamiltonian(&field, p).unwrap());
            assert_eq!(st.sup_abs[j], p.sup_abs());
            assert_eq!(st.block[j], p.block_index(&geom));
            assert_eq!(st.midpoint[j], p.midpoint());
        }
    }

    #[test]
    fn log_mean_exp_handles_huge_exponents() {
        let e = log_mean_exp(&[1000.0, 1000.0], None);
        assert!((e.log_value - 1000.0).abs() < 1e-12);
        let none = log_mean_exp(&[1.0, 2.0], Some(&[false, false]));
        assert!(none.low_support());
        assert_eq!(none.value, 0.0);
    }

    #[test]
    fn uniform_weights_at_zero_beta() {
        let g = GibbsEnsemble::new(&[3.0, -1.0, 7.0, 0.5], 0.0);
        assert!((g.ess() - 4.0).abs() < 1e-12);
        assert!((g.expectation(&[1.0, 2.0, 3.0, 4.0]).value - 2.5).abs() < 1e-12);
    }
}
