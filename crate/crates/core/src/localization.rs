//! Block averages of the environment, the interaction vector of a path, and the
//! localization vector `delta` solving `C(t) delta = v` by a Neumann series.

use crate::environment::{FieldRealization, GridSpec};
use crate::error::{invalid, precondition, Error, Result};
use crate::geometry::BlockGeometry;
use crate::kernel::{BlockCovariance, Kernel};
use crate::polymer::{minus_hamiltonian, Path};
use crate::rng::{derive_seed, tags};
use crate::stats::correlation;
use serde::{Deserialize, Serialize};

/// Vector over the index window of a [`BlockGeometry`], with the weighted norm
/// `|x_k| + sum_{i != k} |x_i| |i - k|^tau` centred at `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedVector {
    pub lo: i64,
    pub values: Vec<f64>,
    pub tau: f64,
    pub center: i64,
}

impl WeightedVector {
    pub fn hi(&self) -> i64 {
        self.lo + self.values.len() as i64 - 1
    }

    pub fn get(&self, i: i64) -> Option<f64> {
        if i < self.lo || i > self.hi() {
            None
        } else {
            Some(self.values[(i - self.lo) as usize])
        }
    }

    pub fn norm(&self) -> f64 {
        weighted_norm(&self.values, self.lo, self.tau, self.center)
    }
}

/// `|x_k| + sum_{i != k} |x_i| |i - k|^tau` for `x` indexed from `lo`.
pub fn weighted_norm(x: &[f64], lo: i64, tau: f64, k: i64) -> f64 {
    x.iter()
        .enumerate()
        .map(|(s, v)| {
            let i = lo + s as i64;
            if i == k {
                v.abs()
            } else {
                v.abs() * ((i - k).unsigned_abs() as f64).powf(tau)
            }
        })
        .sum()
}

/// Block averages `eta_l = (1/(2 t^alpha)) int_{t/2}^t int_{I_l} W(ds, x) dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaVector {
    pub geometry: BlockGeometry,
    pub eta: Vec<f64>,
    /// `2 t^{-(1 - alpha)/2} eta`, whose covariance is `C(t)`
    pub eta_tilde: Vec<f64>,
}

impl EtaVector {
    pub fn get(&self, l: i64) -> Option<f64> {
        self.geometry.slot(l).map(|s| self.eta[s])
    }

    /// `max(beta d_lo eta_c, beta d_hi eta_c)` at the window centre `c`.
    pub fn checked_eta0(&self, beta: f64, d_lo: f64, d_hi: f64) -> f64 {
        let e = self.get(self.geometry.center).expect("centre in window");
        (beta * d_lo * e).max(beta * d_hi * e)
    }

    /// `min(beta d_lo eta_l, beta d_hi eta_l)`.
    pub fn hat_eta(&self, l: i64, beta: f64, d_lo: f64, d_hi: f64) -> Option<f64> {
        self.get(l).map(|e| (beta * d_lo * e).min(beta * d_hi * e))
    }
}

/// Scale turning `eta` into `eta_tilde`.
pub fn eta_tilde_scale(t: f64, alpha: f64) -> f64 {
    2.0 * t.powf(-(1.0 - alpha) / 2.0)
}

/// Block averages of one realization, by the left-point rule in space and the
/// rows with `s_i >= t/2` in time.
pub fn eta_blocks(field: &FieldRealization, geom: &BlockGeometry) -> Result<EtaVector> {
    let t = geom.t;
    if (field.horizon() - t).abs() > 1e-9 * t {
        return Err(precondition(format!("field horizon {} differs from t = {t}", field.horizon())));
    }
    if !field.n_rows.is_multiple_of(2) {
        return Err(precondition("block averages need an even number of time steps"));
    }
    let h = geom.half_width();
    let scale = field.grid.dx / (2.0 * h);
    let ts = eta_tilde_scale(t, geom.alpha);
    let mut eta = Vec::with_capacity(geom.len());
    for l in geom.indices() {
        let (a, b) = geom.block(l);
        let cols = field.grid.column_range(a, b)?;
        let mut acc = 0.0;
        for i in field.n_rows / 2..field.n_rows {
            for &v in &field.row(i)[cols.clone()] {
                acc += v;
            }
        }
        eta.push(acc * scale);
    }
    let eta_tilde = eta.iter().map(|e| e * ts).collect();
    Ok(EtaVector { geometry: *geom, eta, eta_tilde })
}

/// Interaction vector `v_l = (2/t) int_{t/2}^t int_{I_l} Q(b_s - x) dx ds`, with the
/// left-point rule in time and exact block masses in space. The norm is centred at
/// the window centre.
pub fn v_vector(kernel: &Kernel, geom: &BlockGeometry, path: &Path, tau: f64) -> Result<WeightedVector> {
    let n = path.steps();
    if !n.is_multiple_of(2) {
        return Err(precondition("interaction vector needs an even number of steps"));
    }
    if (path.horizon() - geom.t).abs() > 1e-9 * geom.t {
        return Err(precondition(format!("path horizon {} differs from t = {}", path.horizon(), geom.t)));
    }
    let weight = 2.0 * path.dt / geom.t;
    let mut values = Vec::with_capacity(geom.len());
    for l in geom.indices() {
        let (a, c) = geom.block(l);
        let mut acc = 0.0;
        for &b in &path.values[n / 2..n] {
            acc += kernel.mass_between(a - b, c - b)?;
        }
        values.push(acc * weight);
    }
    Ok(WeightedVector { lo: geom.lo(), values, tau, center: geom.center })
}

/// Upper bound on the operator norm of `a` on the weighted space centred at `k`,
/// `a` indexed from `lo` in both directions.
///
/// With `w_i = |i - k|^tau` the bound is
/// `max_i |a_ii| + S_k + max(S'_k, max_{j != k} (R_j + U_j))` where
/// `S_k = sum_{j != k} |a_kj| w_j`, `S'_k = sum_{i != k} |a_ik| w_i`,
/// `R_j = sum_{i != j,k} |a_ij| |i - j|^tau` and `U_j = sum_{i != j,k} |a_ij|`.
/// It relies on `|i - k|^tau <= |i - j|^tau + |j - k|^tau`, hence `tau <= 1`.
pub fn operator_weighted_norm(a: &[Vec<f64>], lo: i64, tau: f64, k: i64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid(format!("weight exponent must lie in (0, 1], got {tau}")));
    }
    let n = a.len();
    let kk = (k - lo) as usize;
    if k < lo || kk >= n {
        return Err(invalid("centre outside the matrix window"));
    }
    let w = |i: usize, j: usize| (i.abs_diff(j) as f64).powf(tau);
    let diag = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let s_row: f64 = (0..n).filter(|&j| j != kk).map(|j| a[kk][j].abs() * w(kk, j)).sum();
    let s_col: f64 = (0..n).filter(|&i| i != kk).map(|i| a[i][kk].abs() * w(i, kk)).sum();
    let rest = (0..n)
        .filter(|&j| j != kk)
        .map(|j| {
            (0..n)
                .filter(|&i| i != j && i != kk)
                .map(|i| a[i][j].abs() * (w(i, j) + 1.0))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    Ok(diag + s_row + s_col.max(rest))
}

/// Neumann-series settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NeumannOptions {
    pub tol: f64,
    pub max_terms: usize,
    pub d_lo: f64,
    pub d_hi: f64,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        NeumannOptions { tol: 1e-13, max_terms: 10_000, d_lo: 0.125, d_hi: 1.125 }
    }
}

/// Solution of `C delta = v` with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSolution {
    pub delta: WeightedVector,
    pub terms: usize,
    /// weighted norm of `C delta - v`
    pub residual: f64,
    pub contraction_bound: f64,
    /// `d_lo <= delta_c <= d_hi` at the window centre
    pub bracket_ok: bool,
}

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum()).collect()
}

/// `delta = lambda sum_j A^j v` with `A = Id - lambda C`, truncated once the
/// geometric tail bound `lambda |A|^(j+1) |v| / (1 - |A|)` drops below `tol`.
pub fn delta_solve(cov: &BlockCovariance, v: &WeightedVector, opts: &NeumannOptions) -> Result<DeltaSolution> {
    let geom = cov.geometry;
    if v.values.len() != geom.len() || v.lo != geom.lo() {
        return Err(invalid("v and the covariance use different index windows"));
    }
    let lam = cov.lambda();
    let a = cov.a_matrix();
    let bound = operator_weighted_norm(&a, v.lo, v.tau, v.center)?;
    if !(bound < 1.0) {
        return Err(Error::NonContraction { bound });
    }
    let vn = v.norm();
    let mut term = v.values.clone();
    let mut sum = v.values.clone();
    let mut terms = 1;
    let mut tail = lam * bound * vn / (1.0 - bound);
    while tail > opts.tol && terms < opts.max_terms {
        term = mat_vec(&a, &term);
        for (s, x) in sum.iter_mut().zip(&term) {
            *s += x;
        }
        terms += 1;
        tail *= bound;
    }
    let delta: Vec<f64> = sum.iter().map(|s| lam * s).collect();
    let c = cov.dense();
    let cd = mat_vec(&c, &delta);
    let r: Vec<f64> = cd.iter().zip(&v.values).map(|(x, y)| x - y).collect();
    let residual = weighted_norm(&r, v.lo, v.tau, v.center);
    let dc = delta[(v.center - v.lo) as usize];
    Ok(DeltaSolution {
        delta: WeightedVector { lo: v.lo, values: delta, tau: v.tau, center: v.center },
        terms,
        residual,
        contraction_bound: bound,
        bracket_ok: opts.d_lo <= dc && dc <= opts.d_hi,
    })
}

/// `sum_j delta_j eta_j` over the common window.
pub fn delta_dot_eta(delta: &WeightedVector, eta: &EtaVector) -> Result<f64> {
    if delta.lo != eta.geometry.lo() || delta.values.len() != eta.eta.len() {
        return Err(invalid("delta and eta use different index windows"));
    }
    Ok(delta.values.iter().zip(&eta.eta).map(|(d, e)| d * e).sum())
}

/// Correlation between `X = -H - sum delta_j eta_j` and one block average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualCorrelation {
    pub block: i64,
    pub correlation: f64,
    /// null standard error `1 / sqrt(n)`
    pub stderr: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    pub replicas: usize,
    pub entries: Vec<ResidualCorrelation>,
}

impl ResidualReport {
    pub fn all_within(&self) -> bool {
        self.entries.iter().all(|e| !e.flagged)
    }
}

/// Empirical check that the residual `X` is uncorrelated with every block average,
/// for a fixed path over independent environments.
pub fn independence_residual(
    kernel: &Kernel,
    geom: &BlockGeometry,
    path: &Path,
    delta: &WeightedVector,
    spec: &GridSpec,
    replicas: usize,
    seed: u64,
    n_sigma: f64,
) -> Result<ResidualReport> {
    if replicas < 3 {
        return Err(invalid("need at least three replicas"));
    }
    let mut xs = Vec::with_capacity(replicas);
    let mut etas: Vec<Vec<f64>> = vec![Vec::with_capacity(replicas); geom.len()];
    for r in 0..replicas {
        let field = crate::environment::sample_field(kernel, spec, derive_seed(seed, tags::REPLICA, r as u64))?;
        let eta = eta_blocks(&field, geom)?;
        let x = minus_hamiltonian(&field, path)? - delta_dot_eta(delta, &eta)?;
        xs.push(x);
        for (col, e) in etas.iter_mut().zip(&eta.eta) {
            col.push(*e);
        }
    }
    let se = 1.0 / (replicas as f64).sqrt();
    let entries = geom
        .indices()
        .zip(&etas)
        .map(|(l, col)| {
            let c = correlation(&xs, col);
            ResidualCorrelation { block: l, correlation: c, stderr: se, flagged: !(c.abs() <= n_sigma * se) }
        })
        .collect();
    Ok(ResidualReport { replicas, entries })
}

/// Largest gap `|eta_j(shifted) - eta_{j+k}(original)|` over the window of `geom`.
pub fn eta_shift_gap(
    original: &FieldRealization,
    shifted: &FieldRealization,
    geom: &BlockGeometry,
    k: i64,
) -> Result<f64> {
    let a = eta_blocks(shifted, geom)?;
    let b = eta_blocks(original, &geom.centered_at(geom.center + k))?;
    Ok(a.eta.iter().zip(&b.eta).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// Gap between `delta_{m+k}(b + h)` on the window centred at `k` and `delta_m(b)`
/// on the window centred at 0, for a ramp shift reaching `2k t^alpha`.
pub fn delta_shift_gap(kernel: &Kernel, geom: &BlockGeometry, path: &Path, k: i64, tau: f64) -> Result<f64> {
    let g0 = geom.centered_at(0);
    let gk = geom.centered_at(k);
    let h = 2.0 * k as f64 * geom.half_width();
    let n = path.steps();
    let shifted = Path::new(
        path.dt,
        path.values
            .iter()
            .enumerate()
            .map(|(i, b)| b + (2.0 * i as f64 / n as f64).min(1.0) * h)
            .collect(),
    )?;
    let opts = NeumannOptions::default();
    let c0 = crate::kernel::block_covariance(kernel, &g0)?;
    let ck = crate::kernel::block_covariance(kernel, &gk)?;
    let d0 = delta_solve(&c0, &v_vector(kernel, &g0, path, tau)?, &opts)?;
    let dk = delta_solve(&ck, &v_vector(kernel, &gk, &shifted, tau)?, &opts)?;
    Ok(d0.delta.values.iter().zip(&dk.delta.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::block_covariance;

    #[test]
    fn v_for_resting_path() {
        let k = Kernel::polynomial4();
        let g = BlockGeometry::new(1.0, 0.55, 2).unwrap();
        let p = Path::new(0.01, vec![0.0; 101]).unwrap();
        let v = v_vector(&k, &g, &p, 0.5).unwrap();
        assert!((v.get(0).unwrap() - 0.875).abs() < 1e-12);
        let total: f64 = v.values.iter().sum();
        assert!(total <= 1.0 + 1e-12);
    }

    #[test]
    fn weighted_norm_reference() {
        let x = [1.0, -2.0, 0.5, 4.0];
        // lo = -1, centre 0: |x_0| + |x_-1| 1 + |x_1| 1 + |x_2| 2^0.5
        let n = weighted_norm(&x, -1, 0.5, 0);
        assert!((n - (2.0 + 1.0 + 0.5 + 4.0 * 2f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn neumann_solves_system() {
        let k = Kernel::polynomial4();
        let g = BlockGeometry::new(64.0, 0.55, 6).unwrap();
        let c = block_covariance(&k, &g).unwrap();
        let v = WeightedVector { lo: g.lo(), values: (0..g.len()).map(|i| 1.0 / (1.0 + i as f64)).collect(), tau: 0.5, center: 0 };
        let s = delta_solve(&c, &v, &NeumannOptions::default()).unwrap();
        assert!(s.residual < 1e-11);
        assert!(s.contraction_bound < 1.0);
    }

    #[test]
    fn wide_kernel_is_not_a_contraction() {
        let k = Kernel::gaussian(5.0).unwrap();
        let g = BlockGeometry::new(1.0, 0.55, 6).unwrap();
        let c = block_covariance(&k, &g).unwrap();
        let v = WeightedVector { lo: g.lo(), values: vec![1.0; g.len()], tau: 0.5, center: 0 };
        assert!(matches!(delta_solve(&c, &v, &NeumannOptions::default()), Err(Error::NonContraction { .. })));
    }
}
