//! Experiment drivers: wandering exponent sweeps, event frequencies, the annuli
//! family, the threshold calculators, the Gaussian-tail and `Phi` integrals, and
//! the reproducible artifact runner.

use crate::environment::SpaceGrid;
use crate::error::{invalid, Error, Result};
use crate::geometry::BlockGeometry;
use crate::kernel::{block_covariance, Kernel};
use crate::localization::{delta_solve, eta_tilde_scale, v_vector, NeumannOptions};
use crate::polymer::{log_mean_exp, sample_paths_in_block, simulate_ensemble, wander_bound, GibbsEnsemble, StreamedField};
use crate::quadrature::integrate_with_breaks;
use crate::rng::{derive_seed, stream_rng, tags};
use crate::special::{normal_pdf, normal_sf};
use crate::stats::{nondecreasing_within_bands, weighted_line_fit, wilson, LineFit, MeanSe, Proportion};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

/// Standard errors used for every confidence band reported here.
pub const CI_SIGMAS: f64 = 3.0;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Validated experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kernel: String,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub tau: f64,
    pub trunc: usize,
    pub m: usize,
    pub t_list: Vec<f64>,
    pub dt: f64,
    pub dx: f64,
    pub n_paths: usize,
    pub n_fields: usize,
    /// exact Gaussian draws of the block averages for the `F^` frequency
    pub n_eta: usize,
    /// Wiener paths conditioned on `L_0` used to bracket `delta_0`
    pub n_bracket_paths: usize,
    /// effective sample size below which a Gibbs average is flagged
    pub ess_min: f64,
    /// accept `alpha` outside `(1/2, 3/5)`
    pub allow_any_alpha: bool,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

/// Mirror of [`ExperimentConfig`] with every field optional, so that a document
/// can be checked in one pass.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kernel: Option<String>,
    beta: Option<f64>,
    alpha: Option<f64>,
    epsilon: Option<f64>,
    rho: Option<f64>,
    tau: Option<f64>,
    trunc: Option<usize>,
    m: Option<usize>,
    t_list: Option<Vec<f64>>,
    dt: Option<f64>,
    dx: Option<f64>,
    n_paths: Option<usize>,
    n_fields: Option<usize>,
    n_eta: Option<usize>,
    n_bracket_paths: Option<usize>,
    ess_min: Option<f64>,
    allow_any_alpha: Option<bool>,
    seed: Option<u64>,
    output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for every field except the kernel.
    pub fn with_kernel(kernel: &str) -> Self {
        ExperimentConfig {
            kernel: kernel.to_string(),
            beta: 1.0,
            alpha: 0.55,
            epsilon: 0.1,
            rho: 0.05,
            tau: 0.5,
            trunc: 4,
            m: 2,
            t_list: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            dt: 0.01,
            dx: 0.02,
            n_paths: 20_000,
            n_fields: 200,
            n_eta: 10_000,
            n_bracket_paths: 50,
            ess_min: 10.0,
            allow_any_alpha: false,
            seed: 0,
            output: None,
        }
    }

    /// Parse and validate a TOML document; all problems are reported together.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Validation(vec![e.message().to_string()]))?;
        let mut errors = Vec::new();
        let kernel = match raw.kernel {
            Some(k) => k,
            None => {
                errors.push("missing kernel name".to_string());
                String::new()
            }
        };
        let d = Self::with_kernel(&kernel);
        let cfg = ExperimentConfig {
            kernel,
            beta: raw.beta.unwrap_or(d.beta),
            alpha: raw.alpha.unwrap_or(d.alpha),
            epsilon: raw.epsilon.unwrap_or(d.epsilon),
            rho: raw.rho.unwrap_or(d.rho),
            tau: raw.tau.unwrap_or(d.tau),
            trunc: raw.trunc.unwrap_or(d.trunc),
            m: raw.m.unwrap_or(d.m),
            t_list: raw.t_list.unwrap_or(d.t_list),
            dt: raw.dt.unwrap_or(d.dt),
            dx: raw.dx.unwrap_or(d.dx),
            n_paths: raw.n_paths.unwrap_or(d.n_paths),
            n_fields: raw.n_fields.unwrap_or(d.n_fields),
            n_eta: raw.n_eta.unwrap_or(d.n_eta),
            n_bracket_paths: raw.n_bracket_paths.unwrap_or(d.n_bracket_paths),
            ess_min: raw.ess_min.unwrap_or(d.ess_min),
            allow_any_alpha: raw.allow_any_alpha.unwrap_or(d.allow_any_alpha),
            seed: raw.seed.unwrap_or(d.seed),
            output: raw.output,
        };
        if errors.is_empty() {
            errors = cfg.problems();
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn from_file(path: &FsPath) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.problems();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Every violated constraint, in a fixed order.
    pub fn problems(&self) -> Vec<String> {
        let mut e = Vec::new();
        let kernel = if self.kernel.is_empty() {
            e.push("missing kernel name".to_string());
            None
        } else {
            match Kernel::by_name(&self.kernel) {
                Ok(k) => Some(k),
                Err(err) => {
                    e.push(err.to_string());
                    None
                }
            }
        };
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            e.push(format!("beta must be finite and nonnegative, got {}", self.beta));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            e.push(format!("alpha must lie in (0, 1), got {}", self.alpha));
        } else if !self.allow_any_alpha && !(self.alpha > 0.5 && self.alpha < 0.6) {
            e.push(format!("alpha must lie in (1/2, 3/5), got {} (set allow_any_alpha to override)", self.alpha));
        }
        if !(self.epsilon > 0.0) {
            e.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.rho > 0.0) {
            e.push(format!("rho must be positive, got {}", self.rho));
        } else if !(2.5 * (self.alpha - 0.6) + self.rho < 0.0) {
            e.push(format!(
                "rho must satisfy (5/2)(alpha - 3/5) + rho < 0, got {}",
                2.5 * (self.alpha - 0.6) + self.rho
            ));
        }
        let tau_cap = kernel.as_ref().map_or(1.0, |k| k.theta().min(1.0));
        if !(self.tau > 0.0 && self.tau < tau_cap) {
            e.push(format!("tau must lie in (0, min(theta, 1)) = (0, {tau_cap}), got {}", self.tau));
        }
        if self.m < 2 || !self.m.is_multiple_of(2) {
            e.push(format!("m must be an even integer >= 2, got {}", self.m));
        }
        if self.t_list.len() < 4 {
            e.push(format!("t_list needs at least 4 points for the exponent fit, got {}", self.t_list.len()));
        }
        if self.t_list.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            e.push("t_list entries must be positive".to_string());
        }
        if self.t_list.windows(2).any(|w| w[1] <= w[0]) {
            e.push("t_list must be strictly increasing".to_string());
        }
        if !(self.dt > 0.0) {
            e.push(format!("dt must be positive, got {}", self.dt));
        } else {
            for &t in &self.t_list {
                let r = t / self.dt;
                let n = r.round();
                if (r - n).abs() > 1e-9 * r.max(1.0) || !(n as u64).is_multiple_of(2) {
                    e.push(format!("t = {t} is not an even multiple of dt = {}", self.dt));
                }
            }
        }
        if !(self.dx > 0.0) {
            e.push(format!("dx must be positive, got {}", self.dx));
        }
        if self.n_paths < 2 {
            e.push("n_paths must be at least 2".to_string());
        }
        if self.n_fields < 2 {
            e.push("n_fields must be at least 2".to_string());
        }
        if self.n_eta < 1 {
            e.push("n_eta must be at least 1".to_string());
        }
        if !(self.ess_min >= 0.0) {
            e.push("ess_min must be nonnegative".to_string());
        }
        e
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::by_name(&self.kernel)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn t_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, tags::EXPERIMENT, index as u64)
    }
}

/// What one environment contributes to the sweep at one horizon.
#[derive(Debug, Clone)]
struct FieldSummary {
    sup_gibbs: f64,
    ess: f64,
    sup_control: f64,
    event_a: bool,
    event_a_control: bool,
    zero_support: usize,
}

fn summarize_field(cfg: &ExperimentConfig, kernel: &Kernel, t: f64, seed: u64, r: usize) -> Result<FieldSummary> {
    let geom = BlockGeometry::new(t, cfg.alpha, cfg.trunc)?;
    let grid = SpaceGrid::centered(wander_bound(t, cfg.n_paths), cfg.dx)?;
    let field = StreamedField { kernel, grid, seed: derive_seed(seed, tags::FIELD, r as u64) };
    let stats = simulate_ensemble(t, cfg.dt, cfg.n_paths, derive_seed(seed, tags::PATHS, r as u64), Some(&field), Some(&geom))?;
    let gibbs = GibbsEnsemble::new(&stats.minus_h, cfg.beta);
    let sup = gibbs.expectation(&stats.sup_abs);
    let sup_control = stats.sup_abs.iter().sum::<f64>() / cfg.n_paths as f64;

    let terms: Vec<f64> = stats.minus_h.iter().map(|e| cfg.beta * e).collect();
    let m = cfg.trunc as i64;
    let mut log_z = Vec::with_capacity(2 * cfg.trunc + 1);
    let mut counts = Vec::with_capacity(2 * cfg.trunc + 1);
    for k in -m..=m {
        let mask: Vec<bool> = stats.block.iter().map(|b| *b == Some(k)).collect();
        let est = log_mean_exp(&terms, Some(&mask));
        counts.push(est.support);
        log_z.push(if est.support == 0 { None } else { Some(est.log_value) });
    }
    let centre = cfg.trunc;
    let zero_support = log_z.iter().enumerate().filter(|(i, z)| *i != centre && z.is_none()).count();
    let z0 = log_z[centre].unwrap_or(f64::NEG_INFINITY);
    let event_a = log_z.iter().enumerate().any(|(i, z)| i != centre && z.is_some_and(|z| z > z0));
    let event_a_control = counts.iter().enumerate().any(|(i, &c)| i != centre && c > counts[centre]);
    Ok(FieldSummary { sup_gibbs: sup.value, ess: sup.ess, sup_control, event_a, event_a_control, zero_support })
}

/// Per-horizon results of the wandering sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t: f64,
    /// field-replica distribution of the Gibbs average of `sup |b|`
    pub sup_gibbs: MeanSe,
    /// the same paths without weights
    pub sup_control: MeanSe,
    /// frequency of `<sup |b|>_t >= t^(3/5 - epsilon)`
    pub pgrow: Proportion,
    /// frequency of `Z(k) > Z(0)` for some `0 < |k| <= M`
    pub event_a: Proportion,
    /// the same with `beta = 0` (path counts)
    pub event_a_control: Proportion,
    /// non-central blocks without any path, summed over environments
    pub zero_support_blocks: usize,
    pub min_ess: f64,
    pub median_ess: f64,
    pub ess_flagged: bool,
    pub seed: u64,
}

fn sweep_point(cfg: &ExperimentConfig, kernel: &Kernel, index: usize) -> Result<SweepPoint> {
    let t = cfg.t_list[index];
    let seed = cfg.t_seed(index);
    let rows: Vec<FieldSummary> =
        (0..cfg.n_fields).into_par_iter().map(|r| summarize_field(cfg, kernel, t, seed, r)).collect::<Result<_>>()?;
    let n = rows.len();
    let sup: Vec<f64> = rows.iter().map(|r| r.sup_gibbs).collect();
    let ctl: Vec<f64> = rows.iter().map(|r| r.sup_control).collect();
    let level = t.powf(0.6 - cfg.epsilon);
    let mut ess: Vec<f64> = rows.iter().map(|r| r.ess).collect();
    ess.sort_by(f64::total_cmp);
    let count = |f: &dyn Fn(&FieldSummary) -> bool| rows.iter().filter(|r| f(r)).count();
    Ok(SweepPoint {
        t,
        sup_gibbs: MeanSe::from_slice(&sup),
        sup_control: MeanSe::from_slice(&ctl),
        pgrow: wilson(count(&|r| r.sup_gibbs >= level), n, CI_SIGMAS),
        event_a: wilson(count(&|r| r.event_a), n, CI_SIGMAS),
        event_a_control: wilson(count(&|r| r.event_a_control), n, CI_SIGMAS),
        zero_support_blocks: rows.iter().map(|r| r.zero_support).sum(),
        min_ess: ess[0],
        median_ess: ess[n / 2],
        ess_flagged: ess[0] < cfg.ess_min,
        seed,
    })
}

/// Fit of `log mean` against `log t` with its `CI_SIGMAS` band.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlopeFit {
    pub fit: LineFit,
    pub lower: f64,
    pub upper: f64,
}

fn slope_fit(ts: &[f64], means: &[MeanSe]) -> SlopeFit {
    let x: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = means.iter().map(|m| m.mean.ln()).collect();
    let se: Vec<f64> = means.iter().map(|m| m.stderr / m.mean).collect();
    let fit = weighted_line_fit(&x, &y, &se);
    SlopeFit { fit, lower: fit.slope - CI_SIGMAS * fit.slope_se, upper: fit.slope + CI_SIGMAS * fit.slope_se }
}

/// Wandering exponent report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentReport {
    pub beta: f64,
    pub points: Vec<SweepPoint>,
    pub slope: SlopeFit,
    pub control_slope: SlopeFit,
    /// `1/2` lies inside the control band
    pub control_gate: bool,
    /// the Gibbs slope exceeds the control's upper bound; `None` when the gate failed
    pub exceeds_control: Option<bool>,
    pub pgrow_trend: bool,
    pub event_a_trend: bool,
    /// Gibbs averages at the largest horizon rest on fewer than `ess_min` paths
    pub ess_flagged: bool,
}

/// Sweep `t_list`, fitting the growth of `<sup |b|>_t` with and without weights.
pub fn estimate_wandering_exponent(cfg: &ExperimentConfig) -> Result<ExponentReport> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let points: Vec<SweepPoint> = (0..cfg.t_list.len()).map(|i| sweep_point(cfg, &kernel, i)).collect::<Result<_>>()?;
    Ok(exponent_report(cfg, points))
}

fn exponent_report(cfg: &ExperimentConfig, points: Vec<SweepPoint>) -> ExponentReport {
    let ts: Vec<f64> = points.iter().map(|p| p.t).collect();
    let slope = slope_fit(&ts, &points.iter().map(|p| p.sup_gibbs).collect::<Vec<_>>());
    let control_slope = slope_fit(&ts, &points.iter().map(|p| p.sup_control).collect::<Vec<_>>());
    let control_gate = control_slope.lower <= 0.5 && 0.5 <= control_slope.upper;
    let pg: Vec<Proportion> = points.iter().map(|p| p.pgrow).collect();
    let ea: Vec<Proportion> = points.iter().map(|p| p.event_a).collect();
    ExponentReport {
        beta: cfg.beta,
        exceeds_control: control_gate.then_some(slope.fit.slope > control_slope.upper),
        control_gate,
        slope,
        control_slope,
        pgrow_trend: nondecreasing_within_bands(&pg),
        event_a_trend: nondecreasing_within_bands(&ea),
        ess_flagged: points.last().is_some_and(|p| p.ess_flagged),
        points,
    }
}

/// `P(A_t)` per horizon, from the same sweep as the exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventAReport {
    pub trunc: usize,
    pub beta: f64,
    pub t: Vec<f64>,
    pub probability: Vec<Proportion>,
    pub control: Vec<Proportion>,
    pub zero_support_blocks: Vec<usize>,
    pub trend: bool,
}

pub fn event_a_probability(cfg: &ExperimentConfig) -> Result<EventAReport> {
    Ok(event_a_from(&estimate_wandering_exponent(cfg)?, cfg))
}

fn event_a_from(r: &ExponentReport, cfg: &ExperimentConfig) -> EventAReport {
    EventAReport {
        trunc: cfg.trunc,
        beta: cfg.beta,
        t: r.points.iter().map(|p| p.t).collect(),
        probability: r.points.iter().map(|p| p.event_a).collect(),
        control: r.points.iter().map(|p| p.event_a_control).collect(),
        zero_support_blocks: r.points.iter().map(|p| p.zero_support_blocks).collect(),
        trend: r.event_a_trend,
    }
}

/// The family `Q_q(m) Z*_m`, `q < q*`, of disjoint symmetric index sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnuliFamily {
    pub m: usize,
    pub trunc: usize,
    /// `Q_1, ..., Q_{q* - 1}`
    pub q_seq: Vec<u64>,
    pub q_star: usize,
    /// sets `Q_q Z*_m` that fit inside `Z*_M`, each sorted
    pub sets: Vec<Vec<i64>>,
    /// `Q_q` whose set reaches beyond `M` and is therefore left out
    pub dropped: Vec<u64>,
    /// `M <= m`: no annuli are emitted
    pub degenerate: bool,
}

/// `Z*_n = {+-1, ..., +-n}`, sorted.
pub fn punctured(n: usize) -> Vec<i64> {
    let n = n as i64;
    (-n..=n).filter(|&j| j != 0).collect()
}

/// `k Z*_n`, sorted.
pub fn scaled_punctured(k: u64, n: usize) -> Vec<i64> {
    punctured(n).into_iter().map(|j| j * k as i64).collect()
}

pub fn annuli_family(m: usize, trunc: usize) -> Result<AnnuliFamily> {
    if m < 2 || !m.is_multiple_of(2) {
        return Err(invalid(format!("m must be an even integer >= 2, got {m}")));
    }
    let mut q_seq = Vec::new();
    let mut q: u64 = 1;
    while q <= trunc as u64 {
        q_seq.push(q);
        q = q * m as u64 + 1;
    }
    let q_star = q_seq.len() + 1;
    let degenerate = trunc <= m;
    let mut sets = Vec::new();
    let mut dropped = Vec::new();
    if !degenerate {
        for &qq in &q_seq {
            if qq * m as u64 <= trunc as u64 {
                sets.push(scaled_punctured(qq, m));
            } else {
                dropped.push(qq);
            }
        }
    }
    Ok(AnnuliFamily { m, trunc, q_seq, q_star, sets, dropped, degenerate })
}

/// Whether `set` equals `k Z*_khat` for some `k >= 1`, `khat >= m`, inside `Z*_M`.
pub fn in_s_family(set: &[i64], trunc: usize, m: usize) -> bool {
    let sorted: BTreeSet<i64> = set.iter().copied().collect();
    if sorted.is_empty() || sorted.iter().any(|j| *j == 0 || j.unsigned_abs() > trunc as u64) {
        return false;
    }
    for k in 1..=trunc as u64 {
        for khat in m..=trunc / k as usize {
            if scaled_punctured(k, khat).into_iter().collect::<BTreeSet<_>>() == sorted {
                return true;
            }
        }
    }
    false
}

/// Exhaustive pairwise disjointness.
pub fn pairwise_disjoint(sets: &[Vec<i64>]) -> bool {
    let mut seen = BTreeSet::new();
    sets.iter().all(|s| s.iter().all(|j| seen.insert(*j)))
}

/// `tau(t) = 2 beta^{-1} t^{(5/2)(alpha - 3/5) + rho}`.
pub fn tau_t(beta: f64, t: f64, alpha: f64, rho: f64) -> f64 {
    2.0 / beta * t.powf(2.5 * (alpha - 0.6) + rho)
}

/// Range of `delta_0` over paths in `L_0`, used for `d_lo` and `d_hi`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeltaBracket {
    pub d_lo: f64,
    pub d_hi: f64,
    pub n_paths: usize,
    /// false when the defaults of [`NeumannOptions`] were used instead
    pub estimated: bool,
}

pub fn estimate_delta_bracket(
    kernel: &Kernel,
    geom: &BlockGeometry,
    dt: f64,
    tau: f64,
    n_paths: usize,
    seed: u64,
) -> Result<DeltaBracket> {
    let opts = NeumannOptions::default();
    let fallback = DeltaBracket { d_lo: opts.d_lo, d_hi: opts.d_hi, n_paths: 0, estimated: false };
    let g0 = geom.centered_at(0);
    let cov = match block_covariance(kernel, &g0) {
        Ok(c) => c,
        Err(Error::Precondition(_)) => return Ok(fallback),
        Err(e) => return Err(e),
    };
    let paths = match sample_paths_in_block(n_paths, geom.t, dt, &g0, 0, seed, 1000) {
        Ok(p) => p,
        Err(Error::Precondition(_)) => return Ok(fallback),
        Err(e) => return Err(e),
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &paths {
        let v = v_vector(kernel, &g0, p, tau)?;
        match delta_solve(&cov, &v, &opts) {
            Ok(s) => {
                let d = s.delta.get(0).expect("centre in window");
                lo = lo.min(d);
                hi = hi.max(d);
            }
            Err(Error::NonContraction { .. }) => return Ok(fallback),
            Err(e) => return Err(e),
        }
    }
    Ok(DeltaBracket { d_lo: lo, d_hi: hi, n_paths: paths.len(), estimated: true })
}

/// `F^_{M,m,rho}` frequency at one horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FHatPoint {
    pub t: f64,
    pub trunc: usize,
    pub threshold: f64,
    pub tau_t: f64,
    pub bracket: DeltaBracket,
    pub probability: Proportion,
    /// frequency of the annuli lower-bound event
    pub annuli_probability: Proportion,
    pub target: f64,
    /// `target` lies at or below the upper Wilson bound
    pub reaches_target: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FHatReport {
    pub m: usize,
    pub points: Vec<FHatPoint>,
}

/// `F^` holds iff `L' = {l in Z*_M : check_eta_0 - hat_eta_l < -t^(2 alpha - 1 + rho)}`
/// contains some `k Z*_m` with `k m <= M`.
pub fn f_hat_event(l_prime: &BTreeSet<i64>, trunc: usize, m: usize) -> bool {
    (1..=trunc / m).any(|k| scaled_punctured(k as u64, m).iter().all(|j| l_prime.contains(j)))
}

/// Draws of the block averages over `|l| <= M` from their exact Gaussian law,
/// `Cov(eta) = (t^(1 - alpha) / 4) C(t)`.
pub fn sample_eta(kernel: &Kernel, geom: &BlockGeometry, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let cov = block_covariance(kernel, geom)?;
    let d = geom.len();
    let mat = DMatrix::from_fn(d, d, |i, j| cov.lag(i.abs_diff(j)));
    let chol = mat.cholesky().ok_or_else(|| Error::Precondition("block covariance is not positive definite".into()))?;
    let l = chol.l();
    let scale = 1.0 / eta_tilde_scale(geom.t, geom.alpha);
    Ok((0..n)
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            (0..d).map(|i| scale * (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>()).collect()
        })
        .collect())
}

fn f_hat_point(cfg: &ExperimentConfig, kernel: &Kernel, index: usize, trunc: usize) -> Result<FHatPoint> {
    Ok(f_hat_points(cfg, kernel, index, &[trunc])?.remove(0))
}

/// `F^` frequencies for several `M` from one set of draws over the widest window,
/// so that each draw is evaluated on nested windows.
fn f_hat_points(cfg: &ExperimentConfig, kernel: &Kernel, index: usize, truncs: &[usize]) -> Result<Vec<FHatPoint>> {
    let t = cfg.t_list[index];
    let seed = cfg.t_seed(index);
    let widest = truncs.iter().copied().max().ok_or_else(|| invalid("no window sizes given"))?;
    let geom = BlockGeometry::new(t, cfg.alpha, widest)?;
    let bracket = estimate_delta_bracket(kernel, &geom, cfg.dt, cfg.tau, cfg.n_bracket_paths, derive_seed(seed, tags::CONDITIONED, 0))?;
    let threshold = t.powf(2.0 * cfg.alpha - 1.0 + cfg.rho);
    let etas = sample_eta(kernel, &geom, cfg.n_eta, derive_seed(seed, tags::ETA, 0))?;
    let (b, lo, hi) = (cfg.beta, bracket.d_lo, bracket.d_hi);
    let target = 1.0 - 1.0 / cfg.m as f64;
    truncs
        .iter()
        .map(|&trunc| {
            let family = annuli_family(cfg.m, trunc)?;
            let (mut hits, mut annuli_hits) = (0, 0);
            for eta in &etas {
                let at = |l: i64| eta[(l + widest as i64) as usize];
                let e0 = at(0);
                let check0 = (b * lo * e0).max(b * hi * e0);
                let l_prime: BTreeSet<i64> = punctured(trunc)
                    .into_iter()
                    .filter(|&l| check0 - (b * lo * at(l)).min(b * hi * at(l)) < -threshold)
                    .collect();
                if f_hat_event(&l_prime, trunc, cfg.m) {
                    hits += 1;
                }
                if family.sets.iter().any(|s| s.iter().all(|j| l_prime.contains(j))) {
                    annuli_hits += 1;
                }
            }
            let probability = wilson(hits, etas.len(), CI_SIGMAS);
            Ok(FHatPoint {
                t,
                trunc,
                threshold,
                tau_t: tau_t(cfg.beta, t, cfg.alpha, cfg.rho),
                bracket,
                probability,
                annuli_probability: wilson(annuli_hits, etas.len(), CI_SIGMAS),
                target,
                reaches_target: probability.upper >= target,
            })
        })
        .collect()
}

/// Frequency of `F^_{M,m,rho}` at every horizon for the configured `M`.
pub fn f_hat_probability(cfg: &ExperimentConfig) -> Result<FHatReport> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let points = (0..cfg.t_list.len()).map(|i| f_hat_point(cfg, &kernel, i, cfg.trunc)).collect::<Result<_>>()?;
    Ok(FHatReport { m: cfg.m, points })
}

/// `F^` frequency over a sweep of `M` at one horizon, with the smallest `M`
/// whose band reaches the target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FHatSweep {
    pub t: f64,
    pub points: Vec<FHatPoint>,
    pub smallest_passing: Option<usize>,
}

pub fn f_hat_sweep(cfg: &ExperimentConfig, t_index: usize, truncs: &[usize]) -> Result<FHatSweep> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let t = *cfg.t_list.get(t_index).ok_or_else(|| invalid("t index out of range"))?;
    let points = f_hat_points(cfg, &kernel, t_index, truncs)?;
    let smallest_passing = points.iter().find(|p| p.reaches_target).map(|p| p.trunc);
    Ok(FHatSweep { t, points, smallest_passing })
}

/// `int_0^inf [1 - Phi(kappa x)^(2m)]^q0 phi(x) dx`, evaluated in the log domain.
pub fn phi_bound_integral(m: u32, q0: u64, kappa: f64) -> Result<f64> {
    if m < 1 || !(kappa > 0.0) {
        return Err(invalid(format!("need m >= 1 and kappa > 0, got m={m}, kappa={kappa}")));
    }
    if q0 == 0 {
        return Ok(0.5);
    }
    let f = |x: f64| {
        // log(1 - Phi^(2m)) with log Phi = log1p(-sf)
        let log_phi = (-normal_sf(kappa * x)).ln_1p();
        let inner = -(2.0 * m as f64 * log_phi).exp_m1();
        if inner <= 0.0 {
            0.0
        } else {
            (q0 as f64 * inner.ln()).exp() * normal_pdf(x)
        }
    };
    let breaks: Vec<f64> = (0..=80).map(|i| 0.5 * i as f64).collect();
    Ok(integrate_with_breaks(f, &breaks, 1e-13, 4000)?.value)
}

/// Regime for [`threshold_alpha`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Strict,
    Weakened,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub alpha: f64,
    /// `false` when no superdiffusive exponent is guaranteed
    pub superdiffusive: bool,
    /// `true` when the weakened formula exceeded `3/5`
    pub capped: bool,
}

/// `1/2 + v/(6 - 2v)`, computed as `3 / (6 - 2v)`.
pub fn corollary_threshold(vartheta: f64) -> f64 {
    3.0 / (6.0 - 2.0 * vartheta)
}

/// Largest admissible exponent: `3/5` under the strict decay condition,
/// `3/(7 - 2 theta)` under the weakened one.
pub fn threshold_alpha(theta: f64, regime: Regime) -> Result<Threshold> {
    if !(theta > 0.0) {
        return Err(invalid(format!("theta must be positive, got {theta}")));
    }
    Ok(match regime {
        Regime::Strict => Threshold { alpha: 0.6, superdiffusive: true, capped: false },
        Regime::Weakened if theta <= 0.5 => Threshold { alpha: 0.5, superdiffusive: false, capped: false },
        Regime::Weakened => {
            let a = corollary_threshold(theta - 0.5);
            if a > 0.6 {
                Threshold { alpha: 0.6, superdiffusive: true, capped: true }
            } else {
                Threshold { alpha: a, superdiffusive: true, capped: false }
            }
        }
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailEntry {
    pub x: f64,
    pub sf: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianTailReport {
    pub entries: Vec<TailEntry>,
    /// smallest scanned `x` beyond which the bound held at every scanned point
    pub onset: f64,
    pub all_hold: bool,
}

/// Check `Phi_bar(x) <= exp(-x^2 / 2)` at the given points.
pub fn gaussian_tail_check(xs: &[f64]) -> Result<GaussianTailReport> {
    if xs.iter().any(|x| !(*x >= 0.0)) {
        return Err(invalid("points must be nonnegative"));
    }
    let entry = |x: f64| {
        let sf = normal_sf(x);
        let bound = (-0.5 * x * x).exp();
        TailEntry { x, sf, bound, holds: sf <= bound }
    };
    let entries: Vec<TailEntry> = xs.iter().map(|&x| entry(x)).collect();
    let scan: Vec<TailEntry> = (0..=10_000).map(|i| entry(i as f64 * 1e-3)).collect();
    let onset = scan.iter().rposition(|e| !e.holds).map_or(0.0, |i| scan[(i + 1).min(scan.len() - 1)].x);
    let all_hold = entries.iter().all(|e| e.holds);
    Ok(GaussianTailReport { entries, onset, all_hold })
}

/// One row of the results table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRow {
    pub t: Option<f64>,
    pub beta: f64,
    pub alpha: f64,
    pub estimator: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub n_paths: usize,
    pub n_fields: usize,
    pub seed: u64,
}

/// Everything computed by [`run_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub exponent: ExponentReport,
    pub event_a: EventAReport,
    pub f_hat: FHatReport,
    pub annuli: AnnuliFamily,
    pub threshold_strict: Threshold,
    pub threshold_weakened: Threshold,
    pub phi_bound: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    /// per-horizon seeds, in `t_list` order
    pub seeds: Vec<u64>,
    /// file name and SHA-256 of each artifact
    pub files: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub csv: PathBuf,
    pub report: PathBuf,
    pub manifest: PathBuf,
}

fn rows_for(cfg: &ExperimentConfig, r: &RunReport) -> Vec<ResultRow> {
    let row = |t: Option<f64>, est: &str, value: f64, se: Option<f64>, seed: u64| ResultRow {
        t,
        beta: cfg.beta,
        alpha: cfg.alpha,
        estimator: est.to_string(),
        value,
        stderr: se,
        n_paths: cfg.n_paths,
        n_fields: cfg.n_fields,
        seed,
    };
    let prop_se = |p: &Proportion| (p.estimate * (1.0 - p.estimate) / p.trials as f64).sqrt();
    let mut rows = Vec::new();
    for p in &r.exponent.points {
        let t = Some(p.t);
        rows.push(row(t, "sup_gibbs", p.sup_gibbs.mean, Some(p.sup_gibbs.stderr), p.seed));
        rows.push(row(t, "sup_control", p.sup_control.mean, Some(p.sup_control.stderr), p.seed));
        rows.push(row(t, "pgrow_frequency", p.pgrow.estimate, Some(prop_se(&p.pgrow)), p.seed));
        rows.push(row(t, "event_a_frequency", p.event_a.estimate, Some(prop_se(&p.event_a)), p.seed));
        rows.push(row(t, "event_a_control_frequency", p.event_a_control.estimate, Some(prop_se(&p.event_a_control)), p.seed));
        rows.push(row(t, "min_ess", p.min_ess, None, p.seed));
    }
    for p in &r.f_hat.points {
        rows.push(row(Some(p.t), "f_hat_frequency", p.probability.estimate, Some(prop_se(&p.probability)), cfg.seed));
        rows.push(row(Some(p.t), "tau_t", p.tau_t, None, cfg.seed));
    }
    let e = &r.exponent;
    rows.push(row(None, "slope", e.slope.fit.slope, Some(e.slope.fit.slope_se), cfg.seed));
    rows.push(row(None, "slope_control", e.control_slope.fit.slope, Some(e.control_slope.fit.slope_se), cfg.seed));
    rows
}

fn write_bytes(dir: &FsPath, name: &str, bytes: &[u8], files: &mut Vec<(String, String)>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    files.push((name.to_string(), sha256_hex(bytes)));
    Ok(path)
}

/// Run every driver for `cfg` and write `results.csv`, `report.json` and
/// `manifest.json` under `out` (or the configured output directory).
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&FsPath>) -> Result<Artifacts> {
    cfg.validate()?;
    let dir = out.map(FsPath::to_path_buf).or_else(|| cfg.output.clone()).ok_or_else(|| invalid("no output directory"))?;
    fs::create_dir_all(&dir)?;
    let kernel = cfg.kernel()?;
    let exponent = estimate_wandering_exponent(cfg)?;
    let event_a = event_a_from(&exponent, cfg);
    let report = RunReport {
        event_a,
        f_hat: f_hat_probability(cfg)?,
        annuli: annuli_family(cfg.m, cfg.trunc)?,
        threshold_strict: threshold_alpha(kernel.theta(), Regime::Strict)?,
        threshold_weakened: threshold_alpha(kernel.theta(), Regime::Weakened)?,
        phi_bound: [1u64, 10, 100, 1_000, 10_000]
            .iter()
            .map(|&q| phi_bound_integral(cfg.m as u32, q, 1.0).map(|v| (q, v)))
            .collect::<Result<_>>()?,
        exponent,
    };
    let mut csv = csv::Writer::from_writer(Vec::new());
    for r in rows_for(cfg, &report) {
        csv.serialize(r).map_err(|e| invalid(format!("csv: {e}")))?;
    }
    let csv_bytes = csv.into_inner().map_err(|e| invalid(format!("csv: {e}")))?;
    let mut files = Vec::new();
    let csv_path = write_bytes(&dir, "results.csv", &csv_bytes, &mut files)?;
    let report_path = write_bytes(&dir, "report.json", serde_json::to_string_pretty(&report)?.as_bytes(), &mut files)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        master_seed: cfg.seed,
        seeds: (0..cfg.t_list.len()).map(|i| cfg.t_seed(i)).collect(),
        files,
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(Artifacts { dir, csv: csv_path, report: report_path, manifest: manifest_path })
}

/// Re-run the configuration stored in a manifest.
pub fn replay_manifest(manifest: &FsPath, out: &FsPath) -> Result<Artifacts> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
    if m.config.hash() != m.config_hash {
        return Err(invalid("manifest config does not match its hash"));
    }
    run_experiment(&m.config, Some(out))
}
