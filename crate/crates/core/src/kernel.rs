//! Spatial covariance kernels, their tail integrals, and block covariances.

use crate::error::{invalid, precondition, Error, Result};
use crate::geometry::BlockGeometry;
use crate::quadrature::{integrate, integrate_to_infinity};
use crate::special::{normal_pdf, normal_sf};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const MAX_SEGMENTS: usize = 4000;

/// Even, nonnegative covariance profile `Q` with declared tail data.
///
/// The declared tail bound reads `Q(x) <= tail_constant * |x|^(-3 - theta)` for
/// `|x| >= onset`.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    params: Vec<(String, f64)>,
    eval: RealFn,
    theta: f64,
    tail_constant: f64,
    onset: f64,
    quad_tol: f64,
    /// `F(z) = int_z^inf Q` for `z >= 0`
    tail_closed: Option<RealFn>,
    /// `G(z) = int_z^inf F` for `z >= 0`
    second_tail_closed: Option<RealFn>,
    spectral: Option<RealFn>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("theta", &self.theta)
            .field("tail_constant", &self.tail_constant)
            .field("onset", &self.onset)
            .field("closed_forms", &self.tail_closed.is_some())
            .finish()
    }
}

impl Kernel {
    /// Arbitrary kernel given by its profile and declared tail data.
    pub fn custom(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        theta: f64,
        tail_constant: f64,
    ) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid(format!("theta must be finite and nonnegative, got {theta}")));
        }
        if !(tail_constant > 0.0 && tail_constant.is_finite()) {
            return Err(invalid(format!("tail constant must be positive, got {tail_constant}")));
        }
        Ok(Kernel {
            name: name.into(),
            params: Vec::new(),
            eval: Arc::new(eval),
            theta,
            tail_constant,
            onset: 1.0,
            quad_tol: 1e-9,
            tail_closed: None,
            second_tail_closed: None,
            spectral: None,
        })
    }

    /// `Q(x) = (3/2) (1 + |x|)^-4`.
    pub fn polynomial4() -> Self {
        let mut k = Self::polynomial(4.0).expect("valid power");
        k.name = "polynomial4".into();
        k
    }

    /// `Q(x) = ((p - 1)/2) (1 + |x|)^-p`, unit mass, for `p > 2`.
    ///
    /// Declared `theta = p - 3` and tail constant `(p - 1)/2`; override with
    /// [`Kernel::with_tail`] for decays slower than `|x|^-3`.
    pub fn polynomial(p: f64) -> Result<Self> {
        if !(p > 2.0 && p.is_finite()) {
            return Err(invalid(format!("polynomial power must exceed 2, got {p}")));
        }
        let c = 0.5 * (p - 1.0);
        let mut k = Kernel::custom("polynomial", move |x: f64| c * (1.0 + x.abs()).powf(-p), (p - 3.0).max(0.0), c)?;
        k.params.push(("power".into(), p));
        k.tail_closed = Some(Arc::new(move |z: f64| 0.5 * (1.0 + z).powf(1.0 - p)));
        k.second_tail_closed = Some(Arc::new(move |z: f64| (1.0 + z).powf(2.0 - p) / (2.0 * (p - 2.0))));
        if p == 4.0 {
            // integer powers are both faster and exactly reproducible
            k.eval = Arc::new(|x: f64| 1.5 / (1.0 + x.abs()).powi(4));
            k.tail_closed = Some(Arc::new(|z: f64| 0.5 / (1.0 + z).powi(3)));
            k.second_tail_closed = Some(Arc::new(|z: f64| 0.25 / (1.0 + z).powi(2)));
        }
        Ok(k)
    }

    /// Centred Gaussian density with standard deviation `sigma`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("gaussian sigma must be positive, got {sigma}")));
        }
        let eval = move |x: f64| normal_pdf(x / sigma) / sigma;
        // sup over |x| >= 1 of Q(x) x^4, attained at x = max(2 sigma, 1)
        let xs = (2.0 * sigma).max(1.0);
        let c = eval(xs) * xs.powi(4);
        let mut k = Kernel::custom("gaussian", eval, 1.0, c)?;
        k.params.push(("sigma".into(), sigma));
        k.tail_closed = Some(Arc::new(move |z: f64| normal_sf(z / sigma)));
        k.second_tail_closed =
            Some(Arc::new(move |z: f64| sigma * normal_pdf(z / sigma) - z * normal_sf(z / sigma)));
        k.spectral = Some(Arc::new(move |u: f64| (-0.5 * sigma * sigma * u * u).exp() / (2.0 * PI)));
        Ok(k)
    }

    /// Built-in kernel by name with default parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "polynomial4" => Ok(Self::polynomial4()),
            "gaussian" => Self::gaussian(1.0),
            other => Err(invalid(format!("unknown kernel `{other}` (known: polynomial4, gaussian)"))),
        }
    }

    /// Parse a kernel from a TOML document.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let cfg: KernelConfig =
            toml::from_str(text).map_err(|e| invalid(format!("kernel config: {}", e.message())))?;
        cfg.build()
    }

    /// Override the declared tail exponent and constant.
    pub fn with_tail(mut self, theta: f64, tail_constant: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) || !(tail_constant > 0.0 && tail_constant.is_finite()) {
            return Err(invalid("tail exponent must be >= 0 and constant > 0"));
        }
        self.theta = theta;
        self.tail_constant = tail_constant;
        Ok(self)
    }

    pub fn with_onset(mut self, onset: f64) -> Result<Self> {
        if !(onset > 0.0 && onset.is_finite()) {
            return Err(invalid(format!("onset must be positive, got {onset}")));
        }
        self.onset = onset;
        Ok(self)
    }

    pub fn with_quad_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(invalid("quadrature tolerance must be positive"));
        }
        self.quad_tol = tol;
        Ok(self)
    }

    /// Register a closed-form upper tail `z -> int_z^inf Q` valid for `z >= 0`.
    pub fn with_tail_integral(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.tail_closed = Some(Arc::new(f));
        self
    }

    /// Copy that evaluates every integral by adaptive quadrature.
    pub fn without_closed_forms(&self) -> Self {
        let mut k = self.clone();
        k.tail_closed = None;
        k.second_tail_closed = None;
        k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn tail_constant(&self) -> f64 {
        self.tail_constant
    }

    pub fn onset(&self) -> f64 {
        self.onset
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn has_closed_tail(&self) -> bool {
        self.tail_closed.is_some()
    }

    pub fn spectral_density(&self) -> Option<&RealFn> {
        self.spectral.as_ref()
    }

    #[inline]
    pub fn evaluate(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    /// `Q(0)`, the one-point variance rate.
    pub fn q0(&self) -> f64 {
        self.evaluate(0.0)
    }

    fn upper_tail(&self, z: f64) -> Result<f64> {
        debug_assert!(z >= 0.0);
        match &self.tail_closed {
            Some(f) => Ok(f(z)),
            None => Ok(integrate_to_infinity(|x| self.evaluate(x), z, self.quad_tol, MAX_SEGMENTS)?.value),
        }
    }

    /// `F(z) = int_z^inf Q`, extended to negative `z` by `F(-z) = 1 - F(z)`.
    pub fn tail_integral(&self, z: f64) -> Result<f64> {
        if z.is_nan() {
            return Err(invalid("tail integral at NaN"));
        }
        if z >= 0.0 {
            self.upper_tail(z)
        } else {
            Ok(1.0 - self.upper_tail(-z)?)
        }
    }

    /// `int_lo^hi Q`, arranged to avoid cancellation between tails near 1.
    pub fn mass_between(&self, lo: f64, hi: f64) -> Result<f64> {
        if hi <= lo {
            return Ok(0.0);
        }
        if lo >= 0.0 {
            Ok(self.upper_tail(lo)? - self.upper_tail(hi)?)
        } else if hi <= 0.0 {
            Ok(self.upper_tail(-hi)? - self.upper_tail(-lo)?)
        } else {
            Ok(1.0 - self.upper_tail(-lo)? - self.upper_tail(hi)?)
        }
    }

    /// `G(z) = int_z^inf F = int_z^inf (u - z) Q(u) du` for `z >= 0`.
    pub fn second_tail(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0) {
            return Err(invalid(format!("second tail defined for z >= 0, got {z}")));
        }
        match &self.second_tail_closed {
            Some(g) => Ok(g(z)),
            None => {
                Ok(integrate_to_infinity(|u| (u - z) * self.evaluate(u), z, self.quad_tol, MAX_SEGMENTS)?.value)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelConfig {
    name: String,
    sigma: Option<f64>,
    power: Option<f64>,
    theta: Option<f64>,
    tail_constant: Option<f64>,
    onset: Option<f64>,
    quad_tol: Option<f64>,
}

impl KernelConfig {
    fn build(self) -> Result<Kernel> {
        let mut k = match self.name.as_str() {
            "polynomial4" => Kernel::polynomial4(),
            "polynomial" => Kernel::polynomial(self.power.ok_or_else(|| invalid("polynomial kernel needs `power`"))?)?,
            "gaussian" => Kernel::gaussian(self.sigma.unwrap_or(1.0))?,
            other => return Err(invalid(format!("unknown kernel `{other}`"))),
        };
        if self.theta.is_some() || self.tail_constant.is_some() {
            let theta = self.theta.unwrap_or(k.theta);
            let c = self.tail_constant.unwrap_or(k.tail_constant);
            k = k.with_tail(theta, c)?;
        }
        if let Some(o) = self.onset {
            k = k.with_onset(o)?;
        }
        if let Some(tol) = self.quad_tol {
            k = k.with_quad_tol(tol)?;
        }
        Ok(k)
    }
}

/// Outcome of checking the standing assumptions on a kernel over a grid of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub kernel: String,
    pub symmetric: bool,
    pub nonnegative: bool,
    pub monotone: bool,
    pub total_mass: f64,
    pub normalized: bool,
    pub theta_positive: bool,
    pub tail_ok: bool,
    pub tail_violations: Vec<f64>,
    pub onset: f64,
    /// largest gap between a registered closed-form tail and quadrature
    pub closed_form_gap: Option<f64>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.symmetric {
            out.push("symmetry");
        }
        if !self.nonnegative {
            out.push("nonnegativity");
        }
        if !self.monotone {
            out.push("monotonicity");
        }
        if !self.normalized {
            out.push("normalization");
        }
        if !self.theta_positive {
            out.push("theta");
        }
        if !self.tail_ok {
            out.push("tail bound");
        }
        if matches!(self.closed_form_gap, Some(g) if !(g <= 1e-7)) {
            out.push("closed-form tail");
        }
        out
    }
}

/// Check symmetry, positivity, monotonicity on `[0, inf)`, unit mass and the
/// declared tail bound on the sample points `xs`.
pub fn check_hypothesis(kernel: &Kernel, xs: &[f64]) -> HypothesisReport {
    let scale = kernel.q0().abs().max(1e-300);
    let symmetric = xs.iter().all(|&x| (kernel.evaluate(x) - kernel.evaluate(-x)).abs() <= 1e-12 * scale);
    let nonnegative = xs.iter().all(|&x| kernel.evaluate(x) >= 0.0);
    let mut pos: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
    pos.push(0.0);
    pos.sort_by(f64::total_cmp);
    pos.dedup();
    let monotone = pos.windows(2).all(|w| kernel.evaluate(w[1]) <= kernel.evaluate(w[0]) + 1e-15 * scale);
    let half = integrate_to_infinity(|x| kernel.evaluate(x), 0.0, kernel.quad_tol, MAX_SEGMENTS);
    let total_mass = match half {
        Ok(r) if r.value.is_finite() => 2.0 * r.value,
        _ => f64::NAN,
    };
    let normalized = (total_mass - 1.0).abs() <= 10.0 * kernel.quad_tol.max(1e-12);
    let tail_violations: Vec<f64> = xs
        .iter()
        .copied()
        .filter(|x| x.abs() >= kernel.onset)
        .filter(|&x| kernel.evaluate(x) > kernel.tail_constant * x.abs().powf(-3.0 - kernel.theta) * (1.0 + 1e-12))
        .collect();
    let closed_form_gap = kernel.tail_closed.as_ref().map(|closed| {
        pos.iter()
            .map(|&z| {
                let q = integrate_to_infinity(|x| kernel.evaluate(x), z, kernel.quad_tol, MAX_SEGMENTS)
                    .map(|r| r.value)
                    .unwrap_or(f64::NAN);
                (closed(z) - q).abs()
            })
            .fold(0.0, f64::max)
    });
    HypothesisReport {
        kernel: kernel.name.clone(),
        symmetric,
        nonnegative,
        monotone,
        total_mass,
        normalized,
        theta_positive: kernel.theta > 0.0,
        tail_ok: tail_violations.is_empty(),
        tail_violations,
        onset: kernel.onset,
        closed_form_gap,
    }
}

/// Block covariance `C_{l,k}(t) = (1 / (2 t^alpha)) int_{I_k} int_{I_l} Q(x - y)`.
///
/// The matrix is Toeplitz, so only the lags `0..=2 trunc` are stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockCovariance {
    pub geometry: BlockGeometry,
    lags: Vec<f64>,
}

impl BlockCovariance {
    /// `C_{l,k}`; both indices must lie in the geometry window.
    pub fn entry(&self, l: i64, k: i64) -> f64 {
        self.lag((l - k).unsigned_abs() as usize)
    }

    /// `C_{d,0}` for lag `d`.
    pub fn lag(&self, d: usize) -> f64 {
        self.lags[d]
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    /// Same matrix over the window translated to `center`; the covariance is shift invariant.
    pub fn recentered(&self, center: i64) -> Self {
        BlockCovariance { geometry: self.geometry.centered_at(center), lags: self.lags.clone() }
    }

    /// `lambda = 1 / C_{0,0}`.
    pub fn lambda(&self) -> f64 {
        1.0 / self.lags[0]
    }

    /// Dense matrix over the window, row-major.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.geometry.len();
        (0..n).map(|i| (0..n).map(|j| self.lag(i.abs_diff(j))).collect()).collect()
    }

    /// `A = Id - lambda C` over the window.
    pub fn a_matrix(&self) -> Vec<Vec<f64>> {
        let lam = self.lambda();
        let mut a = self.dense();
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 0.0 } else { -lam * *v };
            }
        }
        a
    }

    /// `sum_{l != 0, |l| <= trunc} |l|^tau |C_{l,0}|`.
    pub fn weighted_offdiag_sum(&self, tau: f64) -> f64 {
        (1..=self.geometry.trunc).map(|d| 2.0 * (d as f64).powf(tau) * self.lag(d).abs()).sum()
    }
}

/// Block covariance through one-dimensional integrals of the upper tail.
///
/// With `G(z) = int_z^inf F` and `T = t^alpha`,
/// `C_{0,0} = 1 - (G(0) - G(2T)) / T` and for `d >= 1`
/// `C_{d,0} = (G((2d - 2)T) - 2 G(2dT) + G((2d + 2)T)) / (2T)`.
pub fn block_covariance(kernel: &Kernel, geometry: &BlockGeometry) -> Result<BlockCovariance> {
    let h = geometry.half_width();
    if h < 1.0 {
        return Err(precondition(format!("block covariance needs t^alpha >= 1, got {h}")));
    }
    let n_lags = 2 * geometry.trunc + 1;
    // G at the even multiples 0, 2T, 4T, ..., (2 n_lags) T
    let g: Vec<f64> = (0..=n_lags).map(|j| kernel.second_tail(2.0 * h * j as f64)).collect::<Result<_>>()?;
    let mut lags = Vec::with_capacity(n_lags);
    lags.push(1.0 - (g[0] - g[1]) / h);
    for d in 1..n_lags {
        lags.push((g[d - 1] - 2.0 * g[d] + g[d + 1]) / (2.0 * h));
    }
    if !(lags[0] > 0.0) {
        return Err(Error::Precondition(format!("diagonal block covariance {} is not positive", lags[0])));
    }
    Ok(BlockCovariance { geometry: *geometry, lags })
}

/// `int_a^b F` for `0 <= a <= b` by direct quadrature of the tail function.
pub fn tail_integral_over(kernel: &Kernel, a: f64, b: f64) -> Result<f64> {
    Ok(integrate(|z| kernel.tail_integral(z).unwrap_or(f64::NAN), a, b, kernel.quad_tol, MAX_SEGMENTS)?.value)
}
