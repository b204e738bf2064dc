//! Space-time white-in-time Gaussian environments on a uniform grid.
//!
//! A realization stores the increments `W((i+1) dt, x_j) - W(i dt, x_j)`, one row per
//! time step. Rows are independent with covariance `dt * Q(x_j - x_j')`, drawn by
//! circulant embedding (two rows per complex FFT) with a dense Cholesky fallback.

use crate::error::{invalid, precondition, Error, Result};
use crate::kernel::Kernel;
use crate::rng::{derive_seed, stream_rng, tags};
use crate::stats::MeanSe;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

const SNAP: f64 = 1e-9;
const MAX_CHOLESKY: usize = 4096;

/// Uniform spatial grid `x_j = x0 + j dx`, `j = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl SpaceGrid {
    pub fn new(x0: f64, dx: f64, n: usize) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) || !x0.is_finite() {
            return Err(invalid(format!("grid needs finite origin and positive spacing, got x0={x0}, dx={dx}")));
        }
        if n < 2 {
            return Err(Error::GridTooSmall(format!("grid needs at least 2 points, got {n}")));
        }
        Ok(SpaceGrid { x0, dx, n })
    }

    /// Grid through the origin covering `[-half_extent, half_extent]`.
    pub fn centered(half_extent: f64, dx: f64) -> Result<Self> {
        if !(half_extent > 0.0) {
            return Err(invalid("half extent must be positive"));
        }
        let j0 = (half_extent / dx - SNAP).ceil() as usize;
        Self::new(-(j0 as f64) * dx, dx, 2 * j0 + 1)
    }

    /// Grid through the origin covering `[lo, hi]`.
    pub fn covering(lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid("grid range must be nonempty"));
        }
        let jl = (lo / dx + SNAP).floor() as i64;
        let jh = (hi / dx - SNAP).ceil() as i64;
        Self::new(jl as f64 * dx, dx, (jh - jl + 1) as usize)
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    pub fn last(&self) -> f64 {
        self.x(self.n - 1)
    }

    /// `(j, w)` with `x = (1 - w) x_j + w x_{j+1}`, or `None` outside the grid.
    #[inline]
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let r = (x - self.x0) / self.dx;
        if !(r >= 0.0) {
            return None;
        }
        let j = r.floor() as usize;
        if j + 1 < self.n {
            Some((j, r - j as f64))
        } else if j + 1 == self.n && r - j as f64 == 0.0 {
            Some((j - 1, 1.0))
        } else {
            None
        }
    }

    fn snapped_index(&self, x: f64, up: bool) -> i64 {
        let r = (x - self.x0) / self.dx;
        let nearest = r.round();
        if (r - nearest).abs() < SNAP {
            nearest as i64
        } else if up {
            r.ceil() as i64
        } else {
            r.floor() as i64
        }
    }

    /// Columns with `a <= x_j < b`; errors when `[a, b)` leaves the grid.
    pub fn column_range(&self, a: f64, b: f64) -> Result<Range<usize>> {
        let lo = self.snapped_index(a, true);
        let hi = self.snapped_index(b, true);
        if lo < 0 || hi > self.n as i64 || a < self.x0 - SNAP * self.dx {
            return Err(Error::GridTooSmall(format!(
                "interval [{a}, {b}) is not covered by grid [{}, {}]",
                self.x0,
                self.last()
            )));
        }
        Ok(lo as usize..hi as usize)
    }
}

/// Grid spacing that makes every ramp shift `min(2s/t, 1) 2k t^alpha` an integer
/// number of columns at every time step, refined by the integer factor `refine`.
pub fn shift_aligned_dx(t: f64, alpha: f64, dt: f64, refine: usize) -> f64 {
    4.0 * t.powf(alpha) * dt / (t * refine as f64)
}

/// Time discretization and spatial grid of a realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid: SpaceGrid,
    pub dt: f64,
    pub n_rows: usize,
}

impl GridSpec {
    /// `n_rows = t / dt`, which must be an integer.
    pub fn for_horizon(grid: SpaceGrid, t: f64, dt: f64) -> Result<Self> {
        Ok(GridSpec { grid, dt, n_rows: steps_for(t, dt)? })
    }

    pub fn horizon(&self) -> f64 {
        self.n_rows as f64 * self.dt
    }
}

/// Number of steps `t / dt`, required to be an integer.
pub fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if !(t > 0.0 && dt > 0.0) {
        return Err(invalid(format!("need t > 0 and dt > 0, got t={t}, dt={dt}")));
    }
    let r = t / dt;
    let n = r.round();
    if (r - n).abs() > 1e-9 * r.max(1.0) || n < 1.0 {
        return Err(invalid(format!("dt={dt} does not divide t={t}")));
    }
    Ok(n as usize)
}

/// One sampled environment: `n_rows` independent rows of spatial increments.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    pub grid: SpaceGrid,
    pub dt: f64,
    pub n_rows: usize,
    pub seed: u64,
    pub kernel_name: String,
    data: Vec<f64>,
}

impl FieldRealization {
    pub fn from_rows(grid: SpaceGrid, dt: f64, seed: u64, kernel_name: &str, data: Vec<f64>) -> Result<Self> {
        if !data.len().is_multiple_of(grid.n) {
            return Err(invalid("data length is not a multiple of the row length"));
        }
        Ok(FieldRealization { grid, dt, n_rows: data.len() / grid.n, seed, kernel_name: kernel_name.into(), data })
    }

    pub fn horizon(&self) -> f64 {
        self.n_rows as f64 * self.dt
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.grid.n..(i + 1) * self.grid.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Row `i` linearly interpolated at `x`.
    pub fn value_at(&self, i: usize, x: f64) -> Result<f64> {
        interpolate_row(&self.grid, self.row(i), x)
    }

    /// `W(s_end, x_j)` where `s_end = rows * dt`.
    pub fn cumulative(&self, rows: usize, j: usize) -> f64 {
        (0..rows).map(|i| self.row(i)[j]).sum()
    }
}

/// Linear interpolation of a grid row; errors outside the grid.
#[inline]
pub fn interpolate_row(grid: &SpaceGrid, row: &[f64], x: f64) -> Result<f64> {
    match grid.locate(x) {
        Some((j, w)) => Ok((1.0 - w) * row[j] + w * row[j + 1]),
        None => Err(Error::GridTooSmall(format!(
            "query {x} outside field grid [{}, {}]",
            grid.x0,
            grid.last()
        ))),
    }
}

enum Method {
    Circulant { fft: Arc<dyn Fft<f64>>, scale: Vec<f64>, buf: Vec<Complex<f64>> },
    Cholesky { lower: DMatrix<f64> },
}

/// Sequential generator of independent field rows.
pub struct FieldSynthesizer {
    grid: SpaceGrid,
    sqrt_dt: f64,
    method: Method,
    rng: ChaCha8Rng,
    pending: Option<Vec<f64>>,
    kernel_name: String,
}

fn smooth_size(min: usize) -> usize {
    let mut best = min.next_power_of_two();
    let mut p2 = 1usize;
    while p2 < 2 * min {
        let mut p3 = p2;
        while p3 < 2 * min {
            let mut p5 = p3;
            while p5 < 2 * min {
                if p5 >= min && p5 < best {
                    best = p5;
                }
                p5 *= 5;
            }
            p3 *= 3;
        }
        p2 *= 2;
    }
    best
}

impl FieldSynthesizer {
    pub fn new(kernel: &Kernel, grid: SpaceGrid, dt: f64, seed: u64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        let method = Self::circulant(kernel, &grid).or_else(|_| Self::cholesky(kernel, &grid))?;
        Ok(FieldSynthesizer {
            grid,
            sqrt_dt: dt.sqrt(),
            method,
            rng: stream_rng(seed, tags::FIELD),
            pending: None,
            kernel_name: kernel.name().to_string(),
        })
    }

    /// Name of the sampling route actually in use.
    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Circulant { .. } => "circulant",
            Method::Cholesky { .. } => "cholesky",
        }
    }

    fn circulant(kernel: &Kernel, grid: &SpaceGrid) -> Result<Method> {
        let n = grid.n;
        let mut m = smooth_size(2 * (n - 1));
        let mut planner = FftPlanner::new();
        for _ in 0..3 {
            let fft = planner.plan_fft_forward(m);
            let mut spec: Vec<Complex<f64>> = (0..m)
                .map(|j| Complex::new(kernel.evaluate(j.min(m - j) as f64 * grid.dx), 0.0))
                .collect();
            fft.process(&mut spec);
            let max = spec.iter().map(|c| c.re).fold(0.0, f64::max);
            let min = spec.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
            if min >= -1e-10 * max {
                let scale = spec.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
                return Ok(Method::Circulant { fft, scale, buf: vec![Complex::new(0.0, 0.0); m] });
            }
            m = smooth_size(2 * m);
        }
        Err(Error::Embedding { kernel: kernel.name().into(), n_cols: n, dx: grid.dx })
    }

    fn cholesky(kernel: &Kernel, grid: &SpaceGrid) -> Result<Method> {
        let n = grid.n;
        let fail = || Error::Embedding { kernel: kernel.name().into(), n_cols: n, dx: grid.dx };
        if n > MAX_CHOLESKY {
            return Err(fail());
        }
        let c = DMatrix::from_fn(n, n, |i, j| kernel.evaluate((i as f64 - j as f64) * grid.dx));
        let chol = c.cholesky().ok_or_else(fail)?;
        Ok(Method::Cholesky { lower: chol.l() })
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    /// Fill `out` (length `grid.n`) with the next row of increments.
    pub fn next_row(&mut self, out: &mut [f64]) {
        if let Some(row) = self.pending.take() {
            out.copy_from_slice(&row);
            return;
        }
        let n = self.grid.n;
        let sd = self.sqrt_dt;
        match &mut self.method {
            Method::Circulant { fft, scale, buf } => {
                for (z, s) in buf.iter_mut().zip(scale.iter()) {
                    let a: f64 = self.rng.sample(StandardNormal);
                    let b: f64 = self.rng.sample(StandardNormal);
                    *z = Complex::new(a * s, b * s);
                }
                fft.process(buf);
                let mut second = vec![0.0; n];
                for j in 0..n {
                    out[j] = buf[j].re * sd;
                    second[j] = buf[j].im * sd;
                }
                self.pending = Some(second);
            }
            Method::Cholesky { lower } => {
                let z = DVector::from_fn(n, |_, _| self.rng.sample::<f64, _>(StandardNormal));
                let y = &*lower * z;
                for j in 0..n {
                    out[j] = y[j] * sd;
                }
            }
        }
    }
}

/// Draw a full realization with `spec.n_rows` rows.
pub fn sample_field(kernel: &Kernel, spec: &GridSpec, seed: u64) -> Result<FieldRealization> {
    let mut synth = FieldSynthesizer::new(kernel, spec.grid, spec.dt, seed)?;
    let n = spec.grid.n;
    let mut data = vec![0.0; n * spec.n_rows];
    for row in data.chunks_mut(n) {
        synth.next_row(row);
    }
    Ok(FieldRealization { grid: spec.grid, dt: spec.dt, n_rows: spec.n_rows, seed, kernel_name: synth.kernel_name, data })
}

/// Time profile of a spatial shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShiftShape {
    /// `h(s) = min(2s/t, 1) 2k t^alpha`
    Ramp { t: f64, alpha: f64, k: i64 },
    /// `h(s) = offset` for all `s`
    Constant { offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftProfile {
    pub shape: ShiftShape,
}

impl ShiftProfile {
    pub fn ramp(t: f64, alpha: f64, k: i64) -> Self {
        ShiftProfile { shape: ShiftShape::Ramp { t, alpha, k } }
    }

    pub fn constant(offset: f64) -> Self {
        ShiftProfile { shape: ShiftShape::Constant { offset } }
    }

    #[inline]
    pub fn at(&self, s: f64) -> f64 {
        match self.shape {
            ShiftShape::Ramp { t, alpha, k } => (2.0 * s / t).min(1.0) * 2.0 * k as f64 * t.powf(alpha),
            ShiftShape::Constant { offset } => offset,
        }
    }
}

/// Shifted environment `W'(s, x) = W(s, x + h(s))`, evaluated at the left end
/// point of every time step.
///
/// The result lives on the largest sub-grid of columns whose shifted queries stay
/// inside the original grid. Integer column shifts copy values; fractional shifts
/// interpolate linearly.
pub fn shift_environment(field: &FieldRealization, profile: &ShiftProfile) -> Result<FieldRealization> {
    let g = field.grid;
    let shifts: Vec<f64> = (0..field.n_rows).map(|i| profile.at(i as f64 * field.dt)).collect();
    let hmin = shifts.iter().copied().fold(0.0, f64::min);
    let hmax = shifts.iter().copied().fold(0.0, f64::max);
    let j_lo = ((-hmin) / g.dx - SNAP).ceil().max(0.0) as i64;
    let j_hi = ((g.last() - hmax - g.x0) / g.dx + SNAP).floor() as i64;
    if j_hi - j_lo + 1 < 2 {
        return Err(Error::GridTooSmall(format!(
            "grid extent {} cannot absorb shifts in [{hmin}, {hmax}]",
            g.last() - g.x0
        )));
    }
    let new_grid = SpaceGrid { x0: g.x(j_lo as usize), dx: g.dx, n: (j_hi - j_lo + 1) as usize };
    let mut data = Vec::with_capacity(new_grid.n * field.n_rows);
    for (i, &h) in shifts.iter().enumerate() {
        let row = field.row(i);
        let c = h / g.dx;
        let cr = c.round();
        if (c - cr).abs() < SNAP {
            let start = (j_lo + cr as i64) as usize;
            data.extend_from_slice(&row[start..start + new_grid.n]);
        } else {
            for j in 0..new_grid.n {
                data.push(interpolate_row(&g, row, new_grid.x(j) + h)?);
            }
        }
    }
    Ok(FieldRealization {
        grid: new_grid,
        dt: field.dt,
        n_rows: field.n_rows,
        seed: field.seed,
        kernel_name: field.kernel_name.clone(),
        data,
    })
}

const MAGIC: &[u8; 4] = b"PLWF";
const VERSION: u32 = 1;

/// Write a realization in the binary cache format (little endian).
pub fn write_field(path: &FsPath, field: &FieldRealization) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(field.n_rows as u64).to_le_bytes())?;
    w.write_all(&(field.grid.n as u64).to_le_bytes())?;
    w.write_all(&field.dt.to_le_bytes())?;
    w.write_all(&field.grid.dx.to_le_bytes())?;
    w.write_all(&field.grid.x0.to_le_bytes())?;
    w.write_all(&field.seed.to_le_bytes())?;
    let name = field.kernel_name.as_bytes();
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name)?;
    for v in &field.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Read a realization written by [`write_field`].
pub fn read_field(path: &FsPath) -> Result<FieldRealization> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_array::<4>(&mut r)? != MAGIC {
        return Err(Error::Cache(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Cache(format!("{}: unsupported version {version}", path.display())));
    }
    let n_rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let n_cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let dt = f64::from_le_bytes(read_array(&mut r)?);
    let dx = f64::from_le_bytes(read_array(&mut r)?);
    let x0 = f64::from_le_bytes(read_array(&mut r)?);
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let kernel_name = String::from_utf8(name).map_err(|_| Error::Cache("kernel name is not UTF-8".into()))?;
    let mut data = vec![0.0; n_rows * n_cols];
    let mut b = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Ok(FieldRealization { grid: SpaceGrid::new(x0, dx, n_cols)?, dt, n_rows, seed, kernel_name, data })
}

/// Directory of cached realizations keyed by kernel, grid and seed.
#[derive(Debug, Clone)]
pub struct FieldCache {
    dir: PathBuf,
}

impl FieldCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(FieldCache { dir })
    }

    fn key(kernel: &Kernel, spec: &GridSpec, seed: u64) -> String {
        let mut text = format!("{}|", kernel.name());
        for (k, v) in kernel.params() {
            text.push_str(&format!("{k}={:016x}|", v.to_bits()));
        }
        text.push_str(&format!(
            "{:016x}|{:016x}|{}|{:016x}|{}|{seed}",
            spec.grid.x0.to_bits(),
            spec.grid.dx.to_bits(),
            spec.grid.n,
            spec.dt.to_bits(),
            spec.n_rows
        ));
        crate::experiments::sha256_hex(text.as_bytes())[..24].to_string()
    }

    pub fn path_for(&self, kernel: &Kernel, spec: &GridSpec, seed: u64) -> PathBuf {
        self.dir.join(format!("field-{}.plwf", Self::key(kernel, spec, seed)))
    }

    /// Load the cached realization when its header matches, else sample and store it.
    pub fn load_or_sample(&self, kernel: &Kernel, spec: &GridSpec, seed: u64) -> Result<FieldRealization> {
        let path = self.path_for(kernel, spec, seed);
        if let Ok(f) = read_field(&path) {
            if f.grid == spec.grid && f.dt == spec.dt && f.n_rows == spec.n_rows && f.seed == seed && f.kernel_name == kernel.name()
            {
                return Ok(f);
            }
        }
        let f = sample_field(kernel, spec, seed)?;
        write_field(&path, &f)?;
        Ok(f)
    }
}

/// Empirical versus expected covariance at one spatial lag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LagCovariance {
    pub lag: f64,
    pub expected: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub flagged: bool,
}

/// Monte Carlo check of the two-point law of the synthesized field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub kernel: String,
    pub replicas: usize,
    pub horizon: f64,
    /// `E[W(t, x) W(t, x + l)]` against `t Q(l)`
    pub same_time: Vec<LagCovariance>,
    /// `E[W(t/2, x) W(t, x + l)]` against `(t/2) Q(l)`
    pub mixed_time: Vec<LagCovariance>,
    /// `E[dW_0(x) dW_1(x + l)]` against 0
    pub cross_row: Vec<LagCovariance>,
    pub method: String,
}

impl CovarianceReport {
    pub fn flagged(&self) -> usize {
        self.same_time.iter().chain(&self.mixed_time).chain(&self.cross_row).filter(|l| l.flagged).count()
    }
}

/// Estimate the field covariance at the given column lags from independent replicas.
///
/// Products are averaged over all admissible base columns within a replica; the
/// standard error comes from the spread across replicas. A lag is flagged when the
/// estimate is more than `n_sigma` standard errors from its target.
pub fn estimate_field_covariance(
    kernel: &Kernel,
    spec: &GridSpec,
    lags: &[usize],
    replicas: usize,
    seed: u64,
    n_sigma: f64,
) -> Result<CovarianceReport> {
    if spec.n_rows < 2 || !spec.n_rows.is_multiple_of(2) {
        return Err(precondition("covariance estimate needs an even number of rows >= 2"));
    }
    if let Some(&l) = lags.iter().find(|&&l| l >= spec.grid.n) {
        return Err(Error::GridTooSmall(format!("lag {l} exceeds grid of {} points", spec.grid.n)));
    }
    let n = spec.grid.n;
    let half = spec.n_rows / 2;
    let method = FieldSynthesizer::new(kernel, spec.grid, spec.dt, 0)?.method_name().to_string();
    let per_replica: Vec<Vec<f64>> = (0..replicas)
        .map(|r| {
            let f = sample_field(kernel, spec, derive_seed(seed, tags::REPLICA, r as u64))?;
            let w_half: Vec<f64> = (0..n).map(|j| f.cumulative(half, j)).collect();
            let w_full: Vec<f64> = (0..n).map(|j| w_half[j] + (half..f.n_rows).map(|i| f.row(i)[j]).sum::<f64>()).collect();
            let mut out = Vec::with_capacity(3 * lags.len());
            for &l in lags {
                let cnt = (n - l) as f64;
                out.push((0..n - l).map(|j| w_full[j] * w_full[j + l]).sum::<f64>() / cnt);
                out.push((0..n - l).map(|j| w_half[j] * w_full[j + l]).sum::<f64>() / cnt);
                out.push((0..n - l).map(|j| f.row(0)[j] * f.row(1)[j + l]).sum::<f64>() / cnt);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let t = spec.horizon();
    let entry = |slot: usize, lag: f64, expected: f64| {
        let xs: Vec<f64> = per_replica.iter().map(|v| v[slot]).collect();
        let m = MeanSe::from_slice(&xs);
        LagCovariance { lag, expected, empirical: m.mean, stderr: m.stderr, flagged: !m.within(expected, n_sigma) }
    };
    let mut same_time = Vec::new();
    let mut mixed_time = Vec::new();
    let mut cross_row = Vec::new();
    for (i, &l) in lags.iter().enumerate() {
        let lag = l as f64 * spec.grid.dx;
        let q = kernel.evaluate(lag);
        same_time.push(entry(3 * i, lag, t * q));
        mixed_time.push(entry(3 * i + 1, lag, half as f64 * spec.dt * q));
        cross_row.push(entry(3 * i + 2, lag, 0.0));
    }
    Ok(CovarianceReport { kernel: kernel.name().into(), replicas, horizon: t, same_time, mixed_time, cross_row, method })
}
