//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use dpre::quadrature::integrate_with_breaks;
use dpre::Kernel;
use nalgebra::{DMatrix, DVector};

/// `C_{d,0} = (1 / (2T)) int_{I_0} int_{I_d} Q(x - y) dx dy` by nested adaptive
/// quadrature of the kernel itself, with `I_j = [(2j - 1)T, (2j + 1)T]`.
pub fn brute_covariance(kernel: &Kernel, half: f64, d: i64, tol: f64) -> f64 {
    let (a, c) = ((2 * d - 1) as f64 * half, (2 * d + 1) as f64 * half);
    let inner = |y: f64| {
        let mut breaks = vec![a];
        if y > a && y < c {
            breaks.push(y);
        }
        breaks.push(c);
        integrate_with_breaks(|x| kernel.evaluate(x - y), &breaks, tol, 20_000).expect("inner quadrature").value
    };
    let outer = integrate_with_breaks(inner, &[-half, 0.0, half], tol * half, 20_000).expect("outer quadrature");
    outer.value / (2.0 * half)
}

/// Solve `C x = v` by dense LU.
pub fn dense_solve(c: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let m = DMatrix::from_fn(n, n, |i, j| c[i][j]);
    m.lu().solve(&DVector::from_column_slice(v)).expect("nonsingular").iter().copied().collect()
}

/// Fixed seed for every acceptance and integration check.
pub const SEED: u64 = 20_261_015;
