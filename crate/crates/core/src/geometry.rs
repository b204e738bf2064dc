//! Spatial blocks `I_k = t^alpha [2k - 1, 2k + 1)` and the truncated index window.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// Block layout at time horizon `t` with exponent `alpha`, restricted to the
/// index window `center - trunc ..= center + trunc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockGeometry {
    pub t: f64,
    pub alpha: f64,
    pub trunc: usize,
    pub center: i64,
}

impl BlockGeometry {
    pub fn new(t: f64, alpha: f64, trunc: usize) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(format!("time horizon must be positive, got {t}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(BlockGeometry { t, alpha, trunc, center: 0 })
    }

    /// Same geometry with the index window re-centred on `center`.
    pub fn centered_at(mut self, center: i64) -> Self {
        self.center = center;
        self
    }

    /// Block half-width `t^alpha`.
    pub fn half_width(&self) -> f64 {
        self.t.powf(self.alpha)
    }

    /// Lowest index of the window.
    pub fn lo(&self) -> i64 {
        self.center - self.trunc as i64
    }

    /// Highest index of the window.
    pub fn hi(&self) -> i64 {
        self.center + self.trunc as i64
    }

    pub fn len(&self) -> usize {
        2 * self.trunc + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> {
        self.lo()..=self.hi()
    }

    /// Position of block `k` inside the window.
    pub fn slot(&self, k: i64) -> Option<usize> {
        if k < self.lo() || k > self.hi() {
            None
        } else {
            Some((k - self.lo()) as usize)
        }
    }

    /// `[left, right)` end points of block `k`.
    pub fn block(&self, k: i64) -> (f64, f64) {
        let h = self.half_width();
        (h * (2 * k - 1) as f64, h * (2 * k + 1) as f64)
    }

    /// Index of the block containing `x`.
    pub fn block_of(&self, x: f64) -> i64 {
        let h = self.half_width();
        ((x / h + 1.0) * 0.5).floor() as i64
    }

    pub fn contains(&self, k: i64, x: f64) -> bool {
        let (a, b) = self.block(k);
        a <= x && x < b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_tile_the_line() {
        let g = BlockGeometry::new(16.0, 0.55, 4).unwrap();
        for k in -5..5 {
            assert_eq!(g.block(k).1, g.block(k + 1).0);
            let (a, b) = g.block(k);
            assert_eq!(g.block_of(0.5 * (a + b)), k);
            assert!(g.contains(k, a));
            assert!(!g.contains(k, b));
        }
        assert_eq!(g.len(), 9);
        assert_eq!(g.centered_at(2).indices().collect::<Vec<_>>(), (-2..=6).collect::<Vec<_>>());
    }
}
