//! Uniform age grid. The time step always equals the age step so that transport
//! follows characteristics exactly.

use serde::Serialize;

use crate::error::{Error, Result};

/// Default bound on `exp(-mu0 * a_max)` and on truncated reproduction mass.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    da: f64,
    cells: usize,
}

impl Grid {
    pub fn new(da: f64, cells: usize) -> Result<Self> {
        if !(da.is_finite() && da > 0.0) {
            return Err(Error::input(format!("age step must be positive, got {da}")));
        }
        if cells == 0 {
            return Err(Error::input("age grid has no cells"));
        }
        Ok(Grid { da, cells })
    }

    /// Smallest grid with step `da` whose window reaches `a_max`.
    pub fn covering(da: f64, a_max: f64) -> Result<Self> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::input(format!("a_max must be positive and finite, got {a_max}")));
        }
        let cells = (a_max / da - 1e-9).ceil().max(1.0) as usize;
        Grid::new(da, cells)
    }

    /// Age window length that makes both `exp(-mu0 a_max)` and the truncated
    /// reproduction mass `sup_beta exp(-mu0 a_max) / mu0` fall below `tail_tol`.
    pub fn required_a_max(mu0: f64, beta_sup: f64, tail_tol: f64) -> f64 {
        let scale = (beta_sup / mu0).max(1.0);
        (scale / tail_tol).ln() / mu0
    }

    pub fn da(&self) -> f64 {
        self.da
    }

    pub fn dt(&self) -> f64 {
        self.da
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn a_max(&self) -> f64 {
        self.cells as f64 * self.da
    }

    /// Left edge of cell `i` (node `i`); `node(cells)` is `a_max`.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.da
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.cells).map(move |i| self.node(i))
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.da
    }

    /// Checks `exp(-mu0 a_max) <= tail_tol`.
    pub fn check_tail(&self, mu0: f64, tail_tol: f64) -> Result<()> {
        let bound = (-mu0 * self.a_max()).exp();
        if bound > tail_tol {
            return Err(Error::Grid {
                a_max: self.a_max(),
                bound,
                tol: tail_tol,
                required_a_max: (1.0 / tail_tol).ln() / mu0,
            });
        }
        Ok(())
    }

    /// L1 norm of a vector of cell values.
    pub fn l1(&self, v: &[f64]) -> f64 {
        fold(v.len(), |i| v[i].abs()) * self.da
    }

    /// Integral of a vector of cell averages.
    pub fn integrate(&self, v: &[f64]) -> f64 {
        sum(v) * self.da
    }
}

const LANES: usize = 8;

/// Sum of `term(i)` over `0..n` in eight interleaved partial sums, each in
/// ascending index, combined in a fixed pairwise order. Deterministic and
/// free of the single serial dependency chain of a plain fold.
#[inline]
fn fold(n: usize, term: impl Fn(usize) -> f64) -> f64 {
    let mut acc = [0.0; LANES];
    let body = n - n % LANES;
    let mut i = 0;
    while i < body {
        for (l, a) in acc.iter_mut().enumerate() {
            *a += term(i + l);
        }
        i += LANES;
    }
    for (l, j) in (body..n).enumerate() {
        acc[l] += term(j);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

pub fn sum(v: &[f64]) -> f64 {
    fold(v.len(), |i| v[i])
}

/// `sum a_i b_i` over the common length, with the summation order of [`sum`].
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    fold(n, |i| a[i] * b[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_rounds_up() {
        let g = Grid::covering(0.1, 1.05).unwrap();
        assert_eq!(g.cells(), 11);
        let g = Grid::covering(0.1, 1.0).unwrap();
        assert_eq!(g.cells(), 10);
    }

    #[test]
    fn rejects_bad_steps() {
        assert!(Grid::new(0.0, 10).is_err());
        assert!(Grid::new(0.1, 0).is_err());
        assert!(Grid::new(f64::NAN, 3).is_err());
    }

    #[test]
    fn tail_check() {
        let a = Grid::required_a_max(1.0, 2.0, 1e-12);
        assert!((a - (2e12f64).ln()).abs() < 1e-12);
        let g = Grid::covering(1e-2, a).unwrap();
        assert!(g.check_tail(1.0, 1e-12).is_ok());
        let short = Grid::covering(1e-2, 5.0).unwrap();
        assert!(matches!(short.check_tail(1.0, 1e-12), Err(Error::Grid { .. })));
    }
}
