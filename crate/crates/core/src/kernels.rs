//! Age-dependent rate kernels (transmission `beta`, mortality `mu`) and the
//! per-strain quantities derived from them: survival `pi`, reproduction
//! integral `r`, basic reproduction number and the weight `Psi` used by the
//! Lyapunov functionals.
//!
//! Kernels are piecewise constant, so every integral below is evaluated in
//! closed form piece by piece. Because each kernel is constant beyond its last
//! breakpoint, integrals up to infinity are closed form as well; truncation to
//! the age window only enters through the solver grid.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A bounded nonnegative piecewise-constant function of infection age.
#[derive(Debug, Clone, PartialEq)]
pub enum AgeKernel {
    /// `value` on `[lo, hi)` and zero elsewhere; `hi` may be infinite.
    Window { value: f64, lo: f64, hi: f64 },
    /// `values[i]` on `[edges[i], edges[i + 1])`, zero before the first edge
    /// and beyond the last one. The last edge may be infinite.
    Piecewise { edges: Vec<f64>, values: Vec<f64> },
}

/// Maximal interval on which a kernel is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

impl AgeKernel {
    /// `value` on the whole half line.
    pub fn constant(value: f64) -> Self {
        AgeKernel::Window {
            value,
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    pub fn window(value: f64, lo: f64, hi: f64) -> Result<Self> {
        let k = AgeKernel::Window { value, lo, hi };
        k.check()?;
        Ok(k)
    }

    pub fn piecewise(edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let k = AgeKernel::Piecewise { edges, values };
        k.check()?;
        Ok(k)
    }

    /// Structural checks: finite nonnegative values, ordered breakpoints.
    pub fn check(&self) -> Result<()> {
        match self {
            AgeKernel::Window { value, lo, hi } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(Error::input(format!("kernel value must be finite and >= 0, got {value}")));
                }
                if !(lo.is_finite() && *lo >= 0.0 && hi > lo) {
                    return Err(Error::input(format!("kernel window [{lo}, {hi}) is not a valid age interval")));
                }
            }
            AgeKernel::Piecewise { edges, values } => {
                if edges.len() < 2 || values.len() + 1 != edges.len() {
                    return Err(Error::input(format!(
                        "piecewise kernel needs n + 1 edges for n values (got {} edges, {} values)",
                        edges.len(),
                        values.len()
                    )));
                }
                if !(edges[0].is_finite() && edges[0] >= 0.0) {
                    return Err(Error::input("first kernel edge must be a finite age >= 0"));
                }
                for w in edges.windows(2) {
                    if !(w[1] > w[0]) {
                        return Err(Error::input(format!("kernel edges must increase strictly ({} then {})", w[0], w[1])));
                    }
                }
                if edges[..edges.len() - 1].iter().any(|e| !e.is_finite()) {
                    return Err(Error::input("only the last kernel edge may be infinite"));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::input(format!("kernel values must be finite and >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Value at age `a` (right-continuous).
    pub fn eval(&self, a: f64) -> Result<f64> {
        if !(a >= 0.0) {
            return Err(Error::input(format!("age must be >= 0, got {a}")));
        }
        Ok(self.value_at(a))
    }

    fn value_at(&self, a: f64) -> f64 {
        match self {
            AgeKernel::Window { value, lo, hi } => {
                if a >= *lo && a < *hi {
                    *value
                } else {
                    0.0
                }
            }
            AgeKernel::Piecewise { edges, values } => {
                if a < edges[0] || a >= edges[edges.len() - 1] {
                    return 0.0;
                }
                // last edge <= a
                let i = edges.partition_point(|e| *e <= a) - 1;
                values[i]
            }
        }
    }

    /// Partition of `[0, inf)` into constant pieces (zero pieces included).
    pub fn pieces(&self) -> Vec<Piece> {
        let mut out = Vec::new();
        let mut push = |lo: f64, hi: f64, value: f64| {
            if hi > lo {
                out.push(Piece { lo, hi, value });
            }
        };
        match self {
            AgeKernel::Window { value, lo, hi } => {
                push(0.0, *lo, 0.0);
                push(*lo, *hi, *value);
                push(*hi, f64::INFINITY, 0.0);
            }
            AgeKernel::Piecewise { edges, values } => {
                push(0.0, edges[0], 0.0);
                for (i, v) in values.iter().enumerate() {
                    push(edges[i], edges[i + 1], *v);
                }
                push(edges[edges.len() - 1], f64::INFINITY, 0.0);
            }
        }
        out
    }

    /// Essential supremum.
    pub fn sup_norm(&self) -> f64 {
        self.pieces().iter().map(|p| p.value).fold(0.0, f64::max)
    }

    /// Essential infimum over `[0, inf)`.
    pub fn inf_value(&self) -> f64 {
        self.pieces().iter().map(|p| p.value).fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }

    /// `sup(supp k)`; infinite when the kernel does not vanish eventually,
    /// zero for the zero kernel.
    pub fn support_sup(&self) -> f64 {
        self.pieces()
            .iter()
            .filter(|p| p.value > 0.0)
            .map(|p| p.hi)
            .fold(0.0, f64::max)
    }

    /// Left end of the last run of positive pieces that ends at `support_sup`:
    /// the kernel is positive on `[support_lo, support_sup)`.
    pub fn support_lo(&self) -> f64 {
        let pieces = self.pieces();
        let Some(last) = pieces.iter().rposition(|p| p.value > 0.0) else {
            return 0.0;
        };
        let mut lo = pieces[last].lo;
        for p in pieces[..last].iter().rev() {
            if p.value > 0.0 && p.hi == lo {
                lo = p.lo;
            } else {
                break;
            }
        }
        lo
    }

    /// `Some(value)` when the kernel is one constant on all of `[0, inf)`.
    pub fn global_constant(&self) -> Option<f64> {
        let pieces = self.pieces();
        let first = pieces[0].value;
        pieces.iter().all(|p| p.value == first).then_some(first)
    }

    /// Exact integral over `[lo, hi)`; `hi` may be infinite.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.pieces()
            .iter()
            .map(|p| {
                let len = p.hi.min(hi) - p.lo.max(lo);
                if len > 0.0 && p.value > 0.0 {
                    p.value * len
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Breakpoint union of two kernels restricted to `[lo, hi)`, as
/// `(start, end, f_value, g_value)`.
fn merged(f: &[Piece], g: &[Piece], lo: f64, hi: f64) -> Vec<(f64, f64, f64, f64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut start = lo;
    while i < f.len() && f[i].hi <= start {
        i += 1;
    }
    while j < g.len() && g[j].hi <= start {
        j += 1;
    }
    while start < hi && i < f.len() && j < g.len() {
        let end = f[i].hi.min(g[j].hi).min(hi);
        out.push((start, end, f[i].value, g[j].value));
        start = end;
        if f[i].hi <= start {
            i += 1;
        }
        if g[j].hi <= start {
            j += 1;
        }
    }
    out
}

/// `int_lo^hi f(s) exp(-int_lo^s mu) ds`, exact for piecewise-constant
/// kernels; `hi` may be infinite.
pub fn discounted_integral(f: &AgeKernel, mu: &AgeKernel, lo: f64, hi: f64) -> f64 {
    discounted_pieces(&f.pieces(), &mu.pieces(), lo, hi)
}

fn discounted_pieces(f: &[Piece], mu: &[Piece], lo: f64, hi: f64) -> f64 {
    let mut hazard: f64 = 0.0;
    let mut total = 0.0;
    for (a, b, fv, mv) in merged(f, mu, lo, hi) {
        let len = b - a;
        if fv > 0.0 {
            let decay = (-hazard).exp();
            let part = if mv > 0.0 {
                if len.is_infinite() {
                    1.0 / mv
                } else {
                    -(-mv * len).exp_m1() / mv
                }
            } else {
                len
            };
            total += fv * decay * part;
        }
        hazard += if mv > 0.0 { mv * len } else { 0.0 };
        if hazard.is_infinite() {
            break;
        }
    }
    total
}

/// Survival probability at the grid nodes `a_0 = 0, ..., a_N = a_max`,
/// `pi(a_{i+1}) = pi(a_i) exp(-int_{a_i}^{a_{i+1}} mu)`.
pub fn survival(mu: &AgeKernel, grid: &Grid) -> Result<Vec<f64>> {
    if grid.cells() == 0 {
        return Err(Error::input("empty age grid"));
    }
    let mut pi = Vec::with_capacity(grid.cells() + 1);
    pi.push(1.0);
    for i in 0..grid.cells() {
        let h = mu.integral(grid.node(i), grid.node(i + 1));
        pi.push(pi[i] * (-h).exp());
    }
    Ok(pi)
}

/// Reproduction integral and basic reproduction number of one strain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reproduction {
    /// `r = int_0^inf beta pi`.
    pub r: f64,
    /// `Lambda r / mu_S`.
    pub r0: f64,
    /// Exact mass `int_{a_max}^inf beta pi` not seen by the solver.
    pub tail: f64,
    /// `sup_{a >= a_max} beta * pi(a_max) / inf_{a >= a_max} mu`.
    pub tail_bound: f64,
}

/// Reproduction numbers, checking that the grid captures all but `tail_tol`
/// of the transmission mass.
pub fn reproduction(
    beta: &AgeKernel,
    mu: &AgeKernel,
    grid: &Grid,
    lambda: f64,
    mu_s: f64,
    tail_tol: f64,
) -> Result<Reproduction> {
    if !(lambda > 0.0 && mu_s > 0.0) {
        return Err(Error::input(format!("need lambda > 0 and mu_s > 0 (got {lambda}, {mu_s})")));
    }
    let r = reproduction_integral(beta, mu)?;
    let a_max = grid.a_max();
    let pi_end = (-mu.integral(0.0, a_max)).exp();
    let tail = pi_end * discounted_integral(beta, mu, a_max, f64::INFINITY);

    let beyond = |k: &AgeKernel, pick: fn(f64, f64) -> f64, init: f64| {
        k.pieces()
            .iter()
            .filter(|p| p.hi > a_max)
            .map(|p| p.value)
            .fold(init, pick)
    };
    let beta_tail_sup = beyond(beta, f64::max, 0.0);
    let mu_tail_inf = beyond(mu, f64::min, f64::INFINITY);
    let tail_bound = if beta_tail_sup == 0.0 {
        0.0
    } else {
        beta_tail_sup * pi_end / mu_tail_inf
    };
    if tail_bound > tail_tol {
        let mu_min = mu.inf_value();
        let required_a_max = (beta.sup_norm() / (mu_min * tail_tol)).ln() / mu_min;
        return Err(Error::Grid {
            a_max,
            bound: tail_bound,
            tol: tail_tol,
            required_a_max,
        });
    }
    Ok(Reproduction {
        r,
        r0: lambda * r / mu_s,
        tail,
        tail_bound,
    })
}

/// `int_0^inf beta pi`, independent of any grid.
pub fn reproduction_integral(beta: &AgeKernel, mu: &AgeKernel) -> Result<f64> {
    let r = discounted_integral(beta, mu, 0.0, f64::INFINITY);
    if !r.is_finite() {
        return Err(Error::input("transmission kernel is not integrable against survival (mortality vanishes where beta > 0)"));
    }
    Ok(r)
}

/// `Psi(a_i) = (1/r) int_{a_i}^inf beta(s) exp(-int_{a_i}^s mu) ds` at every
/// grid node, by backward recursion from the exact value at `a_max`.
pub fn psi(beta: &AgeKernel, mu: &AgeKernel, r: f64, grid: &Grid) -> Result<Vec<f64>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::input(format!("psi needs r > 0, got {r}")));
    }
    let (bp, mp) = (beta.pieces(), mu.pieces());
    let n = grid.cells();
    let mut out = vec![0.0; n + 1];
    out[n] = discounted_pieces(&bp, &mp, grid.a_max(), f64::INFINITY) / r;
    for i in (0..n).rev() {
        let (lo, hi) = (grid.node(i), grid.node(i + 1));
        let decay = (-mu.integral(lo, hi)).exp();
        out[i] = decay * out[i + 1] + discounted_pieces(&bp, &mp, lo, hi) / r;
    }
    Ok(out)
}

/// Everything the solver and the functionals need about one strain on a grid.
#[derive(Debug, Clone)]
pub struct DerivedStrain {
    /// Survival at the nodes (length `N + 1`).
    pub pi: Vec<f64>,
    /// Cell averages of survival (length `N`).
    pub pi_cell: Vec<f64>,
    /// Survival along one characteristic step out of cell `i`:
    /// `exp(-int_{a_i}^{a_{i+1}} mu)`.
    pub decay: Vec<f64>,
    /// Cumulative hazard `int_0^{a_i} mu` at the nodes.
    pub hazard: Vec<f64>,
    pub beta_cell: Vec<f64>,
    pub mu_cell: Vec<f64>,
    /// `Psi` at the nodes.
    pub psi: Vec<f64>,
    /// Cell values of `Psi` (trapezoid of the node values).
    pub psi_cell: Vec<f64>,
    pub r: f64,
    pub r0: f64,
    pub tail: f64,
    pub beta_sup: f64,
    pub beta_lo: f64,
    pub beta_norm: f64,
    pub mu_min: f64,
}

impl DerivedStrain {
    pub fn new(
        beta: &AgeKernel,
        mu: &AgeKernel,
        grid: &Grid,
        lambda: f64,
        mu_s: f64,
        tail_tol: f64,
    ) -> Result<Self> {
        let rep = reproduction(beta, mu, grid, lambda, mu_s, tail_tol)?;
        let pi = survival(mu, grid)?;
        let n = grid.cells();
        let da = grid.da();
        let one = AgeKernel::constant(1.0);
        let (one_p, mu_p) = (one.pieces(), mu.pieces());

        let mut decay = Vec::with_capacity(n);
        let mut hazard = Vec::with_capacity(n + 1);
        let mut pi_cell = Vec::with_capacity(n);
        let mut beta_cell = Vec::with_capacity(n);
        let mut mu_cell = Vec::with_capacity(n);
        hazard.push(0.0);
        for i in 0..n {
            let (lo, hi) = (grid.node(i), grid.node(i + 1));
            let h = mu.integral(lo, hi);
            decay.push((-h).exp());
            hazard.push(hazard[i] + h);
            pi_cell.push(pi[i] * discounted_pieces(&one_p, &mu_p, lo, hi) / da);
            beta_cell.push(beta.integral(lo, hi) / da);
            mu_cell.push(h / da);
        }
        let psi = psi(beta, mu, rep.r, grid)?;
        let psi_cell = psi.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(DerivedStrain {
            pi,
            pi_cell,
            decay,
            hazard,
            beta_cell,
            mu_cell,
            psi,
            psi_cell,
            r: rep.r,
            r0: rep.r0,
            tail: rep.tail,
            beta_sup: beta.support_sup(),
            beta_lo: beta.support_lo(),
            beta_norm: beta.sup_norm(),
            mu_min: mu.inf_value(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(da: f64, a_max: f64) -> Grid {
        Grid::covering(da, a_max).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(AgeKernel::constant(2.0).eval(5.0).unwrap(), 2.0);
        let w = AgeKernel::window(1.0, 0.0, 1.0).unwrap();
        assert_eq!(w.eval(1.5).unwrap(), 0.0);
        let p = AgeKernel::piecewise(vec![0.0, 1.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(p.eval(1.0).unwrap(), 3.0);
        assert_eq!(p.eval(0.999).unwrap(), 1.0);
        assert_eq!(p.eval(2.0).unwrap(), 0.0);
        assert!(p.eval(-0.1).is_err());
        assert!(p.eval(f64::NAN).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(AgeKernel::window(-1.0, 0.0, 1.0).is_err());
        assert!(AgeKernel::window(1.0, 2.0, 1.0).is_err());
        assert!(AgeKernel::piecewise(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(AgeKernel::piecewise(vec![0.0, 2.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(AgeKernel::piecewise(vec![0.0, f64::INFINITY, 3.0], vec![1.0, 2.0]).is_err());
        assert!(AgeKernel::piecewise(vec![0.0, 1.0, f64::INFINITY], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn support_bounds() {
        let k = AgeKernel::piecewise(vec![0.0, 1.0, 2.0, 3.0, 5.0], vec![1.0, 0.0, 2.0, 4.0]).unwrap();
        assert_eq!(k.support_sup(), 5.0);
        assert_eq!(k.support_lo(), 2.0);
        assert_eq!(k.sup_norm(), 4.0);
        assert_eq!(AgeKernel::constant(1.0).support_sup(), f64::INFINITY);
        assert_eq!(AgeKernel::constant(1.0).global_constant(), Some(1.0));
        assert_eq!(k.global_constant(), None);
    }

    #[test]
    fn survival_examples() {
        let g = grid(0.5, 3.0);
        let pi = survival(&AgeKernel::constant(1.0), &g).unwrap();
        assert_eq!(pi[0], 1.0);
        assert_abs_diff_eq!(pi[2], (-1.0f64).exp(), epsilon = 1e-15);
        let mu = AgeKernel::piecewise(vec![0.0, 1.0, f64::INFINITY], vec![1.0, 2.0]).unwrap();
        let pi = survival(&mu, &g).unwrap();
        assert_abs_diff_eq!(pi[4], (-3.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(pi[4], 0.049787068367863944, epsilon = 1e-15);
    }

    #[test]
    fn survival_is_exact_off_grid_breakpoints() {
        // breakpoint at 0.3 falls inside a cell of width 0.5
        let mu = AgeKernel::piecewise(vec![0.0, 0.3, f64::INFINITY], vec![1.0, 2.0]).unwrap();
        let pi = survival(&mu, &grid(0.5, 2.0)).unwrap();
        assert_abs_diff_eq!(pi[1], (-(0.3 + 0.4f64)).exp(), epsilon = 1e-15);
    }

    #[test]
    fn reproduction_examples() {
        let g = grid(1e-2, 30.0);
        let c = |v| AgeKernel::constant(v);
        let rep = reproduction(&c(2.0), &c(1.0), &g, 1.0, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(rep.r, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.r0, 2.0, epsilon = 1e-15);
        let rep = reproduction(&c(1.0), &c(2.0), &g, 1.0, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(rep.r, 0.5, epsilon = 1e-15);
        let w = AgeKernel::window(1.0, 0.0, 1.0).unwrap();
        let rep = reproduction(&w, &c(1.0), &g, 2.0, 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(rep.r, 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(rep.r0, 1.2642411176571153, epsilon = 1e-14);
        assert_eq!(rep.tail, 0.0);
    }

    #[test]
    fn reproduction_reports_required_window() {
        let g = grid(1e-2, 5.0);
        let err = reproduction(&AgeKernel::constant(2.0), &AgeKernel::constant(1.0), &g, 1.0, 1.0, 1e-12)
            .unwrap_err();
        match err {
            Error::Grid { required_a_max, .. } => {
                assert_abs_diff_eq!(required_a_max, (2e12f64).ln(), epsilon = 1e-9)
            }
            other => panic!("unexpected {other}"),
        }
        // compactly supported beta has no tail, even on a short window
        let w = AgeKernel::window(3.0, 0.0, 4.0).unwrap();
        assert!(reproduction(&w, &AgeKernel::constant(1.0), &g, 1.0, 1.0, 1e-12).is_ok());
    }

    #[test]
    fn window_kernels_match_closed_form() {
        let g = grid(1e-2, 30.0);
        for &(b, m, hi) in &[(1.0, 1.0, 1.0), (3.0, 0.7, 2.5), (0.2, 2.0, 10.0), (5.0, 1.3, 0.37)] {
            let beta = AgeKernel::window(b, 0.0, hi).unwrap();
            let rep = reproduction(&beta, &AgeKernel::constant(m), &g, 1.0, 1.0, 1e-12).unwrap();
            let exact = b * (1.0 - (-m * hi).exp()) / m;
            assert_abs_diff_eq!(rep.r, exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn psi_examples() {
        let g = grid(1e-2, 30.0);
        let c = |v| AgeKernel::constant(v);
        let p = psi(&c(2.0), &c(1.0), 2.0, &g).unwrap();
        for v in &p {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        let w = AgeKernel::window(1.0, 0.0, 1.0).unwrap();
        let r = reproduction_integral(&w, &c(1.0)).unwrap();
        let p = psi(&w, &c(1.0), r, &g).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert!(p[100..].iter().all(|v| *v == 0.0));
        assert!(psi(&w, &c(1.0), 0.0, &g).is_err());
    }

    #[test]
    fn derived_strain_invariants() {
        let g = grid(0.01, 30.0);
        let beta = AgeKernel::piecewise(vec![0.0, 0.5, 2.0, 7.0], vec![0.5, 3.0, 1.0]).unwrap();
        let mu = AgeKernel::piecewise(vec![0.0, 1.0, f64::INFINITY], vec![1.0, 1.5]).unwrap();
        let d = DerivedStrain::new(&beta, &mu, &g, 1.0, 1.0, 1e-12).unwrap();
        assert_eq!(d.pi[0], 1.0);
        for i in 0..g.cells() {
            assert!(d.pi[i + 1] < d.pi[i]);
            assert!(d.pi[i] <= (-1.0 * g.node(i)).exp() * (1.0 + 1e-14));
        }
        assert_abs_diff_eq!(d.psi[0], 1.0, epsilon = 1e-12);
        let bound = d.beta_norm / (d.r * d.mu_min);
        assert!(d.psi.iter().all(|p| *p >= 0.0 && *p <= bound * (1.0 + 1e-12)));
        assert_eq!(d.beta_sup, 7.0);
        assert_eq!(d.beta_lo, 0.0);
    }

    #[test]
    fn psi_difference_identity_is_first_order() {
        let beta = AgeKernel::piecewise(vec![0.0, 1.0, 3.0], vec![2.0, 0.5]).unwrap();
        let mu = AgeKernel::constant(1.2);
        let r = reproduction_integral(&beta, &mu).unwrap();
        let err = |da: f64| {
            let g = grid(da, 30.0);
            let p = psi(&beta, &mu, r, &g).unwrap();
            (0..g.cells())
                .map(|i| {
                    let a = g.node(i);
                    let lhs = (p[i + 1] - p[i]) / da;
                    let rhs = mu.value_at(a) * p[i] - beta.value_at(a) / r;
                    // skip cells whose right edge is a beta breakpoint
                    if beta.value_at(a) != beta.value_at(g.node(i + 1) - 1e-12) {
                        0.0
                    } else {
                        (lhs - rhs).abs()
                    }
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e2 < 0.05);
        let ratio = e1 / e2;
        assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn discounted_integral_matches_quadrature() {
        // reference from adaptive quadrature of the definition, split at the breakpoints
        let beta = AgeKernel::piecewise(vec![0.2, 0.9, 2.3], vec![1.5, 0.4]).unwrap();
        let mu = AgeKernel::piecewise(vec![0.0, 0.5, f64::INFINITY], vec![0.8, 1.7]).unwrap();
        assert_abs_diff_eq!(discounted_integral(&beta, &mu, 0.1, 3.0), 0.7639826393312481, epsilon = 1e-14);
        // hazard accumulated only from the lower limit
        let one = AgeKernel::constant(1.0);
        assert_abs_diff_eq!(discounted_integral(&one, &mu, 2.0, f64::INFINITY), 1.0 / 1.7, epsilon = 1e-15);
    }
}
