//! Model parameters, the standing assumptions on them, and the grouping of
//! strains into blocks of equal reproduction number.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{reproduction_integral, AgeKernel, DerivedStrain};

/// Default relative tolerance for declaring two reproduction numbers equal.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Strain {
    pub beta: AgeKernel,
    pub mu: AgeKernel,
}

impl Strain {
    pub fn new(beta: AgeKernel, mu: AgeKernel) -> Self {
        Strain { beta, mu }
    }

    /// Globally constant transmission and mortality.
    pub fn constant(beta: f64, mu: f64) -> Self {
        Strain::new(AgeKernel::constant(beta), AgeKernel::constant(mu))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Susceptible inflow.
    pub lambda: f64,
    /// Susceptible death rate.
    pub mu_s: f64,
    /// Uniform lower bound on every mortality rate.
    pub mu0: f64,
    pub strains: Vec<Strain>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    /// Which standing assumption fails: `"positivity"`, `"mortality floor"`,
    /// `"kernel"` or `"transmission support"`.
    pub item: &'static str,
    /// Parameter concerned: `lambda`, `mu_s`, `mu0`, `beta` or `mu`.
    pub field: &'static str,
    /// Original strain index, if the failure concerns one strain.
    pub strain: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub failures: Vec<Failure>,
    /// Accepted deviations (for instance discontinuous kernels).
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in &self.failures {
            match x.strain {
                Some(k) => writeln!(f, "  {} ({}, strain {}): {}", x.item, x.field, k + 1, x.message)?,
                None => writeln!(f, "  {} ({}): {}", x.item, x.field, x.message)?,
            }
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}

impl ModelParams {
    pub fn new(lambda: f64, mu_s: f64, mu0: f64, strains: Vec<Strain>) -> Self {
        ModelParams {
            lambda,
            mu_s,
            mu0,
            strains,
        }
    }

    pub fn n(&self) -> usize {
        self.strains.len()
    }

    /// Disease-free susceptible level `Lambda / mu_S`.
    pub fn s0(&self) -> f64 {
        self.lambda / self.mu_s
    }

    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let mut fail = |strain: Option<usize>, item: &'static str, field: &'static str, message: String| {
            rep.failures.push(Failure {
                item,
                field,
                strain,
                message,
            })
        };
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.lambda) {
            fail(None, "positivity", "lambda", format!("Lambda must be positive (got {})", self.lambda));
        }
        if !finite_pos(self.mu_s) {
            fail(None, "positivity", "mu_s", format!("mu_S must be positive (got {})", self.mu_s));
        }
        if !finite_pos(self.mu0) {
            fail(None, "positivity", "mu0", format!("mu0 must be positive (got {})", self.mu0));
        } else if self.mu_s < self.mu0 {
            fail(None, "mortality floor", "mu_s", format!("mu_S = {} is below mu0 = {}", self.mu_s, self.mu0));
        }
        let mut discontinuous = Vec::new();
        for (k, s) in self.strains.iter().enumerate() {
            if let Err(e) = s.beta.check() {
                fail(Some(k), "kernel", "beta", format!("{e}"));
                continue;
            }
            if let Err(e) = s.mu.check() {
                fail(Some(k), "kernel", "mu", format!("{e}"));
                continue;
            }
            if s.beta.is_zero() {
                fail(Some(k), "kernel", "beta", "beta is identically zero".into());
            }
            let mu_min = s.mu.inf_value();
            if mu_min < self.mu0 {
                fail(Some(k), "mortality floor", "mu", format!("mu drops to {mu_min} below mu0 = {}", self.mu0));
            }
            // A nonzero piecewise-constant beta is positive on its last run of
            // positive pieces, so this check can only fail through the zero kernel.
            if !s.beta.is_zero() && !(s.beta.support_lo() < s.beta.support_sup()) {
                fail(Some(k), "transmission support", "beta", "beta has no interval of positivity below sup(supp beta)".into());
            }
            if s.beta.global_constant().is_none() {
                discontinuous.push(k + 1);
            }
        }
        if !discontinuous.is_empty() {
            rep.notes.push(format!(
                "beta of strain(s) {discontinuous:?} is piecewise constant and not uniformly continuous; \
                 accepted, the assumption only serves orbit compactness"
            ));
        }
        rep
    }

    /// Exact `(r_k, R0_k)` for every strain, independent of any grid.
    pub fn reproduction_numbers(&self) -> Result<Vec<(f64, f64)>> {
        self.strains
            .iter()
            .map(|s| {
                let r = reproduction_integral(&s.beta, &s.mu)?;
                Ok((r, self.lambda * r / self.mu_s))
            })
            .collect()
    }

    pub fn beta_norm_sum(&self) -> f64 {
        self.strains.iter().map(|s| s.beta.sup_norm()).sum()
    }

    /// Grid with step `da` and a window long enough for `tail_tol`.
    pub fn default_grid(&self, da: f64, tail_tol: f64) -> Result<Grid> {
        let beta_sup = self.strains.iter().map(|s| s.beta.sup_norm()).fold(0.0, f64::max);
        Grid::covering(da, Grid::required_a_max(self.mu0, beta_sup, tail_tol))
    }
}

/// Strains sorted by descending reproduction number and cut into blocks of
/// equal value. Block indices are 1-based; strain indices are the original
/// (input) indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockStructure {
    /// `order[p]` is the original index of the strain at sorted position `p`.
    pub order: Vec<usize>,
    /// Cumulative block ends `sigma_1 < ... < sigma_{n_r} = n`.
    pub sigma: Vec<usize>,
    pub n_r: usize,
    pub n_gt: usize,
    pub tie_tol: f64,
    /// Reproduction numbers in original order.
    pub r0: Vec<f64>,
}

impl BlockStructure {
    /// Groups values whose relative distance to the first (largest) value of
    /// their block is at most `tie_tol`.
    pub fn from_r0(r0: &[f64], tie_tol: f64) -> Self {
        let mut order: Vec<usize> = (0..r0.len()).collect();
        order.sort_by(|&a, &b| r0[b].total_cmp(&r0[a]));
        let mut sigma = Vec::new();
        let mut head = None;
        for (p, &j) in order.iter().enumerate() {
            if let Some(h) = head {
                if !tied(h, r0[j], tie_tol) {
                    sigma.push(p);
                    head = Some(r0[j]);
                }
            } else {
                head = Some(r0[j]);
            }
        }
        if !order.is_empty() {
            sigma.push(order.len());
        }
        Self::finish(order, sigma, tie_tol, r0)
    }

    /// Blocks declared by the user as lists of original indices. Blocks must
    /// partition the strains and be strictly decreasing in reproduction number.
    pub fn explicit(groups: &[Vec<usize>], r0: &[f64], tie_tol: f64) -> Result<Self> {
        let n = r0.len();
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(groups.len());
        for g in groups {
            if g.is_empty() {
                return Err(Error::input("declared block is empty"));
            }
            for &j in g {
                if j >= n {
                    return Err(Error::input(format!("declared block names strain {} but there are {n}", j + 1)));
                }
                if std::mem::replace(&mut seen[j], true) {
                    return Err(Error::input(format!("strain {} appears in two declared blocks", j + 1)));
                }
                order.push(j);
            }
            sigma.push(order.len());
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::input(format!("strain {} is in no declared block", j + 1)));
        }
        let mut start = 0;
        let mut prev_min = f64::INFINITY;
        for &end in &sigma {
            let vals = order[start..end].iter().map(|&j| r0[j]);
            let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.fold(f64::INFINITY, f64::min);
            if !(max < prev_min) {
                return Err(Error::input(
                    "declared blocks must be listed by strictly decreasing reproduction number",
                ));
            }
            prev_min = min;
            start = end;
        }
        Ok(Self::finish(order, sigma, tie_tol, r0))
    }

    fn finish(order: Vec<usize>, sigma: Vec<usize>, tie_tol: f64, r0: &[f64]) -> Self {
        let mut s = BlockStructure {
            n_r: sigma.len(),
            n_gt: 0,
            order,
            sigma,
            tie_tol,
            r0: r0.to_vec(),
        };
        // a block is supercritical when every member clears 1 by more than the tie tolerance
        s.n_gt = (1..=s.n_r)
            .take_while(|&k| s.members(k).iter().all(|&j| r0[j] > 1.0 + tie_tol))
            .count();
        s
    }

    /// Original indices of the strains in block `k` (1-based).
    pub fn members(&self, k: usize) -> &[usize] {
        assert!(k >= 1 && k <= self.n_r, "block {k} out of range 1..={}", self.n_r);
        let lo = if k == 1 { 0 } else { self.sigma[k - 2] };
        &self.order[lo..self.sigma[k - 1]]
    }

    /// Block (1-based) containing original strain `j`.
    pub fn block_of(&self, j: usize) -> usize {
        let p = self.order.iter().position(|&o| o == j).expect("strain index out of range");
        self.sigma.partition_point(|&s| s <= p) + 1
    }

    /// The strain at the end of block `k`, whose `r` fixes `S*` for that block.
    pub fn last_of(&self, k: usize) -> usize {
        *self.members(k).last().unwrap()
    }
}

fn tied(head: f64, v: f64, tol: f64) -> bool {
    (head - v).abs() <= tol * head.abs().max(v.abs())
}

/// Validated parameters together with their grid, derived strain data and
/// block structure.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub params: ModelParams,
    pub grid: Grid,
    pub derived: Vec<DerivedStrain>,
    pub blocks: BlockStructure,
    pub tail_tol: f64,
}

impl PreparedModel {
    pub fn new(params: ModelParams, grid: Grid, tail_tol: f64, tie_tol: f64) -> Result<Self> {
        Self::build(params, grid, tail_tol, |r0| Ok(BlockStructure::from_r0(r0, tie_tol)))
    }

    pub fn with_blocks(params: ModelParams, grid: Grid, tail_tol: f64, groups: &[Vec<usize>], tie_tol: f64) -> Result<Self> {
        Self::build(params, grid, tail_tol, |r0| BlockStructure::explicit(groups, r0, tie_tol))
    }

    /// Default tolerances and the grid from [`ModelParams::default_grid`].
    pub fn with_step(params: ModelParams, da: f64) -> Result<Self> {
        let tol = crate::grid::DEFAULT_TAIL_TOL;
        let grid = {
            let report = params.validate();
            if !report.is_valid() {
                return Err(Error::Invalid(report));
            }
            params.default_grid(da, tol)?
        };
        Self::new(params, grid, tol, DEFAULT_TIE_TOL)
    }

    fn build(
        params: ModelParams,
        grid: Grid,
        tail_tol: f64,
        blocks: impl FnOnce(&[f64]) -> Result<BlockStructure>,
    ) -> Result<Self> {
        let report = params.validate();
        if !report.is_valid() {
            return Err(Error::Invalid(report));
        }
        grid.check_tail(params.mu0, tail_tol)?;
        let derived = params
            .strains
            .iter()
            .map(|s| DerivedStrain::new(&s.beta, &s.mu, &grid, params.lambda, params.mu_s, tail_tol))
            .collect::<Result<Vec<_>>>()?;
        let r0: Vec<f64> = derived.iter().map(|d| d.r0).collect();
        let blocks = blocks(&r0)?;
        Ok(PreparedModel {
            params,
            grid,
            derived,
            blocks,
            tail_tol,
        })
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    /// `S*` of block `k`: `1 / r` of the last strain of the block.
    pub fn s_star(&self, k: usize) -> f64 {
        1.0 / self.derived[self.blocks.last_of(k)].r
    }

    pub fn r0(&self) -> Vec<f64> {
        self.blocks.r0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(beta: f64, mu: f64) -> ModelParams {
        ModelParams::new(1.0, 1.0, 1.0, vec![Strain::constant(beta, mu)])
    }

    #[test]
    fn validate_examples() {
        assert!(one(2.0, 1.0).validate().is_valid());
        let mut p = one(2.0, 1.0);
        p.mu_s = 0.0;
        let rep = p.validate();
        assert_eq!(rep.failures[0].item, "positivity");
        assert!(rep.failures[0].message.contains("mu_S"));
        let rep = one(0.0, 1.0).validate();
        assert_eq!(rep.failures.len(), 1);
        assert_eq!(rep.failures[0].strain, Some(0));
        assert!(rep.failures[0].message.contains("identically zero"));
    }

    #[test]
    fn validate_mortality_floor() {
        let mut p = one(2.0, 1.0);
        p.strains[0].mu = AgeKernel::piecewise(vec![0.0, 1.0, f64::INFINITY], vec![1.0, 0.5]).unwrap();
        assert!(!p.validate().is_valid());
        // mortality vanishing past a finite last edge
        p.strains[0].mu = AgeKernel::piecewise(vec![0.0, 10.0], vec![1.0]).unwrap();
        assert!(!p.validate().is_valid());
        p.mu_s = 0.5;
        p.strains[0].mu = AgeKernel::constant(1.0);
        assert!(!p.validate().is_valid());
    }

    #[test]
    fn windowed_beta_gets_a_note() {
        let mut p = one(2.0, 1.0);
        p.strains[0].beta = AgeKernel::window(1.0, 0.0, 1.0).unwrap();
        let rep = p.validate();
        assert!(rep.is_valid());
        assert_eq!(rep.notes.len(), 1);
    }

    #[test]
    fn block_examples() {
        let b = BlockStructure::from_r0(&[2.0, 2.0, 1.5, 0.8], DEFAULT_TIE_TOL);
        assert_eq!(b.sigma, vec![2, 3, 4]);
        assert_eq!((b.n_r, b.n_gt), (3, 2));
        assert_eq!(b.members(1), &[0, 1]);
        assert_eq!(b.block_of(3), 3);

        let b = BlockStructure::from_r0(&[2.0], DEFAULT_TIE_TOL);
        assert_eq!((b.sigma.clone(), b.n_r, b.n_gt), (vec![1], 1, 1));

        let b = BlockStructure::from_r0(&[0.9, 0.5], DEFAULT_TIE_TOL);
        assert_eq!((b.sigma.clone(), b.n_r, b.n_gt), (vec![1, 2], 2, 0));
    }

    #[test]
    fn blocks_keep_original_indices() {
        let b = BlockStructure::from_r0(&[0.8, 2.0, 1.5, 2.0 * (1.0 + 1e-12)], DEFAULT_TIE_TOL);
        assert_eq!(b.order, vec![3, 1, 2, 0]);
        assert_eq!(b.sigma, vec![2, 3, 4]);
        assert_eq!(b.block_of(1), 1);
        assert_eq!(b.last_of(1), 1);
    }

    #[test]
    fn threshold_one_is_not_supercritical() {
        let b = BlockStructure::from_r0(&[1.0, 0.5], DEFAULT_TIE_TOL);
        assert_eq!(b.n_gt, 0);
    }

    #[test]
    fn explicit_blocks() {
        let r0 = [2.0, 1.9, 0.5];
        let b = BlockStructure::explicit(&[vec![1, 0], vec![2]], &r0, DEFAULT_TIE_TOL).unwrap();
        assert_eq!(b.sigma, vec![2, 3]);
        assert_eq!(b.n_gt, 1);
        assert!(BlockStructure::explicit(&[vec![0], vec![1]], &r0, DEFAULT_TIE_TOL).is_err());
        assert!(BlockStructure::explicit(&[vec![2], vec![0, 1]], &r0, DEFAULT_TIE_TOL).is_err());
        assert!(BlockStructure::explicit(&[vec![0, 1], vec![2, 0]], &r0, DEFAULT_TIE_TOL).is_err());
    }

    #[test]
    fn prepared_model_s_star() {
        let p = ModelParams::new(1.0, 1.0, 1.0, vec![Strain::constant(2.0, 1.0), Strain::constant(1.5, 1.0)]);
        let m = PreparedModel::with_step(p, 0.01).unwrap();
        assert!((m.s_star(1) - 0.5).abs() < 1e-15);
        assert!((m.s_star(2) - 1.0 / 1.5).abs() < 1e-15);
        assert_eq!(m.blocks.n_gt, 2);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let err = PreparedModel::with_step(one(0.0, 1.0), 0.01).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }
}
