//! Closed-form equilibria, stationarity residuals and distances to
//! equilibrium sets.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::PreparedModel;
use crate::solver::{force_of_infection, GridState};

/// Tolerance on `sum(alpha) = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub s_star: f64,
    /// Cell averages of the equilibrium densities, one vector per strain.
    pub densities: Vec<Vec<f64>>,
}

impl EquilibriumPoint {
    pub fn to_state(&self, t: f64) -> GridState {
        GridState {
            t,
            s: self.s_star,
            x: self.densities.clone(),
        }
    }
}

/// The disease-free equilibrium, or a family of endemic equilibria of block
/// `k` with survivors `survivors` (original indices), optionally pinned to
/// weights `alpha` (full length, zero off the survivors).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EquilibriumSet {
    DiseaseFree,
    Endemic {
        block: usize,
        survivors: Vec<usize>,
        weights: Option<Vec<f64>>,
    },
}

impl EquilibriumSet {
    pub fn endemic(block: usize, survivors: Vec<usize>) -> Self {
        EquilibriumSet::Endemic {
            block,
            survivors,
            weights: None,
        }
    }

    pub fn check(&self, model: &PreparedModel) -> Result<()> {
        if let EquilibriumSet::Endemic {
            block,
            survivors,
            weights,
        } = self
        {
            check_block(model, *block)?;
            if survivors.is_empty() {
                return Err(Error::input("an endemic set needs at least one survivor"));
            }
            let members = model.blocks.members(*block);
            if let Some(j) = survivors.iter().find(|j| !members.contains(j)) {
                return Err(Error::input(format!("strain {} is not in block {block}", j + 1)));
            }
            if let Some(w) = weights {
                check_simplex(model, *block, w)?;
                if let Some(j) = (0..w.len()).find(|j| w[*j] > 0.0 && !survivors.contains(j)) {
                    return Err(Error::input(format!("weight on strain {} which is not a survivor", j + 1)));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for EquilibriumSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquilibriumSet::DiseaseFree => write!(f, "E0"),
            EquilibriumSet::Endemic {
                block,
                survivors,
                weights,
            } => {
                let ids: Vec<String> = survivors.iter().map(|j| (j + 1).to_string()).collect();
                write!(f, "E[{block},{{{}}}]", ids.join(","))?;
                if let Some(w) = weights {
                    let ws: Vec<String> = survivors.iter().map(|&j| format!("{}", w[j])).collect();
                    write!(f, " alpha=({})", ws.join(","))?;
                }
                Ok(())
            }
        }
    }
}

fn check_block(model: &PreparedModel, k: usize) -> Result<()> {
    if k == 0 || k > model.blocks.n_gt {
        return Err(Error::input(format!(
            "block {k} has no endemic equilibria (supercritical blocks are 1..={})",
            model.blocks.n_gt
        )));
    }
    Ok(())
}

fn check_simplex(model: &PreparedModel, k: usize, alpha: &[f64]) -> Result<()> {
    if alpha.len() != model.n() {
        return Err(Error::input(format!("alpha has {} entries for {} strains", alpha.len(), model.n())));
    }
    if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::input(format!("alpha entries must be >= 0, got {a}")));
    }
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::input(format!("alpha sums to {sum}, not 1")));
    }
    let members = model.blocks.members(k);
    if let Some(j) = (0..alpha.len()).find(|j| alpha[*j] > 0.0 && !members.contains(j)) {
        return Err(Error::input(format!("alpha puts weight on strain {} outside block {k}", j + 1)));
    }
    Ok(())
}

pub fn disease_free(model: &PreparedModel) -> EquilibriumPoint {
    EquilibriumPoint {
        s_star: model.params.s0(),
        densities: vec![vec![0.0; model.grid.cells()]; model.n()],
    }
}

/// `mu_S (R0_j - 1) / r_j`, the scale of strain `j`'s density at `alpha_j = 1`.
pub fn density_scale(model: &PreparedModel, j: usize) -> f64 {
    let d = &model.derived[j];
    model.params.mu_s * (d.r0 - 1.0) / d.r
}

/// Density of strain `j` at full weight, `x*_{j,1}`, as cell averages.
pub fn unit_density(model: &PreparedModel, j: usize) -> Vec<f64> {
    let c = density_scale(model, j);
    model.derived[j].pi_cell.iter().map(|p| c * p).collect()
}

/// The point of the endemic family of block `k` with weights `alpha`
/// (full length, indexed by original strain).
pub fn endemic_point(model: &PreparedModel, k: usize, alpha: &[f64]) -> Result<EquilibriumPoint> {
    check_block(model, k)?;
    check_simplex(model, k, alpha)?;
    let densities = (0..model.n())
        .map(|j| {
            let c = density_scale(model, j) * alpha[j];
            model.derived[j].pi_cell.iter().map(|p| c * p).collect()
        })
        .collect();
    Ok(EquilibriumPoint {
        s_star: model.s_star(k),
        densities,
    })
}

/// Discrete stationarity defect of a point on the solver grid:
/// `|Lambda - mu_S S - S sum F| + sum_k (|x_k(0) - S F_k| + |d_a x_k + mu_k x_k|_1)`
/// with `x_k(0)` read from the first cell and a forward difference in age.
pub fn residual(model: &PreparedModel, point: &EquilibriumPoint) -> f64 {
    let p = &model.params;
    let grid = &model.grid;
    let da = grid.da();
    let state = point.to_state(0.0);
    let s = point.s_star;
    let mut total_force = 0.0;
    let mut res = 0.0;
    for (k, x) in point.densities.iter().enumerate() {
        let f = force_of_infection(model, &state, k);
        total_force += f;
        res += (x[0] - s * f).abs();
        let mu = &model.derived[k].mu_cell;
        let mut transport = 0.0;
        for i in 0..x.len() - 1 {
            transport += ((x[i + 1] - x[i]) / da + mu[i] * x[i]).abs();
        }
        res += transport * da;
    }
    res + (p.lambda - p.mu_s * s - s * total_force).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetDistance {
    pub distance: f64,
    /// Projected weights (full length; empty for the disease-free set).
    pub alpha_hat: Vec<f64>,
    /// Every survivor had zero mass, so `alpha_hat` is the uniform fallback.
    pub degenerate: bool,
}

/// Upper bound on the distance from `state` to `set` in the norm
/// `|S| + sum |x_k|_1`, using the mass-ratio projection onto the weights.
pub fn distance_to_set(model: &PreparedModel, state: &GridState, set: &EquilibriumSet) -> Result<SetDistance> {
    set.check(model)?;
    let grid = &model.grid;
    match set {
        EquilibriumSet::DiseaseFree => {
            let d = (state.s - model.params.s0()).abs() + state.x.iter().map(|x| grid.l1(x)).sum::<f64>();
            Ok(SetDistance {
                distance: d,
                alpha_hat: Vec::new(),
                degenerate: false,
            })
        }
        EquilibriumSet::Endemic {
            block,
            survivors,
            weights,
        } => {
            let n = model.n();
            let units: Vec<Option<Vec<f64>>> = (0..n)
                .map(|j| survivors.contains(&j).then(|| unit_density(model, j)))
                .collect();
            let mut degenerate = false;
            let alpha = match weights {
                Some(w) => w.clone(),
                None => {
                    let mut a = vec![0.0; n];
                    for &j in survivors {
                        let unit_mass = grid.integrate(units[j].as_ref().unwrap());
                        a[j] = (state.mass(j, grid) / unit_mass).max(0.0);
                    }
                    let sum: f64 = a.iter().sum();
                    if sum > 0.0 && sum.is_finite() {
                        a.iter_mut().for_each(|v| *v /= sum);
                    } else {
                        degenerate = true;
                        for &j in survivors {
                            a[j] = 1.0 / survivors.len() as f64;
                        }
                    }
                    a
                }
            };
            let mut d = (state.s - model.s_star(*block)).abs();
            for j in 0..n {
                let x = &state.x[j];
                d += match &units[j] {
                    Some(u) => x.iter().zip(u).map(|(v, w)| (v - alpha[j] * w).abs()).sum::<f64>() * grid.da(),
                    None => grid.l1(x),
                };
            }
            Ok(SetDistance {
                distance: d,
                alpha_hat: alpha,
                degenerate,
            })
        }
    }
}
