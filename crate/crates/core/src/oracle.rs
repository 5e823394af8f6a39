//! ODE reduction for globally constant kernels. Integrating the age density
//! of strain `k` gives `I_k = int x_k`, and with constant `beta_k`, `mu_k`:
//!
//! ```text
//! S'   = Lambda - mu_S S - S sum_k beta_k I_k
//! I_k' = S beta_k I_k - mu_k I_k
//! ```
//!
//! The reduction is exact, so it gives an independent reference for the
//! transport solver.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::solver::TrajectoryRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedSystem {
    pub lambda: f64,
    pub mu_s: f64,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
}

pub fn reduce(params: &ModelParams) -> Result<ReducedSystem> {
    let mut beta = Vec::with_capacity(params.n());
    let mut mu = Vec::with_capacity(params.n());
    for (k, s) in params.strains.iter().enumerate() {
        let b = s.beta.global_constant();
        let m = s.mu.global_constant();
        match (b, m) {
            (Some(b), Some(m)) => {
                beta.push(b);
                mu.push(m);
            }
            _ => {
                return Err(Error::NotReducible(format!(
                    "strain {} has a kernel that is not constant on [0, inf)",
                    k + 1
                )))
            }
        }
    }
    Ok(ReducedSystem {
        lambda: params.lambda,
        mu_s: params.mu_s,
        beta,
        mu,
    })
}

impl ReducedSystem {
    /// Right-hand side for the state `(S, I_1, ..., I_n)`.
    pub fn rhs(&self, y: &[f64], out: &mut [f64]) {
        let s = y[0];
        let mut inflow = 0.0;
        for k in 0..self.beta.len() {
            let f = self.beta[k] * y[k + 1];
            inflow += f;
            out[k + 1] = s * f - self.mu[k] * y[k + 1];
        }
        out[0] = self.lambda - self.mu_s * s - s * inflow;
    }

    /// Largest step accepted by [`integrate`] for mortality floor `mu0`.
    pub fn max_step(mu0: f64) -> f64 {
        1e-4 * (1.0f64).max(1.0 / mu0)
    }
}

/// Dense reference solution on a uniform step.
#[derive(Debug, Clone, Serialize)]
pub struct Reference {
    pub h: f64,
    pub t0: f64,
    /// `states[i]` is `(S, I_1, ..., I_n)` at `t0 + i h`.
    pub states: Vec<Vec<f64>>,
}

impl Reference {
    pub fn t_end(&self) -> f64 {
        self.t0 + (self.states.len() - 1) as f64 * self.h
    }

    /// Cubic Hermite interpolation between steps.
    pub fn at(&self, sys: &ReducedSystem, t: f64) -> Vec<f64> {
        let u = ((t - self.t0) / self.h).max(0.0);
        let last = self.states.len() - 1;
        let i = (u.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return self.states[0].clone();
        }
        let s = (u - i as f64).clamp(0.0, 1.0);
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        let mut d0 = vec![0.0; y0.len()];
        let mut d1 = vec![0.0; y0.len()];
        sys.rhs(y0, &mut d0);
        sys.rhs(y1, &mut d1);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s).powi(2);
        let h10 = s * (1.0 - s).powi(2);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        (0..y0.len())
            .map(|k| h00 * y0[k] + h10 * self.h * d0[k] + h01 * y1[k] + h11 * self.h * d1[k])
            .collect()
    }
}

/// Classical fourth-order Runge-Kutta from `(s0, i0)` at `t0` to `t_end`.
/// The last step is shortened to land on `t_end`.
pub fn integrate(sys: &ReducedSystem, s0: f64, i0: &[f64], t0: f64, t_end: f64, h: f64, mu0: f64) -> Result<Reference> {
    if i0.len() != sys.beta.len() {
        return Err(Error::input(format!("{} initial totals for {} strains", i0.len(), sys.beta.len())));
    }
    if !(h > 0.0 && h <= ReducedSystem::max_step(mu0) * (1.0 + 1e-12)) {
        return Err(Error::input(format!(
            "reference step {h} must be in (0, {}]",
            ReducedSystem::max_step(mu0)
        )));
    }
    if !(t_end >= t0) {
        return Err(Error::input(format!("reference horizon {t_end} is before {t0}")));
    }
    let steps = ((t_end - t0) / h - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { h } else { (t_end - t0) / steps as f64 };
    let m = i0.len() + 1;
    let mut y: Vec<f64> = std::iter::once(s0).chain(i0.iter().copied()).collect();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y.clone());
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for _ in 0..steps {
        sys.rhs(&y, &mut k1);
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.rhs(&tmp, &mut k2);
        for i in 0..m {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.rhs(&tmp, &mut k3);
        for i in 0..m {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.rhs(&tmp, &mut k4);
        for i in 0..m {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        states.push(y.clone());
    }
    Ok(Reference { h, t0, states })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleErrors {
    /// `sup_t |S_pde - S_ref|`.
    pub s: f64,
    /// `sup_t |mass_k - I_k|` per strain.
    pub mass: Vec<f64>,
}

impl OracleErrors {
    pub fn max(&self) -> f64 {
        self.mass.iter().copied().fold(self.s, f64::max)
    }
}

/// Sup-norm differences between a solver run and the reference, over the
/// recorded times of the run.
pub fn compare(sys: &ReducedSystem, pde: &TrajectoryRecord, reference: &Reference) -> Result<OracleErrors> {
    let n = sys.beta.len();
    if pde.mass.len() != n {
        return Err(Error::input("trajectory and reference have different strain counts"));
    }
    let slack = 1e-9 * reference.h.max(pde.dt);
    if let (Some(&first), Some(&last)) = (pde.times.first(), pde.times.last()) {
        if first < reference.t0 - slack || last > reference.t_end() + slack {
            return Err(Error::input(format!(
                "trajectory spans [{first}, {last}] but the reference covers [{}, {}]",
                reference.t0,
                reference.t_end()
            )));
        }
    }
    let mut err = OracleErrors {
        s: 0.0,
        mass: vec![0.0; n],
    };
    for (i, &t) in pde.times.iter().enumerate() {
        let y = reference.at(sys, t);
        err.s = err.s.max((pde.s[i] - y[0]).abs());
        for k in 0..n {
            err.mass[k] = err.mass[k].max((pde.mass[k][i] - y[k + 1]).abs());
        }
    }
    Ok(err)
}
