//! Lyapunov functionals of the global-stability theory, their time
//! derivatives along the flow, and monotonicity monitoring.

use std::cmp::Ordering;

use serde::Serialize;

use crate::equilibria::{density_scale, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::model::PreparedModel;
use crate::solver::{force_of_infection, GridState, Monitor};

/// `g(x) = x - ln x - 1`.
pub fn g(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(format!("g needs a positive argument, got {x}")));
    }
    Ok(g_pos(x))
}

/// `g` for arguments known to be positive; accurate near 1.
fn g_pos(x: f64) -> f64 {
    let d = x - 1.0;
    if d.abs() < 0.5 {
        d - d.ln_1p()
    } else {
        x - x.ln() - 1.0
    }
}

/// Weights and flags selecting one functional `L_k^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovConfig {
    pub block: usize,
    /// Full length, zero off block `block`.
    pub weights: Vec<f64>,
    /// `eta[j]` is true when strain `j` enters through `int Psi_j x_j` (outside
    /// the block, or zero weight) and false when it enters through the
    /// `g`-integral against its equilibrium density.
    pub eta: Vec<bool>,
    /// Smallest ratio `x_j / x*_j` admitted inside the logarithm.
    pub positivity_floor: f64,
}

impl LyapunovConfig {
    pub fn new(model: &PreparedModel, block: usize, weights: Vec<f64>) -> Result<Self> {
        if block == 0 || block > model.blocks.n_gt {
            return Err(Error::input(format!(
                "L_k needs a supercritical block (1..={}), got {block}",
                model.blocks.n_gt
            )));
        }
        if weights.len() != model.n() {
            return Err(Error::input(format!("weights have {} entries for {} strains", weights.len(), model.n())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::input("weights must be finite and >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::input(format!("weights sum to {sum}, not 1")));
        }
        let members = model.blocks.members(block);
        let eta: Vec<bool> = (0..model.n())
            .map(|j| !members.contains(&j) || weights[j] == 0.0)
            .collect();
        if let Some(j) = (0..model.n()).find(|&j| eta[j] && weights[j] > 0.0) {
            return Err(Error::input(format!("weight on strain {} outside block {block}", j + 1)));
        }
        Ok(LyapunovConfig {
            block,
            weights,
            eta,
            positivity_floor: 1e-300,
        })
    }

    /// Strains with `eta = 0`.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.eta.iter().enumerate().filter(|(_, e)| !**e).map(|(j, _)| j)
    }
}

/// Value of a functional that may be infinite at states missing an active
/// strain entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LyapunovValue {
    Finite(f64),
    Infinite,
}

impl LyapunovValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            LyapunovValue::Finite(v) => Some(v),
            LyapunovValue::Infinite => None,
        }
    }
}

impl PartialOrd for LyapunovValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        use LyapunovValue::*;
        match (self, other) {
            (Finite(a), Finite(b)) => a.partial_cmp(b),
            (Finite(_), Infinite) => Some(Ordering::Less),
            (Infinite, Finite(_)) => Some(Ordering::Greater),
            (Infinite, Infinite) => Some(Ordering::Equal),
        }
    }
}

fn positive_s(state: &GridState) -> Result<f64> {
    if !(state.s > 0.0) {
        return Err(Error::domain(format!("functional needs S > 0, got {}", state.s)));
    }
    Ok(state.s)
}

fn psi_mass(model: &PreparedModel, j: usize, x: &[f64]) -> f64 {
    let psi = &model.derived[j].psi_cell;
    crate::grid::dot(psi, x) * model.grid.da()
}

/// `L_0 = S0 g(S / S0) + sum_k int Psi_k x_k`.
pub fn l0(model: &PreparedModel, state: &GridState) -> Result<f64> {
    let s = positive_s(state)?;
    let s0 = model.params.s0();
    let mut v = s0 * g_pos(s / s0);
    for (j, x) in state.x.iter().enumerate() {
        v += psi_mass(model, j, x);
    }
    Ok(v)
}

/// `dL_0/dt = -(Lambda - mu_S S)^2 / (mu_S S) + sum_k (R0_k - 1) / r_k F_k`.
pub fn l0_dt(model: &PreparedModel, state: &GridState) -> Result<f64> {
    let s = positive_s(state)?;
    let p = &model.params;
    let mut v = -(p.lambda - p.mu_s * s).powi(2) / (p.mu_s * s);
    for (j, d) in model.derived.iter().enumerate() {
        v += (d.r0 - 1.0) / d.r * force_of_infection(model, state, j);
    }
    Ok(v)
}

/// Equilibrium density of active strain `j` under `cfg`.
fn target_density(model: &PreparedModel, cfg: &LyapunovConfig, j: usize) -> Vec<f64> {
    let c = density_scale(model, j) * cfg.weights[j];
    model.derived[j].pi_cell.iter().map(|p| c * p).collect()
}

/// `L_k^alpha = S* g(S/S*) + sum_{eta=1} int Psi x + sum_{eta=0} int Psi x* g(x / x*)`.
///
/// Returns `Infinite` when an active strain is absent on the whole support
/// of `Psi x*`, and a domain error when it vanishes on part of it.
pub fn lk(model: &PreparedModel, state: &GridState, cfg: &LyapunovConfig) -> Result<LyapunovValue> {
    let s = positive_s(state)?;
    let s_star = model.s_star(cfg.block);
    let da = model.grid.da();
    let mut v = s_star * g_pos(s / s_star);
    let mut infinite = false;
    for (j, x) in state.x.iter().enumerate() {
        if cfg.eta[j] {
            v += psi_mass(model, j, x);
            continue;
        }
        let psi = &model.derived[j].psi_cell;
        let star = target_density(model, cfg, j);
        let mut acc = 0.0;
        let mut bad = None;
        let mut any_positive = false;
        for i in 0..x.len() {
            let w = psi[i] * star[i];
            if w == 0.0 {
                // x* vanishes only where survival underflows: 0 g(x/0) -> Psi x
                if star[i] == 0.0 {
                    acc += psi[i] * x[i];
                }
                continue;
            }
            let ratio = x[i] / star[i];
            if ratio > cfg.positivity_floor {
                any_positive = true;
                acc += w * g_pos(ratio);
            } else if bad.is_none() {
                bad = Some(i);
            }
        }
        match (bad, any_positive) {
            (None, _) => v += acc * da,
            (Some(_), false) => infinite = true,
            (Some(i), true) => {
                return Err(Error::domain(format!(
                    "strain {} density {:e} at age {:.6} is below the positivity floor relative to its \
                     equilibrium density; L_{} is undefined",
                    j + 1,
                    x[i],
                    model.grid.node(i),
                    cfg.block
                )))
            }
        }
    }
    Ok(if infinite {
        LyapunovValue::Infinite
    } else {
        LyapunovValue::Finite(v)
    })
}

/// Time derivative of `L_k^alpha` along the flow at `state`:
///
/// ```text
/// - sum_{eta=0} S* int beta_j x*_j g(x_j F*_j / (x*_j F_j))
/// - S* (sum_{eta=0} F*_j) g(S*/S)
/// - sum_{eta=1} (1/r_j - S*) F_j
/// - mu_S (S - S*)^2 / S
/// ```
///
/// `F*_j = int beta_j x*_j`; in the continuum `S* sum F*_j = Lambda - mu_S S*`.
pub fn lk_dt(model: &PreparedModel, state: &GridState, cfg: &LyapunovConfig) -> Result<f64> {
    let s = positive_s(state)?;
    let s_star = model.s_star(cfg.block);
    let da = model.grid.da();
    let mut v = -model.params.mu_s * (s - s_star).powi(2) / s;
    let mut total_star = 0.0;
    for (j, x) in state.x.iter().enumerate() {
        let d = &model.derived[j];
        let f = force_of_infection(model, state, j);
        if cfg.eta[j] {
            v -= (1.0 / d.r - s_star) * f;
            continue;
        }
        if !(f > 0.0) {
            return Err(Error::domain(format!("strain {} has zero force of infection; dL_{}/dt is undefined", j + 1, cfg.block)));
        }
        let star = target_density(model, cfg, j);
        let f_star = d.beta_cell.iter().zip(&star).map(|(b, v)| b * v).sum::<f64>() * da;
        total_star += f_star;
        let scale = f_star / f;
        let mut acc = 0.0;
        for i in 0..x.len() {
            let w = d.beta_cell[i] * star[i];
            if w == 0.0 {
                continue;
            }
            let ratio = x[i] * scale / star[i];
            if !(ratio > 0.0) {
                return Err(Error::domain(format!(
                    "strain {} vanishes at age {:.6} inside the transmission support; dL_{}/dt is undefined",
                    j + 1,
                    model.grid.node(i),
                    cfg.block
                )));
            }
            acc += w * g_pos(ratio);
        }
        v -= s_star * acc * da;
    }
    v -= s_star * total_star * g_pos(s_star / s);
    Ok(v)
}

/// Sufficient statistics of a state for evaluating `L_k^alpha` at any
/// weights of block `k`, so the weights can be chosen after a run.
///
/// With `x*_j = alpha_j u_j` (`u_j` the unit-weight density),
/// `int Psi x* g(x/x*) = A_j - alpha_j B_j + alpha_j ln(alpha_j) D_j + alpha_j C_j - alpha_j D_j`
/// with `A = int Psi x`, `B = int Psi u ln x`, `C = int Psi u ln u`,
/// `D = int Psi u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LkStats {
    pub t: f64,
    pub s: f64,
    /// `int Psi_j x_j` for every strain.
    pub a: Vec<f64>,
    /// `int Psi_j u_j ln x_j` for block strains; `None` if some `x_j` vanishes
    /// where `Psi_j u_j > 0`.
    pub b: Vec<Option<f64>>,
    /// Whether strain `j` is zero on the whole support of `Psi_j u_j`.
    pub absent: Vec<bool>,
}

/// Per-block constants `C_j`, `D_j` of [`LkStats`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LkConstants {
    pub block: usize,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl LkConstants {
    pub fn new(model: &PreparedModel, block: usize) -> Self {
        let n = model.n();
        let (mut c, mut d) = (vec![0.0; n], vec![0.0; n]);
        let da = model.grid.da();
        for &j in model.blocks.members(block) {
            let scale = density_scale(model, j);
            let psi = &model.derived[j].psi_cell;
            for (i, p) in model.derived[j].pi_cell.iter().enumerate() {
                let u = scale * p;
                if u > 0.0 {
                    c[j] += psi[i] * u * u.ln();
                    d[j] += psi[i] * u;
                }
            }
            c[j] *= da;
            d[j] *= da;
        }
        LkConstants { block, c, d }
    }
}

impl LkStats {
    pub fn new(model: &PreparedModel, state: &GridState, block: usize) -> Self {
        let n = model.n();
        let da = model.grid.da();
        let members = model.blocks.members(block);
        let mut b = vec![Some(0.0); n];
        let mut absent = vec![false; n];
        let a = (0..n).map(|j| psi_mass(model, j, &state.x[j])).collect();
        for &j in members {
            let scale = density_scale(model, j);
            let psi = &model.derived[j].psi_cell;
            let x = &state.x[j];
            let mut acc = 0.0;
            let (mut zero, mut positive) = (false, false);
            for (i, p) in model.derived[j].pi_cell.iter().enumerate() {
                let w = psi[i] * scale * p;
                if w == 0.0 {
                    continue;
                }
                if x[i] > 0.0 {
                    positive = true;
                    acc += w * x[i].ln();
                } else {
                    zero = true;
                }
            }
            b[j] = (!zero).then_some(acc * da);
            absent[j] = !positive;
        }
        LkStats {
            t: state.t,
            s: state.s,
            a,
            b,
            absent,
        }
    }

    /// `L_k^alpha` from the statistics; agrees with [`lk`] up to rounding.
    pub fn value(&self, model: &PreparedModel, consts: &LkConstants, alpha: &[f64]) -> Result<LyapunovValue> {
        if !(self.s > 0.0) {
            return Err(Error::domain(format!("functional needs S > 0, got {}", self.s)));
        }
        let s_star = model.s_star(consts.block);
        let members = model.blocks.members(consts.block);
        let mut v = s_star * g_pos(self.s / s_star);
        let mut infinite = false;
        for j in 0..model.n() {
            let w = alpha[j];
            if !members.contains(&j) || w == 0.0 {
                v += self.a[j];
                continue;
            }
            match self.b[j] {
                Some(b) => v += self.a[j] - w * b + w * w.ln() * consts.d[j] + w * consts.c[j] - w * consts.d[j],
                None if self.absent[j] => infinite = true,
                None => {
                    return Err(Error::domain(format!(
                        "strain {} vanishes on part of its age support at t = {}; L_{} is undefined",
                        j + 1,
                        self.t,
                        consts.block
                    )))
                }
            }
        }
        Ok(if infinite {
            LyapunovValue::Infinite
        } else {
            LyapunovValue::Finite(v)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// `max(L(t_{i+1}) - L(t_i), 0)` over the series.
    pub max_increment: f64,
    /// Time of the first increment above the tolerance.
    pub first_violation: Option<f64>,
    /// `L(t_0) - L(t_end)`.
    pub total_decrease: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Scans `(t, L)` pairs for increases above `tol`.
pub fn monitor(series: &[(f64, f64)], tol: f64) -> MonotonicityReport {
    let mut max_increment: f64 = 0.0;
    let mut first_violation = None;
    for w in series.windows(2) {
        let inc = w[1].1 - w[0].1;
        max_increment = max_increment.max(inc);
        if inc > tol && first_violation.is_none() {
            first_violation = Some(w[1].0);
        }
    }
    let total_decrease = match (series.first(), series.last()) {
        (Some(a), Some(b)) => a.1 - b.1,
        _ => 0.0,
    };
    MonotonicityReport {
        max_increment,
        first_violation,
        total_decrease,
        tolerance: tol,
        samples: series.len(),
    }
}

/// Records `L_0` and its analytic derivative.
#[derive(Debug, Clone, Default)]
pub struct L0Monitor {
    pub every: usize,
    /// `(t, L_0, dL_0/dt)`.
    pub series: Vec<(f64, f64, f64)>,
}

impl Monitor for L0Monitor {
    fn every(&self) -> usize {
        self.every
    }

    fn observe(&mut self, model: &PreparedModel, state: &GridState, _forces: &[f64]) -> Result<()> {
        self.series.push((state.t, l0(model, state)?, l0_dt(model, state)?));
        Ok(())
    }
}

/// Records [`LkStats`] from time `start` on.
#[derive(Debug, Clone)]
pub struct LkStatsMonitor {
    pub every: usize,
    pub start: f64,
    pub block: usize,
    pub stats: Vec<LkStats>,
}

impl LkStatsMonitor {
    pub fn new(block: usize, every: usize, start: f64) -> Self {
        LkStatsMonitor {
            every,
            start,
            block,
            stats: Vec::new(),
        }
    }

    /// `(t, L_k^alpha)` over the recorded states; infinite values are an error.
    pub fn series(&self, model: &PreparedModel, alpha: &[f64]) -> Result<Vec<(f64, f64)>> {
        let consts = LkConstants::new(model, self.block);
        self.stats
            .iter()
            .map(|st| match st.value(model, &consts, alpha)? {
                LyapunovValue::Finite(v) => Ok((st.t, v)),
                LyapunovValue::Infinite => Err(Error::domain(format!("L_{} is infinite at t = {}", self.block, st.t))),
            })
            .collect()
    }
}

impl Monitor for LkStatsMonitor {
    fn every(&self) -> usize {
        self.every
    }

    fn observe(&mut self, model: &PreparedModel, state: &GridState, _forces: &[f64]) -> Result<()> {
        if state.t >= self.start {
            self.stats.push(LkStats::new(model, state, self.block));
        }
        Ok(())
    }
}

/// Records `L_k^alpha` and its analytic derivative for fixed weights.
#[derive(Debug, Clone)]
pub struct LkMonitor {
    pub every: usize,
    pub cfg: LyapunovConfig,
    /// `(t, L_k, dL_k/dt)`; the derivative is NaN where it is undefined.
    pub series: Vec<(f64, LyapunovValue, f64)>,
}

impl Monitor for LkMonitor {
    fn every(&self) -> usize {
        self.every
    }

    fn observe(&mut self, model: &PreparedModel, state: &GridState, _forces: &[f64]) -> Result<()> {
        let v = lk(model, state, &self.cfg).unwrap_or(LyapunovValue::Infinite);
        let d = lk_dt(model, state, &self.cfg).unwrap_or(f64::NAN);
        self.series.push((state.t, v, d));
        Ok(())
    }
}
