//! Time stepping along characteristics. With `dt = da` every age cell moves
//! exactly one cell per step, so transport carries no numerical diffusion;
//! the only approximations are in the boundary inflow and the susceptible
//! update.
//!
//! One step from `(S, x)` with forces `F_k` of the current state:
//!
//! ```text
//! S'        = (S + dt Lambda) / (1 + dt (mu_S + sum F_k))
//! x_k'[i+1] = x_k[i] exp(-int_cell mu_k)
//! x_k'[0]   = S' F_k pi_k(cell 0)
//! ```
//!
//! The inflow uses the updated `S'`, so the infections removed from the
//! susceptible pool are exactly the ones entering the first age cell.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::PreparedModel;

/// State at one time: susceptibles and per-strain cell averages of the
/// infected age densities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridState {
    pub t: f64,
    pub s: f64,
    pub x: Vec<Vec<f64>>,
}

impl GridState {
    /// `S = s`, every density zero.
    pub fn zero(model: &PreparedModel, s: f64) -> Self {
        GridState {
            t: 0.0,
            s,
            x: vec![vec![0.0; model.grid.cells()]; model.n()],
        }
    }

    pub fn check(&self, model: &PreparedModel) -> Result<()> {
        if !(self.s.is_finite() && self.s >= 0.0) {
            return Err(Error::input(format!("initial S must be finite and >= 0, got {}", self.s)));
        }
        if self.x.len() != model.n() {
            return Err(Error::input(format!("state has {} densities for {} strains", self.x.len(), model.n())));
        }
        for (k, x) in self.x.iter().enumerate() {
            if x.len() != model.grid.cells() {
                return Err(Error::input(format!(
                    "density of strain {} has {} cells, grid has {}",
                    k + 1,
                    x.len(),
                    model.grid.cells()
                )));
            }
            if let Some(i) = x.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::input(format!("density of strain {} is {} in cell {i}", k + 1, x[i])));
            }
        }
        Ok(())
    }

    pub fn mass(&self, k: usize, grid: &Grid) -> f64 {
        grid.integrate(&self.x[k])
    }

    /// `S + sum_k |x_k|_1`.
    pub fn norm(&self, grid: &Grid) -> f64 {
        self.s.abs() + self.x.iter().map(|x| grid.l1(x)).sum::<f64>()
    }
}

/// Exact cell averages of `height * 1_[lo, hi)`.
pub fn window_density(grid: &Grid, lo: f64, hi: f64, height: f64) -> Vec<f64> {
    (0..grid.cells())
        .map(|i| {
            let overlap = hi.min(grid.node(i + 1)) - lo.max(grid.node(i));
            if overlap > 0.0 {
                height * overlap / grid.da()
            } else {
                0.0
            }
        })
        .collect()
}

/// `int beta_k x_k da` with cell-averaged beta, summed in ascending age.
pub fn force_of_infection(model: &PreparedModel, state: &GridState, k: usize) -> f64 {
    force(&model.derived[k].beta_cell, &state.x[k], model.grid.da())
}

fn force(beta: &[f64], x: &[f64], da: f64) -> f64 {
    crate::grid::dot(beta, x) * da
}

pub fn forces(model: &PreparedModel, state: &GridState) -> Vec<f64> {
    (0..model.n()).map(|k| force_of_infection(model, state, k)).collect()
}

/// Advances `state` by one step. `forces` receives the pre-step forces of
/// infection and `discarded` accumulates the mass carried past `a_max`.
pub fn step_in_place(
    model: &PreparedModel,
    state: &mut GridState,
    forces: &mut [f64],
    discarded: &mut [f64],
) -> Result<()> {
    for k in 0..model.n() {
        forces[k] = force_of_infection(model, state, k);
    }
    let mut next = vec![0.0; model.n()];
    advance(model, state, forces, &mut next, discarded)
}

/// One step given the forces of infection `forces` of the current state;
/// writes the forces of the new state to `next_forces`.
fn advance(
    model: &PreparedModel,
    state: &mut GridState,
    forces: &[f64],
    next_forces: &mut [f64],
    discarded: &mut [f64],
) -> Result<()> {
    let grid = &model.grid;
    let (da, dt, n_cells) = (grid.da(), grid.dt(), grid.cells());
    let p = &model.params;
    let total: f64 = forces.iter().sum();
    let s_next = (state.s + dt * p.lambda) / (1.0 + dt * (p.mu_s + total));
    for (k, x) in state.x.iter_mut().enumerate() {
        let d = &model.derived[k];
        discarded[k] += x[n_cells - 1] * d.decay[n_cells - 1] * da;
        x.copy_within(0..n_cells - 1, 1);
        for (v, q) in x[1..].iter_mut().zip(&d.decay) {
            *v *= q;
        }
        x[0] = s_next * forces[k] * d.pi_cell[0];
        next_forces[k] = force(&d.beta_cell, x, da);
    }
    state.s = s_next;
    state.t += dt;

    if !(state.s.is_finite() && state.s >= 0.0) || !total.is_finite() {
        return Err(numerical(state, forces, format!("S = {}, total force = {total}", state.s)));
    }
    for (k, x) in state.x.iter().enumerate() {
        if !(x[0].is_finite() && x[0] >= 0.0) || !next_forces[k].is_finite() {
            return Err(numerical(state, forces, format!("boundary density of strain {} is {}", k + 1, x[0])));
        }
    }
    Ok(())
}

fn numerical(state: &GridState, forces: &[f64], detail: String) -> Error {
    let mut dump = String::new();
    let _ = writeln!(dump, "t = {:e}", state.t);
    let _ = writeln!(dump, "S = {:e}", state.s);
    for (k, x) in state.x.iter().enumerate() {
        let bad = x.iter().position(|v| !(v.is_finite() && *v >= 0.0));
        let max = x.iter().cloned().fold(f64::NAN, f64::max);
        let _ = writeln!(
            dump,
            "strain {}: F = {:e}, max density = {:e}, first bad cell = {:?}",
            k + 1,
            forces[k],
            max,
            bad
        );
    }
    Error::Numerical {
        t: state.t,
        detail,
        dump,
    }
}

/// One step, returning the new state.
pub fn step(model: &PreparedModel, state: &GridState) -> Result<GridState> {
    let mut next = state.clone();
    let mut f = vec![0.0; model.n()];
    let mut d = vec![0.0; model.n()];
    step_in_place(model, &mut next, &mut f, &mut d)?;
    Ok(next)
}

/// Callback run during [`simulate`] every [`Monitor::every`] steps, starting
/// with the initial state.
pub trait Monitor {
    fn every(&self) -> usize;
    fn observe(&mut self, model: &PreparedModel, state: &GridState, forces: &[f64]) -> Result<()>;
}

#[derive(Debug, Clone, Default)]
pub struct RecordOptions {
    /// Record `S`, masses and forces every this many steps (0 means 1).
    pub record_every: usize,
    /// Times at which full densities are stored (rounded to the step grid).
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub s: f64,
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    /// `mass[k][i]` is the mass of strain `k` at `times[i]`.
    pub mass: Vec<Vec<f64>>,
    pub force: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    /// Mass per strain carried past `a_max` over the whole run.
    pub discarded_mass: Vec<f64>,
    pub final_state: GridState,
    pub dt: f64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Number of steps to reach `horizon` from `t0`.
pub fn step_count(t0: f64, horizon: f64, dt: f64) -> Result<usize> {
    let n = ((horizon - t0) / dt).round();
    if !(n >= 0.0) || !n.is_finite() {
        return Err(Error::input(format!("horizon {horizon} is before the initial time {t0}")));
    }
    Ok(n as usize)
}

/// Runs from `init` to `horizon`, recording series and calling monitors.
/// Time is `t0 + n dt` exactly, so runs are bit-reproducible.
pub fn simulate(
    model: &PreparedModel,
    init: GridState,
    horizon: f64,
    opts: &RecordOptions,
    monitors: &mut [&mut dyn Monitor],
) -> Result<TrajectoryRecord> {
    init.check(model)?;
    let n = model.n();
    let grid = &model.grid;
    let dt = grid.dt();
    let t0 = init.t;
    let steps = step_count(t0, horizon, dt)?;
    let every = opts.record_every.max(1);
    let mut snap_steps: Vec<usize> = opts
        .snapshot_times
        .iter()
        .map(|&t| step_count(t0, t, dt))
        .collect::<Result<_>>()?;
    snap_steps.sort_unstable();
    snap_steps.dedup();

    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        s: Vec::new(),
        mass: vec![Vec::new(); n],
        force: vec![Vec::new(); n],
        snapshots: Vec::new(),
        discarded_mass: vec![0.0; n],
        final_state: init.clone(),
        dt,
    };
    let mut state = init;
    let mut f = forces(model, &state);
    let mut next_f = vec![0.0; n];
    let mut snap = snap_steps.iter().peekable();

    for i in 0..=steps {
        if i % every == 0 || i == steps {
            rec.times.push(state.t);
            rec.s.push(state.s);
            for k in 0..n {
                rec.mass[k].push(state.mass(k, grid));
                rec.force[k].push(f[k]);
            }
        }
        while snap.peek().is_some_and(|&&s| s == i) {
            snap.next();
            rec.snapshots.push(Snapshot {
                t: state.t,
                s: state.s,
                x: state.x.clone(),
            });
        }
        for m in monitors.iter_mut() {
            if i % m.every().max(1) == 0 {
                m.observe(model, &state, &f)?;
            }
        }
        if i < steps {
            advance(model, &mut state, &f, &mut next_f, &mut rec.discarded_mass)?;
            state.t = t0 + (i + 1) as f64 * dt;
            std::mem::swap(&mut f, &mut next_f);
        }
    }
    rec.final_state = state;
    Ok(rec)
}

#[derive(Debug, Clone, Serialize)]
pub struct DuhamelReport {
    pub max_deviation: f64,
    /// `(t, max deviation)` for every snapshot checked.
    pub checked: Vec<(f64, f64)>,
    /// Snapshot times at or beyond `a_max`, which leave nothing to compare.
    pub skipped: Vec<f64>,
}

/// Compares snapshot densities on ages `a >= t - t0` with the transported
/// initial condition `x_0(a - t) exp(-int_{a-t}^a mu)`.
pub fn duhamel_check(model: &PreparedModel, init: &GridState, snapshots: &[Snapshot]) -> DuhamelReport {
    let grid = &model.grid;
    let mut rep = DuhamelReport {
        max_deviation: 0.0,
        checked: Vec::new(),
        skipped: Vec::new(),
    };
    for snap in snapshots {
        let elapsed = snap.t - init.t;
        let m = (elapsed / grid.dt()).round() as usize;
        if m >= grid.cells() {
            rep.skipped.push(snap.t);
            continue;
        }
        let mut dev: f64 = 0.0;
        for (k, strain) in model.params.strains.iter().enumerate() {
            for i in m..grid.cells() {
                let hazard = strain.mu.integral(grid.node(i - m), grid.node(i));
                let expected = init.x[k][i - m] * (-hazard).exp();
                dev = dev.max((snap.x[k][i] - expected).abs());
            }
        }
        rep.max_deviation = rep.max_deviation.max(dev);
        rep.checked.push((snap.t, dev));
    }
    rep
}

/// Records `S + sum |x_k|_1` at every observation.
#[derive(Debug, Clone, Default)]
pub struct NormMonitor {
    pub every: usize,
    pub norms: Vec<f64>,
}

impl Monitor for NormMonitor {
    fn every(&self) -> usize {
        self.every
    }

    fn observe(&mut self, model: &PreparedModel, state: &GridState, _forces: &[f64]) -> Result<()> {
        self.norms.push(state.norm(&model.grid));
        Ok(())
    }
}
