//! Prediction of the limit set from the initial condition, and verification
//! of a simulated trajectory against that prediction.

use std::fmt;

use serde::Serialize;

use crate::equilibria::{distance_to_set, EquilibriumSet};
use crate::error::Result;
use crate::lyapunov::{monitor, L0Monitor, LkStatsMonitor, MonotonicityReport};
use crate::model::{ModelParams, PreparedModel};
use crate::solver::{simulate, GridState, Monitor, RecordOptions, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    /// Positive mass below the transmission support bound.
    Present,
    /// Exactly zero mass there.
    Absent,
    /// Positive mass at or below the threshold: treated as absent, flagged.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Membership {
    pub presence: Vec<Presence>,
    /// `int_0^{min(sup supp beta_k, a_max)} x_k` per strain.
    pub mass: Vec<f64>,
    pub threshold: f64,
}

impl Membership {
    pub fn is_present(&self, j: usize) -> bool {
        self.presence[j] == Presence::Present
    }
}

/// Default threshold `1e-12 (total initial infected mass + 1)`.
pub fn default_threshold(model: &PreparedModel, init: &GridState) -> f64 {
    let total: f64 = (0..model.n()).map(|k| init.mass(k, &model.grid)).sum();
    1e-12 * (total + 1.0)
}

pub fn membership(model: &PreparedModel, init: &GridState, threshold: Option<f64>) -> Membership {
    let grid = &model.grid;
    let threshold = threshold.unwrap_or_else(|| default_threshold(model, init));
    let mut presence = Vec::with_capacity(model.n());
    let mut mass = Vec::with_capacity(model.n());
    for (k, x) in init.x.iter().enumerate() {
        let upper = model.derived[k].beta_sup.min(grid.a_max());
        let m: f64 = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let overlap = upper.min(grid.node(i + 1)) - grid.node(i);
                if overlap > 0.0 {
                    v * overlap
                } else {
                    0.0
                }
            })
            .sum();
        presence.push(if m > threshold {
            Presence::Present
        } else if m > 0.0 {
            Presence::Ambiguous
        } else {
            Presence::Absent
        });
        mass.push(m);
    }
    Membership {
        presence,
        mass,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Clause {
    /// Every supercritical strain is absent (or none exists): disease-free.
    DiseaseFree,
    /// Block `block` is the first supercritical block with a present strain.
    Endemic { block: usize, survivors: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub target: EquilibriumSet,
    pub clause: Clause,
    pub rationale: String,
    /// Some strain in a block at or before the deciding one sits on the
    /// membership threshold, so the prediction rule does not settle the outcome.
    pub ambiguous: bool,
}

pub fn predict(model: &PreparedModel, membership: &Membership) -> Prediction {
    let blocks = &model.blocks;
    let fmt_ids = |v: &[usize]| v.iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(",");
    let mut ambiguous = false;
    for k in 1..=blocks.n_gt {
        let members = blocks.members(k);
        ambiguous |= members.iter().any(|&j| membership.presence[j] == Presence::Ambiguous);
        let survivors: Vec<usize> = members.iter().copied().filter(|&j| membership.is_present(j)).collect();
        if !survivors.is_empty() {
            let rationale = format!(
                "blocks 1..{} are absent; block {k} (R0 = {:.6}) has present strains {{{}}}; \
                 strains of later blocks are excluded",
                k - 1,
                blocks.r0[members[0]],
                fmt_ids(&survivors)
            );
            return Prediction {
                target: EquilibriumSet::endemic(k, survivors.clone()),
                clause: Clause::Endemic { block: k, survivors },
                rationale,
                ambiguous,
            };
        }
    }
    let rationale = if blocks.n_gt == 0 {
        "every reproduction number is <= 1".to_string()
    } else {
        format!(
            "every strain with R0 > 1 (strains {{{}}}) is absent",
            fmt_ids(&blocks.order[..blocks.sigma[blocks.n_gt - 1]])
        )
    };
    Prediction {
        target: EquilibriumSet::DiseaseFree,
        clause: Clause::DiseaseFree,
        rationale,
        ambiguous,
    }
}

/// Persistence floor for `S` on the attractor:
/// `Lambda / (mu_S + (Lambda / mu0) sum_k |beta_k|_inf)`.
pub fn c_s(params: &ModelParams) -> f64 {
    params.lambda / (params.mu_s + params.lambda / params.mu0 * params.beta_norm_sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub distance: f64,
    pub s_floor: f64,
    pub force_floor: f64,
    /// Lyapunov increments may reach `lyapunov_rel * max(1, L(start))`.
    pub lyapunov_rel: f64,
    /// Start of the floor and `L_k` windows; `None` means
    /// `max(10 / mu0, 4 a_max)`.
    pub warmup: Option<f64>,
    pub decay_slack: f64,
    /// Alternative sets must stay farther than this multiple of `distance`.
    pub alternative_factor: f64,
    pub membership_threshold: Option<f64>,
    /// Time between Lyapunov samples.
    pub lyapunov_cadence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            distance: 1e-3,
            s_floor: 1e-6,
            force_floor: 1e-4,
            lyapunov_rel: 1e-6,
            warmup: None,
            decay_slack: 1.0 + 1e-9,
            alternative_factor: 10.0,
            membership_threshold: None,
            lyapunov_cadence: 0.01,
        }
    }
}

impl Tolerances {
    pub fn warmup_for(&self, model: &PreparedModel) -> f64 {
        self.warmup
            .unwrap_or_else(|| (10.0 / model.params.mu0).max(4.0 * model.grid.a_max()))
    }

    pub fn lyapunov_every(&self, model: &PreparedModel) -> usize {
        ((self.lyapunov_cadence / model.grid.dt()).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceFloor {
    pub strain: usize,
    pub min_force: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorReport {
    pub c_s: f64,
    pub warmup: f64,
    /// `None` when the run ends before the warm-up.
    pub s_min: Option<f64>,
    pub s_floor_ok: Option<bool>,
    pub forces: Vec<ForceFloor>,
}

impl FloorReport {
    pub fn ok(&self) -> bool {
        self.s_floor_ok != Some(false) && self.forces.iter().all(|f| f.ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    pub strain: usize,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest `mass(t) / (mass(0) e^{-mu0 t})`, 0 for a zero strain.
    pub worst_ratio: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlternativeCheck {
    pub set: String,
    pub distance: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCheck {
    pub functional: String,
    pub window_start: f64,
    pub report: Option<MonotonicityReport>,
    pub error: Option<String>,
}

impl LyapunovCheck {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.report.as_ref().is_some_and(|r| r.passed())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub target: String,
    pub horizon: f64,
    pub final_distance: f64,
    pub distance_tol: f64,
    pub converged: bool,
    pub alpha_hat: Vec<f64>,
    pub alpha_degenerate: bool,
    pub floors: FloorReport,
    pub lyapunov: LyapunovCheck,
    pub decay: Vec<DecayCheck>,
    /// Final masses of present strains excluded by the prediction.
    pub excluded_mass: Vec<(usize, f64)>,
    pub alternatives: Vec<AlternativeCheck>,
    pub ambiguous: bool,
    pub notes: Vec<String>,
    pub passed: bool,
}

/// Evidence for the Lyapunov part of [`verify`].
pub enum LyapunovEvidence<'a> {
    /// `(t, L_0)` samples from the start of the run.
    L0(&'a [(f64, f64)]),
    /// Statistics for `L_k` recorded after the warm-up.
    Lk(&'a LkStatsMonitor),
    None,
}

fn alternatives(model: &PreparedModel, target: &EquilibriumSet) -> Vec<EquilibriumSet> {
    let mut out = Vec::new();
    let (tb, tj) = match target {
        EquilibriumSet::DiseaseFree => (0, Vec::new()),
        EquilibriumSet::Endemic { block, survivors, .. } => {
            out.push(EquilibriumSet::DiseaseFree);
            (*block, survivors.clone())
        }
    };
    for k in 1..=model.blocks.n_gt {
        let members = model.blocks.members(k);
        if k != tb {
            out.push(EquilibriumSet::endemic(k, members.to_vec()));
        } else {
            for &j in members {
                if tj != [j] {
                    out.push(EquilibriumSet::endemic(k, vec![j]));
                }
            }
        }
    }
    out
}

/// Checks a trajectory against a prediction: final distance to the target,
/// persistence floors, Lyapunov monotonicity, decay of absent strains and
/// separation from the other equilibrium sets.
pub fn verify(
    model: &PreparedModel,
    init: &GridState,
    traj: &TrajectoryRecord,
    prediction: &Prediction,
    membership: &Membership,
    evidence: LyapunovEvidence<'_>,
    tols: &Tolerances,
) -> Result<VerificationReport> {
    let grid = &model.grid;
    let last = &traj.final_state;
    let dist = distance_to_set(model, last, &prediction.target)?;
    let converged = dist.distance <= tols.distance;
    let mut notes = Vec::new();
    let survivors: Vec<usize> = match &prediction.clause {
        Clause::DiseaseFree => Vec::new(),
        Clause::Endemic { survivors, .. } => survivors.clone(),
    };

    let warmup = tols.warmup_for(model);
    let after: Vec<usize> = (0..traj.len()).filter(|&i| traj.times[i] >= warmup).collect();
    let cs = c_s(&model.params);
    let s_min = (!after.is_empty()).then(|| after.iter().map(|&i| traj.s[i]).fold(f64::INFINITY, f64::min));
    let forces = survivors
        .iter()
        .map(|&j| {
            let min_force = after.iter().map(|&i| traj.force[j][i]).fold(f64::INFINITY, f64::min);
            ForceFloor {
                strain: j,
                min_force,
                ok: !after.is_empty() && min_force > tols.force_floor,
            }
        })
        .collect();
    let floors = FloorReport {
        c_s: cs,
        warmup,
        s_min,
        s_floor_ok: s_min.map(|s| s >= cs - tols.s_floor),
        forces,
    };
    if after.is_empty() {
        notes.push(format!("horizon {} ends before the warm-up {warmup}; floors not evaluated", last.t));
    }

    let lyapunov = match (&prediction.target, evidence) {
        (EquilibriumSet::DiseaseFree, LyapunovEvidence::L0(series)) => {
            let l_start = series.first().map_or(0.0, |p| p.1);
            LyapunovCheck {
                functional: "L0".into(),
                window_start: series.first().map_or(0.0, |p| p.0),
                report: Some(monitor(series, tols.lyapunov_rel * l_start.max(1.0))),
                error: None,
            }
        }
        (EquilibriumSet::Endemic { block, .. }, LyapunovEvidence::Lk(stats)) => {
            let name = format!("L{block}^alpha_hat");
            match stats.series(model, &dist.alpha_hat) {
                Ok(series) if series.len() >= 2 => {
                    let l_start = series[0].1;
                    LyapunovCheck {
                        functional: name,
                        window_start: series[0].0,
                        report: Some(monitor(&series, tols.lyapunov_rel * l_start.max(1.0))),
                        error: None,
                    }
                }
                Ok(_) => LyapunovCheck {
                    functional: name,
                    window_start: stats.start,
                    report: None,
                    error: Some("fewer than two samples after the warm-up".into()),
                },
                Err(e) => LyapunovCheck {
                    functional: name,
                    window_start: stats.start,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        }
        _ => LyapunovCheck {
            functional: "none".into(),
            window_start: 0.0,
            report: None,
            error: Some("no Lyapunov evidence matching the target".into()),
        },
    };

    let mu0 = model.params.mu0;
    let decay = (0..model.n())
        .filter(|&j| !membership.is_present(j))
        .map(|j| {
            let m0 = init.mass(j, grid);
            let mut worst: f64 = 0.0;
            let mut ok = true;
            for (i, &t) in traj.times.iter().enumerate() {
                let m = traj.mass[j][i];
                if m0 == 0.0 {
                    ok &= m == 0.0;
                } else {
                    let ratio = m / (m0 * (-mu0 * (t - init.t)).exp());
                    worst = worst.max(ratio);
                    ok &= ratio <= tols.decay_slack;
                }
            }
            DecayCheck {
                strain: j,
                initial_mass: m0,
                final_mass: last.mass(j, grid),
                worst_ratio: worst,
                ok,
            }
        })
        .collect::<Vec<_>>();
    let excluded_mass = (0..model.n())
        .filter(|&j| membership.is_present(j) && !survivors.contains(&j))
        .map(|j| (j, last.mass(j, grid)))
        .collect();

    let alternatives = alternatives(model, &prediction.target)
        .into_iter()
        .map(|set| {
            let d = distance_to_set(model, last, &set)?.distance;
            Ok(AlternativeCheck {
                set: set.to_string(),
                distance: d,
                ok: d > tols.alternative_factor * tols.distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let endemic = !survivors.is_empty();
    let floors_ok = floors.ok() && (!endemic || !after.is_empty());
    let passed = converged
        && floors_ok
        && lyapunov.ok()
        && decay.iter().all(|d| d.ok)
        && alternatives.iter().all(|a| a.ok);
    if prediction.ambiguous {
        notes.push("membership is boundary-ambiguous for a deciding strain; the prediction rule does not settle this case".into());
    }
    Ok(VerificationReport {
        target: prediction.target.to_string(),
        horizon: last.t,
        final_distance: dist.distance,
        distance_tol: tols.distance,
        converged,
        alpha_hat: dist.alpha_hat,
        alpha_degenerate: dist.degenerate,
        floors,
        lyapunov,
        decay,
        excluded_mass,
        alternatives,
        ambiguous: prediction.ambiguous,
        notes,
        passed,
    })
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yes = |b: bool| if b { "yes" } else { "no" };
        writeln!(f, "target = {}", self.target)?;
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "final_distance = {:.6e} (tol {:.1e})", self.final_distance, self.distance_tol)?;
        writeln!(f, "converged = {}", yes(self.converged))?;
        if !self.alpha_hat.is_empty() {
            let a: Vec<String> = self.alpha_hat.iter().map(|v| format!("{v:.9}")).collect();
            writeln!(f, "alpha_hat = ({})", a.join(", "))?;
            if self.alpha_degenerate {
                writeln!(f, "alpha_hat_degenerate = yes")?;
            }
        }
        writeln!(f, "c_S = {:.9}", self.floors.c_s)?;
        writeln!(f, "warmup = {}", self.floors.warmup)?;
        match (self.floors.s_min, self.floors.s_floor_ok) {
            (Some(s), Some(ok)) => writeln!(f, "S_min_after_warmup = {s:.9} (floor ok: {})", yes(ok))?,
            _ => writeln!(f, "S_min_after_warmup = n/a")?,
        }
        for fl in &self.floors.forces {
            if fl.min_force.is_finite() {
                writeln!(f, "F{}_min_after_warmup = {:.6e} (floor ok: {})", fl.strain + 1, fl.min_force, yes(fl.ok))?;
            } else {
                writeln!(f, "F{}_min_after_warmup = n/a (no samples, floor ok: no)", fl.strain + 1)?;
            }
        }
        match (&self.lyapunov.report, &self.lyapunov.error) {
            (Some(r), _) => writeln!(
                f,
                "lyapunov = {} from t = {}: max increment {:.3e} (tol {:.1e}), total decrease {:.6e}{}",
                self.lyapunov.functional,
                self.lyapunov.window_start,
                r.max_increment,
                r.tolerance,
                r.total_decrease,
                r.first_violation.map(|t| format!(", first violation at t = {t}")).unwrap_or_default()
            )?,
            (None, Some(e)) => writeln!(f, "lyapunov = {}: {e}", self.lyapunov.functional)?,
            _ => {}
        }
        for d in &self.decay {
            writeln!(
                f,
                "absent_strain_{} = initial mass {:.3e}, final mass {:.3e}, decay ok: {}",
                d.strain + 1,
                d.initial_mass,
                d.final_mass,
                yes(d.ok)
            )?;
        }
        for (j, m) in &self.excluded_mass {
            writeln!(f, "excluded_strain_{} = final mass {m:.3e}", j + 1)?;
        }
        for a in &self.alternatives {
            writeln!(f, "distance_to {} = {:.6e} (separated: {})", a.set, a.distance, yes(a.ok))?;
        }
        for n in &self.notes {
            writeln!(f, "note = {n}")?;
        }
        write!(f, "verified = {}", yes(self.passed))
    }
}

/// Everything produced by [`simulate_and_verify`].
#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub membership: Membership,
    pub prediction: Prediction,
    pub report: VerificationReport,
    #[serde(skip)]
    pub record: TrajectoryRecord,
    #[serde(skip)]
    pub l0_series: Vec<(f64, f64, f64)>,
}

/// Predicts, simulates with the matching Lyapunov monitor and verifies.
pub fn simulate_and_verify(
    model: &PreparedModel,
    init: GridState,
    horizon: f64,
    opts: &RecordOptions,
    tols: &Tolerances,
    extra: &mut [&mut dyn Monitor],
) -> Result<Classification> {
    let memb = membership(model, &init, tols.membership_threshold);
    let prediction = predict(model, &memb);
    let every = tols.lyapunov_every(model);
    let mut l0m = L0Monitor {
        every,
        series: Vec::new(),
    };
    let block = match &prediction.target {
        EquilibriumSet::Endemic { block, .. } => *block,
        EquilibriumSet::DiseaseFree => 0,
    };
    let mut lkm = LkStatsMonitor::new(block.max(1), every, tols.warmup_for(model));
    let record = {
        let mut monitors: Vec<&mut dyn Monitor> = Vec::with_capacity(extra.len() + 1);
        if block == 0 {
            monitors.push(&mut l0m);
        } else {
            monitors.push(&mut lkm);
        }
        for m in extra.iter_mut() {
            monitors.push(&mut **m);
        }
        simulate(model, init.clone(), horizon, opts, &mut monitors)?
    };
    let l0_pairs: Vec<(f64, f64)> = l0m.series.iter().map(|p| (p.0, p.1)).collect();
    let evidence = if block == 0 {
        LyapunovEvidence::L0(&l0_pairs)
    } else {
        LyapunovEvidence::Lk(&lkm)
    };
    let report = verify(model, &init, &record, &prediction, &memb, evidence, tols)?;
    Ok(Classification {
        membership: memb,
        prediction,
        report,
        record,
        l0_series: l0m.series,
    })
}
