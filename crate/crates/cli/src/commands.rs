//! The subcommands. Each returns the process exit status on success.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use strainlab::classify::{c_s, membership, predict, simulate_and_verify, Classification, Prediction};
use strainlab::equilibria::{disease_free, distance_to_set, endemic_point, residual, EquilibriumSet};
use strainlab::lyapunov::{l0, l0_dt, lk, lk_dt, monitor, LyapunovConfig, LyapunovValue, MonotonicityReport};
use strainlab::oracle::{compare, integrate, reduce, ReducedSystem};
use strainlab::solver::{simulate, Monitor, RecordOptions, TrajectoryRecord};
use strainlab::{Error, GridState, PreparedModel};

use crate::config::{to_toml, Experiment};
use crate::output::{fmt, numbered, read_densities, write_densities, write_json, write_rows, write_text};

/// Optional trajectory columns, sampled on the record cadence.
struct Extras<'a> {
    every: usize,
    l0: bool,
    lk: Option<&'a LyapunovConfig>,
    target: Option<&'a EquilibriumSet>,
    rows: Vec<(f64, Vec<f64>)>,
}

impl Extras<'_> {
    fn header(&self) -> Vec<String> {
        let mut h = Vec::new();
        if self.l0 {
            h.push("L0".into());
        }
        if self.lk.is_some() {
            h.push("Lk".into());
        }
        if self.l0 || self.lk.is_some() {
            h.push("dL_analytic".into());
        }
        if self.target.is_some() {
            h.push("dist".into());
        }
        h
    }

    fn row(&self, model: &PreparedModel, st: &GridState) -> Vec<f64> {
        let mut r = Vec::new();
        if self.l0 {
            r.push(l0(model, st).unwrap_or(f64::NAN));
        }
        if let Some(cfg) = self.lk {
            r.push(match lk(model, st, cfg) {
                Ok(LyapunovValue::Finite(v)) => v,
                Ok(LyapunovValue::Infinite) => f64::INFINITY,
                Err(_) => f64::NAN,
            });
            r.push(lk_dt(model, st, cfg).unwrap_or(f64::NAN));
        } else if self.l0 {
            r.push(l0_dt(model, st).unwrap_or(f64::NAN));
        }
        if let Some(set) = self.target {
            r.push(distance_to_set(model, st, set).map_or(f64::NAN, |d| d.distance));
        }
        r
    }
}

impl Monitor for Extras<'_> {
    fn every(&self) -> usize {
        self.every
    }

    fn observe(&mut self, model: &PreparedModel, st: &GridState, _forces: &[f64]) -> strainlab::Result<()> {
        let row = self.row(model, st);
        self.rows.push((st.t, row));
        Ok(())
    }
}

/// Everything one run produced.
pub struct RunOutput {
    pub summary: Value,
    pub record: TrajectoryRecord,
    pub classification: Option<Classification>,
}

fn model_summary(model: &PreparedModel) -> Value {
    let b = &model.blocks;
    let blocks: Vec<Vec<usize>> = (1..=b.n_r).map(|k| b.members(k).iter().map(|j| j + 1).collect()).collect();
    json!({
        "r": model.derived.iter().map(|d| d.r).collect::<Vec<_>>(),
        "r0": model.r0(),
        "blocks": blocks,
        "n_gt": b.n_gt,
        "s0": model.params.s0(),
        "s_star": (1..=b.n_gt).map(|k| model.s_star(k)).collect::<Vec<_>>(),
        "c_s": c_s(&model.params),
        "a_max": model.grid.a_max(),
        "cells": model.grid.cells(),
        "dt": model.grid.dt(),
    })
}

fn numerical_failure(err: Error, out: Option<&Path>) -> anyhow::Error {
    match (err, out) {
        (Error::Numerical { t, detail, dump }, Some(dir)) => {
            let path = dir.join("failure_dump.txt");
            match fs::write(&path, &dump) {
                Ok(()) => anyhow::anyhow!(
                    "numerical failure at t = {t}: {detail}; diagnostic dump written to {}",
                    path.display()
                ),
                Err(e) => anyhow::anyhow!("numerical failure at t = {t}: {detail}; could not write dump: {e}\n{dump}"),
            }
        }
        (e, _) => e.into(),
    }
}

/// Reference solution for a reducible model, compared with `record`.
fn oracle(exp: &Experiment, record: &TrajectoryRecord) -> Result<(Value, Vec<Vec<f64>>)> {
    let model = &exp.model;
    let sys = reduce(&model.params)?;
    let i0: Vec<f64> = (0..model.n()).map(|k| exp.init.mass(k, &model.grid)).collect();
    let h = ReducedSystem::max_step(model.params.mu0);
    let t0 = exp.init.t;
    let t1 = record.final_state.t;
    let fine = integrate(&sys, exp.init.s, &i0, t0, t1, h, model.params.mu0)?;
    let finer = integrate(&sys, exp.init.s, &i0, t0, t1, h / 2.0, model.params.mu0)?;
    let err = compare(&sys, record, &fine)?;
    let mut self_diff: f64 = 0.0;
    let mut rows = Vec::with_capacity(record.len());
    for &t in &record.times {
        let a = fine.at(&sys, t);
        let b = finer.at(&sys, t);
        self_diff = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(self_diff, f64::max);
        let mut row = vec![t];
        row.extend_from_slice(&a);
        row.extend(sys.beta.iter().zip(&a[1..]).map(|(b, i)| b * i));
        rows.push(row);
    }
    let v = json!({
        "h": h,
        "error_s": err.s,
        "error_mass": err.mass,
        "error_max": err.max(),
        "step_halving_difference": self_diff,
    });
    Ok((v, rows))
}

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "S".to_string()];
    h.extend(numbered("mass", n));
    h.extend(numbered("F", n));
    h
}

/// Simulates the experiment, optionally classifying, and writes the outputs
/// to `out` when given.
pub fn run_experiment(exp: &Experiment, out: Option<&Path>, classify: bool) -> Result<RunOutput> {
    let model = &exp.model;
    let cfg = &exp.config;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let classify = classify || cfg.analysis.classify;
    let opts = RecordOptions {
        record_every: cfg.run.record_every,
        snapshot_times: cfg.run.snapshot_times.clone(),
    };
    let lk_cfg = match &cfg.analysis.lyapunov_alpha {
        Some(a) => Some(LyapunovConfig::new(model, cfg.analysis.lyapunov_block, a.clone())?),
        None => None,
    };
    let prediction: Option<Prediction> =
        classify.then(|| predict(model, &membership(model, &exp.init, exp.tolerances.membership_threshold)));
    let mut extras = Extras {
        every: cfg.run.record_every,
        l0: cfg.analysis.lyapunov,
        lk: lk_cfg.as_ref(),
        target: prediction.as_ref().map(|p| &p.target),
        rows: Vec::new(),
    };
    let horizon = exp.init.t + cfg.run.horizon;
    let (record, classification) = if classify {
        let c = simulate_and_verify(model, exp.init.clone(), horizon, &opts, &exp.tolerances, &mut [&mut extras])
            .map_err(|e| numerical_failure(e, out))?;
        (c.record.clone(), Some(c))
    } else {
        let r = simulate(model, exp.init.clone(), horizon, &opts, &mut [&mut extras]).map_err(|e| numerical_failure(e, out))?;
        (r, None)
    };
    if extras.rows.len() < record.len() {
        let row = extras.row(model, &record.final_state);
        extras.rows.push((record.final_state.t, row));
    }

    let n = model.n();
    let fin = &record.final_state;
    let mut summary = json!({
        "config": serde_json::to_value(cfg)?,
        "model": model_summary(model),
        "validation_notes": exp.validation_notes,
        "final": {
            "t": fin.t,
            "S": fin.s,
            "mass": (0..n).map(|k| fin.mass(k, &model.grid)).collect::<Vec<_>>(),
            "norm": fin.norm(&model.grid),
        },
        "discarded_mass": record.discarded_mass,
        "files": {
            "trajectory": "trajectory.csv",
            "snapshots": "snapshots/index.csv",
            "resolved_config": "resolved_config.toml",
        },
    });
    if let Some(c) = &classification {
        summary["classification"] = serde_json::to_value(c)?;
    }
    let oracle_out = if cfg.analysis.oracle {
        match oracle(exp, &record) {
            Ok((v, rows)) => {
                summary["oracle"] = v;
                summary["files"]["oracle_reference"] = json!("oracle_reference.csv");
                Some(rows)
            }
            Err(e) => {
                summary["oracle"] = json!({ "error": e.to_string() });
                None
            }
        }
    } else {
        None
    };

    if let Some(dir) = out {
        let mut header = trajectory_header(n);
        header.extend(extras.header());
        let rows = (0..record.len()).map(|i| {
            let mut row = vec![record.times[i], record.s[i]];
            row.extend((0..n).map(|k| record.mass[k][i]));
            row.extend((0..n).map(|k| record.force[k][i]));
            row.extend_from_slice(&extras.rows[i].1);
            row
        });
        write_rows(&dir.join("trajectory.csv"), &header, rows)?;

        let snap_dir = dir.join("snapshots");
        fs::create_dir_all(&snap_dir)?;
        let mut index = csv::Writer::from_path(snap_dir.join("index.csv"))?;
        index.write_record(["t", "S", "file"])?;
        for (i, s) in record.snapshots.iter().enumerate() {
            let name = format!("snapshot_{i:04}.csv");
            write_densities(&snap_dir.join(&name), model, &s.x)?;
            index.write_record([fmt(s.t), fmt(s.s), name])?;
        }
        index.flush()?;

        if let Some(rows) = &oracle_out {
            write_rows(&dir.join("oracle_reference.csv"), &trajectory_header(n), rows.iter().cloned())?;
        }
        if let Some(c) = &classification {
            write_text(&dir.join("report.txt"), &format!("rationale = {}\n{}\n", c.prediction.rationale, c.report))?;
        }
        write_text(&dir.join("resolved_config.toml"), &to_toml(cfg))?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(RunOutput {
        summary,
        record,
        classification,
    })
}

pub fn simulate_cmd(exp: &Experiment, out: &Path) -> Result<i32> {
    let run = run_experiment(exp, Some(out), false)?;
    let fin = &run.record.final_state;
    println!("wrote {}", out.join("trajectory.csv").display());
    println!("t = {}", fin.t);
    println!("S = {}", fmt(fin.s));
    for k in 0..exp.model.n() {
        println!("mass_{} = {}", k + 1, fmt(fin.mass(k, &exp.model.grid)));
    }
    if let Some(o) = run.summary.get("oracle") {
        println!("oracle = {o}");
    }
    Ok(0)
}

pub fn classify_cmd(exp: &Experiment, out: Option<&Path>) -> Result<i32> {
    let run = run_experiment(exp, out, true)?;
    let c = run.classification.expect("classification requested");
    println!("prediction = {}", c.prediction.target);
    println!("rationale = {}", c.prediction.rationale);
    println!("{}", c.report);
    if !c.report.converged {
        println!(
            "not converged: final distance {} exceeds {}",
            fmt(c.report.final_distance),
            c.report.distance_tol
        );
    }
    Ok(if c.report.passed { 0 } else { 1 })
}

fn parse_alpha(model: &PreparedModel, k: usize, alpha: Option<&[f64]>) -> Vec<f64> {
    match alpha {
        Some(a) => a.to_vec(),
        None => {
            let members = model.blocks.members(k);
            let mut w = vec![0.0; model.n()];
            for &j in members {
                w[j] = 1.0 / members.len() as f64;
            }
            w
        }
    }
}

pub fn equilibria_cmd(exp: &Experiment, block: Option<usize>, alpha: Option<&[f64]>, out: Option<&Path>) -> Result<i32> {
    let model = &exp.model;
    let n = model.n();
    if alpha.is_some() && block.is_none() {
        bail!("--alpha needs --block");
    }
    let b = &model.blocks;
    println!("strain,r,R0,block");
    for j in 0..n {
        println!("{},{},{},{}", j + 1, fmt(model.derived[j].r), fmt(b.r0[j]), b.block_of(j));
    }
    println!("supercritical blocks = {}", b.n_gt);

    let mut points = vec![("E0".to_string(), "equilibrium_E0.csv".to_string(), disease_free(model))];
    let blocks: Vec<usize> = match block {
        Some(k) => vec![k],
        None => (1..=b.n_gt).collect(),
    };
    for k in blocks {
        let w = parse_alpha(model, k, alpha);
        let p = endemic_point(model, k, &w)?;
        let ws: Vec<String> = w.iter().map(|v| v.to_string()).collect();
        points.push((format!("E{k} alpha=({})", ws.join(",")), format!("equilibrium_block_{k}.csv"), p));
    }
    let mut table = Vec::new();
    for (name, file, p) in &points {
        let masses: Vec<f64> = p.densities.iter().map(|x| model.grid.integrate(x)).collect();
        let ms: Vec<String> = masses.iter().map(|m| fmt(*m)).collect();
        println!(
            "{name}: S = {}, masses = ({}), residual = {:.3e}",
            fmt(p.s_star),
            ms.join(", "),
            residual(model, p)
        );
        let mut row = vec![p.s_star];
        row.extend(masses);
        table.push((name, file, row));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("equilibria.csv"))?;
        let mut header = vec!["point".to_string(), "file".to_string(), "S".to_string()];
        header.extend(numbered("mass", n));
        w.write_record(&header)?;
        for (name, file, row) in &table {
            let mut rec = vec![name.to_string(), file.to_string()];
            rec.extend(row.iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        for (_, file, p) in &points {
            write_densities(&dir.join(file), model, &p.densities)?;
        }
        println!("wrote {}", dir.join("equilibria.csv").display());
    }
    Ok(0)
}

fn report_line(name: &str, r: &MonotonicityReport) -> String {
    format!(
        "{name}: samples {}, max increment {:.3e} (tol {:.1e}), total decrease {:.6e}, {}",
        r.samples,
        r.max_increment,
        r.tolerance,
        r.total_decrease,
        match r.first_violation {
            Some(t) => format!("first violation at t = {t}"),
            None => "non-increasing".to_string(),
        }
    )
}

/// Evaluates the functionals on the snapshots of an earlier `simulate` run.
pub fn lyapunov_cmd(
    exp: &Experiment,
    run_dir: &Path,
    block: Option<usize>,
    alpha: Option<&[f64]>,
    out: Option<&Path>,
) -> Result<i32> {
    let model = &exp.model;
    let block = block.unwrap_or(exp.config.analysis.lyapunov_block);
    let alpha = alpha.map(<[f64]>::to_vec).or_else(|| exp.config.analysis.lyapunov_alpha.clone());
    let cfg = match alpha {
        Some(a) => Some(LyapunovConfig::new(model, block, a)?),
        None => None,
    };
    let snap_dir = run_dir.join("snapshots");
    let mut rdr = csv::Reader::from_path(snap_dir.join("index.csv"))
        .with_context(|| format!("cannot read the snapshot index of {}", run_dir.display()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let t: f64 = rec[0].parse()?;
        let s: f64 = rec[1].parse()?;
        let st = read_densities(&snap_dir.join(&rec[2]), model, t, s)?;
        let mut row = vec![t, l0(model, &st)?, l0_dt(model, &st)?];
        if let Some(c) = &cfg {
            row.push(match lk(model, &st, c)? {
                LyapunovValue::Finite(v) => v,
                LyapunovValue::Infinite => f64::INFINITY,
            });
            row.push(lk_dt(model, &st, c).unwrap_or(f64::NAN));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} has no snapshots; declare run.snapshot_times", run_dir.display());
    }
    let mut header: Vec<String> = ["t", "L0", "dL0"].iter().map(|s| s.to_string()).collect();
    if cfg.is_some() {
        header.extend(["Lk".to_string(), "dLk".to_string()]);
    }
    let out = out.unwrap_or(run_dir);
    fs::create_dir_all(out)?;
    write_rows(&out.join("lyapunov.csv"), &header, rows.iter().cloned())?;
    let rel = exp.tolerances.lyapunov_rel;
    let series = |c: usize| -> Vec<(f64, f64)> { rows.iter().map(|r| (r[0], r[c])).collect() };
    let l0s = series(1);
    println!("{}", report_line("L0", &monitor(&l0s, rel * l0s[0].1.abs().max(1.0))));
    if cfg.is_some() {
        let lks: Vec<(f64, f64)> = series(3).into_iter().filter(|p| p.1.is_finite()).collect();
        if lks.is_empty() {
            println!("L{block}: infinite at every snapshot");
        } else {
            println!("{}", report_line(&format!("L{block}"), &monitor(&lks, rel * lks[0].1.abs().max(1.0))));
        }
    }
    println!("wrote {}", out.join("lyapunov.csv").display());
    Ok(0)
}

pub fn oracle_check_cmd(exp: &Experiment, out: Option<&Path>) -> Result<i32> {
    reduce(&exp.model.params)?;
    let mut exp = exp.clone();
    exp.config.analysis.oracle = true;
    let run = run_experiment(&exp, out, false)?;
    let o = &run.summary["oracle"];
    if let Some(e) = o.get("error") {
        bail!("oracle failed: {}", e.as_str().unwrap_or_default());
    }
    println!("reference step = {}", o["h"]);
    println!("sup |S - S_ref| = {}", o["error_s"]);
    println!("sup |mass - I_ref| = {}", o["error_mass"]);
    println!("max error = {}", o["error_max"]);
    println!("reference step-halving difference = {}", o["step_halving_difference"]);
    Ok(0)
}
