//! Parameter sweeps: a base config, axes of values substituted at dotted
//! paths, one classified run per grid point.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::run_experiment;
use crate::config::{build, ConfigError, Loaded, TolOverrides};
use crate::output::{fmt, numbered, write_json};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Base experiment config, relative to the sweep file.
    pub base: String,
    #[serde(default)]
    pub axes: Vec<Axis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted path into the base config; numeric segments index arrays from 0,
    /// e.g. `model.strains.0.beta.value`.
    pub path: String,
    pub values: Vec<toml::Value>,
}

/// Sets `path` in `root`, creating missing table keys.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), String> {
    let segs: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| format!("{path}: segment `{seg}` must index an array"))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| format!("{path}: index {idx} out of range (length {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("{path}: `{seg}` is below a value that is not a table or array")),
        };
    }
    Err(format!("{path}: empty path"))
}

/// Removes repeated values in place, returning the dropped ones.
pub fn dedupe(values: &mut Vec<toml::Value>) -> Vec<toml::Value> {
    let mut kept: Vec<toml::Value> = Vec::with_capacity(values.len());
    let mut dropped = Vec::new();
    for v in values.drain(..) {
        if kept.contains(&v) {
            dropped.push(v);
        } else {
            kept.push(v);
        }
    }
    *values = kept;
    dropped
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").lines().map(str::trim).collect::<Vec<_>>().join("; ")
}

fn cell(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(f) => fmt(*f),
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Grid points in lexicographic order, the first axis varying slowest.
fn points(axes: &[Axis]) -> Vec<Vec<toml::Value>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.clone());
                    q
                })
            })
            .collect();
    }
    out
}

struct RunRow {
    r0: Vec<f64>,
    target: String,
    verified: bool,
    final_distance: f64,
    alpha_hat: Vec<f64>,
}

fn run_point(
    base_path: &Path,
    base: &toml::Value,
    axes: &[Axis],
    point: &[toml::Value],
    dir: &Path,
    overrides: &TolOverrides,
) -> Result<RunRow> {
    let mut doc = base.clone();
    for (axis, v) in axes.iter().zip(point) {
        set_path(&mut doc, &axis.path, v.clone()).map_err(|e| anyhow!(e))?;
    }
    let text = toml::to_string(&doc)?;
    let loaded = Loaded::parse(base_path, text).map_err(|e| anyhow!(e.message))?;
    let exp = build(&loaded, overrides).map_err(|e| anyhow!("{}: {}", e.key, e.message))?;
    let run = run_experiment(&exp, Some(dir), true)?;
    let c = run.classification.expect("classified run");
    Ok(RunRow {
        r0: exp.model.r0(),
        target: c.report.target.clone(),
        verified: c.report.passed,
        final_distance: c.report.final_distance,
        alpha_hat: c.report.alpha_hat.clone(),
    })
}

fn read_spec(path: &Path) -> Result<SweepSpec> {
    let source = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    toml::from_str(&source).map_err(|e: toml::de::Error| {
        let line = e.span().map(|s| source[..s.start].matches('\n').count() + 1);
        ConfigError {
            file: path.to_path_buf(),
            line,
            key: String::new(),
            message: e.message().to_string(),
        }
        .into()
    })
}

pub fn sweep_cmd(spec_path: &Path, out: &Path, jobs: usize, overrides: &TolOverrides) -> Result<i32> {
    let mut spec = read_spec(spec_path)?;
    let base_path: PathBuf = spec_path.parent().map(Path::to_path_buf).unwrap_or_default().join(&spec.base);
    let base_src = fs::read_to_string(&base_path).with_context(|| format!("cannot read base config {}", base_path.display()))?;
    // parse once through the typed loader for line-anchored errors
    Loaded::parse(&base_path, base_src.clone())?;
    let base: toml::Value = toml::from_str(&base_src)?;
    for axis in spec.axes.iter_mut() {
        for v in dedupe(&mut axis.values) {
            eprintln!("warning: axis {}: duplicate value {} dropped", axis.path, cell(&v));
        }
    }
    let pts = points(&spec.axes);
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let results: Vec<Result<RunRow>> = pool.install(|| {
        pts.par_iter()
            .enumerate()
            .map(|(i, p)| run_point(&base_path, &base, &spec.axes, p, &out.join(format!("run_{i:04}")), overrides))
            .collect()
    });

    let n = results
        .iter()
        .filter_map(|r| r.as_ref().ok().map(|r| r.r0.len()))
        .max()
        .unwrap_or(0);
    let mut header = vec!["run".to_string(), "dir".to_string()];
    header.extend(spec.axes.iter().map(|a| a.path.clone()));
    header.extend(numbered("R0", n));
    header.extend(["target", "verified", "final_distance"].iter().map(|s| s.to_string()));
    header.extend(numbered("alpha_hat", n));
    header.push("error".into());
    let mut w = csv::Writer::from_path(out.join("results.csv"))?;
    w.write_record(&header)?;
    let mut manifest = Vec::new();
    let (mut ok, mut verified) = (0, 0);
    for (i, (p, r)) in pts.iter().zip(&results).enumerate() {
        let dir = format!("run_{i:04}");
        let mut rec = vec![i.to_string(), dir.clone()];
        rec.extend(p.iter().map(cell));
        let pad = |v: &[f64]| (0..n).map(|k| v.get(k).map(|x| fmt(*x)).unwrap_or_default()).collect::<Vec<_>>();
        match r {
            Ok(row) => {
                ok += 1;
                verified += row.verified as usize;
                rec.extend(pad(&row.r0));
                rec.extend([row.target.clone(), row.verified.to_string(), fmt(row.final_distance)]);
                rec.extend(pad(&row.alpha_hat));
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend(std::iter::repeat(String::new()).take(2 * n + 3));
                rec.push(one_line(e));
            }
        }
        w.write_record(&rec)?;
        let values: serde_json::Map<String, serde_json::Value> = spec
            .axes
            .iter()
            .zip(p)
            .map(|(a, v)| (a.path.clone(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null)))
            .collect();
        manifest.push(json!({
            "run": i,
            "dir": dir,
            "values": values,
            "status": if r.is_ok() { "ok" } else { "error" },
            "verified": r.as_ref().ok().map(|r| r.verified),
            "error": r.as_ref().err().map(one_line),
        }));
    }
    w.flush()?;
    let axes: Vec<serde_json::Value> = spec
        .axes
        .iter()
        .map(|a| json!({ "path": a.path, "values": serde_json::to_value(&a.values).unwrap_or_default() }))
        .collect();
    write_json(
        &out.join("manifest.json"),
        &json!({
            "base": fs::canonicalize(&base_path).unwrap_or(base_path).to_string_lossy(),
            "axes": axes,
            "results": "results.csv",
            "runs": manifest,
        }),
    )?;
    println!(
        "{} runs: {ok} completed, {verified} verified, {} failed; wrote {}",
        pts.len(),
        pts.len() - ok,
        out.join("results.csv").display()
    );
    Ok(if ok == pts.len() { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_path_reaches_array_elements() {
        let mut v: toml::Value = toml::from_str("[model]\nstrains = [{ beta = { value = 1.0 } }]\n").unwrap();
        set_path(&mut v, "model.strains.0.beta.value", toml::Value::Float(2.5)).unwrap();
        assert_eq!(v["model"]["strains"][0]["beta"]["value"].as_float(), Some(2.5));
        set_path(&mut v, "grid.da", toml::Value::Float(0.1)).unwrap();
        assert_eq!(v["grid"]["da"].as_float(), Some(0.1));
        assert!(set_path(&mut v, "model.strains.3.beta", toml::Value::Float(1.0)).is_err());
        assert!(set_path(&mut v, "model.strains.x", toml::Value::Float(1.0)).is_err());
    }

    #[test]
    fn dedupe_keeps_first_occurrences() {
        let mut v: Vec<toml::Value> = [1.0, 2.0, 1.0, 3.0, 2.0].iter().map(|x| toml::Value::Float(*x)).collect();
        let dropped = dedupe(&mut v);
        assert_eq!(v.len(), 3);
        assert_eq!(dropped.len(), 2);
        assert_eq!(v[2].as_float(), Some(3.0));
    }

    #[test]
    fn points_are_the_cartesian_product() {
        let axes = vec![
            Axis {
                path: "a".into(),
                values: vec![toml::Value::Integer(1), toml::Value::Integer(2)],
            },
            Axis {
                path: "b".into(),
                values: vec![toml::Value::Integer(3), toml::Value::Integer(4), toml::Value::Integer(5)],
            },
        ];
        let p = points(&axes);
        assert_eq!(p.len(), 6);
        assert_eq!(p[1], vec![toml::Value::Integer(1), toml::Value::Integer(4)]);
        assert_eq!(points(&[]), vec![Vec::<toml::Value>::new()]);
    }
}
