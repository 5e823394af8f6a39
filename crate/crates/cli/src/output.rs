//! CSV and JSON writers. Floats carry 17 significant digits, so every value
//! read back parses to the same `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use strainlab::{GridState, PreparedModel};

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header and rows of floats.
pub fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |k| format!("{prefix}_{k}"))
}

/// `a, x_1, ..., x_n` on the cell midpoints.
pub fn write_densities(path: &Path, model: &PreparedModel, x: &[Vec<f64>]) -> Result<()> {
    let grid = &model.grid;
    let mut header = vec!["a".to_string()];
    header.extend(numbered("x", x.len()));
    let rows = (0..grid.cells()).map(|i| {
        let mut row = Vec::with_capacity(x.len() + 1);
        row.push(grid.midpoint(i));
        row.extend(x.iter().map(|v| v[i]));
        row
    });
    write_rows(path, &header, rows)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Reads a density CSV written by [`write_densities`] into a state.
pub fn read_densities(path: &Path, model: &PreparedModel, t: f64, s: f64) -> Result<GridState> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let n = model.n();
    let mut x = vec![Vec::with_capacity(model.grid.cells()); n];
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != n + 1 {
            anyhow::bail!("{}: expected {} columns, found {}", path.display(), n + 1, rec.len());
        }
        for k in 0..n {
            x[k].push(rec[k + 1].parse::<f64>().with_context(|| format!("{}: bad number", path.display()))?);
        }
    }
    if x.iter().any(|v| v.len() != model.grid.cells()) {
        anyhow::bail!(
            "{}: {} rows but the configured grid has {} cells",
            path.display(),
            x[0].len(),
            model.grid.cells()
        );
    }
    Ok(GridState { t, s, x })
}
