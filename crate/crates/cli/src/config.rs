//! Experiment configuration: the TOML schema, line-anchored diagnostics and
//! resolution into a prepared model and initial state.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use strainlab::classify::Tolerances;
use strainlab::equilibria::density_scale;
use strainlab::grid::Grid;
use strainlab::model::{ModelParams, PreparedModel, Strain, ValidationReport};
use strainlab::solver::{window_density, GridState};
use strainlab::{AgeKernel, Error};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub init: InitConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: f64,
    pub mu_s: f64,
    pub mu0: f64,
    /// Declared blocks as lists of 1-based strain indices, largest R0 first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<Vec<usize>>>,
    pub strains: Vec<StrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrainConfig {
    pub beta: KernelConfig,
    pub mu: KernelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Constant {
        value: f64,
    },
    /// `value` on `[lo, hi)`; no `hi` means the window never closes.
    Window {
        value: f64,
        lo: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
    },
    /// `values[i]` on `[edges[i], edges[i+1])`. With as many edges as values
    /// the last value extends to infinity.
    Piecewise { edges: Vec<f64>, values: Vec<f64> },
}

impl KernelConfig {
    pub fn kernel(&self) -> strainlab::Result<AgeKernel> {
        match self {
            KernelConfig::Constant { value } => {
                let k = AgeKernel::constant(*value);
                k.check()?;
                Ok(k)
            }
            KernelConfig::Window { value, lo, hi } => AgeKernel::window(*value, *lo, hi.unwrap_or(f64::INFINITY)),
            KernelConfig::Piecewise { edges, values } => {
                let mut edges = edges.clone();
                if edges.len() == values.len() {
                    edges.push(f64::INFINITY);
                }
                AgeKernel::piecewise(edges, values.clone())
            }
        }
    }

    /// Same kernel with infinite endpoints written in their implicit form, so
    /// the config survives JSON.
    fn normalized(&self) -> Self {
        match self {
            KernelConfig::Window { value, lo, hi } if hi.is_some_and(f64::is_infinite) => KernelConfig::Window {
                value: *value,
                lo: *lo,
                hi: None,
            },
            KernelConfig::Piecewise { edges, values }
                if edges.len() == values.len() + 1 && edges.last().is_some_and(|e| e.is_infinite()) =>
            {
                KernelConfig::Piecewise {
                    edges: edges[..values.len()].to_vec(),
                    values: values.clone(),
                }
            }
            other => other.clone(),
        }
    }
}

fn default_da() -> f64 {
    1e-3
}

fn default_tail_tol() -> f64 {
    strainlab::grid::DEFAULT_TAIL_TOL
}

fn default_tie_tol() -> f64 {
    strainlab::model::DEFAULT_TIE_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_da")]
    pub da: f64,
    /// Age window; chosen from the tail tolerance when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default = "default_tie_tol")]
    pub tie_tol: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            da: default_da(),
            a_max: None,
            tail_tol: default_tail_tol(),
            tie_tol: default_tie_tol(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Initial susceptibles; defaults to `S*` of the block of an equilibrium
    /// density if one is used, else to `Lambda / mu_S`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// One entry per strain; empty means every strain starts at zero.
    #[serde(default)]
    pub strains: Vec<DensityConfig>,
}

fn first_column() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Zero,
    Window {
        lo: f64,
        hi: f64,
        height: f64,
    },
    /// `alpha` times the equilibrium density of this strain at full weight in
    /// supercritical block `block`.
    Equilibrium {
        block: usize,
        alpha: f64,
    },
    /// Two or more CSV columns `a, x_1, ...`; column `column` (1-based, after
    /// the age) is interpolated linearly at the cell midpoints and taken as
    /// zero outside the tabulated ages.
    Table {
        path: String,
        #[serde(default = "first_column")]
        column: usize,
    },
}

fn default_record_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: f64,
    /// Steps between trajectory rows.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

fn first_block() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Adds `L0` and `dL_analytic` columns to the trajectory.
    #[serde(default)]
    pub lyapunov: bool,
    #[serde(default = "first_block")]
    pub lyapunov_block: usize,
    /// Weights for an `Lk` column (full length, zero outside the block).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub classify: bool,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub tolerances: TolerancesConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            lyapunov: false,
            lyapunov_block: 1,
            lyapunov_alpha: None,
            classify: false,
            oracle: false,
            tolerances: TolerancesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TolerancesConfig {
    pub distance: f64,
    pub s_floor: f64,
    pub force_floor: f64,
    pub lyapunov_rel: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    pub decay_slack: f64,
    pub alternative_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub membership_threshold: Option<f64>,
    pub lyapunov_cadence: f64,
}

impl Default for TolerancesConfig {
    fn default() -> Self {
        let t = Tolerances::default();
        TolerancesConfig {
            distance: t.distance,
            s_floor: t.s_floor,
            force_floor: t.force_floor,
            lyapunov_rel: t.lyapunov_rel,
            warmup: t.warmup,
            decay_slack: t.decay_slack,
            alternative_factor: t.alternative_factor,
            membership_threshold: t.membership_threshold,
            lyapunov_cadence: t.lyapunov_cadence,
        }
    }
}

impl TolerancesConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            distance: self.distance,
            s_floor: self.s_floor,
            force_floor: self.force_floor,
            lyapunov_rel: self.lyapunov_rel,
            warmup: self.warmup,
            decay_slack: self.decay_slack,
            alternative_factor: self.alternative_factor,
            membership_threshold: self.membership_threshold,
            lyapunov_cadence: self.lyapunov_cadence,
        }
    }
}

/// Command-line overrides of the tolerance block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TolOverrides {
    pub distance: Option<f64>,
    pub s_floor: Option<f64>,
    pub force_floor: Option<f64>,
    pub lyapunov: Option<f64>,
    pub warmup: Option<f64>,
    pub membership: Option<f64>,
    pub alternative: Option<f64>,
    pub decay_slack: Option<f64>,
}

impl TolOverrides {
    pub fn apply(&self, t: &mut TolerancesConfig) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.distance, self.distance);
        set(&mut t.s_floor, self.s_floor);
        set(&mut t.force_floor, self.force_floor);
        set(&mut t.lyapunov_rel, self.lyapunov);
        set(&mut t.alternative_factor, self.alternative);
        set(&mut t.decay_slack, self.decay_slack);
        if self.warmup.is_some() {
            t.warmup = self.warmup;
        }
        if self.membership.is_some() {
            t.membership_threshold = self.membership;
        }
    }
}

/// A configuration problem, anchored to a line of the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file.display())?;
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        if !self.key.is_empty() {
            write!(f, ": {}", self.key)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Raw configuration together with its source text, for diagnostics.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub source: String,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: path.to_path_buf(),
            line: None,
            key: String::new(),
            message: format!("cannot read: {e}"),
        })?;
        Self::parse(path, source)
    }

    pub fn parse(path: &Path, source: String) -> Result<Self, ConfigError> {
        let config = toml::from_str(&source).map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| source[..s.start].matches('\n').count() + 1);
            ConfigError {
                file: path.to_path_buf(),
                line,
                key: String::new(),
                message: e.message().to_string(),
            }
        })?;
        Ok(Loaded {
            config,
            path: path.to_path_buf(),
            source,
        })
    }

    fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.path.clone(),
            line: locate(&self.source, key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// 1-based line of `key` in TOML source. Keys are dotted paths whose array
/// elements are written `name[i]`, for example `model.strains[1].mu`. Falls
/// back to the nearest enclosing table header, then to `None`.
pub fn locate(source: &str, key: &str) -> Option<usize> {
    let mut parts: Vec<(String, Option<usize>)> = Vec::new();
    for seg in key.split('.') {
        match seg.split_once('[') {
            Some((name, idx)) => parts.push((name.to_string(), idx.trim_end_matches(']').parse().ok())),
            None => parts.push((seg.to_string(), None)),
        }
    }
    // longest prefix of the path that names a table, and the remaining key
    for split in (1..=parts.len()).rev() {
        let table: Vec<&str> = parts[..split].iter().map(|p| p.0.as_str()).collect();
        let table = table.join(".");
        let index = parts[split - 1].1;
        let rest = parts.get(split).map(|p| p.0.as_str());
        if let Some(line) = locate_in(source, &table, index, rest) {
            return Some(line);
        }
    }
    None
}

fn locate_in(source: &str, table: &str, index: Option<usize>, key: Option<&str>) -> Option<usize> {
    let mut inside = false;
    let mut header = None;
    let mut count = 0;
    let sub = format!("{table}.");
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let is_array = line.starts_with("[[");
            let name = line.trim_start_matches('[').split(']').next().unwrap_or("").trim();
            if name == table {
                inside = if is_array {
                    count += 1;
                    index.map_or(true, |i| i + 1 == count)
                } else {
                    true
                };
                if inside && header.is_none() {
                    header = Some(n + 1);
                    if key.is_none() {
                        return header;
                    }
                }
            } else if inside && name.starts_with(&sub) {
                if key == Some(&name[sub.len()..]) {
                    return Some(n + 1);
                }
            } else {
                inside = false;
            }
            continue;
        }
        if let (true, Some(k)) = (inside, key) {
            if let Some(after) = line.strip_prefix(k) {
                if after.trim_start().starts_with('=') {
                    return Some(n + 1);
                }
            }
        }
    }
    header
}

/// A resolved, runnable experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// Fully resolved configuration: rerunning it reproduces every output.
    pub config: ExperimentConfig,
    pub model: PreparedModel,
    pub init: GridState,
    pub tolerances: Tolerances,
    pub validation_notes: Vec<String>,
}

fn validation_errors(loaded: &Loaded, rep: &ValidationReport) -> ConfigError {
    let first = &rep.failures[0];
    let key = match first.strain {
        Some(k) => format!("model.strains[{k}].{}", first.field),
        None => format!("model.{}", first.field),
    };
    let mut msg = format!("{}: {}", first.item, first.message);
    for f in &rep.failures[1..] {
        msg.push_str(&format!("\n  also {} ({}): {}", f.item, f.field, f.message));
    }
    loaded.error(&key, format!("parameters violate the standing assumptions: {msg}"))
}

pub fn build(loaded: &Loaded, overrides: &TolOverrides) -> Result<Experiment, ConfigError> {
    let mut cfg = loaded.config.clone();
    overrides.apply(&mut cfg.analysis.tolerances);
    for s in cfg.model.strains.iter_mut() {
        s.beta = s.beta.normalized();
        s.mu = s.mu.normalized();
    }

    let mut strains = Vec::with_capacity(cfg.model.strains.len());
    for (k, s) in cfg.model.strains.iter().enumerate() {
        let beta = s.beta.kernel().map_err(|e| loaded.error(&format!("model.strains[{k}].beta"), e.to_string()))?;
        let mu = s.mu.kernel().map_err(|e| loaded.error(&format!("model.strains[{k}].mu"), e.to_string()))?;
        strains.push(Strain::new(beta, mu));
    }
    let params = ModelParams::new(cfg.model.lambda, cfg.model.mu_s, cfg.model.mu0, strains);
    let rep = params.validate();
    if !rep.is_valid() {
        return Err(validation_errors(loaded, &rep));
    }

    let g = &cfg.grid;
    if !(g.da.is_finite() && g.da > 0.0) {
        return Err(loaded.error("grid.da", format!("age step must be positive, got {}", g.da)));
    }
    if !(g.tail_tol > 0.0 && g.tail_tol < 1.0) {
        return Err(loaded.error("grid.tail_tol", format!("tail tolerance must be in (0, 1), got {}", g.tail_tol)));
    }
    let grid = match g.a_max {
        Some(a) => Grid::covering(g.da, a),
        None => params.default_grid(g.da, g.tail_tol),
    }
    .map_err(|e| loaded.error("grid.a_max", e.to_string()))?;
    let model = match &cfg.model.blocks {
        None => PreparedModel::new(params, grid, g.tail_tol, g.tie_tol),
        Some(groups) => {
            if groups.iter().flatten().any(|&j| j == 0) {
                return Err(loaded.error("model.blocks", "strain indices are 1-based"));
            }
            let zero_based: Vec<Vec<usize>> = groups.iter().map(|b| b.iter().map(|j| j - 1).collect()).collect();
            PreparedModel::with_blocks(params, grid, g.tail_tol, &zero_based, g.tie_tol)
        }
    }
    .map_err(|e| match e {
        Error::Grid { .. } => loaded.error("grid.a_max", e.to_string()),
        Error::Invalid(rep) => validation_errors(loaded, &rep),
        other => loaded.error("model", other.to_string()),
    })?;
    cfg.grid.a_max = Some(model.grid.a_max());

    let n = model.n();
    if cfg.init.strains.is_empty() {
        cfg.init.strains = vec![DensityConfig::Zero; n];
    }
    if cfg.init.strains.len() != n {
        return Err(loaded.error(
            "init.strains",
            format!("{} initial densities for {n} strains", cfg.init.strains.len()),
        ));
    }
    let mut eq_block = None;
    let mut x = Vec::with_capacity(n);
    for (j, d) in cfg.init.strains.iter_mut().enumerate() {
        let key = format!("init.strains[{j}]");
        let dens = match d {
            DensityConfig::Zero => vec![0.0; model.grid.cells()],
            DensityConfig::Window { lo, hi, height } => {
                if !(*lo >= 0.0 && hi > lo && height.is_finite() && *height >= 0.0) {
                    return Err(loaded.error(&key, "window needs 0 <= lo < hi and a finite height >= 0"));
                }
                window_density(&model.grid, *lo, *hi, *height)
            }
            DensityConfig::Equilibrium { block, alpha } => {
                if *block == 0 || *block > model.blocks.n_gt {
                    return Err(loaded.error(
                        &key,
                        format!("block {block} is not supercritical (supercritical blocks: 1..={})", model.blocks.n_gt),
                    ));
                }
                if model.blocks.block_of(j) != *block {
                    return Err(loaded.error(&key, format!("strain {} is not in block {block}", j + 1)));
                }
                if !(alpha.is_finite() && *alpha >= 0.0) {
                    return Err(loaded.error(&key, "alpha must be finite and >= 0"));
                }
                eq_block = eq_block.or(Some(*block));
                let c = density_scale(&model, j) * *alpha;
                model.derived[j].pi_cell.iter().map(|p| c * p).collect()
            }
            DensityConfig::Table { path, column } => {
                let p = loaded.base_dir().join(&*path);
                let dens = read_table(&p, *column, &model.grid).map_err(|m| loaded.error(&key, m))?;
                let abs = std::fs::canonicalize(&p).unwrap_or(p);
                *path = abs.to_string_lossy().into_owned();
                dens
            }
        };
        x.push(dens);
    }
    let s = match (cfg.init.s, eq_block) {
        (Some(s), _) => s,
        (None, Some(k)) => model.s_star(k),
        (None, None) => model.params.s0(),
    };
    cfg.init.s = Some(s);
    let init = GridState { t: 0.0, s, x };
    init.check(&model).map_err(|e| loaded.error("init", e.to_string()))?;

    let r = &cfg.run;
    if !(r.horizon.is_finite() && r.horizon >= 0.0) {
        return Err(loaded.error("run.horizon", format!("horizon must be finite and >= 0, got {}", r.horizon)));
    }
    if r.record_every == 0 {
        return Err(loaded.error("run.record_every", "must be at least 1"));
    }
    if let Some(t) = r.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= r.horizon)) {
        return Err(loaded.error("run.snapshot_times", format!("snapshot time {t} is outside [0, horizon]")));
    }
    let a = &cfg.analysis;
    if let Some(alpha) = &a.lyapunov_alpha {
        strainlab::lyapunov::LyapunovConfig::new(&model, a.lyapunov_block, alpha.clone())
            .map_err(|e| loaded.error("analysis.lyapunov_alpha", e.to_string()))?;
    }
    let tolerances = a.tolerances.tolerances();
    Ok(Experiment {
        validation_notes: rep.notes,
        config: cfg,
        model,
        init,
        tolerances,
    })
}

/// Reads a density table and samples it at the cell midpoints.
pub fn read_table(path: &Path, column: usize, grid: &Grid) -> Result<Vec<f64>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot read table {}: {e}", path.display()))?;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let a = rec.get(0).unwrap_or("").parse::<f64>();
        let v = rec.get(column).map(str::parse::<f64>);
        match (a, v) {
            (Ok(a), Some(Ok(v))) => rows.push((a, v)),
            // a header line
            _ if i == 0 => continue,
            _ => return Err(format!("{}: row {} has no numeric age and column {column}", path.display(), i + 1)),
        }
    }
    if rows.is_empty() {
        return Err(format!("{}: table is empty", path.display()));
    }
    if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(format!("{}: ages must increase strictly", path.display()));
    }
    if let Some(r) = rows.iter().find(|r| !(r.1.is_finite() && r.1 >= 0.0)) {
        return Err(format!("{}: density {} at age {} is not finite and >= 0", path.display(), r.1, r.0));
    }
    Ok((0..grid.cells())
        .map(|i| {
            let a = grid.midpoint(i);
            let p = rows.partition_point(|r| r.0 <= a);
            if p == 0 {
                if rows[0].0 == a {
                    rows[0].1
                } else {
                    0.0
                }
            } else if p == rows.len() {
                if rows[p - 1].0 == a {
                    rows[p - 1].1
                } else {
                    0.0
                }
            } else {
                let (a0, v0) = rows[p - 1];
                let (a1, v1) = rows[p];
                if a == a0 {
                    v0
                } else {
                    v0 + (v1 - v0) * (a - a0) / (a1 - a0)
                }
            }
        })
        .collect())
}

pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("configuration serializes to TOML")
}
