//! Browser bindings. Every operation takes and returns a JSON string so the
//! page needs no generated types.

use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

use strainlab::classify::{membership, predict};
use strainlab::equilibria::{disease_free, distance_to_set, endemic_point};
use strainlab::solver::{simulate as run, window_density, GridState, RecordOptions};
use strainlab::{AgeKernel, ModelParams, PreparedModel, Strain};

#[derive(Debug, Clone, Deserialize)]
pub struct StrainInput {
    /// Infectiousness on `[beta_lo, beta_hi)`.
    pub beta: f64,
    #[serde(default)]
    pub beta_lo: f64,
    /// Absent means the window never closes.
    #[serde(default)]
    pub beta_hi: Option<f64>,
    pub mu: f64,
    /// Height of the initial density on ages `[0, 1)`.
    #[serde(default)]
    pub x0: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Input {
    pub lambda: f64,
    pub mu_s: f64,
    pub strains: Vec<StrainInput>,
    #[serde(default = "default_da")]
    pub da: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Approximate number of samples returned per curve.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_da() -> f64 {
    0.02
}

fn default_horizon() -> f64 {
    60.0
}

fn default_samples() -> usize {
    400
}

#[derive(Debug, Serialize)]
struct Curves {
    age: Vec<f64>,
    beta: Vec<Vec<f64>>,
    survival: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
}

impl Input {
    fn model(&self) -> Result<PreparedModel, String> {
        if self.strains.is_empty() {
            return Err("at least one strain is needed".into());
        }
        if !(self.da >= 1e-3) {
            return Err(format!("age step must be at least 0.001, got {}", self.da));
        }
        let mu0 = self.strains.iter().map(|s| s.mu).fold(self.mu_s, f64::min);
        let strains = self
            .strains
            .iter()
            .map(|s| {
                let beta = AgeKernel::window(s.beta, s.beta_lo, s.beta_hi.unwrap_or(f64::INFINITY))
                    .map_err(|e| e.to_string())?;
                Ok(Strain::new(beta, AgeKernel::constant(s.mu)))
            })
            .collect::<Result<Vec<_>, String>>()?;
        PreparedModel::with_step(ModelParams::new(self.lambda, self.mu_s, mu0, strains), self.da).map_err(|e| e.to_string())
    }

    fn init(&self, model: &PreparedModel) -> GridState {
        let mut st = GridState::zero(model, model.params.s0());
        for (x, s) in st.x.iter_mut().zip(&self.strains) {
            *x = window_density(&model.grid, 0.0, 1.0, s.x0.max(0.0));
        }
        st
    }
}

fn stride(len: usize, samples: usize) -> usize {
    (len / samples.max(1)).max(1)
}

fn blocks(model: &PreparedModel) -> Vec<Vec<usize>> {
    (1..=model.blocks.n_r)
        .map(|k| model.blocks.members(k).iter().map(|j| j + 1).collect())
        .collect()
}

/// Simulates from a window of infected individuals at every strain, and
/// reports the predicted limit set and the distance to it.
pub fn simulate_json(input: &str) -> Result<String, String> {
    let inp: Input = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let model = inp.model()?;
    let init = inp.init(&model);
    let steps = (inp.horizon / model.grid.dt()).round().max(0.0) as usize;
    if steps > 200_000 {
        return Err(format!("{steps} steps is too many for the demo; shorten the horizon or coarsen the grid"));
    }
    let prediction = predict(&model, &membership(&model, &init, None));
    let opts = RecordOptions {
        record_every: stride(steps, inp.samples),
        snapshot_times: vec![],
    };
    let rec = run(&model, init, inp.horizon, &opts, &mut []).map_err(|e| e.to_string())?;
    let dist = distance_to_set(&model, &rec.final_state, &prediction.target).map_err(|e| e.to_string())?;
    let out = json!({
        "t": rec.times,
        "S": rec.s,
        "mass": rec.mass,
        "r0": model.r0(),
        "blocks": blocks(&model),
        "prediction": prediction.target.to_string(),
        "rationale": prediction.rationale,
        "final_distance": dist.distance,
        "alpha_hat": dist.alpha_hat,
    });
    Ok(out.to_string())
}

/// Reproduction numbers, blocks and the equilibria with uniform weights on
/// each supercritical block.
pub fn equilibria_json(input: &str) -> Result<String, String> {
    let inp: Input = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let model = inp.model()?;
    let grid = &model.grid;
    let e0 = disease_free(&model);
    let mut points = vec![json!({ "name": "E0", "S": e0.s_star, "mass": vec![0.0; model.n()] })];
    let step = stride(grid.cells(), inp.samples);
    let age: Vec<f64> = (0..grid.cells()).step_by(step).map(|i| grid.midpoint(i)).collect();
    for k in 1..=model.blocks.n_gt {
        let members = model.blocks.members(k);
        let mut alpha = vec![0.0; model.n()];
        for &j in members {
            alpha[j] = 1.0 / members.len() as f64;
        }
        let p = endemic_point(&model, k, &alpha).map_err(|e| e.to_string())?;
        let mass: Vec<f64> = p.densities.iter().map(|x| grid.integrate(x)).collect();
        let dens: Vec<Vec<f64>> = p.densities.iter().map(|x| x.iter().step_by(step).copied().collect()).collect();
        points.push(json!({ "name": format!("E{k}"), "S": p.s_star, "mass": mass, "alpha": alpha, "density": dens }));
    }
    let out = json!({
        "r0": model.r0(),
        "blocks": blocks(&model),
        "supercritical": model.blocks.n_gt,
        "age": age,
        "points": points,
    });
    Ok(out.to_string())
}

/// Kernel curves on the grid nodes: `beta`, survival and the reproductive
/// value `Psi`.
pub fn kernels_json(input: &str) -> Result<String, String> {
    let inp: Input = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let model = inp.model()?;
    let grid = &model.grid;
    let step = stride(grid.cells() + 1, inp.samples);
    let nodes: Vec<usize> = (0..=grid.cells()).step_by(step).collect();
    let curves = Curves {
        age: nodes.iter().map(|&i| grid.node(i)).collect(),
        beta: model
            .params
            .strains
            .iter()
            .map(|s| nodes.iter().map(|&i| s.beta.eval(grid.node(i)).unwrap_or(0.0)).collect())
            .collect(),
        survival: model.derived.iter().map(|d| nodes.iter().map(|&i| d.pi[i]).collect()).collect(),
        psi: model.derived.iter().map(|d| nodes.iter().map(|&i| d.psi[i]).collect()).collect(),
    };
    serde_json::to_string(&curves).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn simulate(input: &str) -> Result<String, String> {
    simulate_json(input)
}

#[wasm_bindgen]
pub fn equilibria(input: &str) -> Result<String, String> {
    equilibria_json(input)
}

#[wasm_bindgen]
pub fn kernels(input: &str) -> Result<String, String> {
    kernels_json(input)
}
