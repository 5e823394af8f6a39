#![allow(dead_code)]

use rand::Rng;
use strainlab::kernels::AgeKernel;
use strainlab::model::{ModelParams, PreparedModel, Strain, DEFAULT_TIE_TOL};
use strainlab::grid::DEFAULT_TAIL_TOL;
use strainlab::solver::GridState;

pub fn prepared(params: ModelParams, da: f64) -> PreparedModel {
    let grid = params.default_grid(da, DEFAULT_TAIL_TOL).unwrap();
    PreparedModel::new(params, grid, DEFAULT_TAIL_TOL, DEFAULT_TIE_TOL).unwrap()
}

/// Lambda = mu_S = mu0 = 1 with constant kernels, so `R0_k = beta_k / mu_k`.
pub fn constant_model(strains: &[(f64, f64)], da: f64) -> PreparedModel {
    let strains = strains.iter().map(|&(b, m)| Strain::constant(b, m)).collect();
    prepared(ModelParams::new(1.0, 1.0, 1.0, strains), da)
}

fn sorted_edges<R: Rng>(rng: &mut R, span: f64) -> Vec<f64> {
    let count = rng.gen_range(1..4);
    let mut e: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..span)).collect();
    e.sort_by(f64::total_cmp);
    e.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    e
}

/// Constant, windowed or piecewise transmission kernel with sup below `max`.
pub fn random_beta<R: Rng>(rng: &mut R, max: f64) -> AgeKernel {
    match rng.gen_range(0..3) {
        0 => AgeKernel::constant(rng.gen_range(0.1..max)),
        1 => {
            let lo = rng.gen_range(0.0..2.0);
            let hi = if rng.gen_bool(0.3) { f64::INFINITY } else { lo + rng.gen_range(0.2..5.0) };
            AgeKernel::window(rng.gen_range(0.1..max), lo, hi).unwrap()
        }
        _ => {
            let mut edges = vec![0.0];
            edges.extend(sorted_edges(rng, 6.0));
            let last_inf = rng.gen_bool(0.5);
            if last_inf {
                edges.push(f64::INFINITY);
            } else {
                edges.push(edges[edges.len() - 1] + rng.gen_range(0.5..3.0));
            }
            let mut values: Vec<f64> = (0..edges.len() - 1).map(|_| rng.gen_range(0.0..max)).collect();
            let j = rng.gen_range(0..values.len());
            values[j] = rng.gen_range(0.1..max);
            AgeKernel::piecewise(edges, values).unwrap()
        }
    }
}

/// Mortality kernel bounded below by `mu0` on the whole half line.
pub fn random_mu<R: Rng>(rng: &mut R, mu0: f64) -> AgeKernel {
    if rng.gen_bool(0.4) {
        return AgeKernel::constant(mu0 + rng.gen_range(0.0..1.0));
    }
    let mut edges = vec![0.0];
    edges.extend(sorted_edges(rng, 8.0));
    edges.push(f64::INFINITY);
    let values = (0..edges.len() - 1).map(|_| mu0 + rng.gen_range(0.0..1.5)).collect();
    AgeKernel::piecewise(edges, values).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R, max_strains: usize) -> ModelParams {
    let mu0 = rng.gen_range(0.5..1.5);
    let n = rng.gen_range(1..=max_strains);
    let strains = (0..n)
        .map(|_| Strain::new(random_beta(rng, 3.0), random_mu(rng, mu0)))
        .collect();
    ModelParams::new(rng.gen_range(0.3..2.0), mu0 + rng.gen_range(0.0..1.0), mu0, strains)
}

/// Random nonnegative cell values on a random age range.
pub fn random_density<R: Rng>(rng: &mut R, model: &PreparedModel) -> Vec<f64> {
    let cells = model.grid.cells();
    let lo = rng.gen_range(0..cells / 2);
    let hi = (lo + rng.gen_range(1..cells / 2)).min(cells);
    let height = rng.gen_range(0.01..1.0);
    (0..cells)
        .map(|i| if (lo..hi).contains(&i) { height * rng.gen_range(0.0..1.0) } else { 0.0 })
        .collect()
}

/// Strictly positive density on every cell: `h e^{-a} (1 + c cos(w a))`.
pub fn positive_density(model: &PreparedModel, h: f64, c: f64, w: f64) -> Vec<f64> {
    (0..model.grid.cells())
        .map(|i| {
            let a = model.grid.midpoint(i);
            h * (-a).exp() * (1.0 + c * (w * a).cos())
        })
        .collect()
}

pub fn positive_state(model: &PreparedModel, s: f64) -> GridState {
    let mut st = GridState::zero(model, s);
    for k in 0..model.n() {
        st.x[k] = positive_density(model, 0.1 + 0.05 * k as f64, 0.5, 1.0 + k as f64);
    }
    st
}
