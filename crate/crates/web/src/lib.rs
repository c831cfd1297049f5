use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use polysafe_core::polytope::{Polytope, PolytopeSpec};
use polysafe_core::presets;
use polysafe_core::runtime::{simulate_vertex_bundle, Controller, Disturbance};
use polysafe_core::verify::monte_carlo_contractivity;

#[derive(Serialize)]
struct PolytopeView {
    vertices: Vec<Vec<f64>>,
    incidences: Vec<Vec<usize>>,
    mirror_pairs: Vec<(usize, usize)>,
}

/// Benchmark plant with a global controller on the box of half-width `radius`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopInput {
    radius: f64,
    #[serde(default = "e1")]
    e1: f64,
    #[serde(default = "e2")]
    e2: f64,
    k1: Vec<f64>,
    k2: Vec<f64>,
    #[serde(default)]
    h_w: f64,
    #[serde(default = "steps")]
    steps: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    lambda: f64,
    #[serde(default = "samples")]
    samples: usize,
    #[serde(default = "boundary")]
    boundary_fraction: f64,
}

fn e1() -> f64 {
    -0.01
}
fn e2() -> f64 {
    -0.005
}
fn steps() -> usize {
    60
}
fn one() -> f64 {
    1.0
}
fn samples() -> usize {
    2000
}
fn boundary() -> f64 {
    0.7
}

#[derive(Serialize)]
struct TrajectoryView {
    states: Vec<Vec<f64>>,
    gauges: Vec<f64>,
    left_at: Option<usize>,
}

fn setup(inp: &LoopInput) -> Result<(polysafe_core::plant_data::PlantModel, Controller, Polytope), String> {
    if inp.k1.len() != 3 || inp.k2.len() != 4 {
        return Err("k1 needs 3 entries and k2 needs 4".into());
    }
    let plant = presets::paper_plant(inp.e1, inp.e2, inp.h_w.max(0.0));
    let ctrl = Controller::global(
        DMatrix::from_row_slice(1, 3, &inp.k1),
        DMatrix::from_row_slice(1, 4, &inp.k2),
        plant.remainder.clone(),
    );
    let p = Polytope::hypercube(3, inp.radius).map_err(|e| e.to_string())?;
    Ok((plant, ctrl, p))
}

/// Vertices, incidences and mirror facet pairs of `{x : F x <= g}` given as `{"F": [[..]], "g": [..]}`.
pub fn enumerate_json(input: &str) -> Result<String, String> {
    let spec: PolytopeSpec = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let p = Polytope::try_from(spec).map_err(|e| e.to_string())?;
    let view = PolytopeView {
        vertices: p.vertices().vertices.iter().map(|v| v.iter().copied().collect()).collect(),
        incidences: p.vertices().incidences.clone(),
        mirror_pairs: p.sign_symmetric_partition().pair_map,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// One closed-loop trajectory from every vertex of the box.
pub fn simulate_json(input: &str) -> Result<String, String> {
    let inp: LoopInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let (plant, ctrl, p) = setup(&inp)?;
    let dist = if inp.h_w > 0.0 { Disturbance::Uniform { h_w: inp.h_w } } else { Disturbance::Zero };
    let runs = simulate_vertex_bundle(&plant, &ctrl, &p, inp.steps, dist, inp.seed);
    let view: Vec<TrajectoryView> = runs
        .into_iter()
        .map(|t| TrajectoryView {
            states: t.states.iter().map(|x| x.iter().copied().collect()).collect(),
            gauges: t.gauges,
            left_at: t.violated_at,
        })
        .collect();
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Sampling check of `F x+ <= lambda g` on the noise-free plant.
pub fn check_json(input: &str) -> Result<String, String> {
    let inp: LoopInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let (plant, ctrl, p) = setup(&inp)?;
    let zero = DVector::zeros(3);
    let step = |x: &DVector<f64>| match ctrl.eval(x) {
        Ok(u) => plant.step(x, &u, &zero),
        Err(_) => DVector::from_element(3, f64::INFINITY),
    };
    let report = monte_carlo_contractivity(&p, step, inp.lambda, inp.samples, inp.boundary_fraction, inp.seed)
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn enumerate(input: &str) -> Result<String, JsValue> {
    enumerate_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(input: &str) -> Result<String, JsValue> {
    simulate_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn check(input: &str) -> Result<String, JsValue> {
    check_json(input).map_err(|e| JsValue::from_str(&e))
}
