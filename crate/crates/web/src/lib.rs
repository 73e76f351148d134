//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers and strings and returns a JSON document.

use std::collections::BTreeSet;

use gridnse::dataset::{apply_attack, apply_exclusion, generate_sample, sample_rng, RecipeSpec, Sample, SampleRecipe, Scenario};
use gridnse::estimator::{gn_solve, GnSettings};
use gridnse::eval::state_mse;
use gridnse::factor_graph::{build_factor_graph_with, khop_subgraph, AugmentedFactorGraph};
use gridnse::grid::PowerSystem;
use gridnse::matpower::load_case;
use gridnse::measurement::{format_location, redundancy, MeasurementKind};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn system(case: &str) -> Result<(PowerSystem, SampleRecipe), String> {
    let spec = match case {
        "ieee30" => RecipeSpec::ieee30(1),
        "ieee118" => RecipeSpec::ieee118(1),
        other => return Err(format!("unknown case `{other}` (ieee30 or ieee118)")),
    };
    let sys = load_case(case).map_err(|e| e.to_string())?;
    let recipe = SampleRecipe::build(&sys, spec).map_err(|e| e.to_string())?;
    Ok((sys, recipe))
}

fn sample(sys: &PowerSystem, recipe: &SampleRecipe, seed: u32) -> Result<Sample, String> {
    generate_sample(sys, recipe, &mut sample_rng(u64::from(seed), 0, 0)).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("serializable"),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[derive(Debug, Serialize)]
pub struct MeasurementRow {
    pub kind: &'static str,
    pub location: String,
    pub side: &'static str,
    pub value: f64,
    pub variance: f64,
}

#[derive(Debug, Serialize)]
pub struct SampleView {
    pub buses: usize,
    pub branches: usize,
    pub redundancy: f64,
    /// `(kind, count)` for every kind present.
    pub counts: Vec<(&'static str, usize)>,
    pub measurements: Vec<MeasurementRow>,
    pub magnitudes: Vec<f64>,
    pub angles: Vec<f64>,
}

pub fn sample_view(case: &str, seed: u32) -> Result<SampleView, String> {
    let (sys, recipe) = system(case)?;
    let s = sample(&sys, &recipe, seed)?;
    let ms = &s.measurements;
    let counts = MeasurementKind::ALL
        .iter()
        .map(|&k| (k.as_str(), ms.iter().filter(|m| m.kind == k).count()))
        .filter(|&(_, c)| c > 0)
        .collect();
    let measurements = ms
        .iter()
        .map(|m| {
            let (location, side) = format_location(&sys, &m.location);
            MeasurementRow { kind: m.kind.as_str(), location, side, value: m.value, variance: m.variance }
        })
        .collect();
    Ok(SampleView {
        buses: sys.n_buses(),
        branches: sys.branches.len(),
        redundancy: redundancy(ms, &sys),
        counts,
        measurements,
        magnitudes: s.label.magnitudes.clone(),
        angles: s.label.angles.clone(),
    })
}

/// Measurements, label state and per-kind counts of one random sample.
#[wasm_bindgen]
pub fn sample_json(case: &str, seed: u32) -> String {
    to_json(sample_view(case, seed))
}

#[derive(Debug, Serialize)]
pub struct EstimateView {
    pub measurements: usize,
    pub removed: usize,
    pub attacked_bus: Option<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub message: String,
    pub mse: Option<f64>,
    pub magnitudes: Vec<f64>,
    pub angles: Vec<f64>,
    pub label_magnitudes: Vec<f64>,
    pub label_angles: Vec<f64>,
}

pub fn estimate_view(case: &str, seed: u32, exclusion: f64, attack_scale: f64) -> Result<EstimateView, String> {
    if !(0.0..=0.95).contains(&exclusion) {
        return Err(format!("exclusion fraction {exclusion} outside [0, 0.95]"));
    }
    if !(attack_scale >= 0.0 && attack_scale.is_finite()) {
        return Err(format!("attack scale {attack_scale} must be >= 0"));
    }
    let (sys, recipe) = system(case)?;
    let mut s = sample(&sys, &recipe, seed)?;
    let mut rng = sample_rng(u64::from(seed), 1, 0);
    if attack_scale > 0.0 {
        s = apply_attack(&s, &sys, attack_scale, &mut rng).map_err(|e| e.to_string())?;
    }
    if exclusion > 0.0 {
        let attacked = s.attacked.clone();
        let scenario = s.scenario.clone();
        s = apply_exclusion(&s, exclusion, &mut rng).map_err(|e| e.to_string())?;
        s.attacked = attacked;
        s.scenario = scenario;
    }
    let attacked_bus = match s.scenario {
        Scenario::Attack { bus, .. } => Some(bus),
        _ => None,
    };
    let n = sys.n_buses();
    let mut view = EstimateView {
        measurements: s.measurements.len(),
        removed: s.removed.len(),
        attacked_bus,
        converged: false,
        iterations: 0,
        message: String::new(),
        mse: None,
        magnitudes: vec![f64::NAN; n],
        angles: vec![f64::NAN; n],
        label_magnitudes: s.label.magnitudes.clone(),
        label_angles: s.label.angles.clone(),
    };
    match gn_solve(&sys, &s.inputs(), &GnSettings::default().without_condition()) {
        Ok((x, report)) => {
            view.converged = report.converged;
            view.iterations = report.iterations;
            view.mse = Some(state_mse(&x, &s.label));
            view.magnitudes = x.magnitudes;
            view.angles = x.angles;
            view.message = "converged".into();
        }
        Err(e) => view.message = e.to_string(),
    }
    Ok(view)
}

/// Flat-start Gauss-Newton on one sample after removing a fraction of its
/// measurements and/or corrupting measurements around a random bus.
#[wasm_bindgen]
pub fn estimate_json(case: &str, seed: u32, exclusion: f64, attack_scale: f64) -> String {
    to_json(estimate_view(case, seed, exclusion, attack_scale))
}

#[derive(Debug, Serialize, PartialEq)]
pub struct GraphCounts {
    pub variables: usize,
    pub factors: usize,
    pub factor_edges: usize,
    pub variable_edges: usize,
    pub buses: usize,
}

impl GraphCounts {
    fn of(g: &AugmentedFactorGraph) -> Self {
        let buses: BTreeSet<usize> = g.variables.iter().map(|v| v.bus).collect();
        GraphCounts {
            variables: g.n_variables(),
            factors: g.n_factors(),
            factor_edges: g.factor_edges.len(),
            variable_edges: g.variable_edges.len(),
            buses: buses.len(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct GraphView {
    pub plain: GraphCounts,
    pub augmented: GraphCounts,
    pub bus: usize,
    pub hops: usize,
    pub plain_subgraph: GraphCounts,
    pub augmented_subgraph: GraphCounts,
}

pub fn graph_view(case: &str, seed: u32, bus: usize, hops: usize) -> Result<GraphView, String> {
    let (sys, recipe) = system(case)?;
    let s = sample(&sys, &recipe, seed)?;
    let err = |e: gridnse::Error| e.to_string();
    let plain = build_factor_graph_with(&sys, &s.measurements, false).map_err(err)?;
    let augmented = build_factor_graph_with(&sys, &s.measurements, true).map_err(err)?;
    Ok(GraphView {
        plain: GraphCounts::of(&plain),
        augmented: GraphCounts::of(&augmented),
        bus,
        hops,
        plain_subgraph: GraphCounts::of(&khop_subgraph(&plain, bus, hops).map_err(err)?),
        augmented_subgraph: GraphCounts::of(&khop_subgraph(&augmented, bus, hops).map_err(err)?),
    })
}

/// Node and edge counts of the plain and augmented factor graphs of one
/// sample, and of the `hops`-hop subgraph around `bus`.
#[wasm_bindgen]
pub fn graph_json(case: &str, seed: u32, bus: usize, hops: usize) -> String {
    to_json(graph_view(case, seed, bus, hops))
}
