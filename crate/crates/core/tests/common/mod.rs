#![allow(dead_code, clippy::needless_range_loop)]

use gridnse::factor_graph::{build_factor_graph_with, encode_features, AugmentedFactorGraph};
use gridnse::gnn::{init_model, mse_loss, GnnConfig, GnnModel, GraphBatch};
use gridnse::grid::{Branch, Bus, BusKind, PowerSystem, Side, StateVector};
use gridnse::measurement::{eval_h, Location, Measurement, MeasurementKind, MeasurementSet, Provenance};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn wls_two_bus() -> PowerSystem {
    PowerSystem::new(
        "two-bus",
        vec![
            Bus { id: 0, kind: BusKind::Reference, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
            Bus { id: 1, kind: BusKind::Load, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
        ],
        vec![Branch::line(0, 1, 1.0, -10.0, 0.02)],
        100.0,
        None,
    )
    .unwrap()
}

/// Weighted objective written out by hand for the five two-bus channels:
/// PMU V and θ at bus 0, P and Q from bus 0 to 1, legacy V at bus 1.
pub fn objective(z: &[f64; 5], w: &[f64; 5], s: &[f64; 4]) -> f64 {
    let y = Complex64::new(1.0, -10.0);
    let bc = Complex64::new(0.0, 0.02);
    let v0 = Complex64::from_polar(s[0], s[1]);
    let v1 = Complex64::from_polar(s[2], s[3]);
    let flow = v0 * ((y + bc) * v0 - y * v1).conj();
    let h = [s[0], s[1], flow.re, flow.im, s[2]];
    (0..5).map(|k| (z[k] - h[k]).powi(2) * w[k]).sum()
}

/// Coarse grid search followed by shrinking-step coordinate descent.
pub fn brute_force(z: &[f64; 5], w: &[f64; 5]) -> [f64; 4] {
    let mut best = [1.0, 0.0, 1.0, 0.0];
    let mut best_f = f64::INFINITY;
    for a in 0..=10 {
        for b in 0..=10 {
            for c in 0..=10 {
                for d in 0..=10 {
                    let s = [
                        0.9 + 0.02 * a as f64,
                        -0.2 + 0.04 * b as f64,
                        0.9 + 0.02 * c as f64,
                        -0.2 + 0.04 * d as f64,
                    ];
                    let f = objective(z, w, &s);
                    if f < best_f {
                        best_f = f;
                        best = s;
                    }
                }
            }
        }
    }
    let mut step = 0.02;
    while step > 1e-13 {
        let mut improved = false;
        for k in 0..4 {
            for sign in [-1.0, 1.0] {
                let mut s = best;
                s[k] += sign * step;
                let f = objective(z, w, &s);
                if f < best_f {
                    best_f = f;
                    best = s;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

pub fn fig2_two_bus() -> PowerSystem {
    PowerSystem::new(
        "two-bus",
        vec![
            Bus { id: 0, kind: BusKind::Reference, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
            Bus { id: 1, kind: BusKind::Load, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
        ],
        vec![Branch::line(0, 1, 1.0, -10.0, 0.01)],
        100.0,
        None,
    )
    .unwrap()
}

pub fn two_bus_truth() -> StateVector {
    StateVector { magnitudes: vec![1.0, 0.97], angles: vec![0.0, -0.04] }
}

/// Voltage phasor at bus 0, current phasor on the branch, legacy V at
/// bus 1 and legacy active flow.
pub fn two_bus_graph(augment: bool) -> AugmentedFactorGraph {
    let sys = fig2_two_bus();
    let x = two_bus_truth();
    let br = Location::Branch { branch: 0, side: Side::From };
    let mut ms = MeasurementSet::new();
    for (k, l, v) in [
        (MeasurementKind::PmuVoltageMagnitude, Location::Bus(0), 1e-5),
        (MeasurementKind::PmuVoltageAngle, Location::Bus(0), 1e-5),
        (MeasurementKind::PmuCurrentMagnitude, br, 1e-5),
        (MeasurementKind::PmuCurrentAngle, br, 1e-5),
        (MeasurementKind::VoltageMagnitude, Location::Bus(1), 1e-3),
        (MeasurementKind::ActiveFlow, br, 1e-3),
    ] {
        let mut m = Measurement::new(k, l, 0.0, v).unwrap();
        m.value = eval_h(&sys, &x, &m);
        ms.push(m, Provenance::Clean);
    }
    encode_features(build_factor_graph_with(&sys, &ms, augment).unwrap(), 2).unwrap()
}

pub fn tiny(seed: u64) -> GnnModel {
    let mut m = init_model(&GnnConfig::tiny(3, 2, 12), seed).unwrap();
    // non-zero biases and attention so every path is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in m.tensors().to_vec() {
        if !t.is_weight {
            for p in &mut m.params[t.offset..t.offset + t.rows * t.cols] {
                *p = rng.gen_range(-0.5..0.5);
            }
        }
    }
    m
}

pub fn fd_check(model: &GnnModel, batch: &GraphBatch, labels: &[f64]) -> Result<(), String> {
    let (_, grad) = model.loss_and_grad(batch, labels).unwrap();
    let h = 1e-5;
    let mut m = model.clone();
    for i in 0..model.params.len() {
        let p0 = m.params[i];
        m.params[i] = p0 + h;
        let up = mse_loss(&m.forward(batch).unwrap(), labels).unwrap();
        m.params[i] = p0 - h;
        let down = mse_loss(&m.forward(batch).unwrap(), labels).unwrap();
        m.params[i] = p0;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[i]).abs();
        if err > 1e-7 && err > 1e-4 * fd.abs().max(grad[i].abs()) {
            let name = model
                .tensors()
                .iter()
                .find(|t| i >= t.offset && i < t.offset + t.rows * t.cols)
                .map(|t| t.name.clone())
                .unwrap_or_default();
            return Err(format!("param {i} ({name}): analytic {} vs fd {fd}", grad[i]));
        }
    }
    Ok(())
}

