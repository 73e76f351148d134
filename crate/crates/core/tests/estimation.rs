mod common;

use gridnse::estimator::{gn_solve, GnInit, GnSettings};
use gridnse::grid::{PowerSystem, Side, StateVector};
use gridnse::matpower::ieee30;
use gridnse::measurement::{eval_h, Location, Measurement, MeasurementKind, MeasurementSet, Provenance};
use gridnse::powerflow::{solve_power_flow, PowerFlowSpec};
use gridnse::Error;

#[test]
fn two_bus_estimate_matches_brute_force_minimum() {
    let sys = common::wls_two_bus();
    let z = [1.01, 0.003, 0.42, 0.11, 0.962];
    let var = [1e-5, 1e-5, 1e-3, 1e-3, 1e-3];
    let w = var.map(|v| 1.0 / v);
    let from = Location::Branch { branch: 0, side: Side::From };
    let mut ms = MeasurementSet::new();
    let channels = [
        (MeasurementKind::PmuVoltageMagnitude, Location::Bus(0)),
        (MeasurementKind::PmuVoltageAngle, Location::Bus(0)),
        (MeasurementKind::ActiveFlow, from),
        (MeasurementKind::ReactiveFlow, from),
        (MeasurementKind::VoltageMagnitude, Location::Bus(1)),
    ];
    for (k, (kind, loc)) in channels.into_iter().enumerate() {
        ms.push(Measurement::new(kind, loc, z[k], var[k]).unwrap(), Provenance::Noisy);
    }
    let (x, rep) = gn_solve(&sys, &ms, &GnSettings::default()).unwrap();
    assert!(rep.converged && !rep.pinned_reference);
    let oracle = common::brute_force(&z, &w);
    let got = [x.magnitudes[0], x.angles[0], x.magnitudes[1], x.angles[1]];
    for k in 0..4 {
        assert!((got[k] - oracle[k]).abs() < 1e-6, "component {k}: {} vs {}", got[k], oracle[k]);
    }
    assert!(common::objective(&z, &w, &got) <= common::objective(&z, &w, &oracle) + 1e-9);
}

fn ieee30_truth() -> (PowerSystem, StateVector) {
    let sys = ieee30();
    let x = solve_power_flow(&sys, &PowerFlowSpec::nominal(&sys), 1e-10, 20).unwrap();
    (sys, x)
}

fn exact(sys: &PowerSystem, x: &StateVector, kind: MeasurementKind, loc: Location, var: f64) -> Measurement {
    let mut m = Measurement::new(kind, loc, 0.0, var).unwrap();
    m.value = eval_h(sys, x, &m);
    m
}

#[test]
fn ieee30_full_legacy_set_recovers_power_flow_state() {
    let (sys, truth) = ieee30_truth();
    let mut ms = MeasurementSet::new();
    for bus in 0..30 {
        for kind in [MeasurementKind::ActiveInjection, MeasurementKind::ReactiveInjection, MeasurementKind::VoltageMagnitude] {
            ms.push(exact(&sys, &truth, kind, Location::Bus(bus), 1e-3), Provenance::Clean);
        }
    }
    let (x, rep) = gn_solve(&sys, &ms, &GnSettings::default()).unwrap();
    assert!(rep.pinned_reference);
    assert!(x.max_abs_diff(&truth) < 1e-7, "{}", x.max_abs_diff(&truth));
    assert!(rep.residual_norm < 1e-5);
}

#[test]
fn warm_start_at_truth_converges_immediately() {
    let (sys, truth) = ieee30_truth();
    let mut ms = MeasurementSet::new();
    for bus in 0..30 {
        ms.push(exact(&sys, &truth, MeasurementKind::PmuVoltageMagnitude, Location::Bus(bus), 1e-5), Provenance::Clean);
        ms.push(exact(&sys, &truth, MeasurementKind::PmuVoltageAngle, Location::Bus(bus), 1e-5), Provenance::Clean);
    }
    let settings = GnSettings { init: GnInit::Warm(truth.clone()), ..GnSettings::default() };
    let (x, rep) = gn_solve(&sys, &ms, &settings).unwrap();
    assert_eq!(rep.iterations, 1);
    assert!(x.max_abs_diff(&truth) < 1e-12);
}

#[test]
fn island_without_measurements_is_unobservable() {
    let (sys, truth) = ieee30_truth();
    let mut ms = MeasurementSet::new();
    for bus in 0..29 {
        ms.push(exact(&sys, &truth, MeasurementKind::PmuVoltageMagnitude, Location::Bus(bus), 1e-5), Provenance::Clean);
        ms.push(exact(&sys, &truth, MeasurementKind::PmuVoltageAngle, Location::Bus(bus), 1e-5), Provenance::Clean);
    }
    assert!(matches!(gn_solve(&sys, &ms, &GnSettings::default()), Err(Error::Unobservable(_))));
}
