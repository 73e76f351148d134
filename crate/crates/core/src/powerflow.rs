//! Newton–Raphson AC power flow.
//!
//! Unknowns are the angles of every non-reference bus and the magnitudes of
//! every load bus. Generator buses hold their voltage setpoint; reactive
//! limits are not enforced.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{BusKind, PowerSystem, StateVector};
use crate::measurement::{eval_h, eval_with_row, Location, Measurement, MeasurementKind};

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSpec {
    /// Net active injection (generation minus load) per bus.
    pub active: Vec<f64>,
    /// Net reactive injection per bus (used at load buses only).
    pub reactive: Vec<f64>,
    /// Voltage setpoint per bus (used at reference and generation buses).
    pub voltage: Vec<f64>,
}

impl PowerFlowSpec {
    pub fn nominal(sys: &PowerSystem) -> Self {
        PowerFlowSpec {
            active: sys.nominal.iter().map(|n| n.gen_p - n.load_p).collect(),
            reactive: sys.nominal.iter().map(|n| n.gen_q - n.load_q).collect(),
            voltage: sys.nominal.iter().map(|n| n.voltage_setpoint).collect(),
        }
    }

    pub fn validate(&self, sys: &PowerSystem) -> Result<()> {
        let n = sys.n_buses();
        if self.active.len() != n || self.reactive.len() != n || self.voltage.len() != n {
            return Err(Error::Validation("power flow spec length mismatch".into()));
        }
        if self
            .active
            .iter()
            .chain(&self.reactive)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation("non-finite injection".into()));
        }
        for (i, bus) in sys.buses.iter().enumerate() {
            if bus.kind != BusKind::Load && !(0.8..=1.2).contains(&self.voltage[i]) {
                return Err(Error::Validation(format!(
                    "bus {i} setpoint {} outside [0.8, 1.2]",
                    self.voltage[i]
                )));
            }
        }
        Ok(())
    }
}

fn injection(kind: MeasurementKind, bus: usize) -> Measurement {
    Measurement {
        kind,
        location: Location::Bus(bus),
        value: 0.0,
        variance: 1.0,
    }
}

struct Unknowns {
    angle_buses: Vec<usize>,
    magnitude_buses: Vec<usize>,
}

impl Unknowns {
    fn new(sys: &PowerSystem) -> Self {
        let reference = sys.reference_bus();
        Unknowns {
            angle_buses: (0..sys.n_buses()).filter(|&i| i != reference).collect(),
            magnitude_buses: (0..sys.n_buses())
                .filter(|&i| sys.buses[i].kind == BusKind::Load)
                .collect(),
        }
    }
}

/// Balance residuals `spec − calc`: active power at every non-reference
/// bus, then reactive power at every load bus.
pub fn mismatch(sys: &PowerSystem, spec: &PowerFlowSpec, x: &StateVector) -> Vec<f64> {
    let u = Unknowns::new(sys);
    let mut out = Vec::with_capacity(u.angle_buses.len() + u.magnitude_buses.len());
    for &i in &u.angle_buses {
        out.push(spec.active[i] - eval_h(sys, x, &injection(MeasurementKind::ActiveInjection, i)));
    }
    for &i in &u.magnitude_buses {
        out.push(spec.reactive[i] - eval_h(sys, x, &injection(MeasurementKind::ReactiveInjection, i)));
    }
    out
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20;

pub fn solve_power_flow(
    sys: &PowerSystem,
    spec: &PowerFlowSpec,
    tol: f64,
    max_iter: usize,
) -> Result<StateVector> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Validation("tol must be > 0 and max_iter >= 1".into()));
    }
    spec.validate(sys)?;
    let n = sys.n_buses();
    let u = Unknowns::new(sys);
    let mut x = StateVector::flat(n);
    for (i, bus) in sys.buses.iter().enumerate() {
        if bus.kind != BusKind::Load {
            x.magnitudes[i] = spec.voltage[i];
        }
    }
    let na = u.angle_buses.len();
    let dim = na + u.magnitude_buses.len();
    let mut col_of = vec![usize::MAX; 2 * n];
    for (k, &b) in u.angle_buses.iter().enumerate() {
        col_of[n + b] = k;
    }
    for (k, &b) in u.magnitude_buses.iter().enumerate() {
        col_of[b] = na + k;
    }

    let mut iterations = 0;
    loop {
        let mis = mismatch(sys, spec, &x);
        let norm = inf_norm(&mis);
        if norm <= tol {
            x.angles[sys.reference_bus()] = 0.0;
            return Ok(x);
        }
        if iterations == max_iter {
            return Err(Error::Divergence {
                iterations,
                mismatch: norm,
            });
        }
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let rows = u
            .angle_buses
            .iter()
            .map(|&b| (MeasurementKind::ActiveInjection, b))
            .chain(
                u.magnitude_buses
                    .iter()
                    .map(|&b| (MeasurementKind::ReactiveInjection, b)),
            );
        for (r, (kind, bus)) in rows.enumerate() {
            let (_, row) = eval_with_row(sys, &x, &injection(kind, bus));
            for (&c, &v) in row.cols.iter().zip(&row.vals) {
                let k = col_of[c];
                if k != usize::MAX {
                    jac[(r, k)] += v;
                }
            }
        }
        let delta = jac
            .lu()
            .solve(&DVector::from_vec(mis))
            .ok_or_else(|| Error::Numerical("singular power flow Jacobian".into()))?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Numerical("non-finite Newton step".into()));
        }
        for (k, &b) in u.angle_buses.iter().enumerate() {
            x.angles[b] += delta[k];
        }
        for (k, &b) in u.magnitude_buses.iter().enumerate() {
            x.magnitudes[b] += delta[na + k];
        }
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus};
    use num_complex::Complex64;

    fn two_bus() -> PowerSystem {
        PowerSystem::new(
            "two-bus",
            vec![
                Bus { id: 0, kind: BusKind::Reference, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
                Bus { id: 1, kind: BusKind::Load, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
            ],
            vec![Branch::line(0, 1, 1.0, -10.0, 0.0)],
            100.0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn zero_injection_gives_flat_solution() {
        let sys = crate::matpower::parse_matpower(
            "mpc.bus = [1 3 0 0 0 0 1 1 0 1 1 1.1 0.9; 2 1 0 0 0 0 1 1 0 1 1 1.1 0.9; 3 1 0 0 0 0 1 1 0 1 1 1.1 0.9];\nmpc.gen = [1 0 0 0 0 1 100 1 0 0];\nmpc.branch = [1 2 0.01 0.1 0 0 0 0 0 0 1 0 0; 2 3 0.01 0.1 0 0 0 0 0 0 1 0 0];\n",
        )
        .unwrap();
        let spec = PowerFlowSpec::nominal(&sys);
        assert!(inf_norm(&mismatch(&sys, &spec, &StateVector::flat(3))) == 0.0);
        let x = solve_power_flow(&sys, &spec, 1e-8, 20).unwrap();
        assert_eq!(x, StateVector::flat(3));
    }

    /// Mismatch of the two-bus case straight from `S = V̄ conj(Y V̄)`.
    fn oracle_mismatch(v2: f64, t2: f64, p: f64, q: f64) -> (f64, f64) {
        let y = Complex64::new(1.0, -10.0);
        let v1 = Complex64::new(1.0, 0.0);
        let v2c = Complex64::from_polar(v2, t2);
        let s2 = v2c * (y * (v2c - v1)).conj();
        (p - s2.re, q - s2.im)
    }

    /// For fixed V2, bisection on θ2 for the active balance; the outer
    /// bisection on V2 then zeroes the reactive balance.
    fn oracle_solve(p: f64, q: f64) -> (f64, f64) {
        let theta_for = |v2: f64| {
            let (mut lo, mut hi) = (-0.5f64, 0.5f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let (dp, _) = oracle_mismatch(v2, mid, p, q);
                // P2 grows with θ2 near the operating point
                if dp > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let (mut lo, mut hi) = (0.8f64, 1.1f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let (_, dq) = oracle_mismatch(mid, theta_for(mid), p, q);
            if dq > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v2 = 0.5 * (lo + hi);
        (v2, theta_for(v2))
    }

    #[test]
    fn two_bus_matches_bisection_oracle() {
        let sys = two_bus();
        let spec = PowerFlowSpec {
            active: vec![0.0, -0.5],
            reactive: vec![0.0, -0.2],
            voltage: vec![1.0, 1.0],
        };
        let x = solve_power_flow(&sys, &spec, 1e-12, 20).unwrap();
        let (v2, t2) = oracle_solve(-0.5, -0.2);
        assert!((x.magnitudes[1] - v2).abs() < 1e-9, "{} vs {v2}", x.magnitudes[1]);
        assert!((x.angles[1] - t2).abs() < 1e-9, "{} vs {t2}", x.angles[1]);
        assert_eq!(x.angles[0], 0.0);
        let (dp, dq) = oracle_mismatch(x.magnitudes[1], x.angles[1], -0.5, -0.2);
        assert!(dp.abs() < 1e-11 && dq.abs() < 1e-11);
    }

    #[test]
    fn ieee30_converges_quickly() {
        let sys = crate::matpower::ieee30();
        let spec = PowerFlowSpec::nominal(&sys);
        assert!(solve_power_flow(&sys, &spec, 1e-8, 10).is_ok());
        let x = solve_power_flow(&sys, &spec, 1e-8, 20).unwrap();
        assert!(inf_norm(&mismatch(&sys, &spec, &x)) <= 1e-8);
        assert_eq!(x.angles[sys.reference_bus()], 0.0);
    }

    #[test]
    fn divergence_reports_mismatch() {
        let sys = two_bus();
        let spec = PowerFlowSpec {
            active: vec![0.0, -50.0],
            reactive: vec![0.0, -20.0],
            voltage: vec![1.0, 1.0],
        };
        match solve_power_flow(&sys, &spec, 1e-8, 5) {
            Err(Error::Divergence { iterations, mismatch }) => {
                assert_eq!(iterations, 5);
                assert!(mismatch > 1e-8);
            }
            Err(Error::Numerical(_)) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let sys = two_bus();
        let spec = PowerFlowSpec::nominal(&sys);
        assert!(solve_power_flow(&sys, &spec, 0.0, 5).is_err());
        assert!(solve_power_flow(&sys, &spec, 1e-8, 0).is_err());
    }
}
