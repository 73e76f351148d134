//! Gauss–Newton weighted least squares state estimation.
//!
//! Each iteration solves `[JᵀWJ] Δx = JᵀW r` with `r = z − h(x)` and updates
//! `x ← x + Δx` until `‖Δx‖∞ ≤ tol`. Angle residuals are wrapped into
//! (−π, π]. When the measurement set carries no phasor angle the reference
//! bus angle is pinned to zero and dropped from the unknowns.

use crate::error::{Error, Result};
use crate::grid::{wrap_angle, PowerSystem, StateVector};
use crate::linalg::{build_normal_system_masked, condition_estimate, solve_scaled, SymmetricMatrix};
use crate::measurement::{eval_h, stack, MeasurementSet};

#[derive(Debug, Clone, PartialEq)]
pub enum GnInit {
    Flat,
    Warm(StateVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub init: GnInit,
    /// Estimate the gain-matrix condition number at the last iteration.
    pub condition: bool,
}

impl Default for GnSettings {
    fn default() -> Self {
        GnSettings {
            tol: 1e-8,
            max_iter: 30,
            init: GnInit::Flat,
            condition: true,
        }
    }
}

impl GnSettings {
    pub fn without_condition(mut self) -> Self {
        self.condition = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnReport {
    pub converged: bool,
    pub iterations: usize,
    /// `sqrt(Σ r_i² / v_i)` at the returned estimate.
    pub residual_norm: f64,
    pub condition: f64,
    pub pinned_reference: bool,
    /// Number of iterations that needed the damped retry.
    pub damped_steps: usize,
}

impl GnReport {
    pub fn to_text(&self) -> String {
        format!(
            "{{\n  \"converged\": {},\n  \"iterations\": {},\n  \"residual_norm\": {:e},\n  \"condition_estimate\": {:e},\n  \"pinned_reference\": {},\n  \"damped_steps\": {}\n}}\n",
            self.converged,
            self.iterations,
            self.residual_norm,
            self.condition,
            self.pinned_reference,
            self.damped_steps
        )
    }
}

fn damped(g: &SymmetricMatrix) -> SymmetricMatrix {
    let n = g.n;
    let lambda = 1e-8 * g.trace() / n as f64;
    let mut out = g.clone();
    for i in 0..n {
        out.data[i * n + i] += lambda;
    }
    out
}

fn weighted_residual(sys: &PowerSystem, ms: &MeasurementSet, x: &StateVector) -> f64 {
    ms.iter()
        .map(|m| {
            let mut r = m.value - eval_h(sys, x, m);
            if m.kind.is_angle() {
                r = wrap_angle(r);
            }
            r * r / m.variance
        })
        .sum::<f64>()
        .sqrt()
}

pub fn gn_solve(sys: &PowerSystem, ms: &MeasurementSet, settings: &GnSettings) -> Result<(StateVector, GnReport)> {
    if ms.is_empty() {
        return Err(Error::Unobservable("empty measurement set".into()));
    }
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(Error::Validation("GN tol must be > 0 and max_iter >= 1".into()));
    }
    for m in ms.iter() {
        m.check_location(sys)?;
    }
    let n = sys.n_buses();
    let pinned = !ms.has_angle_reference();
    let reference = sys.reference_bus();

    let mut active = vec![None; 2 * n];
    let mut columns = Vec::with_capacity(2 * n);
    for c in 0..2 * n {
        if pinned && c == n + reference {
            continue;
        }
        active[c] = Some(columns.len());
        columns.push(c);
    }
    let unknowns = columns.len();

    let mut x = match &settings.init {
        GnInit::Flat => StateVector::flat(n),
        GnInit::Warm(s) => {
            if s.len() != n {
                return Err(Error::Validation("warm start has wrong length".into()));
            }
            s.clone()
        }
    };
    if pinned {
        x.angles[reference] = 0.0;
    }

    let mut damped_steps = 0;
    let mut last_increment = f64::INFINITY;
    for iter in 0..settings.max_iter {
        let (h, jac, w) = stack(sys, &x, ms);
        let r: Vec<f64> = ms
            .iter()
            .zip(&h)
            .map(|(m, hi)| {
                let d = m.value - hi;
                if m.kind.is_angle() {
                    wrap_angle(d)
                } else {
                    d
                }
            })
            .collect();
        let (g, rhs) = build_normal_system_masked(&jac, &w, &r, &active, unknowns);
        let (delta, was_damped) = match solve_scaled(&g, &rhs) {
            Some(d) => (d, false),
            None => match solve_scaled(&damped(&g), &rhs) {
                Some(d) => (d, true),
                None => {
                    return Err(Error::Unobservable(format!(
                        "gain matrix is singular at iteration {iter}"
                    )))
                }
            },
        };
        if was_damped {
            damped_steps += 1;
        }
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::EstimatorDivergence {
                iterations: iter + 1,
                increment: f64::INFINITY,
            });
        }
        for (k, &c) in columns.iter().enumerate() {
            if c < n {
                x.magnitudes[c] += delta[k];
            } else {
                x.angles[c - n] += delta[k];
            }
        }
        last_increment = delta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if x.magnitudes.iter().any(|v| !v.is_finite() || *v <= 0.0)
            || x.angles.iter().any(|a| !a.is_finite())
        {
            return Err(Error::EstimatorDivergence {
                iterations: iter + 1,
                increment: last_increment,
            });
        }
        if last_increment <= settings.tol {
            // a damped final step means the minimiser is not unique
            if was_damped {
                return Err(Error::Unobservable(
                    "gain matrix singular at the converged point".into(),
                ));
            }
            for a in x.angles.iter_mut() {
                *a = wrap_angle(*a);
            }
            let condition = if settings.condition {
                condition_estimate(&g)
            } else {
                f64::NAN
            };
            let report = GnReport {
                converged: true,
                iterations: iter + 1,
                residual_norm: weighted_residual(sys, ms, &x),
                condition,
                pinned_reference: pinned,
                damped_steps,
            };
            return Ok((x, report));
        }
    }
    Err(Error::EstimatorDivergence {
        iterations: settings.max_iter,
        increment: last_increment,
    })
}

/// CSV `bus,V,theta` per bus.
pub fn state_csv(x: &StateVector) -> String {
    let mut out = String::from("bus,V,theta\n");
    for (i, (v, t)) in x.magnitudes.iter().zip(&x.angles).enumerate() {
        out.push_str(&format!("{i},{v},{t}\n"));
    }
    out
}
