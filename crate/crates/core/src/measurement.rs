//! Measurement model `z = h(x) + u` for legacy (SCADA) and phasor (PMU)
//! measurements, with analytic Jacobian rows.
//!
//! Every measurement function is written through a complex current that is
//! linear in the bus phasors `V̄_k = V_k e^{jθ_k}`:
//!
//! * branch end `i` of branch `(i, j)`: `Ī_ij = A11 V̄_i + A12 V̄_j`, and at
//!   the other end `Ī_ji = A21 V̄_i + A22 V̄_j` (π-model block of the branch);
//! * bus `i` injection: `Ī_i = Σ_branches Ī_i→· + (G_s + jB_s) V̄_i`.
//!
//! With the owning bus `o` the measured quantities are
//!
//! * `P + jQ = V̄_o · conj(Ī)` for flows and injections,
//! * `|Ī|` for current magnitudes and `atan2(Im Ī, Re Ī)` for current angles,
//! * `V_k` and `θ_k` for voltage magnitude and angle.
//!
//! Derivatives follow from `∂V̄_k/∂V_k = e^{jθ_k}` and `∂V̄_k/∂θ_k = jV̄_k`:
//! `∂S = ∂V̄_o · conj(Ī) + V̄_o · conj(∂Ī)`,
//! `∂|Ī| = Re(conj(Ī) ∂Ī) / max(|Ī|, ε)` and
//! `∂ arg Ī = Im(conj(Ī) ∂Ī) / |Ī|²`. A current angle whose current is below
//! `ε = 1e-8` evaluates to 0 with an all-zero Jacobian row.
//!
//! Jacobian columns are ordered `[V_0..V_{n-1}, θ_0..θ_{n-1}]`.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{wrap_angle, PowerSystem, Side, StateVector};

/// Current magnitude below which derivative denominators are clamped and
/// current angles are treated as undefined.
pub const CURRENT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasurementKind {
    ActiveFlow,
    ReactiveFlow,
    ActiveInjection,
    ReactiveInjection,
    CurrentMagnitude,
    VoltageMagnitude,
    PmuVoltageMagnitude,
    PmuVoltageAngle,
    PmuCurrentMagnitude,
    PmuCurrentAngle,
}

impl MeasurementKind {
    pub const ALL: [MeasurementKind; 10] = [
        MeasurementKind::ActiveFlow,
        MeasurementKind::ReactiveFlow,
        MeasurementKind::ActiveInjection,
        MeasurementKind::ReactiveInjection,
        MeasurementKind::CurrentMagnitude,
        MeasurementKind::VoltageMagnitude,
        MeasurementKind::PmuVoltageMagnitude,
        MeasurementKind::PmuVoltageAngle,
        MeasurementKind::PmuCurrentMagnitude,
        MeasurementKind::PmuCurrentAngle,
    ];

    pub const LEGACY: [MeasurementKind; 6] = [
        MeasurementKind::ActiveFlow,
        MeasurementKind::ReactiveFlow,
        MeasurementKind::ActiveInjection,
        MeasurementKind::ReactiveInjection,
        MeasurementKind::CurrentMagnitude,
        MeasurementKind::VoltageMagnitude,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn is_phasor(self) -> bool {
        matches!(
            self,
            MeasurementKind::PmuVoltageMagnitude
                | MeasurementKind::PmuVoltageAngle
                | MeasurementKind::PmuCurrentMagnitude
                | MeasurementKind::PmuCurrentAngle
        )
    }

    pub fn is_angle(self) -> bool {
        matches!(
            self,
            MeasurementKind::PmuVoltageAngle | MeasurementKind::PmuCurrentAngle
        )
    }

    pub fn is_branch(self) -> bool {
        matches!(
            self,
            MeasurementKind::ActiveFlow
                | MeasurementKind::ReactiveFlow
                | MeasurementKind::CurrentMagnitude
                | MeasurementKind::PmuCurrentMagnitude
                | MeasurementKind::PmuCurrentAngle
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementKind::ActiveFlow => "active_flow",
            MeasurementKind::ReactiveFlow => "reactive_flow",
            MeasurementKind::ActiveInjection => "active_injection",
            MeasurementKind::ReactiveInjection => "reactive_injection",
            MeasurementKind::CurrentMagnitude => "current_magnitude",
            MeasurementKind::VoltageMagnitude => "voltage_magnitude",
            MeasurementKind::PmuVoltageMagnitude => "pmu_voltage_magnitude",
            MeasurementKind::PmuVoltageAngle => "pmu_voltage_angle",
            MeasurementKind::PmuCurrentMagnitude => "pmu_current_magnitude",
            MeasurementKind::PmuCurrentAngle => "pmu_current_angle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Bus(usize),
    Branch { branch: usize, side: Side },
}

impl Location {
    /// Buses whose state a factor for this location touches.
    pub fn buses(&self, sys: &PowerSystem) -> Vec<usize> {
        match *self {
            Location::Bus(b) => vec![b],
            Location::Branch { branch, .. } => {
                let br = &sys.branches[branch];
                vec![br.from, br.to]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub location: Location,
    pub value: f64,
    pub variance: f64,
}

impl Measurement {
    pub fn new(kind: MeasurementKind, location: Location, value: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::Validation(format!(
                "{} measurement variance must be positive, got {variance}",
                kind.as_str()
            )));
        }
        match (kind.is_branch(), location) {
            (true, Location::Branch { .. }) | (false, Location::Bus(_)) => {}
            _ => {
                return Err(Error::Validation(format!(
                    "{} measurement placed on incompatible location {location:?}",
                    kind.as_str()
                )))
            }
        }
        let value = if kind.is_angle() { wrap_angle(value) } else { value };
        Ok(Measurement {
            kind,
            location,
            value,
            variance,
        })
    }

    pub fn check_location(&self, sys: &PowerSystem) -> Result<()> {
        match self.location {
            Location::Bus(b) if b >= sys.n_buses() => Err(Error::UnknownBus(b)),
            Location::Branch { branch, .. } if branch >= sys.branches.len() => Err(
                Error::Validation(format!("unknown branch {branch}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Clean,
    Noisy,
    Attacked,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Clean => "clean",
            Provenance::Noisy => "noisy",
            Provenance::Attacked => "attacked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clean" => Some(Provenance::Clean),
            "noisy" => Some(Provenance::Noisy),
            "attacked" => Some(Provenance::Attacked),
            _ => None,
        }
    }
}

/// Ordered measurements; the order fixes the rows of `z`, `h` and `J`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
    pub provenance: Vec<Provenance>,
}

impl MeasurementSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: Measurement, p: Provenance) {
        self.measurements.push(m);
        self.provenance.push(p);
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Measurement> {
        self.measurements.iter()
    }

    /// True when any phasor angle fixes the absolute angle reference.
    pub fn has_angle_reference(&self) -> bool {
        self.measurements.iter().any(|m| m.kind.is_angle())
    }

    /// Copy without the entries at `removed` (indices into this set).
    pub fn without(&self, removed: &[usize]) -> MeasurementSet {
        let mut drop = vec![false; self.len()];
        for &r in removed {
            drop[r] = true;
        }
        let mut out = MeasurementSet::new();
        for (i, (m, p)) in self.measurements.iter().zip(&self.provenance).enumerate() {
            if !drop[i] {
                out.push(m.clone(), *p);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseRow {
    fn add(&mut self, col: usize, val: f64) {
        if let Some(pos) = self.cols.iter().position(|&c| c == col) {
            self.vals[pos] += val;
        } else {
            self.cols.push(col);
            self.vals.push(val);
        }
    }

    fn sorted(mut self) -> Self {
        let mut idx: Vec<usize> = (0..self.cols.len()).collect();
        idx.sort_by_key(|&i| self.cols[i]);
        self.cols = idx.iter().map(|&i| self.cols[i]).collect();
        self.vals = idx.iter().map(|&i| self.vals[i]).collect();
        self
    }

    pub fn get(&self, col: usize) -> f64 {
        self.cols
            .iter()
            .position(|&c| c == col)
            .map_or(0.0, |p| self.vals[p])
    }

    pub fn to_dense(&self, ncols: usize) -> Vec<f64> {
        let mut d = vec![0.0; ncols];
        for (&c, &v) in self.cols.iter().zip(&self.vals) {
            d[c] += v;
        }
        d
    }
}

/// Row-major sparse matrix made of [`SparseRow`]s.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatrix {
    pub ncols: usize,
    pub rows: Vec<SparseRow>,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }
}

/// `Ī = Σ coeff_k V̄_k` together with the bus that owns the measurement.
struct CurrentExpr {
    owner: usize,
    terms: Vec<(usize, Complex64)>,
}

impl CurrentExpr {
    fn branch(sys: &PowerSystem, branch: usize, side: Side) -> Self {
        let br = &sys.branches[branch];
        let tp = br.two_port();
        match side {
            Side::From => CurrentExpr {
                owner: br.from,
                terms: vec![(br.from, tp.a11), (br.to, tp.a12)],
            },
            Side::To => CurrentExpr {
                owner: br.to,
                terms: vec![(br.from, tp.a21), (br.to, tp.a22)],
            },
        }
    }

    fn injection(sys: &PowerSystem, bus: usize) -> Self {
        let b = &sys.buses[bus];
        let mut terms: Vec<(usize, Complex64)> =
            vec![(bus, Complex64::new(b.shunt_conductance, b.shunt_susceptance))];
        for &(k, side) in sys.incident_branches(bus).expect("bus exists") {
            for (t, c) in CurrentExpr::branch(sys, k, side).terms {
                match terms.iter_mut().find(|(tb, _)| *tb == t) {
                    Some(slot) => slot.1 += c,
                    None => terms.push((t, c)),
                }
            }
        }
        CurrentExpr { owner: bus, terms }
    }

    fn value(&self, x: &StateVector) -> Complex64 {
        self.terms.iter().map(|&(k, c)| c * x.phasor(k)).sum()
    }
}

fn current_expr(sys: &PowerSystem, m: &Measurement) -> Option<CurrentExpr> {
    match (m.kind, m.location) {
        (
            MeasurementKind::ActiveInjection | MeasurementKind::ReactiveInjection,
            Location::Bus(b),
        ) => Some(CurrentExpr::injection(sys, b)),
        (_, Location::Branch { branch, side }) => Some(CurrentExpr::branch(sys, branch, side)),
        _ => None,
    }
}

fn evaluate(sys: &PowerSystem, x: &StateVector, m: &Measurement, with_row: bool) -> (f64, SparseRow) {
    let n = x.len();
    let mut row = SparseRow::default();
    match m.kind {
        MeasurementKind::VoltageMagnitude | MeasurementKind::PmuVoltageMagnitude => {
            let Location::Bus(k) = m.location else { unreachable!() };
            row.add(k, 1.0);
            return (x.magnitudes[k], row);
        }
        MeasurementKind::PmuVoltageAngle => {
            let Location::Bus(k) = m.location else { unreachable!() };
            row.add(n + k, 1.0);
            return (x.angles[k], row);
        }
        _ => {}
    }
    let expr = current_expr(sys, m).expect("current-based measurement");
    let current = expr.value(x);
    // (column, ∂Ī/∂x_col) for every state the current depends on
    let mut d_current: Vec<(usize, Complex64)> = Vec::new();
    if with_row {
        for &(k, c) in &expr.terms {
            let e = Complex64::from_polar(1.0, x.angles[k]);
            d_current.push((k, c * e));
            d_current.push((n + k, c * Complex64::i() * x.phasor(k)));
        }
    }
    match m.kind {
        MeasurementKind::ActiveFlow
        | MeasurementKind::ReactiveFlow
        | MeasurementKind::ActiveInjection
        | MeasurementKind::ReactiveInjection => {
            let vo = x.phasor(expr.owner);
            let s = vo * current.conj();
            let active = matches!(
                m.kind,
                MeasurementKind::ActiveFlow | MeasurementKind::ActiveInjection
            );
            let part = |z: Complex64| if active { z.re } else { z.im };
            if with_row {
                for &(col, di) in &d_current {
                    row.add(col, part(vo * di.conj()));
                }
                let o = expr.owner;
                let e = Complex64::from_polar(1.0, x.angles[o]);
                row.add(o, part(e * current.conj()));
                row.add(n + o, part(Complex64::i() * vo * current.conj()));
            }
            (part(s), row.sorted())
        }
        MeasurementKind::CurrentMagnitude | MeasurementKind::PmuCurrentMagnitude => {
            let mag = current.norm();
            if with_row {
                let denom = mag.max(CURRENT_EPS);
                for &(col, di) in &d_current {
                    row.add(col, (current.conj() * di).re / denom);
                }
            }
            (mag, row.sorted())
        }
        MeasurementKind::PmuCurrentAngle => {
            let mag = current.norm();
            if mag < CURRENT_EPS {
                return (0.0, SparseRow::default());
            }
            if with_row {
                let denom = mag * mag;
                for &(col, di) in &d_current {
                    row.add(col, (current.conj() * di).im / denom);
                }
            }
            (current.im.atan2(current.re), row.sorted())
        }
        _ => unreachable!(),
    }
}

/// Measurement function `h_i(x)`.
pub fn eval_h(sys: &PowerSystem, x: &StateVector, m: &Measurement) -> f64 {
    evaluate(sys, x, m, false).0
}

pub fn eval_jacobian_row(sys: &PowerSystem, x: &StateVector, m: &Measurement) -> SparseRow {
    evaluate(sys, x, m, true).1
}

pub fn eval_with_row(sys: &PowerSystem, x: &StateVector, m: &Measurement) -> (f64, SparseRow) {
    evaluate(sys, x, m, true)
}

/// Stacked measurement functions, Jacobian and diagonal weights `1/v_i`.
pub fn stack(sys: &PowerSystem, x: &StateVector, ms: &MeasurementSet) -> (Vec<f64>, SparseMatrix, Vec<f64>) {
    let mut h = Vec::with_capacity(ms.len());
    let mut rows = Vec::with_capacity(ms.len());
    let mut w = Vec::with_capacity(ms.len());
    for m in ms.iter() {
        let (v, r) = evaluate(sys, x, m, true);
        h.push(v);
        rows.push(r);
        w.push(1.0 / m.variance);
    }
    (
        h,
        SparseMatrix {
            ncols: 2 * x.len(),
            rows,
        },
        w,
    )
}

/// Measurement count over state-variable count, `m / 2n`.
pub fn redundancy(ms: &MeasurementSet, sys: &PowerSystem) -> f64 {
    if ms.is_empty() {
        return 0.0;
    }
    ms.len() as f64 / (2 * sys.n_buses()) as f64
}

pub const CSV_HEADER: &str = "kind,location,direction,value,variance,provenance";

pub fn format_location(sys: &PowerSystem, loc: &Location) -> (String, &'static str) {
    match *loc {
        Location::Bus(b) => (b.to_string(), "-"),
        Location::Branch { branch, side } => {
            let br = &sys.branches[branch];
            (format!("{}-{}/{}", br.from, br.to, branch), side.as_str())
        }
    }
}

pub fn format_row(sys: &PowerSystem, m: &Measurement, p: Provenance) -> String {
    let (loc, dir) = format_location(sys, &m.location);
    format!(
        "{},{},{},{},{},{}",
        m.kind.as_str(),
        loc,
        dir,
        m.value,
        m.variance,
        p.as_str()
    )
}

/// Parses the six measurement columns of one CSV record.
pub fn parse_row(sys: &PowerSystem, fields: &[&str], line: usize) -> Result<(Measurement, Provenance)> {
    let perr = |msg: String| Error::Parse { line, msg };
    if fields.len() != 6 {
        return Err(perr(format!("expected 6 columns, found {}", fields.len())));
    }
    let kind = MeasurementKind::parse(fields[0])
        .ok_or_else(|| perr(format!("unknown measurement kind '{}'", fields[0])))?;
    let location = if kind.is_branch() {
        let side = Side::parse(fields[2])
            .ok_or_else(|| perr(format!("invalid direction '{}'", fields[2])))?;
        let (ends, explicit) = match fields[1].split_once('/') {
            Some((e, id)) => (
                e,
                Some(
                    id.parse::<usize>()
                        .map_err(|_| perr(format!("invalid branch id '{id}'")))?,
                ),
            ),
            None => (fields[1], None),
        };
        let (f, t) = ends
            .split_once('-')
            .ok_or_else(|| perr(format!("invalid branch location '{}'", fields[1])))?;
        let f: usize = f.parse().map_err(|_| perr(format!("invalid bus '{f}'")))?;
        let t: usize = t.parse().map_err(|_| perr(format!("invalid bus '{t}'")))?;
        let branch = match explicit {
            Some(id) => {
                let br = sys
                    .branches
                    .get(id)
                    .ok_or_else(|| perr(format!("unknown branch {id}")))?;
                if br.from != f || br.to != t {
                    return Err(perr(format!("branch {id} does not connect {f}-{t}")));
                }
                id
            }
            None => {
                let matches: Vec<usize> = sys
                    .branches
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.from == f && b.to == t)
                    .map(|(k, _)| k)
                    .collect();
                match matches.as_slice() {
                    [k] => *k,
                    [] => return Err(perr(format!("no branch {f}-{t}"))),
                    _ => return Err(perr(format!("branch {f}-{t} is ambiguous; add /<id>"))),
                }
            }
        };
        Location::Branch { branch, side }
    } else {
        let b: usize = fields[1]
            .parse()
            .map_err(|_| perr(format!("invalid bus '{}'", fields[1])))?;
        if b >= sys.n_buses() {
            return Err(perr(format!("unknown bus {b}")));
        }
        Location::Bus(b)
    };
    let value: f64 = fields[3]
        .parse()
        .map_err(|_| perr(format!("invalid value '{}'", fields[3])))?;
    let variance: f64 = fields[4]
        .parse()
        .map_err(|_| perr(format!("invalid variance '{}'", fields[4])))?;
    let prov = Provenance::parse(fields[5])
        .ok_or_else(|| perr(format!("invalid provenance '{}'", fields[5])))?;
    let m = Measurement::new(kind, location, value, variance).map_err(|e| perr(e.to_string()))?;
    Ok((m, prov))
}

pub fn write_csv(sys: &PowerSystem, ms: &MeasurementSet) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (m, p) in ms.measurements.iter().zip(&ms.provenance) {
        let _ = writeln!(out, "{}", format_row(sys, m, *p));
    }
    out
}

pub fn read_csv(sys: &PowerSystem, text: &str) -> Result<MeasurementSet> {
    let mut ms = MeasurementSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line == CSV_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (m, p) = parse_row(sys, &fields, idx + 1)?;
        ms.push(m, p);
    }
    Ok(ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, BusKind};

    fn two_bus(bsi: f64) -> PowerSystem {
        PowerSystem::new(
            "two-bus",
            vec![
                Bus { id: 0, kind: BusKind::Reference, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
                Bus { id: 1, kind: BusKind::Load, shunt_conductance: 0.0, shunt_susceptance: 0.0 },
            ],
            vec![Branch::line(0, 1, 1.0, -10.0, bsi)],
            100.0,
            None,
        )
        .unwrap()
    }

    fn meas(kind: MeasurementKind, location: Location) -> Measurement {
        Measurement::new(kind, location, 0.0, 1e-3).unwrap()
    }

    const FROM: Location = Location::Branch { branch: 0, side: Side::From };

    #[test]
    fn flat_state_has_no_flow() {
        let sys = two_bus(0.0);
        let x = StateVector::flat(2);
        assert_eq!(eval_h(&sys, &x, &meas(MeasurementKind::ActiveFlow, FROM)), 0.0);
        assert_eq!(eval_h(&sys, &x, &meas(MeasurementKind::ReactiveFlow, FROM)), 0.0);
    }

    #[test]
    fn flat_state_current_is_charging_only() {
        let sys = two_bus(0.01);
        let x = StateVector::flat(2);
        let i = eval_h(&sys, &x, &meas(MeasurementKind::CurrentMagnitude, FROM));
        assert!((i - 0.01).abs() < 1e-15);
    }

    #[test]
    fn voltage_rows_are_unit_vectors() {
        let sys = two_bus(0.0);
        let x = StateVector { magnitudes: vec![1.0, 0.97], angles: vec![0.0, -0.1] };
        let r = eval_jacobian_row(&sys, &x, &meas(MeasurementKind::VoltageMagnitude, Location::Bus(1)));
        assert_eq!(r.cols, vec![1]);
        assert_eq!(r.vals, vec![1.0]);
        let r = eval_jacobian_row(&sys, &x, &meas(MeasurementKind::PmuVoltageAngle, Location::Bus(1)));
        assert_eq!(r.cols, vec![3]);
        assert_eq!(r.vals, vec![1.0]);
    }

    #[test]
    fn current_angle_undefined_at_zero_current() {
        let sys = two_bus(0.0);
        let x = StateVector::flat(2);
        let m = meas(MeasurementKind::PmuCurrentAngle, FROM);
        let (h, row) = eval_with_row(&sys, &x, &m);
        assert_eq!(h, 0.0);
        assert!(row.cols.is_empty());
        // magnitude derivative stays finite thanks to the clamp
        let r = eval_jacobian_row(&sys, &x, &meas(MeasurementKind::CurrentMagnitude, FROM));
        assert!(r.vals.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(Measurement::new(MeasurementKind::VoltageMagnitude, Location::Bus(0), 1.0, 0.0).is_err());
        assert!(Measurement::new(MeasurementKind::ActiveFlow, Location::Bus(0), 1.0, 1e-3).is_err());
    }

    #[test]
    fn stack_one_row_and_weights() {
        let sys = two_bus(0.0);
        let mut ms = MeasurementSet::new();
        ms.push(
            Measurement::new(MeasurementKind::VoltageMagnitude, Location::Bus(0), 1.0, 1e-3).unwrap(),
            Provenance::Noisy,
        );
        let (h, j, w) = stack(&sys, &StateVector::flat(2), &ms);
        assert_eq!(h, vec![1.0]);
        assert_eq!(j.nrows(), 1);
        assert_eq!(j.ncols, 4);
        assert!((w[0] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn redundancy_of_empty_set() {
        assert_eq!(redundancy(&MeasurementSet::new(), &two_bus(0.0)), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let sys = two_bus(0.01);
        let mut ms = MeasurementSet::new();
        ms.push(Measurement::new(MeasurementKind::ActiveFlow, FROM, 0.123456789, 1e-3).unwrap(), Provenance::Noisy);
        ms.push(
            Measurement::new(
                MeasurementKind::PmuCurrentAngle,
                Location::Branch { branch: 0, side: Side::To },
                -3.0,
                1e-5,
            )
            .unwrap(),
            Provenance::Attacked,
        );
        ms.push(Measurement::new(MeasurementKind::VoltageMagnitude, Location::Bus(1), 0.98, 1e-3).unwrap(), Provenance::Clean);
        let text = write_csv(&sys, &ms);
        assert_eq!(read_csv(&sys, &text).unwrap(), ms);
        // plain from-to location resolves when unambiguous
        let alt = "active_flow,0-1,from,0.5,0.001,noisy\n";
        let parsed = read_csv(&sys, alt).unwrap();
        assert_eq!(parsed.measurements[0].location, FROM);
    }
}
