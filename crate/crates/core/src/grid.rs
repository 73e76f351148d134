//! Bus/branch model of an AC power system.
//!
//! Every electrical quantity is in per-unit on the system MVA base and every
//! angle is in radians. Branches follow the two-port π-model: series
//! admittance `y = g + jb`, half line charging `y_s = j·b_si` on each side,
//! and an off-nominal transformer `α = (1/τ)·e^{-jφ}` on the from side.

use std::collections::VecDeque;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Reference,
    Generation,
    Load,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Reference => "reference",
            BusKind::Generation => "generation",
            BusKind::Load => "load",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "reference" | "ref" | "slack" => Some(BusKind::Reference),
            "generation" | "gen" | "pv" => Some(BusKind::Generation),
            "load" | "pq" => Some(BusKind::Load),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub shunt_conductance: f64,
    pub shunt_susceptance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub series_conductance: f64,
    pub series_susceptance: f64,
    pub half_shunt_susceptance: f64,
    pub tap: f64,
    pub shift: f64,
}

impl Branch {
    /// Plain transmission line (τ = 1, φ = 0).
    pub fn line(from: usize, to: usize, g: f64, b: f64, b_si: f64) -> Self {
        Branch {
            from,
            to,
            series_conductance: g,
            series_susceptance: b,
            half_shunt_susceptance: b_si,
            tap: 1.0,
            shift: 0.0,
        }
    }

    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.series_conductance, self.series_susceptance)
    }

    /// The 2×2 block `[A11, A12; A21, A22]` mapping `[V̄_from, V̄_to]` to
    /// `[Ī_from→to, Ī_to→from]`.
    pub fn two_port(&self) -> TwoPort {
        let y = self.series_admittance();
        let ys = Complex64::new(0.0, self.half_shunt_susceptance);
        let alpha = Complex64::from_polar(1.0 / self.tap, -self.shift);
        TwoPort {
            a11: (y + ys) / (self.tap * self.tap),
            a12: -alpha.conj() * y,
            a21: -alpha * y,
            a22: y + ys,
        }
    }

    pub fn other_end(&self, bus: usize) -> usize {
        if self.from == bus {
            self.to
        } else {
            self.from
        }
    }

    pub fn end(&self, side: Side) -> usize {
        match side {
            Side::From => self.from,
            Side::To => self.to,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPort {
    pub a11: Complex64,
    pub a12: Complex64,
    pub a21: Complex64,
    pub a22: Complex64,
}

pub fn branch_two_port(br: &Branch) -> TwoPort {
    br.two_port()
}

/// Which end of a branch a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    From,
    To,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::From => "from",
            Side::To => "to",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "from" => Some(Side::From),
            "to" => Some(Side::To),
            _ => None,
        }
    }
}

/// Nominal operating point of one bus, used to seed power flow scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalInjection {
    pub load_p: f64,
    pub load_q: f64,
    pub gen_p: f64,
    pub gen_q: f64,
    pub voltage_setpoint: f64,
}

impl Default for NominalInjection {
    fn default() -> Self {
        NominalInjection {
            load_p: 0.0,
            load_q: 0.0,
            gen_p: 0.0,
            gen_q: 0.0,
            voltage_setpoint: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSystem {
    pub name: String,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub base_mva: f64,
    pub nominal: Vec<NominalInjection>,
    incidence: Vec<Vec<(usize, Side)>>,
    reference: usize,
}

impl PowerSystem {
    /// Validates the parts and builds the incidence index.
    ///
    /// When no bus is marked as reference, the lowest-id generation bus is
    /// promoted.
    pub fn new(
        name: impl Into<String>,
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        base_mva: f64,
        nominal: Option<Vec<NominalInjection>>,
    ) -> Result<Self> {
        let n = buses.len();
        if n == 0 {
            return Err(Error::Validation("system has no buses".into()));
        }
        buses.sort_by_key(|b| b.id);
        for (i, bus) in buses.iter().enumerate() {
            if bus.id != i {
                if i > 0 && buses[i - 1].id == bus.id {
                    return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
                }
                return Err(Error::Validation(format!(
                    "bus ids must be contiguous 0..{}; found {}",
                    n - 1,
                    bus.id
                )));
            }
        }
        let refs: Vec<usize> = buses
            .iter()
            .filter(|b| b.kind == BusKind::Reference)
            .map(|b| b.id)
            .collect();
        let reference = match refs.len() {
            1 => refs[0],
            0 => {
                let gen = buses
                    .iter()
                    .find(|b| b.kind == BusKind::Generation)
                    .map(|b| b.id)
                    .ok_or_else(|| {
                        Error::Validation("no reference bus and no generation bus to promote".into())
                    })?;
                buses[gen].kind = BusKind::Reference;
                gen
            }
            _ => {
                return Err(Error::Validation(format!(
                    "exactly one reference bus expected, found {}",
                    refs.len()
                )))
            }
        };
        for (k, br) in branches.iter().enumerate() {
            if br.from >= n {
                return Err(Error::Validation(format!(
                    "branch {k} references unknown bus {}",
                    br.from
                )));
            }
            if br.to >= n {
                return Err(Error::Validation(format!(
                    "branch {k} references unknown bus {}",
                    br.to
                )));
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {k} is a self loop")));
            }
            if !(br.tap > 0.0) || !br.tap.is_finite() {
                return Err(Error::Validation(format!("branch {k} has non-positive tap")));
            }
            if br.series_conductance == 0.0 && br.series_susceptance == 0.0 {
                return Err(Error::Validation(format!("branch {k} has zero series admittance")));
            }
        }
        let nominal = match nominal {
            Some(v) if v.len() == n => v,
            Some(v) => {
                return Err(Error::Validation(format!(
                    "nominal injections cover {} buses, system has {n}",
                    v.len()
                )))
            }
            None => vec![NominalInjection::default(); n],
        };
        for (i, inj) in nominal.iter().enumerate() {
            if !(0.8..=1.2).contains(&inj.voltage_setpoint) {
                return Err(Error::Validation(format!(
                    "bus {i} voltage setpoint {} outside [0.8, 1.2]",
                    inj.voltage_setpoint
                )));
            }
        }
        let mut incidence = vec![Vec::new(); n];
        for (k, br) in branches.iter().enumerate() {
            incidence[br.from].push((k, Side::From));
            incidence[br.to].push((k, Side::To));
        }
        let sys = PowerSystem {
            name: name.into(),
            buses,
            branches,
            base_mva,
            nominal,
            incidence,
            reference,
        };
        if !sys.is_connected() {
            log::warn!("power system '{}' is not connected", sys.name);
        }
        Ok(sys)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn reference_bus(&self) -> usize {
        self.reference
    }

    /// Every branch touching `bus` with the side it touches, ascending by branch id.
    pub fn incident_branches(&self, bus: usize) -> Result<&[(usize, Side)]> {
        self.incidence
            .get(bus)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownBus(bus))
    }

    pub fn neighbors(&self, bus: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.incidence[bus]
            .iter()
            .map(|&(k, _)| self.branches[k].other_end(bus))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.n_buses()).map(|i| self.neighbors(i)).collect()
    }

    /// Breadth-first hop distance from `source` to every bus (`usize::MAX` when unreachable).
    pub fn hop_distances(&self, source: usize) -> Vec<usize> {
        hop_distances(&self.adjacency(), &[source])
    }

    pub fn is_connected(&self) -> bool {
        hop_distances(&self.adjacency(), &[0])
            .iter()
            .all(|&d| d != usize::MAX)
    }

    pub fn to_case_string(&self) -> String {
        serialize_case(self)
    }
}

/// Multi-source BFS over a bus adjacency list.
pub fn hop_distances(adjacency: &[Vec<usize>], sources: &[usize]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adjacency.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s] != 0 {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Bus voltage magnitudes (p.u.) and angles (rad).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub magnitudes: Vec<f64>,
    pub angles: Vec<f64>,
}

impl StateVector {
    pub fn flat(n: usize) -> Self {
        StateVector {
            magnitudes: vec![1.0; n],
            angles: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn phasor(&self, bus: usize) -> Complex64 {
        Complex64::from_polar(self.magnitudes[bus], self.angles[bus])
    }

    /// `[V_0..V_{n-1}, θ_0..θ_{n-1}]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.magnitudes.clone();
        v.extend_from_slice(&self.angles);
        v
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let n = x.len() / 2;
        StateVector {
            magnitudes: x[..n].to_vec(),
            angles: x[n..2 * n].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Parses the native line-oriented case format.
///
/// ```text
/// # comment
/// [system]
/// name two-bus
/// base_mva 100
/// [buses]
/// # id kind Gs Bs
/// 0 reference 0 0
/// 1 load 0 0
/// [branches]
/// # from to g b bsi tau phi
/// 0 1 1 -10 0.01 1 0
/// [injections]
/// # bus Pd Qd Pg Vg   (optional, p.u.)
/// 1 0.5 0.2 0 1
/// ```
pub fn parse_case(text: &str) -> Result<PowerSystem> {
    #[derive(PartialEq)]
    enum Section {
        None,
        System,
        Buses,
        Branches,
        Injections,
    }
    let mut section = Section::None;
    let mut name = String::from("case");
    let mut base_mva = 100.0;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    let mut injections: Vec<(usize, NominalInjection, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[system]" => Section::System,
                "[buses]" => Section::Buses,
                "[branches]" => Section::Branches,
                "[injections]" => Section::Injections,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown section {other}"),
                    })
                }
            };
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| Error::Parse { line: line_no, msg };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| perr(format!("invalid number '{s}'")))
        };
        let idx_field = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| perr(format!("invalid bus id '{s}'")))
        };
        match section {
            Section::None => return Err(perr("data outside of a section".into())),
            Section::System => match fields.as_slice() {
                ["name", rest @ ..] if !rest.is_empty() => name = rest.join(" "),
                ["base_mva", v] => base_mva = num(v)?,
                _ => return Err(perr(format!("unrecognised system entry '{line}'"))),
            },
            Section::Buses => {
                if fields.len() != 4 {
                    return Err(perr(format!("expected 4 bus fields, found {}", fields.len())));
                }
                let kind = BusKind::parse(fields[1])
                    .ok_or_else(|| perr(format!("unknown bus kind '{}'", fields[1])))?;
                buses.push(Bus {
                    id: idx_field(fields[0])?,
                    kind,
                    shunt_conductance: num(fields[2])?,
                    shunt_susceptance: num(fields[3])?,
                });
            }
            Section::Branches => {
                if fields.len() != 7 {
                    return Err(perr(format!(
                        "expected 7 branch fields, found {}",
                        fields.len()
                    )));
                }
                branches.push(Branch {
                    from: idx_field(fields[0])?,
                    to: idx_field(fields[1])?,
                    series_conductance: num(fields[2])?,
                    series_susceptance: num(fields[3])?,
                    half_shunt_susceptance: num(fields[4])?,
                    tap: num(fields[5])?,
                    shift: num(fields[6])?,
                });
            }
            Section::Injections => {
                if fields.len() != 5 && fields.len() != 6 {
                    return Err(perr(format!(
                        "expected 5 or 6 injection fields, found {}",
                        fields.len()
                    )));
                }
                let gen_q = if fields.len() == 6 { num(fields[5])? } else { 0.0 };
                injections.push((
                    idx_field(fields[0])?,
                    NominalInjection {
                        load_p: num(fields[1])?,
                        load_q: num(fields[2])?,
                        gen_p: num(fields[3])?,
                        voltage_setpoint: num(fields[4])?,
                        gen_q,
                    },
                    line_no,
                ));
            }
        }
    }
    let n = buses.len();
    {
        let mut seen = vec![false; n.max(buses.iter().map(|b| b.id + 1).max().unwrap_or(0))];
        for b in &buses {
            if seen[b.id] {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
            seen[b.id] = true;
        }
    }
    let nominal = if injections.is_empty() {
        None
    } else {
        let mut nom = vec![NominalInjection::default(); n];
        for (bus, inj, line) in injections {
            if bus >= n {
                return Err(Error::Parse {
                    line,
                    msg: format!("injection for unknown bus {bus}"),
                });
            }
            nom[bus] = inj;
        }
        Some(nom)
    };
    PowerSystem::new(name, buses, branches, base_mva, nominal)
}

pub fn serialize_case(sys: &PowerSystem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[system]");
    let _ = writeln!(out, "name {}", sys.name);
    let _ = writeln!(out, "base_mva {}", sys.base_mva);
    let _ = writeln!(out, "[buses]");
    let _ = writeln!(out, "# id kind Gs Bs");
    for b in &sys.buses {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            b.id,
            b.kind.as_str(),
            b.shunt_conductance,
            b.shunt_susceptance
        );
    }
    let _ = writeln!(out, "[branches]");
    let _ = writeln!(out, "# from to g b bsi tau phi");
    for br in &sys.branches {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            br.from,
            br.to,
            br.series_conductance,
            br.series_susceptance,
            br.half_shunt_susceptance,
            br.tap,
            br.shift
        );
    }
    let _ = writeln!(out, "[injections]");
    let _ = writeln!(out, "# bus Pd Qd Pg Vg Qg");
    for (i, inj) in sys.nominal.iter().enumerate() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            i, inj.load_p, inj.load_q, inj.gen_p, inj.voltage_setpoint, inj.gen_q
        );
    }
    out
}
