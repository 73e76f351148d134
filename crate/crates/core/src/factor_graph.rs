//! Augmented power system factor graph.
//!
//! Every bus contributes two variable nodes (magnitude then angle); every
//! measurement row contributes one factor node, so a phasor yields two
//! factors (its magnitude and its angle channel). A bus-located factor
//! touches the two variables of its bus, a branch-located factor the four
//! variables of both terminals. Augmentation adds a direct edge between any
//! two variable nodes that share a factor node.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{hop_distances, PowerSystem};
use crate::measurement::{MeasurementKind, MeasurementSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    Magnitude,
    Angle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableNode {
    /// Position in the full graph, `2·bus + {0: magnitude, 1: angle}`.
    pub id: usize,
    pub bus: usize,
    pub quantity: Quantity,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorNode {
    /// Index of the source measurement in the set the graph was built from.
    pub measurement: usize,
    pub kind: MeasurementKind,
    pub value: f64,
    pub variance: f64,
    pub buses: Vec<usize>,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Variable(usize),
    Factor(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFactorGraph {
    pub variables: Vec<VariableNode>,
    pub factors: Vec<FactorNode>,
    /// `(factor position, variable position)` pairs.
    pub factor_edges: Vec<(usize, usize)>,
    /// Undirected variable pairs `(a, b)` with `a < b` (positions).
    pub variable_edges: Vec<(usize, usize)>,
    /// Bus-level adjacency of the full power system.
    pub bus_adjacency: Vec<Vec<usize>>,
    /// Width of every node feature after [`encode_features`]; 0 before.
    pub feature_width: usize,
    pub augmented: bool,
}

fn variable_positions(buses: &[usize]) -> Vec<usize> {
    buses.iter().flat_map(|&b| [2 * b, 2 * b + 1]).collect()
}

pub fn build_factor_graph(sys: &PowerSystem, ms: &MeasurementSet) -> Result<AugmentedFactorGraph> {
    build_factor_graph_with(sys, ms, true)
}

/// Builds the factor graph, optionally without the variable–variable edges.
pub fn build_factor_graph_with(
    sys: &PowerSystem,
    ms: &MeasurementSet,
    augment: bool,
) -> Result<AugmentedFactorGraph> {
    let n = sys.n_buses();
    let variables = (0..n)
        .flat_map(|bus| {
            [
                VariableNode { id: 2 * bus, bus, quantity: Quantity::Magnitude, feature: Vec::new() },
                VariableNode { id: 2 * bus + 1, bus, quantity: Quantity::Angle, feature: Vec::new() },
            ]
        })
        .collect();
    let mut factors = Vec::with_capacity(ms.len());
    let mut factor_edges = Vec::new();
    let mut pairs = BTreeSet::new();
    for (k, m) in ms.iter().enumerate() {
        m.check_location(sys)?;
        let buses = m.location.buses(sys);
        let vars = variable_positions(&buses);
        for &v in &vars {
            factor_edges.push((factors.len(), v));
        }
        if augment {
            for (i, &a) in vars.iter().enumerate() {
                for &b in &vars[i + 1..] {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
        factors.push(FactorNode {
            measurement: k,
            kind: m.kind,
            value: m.value,
            variance: m.variance,
            buses,
            feature: Vec::new(),
        });
    }
    Ok(AugmentedFactorGraph {
        variables,
        factors,
        factor_edges,
        variable_edges: pairs.into_iter().collect(),
        bus_adjacency: sys.adjacency(),
        feature_width: 0,
        augmented: augment,
    })
}

/// Bits needed to index every variable node of a system with `n_max` buses.
pub fn index_width(n_max: usize) -> usize {
    let count = 2 * n_max.max(1);
    (usize::BITS - (count - 1).leading_zeros()) as usize
}

/// Most significant bit first.
pub fn binary_encoding(id: usize, width: usize) -> Vec<f64> {
    (0..width)
        .rev()
        .map(|bit| ((id >> bit) & 1) as f64)
        .collect()
}

/// `log10(v)` mapped so that the 1e-5…1e-1 variance range spans [−1, 1].
pub fn variance_feature(variance: f64) -> f64 {
    (variance.log10() + 3.0) / 2.0
}

pub const FACTOR_FEATURE_WIDTH: usize = 2 + MeasurementKind::ALL.len();

/// Common input width for systems with up to `n_max` buses.
pub fn feature_width(n_max: usize) -> usize {
    index_width(n_max).max(FACTOR_FEATURE_WIDTH)
}

/// Fills node features: binary index code for variables,
/// `[z, variance code, one-hot kind]` for factors, all zero-padded to
/// [`feature_width`].
pub fn encode_features(mut g: AugmentedFactorGraph, n_max: usize) -> Result<AugmentedFactorGraph> {
    let w = index_width(n_max);
    let width = feature_width(n_max);
    for v in &mut g.variables {
        if v.id >= 1usize << w {
            return Err(Error::Config(format!(
                "variable id {} does not fit in {w} bits (n_max = {n_max})",
                v.id
            )));
        }
        let mut f = binary_encoding(v.id, w);
        f.resize(width, 0.0);
        v.feature = f;
    }
    for f in &mut g.factors {
        let mut feat = vec![0.0; width];
        feat[0] = f.value;
        feat[1] = variance_feature(f.variance);
        feat[2 + f.kind.index()] = 1.0;
        f.feature = feat;
    }
    g.feature_width = width;
    Ok(g)
}

impl AugmentedFactorGraph {
    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    /// Positions of the magnitude and angle variables of `bus`.
    pub fn bus_variables(&self, bus: usize) -> Option<(usize, usize)> {
        let mag = self
            .variables
            .iter()
            .position(|v| v.bus == bus && v.quantity == Quantity::Magnitude)?;
        let ang = self
            .variables
            .iter()
            .position(|v| v.bus == bus && v.quantity == Quantity::Angle)?;
        Some((mag, ang))
    }

    pub fn neighbors(&self, node: NodeRef) -> Vec<NodeRef> {
        match node {
            NodeRef::Factor(f) => self
                .factor_edges
                .iter()
                .filter(|e| e.0 == f)
                .map(|e| NodeRef::Variable(e.1))
                .collect(),
            NodeRef::Variable(v) => {
                let mut out: Vec<NodeRef> = self
                    .factor_edges
                    .iter()
                    .filter(|e| e.1 == v)
                    .map(|e| NodeRef::Factor(e.0))
                    .collect();
                out.extend(self.variable_edges.iter().filter_map(|&(a, b)| {
                    if a == v {
                        Some(NodeRef::Variable(b))
                    } else if b == v {
                        Some(NodeRef::Variable(a))
                    } else {
                        None
                    }
                }));
                out
            }
        }
    }

    /// Edge-list dump with node type annotations.
    pub fn dump(&self) -> String {
        let mut out = String::from("# nodes\n");
        for (i, v) in self.variables.iter().enumerate() {
            let q = match v.quantity {
                Quantity::Magnitude => "magnitude",
                Quantity::Angle => "angle",
            };
            let _ = writeln!(out, "v{i} variable bus={} {q}", v.bus);
        }
        for (i, f) in self.factors.iter().enumerate() {
            let buses: Vec<String> = f.buses.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(
                out,
                "f{i} factor kind={} measurement={} buses={}",
                f.kind.as_str(),
                f.measurement,
                buses.join(",")
            );
        }
        out.push_str("# edges\n");
        for &(f, v) in &self.factor_edges {
            let _ = writeln!(out, "f{f} v{v} factor-variable");
        }
        for &(a, b) in &self.variable_edges {
            let _ = writeln!(out, "v{a} v{b} variable-variable");
        }
        out
    }
}

/// Drops the factor nodes built from the given measurement indices; the
/// variable–variable edges are kept as built.
pub fn remove_factors(g: &AugmentedFactorGraph, victims: &[usize]) -> Result<AugmentedFactorGraph> {
    let mut drop = vec![false; g.factors.len()];
    for &m in victims {
        let pos = g
            .factors
            .iter()
            .position(|f| f.measurement == m)
            .ok_or(Error::UnknownMeasurement(m))?;
        drop[pos] = true;
    }
    let mut remap = vec![usize::MAX; g.factors.len()];
    let mut factors = Vec::new();
    for (i, f) in g.factors.iter().enumerate() {
        if !drop[i] {
            remap[i] = factors.len();
            factors.push(f.clone());
        }
    }
    let factor_edges = g
        .factor_edges
        .iter()
        .filter(|e| !drop[e.0])
        .map(|&(f, v)| (remap[f], v))
        .collect();
    Ok(AugmentedFactorGraph {
        variables: g.variables.clone(),
        factors,
        factor_edges,
        variable_edges: g.variable_edges.clone(),
        bus_adjacency: g.bus_adjacency.clone(),
        feature_width: g.feature_width,
        augmented: g.augmented,
    })
}

/// Induced subgraph on the buses within `hops` bus-level hops of `bus`:
/// their variable nodes plus every factor whose buses all lie inside.
/// Relative node and edge order is preserved.
pub fn khop_subgraph(g: &AugmentedFactorGraph, bus: usize, hops: usize) -> Result<AugmentedFactorGraph> {
    if bus >= g.bus_adjacency.len() {
        return Err(Error::UnknownBus(bus));
    }
    let dist = hop_distances(&g.bus_adjacency, &[bus]);
    let inside = |b: usize| dist[b] <= hops;

    let mut var_map = vec![usize::MAX; g.variables.len()];
    let mut variables = Vec::new();
    for (i, v) in g.variables.iter().enumerate() {
        if inside(v.bus) {
            var_map[i] = variables.len();
            variables.push(v.clone());
        }
    }
    let mut fac_map = vec![usize::MAX; g.factors.len()];
    let mut factors = Vec::new();
    for (i, f) in g.factors.iter().enumerate() {
        if f.buses.iter().all(|&b| inside(b)) {
            fac_map[i] = factors.len();
            factors.push(f.clone());
        }
    }
    let factor_edges = g
        .factor_edges
        .iter()
        .filter(|&&(f, v)| fac_map[f] != usize::MAX && var_map[v] != usize::MAX)
        .map(|&(f, v)| (fac_map[f], var_map[v]))
        .collect();
    let variable_edges = g
        .variable_edges
        .iter()
        .filter(|&&(a, b)| var_map[a] != usize::MAX && var_map[b] != usize::MAX)
        .map(|&(a, b)| (var_map[a], var_map[b]))
        .collect();
    Ok(AugmentedFactorGraph {
        variables,
        factors,
        factor_edges,
        variable_edges,
        bus_adjacency: g.bus_adjacency.clone(),
        feature_width: g.feature_width,
        augmented: g.augmented,
    })
}

/// Bus-hop radius whose subgraph reproduces a `layers`-deep forward pass
/// exactly. Without augmentation a bus hop costs two message hops
/// (variable → factor → variable), giving ⌈K/2⌉; with variable–variable
/// edges a single message hop crosses a branch, so the radius is K.
pub fn exact_inference_radius(layers: usize, augmented: bool) -> usize {
    if augmented {
        layers
    } else {
        layers.div_ceil(2)
    }
}
