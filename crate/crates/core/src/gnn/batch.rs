use ndarray::Array2;

use crate::error::{Error, Result};
use crate::factor_graph::{AugmentedFactorGraph, Quantity};
use crate::grid::StateVector;

/// Directed edges `src → dst` of one message type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Edges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl Edges {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn push(&mut self, s: usize, d: usize) {
        self.src.push(s);
        self.dst.push(d);
    }
}

/// Incoming edge lists per destination node in compressed form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Incoming {
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
}

impl Incoming {
    fn build(n: usize, lists: &[(&[usize], usize)]) -> Self {
        let mut per: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(dst, base) in lists {
            for (e, &d) in dst.iter().enumerate() {
                per[d].push(base + e);
            }
        }
        let mut ptr = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        ptr.push(0);
        for l in per {
            idx.extend(l);
            ptr.push(idx.len());
        }
        Incoming { ptr, idx }
    }

    pub fn of(&self, node: usize) -> &[usize] {
        &self.idx[self.ptr[node]..self.ptr[node + 1]]
    }
}

/// Disjoint union of encoded factor graphs, processed as one graph.
///
/// Variable destinations see factor→variable edges first and
/// variable→variable edges after them, in one shared attention softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub x_var: Array2<f64>,
    pub x_fac: Array2<f64>,
    pub fv: Edges,
    pub vf: Edges,
    pub vv: Edges,
    pub var_in: Incoming,
    pub fac_in: Incoming,
    /// Variable-node offsets of each member graph (length graphs + 1).
    pub var_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&AugmentedFactorGraph]) -> Result<Self> {
        let width = graphs.first().map(|g| g.feature_width).unwrap_or(0);
        if width == 0 {
            return Err(Error::Config("graphs must carry encoded features".into()));
        }
        let n_var: usize = graphs.iter().map(|g| g.n_variables()).sum();
        let n_fac: usize = graphs.iter().map(|g| g.n_factors()).sum();
        let mut x_var = Array2::zeros((n_var, width));
        let mut x_fac = Array2::zeros((n_fac, width));
        let (mut fv, mut vf, mut vv) = (Edges::default(), Edges::default(), Edges::default());
        let mut var_offsets = vec![0];
        let (mut vo, mut fo) = (0, 0);
        for g in graphs {
            if g.feature_width != width {
                return Err(Error::Config(format!(
                    "feature width {} differs from {width}",
                    g.feature_width
                )));
            }
            for (i, v) in g.variables.iter().enumerate() {
                x_var.row_mut(vo + i).assign(&ndarray::ArrayView1::from(&v.feature[..]));
            }
            for (i, f) in g.factors.iter().enumerate() {
                x_fac.row_mut(fo + i).assign(&ndarray::ArrayView1::from(&f.feature[..]));
            }
            for &(f, v) in &g.factor_edges {
                fv.push(fo + f, vo + v);
                vf.push(vo + v, fo + f);
            }
            for &(a, b) in &g.variable_edges {
                vv.push(vo + a, vo + b);
                vv.push(vo + b, vo + a);
            }
            vo += g.n_variables();
            fo += g.n_factors();
            var_offsets.push(vo);
        }
        let var_in = Incoming::build(n_var, &[(&fv.dst, 0), (&vv.dst, fv.len())]);
        let fac_in = Incoming::build(n_fac, &[(&vf.dst, 0)]);
        Ok(GraphBatch { x_var, x_fac, fv, vf, vv, var_in, fac_in, var_offsets })
    }

    pub fn single(g: &AugmentedFactorGraph) -> Result<Self> {
        Self::new(&[g])
    }

    pub fn n_var(&self) -> usize {
        self.x_var.nrows()
    }

    pub fn n_fac(&self) -> usize {
        self.x_fac.nrows()
    }

    pub fn n_graphs(&self) -> usize {
        self.var_offsets.len() - 1
    }
}

/// Target value of every variable node of `g` taken from the state `x`.
pub fn variable_labels(g: &AugmentedFactorGraph, x: &StateVector) -> Vec<f64> {
    g.variables
        .iter()
        .map(|v| match v.quantity {
            Quantity::Magnitude => x.magnitudes[v.bus],
            Quantity::Angle => x.angles[v.bus],
        })
        .collect()
}
