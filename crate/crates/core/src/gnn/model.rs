//! Parameters, forward pass and reverse-mode gradients of the GNN.
//!
//! Layer `k` maps embeddings `(H_v, H_f)` to `(H_v', H_f')`. For every
//! edge `i → j` of a message type the message is the two-layer net
//! `W2ᵀ relu(W1ᵀ [h_i; h_j] + b1) + b2`, the attention logit is
//! `leaky_relu_0.2(a_srcᵀ h_i + a_dstᵀ h_j)` with the attention vector of
//! the destination kind, and each destination takes the softmax-weighted
//! sum of its incoming messages followed by `relu(Uᵀ m + c)`. Because the
//! weights of a softmax sum to one and the second message layer is affine,
//! the hidden activations are aggregated per message type first and pushed
//! through `W2` once per node.
//!
//! The last layer computes no factor-node updates since the head reads
//! variable embeddings only; those parameters receive zero gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{Edges, GraphBatch, Incoming};
use super::config::GnnConfig;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Bias and attention tensors start at zero.
    pub is_weight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lin {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mlp {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerIdx {
    fv: Mlp,
    vf: Mlp,
    vv: Mlp,
    att_var: usize,
    att_fac: usize,
    upd_var: Lin,
    upd_fac: Lin,
}

#[derive(Debug, Clone, PartialEq)]
struct Index {
    enc_var: Lin,
    enc_fac: Lin,
    layers: Vec<LayerIdx>,
    head: Mlp,
}

struct LayoutBuilder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, is_weight: bool) -> usize {
        let offset = self.total;
        self.tensors.push(TensorInfo { name, rows, cols, offset, is_weight });
        self.total += rows * cols;
        offset
    }

    fn lin(&mut self, name: &str, rows: usize, cols: usize) -> Lin {
        let w = self.add(format!("{name}.weight"), rows, cols, true);
        let b = self.add(format!("{name}.bias"), 1, cols, false);
        Lin { w, b, rows, cols }
    }

    fn mlp(&mut self, name: &str, d_in: usize, hidden: usize, out: usize) -> Mlp {
        let l1 = self.lin(&format!("{name}.0"), d_in, hidden);
        let l2 = self.lin(&format!("{name}.1"), hidden, out);
        Mlp { w1: l1.w, b1: l1.b, w2: l2.w, b2: l2.b }
    }
}

fn layout(cfg: &GnnConfig) -> (Vec<TensorInfo>, Index) {
    let (d, s, u, h, q) = (
        cfg.input_width,
        cfg.embedding,
        cfg.message,
        cfg.message_hidden,
        cfg.head_hidden,
    );
    let mut b = LayoutBuilder { tensors: Vec::new(), total: 0 };
    let enc_var = b.lin("encoder.variable", d, s);
    let enc_fac = b.lin("encoder.factor", d, s);
    let layers = (0..cfg.layers)
        .map(|k| LayerIdx {
            fv: b.mlp(&format!("layer{k}.message_fv"), 2 * s, h, u),
            vf: b.mlp(&format!("layer{k}.message_vf"), 2 * s, h, u),
            vv: b.mlp(&format!("layer{k}.message_vv"), 2 * s, h, u),
            att_var: b.add(format!("layer{k}.attention_variable"), 1, 2 * s, false),
            att_fac: b.add(format!("layer{k}.attention_factor"), 1, 2 * s, false),
            upd_var: b.lin(&format!("layer{k}.update_variable"), u, s),
            upd_fac: b.lin(&format!("layer{k}.update_factor"), u, s),
        })
        .collect();
    let l1 = b.lin("head.0", s, q);
    let l2 = b.lin("head.1", q, 1);
    let head = Mlp { w1: l1.w, b1: l1.b, w2: l2.w, b2: l2.b };
    (b.tensors, Index { enc_var, enc_fac, layers, head })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub params: Vec<f64>,
    tensors: Vec<TensorInfo>,
    index: Index,
}

/// Weights uniform in `±sqrt(6 / fan_in)`, biases and attention vectors
/// zero, drawn in layout order from a seeded ChaCha8 stream.
pub fn init_model(cfg: &GnnConfig, seed: u64) -> Result<GnnModel> {
    let mut model = GnnModel::zeros(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &model.tensors {
        if !t.is_weight {
            continue;
        }
        let bound = (6.0 / t.rows as f64).sqrt();
        for p in &mut model.params[t.offset..t.offset + t.rows * t.cols] {
            *p = rng.gen_range(-bound..bound);
        }
    }
    Ok(model)
}

fn view(p: &[f64], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &p[off..off + rows * cols]).expect("layout")
}

fn view_mut(p: &mut [f64], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[off..off + rows * cols]).expect("layout")
}

fn vec_view(p: &[f64], off: usize, len: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + len])
}

fn vec_mut(p: &mut [f64], off: usize, len: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + len])
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn leaky(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        LEAKY_SLOPE * t
    }
}

/// `grad += aᵀ b`
fn acc_at_b(grad: &mut [f64], off: usize, a: &ArrayView2<f64>, b: &ArrayView2<f64>) {
    let mut g = view_mut(grad, off, a.ncols(), b.ncols());
    general_mat_mul(1.0, &a.t(), b, 1.0, &mut g);
}

fn acc_colsum(grad: &mut [f64], off: usize, a: &Array2<f64>) {
    let mut g = vec_mut(grad, off, a.ncols());
    g += &a.sum_axis(Axis(0));
}

/// Matrix product in row-major layout.
fn mm(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, a, b, 0.0, &mut c);
    c
}

/// Affine map `x W + b`.
fn affine(p: &[f64], l: &Lin, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = mm(x, &view(p, l.w, l.rows, l.cols));
    out += &vec_view(p, l.b, l.cols);
    out
}

struct Channel<'a> {
    h_src: &'a Array2<f64>,
    edges: &'a Edges,
    mlp: Mlp,
}

/// Intermediate values of one destination kind in one layer.
#[derive(Debug, Clone)]
struct DestCache {
    hid: Vec<Array2<f64>>,
    /// Attention pre-activations and weights over the combined edge index.
    t: Vec<f64>,
    alpha: Vec<f64>,
    agg: Vec<Array2<f64>>,
    weight_sum: Vec<Vec<f64>>,
    m: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
struct DestParams {
    att: usize,
    upd: Lin,
}

struct Dims {
    s: usize,
    h: usize,
    u: usize,
}

fn hidden_row(out: &mut [f64], src: &[f64], dst: &[f64], b1: &[f64]) {
    for (((o, a), b), c) in out.iter_mut().zip(src).zip(dst).zip(b1) {
        *o = (a + b + c).max(0.0);
    }
}

/// Attention-weighted messages and node update for one destination kind.
/// Per-edge hidden activations are kept only when `keep_hidden` is set
/// (needed by the backward pass).
#[allow(clippy::too_many_arguments)]
fn dest_forward(
    p: &[f64],
    dims: &Dims,
    h_dst: &Array2<f64>,
    channels: &[Channel],
    incoming: &Incoming,
    dp: DestParams,
    keep_hidden: bool,
) -> (DestCache, Array2<f64>) {
    let Dims { s, h, u } = *dims;
    let n_dst = h_dst.nrows();
    let a_src = vec_view(p, dp.att, s);
    let a_dst = vec_view(p, dp.att + s, s);
    let d = h_dst.dot(&a_dst);
    let total: usize = channels.iter().map(|c| c.edges.len()).sum();
    let mut t = vec![0.0; total];
    let mut hid = Vec::with_capacity(channels.len());
    // Per-channel source and destination halves of the first message layer.
    let mut halves = Vec::with_capacity(channels.len());
    let mut base = 0;
    for ch in channels {
        let w1 = view(p, ch.mlp.w1, 2 * s, h);
        let p_src = mm(&ch.h_src.view(), &w1.slice(s![..s, ..]));
        let p_dst = mm(&h_dst.view(), &w1.slice(s![s.., ..]));
        let b1 = &p[ch.mlp.b1..ch.mlp.b1 + h];
        let sv = ch.h_src.dot(&a_src);
        let e_count = ch.edges.len();
        for e in 0..e_count {
            t[base + e] = sv[ch.edges.src[e]] + d[ch.edges.dst[e]];
        }
        let mut hc = Array2::zeros((if keep_hidden { e_count } else { 0 }, h));
        if keep_hidden {
            let hs = hc.as_slice_mut().expect("contiguous");
            let ps = p_src.as_slice().expect("contiguous");
            let pd = p_dst.as_slice().expect("contiguous");
            for e in 0..e_count {
                let (i, j) = (ch.edges.src[e], ch.edges.dst[e]);
                hidden_row(&mut hs[e * h..(e + 1) * h], &ps[i * h..(i + 1) * h], &pd[j * h..(j + 1) * h], b1);
            }
        }
        hid.push(hc);
        halves.push((p_src, p_dst));
        base += e_count;
    }

    let mut alpha = vec![0.0; total];
    for v in 0..n_dst {
        let es = incoming.of(v);
        if es.is_empty() {
            continue;
        }
        let mx = es.iter().map(|&g| leaky(t[g])).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &g in es {
            let w = (leaky(t[g]) - mx).exp();
            alpha[g] = w;
            sum += w;
        }
        for &g in es {
            alpha[g] /= sum;
        }
    }

    let mut m = Array2::zeros((n_dst, u));
    let mut agg = Vec::with_capacity(channels.len());
    let mut weight_sum = Vec::with_capacity(channels.len());
    let mut base = 0;
    let mut scratch = vec![0.0; h];
    for ((ch, hc), (p_src, p_dst)) in channels.iter().zip(&hid).zip(&halves) {
        let mut a = Array2::<f64>::zeros((n_dst, h));
        let mut c = vec![0.0; n_dst];
        {
            let asl = a.as_slice_mut().expect("contiguous");
            let hs = hc.as_slice().expect("contiguous");
            let ps = p_src.as_slice().expect("contiguous");
            let pd = p_dst.as_slice().expect("contiguous");
            let b1 = &p[ch.mlp.b1..ch.mlp.b1 + h];
            for e in 0..ch.edges.len() {
                let (i, j) = (ch.edges.src[e], ch.edges.dst[e]);
                let w = alpha[base + e];
                c[j] += w;
                let x = if keep_hidden {
                    &hs[e * h..(e + 1) * h]
                } else {
                    hidden_row(&mut scratch, &ps[i * h..(i + 1) * h], &pd[j * h..(j + 1) * h], b1);
                    &scratch[..]
                };
                let row = &mut asl[j * h..(j + 1) * h];
                for (r, x) in row.iter_mut().zip(x) {
                    *r += w * x;
                }
            }
        }
        general_mat_mul(1.0, &a, &view(p, ch.mlp.w2, h, u), 1.0, &mut m);
        let b2 = vec_view(p, ch.mlp.b2, u);
        for (mut row, &cj) in m.rows_mut().into_iter().zip(&c) {
            row.scaled_add(cj, &b2);
        }
        base += ch.edges.len();
        agg.push(a);
        weight_sum.push(c);
    }

    let mut h_new = affine(p, &dp.upd, &m.view());
    relu_inplace(&mut h_new);
    for v in 0..n_dst {
        if incoming.of(v).is_empty() {
            h_new.row_mut(v).assign(&h_dst.row(v));
        }
    }
    (DestCache { hid, t, alpha, agg, weight_sum, m }, h_new)
}

/// Returns the gradient with respect to `h_dst` and to each channel's
/// source embeddings.
#[allow(clippy::too_many_arguments)]
fn dest_backward(
    p: &[f64],
    grad: &mut [f64],
    dims: &Dims,
    h_dst: &Array2<f64>,
    channels: &[Channel],
    incoming: &Incoming,
    dp: DestParams,
    cache: &DestCache,
    h_new: &Array2<f64>,
    dh_new: &Array2<f64>,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let Dims { s, h, u } = *dims;
    let n_dst = h_dst.nrows();
    let mut dh_dst = Array2::<f64>::zeros((n_dst, s));
    let mut dz = dh_new.clone();
    for v in 0..n_dst {
        if incoming.of(v).is_empty() {
            dh_dst.row_mut(v).assign(&dh_new.row(v));
            dz.row_mut(v).fill(0.0);
        }
    }
    ndarray::Zip::from(&mut dz).and(h_new).for_each(|g, &y| {
        if y <= 0.0 {
            *g = 0.0;
        }
    });
    acc_at_b(grad, dp.upd.w, &cache.m.view(), &dz.view());
    acc_colsum(grad, dp.upd.b, &dz);
    let dm = mm(&dz.view(), &view(p, dp.upd.w, u, s).t());

    let total = cache.t.len();
    let mut dalpha = vec![0.0; total];
    let mut dhid = Vec::with_capacity(channels.len());
    let mut base = 0;
    for (c, ch) in channels.iter().enumerate() {
        let w2 = view(p, ch.mlp.w2, h, u);
        acc_at_b(grad, ch.mlp.w2, &cache.agg[c].view(), &dm.view());
        {
            let mut gb2 = vec_mut(grad, ch.mlp.b2, u);
            for (row, &cj) in dm.rows().into_iter().zip(&cache.weight_sum[c]) {
                gb2.scaled_add(cj, &row);
            }
        }
        let dagg = mm(&dm.view(), &w2.t());
        let dcount = dm.dot(&vec_view(p, ch.mlp.b2, u));
        let mut dh = Array2::<f64>::zeros((ch.edges.len(), h));
        {
            let hs = cache.hid[c].as_slice().expect("contiguous");
            let da = dagg.as_slice().expect("contiguous");
            let dhs = dh.as_slice_mut().expect("contiguous");
            for e in 0..ch.edges.len() {
                let j = ch.edges.dst[e];
                let w = cache.alpha[base + e];
                let (hr, ar) = (&hs[e * h..(e + 1) * h], &da[j * h..(j + 1) * h]);
                let mut dot = 0.0;
                for k in 0..h {
                    dot += hr[k] * ar[k];
                    // relu mask of the hidden layer folded in here
                    dhs[e * h + k] = if hr[k] > 0.0 { w * ar[k] } else { 0.0 };
                }
                dalpha[base + e] = dot + dcount[j];
            }
        }
        dhid.push(dh);
        base += ch.edges.len();
    }

    let mut dt = vec![0.0; total];
    for v in 0..n_dst {
        let es = incoming.of(v);
        let inner: f64 = es.iter().map(|&g| cache.alpha[g] * dalpha[g]).sum();
        for &g in es {
            let dl = cache.alpha[g] * (dalpha[g] - inner);
            dt[g] = if cache.t[g] > 0.0 { dl } else { LEAKY_SLOPE * dl };
        }
    }

    let a_src = vec_view(p, dp.att, s).to_owned();
    let a_dst = vec_view(p, dp.att + s, s).to_owned();
    let mut dd = Array1::<f64>::zeros(n_dst);
    let mut dh_src = Vec::with_capacity(channels.len());
    let mut base = 0;
    for (c, ch) in channels.iter().enumerate() {
        let n_src = ch.h_src.nrows();
        let mut ds = Array1::<f64>::zeros(n_src);
        for e in 0..ch.edges.len() {
            let g = dt[base + e];
            ds[ch.edges.src[e]] += g;
            dd[ch.edges.dst[e]] += g;
        }
        {
            let mut ga = vec_mut(grad, dp.att, s);
            ga += &ch.h_src.t().dot(&ds);
        }
        let mut dsrc = Array2::<f64>::zeros((n_src, s));
        for (mut row, &g) in dsrc.rows_mut().into_iter().zip(&ds) {
            if g != 0.0 {
                row.scaled_add(g, &a_src);
            }
        }

        let dpre = &dhid[c];
        acc_colsum(grad, ch.mlp.b1, dpre);
        let mut dp_src = Array2::<f64>::zeros((n_src, h));
        let mut dp_dst = Array2::<f64>::zeros((n_dst, h));
        {
            let ds_ = dp_src.as_slice_mut().expect("contiguous");
            let dd_ = dp_dst.as_slice_mut().expect("contiguous");
            let dps = dpre.as_slice().expect("contiguous");
            for e in 0..ch.edges.len() {
                let (i, j) = (ch.edges.src[e], ch.edges.dst[e]);
                let row = &dps[e * h..(e + 1) * h];
                for k in 0..h {
                    ds_[i * h + k] += row[k];
                    dd_[j * h + k] += row[k];
                }
            }
        }
        acc_at_b(grad, ch.mlp.w1, &ch.h_src.view(), &dp_src.view());
        acc_at_b(grad, ch.mlp.w1 + s * h, &h_dst.view(), &dp_dst.view());
        let w1 = view(p, ch.mlp.w1, 2 * s, h);
        general_mat_mul(1.0, &dp_src, &w1.slice(s![..s, ..]).t(), 1.0, &mut dsrc);
        general_mat_mul(1.0, &dp_dst, &w1.slice(s![s.., ..]).t(), 1.0, &mut dh_dst);
        dh_src.push(dsrc);
        base += ch.edges.len();
    }
    {
        let mut ga = vec_mut(grad, dp.att + s, s);
        ga += &h_dst.t().dot(&dd);
    }
    for (mut row, &g) in dh_dst.rows_mut().into_iter().zip(&dd) {
        if g != 0.0 {
            row.scaled_add(g, &a_dst);
        }
    }
    (dh_dst, dh_src)
}

#[derive(Debug, Clone)]
struct LayerCache {
    var: DestCache,
    fac: Option<DestCache>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    hv: Vec<Array2<f64>>,
    hf: Vec<Array2<f64>>,
    layers: Vec<LayerCache>,
    head_hidden: Array2<f64>,
    pub predictions: Vec<f64>,
}

impl ForwardCache {
    /// Attention weights of layer `k` over the variable destinations'
    /// combined incoming edges (factor→variable first, then
    /// variable→variable).
    pub fn variable_attention(&self, k: usize) -> &[f64] {
        &self.layers[k].var.alpha
    }

    /// Variable embeddings after layer `k` (`k = 0` is the encoder output).
    pub fn variable_embeddings(&self, k: usize) -> &Array2<f64> {
        &self.hv[k]
    }
}

impl GnnModel {
    /// Model with every parameter zero.
    pub fn zeros(cfg: &GnnConfig) -> Result<Self> {
        cfg.validate()?;
        let (tensors, index) = layout(cfg);
        let total = tensors.last().map(|t| t.offset + t.rows * t.cols).unwrap_or(0);
        debug_assert_eq!(total, cfg.parameter_count());
        Ok(GnnModel { config: cfg.clone(), params: vec![0.0; total], tensors, index })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Tensors in storage order.
    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn dims(&self) -> Dims {
        Dims {
            s: self.config.embedding,
            h: self.config.message_hidden,
            u: self.config.message,
        }
    }

    fn check(&self, batch: &GraphBatch) -> Result<()> {
        if batch.x_var.ncols() != self.config.input_width {
            return Err(Error::Config(format!(
                "feature width {} does not match model input width {}",
                batch.x_var.ncols(),
                self.config.input_width
            )));
        }
        Ok(())
    }

    fn var_channels<'a>(&self, k: usize, b: &'a GraphBatch, hv: &'a Array2<f64>, hf: &'a Array2<f64>) -> [Channel<'a>; 2] {
        let l = &self.index.layers[k];
        [
            Channel { h_src: hf, edges: &b.fv, mlp: l.fv },
            Channel { h_src: hv, edges: &b.vv, mlp: l.vv },
        ]
    }

    fn fac_channels<'a>(&self, k: usize, b: &'a GraphBatch, hv: &'a Array2<f64>) -> [Channel<'a>; 1] {
        [Channel { h_src: hv, edges: &b.vf, mlp: self.index.layers[k].vf }]
    }

    fn var_params(&self, k: usize) -> DestParams {
        let l = &self.index.layers[k];
        DestParams { att: l.att_var, upd: l.upd_var }
    }

    fn fac_params(&self, k: usize) -> DestParams {
        let l = &self.index.layers[k];
        DestParams { att: l.att_fac, upd: l.upd_fac }
    }

    pub fn forward_cached(&self, batch: &GraphBatch) -> Result<ForwardCache> {
        self.run(batch, true)
    }

    fn run(&self, batch: &GraphBatch, keep_hidden: bool) -> Result<ForwardCache> {
        self.check(batch)?;
        let p = &self.params;
        let dims = self.dims();
        let mut hv0 = affine(p, &self.index.enc_var, &batch.x_var.view());
        relu_inplace(&mut hv0);
        let mut hf0 = affine(p, &self.index.enc_fac, &batch.x_fac.view());
        relu_inplace(&mut hf0);
        let mut hv = vec![hv0];
        let mut hf = vec![hf0];
        let mut layers = Vec::with_capacity(self.config.layers);
        let last = self.config.layers - 1;
        for k in 0..self.config.layers {
            let (var, hv_next) = dest_forward(
                p,
                &dims,
                &hv[k],
                &self.var_channels(k, batch, &hv[k], &hf[k]),
                &batch.var_in,
                self.var_params(k),
                keep_hidden,
            );
            let fac = if k < last {
                let (fac, hf_next) = dest_forward(
                    p,
                    &dims,
                    &hf[k],
                    &self.fac_channels(k, batch, &hv[k]),
                    &batch.fac_in,
                    self.fac_params(k),
                    keep_hidden,
                );
                hf.push(hf_next);
                Some(fac)
            } else {
                None
            };
            hv.push(hv_next);
            if keep_hidden {
                layers.push(LayerCache { var, fac });
            } else {
                // inference only needs the newest embeddings
                hv[k] = Array2::zeros((0, 0));
                if k < last {
                    hf[k] = Array2::zeros((0, 0));
                }
            }
        }
        let head = self.index.head;
        let q = self.config.head_hidden;
        let s = self.config.embedding;
        let l1 = Lin { w: head.w1, b: head.b1, rows: s, cols: q };
        let l2 = Lin { w: head.w2, b: head.b2, rows: q, cols: 1 };
        let mut head_hidden = affine(p, &l1, &hv[self.config.layers].view());
        relu_inplace(&mut head_hidden);
        let out = affine(p, &l2, &head_hidden.view());
        let predictions = out.into_raw_vec_and_offset().0;
        Ok(ForwardCache { hv, hf, layers, head_hidden, predictions })
    }

    /// One scalar per variable node of the batch, in node order.
    pub fn forward(&self, batch: &GraphBatch) -> Result<Vec<f64>> {
        Ok(self.run(batch, false)?.predictions)
    }

    /// Gradient of the mean squared error over all variable nodes.
    pub fn backward(&self, batch: &GraphBatch, cache: &ForwardCache, labels: &[f64]) -> Result<Vec<f64>> {
        let n = cache.predictions.len();
        if labels.len() != n {
            return Err(Error::Training(format!("{} labels for {n} predictions", labels.len())));
        }
        let p = &self.params;
        let dims = self.dims();
        let (s, q) = (self.config.embedding, self.config.head_hidden);
        let mut grad = vec![0.0; p.len()];
        if n == 0 {
            return Ok(grad);
        }
        let scale = 2.0 / n as f64;
        let dpred = Array2::from_shape_fn((n, 1), |(i, _)| scale * (cache.predictions[i] - labels[i]));
        let head = self.index.head;
        acc_at_b(&mut grad, head.w2, &cache.head_hidden.view(), &dpred.view());
        acc_colsum(&mut grad, head.b2, &dpred);
        let mut dq = mm(&dpred.view(), &view(p, head.w2, q, 1).t());
        ndarray::Zip::from(&mut dq).and(&cache.head_hidden).for_each(|g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        let k_last = self.config.layers;
        acc_at_b(&mut grad, head.w1, &cache.hv[k_last].view(), &dq.view());
        acc_colsum(&mut grad, head.b1, &dq);
        let mut dhv = mm(&dq.view(), &view(p, head.w1, s, q).t());
        let mut dhf = Array2::<f64>::zeros((batch.n_fac(), s));

        for k in (0..self.config.layers).rev() {
            let lc = &cache.layers[k];
            let (dv_dst, dv_src) = dest_backward(
                p,
                &mut grad,
                &dims,
                &cache.hv[k],
                &self.var_channels(k, batch, &cache.hv[k], &cache.hf[k]),
                &batch.var_in,
                self.var_params(k),
                &lc.var,
                &cache.hv[k + 1],
                &dhv,
            );
            let mut new_dhv = dv_dst;
            new_dhv += &dv_src[1];
            let mut new_dhf = dv_src[0].clone();
            if let Some(fc) = &lc.fac {
                let (df_dst, df_src) = dest_backward(
                    p,
                    &mut grad,
                    &dims,
                    &cache.hf[k],
                    &self.fac_channels(k, batch, &cache.hv[k]),
                    &batch.fac_in,
                    self.fac_params(k),
                    fc,
                    &cache.hf[k + 1],
                    &dhf,
                );
                new_dhf += &df_dst;
                new_dhv += &df_src[0];
            }
            dhv = new_dhv;
            dhf = new_dhf;
        }

        for (enc, x, h0, dh) in [
            (self.index.enc_var, &batch.x_var, &cache.hv[0], &mut dhv),
            (self.index.enc_fac, &batch.x_fac, &cache.hf[0], &mut dhf),
        ] {
            ndarray::Zip::from(&mut *dh).and(h0).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
            acc_at_b(&mut grad, enc.w, &x.view(), &dh.view());
            acc_colsum(&mut grad, enc.b, dh);
        }
        Ok(grad)
    }

    /// Loss and gradient for one batch.
    pub fn loss_and_grad(&self, batch: &GraphBatch, labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(batch)?;
        let loss = super::mse_loss(&cache.predictions, labels)?;
        let grad = self.backward(batch, &cache, labels)?;
        Ok((loss, grad))
    }
}
