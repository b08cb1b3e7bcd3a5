//! Multi-head graph attention layer with head averaging.
//!
//! For head `k` and node `u` with neighborhood `N(u) ∪ {u}`:
//!
//! ```text
//! z_v      = W_k^T x_v
//! e_uv     = LeakyReLU(a_k[..d] · z_u + a_k[d..] · z_v)
//! alpha_u· = softmax(e_u·)
//! h_u^k    = tanh(sum_v alpha_uv z_v)
//! y_u      = mean_k h_u^k
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archgraph::FlatGraph;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Per head, `in_dim x out_dim` row-major.
    pub w: Vec<Vec<f64>>,
    /// Per head, `2 * out_dim`: first half scores the attending node, second
    /// half the attended neighbor.
    pub a: Vec<Vec<f64>>,
}

impl GatLayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize, heads: usize) -> Self {
        GatLayerParams {
            in_dim,
            out_dim,
            w: vec![vec![0.0; in_dim * out_dim]; heads],
            a: vec![vec![0.0; 2 * out_dim]; heads],
        }
    }

    /// Glorot-uniform for `W` and for `a` viewed as a `2d x 1` matrix.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, heads: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(in_dim, out_dim, heads);
        let lw = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let la = (6.0 / (2 * out_dim + 1) as f64).sqrt();
        for k in 0..heads {
            for v in &mut p.w[k] {
                *v = rng.gen_range(-lw..lw);
            }
            for v in &mut p.a[k] {
                *v = rng.gen_range(-la..la);
            }
        }
        p
    }

    pub fn heads(&self) -> usize {
        self.w.len()
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.w.is_empty() || self.w.len() != self.a.len() {
            return Err(Error::Shape("layer needs matching W and a per head".into()));
        }
        for (w, a) in self.w.iter().zip(&self.a) {
            if w.len() != self.in_dim * self.out_dim || a.len() != 2 * self.out_dim {
                return Err(Error::Shape(format!(
                    "head tensor sizes {}/{} do not match dims {}x{}",
                    w.len(),
                    a.len(),
                    self.in_dim,
                    self.out_dim
                )));
            }
        }
        Ok(())
    }
}

/// Attention neighborhoods in compressed rows: node `u` attends to
/// `idx[off[u]..off[u + 1]]`, itself first, then its neighbors ascending.
pub(crate) struct Neighborhoods {
    pub(crate) off: Vec<usize>,
    pub(crate) idx: Vec<usize>,
}

impl Neighborhoods {
    pub(crate) fn new(g: &FlatGraph) -> Self {
        let n = g.n_vertices();
        let mut off = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        off.push(0);
        for u in 0..n {
            idx.push(u);
            idx.extend(g.neighbors(u));
            off.push(idx.len());
        }
        Neighborhoods { off, idx }
    }

    pub(crate) fn n(&self) -> usize {
        self.off.len() - 1
    }

    fn row(&self, u: usize) -> std::ops::Range<usize> {
        self.off[u]..self.off[u + 1]
    }
}

pub(crate) struct HeadCache {
    z: Vec<f64>,
    /// Attention logits before the LeakyReLU, aligned with `Neighborhoods::idx`.
    pre: Vec<f64>,
    pub(crate) alpha: Vec<f64>,
    out: Vec<f64>,
}

pub(crate) struct LayerCache {
    pub(crate) heads: Vec<HeadCache>,
}

/// `tanh` through one `expm1`, several times cheaper than the libm call and
/// within a few ulp of it.
#[inline]
pub(crate) fn fast_tanh(x: f64) -> f64 {
    if x.abs() > 19.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp_m1();
    e / (e + 2.0)
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Forward pass on row-major `n x in_dim` input; returns `n x out_dim`.
pub(crate) fn forward(h: &[f64], nb: &Neighborhoods, p: &GatLayerParams) -> (Vec<f64>, LayerCache) {
    let n = nb.n();
    let (din, dout) = (p.in_dim, p.out_dim);
    let inv_k = 1.0 / p.heads() as f64;
    let mut y = vec![0.0; n * dout];
    let mut heads = Vec::with_capacity(p.heads());
    let mut s_src = vec![0.0; n];
    let mut s_dst = vec![0.0; n];
    for (w, a) in p.w.iter().zip(&p.a) {
        let mut z = vec![0.0; n * dout];
        for u in 0..n {
            let zu = &mut z[u * dout..(u + 1) * dout];
            for i in 0..din {
                let x = h[u * din + i];
                if x == 0.0 {
                    continue;
                }
                for (zo, wo) in zu.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                    *zo += x * wo;
                }
            }
        }
        let (a_src, a_dst) = a.split_at(dout);
        for u in 0..n {
            let zu = &z[u * dout..(u + 1) * dout];
            s_src[u] = a_src.iter().zip(zu).map(|(x, y)| x * y).sum();
            s_dst[u] = a_dst.iter().zip(zu).map(|(x, y)| x * y).sum();
        }
        let mut pre = vec![0.0; nb.idx.len()];
        let mut alpha = vec![0.0; nb.idx.len()];
        let mut out = vec![0.0; n * dout];
        for u in 0..n {
            let r = nb.row(u);
            let mut m = f64::NEG_INFINITY;
            for e in r.clone() {
                pre[e] = s_src[u] + s_dst[nb.idx[e]];
                alpha[e] = leaky(pre[e]);
                m = m.max(alpha[e]);
            }
            let mut total = 0.0;
            for e in r.clone() {
                alpha[e] = (alpha[e] - m).exp();
                total += alpha[e];
            }
            let ou = &mut out[u * dout..(u + 1) * dout];
            for e in r {
                alpha[e] /= total;
                let v = nb.idx[e];
                for (o, zv) in ou.iter_mut().zip(&z[v * dout..(v + 1) * dout]) {
                    *o += alpha[e] * zv;
                }
            }
            for (o, yo) in ou.iter_mut().zip(&mut y[u * dout..(u + 1) * dout]) {
                *o = fast_tanh(*o);
                *yo += inv_k * *o;
            }
        }
        heads.push(HeadCache { z, pre, alpha, out });
    }
    (y, LayerCache { heads })
}

/// Backward pass for input `h`. Accumulates parameter gradients into
/// `grad` and returns the gradient with respect to `h`.
pub(crate) fn backward(
    dy: &[f64],
    h: &[f64],
    nb: &Neighborhoods,
    p: &GatLayerParams,
    cache: &LayerCache,
    grad: &mut GatLayerParams,
) -> Vec<f64> {
    let n = nb.n();
    let (din, dout) = (p.in_dim, p.out_dim);
    let inv_k = 1.0 / p.heads() as f64;
    let mut dh = vec![0.0; n * din];
    let mut dm = vec![0.0; n * dout];
    let mut dz = vec![0.0; n * dout];
    let mut ds_src = vec![0.0; n];
    let mut ds_dst = vec![0.0; n];
    let mut dal = vec![0.0; nb.idx.len()];
    for (k, hc) in cache.heads.iter().enumerate() {
        let (a_src, a_dst) = p.a[k].split_at(dout);
        for i in 0..n * dout {
            dm[i] = dy[i] * inv_k * (1.0 - hc.out[i] * hc.out[i]);
        }
        dz.iter_mut().for_each(|v| *v = 0.0);
        ds_src.iter_mut().for_each(|v| *v = 0.0);
        ds_dst.iter_mut().for_each(|v| *v = 0.0);
        for u in 0..n {
            let dmu = &dm[u * dout..(u + 1) * dout];
            let r = nb.row(u);
            let mut s = 0.0;
            for e in r.clone() {
                let v = nb.idx[e];
                let av = hc.alpha[e];
                let mut d = 0.0;
                for o in 0..dout {
                    dz[v * dout + o] += av * dmu[o];
                    d += dmu[o] * hc.z[v * dout + o];
                }
                dal[e] = d;
                s += av * d;
            }
            for e in r {
                let de = hc.alpha[e] * (dal[e] - s) * leaky_grad(hc.pre[e]);
                ds_src[u] += de;
                ds_dst[nb.idx[e]] += de;
            }
        }
        let ga = &mut grad.a[k];
        for u in 0..n {
            let zu = &hc.z[u * dout..(u + 1) * dout];
            let dzu = &mut dz[u * dout..(u + 1) * dout];
            for o in 0..dout {
                ga[o] += ds_src[u] * zu[o];
                ga[dout + o] += ds_dst[u] * zu[o];
                dzu[o] += ds_src[u] * a_src[o] + ds_dst[u] * a_dst[o];
            }
        }
        let w = &p.w[k];
        let gw = &mut grad.w[k];
        for u in 0..n {
            let dzu = &dz[u * dout..(u + 1) * dout];
            for i in 0..din {
                let x = h[u * din + i];
                let wr = &w[i * dout..(i + 1) * dout];
                let gr = &mut gw[i * dout..(i + 1) * dout];
                let mut acc = 0.0;
                for o in 0..dout {
                    gr[o] += x * dzu[o];
                    acc += dzu[o] * wr[o];
                }
                dh[u * din + i] += acc;
            }
        }
    }
    dh
}

/// Applies one layer to a graph. `h` is `n_v x in_dim`, row-major.
pub fn gat_layer_forward(h: &[f64], graph: &FlatGraph, params: &GatLayerParams) -> Result<Vec<f64>> {
    Ok(gat_layer_forward_with_attention(h, graph, params)?.0)
}

/// Like [`gat_layer_forward`], also returning `alpha[head][u]`, the
/// attention weights of node `u` over its neighborhood (self first, then
/// neighbors ascending).
#[allow(clippy::type_complexity)]
pub fn gat_layer_forward_with_attention(
    h: &[f64],
    graph: &FlatGraph,
    params: &GatLayerParams,
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    params.check_shapes()?;
    let n = graph.n_vertices();
    if h.len() != n * params.in_dim {
        return Err(Error::Shape(format!(
            "input has {} values, expected {} x {}",
            h.len(),
            n,
            params.in_dim
        )));
    }
    if !graph.is_symmetric() || graph.trace() != 0 {
        return Err(Error::Shape("adjacency must be symmetric with zero diagonal".into()));
    }
    let nb = Neighborhoods::new(graph);
    let (y, cache) = forward(h, &nb, params);
    let alpha = cache
        .heads
        .into_iter()
        .map(|hc| (0..n).map(|u| hc.alpha[nb.row(u)].to_vec()).collect())
        .collect();
    Ok((y, alpha))
}
