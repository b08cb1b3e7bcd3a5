//! Graph attention regressor: three GAT layers, a mean/max/sum readout and
//! a linear head predicting standardized endurance.

mod checkpoint;
mod layer;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layer::{gat_layer_forward, gat_layer_forward_with_attention, GatLayerParams, LEAKY_SLOPE};
pub use train::{
    loss_and_gradients, split_by_scenario, train, train_model, HistoryRow, TrainConfig, TrainHistory, TrainOutput,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archgraph::{FeatureGraph, FEATURE_DIM};
use crate::error::{Error, Result};

pub const HIDDEN_DIM: usize = 16;
pub const N_LAYERS: usize = 3;
pub const N_HEADS: usize = 4;
/// mean, max and sum pooling concatenated.
pub const READOUT_DIM: usize = 3 * HIDDEN_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatModel {
    pub layers: Vec<GatLayerParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    /// Targets are standardized as `(J - mean) / std` during training.
    pub target_mean: f64,
    pub target_std: f64,
}

/// Parameter gradients, shaped like a [`GatModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<GatLayerParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl GatModel {
    pub fn zeros() -> Self {
        let mut layers = Vec::with_capacity(N_LAYERS);
        let mut din = FEATURE_DIM;
        for _ in 0..N_LAYERS {
            layers.push(GatLayerParams::zeros(din, HIDDEN_DIM, N_HEADS));
            din = HIDDEN_DIM;
        }
        GatModel {
            layers,
            head_w: vec![0.0; READOUT_DIM],
            head_b: 0.0,
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn glorot<R: Rng>(rng: &mut R) -> Self {
        let mut m = Self::zeros();
        let mut din = FEATURE_DIM;
        for l in &mut m.layers {
            *l = GatLayerParams::glorot(din, HIDDEN_DIM, N_HEADS, rng);
            din = HIDDEN_DIM;
        }
        let lim = (6.0 / (READOUT_DIM + 1) as f64).sqrt();
        for v in &mut m.head_w {
            *v = rng.gen_range(-lim..lim);
        }
        m
    }

    /// Flat views of every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            for (w, a) in l.w.iter().zip(&l.a) {
                out.push(w);
                out.push(a);
            }
        }
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            for (w, a) in l.w.iter_mut().zip(l.a.iter_mut()) {
                out.push(w);
                out.push(a);
            }
        }
        out.push(&mut self.head_w);
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks tensor shapes against the fixed architecture and that every
    /// value is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != N_LAYERS {
            return Err(Error::ModelCorrupt(format!("expected {N_LAYERS} layers, found {}", self.layers.len())));
        }
        let mut din = FEATURE_DIM;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim != din || l.out_dim != HIDDEN_DIM || l.heads() != N_HEADS {
                return Err(Error::ModelCorrupt(format!(
                    "layer {i} is {}x{} with {} heads",
                    l.in_dim,
                    l.out_dim,
                    l.heads()
                )));
            }
            l.check_shapes().map_err(|e| Error::ModelCorrupt(format!("layer {i}: {e}")))?;
            din = HIDDEN_DIM;
        }
        if self.head_w.len() != READOUT_DIM {
            return Err(Error::ModelCorrupt(format!("head has {} weights", self.head_w.len())));
        }
        if !self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::ModelCorrupt("non-finite parameter".into()));
        }
        if !(self.target_std > 0.0) || !self.target_std.is_finite() || !self.target_mean.is_finite() {
            return Err(Error::ModelCorrupt("bad target scaling".into()));
        }
        Ok(())
    }
}

impl Gradients {
    pub fn zeros_like(m: &GatModel) -> Self {
        Gradients {
            layers: m
                .layers
                .iter()
                .map(|l| GatLayerParams::zeros(l.in_dim, l.out_dim, l.heads()))
                .collect(),
            head_w: vec![0.0; m.head_w.len()],
            head_b: 0.0,
        }
    }

    /// Same order as [`GatModel::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            for (w, a) in l.w.iter().zip(&l.a) {
                out.push(w);
                out.push(a);
            }
        }
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    pub(crate) fn add_assign(&mut self, other: &Gradients) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in l.w.iter_mut().flatten().zip(o.w.iter().flatten()) {
                *x += y;
            }
            for (x, y) in l.a.iter_mut().flatten().zip(o.a.iter().flatten()) {
                *x += y;
            }
        }
        for (x, y) in self.head_w.iter_mut().zip(&other.head_w) {
            *x += y;
        }
        self.head_b += other.head_b;
    }
}

fn check_graph(g: &FeatureGraph) -> Result<()> {
    let n = g.flat.n_vertices();
    if n == 0 || g.features.len() != n {
        return Err(Error::Shape(format!("{} feature rows for {} vertices", g.features.len(), n)));
    }
    Ok(())
}

fn input_matrix(g: &FeatureGraph) -> Vec<f64> {
    g.features.iter().flat_map(|r| r.iter().copied()).collect()
}

/// Column-wise mean, max and sum of an `n x d` matrix. Max ties go to the
/// lowest row.
pub(crate) fn pool(h: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<usize>) {
    let mut r = vec![0.0; 3 * d];
    let mut arg = vec![0; d];
    for c in 0..d {
        let mut sum = 0.0;
        let mut best = f64::NEG_INFINITY;
        for u in 0..n {
            let v = h[u * d + c];
            sum += v;
            if v > best {
                best = v;
                arg[c] = u;
            }
        }
        r[c] = sum / n as f64;
        r[d + c] = best;
        r[2 * d + c] = sum;
    }
    (r, arg)
}

/// `[column-mean | column-max | column-sum]` of an `n_v x 16` matrix.
pub fn readout(h: &[f64], n_v: usize) -> Result<Vec<f64>> {
    if n_v == 0 || h.len() != n_v * HIDDEN_DIM {
        return Err(Error::Shape(format!("readout needs a non-empty n x {HIDDEN_DIM} matrix, got {} values", h.len())));
    }
    Ok(pool(h, n_v, HIDDEN_DIM).0)
}

/// A graph in the form the forward pass consumes.
pub(crate) struct PreparedGraph {
    x: Vec<f64>,
    nb: layer::Neighborhoods,
}

impl PreparedGraph {
    pub(crate) fn new(g: &FeatureGraph) -> Self {
        PreparedGraph {
            x: input_matrix(g),
            nb: layer::Neighborhoods::new(&g.flat),
        }
    }
}

pub(crate) struct ForwardPass<'a> {
    g: &'a PreparedGraph,
    /// Outputs of every layer but the last.
    hidden: Vec<Vec<f64>>,
    caches: Vec<layer::LayerCache>,
    argmax: Vec<usize>,
    pub(crate) readout: Vec<f64>,
    /// Prediction in standardized units.
    pub(crate) y: f64,
}

pub(crate) fn forward_pass<'a>(m: &GatModel, g: &'a PreparedGraph) -> ForwardPass<'a> {
    let n = g.nb.n();
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(m.layers.len());
    let mut caches = Vec::with_capacity(m.layers.len());
    for l in &m.layers {
        let h = hidden.last().unwrap_or(&g.x);
        let (y, c) = layer::forward(h, &g.nb, l);
        caches.push(c);
        hidden.push(y);
    }
    let last = hidden.pop().expect("at least one layer");
    let (readout, argmax) = pool(&last, n, HIDDEN_DIM);
    let y = m.head_b + m.head_w.iter().zip(&readout).map(|(w, r)| w * r).sum::<f64>();
    ForwardPass {
        g,
        hidden,
        caches,
        argmax,
        readout,
        y,
    }
}

/// Backpropagates `dy` (gradient w.r.t. the standardized prediction) and
/// accumulates into `grad`.
pub(crate) fn backward_pass(m: &GatModel, fp: &ForwardPass, dy: f64, grad: &mut Gradients) {
    let d = HIDDEN_DIM;
    grad.head_b += dy;
    for (g, r) in grad.head_w.iter_mut().zip(&fp.readout) {
        *g += dy * r;
    }
    let n = fp.g.nb.n();
    let mut dh = vec![0.0; n * d];
    for c in 0..d {
        let d_mean = dy * m.head_w[c] / n as f64;
        let d_sum = dy * m.head_w[2 * d + c];
        for u in 0..n {
            dh[u * d + c] += d_mean + d_sum;
        }
        dh[fp.argmax[c] * d + c] += dy * m.head_w[d + c];
    }
    for i in (0..m.layers.len()).rev() {
        let h = if i == 0 { &fp.g.x } else { &fp.hidden[i - 1] };
        dh = layer::backward(&dh, h, &fp.g.nb, &m.layers[i], &fp.caches[i], &mut grad.layers[i]);
    }
}

/// Predicted endurance in seconds.
pub fn predict(model: &GatModel, graph: &FeatureGraph) -> Result<f64> {
    model.validate()?;
    check_graph(graph)?;
    Ok(predict_unchecked(model, graph))
}

pub(crate) fn predict_unchecked(model: &GatModel, graph: &FeatureGraph) -> f64 {
    forward_pass(model, &PreparedGraph::new(graph)).y * model.target_std + model.target_mean
}

pub fn predict_many(model: &GatModel, graphs: &[FeatureGraph]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    model.validate()?;
    graphs.iter().try_for_each(check_graph)?;
    Ok(graphs.par_iter().map(|g| predict_unchecked(model, g)).collect())
}

/// Graph-level embedding: the pooled readout fed to the regression head.
pub fn export_embeddings(model: &GatModel, graphs: &[FeatureGraph]) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    graphs.iter().try_for_each(check_graph)?;
    Ok(graphs
        .iter()
        .map(|g| forward_pass(model, &PreparedGraph::new(g)).readout)
        .collect())
}
