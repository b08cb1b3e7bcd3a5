use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{backward_pass, check_graph, forward_pass, GatModel, Gradients, PreparedGraph};
use crate::archgraph::FeatureGraph;
use crate::error::{Error, Result};
use crate::oloc::LabeledInstance;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
pub const HISTORY_BUCKET: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of scenario ids used for training.
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            batch_size: 100,
            learning_rate: 1e-3,
            seed: 0,
            train_fraction: 0.30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean losses over one bucket of epochs, in standardized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Last epoch of the bucket (1-based).
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,test_mse\n");
        for r in &self.rows {
            let t = r.test_mse.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, t));
        }
        s
    }

    pub fn min_test_mse(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.test_mse).reduce(f64::min)
    }

    pub fn final_test_mse(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.test_mse)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: GatModel,
    pub history: TrainHistory,
    pub train_scenarios: Vec<u64>,
    pub test_scenarios: Vec<u64>,
}

/// Mean squared error in standardized units over a batch, with its gradient.
/// `targets` are raw endurance values, scaled with the model's target
/// mean and std.
pub fn loss_and_gradients(model: &GatModel, graphs: &[&FeatureGraph], targets: &[f64]) -> Result<(f64, Gradients)> {
    if graphs.len() != targets.len() || graphs.is_empty() {
        return Err(Error::Shape(format!("{} graphs for {} targets", graphs.len(), targets.len())));
    }
    model.validate()?;
    graphs.iter().try_for_each(|g| check_graph(g))?;
    let z: Vec<f64> = targets.iter().map(|t| (t - model.target_mean) / model.target_std).collect();
    let prepared: Vec<PreparedGraph> = graphs.iter().map(|g| PreparedGraph::new(g)).collect();
    let refs: Vec<&PreparedGraph> = prepared.iter().collect();
    Ok(batch_grad(model, &refs, &z))
}

/// Instances per parallel work unit. Partial gradients are summed within a
/// chunk and then across chunks in chunk order, so the result does not
/// depend on the thread count.
const GRAD_CHUNK: usize = 16;

fn batch_grad(model: &GatModel, graphs: &[&PreparedGraph], z: &[f64]) -> (f64, Gradients) {
    let scale = 1.0 / graphs.len() as f64;
    let parts: Vec<(f64, Gradients)> = graphs
        .par_chunks(GRAD_CHUNK)
        .zip(z.par_chunks(GRAD_CHUNK))
        .map(|(gs, ts)| {
            let mut grad = Gradients::zeros_like(model);
            let mut loss = 0.0;
            for (g, &t) in gs.iter().zip(ts) {
                let fp = forward_pass(model, g);
                let r = fp.y - t;
                backward_pass(model, &fp, 2.0 * r * scale, &mut grad);
                loss += r * r;
            }
            (loss, grad)
        })
        .collect();
    let mut parts = parts.into_iter();
    let (mut loss, mut total) = parts.next().expect("non-empty batch");
    for (l, g) in parts {
        loss += l;
        total.add_assign(&g);
    }
    (loss * scale, total)
}

fn mse(model: &GatModel, graphs: &[PreparedGraph], z: &[f64]) -> f64 {
    let sq: Vec<f64> = graphs
        .par_iter()
        .zip(z.par_iter())
        .map(|(g, &t)| (forward_pass(model, g).y - t).powi(2))
        .collect();
    sq.iter().sum::<f64>() / sq.len() as f64
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(model: &GatModel, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut GatModel, grad: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let gs = grad.tensors();
        for (k, p) in model.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], gs[k]);
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Splits distinct scenario ids into sorted (train, test) lists.
pub fn split_by_scenario(ids: &[u64], train_fraction: f64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut uniq: Vec<u64> = ids.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    uniq.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * uniq.len() as f64).round() as usize).clamp(1.min(uniq.len()), uniq.len());
    let mut train = uniq[..n_train].to_vec();
    let mut test = uniq[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains on `train`, reporting standardized MSE on `test` once per epoch.
/// Returns the final-epoch model.
pub fn train_model(
    train: &[(&FeatureGraph, f64)],
    test: &[(&FeatureGraph, f64)],
    cfg: &TrainConfig,
) -> Result<(GatModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    for (g, j) in train.iter().chain(test) {
        check_graph(g)?;
        if !j.is_finite() {
            return Err(Error::Shape("non-finite target".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GatModel::glorot(&mut rng);
    let n = train.len() as f64;
    let mean = train.iter().map(|(_, j)| j).sum::<f64>() / n;
    let var = train.iter().map(|(_, j)| (j - mean).powi(2)).sum::<f64>() / n;
    model.target_mean = mean;
    model.target_std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let z = |j: f64| (j - mean) / model.target_std;
    let train_g: Vec<PreparedGraph> = train.iter().map(|(g, _)| PreparedGraph::new(g)).collect();
    let train_z: Vec<f64> = train.iter().map(|(_, j)| z(*j)).collect();
    let test_g: Vec<PreparedGraph> = test.iter().map(|(g, _)| PreparedGraph::new(g)).collect();
    let test_z: Vec<f64> = test.iter().map(|(_, j)| z(*j)).collect();

    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let (mut acc_train, mut acc_test, mut acc_n) = (0.0, 0.0, 0usize);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let g: Vec<&PreparedGraph> = chunk.iter().map(|&i| &train_g[i]).collect();
            let t: Vec<f64> = chunk.iter().map(|&i| train_z[i]).collect();
            let (loss, grad) = batch_grad(&model, &g, &t);
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut model, &grad);
        }
        acc_train += epoch_loss / n;
        if !test.is_empty() {
            acc_test += mse(&model, &test_g, &test_z);
        }
        acc_n += 1;
        if epoch % super::train::HISTORY_BUCKET == 0 || epoch == cfg.epochs {
            let row = HistoryRow {
                epoch,
                train_mse: acc_train / acc_n as f64,
                test_mse: (!test.is_empty()).then(|| acc_test / acc_n as f64),
            };
            info!("epoch {} train_mse={:.5} test_mse={:?}", epoch, row.train_mse, row.test_mse);
            history.rows.push(row);
            (acc_train, acc_test, acc_n) = (0.0, 0.0, 0);
        }
    }
    if model.validate().is_err() {
        return Err(Error::ModelCorrupt("training diverged to non-finite parameters".into()));
    }
    Ok((model, history))
}

/// Splits `data` by scenario id and trains on the training scenarios.
pub fn train(data: &[LabeledInstance], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "dataset has {} instances, fewer than the batch size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let ids: Vec<u64> = data.iter().map(|d| d.scenario.scenario_id).collect();
    let (train_ids, test_ids) = split_by_scenario(&ids, cfg.train_fraction, cfg.seed);
    let mut tr = Vec::new();
    let mut te = Vec::new();
    for d in data {
        let item = (&d.graph, d.j);
        if train_ids.binary_search(&d.scenario.scenario_id).is_ok() {
            tr.push(item);
        } else {
            te.push(item);
        }
    }
    let (model, history) = train_model(&tr, &te, cfg)?;
    Ok(TrainOutput {
        model,
        history,
        train_scenarios: train_ids,
        test_scenarios: test_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archgraph::{enumerate_single_split, node_features, Architecture, Scenario};

    fn graph(key: &str, loads: &[f64]) -> FeatureGraph {
        let a: Architecture = key.parse().unwrap();
        node_features(&a, &Scenario::new(0, loads.to_vec()).unwrap()).unwrap()
    }

    fn flat_params(m: &GatModel) -> Vec<f64> {
        m.tensors().concat()
    }

    fn set_param(m: &mut GatModel, idx: usize, v: f64) {
        let mut i = idx;
        for t in m.tensors_mut() {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("index out of range");
    }

    #[test]
    fn gradients_match_finite_differences() {
        // 2, 5 and 9 vertices
        let graphs = [
            graph("S;1;{[0]}", &[9.0]),
            graph("S;3;{[0,1],[2]}", &[14.0, 5.0, 9.0]),
            graph("M;6;{[0{[1,2],[3{[4],[5]}]}]}", &[12.0, 6.0, 8.0, 15.0, 4.0, 9.0]),
        ];
        assert_eq!(graphs.iter().map(|g| g.n_vertices()).collect::<Vec<_>>(), vec![2, 5, 9]);
        let mut m = GatModel::glorot(&mut ChaCha8Rng::seed_from_u64(17));
        m.target_mean = 200.0;
        m.target_std = 50.0;
        let refs: Vec<&FeatureGraph> = graphs.iter().collect();
        let targets = [180.0, 260.0, 150.0];
        let (_, grad) = loss_and_gradients(&m, &refs, &targets).unwrap();
        let analytic = grad.tensors().concat();
        let base = flat_params(&m);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut mp = m.clone();
            set_param(&mut mp, i, base[i] + eps);
            let lp = loss_and_gradients(&mp, &refs, &targets).unwrap().0;
            set_param(&mut mp, i, base[i] - eps);
            let lm = loss_and_gradients(&mp, &refs, &targets).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let g = graph("S;3;{[0,1],[2]}", &[14.0, 5.0, 9.0]);
        let m = GatModel::glorot(&mut ChaCha8Rng::seed_from_u64(1));
        let j = crate::gnn::predict(&m, &g).unwrap();
        let (loss, grad) = loss_and_gradients(&m, &[&g], &[j]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        // doubling the residual quadruples the loss
        let (l1, _) = loss_and_gradients(&m, &[&g], &[j + 3.0]).unwrap();
        let (l2, _) = loss_and_gradients(&m, &[&g], &[j + 6.0]).unwrap();
        assert!((l2 - 4.0 * l1).abs() <= 1e-12 * l2);
    }

    #[test]
    fn too_small_dataset_rejected() {
        let a: Architecture = "S;2;{[0],[1]}".parse().unwrap();
        let s = Scenario::new(0, vec![5.0, 6.0]).unwrap();
        let label = crate::oloc::optimize_endurance(&a, &s, &crate::thermalsim::PlantParams::default(), &Default::default()).unwrap();
        let inst = LabeledInstance::new(a, s, &label).unwrap();
        assert!(matches!(train(&[inst], &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let graphs: Vec<FeatureGraph> = enumerate_single_split(2)
            .unwrap()
            .iter()
            .map(|a| node_features(a, &Scenario::new(0, vec![5.0, 11.0]).unwrap()).unwrap())
            .collect();
        let data: Vec<(&FeatureGraph, f64)> = graphs.iter().zip([120.0, 140.0, 160.0]).collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            learning_rate: 0.0,
            seed: 4,
            train_fraction: 1.0,
        };
        let (m, _) = train_model(&data, &[], &cfg).unwrap();
        let init = GatModel::glorot(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(flat_params(&m), flat_params(&init));
    }

    /// Ten real endurance labels: n = 3 architectures under one scenario.
    fn small_set() -> Vec<(FeatureGraph, f64)> {
        let archs = enumerate_single_split(3).unwrap();
        let s = Scenario::new(0, vec![14.0, 6.0, 10.0]).unwrap();
        let p = crate::thermalsim::PlantParams::default();
        archs
            .iter()
            .take(10)
            .map(|a| {
                let l = crate::oloc::optimize_endurance(a, &s, &p, &Default::default()).unwrap();
                (node_features(a, &s).unwrap(), l.j)
            })
            .collect()
    }

    #[test]
    fn memorizes_ten_instances() {
        let set = small_set();
        let data: Vec<(&FeatureGraph, f64)> = set.iter().map(|(g, j)| (g, *j)).collect();
        for seed in [0, 3] {
            let cfg = TrainConfig {
                epochs: 2000,
                batch_size: 10,
                learning_rate: 1e-3,
                seed,
                train_fraction: 1.0,
            };
            let (_, h) = train_model(&data, &[], &cfg).unwrap();
            assert_eq!(h.rows.len(), 20);
            let best = h.rows.iter().map(|r| r.train_mse).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-3, "seed {seed}: best bucketed train mse {best}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let set = small_set();
        let data: Vec<(&FeatureGraph, f64)> = set.iter().map(|(g, j)| (g, *j)).collect();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 9,
            train_fraction: 1.0,
        };
        let (a, ha) = train_model(&data[..7], &data[7..], &cfg).unwrap();
        let (b, hb) = train_model(&data[..7], &data[7..], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.rows.len(), 1);
        assert!(ha.rows[0].test_mse.is_some());
    }

    #[test]
    fn scenario_split_is_disjoint_and_sized() {
        let ids: Vec<u64> = (0..100).flat_map(|i| [i, i]).collect();
        let (tr, te) = split_by_scenario(&ids, 0.3, 5);
        assert_eq!(tr.len(), 30);
        assert_eq!(te.len(), 70);
        assert!(tr.iter().all(|t| te.binary_search(t).is_err()));
        assert_eq!(split_by_scenario(&ids, 0.3, 5), (tr, te));
    }

    #[test]
    fn bad_configs() {
        let set = small_set();
        let data: Vec<(&FeatureGraph, f64)> = set.iter().map(|(g, j)| (g, *j)).collect();
        let mut cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_model(&data, &[], &cfg), Err(Error::Config(_))));
        cfg.batch_size = 5;
        assert!(matches!(train_model(&[], &[], &cfg), Err(Error::Config(_))));
        cfg.train_fraction = 0.0;
        assert!(matches!(train_model(&data, &[], &cfg), Err(Error::Config(_))));
    }
}
