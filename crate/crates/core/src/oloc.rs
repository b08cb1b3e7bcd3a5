//! Endurance labels: the longest time-to-limit achievable over valve
//! schedules, found by direct control parameterization.
//!
//! Each split point gets piecewise-constant fractions over `n_intervals`
//! equal slices of the horizon. Fractions come from a floored softmax of
//! free logits, `f = F_MIN + (1 - k F_MIN) softmax(z)` with the first logit
//! of every group pinned to zero, so every candidate is admissible and
//! `z = 0` is the uniform schedule. The logits are searched with
//! Nelder-Mead, restarting around the incumbent after each convergence
//! while budget remains.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archgraph::{canonical_key, node_features, Architecture, FeatureGraph, Scenario};
use crate::error::{Error, Result};
use crate::thermalsim::{simulate_with, ControlSchedule, Network, PlantParams, F_MIN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlocConfig {
    pub n_intervals: usize,
    pub max_evals: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Simplex spread in seconds below which a search run has converged.
    pub convergence_tol: f64,
}

impl Default for OlocConfig {
    fn default() -> Self {
        OlocConfig {
            n_intervals: 4,
            max_evals: 400,
            restarts: 3,
            seed: 0,
            convergence_tol: 0.5,
        }
    }
}

impl OlocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_intervals == 0 || self.max_evals == 0 {
            return Err(Error::Config("n_intervals and max_evals must be positive".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    /// Optimized endurance, s.
    pub j: f64,
    pub best_controls: ControlSchedule,
    pub evals_used: usize,
    /// No wall reached its limit within the horizon; `j` is the horizon cap.
    pub saturated: bool,
}

/// Equal split at every valve in every interval.
pub fn baseline_uniform(arch: &Architecture, cfg: &OlocConfig) -> ControlSchedule {
    ControlSchedule::uniform(arch, cfg.n_intervals)
}

/// Maps free logits to a schedule. Layout: split-major, then interval, then
/// the `k - 1` free logits of that group.
struct Parameterization {
    arity: Vec<usize>,
    n_intervals: usize,
}

impl Parameterization {
    fn dim(&self) -> usize {
        self.arity.iter().map(|k| (k - 1) * self.n_intervals).sum()
    }

    fn schedule(&self, z: &[f64]) -> ControlSchedule {
        let mut offset = 0;
        let mut fractions = Vec::with_capacity(self.arity.len());
        for &k in &self.arity {
            let mut per_interval = Vec::with_capacity(self.n_intervals);
            for _ in 0..self.n_intervals {
                let free = &z[offset..offset + k - 1];
                offset += k - 1;
                let m = free.iter().cloned().fold(0.0, f64::max);
                let mut w: Vec<f64> = std::iter::once(0.0)
                    .chain(free.iter().copied())
                    .map(|v| (v - m).exp())
                    .collect();
                let total: f64 = w.iter().sum();
                let scale = 1.0 - k as f64 * F_MIN;
                for x in &mut w {
                    *x = F_MIN + scale * *x / total;
                }
                per_interval.push(w);
            }
            fractions.push(per_interval);
        }
        ControlSchedule {
            n_intervals: self.n_intervals,
            fractions,
        }
    }
}

struct Search<'a> {
    arch: &'a Architecture,
    scenario: &'a Scenario,
    plant: &'a PlantParams,
    param: Parameterization,
    evals: usize,
    max_evals: usize,
    best: (f64, Vec<f64>),
}

impl Search<'_> {
    /// Cost to minimize: negative endurance. Failed simulations cost +inf.
    fn cost(&mut self, z: &[f64]) -> f64 {
        self.evals += 1;
        let u = self.param.schedule(z);
        let c = match simulate_with(self.arch, self.scenario, &u, self.plant, false) {
            Ok(r) => -r.t_end,
            Err(_) => f64::INFINITY,
        };
        if c < self.best.0 {
            self.best = (c, z.to_vec());
        }
        c
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.max_evals
    }

    /// One Nelder-Mead run from `start`; returns when converged or out of budget.
    fn nelder_mead(&mut self, start: &[f64], step: f64, tol: f64) {
        let d = start.len();
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(d + 1);
        let f0 = self.cost(start);
        simplex.push((f0, start.to_vec()));
        for i in 0..d {
            if self.exhausted() {
                return;
            }
            let mut x = start.to_vec();
            x[i] += step;
            let f = self.cost(&x);
            simplex.push((f, x));
        }
        loop {
            simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
            let spread = simplex[d].0 - simplex[0].0;
            let diameter = simplex[1..]
                .iter()
                .map(|(_, x)| x.iter().zip(&simplex[0].1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (spread.is_finite() && spread <= tol) || diameter < 1e-6 || self.exhausted() {
                return;
            }
            let centroid: Vec<f64> = (0..d)
                .map(|j| simplex[..d].iter().map(|(_, x)| x[j]).sum::<f64>() / d as f64)
                .collect();
            let worst = simplex[d].1.clone();
            let along = |t: f64| -> Vec<f64> {
                centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect()
            };
            let xr = along(alpha);
            let fr = self.cost(&xr);
            if fr < simplex[0].0 {
                if self.exhausted() {
                    simplex[d] = (fr, xr);
                    continue;
                }
                let xe = along(gamma);
                let fe = self.cost(&xe);
                simplex[d] = if fe < fr { (fe, xe) } else { (fr, xr) };
                continue;
            }
            if fr < simplex[d - 1].0 {
                simplex[d] = (fr, xr);
                continue;
            }
            if self.exhausted() {
                return;
            }
            // contraction, outside or inside
            let (xc, fc) = if fr < simplex[d].0 {
                let xc = along(rho);
                let fc = self.cost(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = self.cost(&xc);
                (xc, fc)
            };
            if fc < simplex[d].0.min(fr) {
                simplex[d] = (fc, xc);
                continue;
            }
            // shrink toward the best vertex
            let best = simplex[0].1.clone();
            for v in simplex.iter_mut().skip(1) {
                if self.exhausted() {
                    return;
                }
                let x: Vec<f64> = best.iter().zip(&v.1).map(|(b, x)| b + sigma * (x - b)).collect();
                let f = self.cost(&x);
                *v = (f, x);
            }
        }
    }
}

/// Per-item seed that depends only on the run seed and the item itself, so
/// labels do not depend on scheduling order.
fn item_seed(seed: u64, arch: &Architecture, s: &Scenario) -> u64 {
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in canonical_key(arch).bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    for d in &s.loads {
        for b in d.to_bits().to_le_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Maximizes endurance over admissible valve schedules.
///
/// The uniform schedule is always evaluated first, so `j` never falls below
/// the uniform baseline.
pub fn optimize_endurance(
    arch: &Architecture,
    s: &Scenario,
    p: &PlantParams,
    cfg: &OlocConfig,
) -> Result<Label> {
    cfg.validate()?;
    let label_err = |reason: String| Error::Label {
        arch_key: canonical_key(arch),
        scenario_id: s.scenario_id,
        reason,
    };
    let baseline = baseline_uniform(arch, cfg);
    let base = simulate_with(arch, s, &baseline, p, false).map_err(|e| label_err(e.to_string()))?;
    let net = Network::new(arch);
    let param = Parameterization {
        arity: net.split_arity().to_vec(),
        n_intervals: cfg.n_intervals,
    };
    let dim = param.dim();
    if dim == 0 {
        return Ok(Label {
            j: base.t_end,
            best_controls: baseline,
            evals_used: 1,
            saturated: base.binding_node.is_none(),
        });
    }

    let mut search = Search {
        arch,
        scenario: s,
        plant: p,
        param,
        evals: 1,
        max_evals: cfg.max_evals.max(2),
        best: (-base.t_end, vec![0.0; dim]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, arch, s));
    let mut start = vec![0.0; dim];
    for run in 0..=cfg.restarts {
        if search.exhausted() || -search.best.0 >= p.horizon {
            break;
        }
        let step = if run == 0 { 1.0 } else { 0.5 };
        search.nelder_mead(&start, step, cfg.convergence_tol);
        start = search
            .best
            .1
            .iter()
            .map(|v| v + rng.gen_range(-0.5..0.5))
            .collect();
    }
    let (cost, z) = search.best.clone();
    let j = -cost;
    Ok(Label {
        j,
        best_controls: search.param.schedule(&z),
        evals_used: search.evals,
        saturated: j >= p.horizon,
    })
}

/// One labeled (architecture, scenario) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInstance {
    pub arch: Architecture,
    /// Loads restricted to the architecture's CPHX count.
    pub scenario: Scenario,
    pub j: f64,
    pub evals_used: usize,
    pub saturated: bool,
    pub graph: FeatureGraph,
}

impl LabeledInstance {
    pub fn new(arch: Architecture, scenario: Scenario, label: &Label) -> Result<Self> {
        let graph = node_features(&arch, &scenario)?;
        Ok(LabeledInstance {
            arch,
            scenario,
            j: label.j,
            evals_used: label.evals_used,
            saturated: label.saturated,
            graph,
        })
    }
}

/// Labels one architecture under one scenario (loads truncated to the
/// architecture's CPHX count).
pub fn label_one(
    arch: &Architecture,
    scenario: &Scenario,
    p: &PlantParams,
    cfg: &OlocConfig,
) -> Result<LabeledInstance> {
    let s = scenario.for_arch(arch.n_cphx())?;
    let label = optimize_endurance(arch, &s, p, cfg)?;
    info!(
        "labeled {} {} J={:.3} evals={}",
        canonical_key(arch),
        s.scenario_id,
        label.j,
        label.evals_used
    );
    LabeledInstance::new(arch.clone(), s, &label)
}

/// Cross product `archs x scenarios`, architecture-major. Runs on the
/// current rayon pool; output order does not depend on completion order.
/// Failed items stay in place as errors so callers can log and skip them.
pub fn label_population(
    archs: &[Architecture],
    scenarios: &[Scenario],
    p: &PlantParams,
    cfg: &OlocConfig,
) -> Vec<Result<LabeledInstance>> {
    let pairs: Vec<(&Architecture, &Scenario)> = archs
        .iter()
        .flat_map(|a| scenarios.iter().map(move |s| (a, s)))
        .collect();
    pairs
        .par_iter()
        .map(|(a, s)| label_one(a, s, p, cfg))
        .collect()
}
