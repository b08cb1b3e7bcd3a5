//! Lumped thermal plant for one architecture under a piecewise-constant
//! valve schedule.
//!
//! States are one wall temperature per CPHX, the tank temperature, and the
//! accumulated heat rejected through the liquid-to-liquid heat exchanger.
//! Fluid temperatures are algebraic (quasi-steady): for CPHX `i` with
//! capacity rate `C = m_i c_p` and conductance `k = hA_i`,
//!
//! ```text
//! C (T_out - T_in) = k (T_w - (T_in + T_out) / 2)
//! C_w dT_w/dt      = P_i - C (T_out - T_in)
//! hA_i             = hA0 (m_i / m_total)^flow_exponent
//! ```
//!
//! Branch heads draw from the tank, sub-branches from the outlet of the
//! CPHX that feeds the split. Leaf outlets mix by flow weight, pass the
//! LLHX (`T_ret = T_mix - eps (T_mix - T_sink)`), and return to the tank:
//! `C_t dT_t/dt = m_total c_p (T_ret - T_t)`.
//!
//! Within one control interval the right-hand side is affine in the state,
//! so a classic RK4 step is itself an affine map `x -> M x + c`. The map is
//! tabulated once per interval by pushing basis vectors through
//! [`rk4_step`] and then applied at every step.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archgraph::{Architecture, Branch, Scenario};
use crate::error::{Error, Result};

/// Lower bound on every valve fraction.
pub const F_MIN: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// kg/s
    pub m_dot_total: f64,
    /// J/(kg K)
    pub c_p: f64,
    /// J/K per CPHX wall
    pub wall_capacity: f64,
    /// J/K
    pub tank_capacity: f64,
    /// W/K at full flow
    pub ha0: f64,
    pub flow_exponent: f64,
    pub eps_llhx: f64,
    /// °C
    pub t_sink: f64,
    pub t_init: f64,
    pub t_max: f64,
    /// s
    pub horizon: f64,
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams {
            m_dot_total: 1.0,
            c_p: 2000.0,
            wall_capacity: 5.0e4,
            tank_capacity: 5.0e5,
            ha0: 350.0,
            flow_exponent: 0.8,
            eps_llhx: 0.8,
            t_sink: 15.0,
            t_init: 15.0,
            t_max: 45.0,
            horizon: 2000.0,
            dt: 0.5,
        }
    }
}

const PLANT_KEYS: [&str; 12] = [
    "m_dot_total",
    "c_p",
    "wall_capacity",
    "tank_capacity",
    "ha0",
    "flow_exponent",
    "eps_llhx",
    "t_sink",
    "t_init",
    "t_max",
    "horizon",
    "dt",
];

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m_dot_total", self.m_dot_total),
            ("c_p", self.c_p),
            ("wall_capacity", self.wall_capacity),
            ("tank_capacity", self.tank_capacity),
            ("ha0", self.ha0),
            ("horizon", self.horizon),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eps_llhx > 0.0 && self.eps_llhx <= 1.0) {
            return Err(Error::Config(format!("eps_llhx must be in (0,1], got {}", self.eps_llhx)));
        }
        if !self.flow_exponent.is_finite() || self.flow_exponent < 0.0 {
            return Err(Error::Config("flow_exponent must be finite and non-negative".into()));
        }
        if !(self.t_init < self.t_max) {
            return Err(Error::Config("t_init must be below t_max".into()));
        }
        if !self.t_sink.is_finite() {
            return Err(Error::Config("t_sink must be finite".into()));
        }
        Ok(())
    }

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "m_dot_total" => &mut self.m_dot_total,
            "c_p" => &mut self.c_p,
            "wall_capacity" => &mut self.wall_capacity,
            "tank_capacity" => &mut self.tank_capacity,
            "ha0" => &mut self.ha0,
            "flow_exponent" => &mut self.flow_exponent,
            "eps_llhx" => &mut self.eps_llhx,
            "t_sink" => &mut self.t_sink,
            "t_init" => &mut self.t_init,
            "t_max" => &mut self.t_max,
            "horizon" => &mut self.horizon,
            "dt" => &mut self.dt,
            _ => return None,
        })
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut p = PlantParams::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = k.trim();
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("line {}: bad number '{}'", lineno + 1, v.trim())))?;
            *p.slot(key)
                .ok_or_else(|| Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)))? = value;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_kv_string(&self) -> String {
        let mut me = self.clone();
        let mut out = String::new();
        for key in PLANT_KEYS {
            let v = *me.slot(key).expect("known key");
            let _ = writeln!(out, "{key} = {v}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }
}

// ---------------------------------------------------------------------------
// Network topology

#[derive(Clone, Debug)]
struct PlantNode {
    cphx: usize,
    /// Upstream CPHX, or `None` for the tank.
    inlet: Option<usize>,
    /// (split point, child index) pairs from the tank down to this node.
    path: Vec<(usize, usize)>,
    to_return: bool,
}

/// Flow topology of an architecture: CPHXs in upstream-first order plus the
/// arity of every valve ("split point"). Split points are numbered with the
/// tank-level split first (when the tank feeds two or more branches), then in
/// depth-first order over the canonical branch order.
#[derive(Clone, Debug)]
pub struct Network {
    n_cphx: usize,
    nodes: Vec<PlantNode>,
    arity: Vec<usize>,
}

impl Network {
    pub fn new(arch: &Architecture) -> Self {
        let mut net = Network {
            n_cphx: arch.n_cphx(),
            nodes: Vec::with_capacity(arch.n_cphx()),
            arity: Vec::new(),
        };
        let branches = arch.branches();
        if branches.len() >= 2 {
            let sp = net.arity.len();
            net.arity.push(branches.len());
            for (ci, b) in branches.iter().enumerate() {
                net.walk(b, None, vec![(sp, ci)]);
            }
        } else {
            net.walk(&branches[0], None, Vec::new());
        }
        net
    }

    fn walk(&mut self, b: &Branch, inlet: Option<usize>, path: Vec<(usize, usize)>) {
        let mut prev = inlet;
        let last = b.segments.len() - 1;
        for (k, seg) in b.segments.iter().enumerate() {
            let to_return = k == last && seg.split.is_none();
            self.nodes.push(PlantNode {
                cphx: seg.cphx,
                inlet: prev,
                path: path.clone(),
                to_return,
            });
            prev = Some(seg.cphx);
            if let Some(sub) = &seg.split {
                let sp = self.arity.len();
                self.arity.push(sub.len());
                for (ci, s) in sub.iter().enumerate() {
                    let mut p = path.clone();
                    p.push((sp, ci));
                    self.walk(s, Some(seg.cphx), p);
                }
            }
        }
    }

    pub fn n_cphx(&self) -> usize {
        self.n_cphx
    }

    /// Number of children at each split point.
    pub fn split_arity(&self) -> &[usize] {
        &self.arity
    }

    fn flows(&self, u: &ControlSchedule, interval: usize, m_total: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.n_cphx];
        for node in &self.nodes {
            let mut f = m_total;
            for &(sp, ci) in &node.path {
                f *= u.fractions[sp][interval][ci];
            }
            m[node.cphx] = f;
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Controls

/// Piecewise-constant valve fractions: `fractions[split][interval][child]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub n_intervals: usize,
    pub fractions: Vec<Vec<Vec<f64>>>,
}

impl ControlSchedule {
    /// Equal fractions at every split point in every interval.
    pub fn uniform(arch: &Architecture, n_intervals: usize) -> Self {
        let net = Network::new(arch);
        ControlSchedule {
            n_intervals,
            fractions: net
                .split_arity()
                .iter()
                .map(|&k| vec![vec![1.0 / k as f64; k]; n_intervals])
                .collect(),
        }
    }

    pub fn validate_for(&self, net: &Network) -> Result<()> {
        if self.n_intervals == 0 {
            return Err(Error::Control("schedule needs at least one interval".into()));
        }
        if self.fractions.len() != net.split_arity().len() {
            return Err(Error::Control(format!(
                "schedule has {} split points, architecture has {}",
                self.fractions.len(),
                net.split_arity().len()
            )));
        }
        for (sp, (per_interval, &arity)) in self.fractions.iter().zip(net.split_arity()).enumerate() {
            if per_interval.len() != self.n_intervals {
                return Err(Error::Control(format!("split {sp}: wrong interval count")));
            }
            for (k, fr) in per_interval.iter().enumerate() {
                if fr.len() != arity {
                    return Err(Error::Control(format!(
                        "split {sp}, interval {k}: {} fractions for {arity} children",
                        fr.len()
                    )));
                }
                let sum: f64 = fr.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Control(format!(
                        "split {sp}, interval {k}: fractions sum to {sum}"
                    )));
                }
                if let Some(bad) = fr.iter().find(|&&f| !(f >= F_MIN - 1e-12)) {
                    return Err(Error::Control(format!(
                        "split {sp}, interval {k}: fraction {bad} below floor {F_MIN}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mass flow (kg/s) through every CPHX during `interval`, indexed by CPHX.
pub fn flow_distribution(
    arch: &Architecture,
    u: &ControlSchedule,
    interval: usize,
    m_dot_total: f64,
) -> Result<Vec<f64>> {
    let net = Network::new(arch);
    u.validate_for(&net)?;
    if interval >= u.n_intervals {
        return Err(Error::Control(format!(
            "interval {interval} out of range for {} intervals",
            u.n_intervals
        )));
    }
    Ok(net.flows(u, interval, m_dot_total))
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub tank: Vec<f64>,
    /// `walls[k][i]` is the wall temperature of CPHX `i` at `times[k]`.
    pub walls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let n = self.walls.first().map_or(0, Vec::len);
        let mut out = String::from("time,T_tank");
        for i in 0..n {
            let _ = write!(out, ",T_w{i}");
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t},{}", self.tank[k]);
            for w in &self.walls[k] {
                let _ = write!(out, ",{w}");
            }
            out.push('\n');
        }
        out
    }
}

/// Energy bookkeeping over `[0, t_end]`, joules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub input: f64,
    pub rejected: f64,
    pub stored_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub t_end: f64,
    /// CPHX that first reached `t_max`; `None` when the horizon was reached.
    pub binding_node: Option<usize>,
    pub trajectories: Option<Trajectory>,
    pub energy: EnergyLedger,
    pub energy_residual: f64,
}

/// `|∫(ΣP - Q_rej) dt - ΔE_stored| / max(∫ΣP dt, ε)`.
pub fn energy_residual(result: &SimResult) -> f64 {
    let e = &result.energy;
    ((e.input - e.rejected) - e.stored_delta).abs() / e.input.max(1e-12)
}

/// Per-interval plant coefficients.
struct IntervalPlant<'a> {
    net: &'a Network,
    p: &'a PlantParams,
    /// W per CPHX
    power: &'a [f64],
    /// capacity rate m_i c_p
    cap_rate: Vec<f64>,
    /// T_out = a T_in + b T_w
    a: Vec<f64>,
    b: Vec<f64>,
    flow: Vec<f64>,
    /// Sink temperature relative to `t_init`.
    t_sink_rel: f64,
}

impl<'a> IntervalPlant<'a> {
    fn new(net: &'a Network, p: &'a PlantParams, power: &'a [f64], flow: Vec<f64>) -> Self {
        let n = net.n_cphx;
        let mut cap_rate = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for i in 0..n {
            let c = flow[i] * p.c_p;
            let k = p.ha0 * (flow[i] / p.m_dot_total).powf(p.flow_exponent);
            let denom = c + 0.5 * k;
            cap_rate[i] = c;
            a[i] = (c - 0.5 * k) / denom;
            b[i] = k / denom;
        }
        IntervalPlant {
            net,
            p,
            power,
            cap_rate,
            a,
            b,
            flow,
            t_sink_rel: p.t_sink - p.t_init,
        }
    }

    /// State layout: walls `0..n`, tank `n`, rejected heat `n + 1`.
    /// Temperatures are relative to `t_init`; only differences enter the
    /// equations, so the shift is exact.
    fn rhs(&self, x: &[f64], dx: &mut [f64], t_out: &mut [f64]) {
        let n = self.net.n_cphx;
        let p = self.p;
        let tank = x[n];
        let mut mix = 0.0;
        for node in &self.net.nodes {
            let i = node.cphx;
            let t_in = node.inlet.map_or(tank, |j| t_out[j]);
            let out = self.a[i] * t_in + self.b[i] * x[i];
            t_out[i] = out;
            let q = self.cap_rate[i] * (out - t_in);
            dx[i] = (self.power[i] - q) / p.wall_capacity;
            if node.to_return {
                mix += self.flow[i] * out;
            }
        }
        mix /= p.m_dot_total;
        let ret = mix - p.eps_llhx * (mix - self.t_sink_rel);
        let rate = p.m_dot_total * p.c_p;
        dx[n] = rate * (ret - tank) / p.tank_capacity;
        dx[n + 1] = rate * (mix - ret);
    }
}

/// One classic fourth-order Runge-Kutta step of an autonomous system.
pub fn rk4_step(f: &mut dyn FnMut(&[f64], &mut [f64]), x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    f(x, &mut k1);
    for j in 0..d {
        tmp[j] = x[j] + 0.5 * h * k1[j];
    }
    f(&tmp, &mut k2);
    for j in 0..d {
        tmp[j] = x[j] + 0.5 * h * k2[j];
    }
    f(&tmp, &mut k3);
    for j in 0..d {
        tmp[j] = x[j] + h * k3[j];
    }
    f(&tmp, &mut k4);
    (0..d)
        .map(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
        .collect()
}

/// Affine one-step map `x -> M x + c` (row-major `M`).
struct StepMap {
    d: usize,
    m: Vec<f64>,
    c: Vec<f64>,
}

impl StepMap {
    fn tabulate(plant: &IntervalPlant<'_>, h: f64) -> Self {
        let d = plant.net.n_cphx + 2;
        let mut t_out = vec![0.0; plant.net.n_cphx];
        let mut f = |x: &[f64], dx: &mut [f64]| plant.rhs(x, dx, &mut t_out);
        let c = rk4_step(&mut f, &vec![0.0; d], h);
        let mut m = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            let col = rk4_step(&mut f, &e, h);
            for i in 0..d {
                m[i * d + j] = col[i] - c[i];
            }
            e[j] = 0.0;
        }
        StepMap { d, m, c }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            let row = &self.m[i * d..(i + 1) * d];
            let mut acc = self.c[i];
            for j in 0..d {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
    }
}

fn steps_per_interval(p: &PlantParams, n_intervals: usize) -> Result<usize> {
    let span = p.horizon / n_intervals as f64;
    let steps = (span / p.dt).round();
    if steps < 1.0 || (steps * p.dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::Config(format!(
            "dt = {} does not divide the control interval length {span}",
            p.dt
        )));
    }
    Ok(steps as usize)
}

/// Integrates until a wall first exceeds `t_max` or the horizon ends.
pub fn simulate(
    arch: &Architecture,
    s: &Scenario,
    u: &ControlSchedule,
    p: &PlantParams,
) -> Result<SimResult> {
    simulate_with(arch, s, u, p, true)
}

pub fn simulate_with(
    arch: &Architecture,
    s: &Scenario,
    u: &ControlSchedule,
    p: &PlantParams,
    record: bool,
) -> Result<SimResult> {
    p.validate()?;
    if s.loads.len() != arch.n_cphx() {
        return Err(Error::Shape(format!(
            "scenario has {} loads, architecture has {} CPHXs",
            s.loads.len(),
            arch.n_cphx()
        )));
    }
    let net = Network::new(arch);
    u.validate_for(&net)?;
    let steps = steps_per_interval(p, u.n_intervals)?;
    let n = net.n_cphx;
    let d = n + 2;
    let power: Vec<f64> = s.loads.iter().map(|kw| kw * 1000.0).collect();
    let total_power: f64 = power.iter().sum();

    let stored = |x: &[f64]| -> f64 {
        x[..n].iter().sum::<f64>() * p.wall_capacity + x[n] * p.tank_capacity
    };

    // relative temperatures: everything starts at zero
    let mut x = vec![0.0; d];
    let t_max = p.t_max - p.t_init;
    let mut next = vec![0.0; d];
    let mut traj = record.then(Trajectory::default);
    let push = |traj: &mut Option<Trajectory>, t: f64, x: &[f64]| {
        if let Some(tr) = traj {
            tr.times.push(t);
            tr.tank.push(x[n] + p.t_init);
            tr.walls.push(x[..n].iter().map(|w| w + p.t_init).collect());
        }
    };
    push(&mut traj, 0.0, &x);

    let mut t = 0.0;
    let mut step_index = 0usize;
    let mut crossing: Option<(f64, usize)> = None;
    'outer: for interval in 0..u.n_intervals {
        let flow = net.flows(u, interval, p.m_dot_total);
        let plant = IntervalPlant::new(&net, p, &power, flow);
        let map = StepMap::tabulate(&plant, p.dt);
        for _ in 0..steps {
            map.apply(&x, &mut next);
            step_index += 1;
            let t_next = step_index as f64 * p.dt;
            if let Some(j) = next.iter().position(|v| !v.is_finite()) {
                let node = if j < n {
                    format!("cphx {j}")
                } else if j == n {
                    "tank".to_string()
                } else {
                    "rejected-heat accumulator".to_string()
                };
                return Err(Error::Integration {
                    time: t_next,
                    node,
                    reason: "non-finite state".into(),
                });
            }
            // earliest crossing inside this step; ties go to the lowest index
            let mut best: Option<(f64, usize)> = None;
            for i in 0..n {
                if next[i] > t_max {
                    let theta = if x[i] >= t_max {
                        0.0
                    } else {
                        (t_max - x[i]) / (next[i] - x[i])
                    };
                    if best.is_none_or(|(b, _)| theta < b) {
                        best = Some((theta, i));
                    }
                }
            }
            if let Some((theta, i)) = best {
                for j in 0..d {
                    next[j] = x[j] + theta * (next[j] - x[j]);
                }
                t += theta * p.dt;
                x.copy_from_slice(&next);
                push(&mut traj, t, &x);
                crossing = Some((t, i));
                break 'outer;
            }
            std::mem::swap(&mut x, &mut next);
            t = t_next;
            push(&mut traj, t, &x);
        }
    }

    let (t_end, binding_node) = match crossing {
        Some((tc, i)) => (tc, Some(i)),
        None => (p.horizon, None),
    };
    let energy = EnergyLedger {
        input: total_power * t_end,
        rejected: x[n + 1],
        stored_delta: stored(&x),
    };
    let mut result = SimResult {
        t_end,
        binding_node,
        trajectories: traj,
        energy,
        energy_residual: 0.0,
    };
    result.energy_residual = energy_residual(&result);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(s: &str) -> Architecture {
        s.parse().unwrap()
    }

    fn sched(n_intervals: usize, fractions: Vec<Vec<f64>>) -> ControlSchedule {
        ControlSchedule {
            n_intervals,
            fractions: fractions
                .into_iter()
                .map(|f| vec![f; n_intervals])
                .collect(),
        }
    }

    #[test]
    fn chain_gets_full_flow() {
        let a = arch("S;3;{[2,0,1]}");
        let u = ControlSchedule::uniform(&a, 4);
        assert!(u.fractions.is_empty());
        let m = flow_distribution(&a, &u, 2, 1.0).unwrap();
        assert_eq!(m, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn parallel_pair_halves_flow() {
        let a = arch("S;2;{[0],[1]}");
        let u = ControlSchedule::uniform(&a, 1);
        assert_eq!(flow_distribution(&a, &u, 0, 1.0).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn nested_split_multiplies_fractions() {
        // root CPHX 4 splits 0.4 -> [2] and 0.6 -> [3], which splits 0.5/0.5 into [0], [1]
        let a = arch("M;5;{[4{[2],[3{[0],[1]}]}]}");
        let net = Network::new(&a);
        assert_eq!(net.split_arity(), &[2, 2]);
        let u = sched(1, vec![vec![0.4, 0.6], vec![0.5, 0.5]]);
        let m = flow_distribution(&a, &u, 0, 1.0).unwrap();
        let expect = [0.3, 0.3, 0.4, 0.6, 1.0];
        for (got, want) in m.iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
        // sibling flows sum to the parent flow
        assert!((m[0] + m[1] - m[3]).abs() < 1e-15);
        assert!((m[2] + m[3] - m[4]).abs() < 1e-15);
    }

    #[test]
    fn bad_fractions_rejected() {
        let a = arch("S;2;{[0],[1]}");
        let u = sched(1, vec![vec![0.7, 0.2]]);
        assert!(matches!(flow_distribution(&a, &u, 0, 1.0), Err(Error::Control(_))));
        let u = sched(1, vec![vec![0.99, 0.01]]);
        assert!(matches!(flow_distribution(&a, &u, 0, 1.0), Err(Error::Control(_))));
        let u = sched(1, vec![vec![0.5, 0.5]]);
        assert!(matches!(flow_distribution(&a, &u, 1, 1.0), Err(Error::Control(_))));
    }

    #[test]
    fn zero_load_stays_at_equilibrium() {
        let a = arch("S;3;{[0,1],[2]}");
        let s = Scenario {
            scenario_id: 0,
            loads: vec![0.0; 3],
        };
        let p = PlantParams::default();
        let r = simulate(&a, &s, &ControlSchedule::uniform(&a, 4), &p).unwrap();
        assert_eq!(r.t_end, p.horizon);
        assert!(r.binding_node.is_none());
        let tr = r.trajectories.unwrap();
        for (k, _) in tr.times.iter().enumerate() {
            assert!((tr.tank[k] - p.t_init).abs() <= 1e-9);
            assert!(tr.walls[k].iter().all(|w| (w - p.t_init).abs() <= 1e-9));
        }
        assert!(r.energy_residual <= 1e-12);
    }

    #[test]
    fn rk4_matches_exponential_on_scalar_decay() {
        let mut f = |x: &[f64], dx: &mut [f64]| dx[0] = -x[0];
        let mut x = vec![1.0];
        for _ in 0..10 {
            x = rk4_step(&mut f, &x, 0.1);
        }
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn tabulated_map_equals_direct_rk4() {
        let a = arch("M;3;{[0{[1],[2]}]}");
        let net = Network::new(&a);
        let p = PlantParams::default();
        let power = vec![12_000.0, 7_000.0, 5_000.0];
        let plant = IntervalPlant::new(&net, &p, &power, vec![1.0, 0.3, 0.7]);
        let map = StepMap::tabulate(&plant, p.dt);
        let x = vec![20.0, 25.0, 30.0, 18.0, 1234.0];
        let mut out = vec![0.0; 5];
        map.apply(&x, &mut out);
        let mut t_out = vec![0.0; 3];
        let direct = rk4_step(&mut |x, dx| plant.rhs(x, dx, &mut t_out), &x, p.dt);
        for (u, v) in out.iter().zip(&direct) {
            assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn crossing_reported_with_binding_node() {
        let a = arch("S;2;{[0,1]}");
        let s = Scenario::new(0, vec![16.0, 4.0]).unwrap();
        let r = simulate(&a, &s, &ControlSchedule::uniform(&a, 4), &PlantParams::default()).unwrap();
        assert!(r.t_end < 2000.0);
        assert_eq!(r.binding_node, Some(0));
        let tr = r.trajectories.unwrap();
        let last = tr.walls.last().unwrap();
        assert!((last[0] - 45.0).abs() < 1e-9);
        assert!((tr.times.last().unwrap() - r.t_end).abs() < 1e-12);
    }

    #[test]
    fn kv_config_roundtrip_and_errors() {
        let p = PlantParams::default();
        assert_eq!(PlantParams::from_kv_str(&p.to_kv_string()).unwrap(), p);
        let q = PlantParams::from_kv_str("# tuned\nha0 = 600\n\ndt=0.25").unwrap();
        assert_eq!(q.ha0, 600.0);
        assert_eq!(q.dt, 0.25);
        assert!(PlantParams::from_kv_str("bogus = 1").is_err());
        assert!(PlantParams::from_kv_str("dt = -1").is_err());
        assert!(PlantParams::from_kv_str("t_init = 50").is_err());
        assert!(PlantParams::from_kv_str("dt").is_err());
    }

    #[test]
    fn dt_must_divide_interval() {
        let a = arch("S;1;{[0]}");
        let s = Scenario::new(0, vec![8.0]).unwrap();
        let p = PlantParams {
            dt: 0.3,
            horizon: 1.0,
            ..PlantParams::default()
        };
        assert!(matches!(
            simulate(&a, &s, &ControlSchedule::uniform(&a, 1), &p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn non_finite_state_is_an_integration_error() {
        let a = arch("S;1;{[0]}");
        let s = Scenario {
            scenario_id: 0,
            loads: vec![f64::NAN],
        };
        let err = simulate(&a, &s, &ControlSchedule::uniform(&a, 1), &PlantParams::default()).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }), "{err}");
    }

    #[test]
    fn trajectory_csv_header() {
        let a = arch("S;2;{[0],[1]}");
        let s = Scenario::new(0, vec![10.0, 10.0]).unwrap();
        let r = simulate(&a, &s, &ControlSchedule::uniform(&a, 4), &PlantParams::default()).unwrap();
        let csv = r.trajectories.unwrap().to_csv();
        assert!(csv.starts_with("time,T_tank,T_w0,T_w1\n"));
    }
}
