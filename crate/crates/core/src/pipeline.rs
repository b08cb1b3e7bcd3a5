//! File formats and the workflows behind the command-line tool.
//!
//! Every table is line-delimited JSON (one self-describing record per line)
//! or CSV with a header. Outputs are written to a temporary sibling and
//! renamed into place.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archgraph::{
    canonical_key, node_features, to_flat_graph, Architecture, Family, NodeKind, Scenario, LOAD_RANGE_KW,
};
use crate::error::{Error, Result};
use crate::gnn::{self, Checkpoint, GatModel, TrainConfig, TrainOutput};
use crate::metrics::{kendall_tau, n_ol, regression_report, RegressionReport, ScenarioEval};
use crate::oloc::{label_one, LabeledInstance, OlocConfig};
use crate::thermalsim::PlantParams;

/// Environment variable naming the default plant configuration file.
pub const PLANT_CONFIG_ENV: &str = "COOLGRAPH_PLANT_CONFIG";

/// Flag value, else the environment variable, else built-in defaults.
pub fn resolve_plant(path: Option<&Path>) -> Result<PlantParams> {
    if let Some(p) = path {
        return PlantParams::load(p);
    }
    match std::env::var_os(PLANT_CONFIG_ENV) {
        Some(p) if !p.is_empty() => PlantParams::load(Path::new(&p)),
        _ => Ok(PlantParams::default()),
    }
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{what} line {}: {e}", i + 1))))
        .collect()
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("record serializes"));
        s.push('\n');
    }
    s
}

fn fnv1a(h: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *h = (*h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
}

// ---------------------------------------------------------------- archs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchRecord {
    pub arch_key: String,
    pub family: Family,
    pub n_cphx: usize,
}

pub fn archs_to_jsonl(archs: &[Architecture]) -> String {
    let recs: Vec<ArchRecord> = archs
        .iter()
        .map(|a| ArchRecord {
            arch_key: canonical_key(a),
            family: a.family(),
            n_cphx: a.n_cphx(),
        })
        .collect();
    to_jsonl(&recs)
}

pub fn parse_archs(text: &str) -> Result<Vec<Architecture>> {
    parse_jsonl::<ArchRecord>(text, "architecture")?
        .into_iter()
        .map(|r| {
            let a: Architecture = r.arch_key.parse()?;
            if a.family() != r.family || a.n_cphx() != r.n_cphx {
                return Err(Error::Parse(format!("record fields disagree with key {}", r.arch_key)));
            }
            Ok(a)
        })
        .collect()
}

pub fn read_archs(path: &Path) -> Result<Vec<Architecture>> {
    parse_archs(&read_text(path)?)
}

/// Parses `single:5`, `multi:3` or the short forms `S5`, `M3`.
pub fn parse_family_spec(s: &str) -> Result<(Family, usize)> {
    let (f, n) = match s.split_once(':') {
        Some(p) => p,
        None if s.len() > 1 => s.split_at(1),
        None => return Err(Error::Parse(format!("bad family spec '{s}'"))),
    };
    let n: usize = n.parse().map_err(|_| Error::Parse(format!("bad node count in '{s}'")))?;
    Ok((Family::from_tag(f)?, n))
}

// ------------------------------------------------------------ scenarios

pub fn scenarios_to_jsonl(s: &[Scenario]) -> String {
    to_jsonl(s)
}

pub fn parse_scenarios(text: &str) -> Result<Vec<Scenario>> {
    let v: Vec<Scenario> = parse_jsonl(text, "scenario")?;
    let mut seen = HashSet::new();
    for s in &v {
        s.validate()?;
        if !seen.insert(s.scenario_id) {
            return Err(Error::Parse(format!("duplicate scenario id {}", s.scenario_id)));
        }
    }
    Ok(v)
}

pub fn read_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    parse_scenarios(&read_text(path)?)
}

/// `count` scenarios of `n` loads drawn uniformly from `[lo, hi]` kW with
/// ChaCha8 seeded by `seed`. Ids are `0..count`.
pub fn gen_scenarios(n: usize, count: usize, seed: u64, lo: f64, hi: f64) -> Result<Vec<Scenario>> {
    if count == 0 || n == 0 {
        return Err(Error::Config("need at least one scenario of at least one load".into()));
    }
    if !(lo < hi) || lo < LOAD_RANGE_KW.0 || hi > LOAD_RANGE_KW.1 {
        return Err(Error::Config(format!(
            "load range [{lo}, {hi}] must be non-empty and inside [{}, {}] kW",
            LOAD_RANGE_KW.0, LOAD_RANGE_KW.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count as u64)
        .map(|id| Scenario::new(id, (0..n).map(|_| rng.gen_range(lo..=hi)).collect()))
        .collect()
}

// -------------------------------------------------------------- dataset

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    Holdout,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Holdout => "holdout",
        }
    }
}

fn kind_str(k: NodeKind) -> String {
    match k {
        NodeKind::Tank => "T".into(),
        NodeKind::Junction => "J".into(),
        NodeKind::Cphx(i) => format!("C{i}"),
    }
}

/// One labeled (architecture, scenario) row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub arch_key: String,
    pub family: Family,
    pub n_cphx: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_kinds: Vec<String>,
    /// kW, one per CPHX.
    pub loads: Vec<f64>,
    pub scenario_id: u64,
    #[serde(rename = "J")]
    pub j: f64,
    pub evals_used: usize,
    pub saturated: bool,
    pub split_tag: SplitTag,
}

impl DatasetRecord {
    pub fn from_instance(inst: &LabeledInstance, split_tag: SplitTag) -> Self {
        let flat = &inst.graph.flat;
        DatasetRecord {
            arch_key: canonical_key(&inst.arch),
            family: inst.arch.family(),
            n_cphx: inst.arch.n_cphx(),
            edges: flat.edges().into_iter().map(|(a, b)| [a, b]).collect(),
            node_kinds: flat.vertices().iter().map(|&k| kind_str(k)).collect(),
            loads: inst.scenario.loads.clone(),
            scenario_id: inst.scenario.scenario_id,
            j: inst.j,
            evals_used: inst.evals_used,
            saturated: inst.saturated,
            split_tag,
        }
    }

    /// Rebuilds the instance, checking that the stored graph matches the key.
    pub fn to_instance(&self) -> Result<LabeledInstance> {
        let arch: Architecture = self.arch_key.parse()?;
        let bad = |what: &str| Error::Parse(format!("record {} / {}: {what}", self.arch_key, self.scenario_id));
        if arch.family() != self.family || arch.n_cphx() != self.n_cphx {
            return Err(bad("family or CPHX count disagrees with key"));
        }
        let flat = to_flat_graph(&arch);
        let edges: Vec<[usize; 2]> = flat.edges().into_iter().map(|(a, b)| [a, b]).collect();
        let kinds: Vec<String> = flat.vertices().iter().map(|&k| kind_str(k)).collect();
        if edges != self.edges || kinds != self.node_kinds {
            return Err(bad("stored graph disagrees with key"));
        }
        if !(self.j > 0.0) || !self.j.is_finite() {
            return Err(bad("J must be positive and finite"));
        }
        let scenario = Scenario::new(self.scenario_id, self.loads.clone())?;
        let graph = node_features(&arch, &scenario)?;
        Ok(LabeledInstance {
            arch,
            scenario,
            j: self.j,
            evals_used: self.evals_used,
            saturated: self.saturated,
            graph,
        })
    }
}

pub fn dataset_to_jsonl(records: &[DatasetRecord]) -> String {
    to_jsonl(records)
}

pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>> {
    parse_jsonl(text, "dataset")
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    parse_dataset(&read_text(path)?)
}

// ------------------------------------------------------------- labeling

pub struct LabelJob<'a> {
    pub archs: &'a [Architecture],
    pub scenarios: &'a [Scenario],
    pub plant: &'a PlantParams,
    pub oloc: &'a OlocConfig,
    pub workers: usize,
    /// Families tagged `holdout` instead of `test`.
    pub holdout: &'a [(Family, usize)],
    /// Stop after this many new rows, leaving the completion log in place.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSummary {
    pub rows: usize,
    pub resumed: usize,
    pub labeled_now: usize,
    pub written: usize,
    pub failed: usize,
    pub complete: bool,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    row: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    record: Option<DatasetRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    job: String,
}

impl LabelJob<'_> {
    fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for a in self.archs {
            fnv1a(&mut h, canonical_key(a).as_bytes());
            fnv1a(&mut h, b"|");
        }
        fnv1a(&mut h, scenarios_to_jsonl(self.scenarios).as_bytes());
        fnv1a(&mut h, self.plant.to_kv_string().as_bytes());
        fnv1a(&mut h, serde_json::to_string(self.oloc).expect("config serializes").as_bytes());
        for (f, n) in self.holdout {
            fnv1a(&mut h, format!("{}{n}", f.tag()).as_bytes());
        }
        format!("{h:016x}")
    }

    fn tag(&self, a: &Architecture) -> SplitTag {
        if self.holdout.contains(&(a.family(), a.n_cphx())) {
            SplitTag::Holdout
        } else {
            SplitTag::Test
        }
    }
}

/// Path of the completion log kept next to `out` while labeling.
pub fn completion_log_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".log");
    PathBuf::from(p)
}

/// Labels every (architecture, scenario) pair, architecture-major, into
/// `out`. Each finished row is appended to a completion log first, so an
/// interrupted run resumes where it stopped; the dataset file appears only
/// once every row is done and does not depend on worker count or
/// interruptions. Rows whose label fails are logged and left out.
pub fn label_to_file(job: &LabelJob, out: &Path) -> Result<LabelSummary> {
    job.oloc.validate()?;
    job.plant.validate()?;
    if job.archs.is_empty() || job.scenarios.is_empty() {
        return Err(Error::Config("labeling needs at least one architecture and one scenario".into()));
    }
    let n_rows = job.archs.len() * job.scenarios.len();
    let log_path = completion_log_path(out);
    let fp = job.fingerprint();
    let mut done: BTreeMap<usize, LogLine> = BTreeMap::new();
    if log_path.exists() {
        let text = read_text(&log_path)?;
        let mut lines = text.lines();
        let header: Option<LogHeader> = lines.next().and_then(|l| serde_json::from_str(l).ok());
        match header {
            Some(h) if h.job == fp => {}
            _ => {
                return Err(Error::Config(format!(
                    "{} belongs to a different labeling job; remove it to start over",
                    log_path.display()
                )))
            }
        }
        // a torn final line from an interrupted write is simply redone
        for l in lines {
            if let Ok(entry) = serde_json::from_str::<LogLine>(l) {
                if entry.row < n_rows {
                    done.insert(entry.row, entry);
                }
            }
        }
    } else {
        let header = serde_json::to_string(&LogHeader { job: fp }).expect("header serializes");
        std::fs::write(&log_path, format!("{header}\n")).map_err(|e| Error::io(&log_path, e))?;
    }
    let resumed = done.len();
    let mut pending: Vec<usize> = (0..n_rows).filter(|r| !done.contains_key(r)).collect();
    if let Some(k) = job.stop_after {
        pending.truncate(k);
    }
    let file = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let log = Mutex::new(file);
    let n_scen = job.scenarios.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let new_lines: Vec<Result<LogLine>> = pool.install(|| {
        pending
            .par_iter()
            .map(|&row| {
                let arch = &job.archs[row / n_scen];
                let scen = &job.scenarios[row % n_scen];
                let entry = match label_one(arch, scen, job.plant, job.oloc) {
                    Ok(inst) => LogLine {
                        row,
                        record: Some(DatasetRecord::from_instance(&inst, job.tag(arch))),
                        error: None,
                    },
                    Err(e) => LogLine {
                        row,
                        record: None,
                        error: Some(e.to_string()),
                    },
                };
                let line = serde_json::to_string(&entry).expect("log line serializes");
                let mut f: std::sync::MutexGuard<'_, File> = log.lock().expect("log lock");
                writeln!(f, "{line}").map_err(|e| Error::io(&log_path, e))?;
                f.flush().map_err(|e| Error::io(&log_path, e))?;
                Ok(entry)
            })
            .collect()
    });
    drop(log);
    let labeled_now = new_lines.len();
    for l in new_lines {
        let l = l?;
        done.insert(l.row, l);
    }
    let mut summary = LabelSummary {
        rows: n_rows,
        resumed,
        labeled_now,
        written: 0,
        failed: 0,
        complete: done.len() == n_rows,
    };
    if !summary.complete {
        info!("labeled {} of {} rows; rerun to resume", done.len(), n_rows);
        return Ok(summary);
    }
    let mut records = Vec::with_capacity(n_rows);
    for (row, entry) in done {
        match (entry.record, entry.error) {
            (Some(r), _) => records.push(r),
            (None, err) => {
                summary.failed += 1;
                warn!("skipping row {row}: {}", err.unwrap_or_default());
            }
        }
    }
    summary.written = records.len();
    write_atomic(out, dataset_to_jsonl(&records).as_bytes())?;
    std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
    Ok(summary)
}

// ------------------------------------------------------------- training

/// Reads `key = value` lines over the defaults; `#` starts a comment.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let bad = || Error::Config(format!("line {}: bad value for {k}", i + 1));
        match k {
            "epochs" => c.epochs = v.parse().map_err(|_| bad())?,
            "batch_size" => c.batch_size = v.parse().map_err(|_| bad())?,
            "learning_rate" => c.learning_rate = v.parse().map_err(|_| bad())?,
            "seed" => c.seed = v.parse().map_err(|_| bad())?,
            "train_fraction" => c.train_fraction = v.parse().map_err(|_| bad())?,
            other => return Err(Error::Config(format!("unknown training key '{other}'"))),
        }
    }
    c.validate()?;
    Ok(c)
}

/// Trains on every non-holdout record, split by scenario.
pub fn train_records(records: &[DatasetRecord], cfg: &TrainConfig) -> Result<TrainOutput> {
    let data: Vec<LabeledInstance> = records
        .iter()
        .filter(|r| r.split_tag != SplitTag::Holdout)
        .map(DatasetRecord::to_instance)
        .collect::<Result<_>>()?;
    gnn::train(&data, cfg)
}

/// Copy of `records` tagged by the split a checkpoint was trained with.
pub fn tag_records(records: &[DatasetRecord], train_scenarios: &[u64]) -> Vec<DatasetRecord> {
    let train: HashSet<u64> = train_scenarios.iter().copied().collect();
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.split_tag != SplitTag::Holdout {
                r.split_tag = if train.contains(&r.scenario_id) {
                    SplitTag::Train
                } else {
                    SplitTag::Test
                };
            }
            r
        })
        .collect()
}

// ----------------------------------------------------------- evaluation

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionSummary {
    pub partition: SplitTag,
    pub n: usize,
    /// Kendall tau over every (J, J_hat) pair in the partition.
    pub tau: Option<f64>,
    pub regression: Option<RegressionReport>,
    pub n_scenarios: usize,
    pub mean_scenario_tau: Option<f64>,
    pub mean_n_ol: f64,
    pub mean_n_sub: f64,
    pub mean_j_sub: f64,
    /// Mean of `1 - (N_OL + 1) / n_graphs`.
    pub mean_reduction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterRow {
    pub partition: SplitTag,
    pub scenario_id: u64,
    pub arch_key: String,
    pub j: f64,
    pub j_hat: f64,
    /// 1 = best within the scenario; ties go to the earlier row.
    pub rank_true: usize,
    pub rank_pred: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub partitions: Vec<PartitionSummary>,
    pub scenarios: Vec<(SplitTag, ScenarioEval)>,
    pub scatter: Vec<ScatterRow>,
}

fn ranks_desc(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut r = vec![0; v.len()];
    for (pos, &i) in order.iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Scores predictions `j_hat[i]` for `records[i]`. Records whose scenario
/// is in `train_scenarios` form the train partition, holdout-tagged
/// records the holdout partition, the rest the test partition.
pub fn evaluate_predictions(records: &[DatasetRecord], j_hat: &[f64], train_scenarios: &[u64]) -> Result<EvalReport> {
    if records.len() != j_hat.len() {
        return Err(Error::Shape(format!("{} predictions for {} records", j_hat.len(), records.len())));
    }
    let tagged = tag_records(records, train_scenarios);
    let mut groups: BTreeMap<(SplitTag, u64), Vec<usize>> = BTreeMap::new();
    for (i, r) in tagged.iter().enumerate() {
        groups.entry((r.split_tag, r.scenario_id)).or_default().push(i);
    }
    let mut scenarios = Vec::new();
    let mut scatter = Vec::with_capacity(records.len());
    for (&(part, sid), idx) in &groups {
        let j: Vec<f64> = idx.iter().map(|&i| records[i].j).collect();
        let jh: Vec<f64> = idx.iter().map(|&i| j_hat[i]).collect();
        let (rt, rp) = (ranks_desc(&j), ranks_desc(&jh));
        for (k, &i) in idx.iter().enumerate() {
            scatter.push(ScatterRow {
                partition: part,
                scenario_id: sid,
                arch_key: records[i].arch_key.clone(),
                j: j[k],
                j_hat: jh[k],
                rank_true: rt[k],
                rank_pred: rp[k],
            });
        }
        scenarios.push((part, ScenarioEval::new(sid, j, jh)?));
    }
    let mut partitions = Vec::new();
    for part in [SplitTag::Train, SplitTag::Test, SplitTag::Holdout] {
        let idx: Vec<usize> = (0..records.len()).filter(|&i| tagged[i].split_tag == part).collect();
        if idx.is_empty() {
            continue;
        }
        let j: Vec<f64> = idx.iter().map(|&i| records[i].j).collect();
        let jh: Vec<f64> = idx.iter().map(|&i| j_hat[i]).collect();
        let tau = if j.len() >= 2 { kendall_tau(&j, &jh).ok() } else { None };
        let evals: Vec<&ScenarioEval> = scenarios.iter().filter(|(p, _)| *p == part).map(|(_, e)| e).collect();
        partitions.push(PartitionSummary {
            partition: part,
            n: idx.len(),
            tau,
            regression: regression_report(&j, &jh).ok(),
            n_scenarios: evals.len(),
            mean_scenario_tau: mean(evals.iter().filter_map(|e| e.tau)),
            mean_n_ol: mean(evals.iter().map(|e| e.n_ol as f64)).unwrap_or(0.0),
            mean_n_sub: mean(evals.iter().map(|e| e.n_sub as f64)).unwrap_or(0.0),
            mean_j_sub: mean(evals.iter().map(|e| e.j_sub)).unwrap_or(0.0),
            mean_reduction: mean(evals.iter().map(|e| 1.0 - (e.n_ol + 1) as f64 / e.n_graphs() as f64))
                .unwrap_or(0.0),
        });
    }
    Ok(EvalReport {
        partitions,
        scenarios,
        scatter,
    })
}

pub fn predict_records(model: &GatModel, records: &[DatasetRecord]) -> Result<Vec<f64>> {
    let graphs: Vec<_> = records
        .iter()
        .map(|r| r.to_instance().map(|i| i.graph))
        .collect::<Result<_>>()?;
    gnn::predict_many(model, &graphs)
}

pub fn evaluate(ckpt: &Checkpoint, records: &[DatasetRecord]) -> Result<EvalReport> {
    let j_hat = predict_records(&ckpt.model, records)?;
    evaluate_predictions(records, &j_hat, &ckpt.train_scenarios)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn partition(&self, p: SplitTag) -> Option<&PartitionSummary> {
        self.partitions.iter().find(|s| s.partition == p)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "partition,n,tau,mse,mae,rmse,r2,n_scenarios,mean_scenario_tau,mean_N_OL,mean_N_sub,mean_J_sub,mean_reduction\n",
        );
        for p in &self.partitions {
            let r = p.regression.as_ref();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{:.4},{:.4},{:.6},{:.6}",
                p.partition.as_str(),
                p.n,
                opt(p.tau),
                opt(r.map(|r| r.mse)),
                opt(r.map(|r| r.mae)),
                opt(r.map(|r| r.rmse)),
                opt(r.map(|r| r.r2)),
                p.n_scenarios,
                opt(p.mean_scenario_tau),
                p.mean_n_ol,
                p.mean_n_sub,
                p.mean_j_sub,
                p.mean_reduction
            );
        }
        s
    }

    pub fn scenarios_csv(&self) -> String {
        let mut s = String::from("partition,scenario_id,n_graphs,tau,N_OL,N_sub,J_sub,reduction\n");
        for (p, e) in &self.scenarios {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.6}",
                p.as_str(),
                e.scenario_id,
                e.n_graphs(),
                opt(e.tau),
                e.n_ol,
                e.n_sub,
                e.j_sub,
                1.0 - (e.n_ol + 1) as f64 / e.n_graphs() as f64
            );
        }
        s
    }

    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("partition,scenario_id,arch_key,J,J_hat,rank_true,rank_pred\n");
        for r in &self.scatter {
            let _ = writeln!(
                s,
                "{},{},\"{}\",{:.6},{:.6},{},{}",
                r.partition.as_str(),
                r.scenario_id,
                r.arch_key,
                r.j,
                r.j_hat,
                r.rank_true,
                r.rank_pred
            );
        }
        s
    }

    /// Writes `summary.csv`, `scenarios.csv` and `rank_scatter.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("summary.csv"), self.summary_csv().as_bytes())?;
        write_atomic(&dir.join("scenarios.csv"), self.scenarios_csv().as_bytes())?;
        write_atomic(&dir.join("rank_scatter.csv"), self.scatter_csv().as_bytes())
    }
}

// ------------------------------------------------------------ reduction

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub arch_key: String,
    pub j_hat: f64,
    /// Oracle endurance, present for the evaluated top-k.
    pub j: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionReport {
    pub scenario_id: u64,
    pub n_graphs: usize,
    pub budget: usize,
    /// All candidates by descending prediction.
    pub ranked: Vec<Candidate>,
    pub best_found_key: String,
    pub best_found_j: f64,
    /// Filled when reference labels cover every candidate.
    pub true_max_j: Option<f64>,
    pub n_ol_plus_1: Option<usize>,
    pub reduction_fraction: Option<f64>,
}

/// Ranks `archs` by predicted endurance under `scenario`, runs the
/// optimizer on the top `budget` only and reports the best one found.
/// `labels`, when given, supply reference J values (matched by key and
/// scenario id) for the ranking-quality fields.
pub fn reduce(
    model: &GatModel,
    archs: &[Architecture],
    scenario: &Scenario,
    budget: usize,
    plant: &PlantParams,
    oloc: &OlocConfig,
    labels: Option<&[DatasetRecord]>,
) -> Result<ReductionReport> {
    let graphs: Vec<_> = archs
        .iter()
        .map(|a| node_features(a, &scenario.for_arch(a.n_cphx())?))
        .collect::<Result<_>>()?;
    let j_hat = gnn::predict_many(model, &graphs)?;
    reduce_ranked(archs, &j_hat, scenario, budget, plant, oloc, labels)
}

/// [`reduce`] with the predictions supplied by the caller.
pub fn reduce_ranked(
    archs: &[Architecture],
    j_hat: &[f64],
    scenario: &Scenario,
    budget: usize,
    plant: &PlantParams,
    oloc: &OlocConfig,
    labels: Option<&[DatasetRecord]>,
) -> Result<ReductionReport> {
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    if archs.is_empty() || archs.len() != j_hat.len() {
        return Err(Error::Shape(format!("{} predictions for {} candidates", j_hat.len(), archs.len())));
    }
    let budget = if budget > archs.len() {
        warn!("budget {budget} exceeds population {}; clamping", archs.len());
        archs.len()
    } else {
        budget
    };
    let mut order: Vec<usize> = (0..archs.len()).collect();
    order.sort_by(|&a, &b| j_hat[b].total_cmp(&j_hat[a]).then(a.cmp(&b)));
    let top: Vec<Result<f64>> = order[..budget]
        .par_iter()
        .map(|&i| label_one(&archs[i], scenario, plant, oloc).map(|l| l.j))
        .collect();
    let mut ranked: Vec<Candidate> = order
        .iter()
        .map(|&i| Candidate {
            arch_key: canonical_key(&archs[i]),
            j_hat: j_hat[i],
            j: None,
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (pos, r) in top.into_iter().enumerate() {
        match r {
            Ok(j) => {
                ranked[pos].j = Some(j);
                if best.is_none_or(|(_, b)| j > b) {
                    best = Some((pos, j));
                }
            }
            Err(e) => warn!("oracle failed on candidate {}: {e}", ranked[pos].arch_key),
        }
    }
    let (best_pos, best_j) = best.ok_or_else(|| Error::Label {
        arch_key: ranked[0].arch_key.clone(),
        scenario_id: scenario.scenario_id,
        reason: "every evaluated candidate failed".into(),
    })?;
    let mut report = ReductionReport {
        scenario_id: scenario.scenario_id,
        n_graphs: archs.len(),
        budget,
        best_found_key: ranked[best_pos].arch_key.clone(),
        best_found_j: best_j,
        ranked,
        true_max_j: None,
        n_ol_plus_1: None,
        reduction_fraction: None,
    };
    if let Some(labels) = labels {
        let by_key: HashMap<&str, f64> = labels
            .iter()
            .filter(|r| r.scenario_id == scenario.scenario_id)
            .map(|r| (r.arch_key.as_str(), r.j))
            .collect();
        let j_ref: Option<Vec<f64>> = archs.iter().map(|a| by_key.get(canonical_key(a).as_str()).copied()).collect();
        match j_ref {
            Some(j) => {
                let k = n_ol(&j, j_hat)?;
                report.true_max_j = j.iter().copied().reduce(f64::max);
                report.n_ol_plus_1 = Some(k + 1);
                report.reduction_fraction = Some(1.0 - (k + 1) as f64 / archs.len() as f64);
            }
            None => warn!("reference labels do not cover every candidate; skipping N_OL"),
        }
    }
    Ok(report)
}

impl ReductionReport {
    pub fn ranking_csv(&self) -> String {
        let mut s = String::from("rank,arch_key,J_hat,J\n");
        for (i, c) in self.ranked.iter().enumerate() {
            let _ = writeln!(s, "{},\"{}\",{:.6},{}", i + 1, c.arch_key, c.j_hat, opt(c.j));
        }
        s
    }
}

// ----------------------------------------------------------- embeddings

pub fn embeddings_csv(model: &GatModel, records: &[DatasetRecord]) -> Result<String> {
    let graphs: Vec<_> = records
        .iter()
        .map(|r| r.to_instance().map(|i| i.graph))
        .collect::<Result<_>>()?;
    let emb = gnn::export_embeddings(model, &graphs)?;
    let mut s = String::from("arch_key,scenario_id,n_cphx");
    for c in 0..gnn::READOUT_DIM {
        let _ = write!(s, ",e{c}");
    }
    s.push('\n');
    for (r, e) in records.iter().zip(&emb) {
        let _ = write!(s, "\"{}\",{},{}", r.arch_key, r.scenario_id, r.n_cphx);
        for v in e {
            let _ = write!(s, ",{v:.9}");
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archgraph::{enumerate_single_split, Family};

    #[test]
    fn family_specs() {
        assert_eq!(parse_family_spec("single:5").unwrap(), (Family::SingleSplit, 5));
        assert_eq!(parse_family_spec("M3").unwrap(), (Family::MultiSplit, 3));
        assert!(parse_family_spec("x:3").is_err());
        assert!(parse_family_spec("single:").is_err());
    }

    #[test]
    fn scenario_generation_is_seeded_and_in_range() {
        let a = gen_scenarios(6, 1000, 42, 4.0, 16.0).unwrap();
        assert_eq!(a, gen_scenarios(6, 1000, 42, 4.0, 16.0).unwrap());
        assert!(a.iter().flat_map(|s| &s.loads).all(|&d| (4.0..=16.0).contains(&d)));
        assert_ne!(a, gen_scenarios(6, 1000, 43, 4.0, 16.0).unwrap());
        assert!(matches!(gen_scenarios(3, 5, 0, 10.0, 8.0), Err(Error::Config(_))));
        assert!(matches!(gen_scenarios(3, 5, 0, 2.0, 8.0), Err(Error::Config(_))));
        assert!(matches!(gen_scenarios(3, 0, 0, 4.0, 8.0), Err(Error::Config(_))));
    }

    #[test]
    fn scenario_file_rejects_duplicates() {
        let s = gen_scenarios(2, 2, 1, 4.0, 16.0).unwrap();
        let text = scenarios_to_jsonl(&[s[0].clone(), s[0].clone()]);
        assert!(matches!(parse_scenarios(&text), Err(Error::Parse(_))));
        assert_eq!(parse_scenarios(&scenarios_to_jsonl(&s)).unwrap(), s);
    }

    #[test]
    fn arch_file_roundtrip() {
        let archs = enumerate_single_split(4).unwrap();
        assert_eq!(parse_archs(&archs_to_jsonl(&archs)).unwrap(), archs);
    }

    #[test]
    fn tampered_record_rejected() {
        let a: Architecture = "S;3;{[0,1],[2]}".parse().unwrap();
        let s = Scenario::new(0, vec![5.0, 9.0, 12.0]).unwrap();
        let l = crate::oloc::optimize_endurance(&a, &s, &PlantParams::default(), &OlocConfig::default()).unwrap();
        let rec = DatasetRecord::from_instance(&LabeledInstance::new(a, s, &l).unwrap(), SplitTag::Test);
        assert!(rec.to_instance().is_ok());
        let mut bad = rec.clone();
        bad.edges.pop();
        assert!(bad.to_instance().is_err());
        let mut bad = rec.clone();
        bad.j = -1.0;
        assert!(bad.to_instance().is_err());
        let mut bad = rec;
        bad.loads.push(4.0);
        assert!(bad.to_instance().is_err());
    }

    #[test]
    fn ranks_break_ties_by_position() {
        assert_eq!(ranks_desc(&[3.0, 5.0, 3.0, 1.0]), vec![2, 1, 3, 4]);
    }

    #[test]
    fn train_config_parsing() {
        let c = parse_train_config("epochs = 10 # short\nlearning_rate=0.01\n").unwrap();
        assert_eq!(c.epochs, 10);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.batch_size, 100);
        assert!(matches!(parse_train_config("epoch = 3"), Err(Error::Config(_))));
        assert!(matches!(parse_train_config("train_fraction = 1.5"), Err(Error::Config(_))));
    }
}
