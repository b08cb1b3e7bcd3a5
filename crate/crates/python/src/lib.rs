//! Python bindings: architectures, the plant, endurance labeling, trained
//! models and the rank metrics.

use std::path::PathBuf;

use coolgraph::archgraph::{
    canonical_key, enumerate as enumerate_family, node_features, to_flat_graph, Architecture, Family, FeatureGraph,
    NodeKind, Scenario,
};
use coolgraph::gnn::{self, load_checkpoint, GatModel};
use coolgraph::metrics;
use coolgraph::oloc::{optimize_endurance, OlocConfig};
use coolgraph::thermalsim::{simulate_with, ControlSchedule, PlantParams};
use coolgraph::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("{}: {e}", e.kind())),
    }
}

/// Loads are given per CPHX in kW; extra trailing loads are ignored so one
/// scenario can drive architectures of different sizes.
fn graph_for(arch: &Architecture, loads: &[f64]) -> PyResult<FeatureGraph> {
    let s = Scenario::new(0, loads.to_vec()).map_err(py_err)?;
    let s = s.for_arch(arch.n_cphx()).map_err(py_err)?;
    node_features(arch, &s).map_err(py_err)
}

#[pyclass(name = "Architecture", module = "coolgraph_py", frozen)]
struct PyArchitecture {
    inner: Architecture,
}

#[pymethods]
impl PyArchitecture {
    /// Parses a canonical key such as `S;3;{[0,1],[2]}`.
    #[new]
    fn new(key: &str) -> PyResult<Self> {
        key.parse().map(|inner| PyArchitecture { inner }).map_err(py_err)
    }

    #[getter]
    fn key(&self) -> String {
        canonical_key(&self.inner)
    }

    #[getter]
    fn n_cphx(&self) -> usize {
        self.inner.n_cphx()
    }

    #[getter]
    fn family(&self) -> &'static str {
        match self.inner.family() {
            Family::SingleSplit => "single",
            Family::MultiSplit => "multi",
        }
    }

    /// Undirected edges of the flat graph, tank at vertex 0.
    fn edges(&self) -> Vec<(usize, usize)> {
        to_flat_graph(&self.inner).edges()
    }

    /// Vertex kinds: `T`, `J`, or `C<i>`.
    fn vertices(&self) -> Vec<String> {
        to_flat_graph(&self.inner)
            .vertices()
            .iter()
            .map(|k| match k {
                NodeKind::Tank => "T".to_string(),
                NodeKind::Junction => "J".to_string(),
                NodeKind::Cphx(i) => format!("C{i}"),
            })
            .collect()
    }

    /// Node feature rows `[has_junction, relative_load, absolute_load, is_tank]`.
    fn features(&self, loads: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(graph_for(&self.inner, &loads)?.features.iter().map(|r| r.to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!("Architecture('{}')", canonical_key(&self.inner))
    }

    fn __str__(&self) -> String {
        canonical_key(&self.inner)
    }
}

/// Every architecture of a family (`single` or `multi`) with `n` CPHXs.
#[pyfunction]
fn enumerate(family: &str, n: usize) -> PyResult<Vec<PyArchitecture>> {
    let fam = Family::from_tag(family).map_err(py_err)?;
    Ok(enumerate_family(fam, n)
        .map_err(py_err)?
        .into_iter()
        .map(|inner| PyArchitecture { inner })
        .collect())
}

/// Endurance in seconds under equal valve splits.
#[pyfunction]
#[pyo3(signature = (arch, loads, n_intervals = 4))]
fn simulate_uniform(arch: &PyArchitecture, loads: Vec<f64>, n_intervals: usize) -> PyResult<f64> {
    let s = Scenario::new(0, loads).map_err(py_err)?;
    let u = ControlSchedule::uniform(&arch.inner, n_intervals);
    Ok(simulate_with(&arch.inner, &s, &u, &PlantParams::default(), false).map_err(py_err)?.t_end)
}

/// Optimized endurance label: `(J, evals_used, saturated)`.
#[pyfunction]
#[pyo3(signature = (arch, loads, max_evals = 400, restarts = 3, seed = 0))]
fn label(arch: &PyArchitecture, loads: Vec<f64>, max_evals: usize, restarts: usize, seed: u64) -> PyResult<(f64, usize, bool)> {
    let s = Scenario::new(0, loads).map_err(py_err)?;
    let cfg = OlocConfig {
        max_evals,
        restarts,
        seed,
        ..OlocConfig::default()
    };
    let l = optimize_endurance(&arch.inner, &s, &PlantParams::default(), &cfg).map_err(py_err)?;
    Ok((l.j, l.evals_used, l.saturated))
}

#[pyclass(name = "Model", module = "coolgraph_py", frozen)]
struct PyModel {
    inner: GatModel,
}

#[pymethods]
impl PyModel {
    /// Glorot-initialized, untrained model.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn untrained(seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PyModel {
            inner: GatModel::glorot(&mut rng),
        }
    }

    /// Reads a checkpoint written by `coolgraph train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = load_checkpoint(&path).map_err(py_err)?;
        Ok(PyModel { inner: c.model })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn predict(&self, arch: &PyArchitecture, loads: Vec<f64>) -> PyResult<f64> {
        gnn::predict(&self.inner, &graph_for(&arch.inner, &loads)?).map_err(py_err)
    }

    /// Predictions for many architectures under one load vector.
    fn predict_many(&self, archs: Vec<PyRef<'_, PyArchitecture>>, loads: Vec<f64>) -> PyResult<Vec<f64>> {
        let graphs = archs
            .iter()
            .map(|a| graph_for(&a.inner, &loads))
            .collect::<PyResult<Vec<_>>>()?;
        gnn::predict_many(&self.inner, &graphs).map_err(py_err)
    }

    /// The 48-wide pooled graph embedding.
    fn embedding(&self, arch: &PyArchitecture, loads: Vec<f64>) -> PyResult<Vec<f64>> {
        let g = graph_for(&arch.inner, &loads)?;
        let mut e = gnn::export_embeddings(&self.inner, std::slice::from_ref(&g)).map_err(py_err)?;
        Ok(e.remove(0))
    }
}

#[pyfunction]
fn kendall_tau(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::kendall_tau(&x, &y).map_err(py_err)
}

#[pyfunction]
fn n_ol(j: Vec<f64>, j_hat: Vec<f64>) -> PyResult<usize> {
    metrics::n_ol(&j, &j_hat).map_err(py_err)
}

#[pyfunction]
fn n_sub(j: Vec<f64>, j_hat: Vec<f64>) -> PyResult<usize> {
    metrics::n_sub(&j, &j_hat).map_err(py_err)
}

#[pyfunction]
fn j_sub(j: Vec<f64>, j_hat: Vec<f64>) -> PyResult<f64> {
    metrics::j_sub(&j, &j_hat).map_err(py_err)
}

#[pymodule]
fn coolgraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(enumerate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(label, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(n_ol, m)?)?;
    m.add_function(wrap_pyfunction!(n_sub, m)?)?;
    m.add_function(wrap_pyfunction!(j_sub, m)?)?;
    Ok(())
}
