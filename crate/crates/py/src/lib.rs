//! Python bindings: corpora, campaigns, replay, clustering and metrics.

use ::scenariofuzz as sf;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sf::analysis::AnalyzeOptions;
use sf::corpus::{build_corpus, CorpusParams, SeedCorpus};
use sf::fuzz::{run_campaign as run, Budget, FuzzConfig, StateStore, StrategyMode};
use sf::map::{build_topology, parse_opendrive, RoadNetwork};
use sf::sim::{agent_by_name, MapContext};
use std::path::PathBuf;

fn runtime(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serialize through JSON into plain Python objects.
fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(v).map_err(runtime)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn network(map: &str) -> PyResult<RoadNetwork> {
    let path = PathBuf::from(map);
    let text = if path.is_file() {
        std::fs::read_to_string(&path).map_err(runtime)?
    } else {
        sf::fixtures::xodr(map)
            .ok_or_else(|| value(format!("`{map}` is neither a file nor a bundled map")))?
            .to_string()
    };
    let mut net = parse_opendrive(&text).map_err(value)?;
    if net.name.is_empty() {
        net.name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(map).to_string();
    }
    Ok(net)
}

/// Scenario seeds of one map together with the parsed road network.
#[pyclass(module = "scenariofuzz")]
struct Corpus {
    corpus: SeedCorpus,
    net: RoadNetwork,
}

#[pymethods]
impl Corpus {
    /// Build from an OpenDRIVE file or a bundled map name.
    #[staticmethod]
    #[pyo3(signature = (map, spacing=None))]
    fn build(map: &str, spacing: Option<f64>) -> PyResult<Corpus> {
        let net = network(map)?;
        let mut params = CorpusParams::default();
        if let Some(s) = spacing {
            params.spacing = s;
        }
        let graph = build_topology(&net, params.spacing).map_err(value)?;
        let corpus = build_corpus(&net, &graph, &params).map_err(runtime)?;
        Ok(Corpus { corpus, net })
    }

    #[staticmethod]
    fn load(dir: PathBuf, map: &str) -> PyResult<Corpus> {
        let (corpus, net) = SeedCorpus::load(&dir, map).map_err(runtime)?;
        Ok(Corpus { corpus, net })
    }

    /// Write `<dir>/<map>.json` and its network; returns the corpus path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        self.corpus.save(&dir, &self.net).map_err(runtime)
    }

    #[getter]
    fn map(&self) -> String {
        self.corpus.map.clone()
    }

    fn __len__(&self) -> usize {
        self.corpus.seeds.len()
    }

    /// One dict per seed: id, road type, light count, path directions.
    fn seeds(&self, py: Python<'_>) -> PyResult<Vec<PyObject>> {
        self.corpus
            .seeds
            .iter()
            .map(|s| {
                let d = serde_json::json!({
                    "id": s.id,
                    "road_type": s.road_type,
                    "traffic_lights": s.traffic_lights.len(),
                    "waypoints": s.waypoints.len(),
                    "directions": s.paths.iter().map(|p| p.direction).collect::<Vec<_>>(),
                });
                to_py(py, &d)
            })
            .collect()
    }

    fn to_json(&self) -> String {
        self.corpus.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Corpus(map={:?}, seeds={})", self.corpus.map, self.corpus.seeds.len())
    }
}

/// Names of the bundled example maps.
#[pyfunction]
fn bundled_maps() -> Vec<&'static str> {
    sf::fixtures::MAP_NAMES.to_vec()
}

/// Names of the built-in agents.
#[pyfunction]
fn agents() -> Vec<&'static str> {
    sf::sim::AGENT_NAMES.to_vec()
}

/// Run a campaign and return its report as a dict.
#[pyfunction]
#[pyo3(signature = (corpus, agent, executions, mode="2SMS+SEM", rng_seed=0, config_toml=None, state_dir=None))]
#[allow(clippy::too_many_arguments)]
fn run_campaign(
    py: Python<'_>,
    corpus: &Corpus,
    agent: &str,
    executions: usize,
    mode: &str,
    rng_seed: u64,
    config_toml: Option<&str>,
    state_dir: Option<PathBuf>,
) -> PyResult<PyObject> {
    let mut cfg = match config_toml {
        Some(t) => FuzzConfig::from_toml(t).map_err(value)?,
        None => FuzzConfig::default(),
    };
    if config_toml.is_none() {
        cfg.mode = StrategyMode::parse(mode).ok_or_else(|| value(format!("unknown mode `{mode}`")))?;
    }
    cfg.rng_seed = rng_seed;
    cfg.budget = Budget {
        executions: Some(executions),
        seconds: None,
    };
    let mut a = agent_by_name(agent).ok_or_else(|| value(format!("unknown agent `{agent}`")))?;
    let ctx = MapContext::new(corpus.net.clone(), corpus.corpus.params.spacing).map_err(runtime)?;
    let report = run(&cfg, &corpus.corpus, &ctx, a.as_mut(), state_dir.as_deref()).map_err(runtime)?;
    to_py(py, &report)
}

/// Replay a stored error scenario with its recorded agent.
#[pyfunction]
fn replay(py: Python<'_>, state_dir: PathBuf, id: &str) -> PyResult<PyObject> {
    let store = StateStore { root: state_dir };
    let r = sf::analysis::replay(&store, id, None).map_err(runtime)?;
    to_py(py, &r)
}

/// Cluster the crash scenarios of a campaign state directory.
#[pyfunction]
#[pyo3(signature = (state_dir, k=None, epochs=None, rng_seed=0))]
fn analyze(py: Python<'_>, state_dir: PathBuf, k: Option<usize>, epochs: Option<usize>, rng_seed: u64) -> PyResult<PyObject> {
    let store = StateStore { root: state_dir };
    let mut opts = AnalyzeOptions {
        k,
        seed: rng_seed,
        ..AnalyzeOptions::default()
    };
    if let Some(e) = epochs {
        opts.encoder.epochs = e;
    }
    let r = sf::analysis::analyze_state(&store, &opts).map_err(runtime)?;
    to_py(py, &r)
}

/// k-means with silhouette selection over rows of `data`; returns (k, labels, silhouette).
#[pyfunction]
#[pyo3(signature = (data, k=None, seed=0))]
fn cluster(data: Vec<Vec<f64>>, k: Option<usize>, seed: u64) -> PyResult<(usize, Vec<usize>, f64)> {
    let cols = data.first().map_or(0, Vec::len);
    if data.iter().any(|r| r.len() != cols) {
        return Err(value("rows differ in length"));
    }
    let m = ndarray::Array2::from_shape_vec((data.len(), cols), data.concat()).map_err(value)?;
    let c = sf::analysis::cluster(&m, k, seed).map_err(value)?;
    Ok((c.k, c.labels, c.silhouette))
}

#[pyfunction]
fn adjusted_rand_index(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(value("label vectors differ in length"));
    }
    Ok(sf::analysis::adjusted_rand_index(&a, &b))
}

/// Accuracy, precision, recall, loss, Brier and Pearson of confidences against labels.
#[pyfunction]
fn evaluate_scores(py: Python<'_>, scores: Vec<f64>, labels: Vec<bool>) -> PyResult<PyObject> {
    if scores.len() != labels.len() {
        return Err(value("one score per label"));
    }
    to_py(py, &sf::sem::evaluate_scores(&scores, &labels))
}

#[pymodule]
#[pyo3(name = "scenariofuzz")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_function(wrap_pyfunction!(bundled_maps, m)?)?;
    m.add_function(wrap_pyfunction!(agents, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(adjusted_rand_index, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_scores, m)?)?;
    Ok(())
}
