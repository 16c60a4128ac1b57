//! Python bindings over the core types and operations: message codec,
//! registry search, conversation machine replay, team metrics, and the
//! scenario runner. JSON strings are the interchange format throughout.

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use agenthub::harness::replay;
use agenthub::harness::report::UuidNormalizer;
use agenthub::harness::runner::{self, RunOptions};
use agenthub::protocol;
use agenthub::registry::{AgentProfile, Registry, SearchQuery};
use agenthub::teaming::{self, TeamTree};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Validates a message given as a JSON object string and returns its
/// canonical newline-terminated frame.
#[pyfunction]
fn encode_message(json: &str) -> PyResult<String> {
    let msg: protocol::AgentMessage = serde_json::from_str(json).map_err(value_err)?;
    protocol::encode_message(&msg).map_err(value_err)
}

/// Decodes one frame and returns the canonical JSON of the parsed message.
#[pyfunction]
fn decode_message(frame: &str) -> PyResult<String> {
    let msg = protocol::decode_message(frame).map_err(value_err)?;
    serde_json::to_value(&msg)
        .map(|v| v.to_string())
        .map_err(value_err)
}

/// Lists the invariant violations of a message (empty list = valid).
#[pyfunction]
fn validate_message(json: &str) -> PyResult<Vec<String>> {
    let msg: protocol::AgentMessage = serde_json::from_str(json).map_err(value_err)?;
    Ok(protocol::validate_message(&msg).iter().map(|v| v.to_string()).collect())
}

/// Edge count of a fully connected group of `n` members.
#[pyfunction]
fn edges_full(n: u64) -> u64 {
    teaming::edges_full(n)
}

/// Edge count summed over a team tree given as JSON
/// (`{"comm_id", "members", "depth", "children"}`).
#[pyfunction]
fn edges_nested(tree_json: &str) -> PyResult<u64> {
    let tree: TeamTree = serde_json::from_str(tree_json).map_err(value_err)?;
    Ok(teaming::edges_nested(&tree))
}

/// Replays a transcript log and returns the violations as strings.
#[pyfunction]
fn replay_transcript(path: &str) -> PyResult<Vec<String>> {
    replay::replay_transcript(Path::new(path))
        .map(|violations| violations.iter().map(|v| v.to_string()).collect())
        .map_err(value_err)
}

/// Rewrites UUIDs to stable `uuid-NNNN` names in first-seen order.
#[pyfunction]
fn normalize_transcript(text: &str) -> String {
    let mut normalizer = UuidNormalizer::new();
    text.lines()
        .map(|line| normalizer.normalize(line))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs a scenario file to quiescence and returns the report JSON.
/// `processes=True` runs clients as separate OS processes (requires the
/// `agenthub` binary on PATH or via `worker_bin`).
#[pyfunction]
#[pyo3(signature = (path, processes = false, worker_bin = None))]
fn run_scenario(path: &str, processes: bool, worker_bin: Option<String>) -> PyResult<String> {
    let options = RunOptions {
        processes,
        worker_bin: worker_bin.map(Into::into),
        ..Default::default()
    };
    let report = runner::run_scenario(Path::new(path), &options).map_err(value_err)?;
    serde_json::to_string_pretty(&report).map_err(value_err)
}

/// In-memory agent registry with deterministic TF-IDF cosine search.
#[pyclass(name = "Registry")]
struct PyRegistry {
    inner: Registry,
}

#[pymethods]
impl PyRegistry {
    #[new]
    fn new() -> Self {
        PyRegistry { inner: Registry::new() }
    }

    fn register(&mut self, name: &str, agent_type: &str, description: &str) -> PyResult<()> {
        self.inner
            .register_agent(AgentProfile::new(name, agent_type, description))
            .map(|_| ())
            .map_err(value_err)
    }

    fn deregister(&mut self, name: &str) -> PyResult<()> {
        self.inner.deregister_agent(name).map_err(value_err)
    }

    fn describe(&self, name: &str) -> PyResult<String> {
        self.inner
            .get_profile(name)
            .map(|p| p.agent_description.clone())
            .map_err(value_err)
    }

    #[pyo3(signature = (characteristics, limit = 10))]
    fn search(&self, characteristics: Vec<String>, limit: usize) -> Vec<(String, f64)> {
        self.inner
            .search_agents(&SearchQuery { characteristics, limit })
            .into_iter()
            .map(|(p, score)| (p.agent_name, score))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pymodule]
fn agenthub_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(encode_message, m)?)?;
    m.add_function(wrap_pyfunction!(decode_message, m)?)?;
    m.add_function(wrap_pyfunction!(validate_message, m)?)?;
    m.add_function(wrap_pyfunction!(edges_full, m)?)?;
    m.add_function(wrap_pyfunction!(edges_nested, m)?)?;
    m.add_function(wrap_pyfunction!(replay_transcript, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_transcript, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_class::<PyRegistry>()?;
    Ok(())
}
