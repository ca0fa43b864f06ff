//! Python bindings for the tracker.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tracklink::config::RunConfig;
use tracklink::dataio::{generate, read_sequence, write_sequence};
use tracklink::metrics::evaluate;
use tracklink::pipeline::{self, load_model, save_model};
use tracklink::stage1::{solve_assignment as solve, CostMatrix, FORBIDDEN};
use tracklink::{geometry, BBox, Error, SequenceBundle, Tracklet};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn bbox(b: (f64, f64, f64, f64)) -> PyResult<BBox> {
    BBox::new(b.0, b.1, b.2, b.3).map_err(to_py)
}

/// Run configuration. Keys are set with dotted paths, e.g. `stage1.th_c=0.3`.
#[pyclass(name = "Config", module = "tracklink", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(text) => RunConfig::from_json(text).map_err(to_py)?,
            None => RunConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    /// Applies one `key=value` assignment.
    fn set(&mut self, assignment: &str) -> PyResult<()> {
        self.inner.apply_override(assignment).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={})", self.inner.seed)
    }
}

fn config_or_default(cfg: Option<&PyConfig>) -> RunConfig {
    cfg.map_or_else(RunConfig::default, |c| c.inner.clone())
}

/// Detections, embeddings and optional ground truth of one video.
#[pyclass(name = "Sequence", module = "tracklink", skip_from_py_object)]
#[derive(Clone)]
struct PySequence {
    inner: SequenceBundle,
}

#[pymethods]
impl PySequence {
    /// Generates a synthetic sequence from the `synth` section of `config`,
    /// with its seed replaced by `seed`.
    #[staticmethod]
    #[pyo3(signature = (seed, config = None))]
    fn synthetic(seed: u64, config: Option<&PyConfig>) -> PyResult<Self> {
        let mut sc = config_or_default(config).synth;
        sc.seed = seed;
        Ok(PySequence {
            inner: generate(&sc).map_err(to_py)?,
        })
    }

    /// Reads a sequence directory (`seqinfo.ini`, `det.txt`, optional `gt.txt` and `emb.csv`).
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PySequence {
            inner: read_sequence(&dir).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (dir, width = 1280, height = 720))]
    fn save(&self, dir: PathBuf, width: u32, height: u32) -> PyResult<()> {
        write_sequence(&dir, &self.inner, width, height).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.fps
    }

    #[getter]
    fn frame_count(&self) -> u32 {
        self.inner.frame_count
    }

    #[getter]
    fn detection_count(&self) -> usize {
        self.inner.detection_count()
    }

    #[getter]
    fn has_ground_truth(&self) -> bool {
        self.inner.ground_truth.is_some()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(name={:?}, frames={}, detections={})",
            self.inner.name,
            self.inner.frame_count,
            self.inner.detection_count()
        )
    }
}

/// A tracklet or trajectory: one identity over strictly increasing frames.
#[pyclass(name = "Tracklet", module = "tracklink", skip_from_py_object)]
#[derive(Clone)]
struct PyTracklet {
    inner: Tracklet,
}

#[pymethods]
impl PyTracklet {
    #[getter]
    fn id(&self) -> usize {
        self.inner.id()
    }

    #[getter]
    fn frames(&self) -> Vec<u32> {
        self.inner.detections().iter().map(|d| d.frame).collect()
    }

    /// `(left, top, width, height)` per frame.
    #[getter]
    fn boxes(&self) -> Vec<(f64, f64, f64, f64)> {
        self.inner
            .detections()
            .iter()
            .map(|d| (d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Tracklet(id={}, frames={}..{}, len={})",
            self.inner.id(),
            self.inner.start(),
            self.inner.end(),
            self.inner.len()
        )
    }
}

fn unwrap_tracklets(ts: Vec<PyRef<'_, PyTracklet>>) -> Vec<Tracklet> {
    ts.iter().map(|t| t.inner.clone()).collect()
}

fn wrap_tracklets(ts: Vec<Tracklet>) -> Vec<PyTracklet> {
    ts.into_iter().map(|inner| PyTracklet { inner }).collect()
}

/// Trained edge classifier.
#[pyclass(name = "Model", module = "tracklink")]
struct PyModel {
    inner: tracklink::mpnn::ModelParams,
}

#[pymethods]
impl PyModel {
    /// Trains on labeled sequences; returns the model and the per-epoch loss.
    #[staticmethod]
    #[pyo3(signature = (sequences, config = None, jobs = 1))]
    fn train(
        py: Python<'_>,
        sequences: Vec<PyRef<'_, PySequence>>,
        config: Option<&PyConfig>,
        jobs: usize,
    ) -> PyResult<(Self, Vec<f64>)> {
        let cfg = config_or_default(config);
        let bundles: Vec<SequenceBundle> = sequences.iter().map(|s| s.inner.clone()).collect();
        let (inner, report) = py
            .detach(|| pipeline::train_model(&bundles, &cfg, jobs))
            .map_err(to_py)?;
        Ok((PyModel { inner }, report.loss_history))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_model(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.inner).map_err(to_py)
    }

    /// Second stage: returns the merged trajectories and the tracklet count
    /// before and after each level.
    #[pyo3(signature = (tracklets, fps, config = None))]
    fn associate(
        &self,
        tracklets: Vec<PyRef<'_, PyTracklet>>,
        fps: f64,
        config: Option<&PyConfig>,
    ) -> PyResult<(Vec<PyTracklet>, Vec<usize>)> {
        let cfg = config_or_default(config);
        let a = pipeline::associate(&unwrap_tracklets(tracklets), &self.inner, &cfg, fps).map_err(to_py)?;
        Ok((wrap_tracklets(a.trajectories), a.level_counts))
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.size()
    }
}

/// First-stage tracklets of a sequence.
#[pyfunction]
#[pyo3(signature = (sequence, config = None))]
fn track(sequence: &PySequence, config: Option<&PyConfig>) -> PyResult<Vec<PyTracklet>> {
    let cfg = config_or_default(config);
    Ok(wrap_tracklets(pipeline::track(&sequence.inner, &cfg).map_err(to_py)?))
}

/// IDF1, ID switches and purity of `tracklets` against the sequence's ground truth.
#[pyfunction]
#[pyo3(signature = (sequence, tracklets, iou_gate = 0.5))]
fn evaluate_tracks<'py>(
    py: Python<'py>,
    sequence: &PySequence,
    tracklets: Vec<PyRef<'_, PyTracklet>>,
    iou_gate: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let gt = sequence
        .inner
        .ground_truth
        .as_deref()
        .ok_or_else(|| PyValueError::new_err(format!("sequence {} has no ground truth", sequence.inner.name)))?;
    let r = evaluate(gt, &unwrap_tracklets(tracklets), iou_gate);
    let d = PyDict::new(py);
    d.set_item("idf1", r.idf1)?;
    d.set_item("id_switches", r.id_switches)?;
    d.set_item("hpr", r.hpr)?;
    d.set_item("tracklet_count", r.tracklet_count)?;
    d.set_item("idtp", r.idtp)?;
    d.set_item("idfp", r.idfp)?;
    d.set_item("idfn", r.idfn)?;
    Ok(d)
}

/// Minimum-cost assignment; `None` entries are forbidden pairs. Returns
/// the matched `(row, col)` pairs sorted by row.
#[pyfunction]
fn solve_assignment(costs: Vec<Vec<Option<f64>>>) -> PyResult<Vec<(usize, usize)>> {
    let cols = costs.first().map_or(0, Vec::len);
    if costs.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged cost matrix"));
    }
    let rows: Vec<Vec<f64>> = costs
        .iter()
        .map(|r| r.iter().map(|v| v.unwrap_or(FORBIDDEN)).collect())
        .collect();
    if rows.iter().flatten().any(|v| v.is_nan()) {
        return Err(PyValueError::new_err("cost matrix contains NaN"));
    }
    Ok(solve(&CostMatrix::from_rows(&rows)).matches)
}

#[pyfunction]
fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    Ok(geometry::iou(&bbox(a)?, &bbox(b)?))
}

#[pyfunction]
fn giou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    Ok(geometry::giou(&bbox(a)?, &bbox(b)?))
}

#[pymodule]
#[pyo3(name = "tracklink")]
fn tracklink_py<'py>(_py: Python<'py>, m: &Bound<'py, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyTracklet>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_tracks, m)?)?;
    m.add_function(wrap_pyfunction!(solve_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(giou, m)?)?;
    Ok(())
}
