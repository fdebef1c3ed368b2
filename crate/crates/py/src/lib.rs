//! Python bindings for `zoomprop`.

// pyo3 0.22 macro expansion trips this lint on every `PyResult` function
#![allow(clippy::useless_conversion)]

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use zoomprop::eval::{recall_with, Matching};
use zoomprop::features::{load_features, roi_pool, save_features};
use zoomprop::geometry::{self, CornerDeltas, OverlapThresholds};
use zoomprop::pipeline::{dense_baseline, propose as run_propose, PipelineConfig, Proposer};
use zoomprop::scnet::{self, load_model, save_model};
use zoomprop::synth::{self, SynthConfig};
use zoomprop::windows::{self, Frame, WindowSpec};
use zoomprop::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "BBox", frozen, module = "zoomprop")]
#[derive(Clone, Copy)]
struct PyBBox(geometry::BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> PyResult<Self> {
        geometry::BBox::new(x1, y1, x2, y2).map(PyBBox).map_err(py_err)
    }

    #[getter]
    fn x1(&self) -> f64 {
        self.0.x1()
    }
    #[getter]
    fn y1(&self) -> f64 {
        self.0.y1()
    }
    #[getter]
    fn x2(&self) -> f64 {
        self.0.x2()
    }
    #[getter]
    fn y2(&self) -> f64 {
        self.0.y2()
    }
    #[getter]
    fn width(&self) -> f64 {
        self.0.width()
    }
    #[getter]
    fn height(&self) -> f64 {
        self.0.height()
    }
    #[getter]
    fn area(&self) -> f64 {
        self.0.area()
    }

    fn corners(&self) -> (f64, f64, f64, f64) {
        let [a, b, c, d] = self.0.corners();
        (a, b, c, d)
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        geometry::iou(&self.0, &other.0)
    }

    fn contains(&self, other: &PyBBox) -> bool {
        self.0.contains(&other.0)
    }

    fn __eq__(&self, other: &PyBBox) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        let [a, b, c, d] = self.0.corners();
        format!("BBox({a}, {b}, {c}, {d})")
    }
}

fn boxes(v: Vec<geometry::BBox>) -> Vec<PyBBox> {
    v.into_iter().map(PyBBox).collect()
}

fn unwrap_boxes(v: &[PyBBox]) -> Vec<geometry::BBox> {
    v.iter().map(|b| b.0).collect()
}

#[pyfunction]
fn iou(a: &PyBBox, b: &PyBBox) -> f64 {
    geometry::iou(&a.0, &b.0)
}

#[pyfunction]
#[pyo3(signature = (roi, gt, low = 0.1, high = 0.7))]
fn classify_overlap_pattern(roi: &PyBBox, gt: &PyBBox, low: f64, high: f64) -> Option<usize> {
    geometry::classify_overlap_pattern(&roi.0, &gt.0, OverlapThresholds { low, high }).map(|p| p.value())
}

#[pyfunction]
fn roi_relative_corners(roi: &PyBBox, target: &PyBBox) -> (f64, f64, f64, f64) {
    let [a, b, c, d] = geometry::roi_relative_corners(&roi.0, &target.0).to_array();
    (a, b, c, d)
}

#[pyfunction]
fn apply_deltas(roi: &PyBBox, deltas: (f64, f64, f64, f64)) -> PyResult<PyBBox> {
    let d = CornerDeltas::new(deltas.0, deltas.1, deltas.2, deltas.3);
    geometry::apply_deltas(&roi.0, &d).map(PyBBox).map_err(py_err)
}

fn frame(width: f64, height: f64) -> PyResult<Frame> {
    Frame::image(width, height).map_err(py_err)
}

#[pyfunction]
fn coarse_windows(width: f64, height: f64) -> PyResult<Vec<PyBBox>> {
    windows::coarse_windows(&frame(width, height)?).map(boxes).map_err(py_err)
}

#[pyfunction]
fn dense_windows(width: f64, height: f64) -> PyResult<Vec<PyBBox>> {
    windows::dense_windows(&frame(width, height)?).map(boxes).map_err(py_err)
}

#[pyfunction]
fn cover_regions(width: f64, height: f64) -> PyResult<Vec<PyBBox>> {
    windows::cover_regions(&frame(width, height)?).map(boxes).map_err(py_err)
}

/// Windows of the given side ratios inside `region`.
#[pyfunction]
fn sliding_windows(region: &PyBBox, side_ratios: Vec<f64>, step_fraction: f64) -> PyResult<Vec<PyBBox>> {
    let spec = WindowSpec::new(side_ratios, step_fraction).map_err(py_err)?;
    windows::sliding_windows(&Frame::from_box(&region.0), &spec)
        .map(boxes)
        .map_err(py_err)
}

#[pyclass(name = "FeatureImage", module = "zoomprop")]
#[derive(Clone)]
struct PyFeatureImage(zoomprop::FeatureImage);

#[pymethods]
impl PyFeatureImage {
    #[new]
    fn new(channels: usize, height: usize, width: usize, stride: f32, data: Vec<f32>) -> PyResult<Self> {
        zoomprop::FeatureImage::new(channels, height, width, stride, data)
            .map(PyFeatureImage)
            .map_err(py_err)
    }

    #[staticmethod]
    fn zeros(channels: usize, height: usize, width: usize, stride: f32) -> PyResult<Self> {
        zoomprop::FeatureImage::zeros(channels, height, width, stride)
            .map(PyFeatureImage)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_features(path).map(PyFeatureImage).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_features(&self.0, path).map_err(py_err)
    }

    /// `(channels, height, width)`
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.channels(), self.0.height(), self.0.width())
    }

    #[getter]
    fn stride(&self) -> f64 {
        self.0.stride()
    }

    fn get(&self, c: usize, y: usize, x: usize) -> PyResult<f32> {
        self.check(c, y, x)?;
        Ok(self.0.get(c, y, x))
    }

    fn set(&mut self, c: usize, y: usize, x: usize, value: f32) -> PyResult<()> {
        self.check(c, y, x)?;
        self.0.set(c, y, x, value);
        Ok(())
    }

    /// Channel-major values.
    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn roi_pool(&self, roi: &PyBBox, grid: usize) -> PyResult<Vec<f32>> {
        roi_pool(&self.0, &roi.0, grid).map(|p| p.0).map_err(py_err)
    }
}

impl PyFeatureImage {
    fn check(&self, c: usize, y: usize, x: usize) -> PyResult<()> {
        if c < self.0.channels() && y < self.0.height() && x < self.0.width() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!("cell ({c}, {y}, {x}) out of range")))
        }
    }
}

#[pyclass(name = "Scene", module = "zoomprop")]
#[derive(Clone)]
struct PyScene(synth::Scene);

#[pymethods]
impl PyScene {
    #[getter]
    fn image_id(&self) -> String {
        self.0.image_id.clone()
    }
    #[getter]
    fn width(&self) -> u32 {
        self.0.width
    }
    #[getter]
    fn height(&self) -> u32 {
        self.0.height
    }
    #[getter]
    fn boxes(&self) -> Vec<PyBBox> {
        boxes(self.0.gt_boxes())
    }
    #[getter]
    fn classes(&self) -> Vec<&'static str> {
        self.0.objects.iter().map(|o| o.class.as_str()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({:?}, {}x{}, {} objects)",
            self.0.image_id,
            self.0.width,
            self.0.height,
            self.0.objects.len()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (seed, image_id = "scene", width = 2400, height = 1800))]
fn gen_scene(seed: u64, image_id: &str, width: u32, height: u32) -> PyResult<PyScene> {
    let cfg = SynthConfig {
        width: (width, width),
        height: (height, height),
        ..SynthConfig::default()
    };
    synth::gen_scene(&cfg, seed, image_id).map(PyScene).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (scene, channels = 16, stride = 16.0, sigma = 0.1, seed = 0))]
fn render_features(scene: &PyScene, channels: usize, stride: f32, sigma: f64, seed: u64) -> PyResult<PyFeatureImage> {
    synth::render_features(&scene.0, channels, stride, sigma, seed)
        .map(PyFeatureImage)
        .map_err(py_err)
}

#[pyclass(name = "ScNetModel", module = "zoomprop")]
#[derive(Clone)]
struct PyModel(scnet::ScNetModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (input_dim, hidden_dim = 64, patterns = 13, seed = 0))]
    fn init(input_dim: usize, hidden_dim: usize, patterns: usize, seed: u64) -> Self {
        PyModel(scnet::ScNetModel::init(input_dim, hidden_dim, patterns, seed))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_model(path).map(PyModel).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    /// `{"zoom": u, "confidences": [K], "deltas": [K x (dx1, dy1, dx2, dy2)]}`
    fn forward<'py>(&self, py: Python<'py>, pooled: Vec<f32>) -> PyResult<Bound<'py, PyDict>> {
        let out = self.0.forward(&pooled).map_err(py_err)?;
        let d = PyDict::new_bound(py);
        d.set_item("zoom", out.zoom())?;
        d.set_item("confidences", out.confidences())?;
        let deltas: Vec<(f64, f64, f64, f64)> = (0..out.patterns())
            .map(|k| {
                let [a, b, c, e] = out.corner_deltas(k).to_array();
                (a, b, c, e)
            })
            .collect();
        d.set_item("deltas", deltas)?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(signature = (roi, gts, low = 0.1, high = 0.7))]
fn make_labels<'py>(
    py: Python<'py>,
    roi: &PyBBox,
    gts: Vec<PyBBox>,
    low: f64,
    high: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let l = scnet::make_labels(&roi.0, &unwrap_boxes(&gts), OverlapThresholds { low, high });
    let d = PyDict::new_bound(py);
    d.set_item("zoom_label", l.zoom_label)?;
    d.set_item("pattern", l.assigned_pattern().map(|p| p.value()))?;
    d.set_item("conf_labels", l.conf_labels.clone())?;
    d.set_item("delta_weights", l.delta_weights.clone())?;
    Ok(d)
}

type Proposal = (PyBBox, f64, String);

/// Returns `(proposals, counters)` where proposals are `(BBox, score, provenance)`.
#[pyfunction]
#[pyo3(signature = (
    feat, width, height, model, strategy = "zoom", zoom_threshold = 0.5, conf_threshold = 0.001,
    max_zoom_regions = 8, pool_grid = 4, dedupe_iou = 0.95, external = None
))]
#[allow(clippy::too_many_arguments)]
fn propose<'py>(
    py: Python<'py>,
    feat: &PyFeatureImage,
    width: f64,
    height: f64,
    model: &PyModel,
    strategy: &str,
    zoom_threshold: f64,
    conf_threshold: f64,
    max_zoom_regions: usize,
    pool_grid: usize,
    dedupe_iou: f64,
    external: Option<Vec<PyBBox>>,
) -> PyResult<(Vec<Proposal>, Bound<'py, PyDict>)> {
    let image = frame(width, height)?;
    let mut cfg = PipelineConfig {
        zoom_threshold,
        conf_threshold,
        max_zoom_regions,
        pool_grid,
        dedupe_iou,
        ..PipelineConfig::default()
    };
    let out = match strategy {
        "zoom" => run_propose(&feat.0, &image, &model.0, &cfg),
        "dense" => dense_baseline(&feat.0, &image, &model.0, &cfg),
        "external" => {
            let ext = external.ok_or_else(|| PyValueError::new_err("external strategy needs boxes"))?;
            cfg.proposer = Proposer::External(unwrap_boxes(&ext));
            run_propose(&feat.0, &image, &model.0, &cfg)
        }
        other => return Err(PyValueError::new_err(format!("unknown strategy {other:?}"))),
    }
    .map_err(py_err)?;
    let props = out
        .boxes
        .iter()
        .map(|b| (PyBBox(b.bbox), b.score, b.provenance.to_string()))
        .collect();
    let c = PyDict::new_bound(py);
    c.set_item("windows_generated", out.counters.windows_generated)?;
    c.set_item("rois_pooled", out.counters.rois_pooled)?;
    c.set_item("scnet_evaluations", out.counters.scnet_evaluations)?;
    c.set_item("zoom_regions_selected", out.counters.zoom_regions_selected)?;
    Ok((props, c))
}

#[pyfunction]
#[pyo3(signature = (proposals, gts, iou_min = 0.5, matching = "existence"))]
fn recall(proposals: Vec<PyBBox>, gts: Vec<PyBBox>, iou_min: f64, matching: &str) -> PyResult<f64> {
    let m: Matching = matching.parse().map_err(py_err)?;
    Ok(recall_with(&unwrap_boxes(&proposals), &unwrap_boxes(&gts), iou_min, m))
}

#[pymodule]
#[pyo3(name = "zoomprop")]
fn zoomprop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyFeatureImage>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyModel>()?;
    m.add("PATTERN_COUNT", geometry::PatternIndex::COUNT)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(classify_overlap_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(roi_relative_corners, m)?)?;
    m.add_function(wrap_pyfunction!(apply_deltas, m)?)?;
    m.add_function(wrap_pyfunction!(coarse_windows, m)?)?;
    m.add_function(wrap_pyfunction!(dense_windows, m)?)?;
    m.add_function(wrap_pyfunction!(cover_regions, m)?)?;
    m.add_function(wrap_pyfunction!(sliding_windows, m)?)?;
    m.add_function(wrap_pyfunction!(gen_scene, m)?)?;
    m.add_function(wrap_pyfunction!(render_features, m)?)?;
    m.add_function(wrap_pyfunction!(make_labels, m)?)?;
    m.add_function(wrap_pyfunction!(propose, m)?)?;
    m.add_function(wrap_pyfunction!(recall, m)?)?;
    Ok(())
}
