//! Python bindings: masks and geometric functionals, filtering, Chamfer
//! distance, metrics, synthetic data and the classifier workflows.

use std::path::PathBuf;

use cafo_core::chamfer;
use cafo_core::config::PipelineConfig;
use cafo_core::dataset::{Manifest, Split};
use cafo_core::geometry::{accepted_indices, geometric_functionals, Candidate, DetectionBox, FilterThresholds};
use cafo_core::mask::{BinaryMask, CocoRle, PixelRect};
use cafo_core::metrics;
use cafo_core::model::ModelState;
use cafo_core::pipeline;
use cafo_core::synth;
use cafo_core::taxonomy::{Taxonomy, CLASS_NAMES};
use cafo_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

pub fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rect(b: (u32, u32, u32, u32)) -> PixelRect {
    PixelRect::new(b.0, b.1, b.2, b.3)
}

/// Binary mask stored as column-major run lengths.
#[pyclass(name = "Mask", module = "cafo", from_py_object)]
#[derive(Clone, Debug, PartialEq)]
pub struct PyMask {
    pub inner: BinaryMask,
}

#[pymethods]
impl PyMask {
    /// Mask from rows of booleans (`rows[y][x]`).
    #[staticmethod]
    pub fn from_rows(rows: Vec<Vec<bool>>) -> PyResult<Self> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len()) as u32;
        if rows.iter().any(|r| r.len() as u32 != width) {
            return Err(PyValueError::new_err("rows have different lengths"));
        }
        let dense: Vec<bool> = rows.into_iter().flatten().collect();
        Ok(Self {
            inner: BinaryMask::from_dense(width, height, &dense).map_err(to_py)?,
        })
    }

    /// Filled rectangle `(x0, y0, x1, y1)`, half-open.
    #[staticmethod]
    pub fn rectangle(width: u32, height: u32, bbox: (u32, u32, u32, u32)) -> PyResult<Self> {
        Ok(Self {
            inner: BinaryMask::rect(width, height, rect(bbox)).map_err(to_py)?,
        })
    }

    /// Mask from a COCO RLE `size` (`[height, width]`) and compressed counts.
    #[staticmethod]
    pub fn from_coco(size: [u32; 2], counts: String) -> PyResult<Self> {
        Ok(Self {
            inner: BinaryMask::from_coco(&CocoRle { size, counts }).map_err(to_py)?,
        })
    }

    /// `(size, counts)` in COCO compressed form.
    pub fn to_coco(&self) -> ([u32; 2], String) {
        let r = self.inner.to_coco();
        (r.size, r.counts)
    }

    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        let w = self.inner.width() as usize;
        self.inner.to_dense().chunks(w.max(1)).map(|c| c.to_vec()).collect()
    }

    #[getter]
    pub fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    pub fn height(&self) -> u32 {
        self.inner.height()
    }

    pub fn area(&self) -> u64 {
        self.inner.area()
    }

    /// Tight bounding box, or `None` for an empty mask.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        self.inner.bbox().map(|r| (r.x0, r.y0, r.x1, r.y1))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self == other
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, area={})", self.inner.width(), self.inner.height(), self.inner.area())
    }
}

/// Containment, coverage, rectangularity and relative size of `mask`
/// against a box `(x0, y0, x1, y1)`.
#[pyfunction]
pub fn functionals<'py>(py: Python<'py>, mask: &PyMask, bbox: (u32, u32, u32, u32)) -> PyResult<Bound<'py, PyDict>> {
    let f = geometric_functionals(&mask.inner, &DetectionBox::new(rect(bbox), 0, 1.0)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("containment", f.containment)?;
    d.set_item("coverage", f.coverage)?;
    d.set_item("rectangularity", f.rectangularity)?;
    d.set_item("relative_size", f.relative_size)?;
    Ok(d)
}

/// Indices of the candidates accepted by the default category rules.
/// `thresholds` optionally overrides rule thresholds by name.
#[pyfunction]
#[pyo3(signature = (masks, boxes, categories, thresholds=None))]
pub fn filter_indices(
    masks: Vec<PyMask>,
    boxes: Vec<(u32, u32, u32, u32)>,
    categories: Vec<usize>,
    thresholds: Option<String>,
) -> PyResult<Vec<usize>> {
    if masks.len() != boxes.len() || masks.len() != categories.len() {
        return Err(PyValueError::new_err("masks, boxes and categories differ in length"));
    }
    let th: FilterThresholds = match thresholds {
        Some(json) => serde_json::from_str(&json).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => FilterThresholds::default(),
    };
    th.validate().map_err(to_py)?;
    let cands: Vec<Candidate> = masks
        .into_iter()
        .zip(boxes)
        .zip(categories)
        .map(|((m, b), k)| Candidate::new(m.inner, DetectionBox::new(rect(b), k, 1.0)))
        .collect();
    accepted_indices(&cands, &th, &Taxonomy::default()).map_err(to_py)
}

/// Symmetric Chamfer distance normalized by the image diagonal (1.0 when
/// either mask is empty).
#[pyfunction]
pub fn chamfer_distance(a: &PyMask, b: &PyMask) -> PyResult<f64> {
    chamfer::chamfer_distance(&a.inner, &b.inner).map_err(to_py)
}

/// Per-class F1 and macro-F1 over the five classes.
#[pyfunction]
pub fn evaluate(predictions: Vec<usize>, labels: Vec<usize>) -> PyResult<(Vec<f64>, f64)> {
    let r = metrics::evaluate(&predictions, &labels, CLASS_NAMES.len()).map_err(to_py)?;
    Ok((r.per_class, r.macro_f1))
}

#[pyfunction]
pub fn class_names() -> Vec<&'static str> {
    CLASS_NAMES.to_vec()
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    let cfg: PipelineConfig = match json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn split(name: Option<&str>) -> PyResult<Option<Split>> {
    name.map(|s| s.parse().map_err(to_py)).transpose()
}

/// Writes a synthetic dataset to `out` and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out, n, seed=0, config_json=None))]
pub fn synthesize(out: PathBuf, n: usize, seed: u64, config_json: Option<&str>) -> PyResult<PathBuf> {
    let cfg = config(config_json)?;
    synth::generate(&cfg.synth, &cfg.taxonomy, n, seed)
        .and_then(|d| d.write(&out, &cfg.thresholds))
        .map_err(to_py)?;
    Ok(out.join("manifest.json"))
}

/// Trained classifier head.
#[pyclass(name = "Model", module = "cafo")]
pub struct PyModel {
    pub state: ModelState,
}

#[pymethods]
impl PyModel {
    /// Trains on the manifest's train split, selecting on its val split.
    /// Returns the model and the per-epoch validation macro-F1.
    #[staticmethod]
    #[pyo3(signature = (manifest, config_json=None))]
    pub fn train(manifest: PathBuf, config_json: Option<&str>) -> PyResult<(Self, Vec<f64>)> {
        let cfg = config(config_json)?;
        let m = Manifest::load(&manifest).map_err(to_py)?;
        let (state, report) = pipeline::train_manifest(&m, &cfg).map_err(to_py)?;
        Ok((Self { state }, report.val_macro_f1))
    }

    #[staticmethod]
    pub fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            state: ModelState::load(&path).map_err(to_py)?,
        })
    }

    pub fn save(&self, path: PathBuf) -> PyResult<()> {
        self.state.save(&path).map_err(to_py)
    }

    /// `(image_id, class name, probabilities)` for one split, or all records.
    #[pyo3(signature = (manifest, split_name=None))]
    pub fn predict(&self, manifest: PathBuf, split_name: Option<&str>) -> PyResult<Vec<(String, String, Vec<f64>)>> {
        let m = Manifest::load(&manifest).map_err(to_py)?;
        let preds = pipeline::predict_manifest(&self.state, &m, split(split_name)?).map_err(to_py)?;
        Ok(preds.into_iter().map(|p| (p.image_id, p.label, p.probs)).collect())
    }

    /// Writes feature importance, channel importance and heatmaps to `out`;
    /// returns the number of explained scenes.
    #[pyo3(signature = (manifest, out, split_name=None))]
    pub fn explain(&self, manifest: PathBuf, out: PathBuf, split_name: Option<&str>) -> PyResult<usize> {
        let m = Manifest::load(&manifest).map_err(to_py)?;
        let scenes = pipeline::load_scenes(&m, split(split_name)?).map_err(to_py)?;
        let ex = pipeline::explain_scenes(&self.state, &scenes, &out).map_err(to_py)?;
        Ok(ex.features.len())
    }

    /// Names of the head inputs that carry prior features.
    pub fn prior_slots(&self) -> Vec<String> {
        cafo_core::priors::slot_names(&self.state.taxonomy)
    }
}

#[pymodule]
fn cafo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(functionals, m)?)?;
    m.add_function(wrap_pyfunction!(filter_indices, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_distance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
