//! Python bindings: meshes, scenes (body, template, skinned garment, drape),
//! models, metrics, dataset generation, evaluation and the gradient suite.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use drapenet::mesh::{obj_read, obj_write, TriMesh, Vec3};
use drapenet::model::{Model as CoreModel, ModelConfig, Variant};
use drapenet::pipeline::{self, Dataset, DrapeSample, GenConfig, Split};
use drapenet::sim::{self, BodyPose, BodyProxy, BodyShape, GarmentSpec, GarmentTemplate, SimConfig, Tessellation};
use drapenet::skinning::dqs;
use drapenet::tensor::{load_checkpoint, save_checkpoint};

fn err(e: drapenet::Error) -> PyErr {
    match e {
        drapenet::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts an optional Python dict (or any JSON-serializable object) into a
/// config struct; missing keys take their defaults.
fn from_py<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    match obj {
        None => Ok(T::default()),
        Some(o) if o.is_none() => Ok(T::default()),
        Some(o) => {
            let text: String = py.import("json")?.call_method1("dumps", (o,))?.extract()?;
            serde_json::from_str(&text).map_err(json_err)
        }
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Mesh", module = "drapenet_py", from_py_object)]
#[derive(Clone)]
pub struct Mesh {
    pub inner: TriMesh,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> PyResult<Self> {
        let vertices = vertices.into_iter().map(Vec3::from).collect();
        Ok(Mesh {
            inner: TriMesh::new(vertices, faces).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read_obj(path: &str) -> PyResult<Self> {
        Ok(Mesh {
            inner: obj_read(path).map_err(err)?,
        })
    }

    fn write_obj(&self, path: &str) -> PyResult<()> {
        obj_write(&self.inner, path).map_err(err)
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices.iter().map(|v| [v.x, v.y, v.z]).collect()
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces.clone()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn face_count(&self) -> usize {
        self.inner.face_count()
    }

    fn face_normals(&self) -> Vec<[f64; 3]> {
        self.inner.face_normals().normals.iter().map(|n| [n.x, n.y, n.z]).collect()
    }

    fn __eq__(&self, other: &Mesh) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Mesh({} vertices, {} faces)", self.inner.vertex_count(), self.inner.face_count())
    }
}

fn mesh(inner: TriMesh) -> Mesh {
    Mesh { inner }
}

/// A posed body with a garment template skinned onto it.
#[pyclass(name = "Scene", module = "drapenet_py")]
pub struct Scene {
    body: BodyProxy,
    template: GarmentTemplate,
    skinned: TriMesh,
}

#[pymethods]
impl Scene {
    #[new]
    #[pyo3(signature = (shape=None, pose=None, garment=None, weight_falloff=0.08, tessellation=None))]
    fn new(
        py: Python<'_>,
        shape: Option<&Bound<'_, PyAny>>,
        pose: Option<&Bound<'_, PyAny>>,
        garment: Option<&Bound<'_, PyAny>>,
        weight_falloff: f64,
        tessellation: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        let shape: BodyShape = from_py(py, shape)?;
        let pose: BodyPose = from_py(py, pose)?;
        let garment: GarmentSpec = from_py(py, garment)?;
        let tess: Tessellation = from_py(py, tessellation)?;
        let template = sim::generate_garment_template(&garment, weight_falloff).map_err(err)?;
        let body = sim::generate_body(&shape, &pose, &tess).map_err(err)?;
        let skeleton = body.skeleton.retargeted(&template.rest_joints).map_err(err)?;
        let skinned = dqs(&template.mesh, &skeleton, &template.weights).map_err(err)?;
        Ok(Scene { body, template, skinned })
    }

    #[getter]
    fn body(&self) -> Mesh {
        mesh(self.body.mesh.clone())
    }

    #[getter]
    fn template(&self) -> Mesh {
        mesh(self.template.mesh.clone())
    }

    #[getter]
    fn skinned(&self) -> Mesh {
        mesh(self.skinned.clone())
    }

    /// Signed distance of a point to the body surface.
    fn signed_distance(&self, point: [f64; 3]) -> f64 {
        self.body.signed_distance(&Vec3::from(point))
    }

    /// Simulates the drape starting from the skinned garment. Returns
    /// `(mesh, converged, steps)`.
    #[pyo3(signature = (sim=None))]
    fn drape(&self, py: Python<'_>, sim: Option<&Bound<'_, PyAny>>) -> PyResult<(Mesh, bool, usize)> {
        let cfg: SimConfig = from_py(py, sim)?;
        let r = sim::drape(&self.skinned, &self.template.mesh, &self.body, &cfg).map_err(err)?;
        Ok((mesh(r.mesh), r.converged, r.steps))
    }
}

fn preset(name: &str, variant: Variant) -> PyResult<ModelConfig> {
    match name {
        "full" => Ok(ModelConfig {
            variant,
            ..Default::default()
        }),
        "desk" => Ok(ModelConfig::desk(variant)),
        "tiny" => Ok(ModelConfig::tiny(variant)),
        other => Err(PyValueError::new_err(format!(
            "unknown preset `{other}` (expected full, desk or tiny)"
        ))),
    }
}

#[pyclass(name = "Model", module = "drapenet_py")]
pub struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    /// A freshly initialized model; its output layer starts at zero, so it
    /// returns the skinned garment unchanged until trained.
    #[new]
    #[pyo3(signature = (variant="local", preset_name="full", seed=0, config=None))]
    fn new(py: Python<'_>, variant: &str, preset_name: &str, seed: u64, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg = match config {
            Some(c) if !c.is_none() => from_py(py, Some(c))?,
            _ => preset(preset_name, variant.parse().map_err(err)?)?,
        };
        Ok(Model {
            inner: CoreModel::new(cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = load_checkpoint(path).map_err(err)?;
        Ok(Model {
            inner: CoreModel::from_checkpoint(ck).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner.to_checkpoint().map_err(err)?, path).map_err(err)
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.config.variant.name()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.names().map(|n| self.inner.params.get(n).map_or(0, |t| t.len())).sum()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Predicted drape of `skinned` on a body given by its surface points.
    #[pyo3(signature = (skinned, body, condition=None))]
    fn run(&self, skinned: &Mesh, body: &Mesh, condition: Option<Vec<f64>>) -> PyResult<Mesh> {
        let input = self.inner.prepare(&skinned.inner, &body.inner.vertices, condition).map_err(err)?;
        Ok(mesh(self.inner.run(&input).map_err(err)?))
    }

    #[pyo3(signature = (scene, condition=None))]
    fn predict(&self, scene: &Scene, condition: Option<Vec<f64>>) -> PyResult<Mesh> {
        let input = self.inner.prepare(&scene.skinned, &scene.body.mesh.vertices, condition).map_err(err)?;
        Ok(mesh(self.inner.run(&input).map_err(err)?))
    }
}

#[pyfunction]
fn e_dist(pred: &Mesh, gt: &Mesh) -> PyResult<f64> {
    drapenet::metrics::e_dist(&pred.inner, &gt.inner).map_err(err)
}

#[pyfunction]
fn e_norm(pred: &Mesh, gt: &Mesh) -> PyResult<f64> {
    drapenet::metrics::e_norm(&pred.inner, &gt.inner).map_err(err)
}

#[pyfunction]
fn normalized_l2_percent(pred: &Mesh, gt: &Mesh) -> PyResult<f64> {
    drapenet::metrics::normalized_l2_percent(&pred.inner, &gt.inner).map_err(err)
}

/// Writes a dataset to `out` and returns its manifest.
#[pyfunction]
#[pyo3(signature = (out, config=None))]
fn generate_dataset<'py>(py: Python<'py>, out: &str, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: GenConfig = from_py(py, config)?;
    cfg.validate().map_err(err)?;
    let manifest = pipeline::generate_dataset(&cfg, std::path::Path::new(out)).map_err(err)?;
    to_py(py, &manifest)
}

/// Reads one stored sample and returns `(skinned, drape, body)`.
#[pyfunction]
fn read_sample(path: &str) -> PyResult<(Mesh, Mesh, Mesh)> {
    let s = DrapeSample::read(path).map_err(err)?;
    Ok((mesh(s.skinned), mesh(s.drape), mesh(s.body)))
}

/// Scores a model and the skinning baseline on one split of a dataset.
#[pyfunction]
#[pyo3(signature = (model, data, split="test"))]
fn evaluate<'py>(py: Python<'py>, model: &Model, data: &str, split: &str) -> PyResult<Bound<'py, PyAny>> {
    let split: Split = split.parse().map_err(err)?;
    let ds = Dataset::open(data).map_err(err)?;
    let loaded = ds.load(split).map_err(err)?;
    let ids: Vec<String> = loaded.iter().map(|(e, _)| e.file.clone()).collect();
    let samples: Vec<DrapeSample> = loaded.into_iter().map(|(_, s)| s).collect();
    let prepared = pipeline::prepare_all(&model.inner.config, &samples, &Default::default()).map_err(err)?;
    let report = pipeline::evaluate(&model.inner, split.name(), &ids, &prepared).map_err(err)?;
    to_py(py, &report)
}

/// Trains `model` in place on the train split, validating on the val split.
/// Returns the training summary; the model keeps the best-validation weights.
#[pyfunction]
#[pyo3(signature = (model, data, config=None, out=None))]
fn train<'py>(
    py: Python<'py>,
    model: &mut Model,
    data: &str,
    config: Option<&Bound<'py, PyAny>>,
    out: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: pipeline::TrainConfig = from_py(py, config)?;
    cfg.validate().map_err(err)?;
    let ds = Dataset::open(data).map_err(err)?;
    let load = |split| -> PyResult<Vec<pipeline::PreparedSample>> {
        let samples: Vec<DrapeSample> = ds.load(split).map_err(err)?.into_iter().map(|(_, s)| s).collect();
        pipeline::prepare_all(&model.inner.config, &samples, &cfg.loss).map_err(err)
    };
    let (tr, val) = (load(Split::Train)?, load(Split::Val)?);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| PyIOError::new_err(format!("{dir}: {e}")))?;
    }
    let outcome =
        pipeline::train(model.inner.clone(), &tr, &val, &cfg, out.map(std::path::Path::new)).map_err(err)?;
    model.inner = outcome.best;
    to_py(py, &outcome.summary)
}

/// Runs the finite-difference gradient suite; one dict per check.
#[pyfunction]
#[pyo3(signature = (instances=10, seed=0))]
fn gradient_suite<'py>(py: Python<'py>, instances: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let rows = pipeline::gradient_suite(instances, seed, pipeline::GRAD_TOLERANCE).map_err(err)?;
    to_py(py, &rows)
}

#[pymodule]
fn drapenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Scene>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(e_dist, m)?)?;
    m.add_function(wrap_pyfunction!(e_norm, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_l2_percent, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_sample, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_suite, m)?)?;
    Ok(())
}
