//! Python bindings for `posematch`.

use std::sync::{Arc, Mutex};

use pyo3::exceptions::{PyConnectionError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use posematch::backend::{Backend as CoreBackend, DegradationModel, OracleBackend};
use posematch::bench::{self, DatasetSpec, EvalConfig};
use posematch::geometry;
use posematch::remote::{self, RemoteBackend, RemoteConfig, ServerHandle, ServerOptions};
use posematch::search::{self, EstimateConfig, MatchingScheme};
use posematch::{Error, ImageBuffer, NoiseSchedule, ViewChange};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Unreachable(_) => PyConnectionError::new_err(msg),
        Error::Io(_) => PyIOError::new_err(msg),
        _ if e.is_backend() => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// Camera on a sphere around the object, angles in degrees.
#[pyclass(frozen, skip_from_py_object, module = "pyposematch")]
#[derive(Clone, Copy)]
struct Viewpoint(posematch::Viewpoint);

#[pymethods]
impl Viewpoint {
    #[new]
    #[pyo3(signature = (elevation_deg, azimuth_deg, radius = 1.0))]
    fn new(elevation_deg: f64, azimuth_deg: f64, radius: f64) -> PyResult<Self> {
        posematch::Viewpoint::new(elevation_deg, azimuth_deg, radius).map(Viewpoint).map_err(py_err)
    }

    #[getter]
    fn elevation_deg(&self) -> f64 {
        self.0.elevation_deg()
    }

    #[getter]
    fn azimuth_deg(&self) -> f64 {
        self.0.azimuth_deg()
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.0.radius()
    }

    #[pyo3(signature = (d_elevation_deg, d_azimuth_deg, d_radius = 0.0))]
    fn displaced(&self, d_elevation_deg: f64, d_azimuth_deg: f64, d_radius: f64) -> PyResult<Self> {
        self.0
            .displaced(&ViewChange::new(d_elevation_deg, d_azimuth_deg, d_radius))
            .map(Viewpoint)
            .map_err(py_err)
    }

    /// Relative change `(d_elevation, d_azimuth, d_radius)` that takes self to `other`.
    fn change_to(&self, other: &Viewpoint) -> (f64, f64, f64) {
        let c = geometry::relative_change(&self.0, &other.0);
        (c.d_elevation_deg, c.d_azimuth_deg, c.d_radius)
    }

    /// Rotation error in degrees between the look-at cameras.
    fn error_to(&self, other: &Viewpoint) -> PyResult<f64> {
        geometry::viewpoint_error_deg(&self.0, &other.0).map_err(py_err)
    }

    fn __eq__(&self, other: &Viewpoint) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "Viewpoint(elevation_deg={}, azimuth_deg={}, radius={})",
            self.0.elevation_deg(),
            self.0.azimuth_deg(),
            self.0.radius()
        )
    }
}

/// RGB image with pixels in [0, 1] and PNG text metadata.
#[pyclass(frozen, skip_from_py_object, module = "pyposematch")]
#[derive(Clone)]
struct Image(ImageBuffer);

#[pymethods]
impl Image {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        ImageBuffer::load_png(path).map(Image).map_err(py_err)
    }

    #[staticmethod]
    fn from_png(data: &[u8]) -> PyResult<Self> {
        ImageBuffer::from_png_bytes(data).map(Image).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save_png(path).map_err(py_err)
    }

    fn to_png(&self) -> PyResult<Vec<u8>> {
        self.0.to_png_bytes().map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    /// Row-major HWC pixel values.
    fn pixels(&self) -> Vec<f32> {
        self.0.pixels().to_vec()
    }

    fn meta(&self, key: &str) -> Option<String> {
        self.0.meta(key).map(str::to_owned)
    }

    fn distance(&self, other: &Image) -> PyResult<f64> {
        self.0.pixel_distance(&other.0).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.width(), self.0.height())
    }
}

/// A generation backend: the synthetic oracle or a remote server.
#[pyclass(frozen, module = "pyposematch")]
struct Backend {
    inner: Arc<dyn CoreBackend>,
    oracle: Option<Arc<OracleBackend>>,
}

#[pymethods]
impl Backend {
    #[staticmethod]
    #[pyo3(signature = (gain = 0.0, exponent = 1.0, size = 64))]
    fn oracle(gain: f64, exponent: f64, size: usize) -> PyResult<Self> {
        let degradation = DegradationModel::new(gain, exponent).map_err(py_err)?;
        let b = Arc::new(OracleBackend::new(degradation, NoiseSchedule::default(), size).map_err(py_err)?);
        Ok(Backend { inner: b.clone(), oracle: Some(b) })
    }

    #[staticmethod]
    #[pyo3(signature = (url, timeout_ms = 60_000, retry_limit = 2))]
    fn remote(py: Python<'_>, url: String, timeout_ms: u64, retry_limit: usize) -> PyResult<Self> {
        let cfg = RemoteConfig { timeout_ms, retry_limit, ..RemoteConfig::new(url) };
        let b = py.detach(|| RemoteBackend::connect(cfg)).map_err(py_err)?;
        Ok(Backend { inner: Arc::new(b), oracle: None })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.descriptor().name.clone()
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.descriptor().working_shape[0]
    }

    /// Ground-truth view of the oracle object with this seed.
    fn render(&self, object_seed: u64, viewpoint: &Viewpoint) -> PyResult<Image> {
        let oracle = self
            .oracle
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("only the oracle backend can render ground truth"))?;
        oracle.render_view(object_seed, &viewpoint.0).map(|r| Image(r.image)).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Backend({})", self.name())
    }
}

/// HTTP server exposing an oracle backend.
#[pyclass(module = "pyposematch")]
struct Server(Mutex<Option<ServerHandle>>);

#[pymethods]
impl Server {
    #[getter]
    fn url(&self) -> PyResult<String> {
        let guard = self.0.lock().unwrap();
        guard.as_ref().map(|h| h.url()).ok_or_else(|| PyRuntimeError::new_err("server stopped"))
    }

    fn set_ready(&self, ready: bool) -> PyResult<()> {
        let guard = self.0.lock().unwrap();
        guard.as_ref().map(|h| h.set_ready(ready)).ok_or_else(|| PyRuntimeError::new_err("server stopped"))
    }

    fn shutdown(&self, py: Python<'_>) {
        let handle = self.0.lock().unwrap().take();
        if let Some(h) = handle {
            py.detach(|| h.shutdown());
        }
    }

    fn __enter__(slf: Py<Self>) -> Py<Self> {
        slf
    }

    fn __exit__(&self, py: Python<'_>, _ty: Py<PyAny>, _value: Py<PyAny>, _tb: Py<PyAny>) {
        self.shutdown(py);
    }
}

#[pyfunction]
#[pyo3(signature = (gain = 0.0, exponent = 1.0, size = 64, host = "127.0.0.1", port = 0))]
fn serve_oracle(gain: f64, exponent: f64, size: usize, host: &str, port: u16) -> PyResult<Server> {
    let b = Backend::oracle(gain, exponent, size)?;
    let handle = remote::serve(b.inner, &format!("{host}:{port}"), ServerOptions::default()).map_err(py_err)?;
    Ok(Server(Mutex::new(Some(handle))))
}

fn estimate_config(n: usize, m: usize, iterations: usize, scheme: &str, seed: u64) -> PyResult<EstimateConfig> {
    let mut cfg = EstimateConfig::default();
    cfg.score.n_intermediate = n;
    cfg.score.m_samples = m;
    cfg.score.seed = seed;
    cfg.refine.iterations = iterations;
    cfg.scheme = scheme.parse::<MatchingScheme>().map_err(py_err)?;
    Ok(cfg)
}

/// Estimates the query viewpoint. Returns `(viewpoint, score)`.
#[pyfunction]
#[pyo3(signature = (backend, ref_image, ref_viewpoint, query_image, elevation_init,
                    n = 64, m = 4, iterations = 3, scheme = "two-side", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn estimate_pose(
    py: Python<'_>,
    backend: &Backend,
    ref_image: &Image,
    ref_viewpoint: &Viewpoint,
    query_image: &Image,
    elevation_init: f64,
    n: usize,
    m: usize,
    iterations: usize,
    scheme: &str,
    seed: u64,
) -> PyResult<(Viewpoint, f64)> {
    let cfg = estimate_config(n, m, iterations, scheme, seed)?;
    let b = backend.inner.clone();
    let est = py
        .detach(|| search::estimate_pose(&ref_image.0, &ref_viewpoint.0, &query_image.0, elevation_init, &cfg, &*b))
        .map_err(py_err)?;
    Ok((Viewpoint(est.viewpoint), est.score))
}

#[pyfunction]
fn rotation_error(gt: &Viewpoint, pr: &Viewpoint) -> PyResult<f64> {
    geometry::viewpoint_error_deg(&gt.0, &pr.0).map_err(py_err)
}

#[pyfunction]
fn fibonacci_hemisphere(n: usize) -> PyResult<Vec<Viewpoint>> {
    geometry::fibonacci_hemisphere(n).map(|v| v.into_iter().map(Viewpoint).collect()).map_err(py_err)
}

/// Writes a synthetic dataset and returns the number of evaluation pairs.
#[pyfunction]
#[pyo3(signature = (out, objects = 23, views = 21, queries = 20, size = 64, seed = 0))]
fn generate_dataset(
    py: Python<'_>,
    out: &str,
    objects: usize,
    views: usize,
    queries: usize,
    size: usize,
    seed: u64,
) -> PyResult<usize> {
    let spec = DatasetSpec {
        n_objects: objects,
        views_per_object: views,
        queries_per_reference: queries,
        image_size: size,
        seed,
    };
    py.detach(|| bench::generate_dataset(&spec, out).and_then(|d| d.pairs()).map(|p| p.len())).map_err(py_err)
}

/// Benchmarks a dataset directory and returns the aggregate accuracies.
#[pyfunction]
#[pyo3(signature = (dataset, backend, n = 64, m = 4, iterations = 3, scheme = "two-side", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    dataset: &str,
    backend: &Backend,
    n: usize,
    m: usize,
    iterations: usize,
    scheme: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = EvalConfig { timing: false, ..EvalConfig::new(estimate_config(n, m, iterations, scheme, seed)?) };
    let b = backend.inner.clone();
    let report = py
        .detach(|| bench::Dataset::load(dataset).and_then(|d| d.pairs()).and_then(|p| bench::evaluate(&p, &cfg, &*b)))
        .map_err(py_err)?;
    let agg = &report.aggregates;
    let d = PyDict::new(py);
    d.set_item("n", agg.n)?;
    d.set_item("n_failed", agg.n_failed)?;
    d.set_item("racc15", agg.racc15)?;
    d.set_item("racc30", agg.racc30)?;
    d.set_item("median_err_deg", agg.median_err_deg)?;
    d.set_item("scheme", report.scheme.to_string())?;
    Ok(d)
}

#[pymodule]
fn pyposematch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Viewpoint>()?;
    m.add_class::<Image>()?;
    m.add_class::<Backend>()?;
    m.add_class::<Server>()?;
    m.add_function(wrap_pyfunction!(serve_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_pose, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_error, m)?)?;
    m.add_function(wrap_pyfunction!(fibonacci_hemisphere, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
