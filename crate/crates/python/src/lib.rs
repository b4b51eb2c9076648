//! Python bindings for `strata-icer`.
//!
//! Reports and ground truth cross the boundary as plain dicts built from the
//! same JSON the CLI writes.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};

use strata::clustering::{self as cl, DbscanParams};
use strata::dataset::{self as ds, FactorSchema, TrialDataset};
use strata::icer::{self, WeightingMode, DEFAULT_EFF_FLOOR};
use strata::metrics::{self as mt, CovarianceModel, Metric, DEFAULT_RIDGE, DEFAULT_SCAN_THRESHOLD};
use strata::pipeline::{self as pl, ParamChoice, PipelineConfig, StratifiedReport};
use strata::simulate::{self as sim, GroundTruth, SimConfig};

create_exception!(strata_icer, StrataIcerError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    StrataIcerError::new_err(e.to_string())
}

fn parse_metric(s: &str) -> PyResult<Metric> {
    s.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn to_matrix(points: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let m = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != m) {
        return Err(PyValueError::new_err("all points must have the same length"));
    }
    Ok(DMatrix::from_fn(points.len(), m, |i, j| points[i][j]))
}

fn covariance_for(z: &DMatrix<f64>, metric: Metric, ridge: f64) -> PyResult<Option<CovarianceModel>> {
    match metric {
        Metric::Euclidean => Ok(None),
        Metric::Mahalanobis => mt::fit_covariance(z, ridge).map(Some).map_err(err),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(s.to_string());
    }
    obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// A validated two-arm trial cohort.
#[pyclass(name = "Dataset", module = "strata_icer", frozen)]
struct PyDataset {
    inner: TrialDataset,
}

fn schema(factors: Option<Vec<String>>) -> FactorSchema {
    factors.map_or(FactorSchema::AllRemaining, FactorSchema::Named)
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, factors=None))]
    fn from_csv(path: std::path::PathBuf, factors: Option<Vec<String>>) -> PyResult<Self> {
        let file = std::fs::File::open(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let inner = ds::load_dataset(std::io::BufReader::new(file), &schema(factors)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (text, factors=None))]
    fn from_csv_string(text: &str, factors: Option<Vec<String>>) -> PyResult<Self> {
        let inner = ds::load_dataset(text.as_bytes(), &schema(factors)).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_csv_string(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        ds::write_dataset(&self.inner, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n_experimental(&self) -> usize {
        self.inner.n_experimental()
    }

    #[getter]
    fn n_control(&self) -> usize {
        self.inner.n_control()
    }

    #[getter]
    fn factor_names(&self) -> Vec<String> {
        self.inner.factor_names().to_vec()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    /// Factor rows in cohort order.
    fn factors(&self) -> Vec<Vec<f64>> {
        self.inner.records().iter().map(|r| r.factors.clone()).collect()
    }

    #[pyo3(signature = (eff_floor=DEFAULT_EFF_FLOOR))]
    fn naive_icer(&self, eff_floor: f64) -> PyResult<f64> {
        icer::naive_icer(&self.inner, eff_floor).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, m={}, experimental={}, control={})",
            self.inner.n(),
            self.inner.m(),
            self.inner.n_experimental(),
            self.inner.n_control()
        )
    }
}

/// Runs the full stratified analysis and returns the report as a dict.
/// Leaving `eps` unset picks parameters with the k-distance heuristic.
#[pyfunction]
#[pyo3(signature = (
    dataset, *, metric="euclidean", eps=None, min_pts=None, scan_threshold=None,
    ridge=DEFAULT_RIDGE, eff_floor=DEFAULT_EFF_FLOOR, weighting="paper",
    bootstrap=1000, seed=0, strict=false
))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    metric: &str,
    eps: Option<f64>,
    min_pts: Option<usize>,
    scan_threshold: Option<f64>,
    ridge: f64,
    eff_floor: f64,
    weighting: &str,
    bootstrap: usize,
    seed: u64,
    strict: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let params = match (eps, min_pts) {
        (Some(eps), min_pts) => ParamChoice::Manual {
            eps,
            min_pts: min_pts.unwrap_or(dataset.inner.m() + 1),
        },
        (None, None) => ParamChoice::Auto,
        (None, Some(_)) => return Err(PyValueError::new_err("min_pts given without eps")),
    };
    let cfg = PipelineConfig {
        metric: parse_metric(metric)?,
        params,
        scan_threshold,
        ridge,
        eff_floor,
        weighting: weighting.parse::<WeightingMode>().map_err(PyValueError::new_err)?,
        bootstrap_replicates: bootstrap,
        seed,
        strict,
    };
    let ds = &dataset.inner;
    let report = py.detach(|| pl::run_pipeline(ds, &cfg)).map_err(err)?;
    json_to_py(py, &report.to_json().map_err(err)?)
}

/// Draws a synthetic cohort from a config (JSON string or dict).
/// Returns `(Dataset, truth_dict)`.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<(PyDataset, Bound<'py, PyAny>)> {
    let cfg: SimConfig = serde_json::from_str(&py_to_json(config)?).map_err(err)?;
    let (inner, truth) = sim::simulate_trial(&cfg).map_err(err)?;
    let truth = json_to_py(py, &serde_json::to_string(&truth).map_err(err)?)?;
    Ok((PyDataset { inner }, truth))
}

/// Cluster agreement and absolute ICER errors of a report against ground truth.
#[pyfunction]
fn evaluate_recovery<'py>(
    py: Python<'py>,
    report: &Bound<'py, PyAny>,
    truth: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyDict>> {
    let report: StratifiedReport = serde_json::from_str(&py_to_json(report)?).map_err(err)?;
    let truth: GroundTruth = serde_json::from_str(&py_to_json(truth)?).map_err(err)?;
    let r = sim::evaluate_recovery(&report, &truth).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("agreement", r.agreement)?;
    out.set_item("overall_abs_error", r.overall_abs_error)?;
    out.set_item("naive_abs_error", r.naive_abs_error)?;
    Ok(out)
}

/// Distance of every point to the centroid with outlier flags.
#[pyfunction]
#[pyo3(signature = (points, *, metric="euclidean", threshold=DEFAULT_SCAN_THRESHOLD, ridge=DEFAULT_RIDGE))]
fn centroid_scan<'py>(
    py: Python<'py>,
    points: Vec<Vec<f64>>,
    metric: &str,
    threshold: f64,
    ridge: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let scan = mt::centroid_scan(&to_matrix(&points)?, parse_metric(metric)?, threshold, ridge).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("distances", scan.distances)?;
    out.set_item("flags", scan.flags)?;
    out.set_item("mean", scan.mean)?;
    out.set_item("sd", scan.sd)?;
    out.set_item("threshold", scan.threshold)?;
    Ok(out)
}

/// DBSCAN labels (`-1` for noise). Mahalanobis fits its covariance on `points`.
#[pyfunction]
#[pyo3(signature = (points, eps, min_pts, *, metric="euclidean", ridge=DEFAULT_RIDGE))]
fn dbscan(py: Python<'_>, points: Vec<Vec<f64>>, eps: f64, min_pts: usize, metric: &str, ridge: f64) -> PyResult<Vec<i64>> {
    let metric = parse_metric(metric)?;
    let z = to_matrix(&points)?;
    let cov = covariance_for(&z, metric, ridge)?;
    let params = DbscanParams::new(eps, min_pts, metric).map_err(err)?;
    let assign = py.detach(|| cl::dbscan(&z, &params, cov.as_ref())).map_err(err)?;
    Ok(assign.labels().to_vec())
}

/// Mahalanobis distance of `x` from `center` under `covariance + ridge·I`.
#[pyfunction]
#[pyo3(signature = (x, center, covariance, *, ridge=0.0))]
fn mahalanobis(x: Vec<f64>, center: Vec<f64>, covariance: Vec<Vec<f64>>, ridge: f64) -> PyResult<f64> {
    if x.len() != center.len() {
        return Err(PyValueError::new_err("x and center differ in length"));
    }
    let model = CovarianceModel::from_parts(DVector::from_vec(center), to_matrix(&covariance)?, ridge).map_err(err)?;
    Ok(mt::mahalanobis(&model, &x))
}

/// Sorted distances to each point's k-th nearest neighbour.
#[pyfunction]
#[pyo3(signature = (points, k, *, metric="euclidean", ridge=DEFAULT_RIDGE))]
fn k_distance_profile(points: Vec<Vec<f64>>, k: usize, metric: &str, ridge: f64) -> PyResult<Vec<f64>> {
    let metric = parse_metric(metric)?;
    let z = to_matrix(&points)?;
    let cov = covariance_for(&z, metric, ridge)?;
    cl::k_distance_profile(&z, k, metric, cov.as_ref()).map_err(err)
}

/// Heuristic `(eps, min_pts)` for already standardized points.
#[pyfunction]
#[pyo3(signature = (points, *, metric="euclidean", ridge=DEFAULT_RIDGE))]
fn suggest_params(points: Vec<Vec<f64>>, metric: &str, ridge: f64) -> PyResult<(f64, usize)> {
    let metric = parse_metric(metric)?;
    let z = to_matrix(&points)?;
    let cov = covariance_for(&z, metric, ridge)?;
    let p = cl::suggest_params(&z, metric, cov.as_ref()).map_err(err)?;
    Ok((p.eps, p.min_pts))
}

/// Column-wise z-scores with the sample standard deviation.
#[pyfunction]
fn standardize(points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let (z, _) = mt::standardize(&to_matrix(&points)?).map_err(err)?;
    Ok((0..z.nrows()).map(|i| z.row(i).iter().copied().collect()).collect())
}

#[pymodule]
#[pyo3(name = "strata_icer")]
fn strata_icer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StrataIcerError", m.py().get_type::<StrataIcerError>())?;
    m.add("NOISE", cl::NOISE)?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_recovery, m)?)?;
    m.add_function(wrap_pyfunction!(centroid_scan, m)?)?;
    m.add_function(wrap_pyfunction!(dbscan, m)?)?;
    m.add_function(wrap_pyfunction!(mahalanobis, m)?)?;
    m.add_function(wrap_pyfunction!(k_distance_profile, m)?)?;
    m.add_function(wrap_pyfunction!(suggest_params, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    Ok(())
}
