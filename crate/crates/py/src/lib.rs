//! Python bindings: count tensors plus exact, SMC and VB scores of the
//! catalogue models. Models are named by catalogue kind and latent size, with
//! the remaining cardinalities taken from the tensor as on the command line.

use bam::exact::{exact_log_marginal_urn, ExactConfig};
use bam::model::{build_catalog_model, CatalogKind, PriorSpec};
use bam::smc::{run_sis_r, Resampling, Schedule, SmcConfig};
use bam::tensor::SparseCountTensor;
use bam::urn::Urn;
use bam::vb::{run_vb, VbConfig};
use bam_cli::catalog::{catalog_dims, Model};
use bam_cli::with_urn;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: bam::Error) -> PyErr {
    match e {
        bam::Error::Io(e) => PyOSError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Sparse nonnegative count tensor, optionally with missing cells.
#[pyclass(name = "Tensor", module = "bam_py", frozen)]
pub struct PyTensor {
    inner: SparseCountTensor,
}

#[pymethods]
impl PyTensor {
    /// Builds a tensor from `dims` and `(index, count)` pairs; repeated
    /// indices add up.
    #[new]
    #[pyo3(signature = (dims, entries=Vec::new()))]
    fn new(dims: Vec<usize>, entries: Vec<(Vec<usize>, u64)>) -> PyResult<Self> {
        let inner = SparseCountTensor::from_entries(dims, entries).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Parses the text format (`dims ...` header, one `i j .. count` per line).
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: bam::tensor::parse_tensor(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: bam::tensor::read_tensor(path).map_err(py_err)?,
        })
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn total(&self) -> u64 {
        self.inner.total()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    /// Nonzero cells in lexicographic order.
    fn entries(&self) -> Vec<(Vec<usize>, u64)> {
        self.inner.iter().map(|(i, v)| (i.clone(), v)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(dims={:?}, total={}, nnz={})", self.inner.dims(), self.inner.total(), self.inner.nnz())
    }
}

fn model(x: &SparseCountTensor, kind: &str, k: usize, levels: usize, a: f64, b: f64) -> PyResult<Model> {
    let kind: CatalogKind = kind.parse().map_err(py_err)?;
    let dims = catalog_dims(kind, x.dims(), k, levels).map_err(py_err)?;
    let spec = build_catalog_model(kind, &dims).map_err(py_err)?;
    let prior = PriorSpec::new(a, b).map_err(py_err)?;
    Model::new(spec, prior).map_err(py_err)
}

/// Exact log marginal likelihood by enumerating every compatible allocation.
#[pyfunction]
#[pyo3(signature = (x, model, k, *, a=1.0, b=1.0, levels=1, cap=bam::exact::DEFAULT_SEARCH_CAP))]
fn exact_log_marginal(
    py: Python<'_>,
    x: &PyTensor,
    model: &str,
    k: usize,
    a: f64,
    b: f64,
    levels: usize,
    cap: f64,
) -> PyResult<f64> {
    let m = self::model(&x.inner, model, k, levels, a, b)?;
    let cfg = ExactConfig {
        cap,
        ..ExactConfig::default()
    };
    py.detach(|| with_urn!(&m, u => exact_log_marginal_urn(u, &x.inner, &cfg)))
        .map_err(py_err)
}

/// One SMC run. Returns a dict with `log_z`, `log_z0`, `ess_min` and
/// `resampling_events`.
#[pyfunction]
#[pyo3(signature = (
    x, model, k, *, a=1.0, b=1.0, levels=1, particles=1000, seed=0,
    schedule="adaptive", resampling="systematic"
))]
fn smc_log_marginal<'py>(
    py: Python<'py>,
    x: &PyTensor,
    model: &str,
    k: usize,
    a: f64,
    b: f64,
    levels: usize,
    particles: usize,
    seed: u64,
    schedule: &str,
    resampling: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let m = self::model(&x.inner, model, k, levels, a, b)?;
    let cfg = SmcConfig {
        schedule: schedule.parse::<Schedule>().map_err(py_err)?,
        resampling: resampling.parse::<Resampling>().map_err(py_err)?,
        ..SmcConfig::new(particles, seed)
    };
    let (log_z, log_z0, ess_min, events) = py
        .detach(|| {
            with_urn!(&m, u => run_sis_r(u, &x.inner, &cfg).map(|r| {
                let ess_min = r.ess_trace.iter().copied().fold(f64::INFINITY, f64::min);
                (r.log_z, r.log_z0, ess_min, r.resample_steps.len())
            }))
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("log_z", log_z)?;
    out.set_item("log_z0", log_z0)?;
    out.set_item("ess_min", ess_min)?;
    out.set_item("resampling_events", events)?;
    Ok(out)
}

/// Best evidence lower bound over `restarts` mean-field VB runs.
#[pyfunction]
#[pyo3(signature = (x, model, k, *, a=1.0, b=1.0, levels=1, restarts=1, max_iters=2000, tol=1e-8, seed=0))]
fn vb_elbo(
    py: Python<'_>,
    x: &PyTensor,
    model: &str,
    k: usize,
    a: f64,
    b: f64,
    levels: usize,
    restarts: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> PyResult<f64> {
    let Model::Plain(bam) = self::model(&x.inner, model, k, levels, a, b)? else {
        return Err(PyValueError::new_err("VB is not available for tied models"));
    };
    let cfg = VbConfig {
        restarts,
        max_iters,
        tol,
        seed,
        ..VbConfig::default()
    };
    py.detach(|| run_vb(&x.inner, bam.spec(), bam.prior(), &cfg))
        .map(|s| s.elbo)
        .map_err(py_err)
}

#[pymodule]
pub fn bam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(exact_log_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(smc_log_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(vb_elbo, m)?)?;
    Ok(())
}
