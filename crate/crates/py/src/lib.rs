//! Python bindings for `cckd`: kernels, losses, samplers, models and the
//! experiment harness. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cckd::analysis;
use cckd::harness::{self, Experiment, ExperimentConfig};
use cckd::kernels::{self, KernelConfig, KernelKind};
use cckd::losses::{self, LossWeights};
use cckd::nn::{self, Architecture, MlpModel};
use cckd::samplers::{self, SamplerConfig, Strategy};
use cckd::{Error, Matrix};

type Rows = Vec<Vec<f64>>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for cckd::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).py()
}

#[pyclass(name = "Kernel", module = "pycckd", from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: KernelConfig,
}

#[pymethods]
impl PyKernel {
    /// `kind` is one of mmd, bilinear, rbf_exact, rbf_taylor. Row
    /// normalization defaults to on for rbf_taylor only.
    #[new]
    #[pyo3(signature = (kind = "rbf_taylor", gamma = 0.4, order = 2, normalize_rows = None))]
    fn new(kind: &str, gamma: f64, order: usize, normalize_rows: Option<bool>) -> PyResult<Self> {
        let kind: KernelKind = kind.parse().py()?;
        let mut inner = KernelConfig {
            gamma,
            order,
            ..KernelConfig::new(kind)
        };
        if let Some(n) = normalize_rows {
            inner.normalize_rows = n;
        }
        inner.validate().py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order
    }

    #[getter]
    fn normalize_rows(&self) -> bool {
        self.inner.normalize_rows
    }

    fn __repr__(&self) -> String {
        format!(
            "Kernel(kind={:?}, gamma={}, order={}, normalize_rows={})",
            self.kind(),
            self.inner.gamma,
            self.inner.order,
            if self.inner.normalize_rows {
                "True"
            } else {
                "False"
            }
        )
    }
}

#[pyclass(name = "Model", module = "pycckd", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: MlpModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (input_dim, hidden, embedding_dim, num_classes, seed = 0))]
    fn init(
        input_dim: usize,
        hidden: Vec<usize>,
        embedding_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = Architecture::new(input_dim, &hidden, embedding_dim, num_classes);
        Ok(Self {
            inner: MlpModel::init(&arch, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: nn::load_checkpoint(path).py()?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        nn::save_checkpoint(&self.inner, path).py()
    }

    /// Returns `(embeddings, logits)` for a batch of input rows.
    fn forward(&self, x: Rows) -> PyResult<(Rows, Rows)> {
        let rec = self.inner.forward(&matrix(x)?).py()?;
        Ok((rec.embeddings().to_rows(), rec.logits().to_rows()))
    }

    fn parameters(&self) -> Vec<f64> {
        self.inner.flat_params()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.inner.describe())
    }
}

#[pyfunction]
fn rbf_taylor(x: Vec<f64>, y: Vec<f64>, gamma: f64, order: usize) -> PyResult<f64> {
    kernels::rbf_taylor(&x, &y, gamma, order).py()
}

#[pyfunction]
fn pairwise_correlation(x: Vec<f64>, y: Vec<f64>, kernel: &PyKernel) -> PyResult<f64> {
    kernels::pairwise_correlation(&x, &y, &kernel.inner).py()
}

#[pyfunction]
fn correlation_matrix(f: Vec<Vec<f64>>, kernel: &PyKernel) -> PyResult<Vec<Vec<f64>>> {
    Ok(kernels::correlation_matrix(&matrix(f)?, &kernel.inner)
        .py()?
        .to_rows())
}

#[pyfunction]
fn l2_normalize_rows(f: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(kernels::l2_normalize_rows(&matrix(f)?).to_rows())
}

#[pyfunction]
fn softmax(z: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    nn::softmax_with_temperature(&z, tau).py()
}

/// Returns `(value, gradient w.r.t. student embeddings)`.
#[pyfunction]
fn cc_loss(
    student: Vec<Vec<f64>>,
    teacher: Vec<Vec<f64>>,
    kernel: &PyKernel,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (v, g) = losses::cc_loss(&matrix(student)?, &matrix(teacher)?, &kernel.inner).py()?;
    Ok((v, g.to_rows()))
}

/// Returns `(value, gradient w.r.t. student logits)`.
#[pyfunction]
fn kd_loss(
    student: Vec<Vec<f64>>,
    teacher: Vec<Vec<f64>>,
    tau: f64,
) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (v, g) = losses::kd_loss(&matrix(student)?, &matrix(teacher)?, tau).py()?;
    Ok((v, g.to_rows()))
}

#[pyfunction]
fn mimic_loss(student: Vec<Vec<f64>>, teacher: Vec<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (v, g) = losses::mimic_loss(&matrix(student)?, &matrix(teacher)?).py()?;
    Ok((v, g.to_rows()))
}

#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let (v, g) = losses::cross_entropy(&matrix(logits)?, &labels).py()?;
    Ok((v, g.to_rows()))
}

/// `alpha·ce + (1 − alpha)·kd + beta·cc` as a dict of components.
#[pyfunction]
#[pyo3(signature = (ce, kd, cc, alpha = 0.0, beta = 0.003))]
fn cckd_total<'py>(
    py: Python<'py>,
    ce: f64,
    kd: f64,
    cc: f64,
    alpha: f64,
    beta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let w = LossWeights {
        alpha,
        beta,
        ..Default::default()
    };
    w.validate().py()?;
    let b = losses::cckd_total(ce, kd, cc, &w).py()?;
    let d = PyDict::new(py);
    d.set_item("ce", b.ce)?;
    d.set_item("kd", b.kd)?;
    d.set_item("cc", b.cc)?;
    d.set_item("total", b.total)?;
    Ok(d)
}

#[pyfunction]
fn cosine_similarity_matrix(f: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(analysis::cosine_similarity_matrix(&matrix(f)?).to_rows())
}

#[pyfunction]
fn intra_inter_stats<'py>(
    py: Python<'py>,
    f: Vec<Vec<f64>>,
    labels: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = analysis::intra_inter_stats(&matrix(f)?, &labels).py()?;
    let d = PyDict::new(py);
    d.set_item("mean_intra", s.mean_intra)?;
    d.set_item("mean_inter", s.mean_inter)?;
    d.set_item("per_class_intra", s.per_class_intra)?;
    Ok(d)
}

/// One epoch of class-uniform batches over `labels`.
#[pyfunction]
#[pyo3(signature = (labels, batch_size = 40, per_class = 4, seed = 0))]
fn cur_sample(
    labels: Vec<usize>,
    batch_size: usize,
    per_class: usize,
    seed: u64,
) -> PyResult<Vec<Vec<usize>>> {
    let cfg = SamplerConfig {
        strategy: Strategy::Cur,
        batch_size,
        per_class,
        seed,
        ..Default::default()
    };
    Ok(
        samplers::cur_sample(&labels, &cfg, &mut samplers::seeded_rng(seed))
            .py()?
            .batches,
    )
}

#[pyfunction]
#[pyo3(signature = (n, batch_size = 40, seed = 0))]
fn ur_sample(n: usize, batch_size: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    let cfg = SamplerConfig {
        strategy: Strategy::Ur,
        batch_size,
        seed,
        ..Default::default()
    };
    Ok(
        samplers::ur_sample(n, &cfg, &mut samplers::seeded_rng(seed))
            .py()?
            .batches,
    )
}

/// Returns `(assignments, centroids, cost_history)`.
#[pyfunction]
#[pyo3(signature = (features, k, iters = 50, seed = 0))]
fn kmeans(
    features: Vec<Vec<f64>>,
    k: usize,
    iters: usize,
    seed: u64,
) -> PyResult<(Vec<usize>, Rows, Vec<f64>)> {
    let a = samplers::kmeans(&matrix(features)?, k, iters, seed).py()?;
    Ok((a.assignments, a.centroids.to_rows(), a.cost_history))
}

fn experiment(
    config_json: Option<&str>,
    overrides: Option<Vec<(String, String)>>,
) -> PyResult<Experiment> {
    let base = match config_json {
        Some(text) => ExperimentConfig::from_json(text).py()?,
        None => ExperimentConfig::default(),
    };
    let overrides = overrides.unwrap_or_default();
    let cfg = base
        .with_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .py()?;
    Experiment::new(cfg).py()
}

/// Default experiment configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    ExperimentConfig::default().to_json().py()
}

/// Trains a teacher; returns `(model, metrics_jsonl)`.
#[pyfunction]
#[pyo3(signature = (config_json = None, overrides = None))]
fn train_teacher(
    py: Python<'_>,
    config_json: Option<&str>,
    overrides: Option<Vec<(String, String)>>,
) -> PyResult<(PyModel, String)> {
    let exp = experiment(config_json, overrides)?;
    let out = py.detach(|| harness::train_teacher(&exp)).py()?;
    Ok((PyModel { inner: out.model }, out.metrics.to_jsonl().py()?))
}

/// Distills a student from `teacher`; returns `(model, metrics_jsonl)`.
#[pyfunction]
#[pyo3(signature = (teacher, config_json = None, overrides = None))]
fn distill_student(
    py: Python<'_>,
    teacher: &PyModel,
    config_json: Option<&str>,
    overrides: Option<Vec<(String, String)>>,
) -> PyResult<(PyModel, String)> {
    let exp = experiment(config_json, overrides)?;
    let t = teacher.inner.clone();
    let out = py.detach(|| harness::distill_student(&exp, &t)).py()?;
    Ok((PyModel { inner: out.model }, out.metrics.to_jsonl().py()?))
}

/// Top-1 accuracy (and top-5 when there are more than five classes) on the
/// configured test split.
#[pyfunction]
#[pyo3(signature = (model, config_json = None, overrides = None))]
fn evaluate(
    model: &PyModel,
    config_json: Option<&str>,
    overrides: Option<Vec<(String, String)>>,
) -> PyResult<(f64, Option<f64>)> {
    let exp = experiment(config_json, overrides)?;
    let acc = harness::evaluate(&model.inner, &exp.test).py()?;
    Ok((acc.top1, acc.top5))
}

#[pymodule]
pub fn pycckd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(rbf_taylor, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(l2_normalize_rows, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(cc_loss, m)?)?;
    m.add_function(wrap_pyfunction!(kd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mimic_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(cckd_total, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(intra_inter_stats, m)?)?;
    m.add_function(wrap_pyfunction!(cur_sample, m)?)?;
    m.add_function(wrap_pyfunction!(ur_sample, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train_teacher, m)?)?;
    m.add_function(wrap_pyfunction!(distill_student, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
