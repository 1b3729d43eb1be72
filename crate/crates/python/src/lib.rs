//! Python bindings. Arrays cross the boundary as flat row-major lists (any
//! sequence of floats works, including 1-D numpy arrays) with the shape
//! passed alongside, mirroring the Rust API.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use har_kit::augment::{self, AugmentParams, TransformKind};
use har_kit::config::{self, ExecutionMode, ExperimentConfig, Overrides};
use har_kit::data::{self, SensorStream};
use har_kit::features;
use har_kit::forest::{self, ForestParams, MaxFeatures};
use har_kit::metrics::ConfusionMatrix;
use har_kit::nn::Tensor;
use har_kit::pipeline::{self, Workspace};
use har_kit::ssl::losses;
use har_kit::synthetic::{self, SyntheticSpec};
use har_kit::windowing::{self, WindowParams};
use har_kit::{seed, HarError};

fn py_err(e: HarError) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => PyValueError::new_err(msg),
        4 => PyArithmeticError::new_err(msg),
        _ => PyIOError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for har_kit::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// A validated experiment configuration.
#[pyclass(name = "Config", module = "harkit", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Load a preset name or TOML file, applying the given overrides.
    #[staticmethod]
    #[pyo3(signature = (source, dataset=None, seed=None, output_dir=None, mode=None))]
    fn load(
        source: &str,
        dataset: Option<PathBuf>,
        seed: Option<u64>,
        output_dir: Option<PathBuf>,
        mode: Option<&str>,
    ) -> PyResult<Self> {
        let mode = match mode {
            None => None,
            Some("deterministic") => Some(ExecutionMode::Deterministic),
            Some("fast") => Some(ExecutionMode::Fast),
            Some(other) => {
                return Err(PyValueError::new_err(format!(
                    "mode must be \"deterministic\" or \"fast\", got {other:?}"
                )))
            }
        };
        let overrides = Overrides {
            dataset,
            seed,
            output_dir,
            mode,
        };
        Ok(Self {
            inner: config::load(source, &overrides).py()?,
        })
    }

    /// Parse TOML text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: config::parse(text).py()?,
        })
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// The config with every default filled in.
    fn to_toml(&self) -> String {
        self.inner.normalize()
    }

    #[getter]
    fn pipeline(&self) -> &'static str {
        self.inner.pipeline.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    fn __repr__(&self) -> String {
        format!("Config(pipeline={:?}, hash={:?})", self.inner.pipeline.name(), self.inner.hash())
    }
}

/// Outcome of a finished run.
#[pyclass(name = "Summary", module = "harkit", get_all)]
struct PySummary {
    config_hash: String,
    seed: u64,
    pipeline: String,
    best_epoch: usize,
    val_mean_f1: Option<f64>,
    test_accuracy: Option<f64>,
    test_mean_f1: Option<f64>,
    windows: (usize, usize, usize),
    up_to_date: bool,
}

#[pymethods]
impl PySummary {
    fn __repr__(&self) -> String {
        format!(
            "Summary(pipeline={:?}, test_mean_f1={:?}, best_epoch={})",
            self.pipeline, self.test_mean_f1, self.best_epoch
        )
    }
}

/// Run the configured pipeline, reusing finished stages in `output_dir`.
#[pyfunction]
#[pyo3(signature = (config, force=false))]
fn run(py: Python<'_>, config: &PyConfig, force: bool) -> PyResult<PySummary> {
    let cfg = config.inner.clone();
    let status = py.detach(move || Workspace::open(cfg, force)?.run()).py()?;
    let up_to_date = matches!(status, pipeline::RunStatus::UpToDate(_));
    let s = status.summary().clone();
    Ok(PySummary {
        config_hash: s.config_hash,
        seed: s.seed,
        pipeline: s.pipeline,
        best_epoch: s.best_epoch,
        val_mean_f1: s.val_mean_f1,
        test_accuracy: s.test_accuracy,
        test_mean_f1: s.test_mean_f1,
        windows: (s.windows[0], s.windows[1], s.windows[2]),
        up_to_date,
    })
}

/// Text digest of a finished output directory.
#[pyfunction]
fn report(output_dir: PathBuf) -> PyResult<String> {
    pipeline::report(&output_dir).py()
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    config::PRESETS.iter().map(|(name, _)| *name).collect()
}

/// Labeled windows, stored flat as `[n][win_len][channels]`.
#[pyclass(name = "Windows", module = "harkit", get_all)]
struct PyWindows {
    data: Vec<f64>,
    labels: Vec<u8>,
    starts: Vec<usize>,
    win_len: usize,
    channels: usize,
}

#[pymethods]
impl PyWindows {
    fn __len__(&self) -> usize {
        self.labels.len()
    }

    fn window(&self, i: usize) -> PyResult<Vec<f64>> {
        let size = self.win_len * self.channels;
        self.data
            .get(i * size..(i + 1) * size)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("window {i} out of range")))
    }
}

/// Segment one recording (`channels` is a list of per-axis sample lists).
#[pyfunction]
#[pyo3(signature = (channels, labels, win_len=100, step=50, sample_rate_hz=50.0))]
fn segment(
    channels: Vec<Vec<f64>>,
    labels: Vec<u8>,
    win_len: usize,
    step: usize,
    sample_rate_hz: f64,
) -> PyResult<PyWindows> {
    let stream = SensorStream::new(0, channels, labels, sample_rate_hz).py()?;
    let b = windowing::segment(&stream, &WindowParams::new(win_len, step)).py()?;
    Ok(PyWindows {
        data: b.data,
        labels: b.labels,
        starts: b.starts,
        win_len: b.win_len,
        channels: b.channels,
    })
}

#[pyfunction]
fn window_count(len: usize, win_len: usize, step: usize) -> usize {
    windowing::window_count(len, win_len, step)
}

/// ECDF features of one `[T][C]` window: per channel, the quantiles
/// followed by the mean.
#[pyfunction]
#[pyo3(signature = (window, channels=3, n_quantiles=25))]
fn ecdf_features(window: Vec<f64>, channels: usize, n_quantiles: usize) -> PyResult<Vec<f64>> {
    features::ecdf_features(&window, channels, n_quantiles).py()
}

#[pyfunction]
#[pyo3(signature = (window, channels=3))]
fn statistical_features(window: Vec<f64>, channels: usize) -> PyResult<Vec<f64>> {
    features::statistical_features(&window, channels).py()
}

/// Apply one named augmentation to a `[T][C]` window.
#[pyfunction]
#[pyo3(signature = (kind, window, channels=3, seed=0))]
fn augment_window(kind: &str, mut window: Vec<f64>, channels: usize, seed: u64) -> PyResult<Vec<f64>> {
    let kind: TransformKind = kind.parse().py()?;
    if channels == 0 {
        return Err(PyValueError::new_err("channels must be positive"));
    }
    let t = window.len() / channels;
    let mut rng = seed::substream(seed, "augment", 0);
    augment::apply_window(kind, &AugmentParams::default(), &mut window, t, channels, &mut rng).py()?;
    Ok(window)
}

#[pyfunction]
fn transforms() -> Vec<&'static str> {
    TransformKind::ALL.iter().map(|k| k.name()).collect()
}

/// NT-Xent loss of two `[n][d]` batches of paired embeddings.
#[pyfunction]
#[pyo3(signature = (z1, z2, n, d, temperature=0.1))]
fn nt_xent_loss(z1: Vec<f64>, z2: Vec<f64>, n: usize, d: usize, temperature: f64) -> PyResult<f64> {
    let a = Tensor::new(vec![n, d], z1).py()?;
    let b = Tensor::new(vec![n, d], z2).py()?;
    Ok(losses::nt_xent_loss(&a, &b, temperature).py()?.0)
}

/// Random forest over row-major feature matrices.
#[pyclass(name = "RandomForest", module = "harkit")]
struct PyForest {
    inner: forest::Forest,
}

#[pymethods]
impl PyForest {
    #[staticmethod]
    #[pyo3(signature = (x, n_features, labels, n_trees=100, max_depth=None, seed=0))]
    fn fit(
        py: Python<'_>,
        x: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_trees: usize,
        max_depth: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let params = ForestParams {
            n_trees,
            max_depth,
            max_features: MaxFeatures::Sqrt,
            ..Default::default()
        };
        let inner = py.detach(|| forest::fit_forest(&x, n_features, &labels, &params, seed)).py()?;
        Ok(Self { inner })
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<usize>> {
        Ok(self.inner.predict(&x).py()?.labels)
    }

    /// Per-class vote fractions, row-major `[n][n_classes]`.
    fn predict_votes(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict(&x).py()?.votes)
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes
    }
}

/// `(accuracy, mean F1)` of predictions over the six activities.
#[pyfunction]
fn score(preds: Vec<usize>, labels: Vec<usize>) -> PyResult<(f64, f64)> {
    let cm = ConfusionMatrix::from_predictions(&preds, &labels, data::class_names()).py()?;
    Ok((cm.accuracy().py()?, cm.mean_f1().py()?))
}

/// Subject-wise `(train, val, test)` split.
#[pyfunction]
#[pyo3(signature = (subject_ids, test_frac=0.2, val_frac=0.2, seed=0))]
fn split_subjects(
    subject_ids: Vec<u32>,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> PyResult<(Vec<u32>, Vec<u32>, Vec<u32>)> {
    let s = data::split_subjects(&subject_ids, test_frac, val_frac, seed).py()?;
    Ok((
        s.train.into_iter().collect(),
        s.val.into_iter().collect(),
        s.test.into_iter().collect(),
    ))
}

#[pyfunction]
fn class_names() -> Vec<String> {
    data::class_names()
}

/// Write a synthetic dataset in the MotionSense directory layout.
#[pyfunction]
#[pyo3(signature = (root, subjects=24, seconds=20.0, seed=0))]
fn write_synthetic(root: PathBuf, subjects: u32, seconds: f64, seed: u64) -> PyResult<()> {
    let spec = SyntheticSpec {
        subjects,
        seconds_per_trial: seconds,
        seed,
        ..Default::default()
    };
    synthetic::write_dataset(&root, &spec).py()
}

#[pymodule]
fn harkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySummary>()?;
    m.add_class::<PyWindows>()?;
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(segment, m)?)?;
    m.add_function(wrap_pyfunction!(window_count, m)?)?;
    m.add_function(wrap_pyfunction!(ecdf_features, m)?)?;
    m.add_function(wrap_pyfunction!(statistical_features, m)?)?;
    m.add_function(wrap_pyfunction!(augment_window, m)?)?;
    m.add_function(wrap_pyfunction!(transforms, m)?)?;
    m.add_function(wrap_pyfunction!(nt_xent_loss, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(split_subjects, m)?)?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic, m)?)?;
    Ok(())
}
