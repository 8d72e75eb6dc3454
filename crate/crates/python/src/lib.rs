//! Python bindings. Vectors cross the boundary as lists of floats; reports
//! come back as plain dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tdha_core::data::{self, DataError, EmbeddingBundle, SyntheticParams};
use tdha_core::eval::{self, EvalSettings, Grid, SweepParam};
use tdha_core::geomcheck::{self, CheckSizes};
use tdha_core::inference::{DEFAULT_ALPHA, DEFAULT_EPSILON, DEFAULT_TAU};
use tdha_core::poincare::{self, FrechetOptions, GeometryError};
use tdha_core::prototype::{PrototypeConfig, DEFAULT_SCALE};
use tdha_core::textbank::{self, AggregateMode};
use tdha_core::{BallPoint, Components, EmbeddingVector, FusionConfig, MeanMode, Metric, SupportSet};

create_exception!(tdha, TdhaDataError, PyOSError, "Unreadable or inconsistent embedding bundle.");
create_exception!(tdha, TdhaGeometryError, PyValueError, "Invalid input to a ball operation.");

fn core_err(e: tdha_core::Error) -> PyErr {
    match e {
        tdha_core::Error::Data(d) => data_err(d),
        tdha_core::Error::Geometry(g) => geom_err(g),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn data_err(e: DataError) -> PyErr {
    TdhaDataError::new_err(e.to_string())
}

fn geom_err(e: GeometryError) -> PyErr {
    TdhaGeometryError::new_err(e.to_string())
}

fn vector(v: Vec<f64>) -> PyResult<EmbeddingVector> {
    EmbeddingVector::new(v).map_err(geom_err)
}

fn point(v: Vec<f64>) -> PyResult<BallPoint> {
    BallPoint::new(v).map_err(geom_err)
}

fn points(vs: Vec<Vec<f64>>) -> PyResult<Vec<BallPoint>> {
    vs.into_iter().map(point).collect()
}

fn parse<T: std::str::FromStr<Err = tdha_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(core_err)
}

fn metric(s: &str) -> PyResult<Metric> {
    match s {
        "hd" => Ok(Metric::Hd),
        "ecs" => Ok(Metric::Ecs),
        other => Err(PyValueError::new_err(format!("unknown metric {other:?} (expected hd or ecs)"))),
    }
}

fn aggregate_mode(s: &str) -> PyResult<AggregateMode> {
    match s {
        "normalized" => Ok(AggregateMode::Normalized),
        "raw" => Ok(AggregateMode::Raw),
        other => Err(PyValueError::new_err(format!("unknown aggregate mode {other:?} (expected normalized or raw)"))),
    }
}

/// Serialises through JSON so Python gets ordinary dicts and lists.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn exp_map_origin(w: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(poincare::exp_map_origin(&vector(w)?).into_inner())
}

#[pyfunction]
fn log_map_origin(y: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(poincare::log_map_origin(&point(y)?).into_inner())
}

#[pyfunction]
fn distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    poincare::distance(&point(a)?, &point(b)?).map_err(geom_err)
}

#[pyfunction]
fn conformal_factor(a: Vec<f64>) -> PyResult<f64> {
    poincare::conformal_factor(&a).map_err(geom_err)
}

#[pyfunction]
fn ambient_mean(points_: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(poincare::ambient_mean(&points(points_)?).map_err(geom_err)?.into_inner())
}

#[pyfunction]
fn tangent_mean(points_: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(poincare::tangent_mean(&points(points_)?).map_err(geom_err)?.into_inner())
}

#[pyfunction]
#[pyo3(signature = (points_, tolerance = 1e-10, max_iterations = 10_000))]
fn frechet_mean(points_: Vec<Vec<f64>>, tolerance: f64, max_iterations: usize) -> PyResult<Vec<f64>> {
    let opts = FrechetOptions { tolerance, max_iterations };
    Ok(poincare::frechet_mean_oracle(&points(points_)?, &opts).map_err(geom_err)?.into_inner())
}

#[pyfunction]
#[pyo3(signature = (v, scale = DEFAULT_SCALE))]
fn preprocess(v: Vec<f64>, scale: f64) -> PyResult<Vec<f64>> {
    Ok(tdha_core::prototype::preprocess_feature(&vector(v)?, scale).map_err(core_err)?.into_inner())
}

#[pyfunction]
fn negate_prompt(template: &str, class_name: &str) -> PyResult<String> {
    textbank::negate_prompt_text(template, class_name).map_err(core_err)
}

#[pyfunction]
fn fill_prompt(template: &str, class_name: &str) -> PyResult<String> {
    textbank::fill_prompt_text(template, class_name).map_err(core_err)
}

/// Positive and negative prototypes built from an N-shot support set.
#[pyclass(name = "PrototypeSet", frozen)]
struct PyPrototypeSet {
    inner: tdha_core::PrototypeSet,
    scale: f64,
}

#[pymethods]
impl PyPrototypeSet {
    #[new]
    #[pyo3(signature = (features, labels, class_names = None, scale = DEFAULT_SCALE, seed = 0, mean_mode = "ambient"))]
    fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Option<Vec<String>>,
        scale: f64,
        seed: u64,
        mean_mode: &str,
    ) -> PyResult<Self> {
        let features = features.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
        let support = match class_names {
            Some(names) => SupportSet::new(features, labels, names),
            None => {
                let k = labels.iter().max().map_or(0, |m| m + 1);
                SupportSet::with_default_names(features, labels, k)
            }
        }
        .map_err(core_err)?;
        let config = PrototypeConfig { scale, seed, mean_mode: parse::<MeanMode>(mean_mode)? };
        let inner = tdha_core::PrototypeSet::build(&support, &config).map_err(core_err)?;
        Ok(Self { inner, scale })
    }

    #[getter]
    fn positive(&self) -> Vec<Vec<f64>> {
        self.inner.positive.iter().map(|p| p.coords().to_vec()).collect()
    }

    #[getter]
    fn negative(&self) -> Vec<Vec<f64>> {
        self.inner.negative.iter().map(|p| p.coords().to_vec()).collect()
    }

    #[getter]
    fn diagnostics(&self) -> Vec<String> {
        self.inner.diagnostics.clone()
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.scale
    }

    fn __len__(&self) -> usize {
        self.inner.class_count()
    }
}

/// Per-class unit text features.
#[pyclass(name = "TextBank", frozen)]
struct PyTextBank {
    inner: tdha_core::TextBank,
}

#[pymethods]
impl PyTextBank {
    /// One vector per class and polarity; each is normalised.
    #[new]
    #[pyo3(signature = (positive, negative, class_names = None))]
    fn new(positive: Vec<Vec<f64>>, negative: Vec<Vec<f64>>, class_names: Option<Vec<String>>) -> PyResult<Self> {
        let names = class_names.unwrap_or_else(|| (0..positive.len()).map(|k| format!("class_{k}")).collect());
        let pos = positive.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
        let neg = negative.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: tdha_core::TextBank::new(names, pos, neg).map_err(core_err)? })
    }

    /// Ensembles several prompt embeddings per class.
    #[staticmethod]
    #[pyo3(signature = (positive, negative, class_names = None, mode = "normalized"))]
    fn from_prompts(
        positive: Vec<Vec<Vec<f64>>>,
        negative: Vec<Vec<Vec<f64>>>,
        class_names: Option<Vec<String>>,
        mode: &str,
    ) -> PyResult<Self> {
        let conv = |side: Vec<Vec<Vec<f64>>>| -> PyResult<Vec<Vec<EmbeddingVector>>> {
            side.into_iter().map(|ps| ps.into_iter().map(vector).collect()).collect()
        };
        let names = class_names.unwrap_or_else(|| (0..positive.len()).map(|k| format!("class_{k}")).collect());
        let bank = tdha_core::PromptBank { class_names: names, positive: conv(positive)?, negative: conv(negative)? };
        Ok(Self { inner: textbank::aggregate(&bank, aggregate_mode(mode)?).map_err(core_err)? })
    }

    #[getter]
    fn positive(&self) -> Vec<Vec<f64>> {
        self.inner.positive().to_vec()
    }

    #[getter]
    fn negative(&self) -> Vec<Vec<f64>> {
        self.inner.negative().to_vec()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }
}

/// Predicted class and fused scores for each test vector.
#[pyfunction]
#[pyo3(signature = (
    test, prototypes, text_bank, alpha = DEFAULT_ALPHA, epsilon = DEFAULT_EPSILON, tau = DEFAULT_TAU,
    components = "iip+,iip-,itp+,itp-", metric = "hd", renormalize = false
))]
#[allow(clippy::too_many_arguments)]
fn classify(
    py: Python<'_>,
    test: Vec<Vec<f64>>,
    prototypes: &PyPrototypeSet,
    text_bank: &PyTextBank,
    alpha: f64,
    epsilon: f64,
    tau: f64,
    components: &str,
    metric: &str,
    renormalize: bool,
) -> PyResult<Vec<(usize, Vec<f64>)>> {
    let config = FusionConfig {
        alpha,
        epsilon,
        tau,
        components: parse::<Components>(components)?,
        metric: self::metric(metric)?,
        renormalize,
    };
    let test = test.into_iter().map(vector).collect::<PyResult<Vec<_>>>()?;
    let out = py
        .detach(|| tdha_core::classify_batch(&test, &prototypes.inner, &text_bank.inner, &config, prototypes.scale))
        .map_err(core_err)?;
    Ok(out.into_iter().map(|(c, p)| (c, p.scores)).collect())
}

/// An on-disk embedding bundle.
#[pyclass(name = "Bundle", frozen)]
struct PyBundle {
    inner: EmbeddingBundle,
}

fn rows(m: &data::Matrix) -> Vec<Vec<f32>> {
    m.iter_rows().map(<[f32]>::to_vec).collect()
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::read_bundle(&path).map_err(data_err)? })
    }

    /// Generates a synthetic hierarchical bundle.
    #[staticmethod]
    #[pyo3(signature = (
        super_count = 4, classes_per_super = 4, dim = 32, noise_sigma = 0.35, modality_gap = 0.15,
        train_per_class = 64, test_per_class = 100, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        super_count: usize,
        classes_per_super: usize,
        dim: usize,
        noise_sigma: f64,
        modality_gap: f64,
        train_per_class: usize,
        test_per_class: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let p = SyntheticParams {
            super_count,
            classes_per_super,
            dim,
            noise_sigma,
            modality_gap,
            train_per_class,
            test_per_class,
            seed,
        };
        let inner = data::generate_synthetic(&p).map_err(|e| match e {
            DataError::Validation(m) => PyValueError::new_err(m),
            other => data_err(other),
        })?;
        Ok(Self { inner })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        data::write_bundle(&self.inner, &path).map_err(data_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.inner.metadata {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// `(features, labels)` of one split: train, test, text_positive or text_negative.
    fn split(&self, name: &str) -> PyResult<(Vec<Vec<f32>>, Vec<usize>)> {
        let m = match name {
            "train" => &self.inner.train,
            "test" => &self.inner.test,
            "text_positive" => &self.inner.text_positive,
            "text_negative" => &self.inner.text_negative,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        Ok((rows(&m.features), m.labels.clone()))
    }

    #[pyo3(signature = (mode = "normalized"))]
    fn text_bank(&self, mode: &str) -> PyResult<PyTextBank> {
        Ok(PyTextBank { inner: self.inner.text_bank(aggregate_mode(mode)?).map_err(core_err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Bundle(classes={}, dim={}, train={}, test={})",
            self.inner.class_count(),
            self.inner.dim,
            self.inner.train.len(),
            self.inner.test.len()
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn settings(
    shots: Vec<usize>,
    episodes: usize,
    seed: u64,
    alpha: f64,
    epsilon: f64,
    tau: f64,
    scale: f64,
    components: &str,
    metric: &str,
    mean_mode: &str,
) -> PyResult<EvalSettings> {
    let s = EvalSettings {
        shots,
        episodes,
        seed,
        fusion: FusionConfig {
            alpha,
            epsilon,
            tau,
            components: parse::<Components>(components)?,
            metric: self::metric(metric)?,
            renormalize: false,
        },
        scale,
        mean_mode: parse::<MeanMode>(mean_mode)?,
        aggregate: AggregateMode::Normalized,
    };
    s.validate().map_err(core_err)?;
    Ok(s)
}

/// Runs N-shot episodes; `kind` is eval, ablation, metric or polarity.
#[pyfunction]
#[pyo3(signature = (
    bundle, test_bundle = None, kind = "eval", shots = vec![1, 2, 4, 8, 16], episodes = eval::DEFAULT_EPISODES,
    seed = 1, alpha = DEFAULT_ALPHA, epsilon = DEFAULT_EPSILON, tau = DEFAULT_TAU, scale = DEFAULT_SCALE,
    components = "iip+,iip-,itp+,itp-", metric = "hd", mean_mode = "ambient"
))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    bundle: &PyBundle,
    test_bundle: Option<&PyBundle>,
    kind: &str,
    shots: Vec<usize>,
    episodes: usize,
    seed: u64,
    alpha: f64,
    epsilon: f64,
    tau: f64,
    scale: f64,
    components: &str,
    metric: &str,
    mean_mode: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let s = settings(shots, episodes, seed, alpha, epsilon, tau, scale, components, metric, mean_mode)?;
    let source = &bundle.inner;
    let target = test_bundle.map(|b| &b.inner);
    match kind {
        "eval" => to_py(py, &py.detach(|| eval::run_eval(source, target, &s)).map_err(core_err)?),
        "ablation" => to_py(py, &py.detach(|| eval::run_ablation(source, target, &s)).map_err(core_err)?),
        "metric" => to_py(py, &py.detach(|| eval::run_metric_comparison(source, target, &s)).map_err(core_err)?),
        "polarity" => to_py(py, &py.detach(|| eval::run_polarity_comparison(source, target, &s)).map_err(core_err)?),
        other => Err(PyValueError::new_err(format!("unknown kind {other:?}"))),
    }
}

/// Accuracy over a `start:stop:step` grid of alpha, epsilon or scale.
#[pyfunction]
#[pyo3(signature = (
    bundle, param = "alpha", grid = eval::DEFAULT_ALPHA_GRID, shots = vec![16], episodes = eval::DEFAULT_EPISODES,
    seed = 1, components = "iip+,iip-,itp+,itp-"
))]
#[allow(clippy::too_many_arguments)]
fn sweep<'py>(
    py: Python<'py>,
    bundle: &PyBundle,
    param: &str,
    grid: &str,
    shots: Vec<usize>,
    episodes: usize,
    seed: u64,
    components: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let s = settings(
        shots,
        episodes,
        seed,
        DEFAULT_ALPHA,
        DEFAULT_EPSILON,
        DEFAULT_TAU,
        DEFAULT_SCALE,
        components,
        "hd",
        "ambient",
    )?;
    let p = parse::<SweepParam>(param)?;
    let g = Grid::parse(grid).map_err(core_err)?;
    let report = py.detach(|| eval::run_sweep(&bundle.inner, None, &s, p, &g)).map_err(core_err)?;
    to_py(py, &report)
}

/// Geometry self-check report as a dict.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn geom_check(py: Python<'_>, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let report = py.detach(|| geomcheck::run_checks(geomcheck::reference_distance, &CheckSizes::default(), seed));
    to_py(py, &report)
}

#[pymodule]
pub fn tdha(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TdhaDataError", m.py().get_type::<TdhaDataError>())?;
    m.add("TdhaGeometryError", m.py().get_type::<TdhaGeometryError>())?;
    m.add_class::<PyPrototypeSet>()?;
    m.add_class::<PyTextBank>()?;
    m.add_class::<PyBundle>()?;
    m.add_function(wrap_pyfunction!(exp_map_origin, m)?)?;
    m.add_function(wrap_pyfunction!(log_map_origin, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(conformal_factor, m)?)?;
    m.add_function(wrap_pyfunction!(ambient_mean, m)?)?;
    m.add_function(wrap_pyfunction!(tangent_mean, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_mean, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(negate_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(fill_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(geom_check, m)?)?;
    Ok(())
}
