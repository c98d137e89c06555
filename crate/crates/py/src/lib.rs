//! Python bindings for the `fsm_design` crate.

use fsm_design::designs::{self, DesignSpec};
use fsm_design::dgp::{self, Covariates, ScenarioKind, ScenarioSpec};
use fsm_design::engine::{self, AggregateOptions};
use fsm_design::{metrics, oracle, seed, study, Error, RunConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::DegenerateCovariate { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn scenario_spec(name: &str, tau: f64) -> PyResult<ScenarioSpec> {
    let kind = ScenarioKind::parse(name).map_err(to_py)?;
    Ok(ScenarioSpec { tau, ..ScenarioSpec::new(kind) })
}

fn load_config(toml: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match toml {
        Some(text) => RunConfig::from_toml(text),
        None => Ok(RunConfig::default()),
    }
    .map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

#[pyclass(name = "Sample", frozen)]
struct PySample(dgp::Sample);

#[pymethods]
impl PySample {
    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.x.p()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau()
    }

    /// Covariates as a list of rows.
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        (0..self.0.n())
            .map(|i| (0..self.0.x.p()).map(|j| self.0.x.get(i, j)).collect())
            .collect()
    }

    #[getter]
    fn y0(&self) -> Vec<f64> {
        self.0.y0.clone()
    }

    #[getter]
    fn y1(&self) -> Vec<f64> {
        self.0.y1.clone()
    }

    fn observed(&self, t: Vec<bool>) -> PyResult<Vec<f64>> {
        if t.len() != self.0.n() {
            return Err(PyValueError::new_err("assignment length does not match sample size"));
        }
        Ok(self.0.observed(&t))
    }

    fn __repr__(&self) -> String {
        format!("Sample(scenario={}, n={}, p={})", self.0.scenario.kind, self.0.n(), self.0.x.p())
    }
}

#[pyclass(name = "Design", frozen)]
struct PyDesign(DesignSpec);

#[pymethods]
impl PyDesign {
    #[staticmethod]
    fn cr() -> Self {
        Self(DesignSpec::cr())
    }

    #[staticmethod]
    #[pyo3(signature = (threshold = designs::DEFAULT_RR_THRESHOLD, max_attempts = designs::DEFAULT_MAX_ATTEMPTS))]
    fn rr(threshold: f64, max_attempts: usize) -> PyResult<Self> {
        let d = DesignSpec::rr(threshold).with_max_attempts(max_attempts);
        d.validate().map_err(to_py)?;
        Ok(Self(d))
    }

    #[staticmethod]
    #[pyo3(signature = (epsilon, max_attempts = designs::DEFAULT_MAX_ATTEMPTS))]
    fn fsm(epsilon: f64, max_attempts: usize) -> PyResult<Self> {
        let d = DesignSpec::fsm(epsilon).with_max_attempts(max_attempts);
        d.validate().map_err(to_py)?;
        Ok(Self(d))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.name()
    }

    #[getter]
    fn threshold(&self) -> Option<f64> {
        self.0.reported_threshold()
    }

    #[getter]
    fn max_attempts(&self) -> usize {
        self.0.max_attempts
    }

    fn __repr__(&self) -> String {
        match self.0.reported_threshold() {
            Some(t) => format!("Design({}, threshold={t}, max_attempts={})", self.0.kind.name(), self.0.max_attempts),
            None => format!("Design({})", self.0.kind.name()),
        }
    }
}

#[pyclass(name = "Outcome", frozen, get_all)]
struct PyOutcome {
    accepted: bool,
    t: Vec<bool>,
    n1: usize,
    n0: usize,
    attempts: usize,
    achieved_asmd: f64,
}

#[pymethods]
impl PyOutcome {
    fn __repr__(&self) -> String {
        format!(
            "Outcome(accepted={}, attempts={}, achieved_asmd={:.6})",
            self.accepted, self.attempts, self.achieved_asmd
        )
    }
}

#[pyclass(name = "CurvePoint", frozen, get_all)]
struct PyCurvePoint {
    scenario: String,
    n: usize,
    design: String,
    epsilon: Option<f64>,
    split: String,
    r_total: usize,
    r_effective: usize,
    asmd_mean: Option<f64>,
    asmd_se: Option<f64>,
    bias: Option<f64>,
    variance: Option<f64>,
    mse: Option<f64>,
    mse_se: Option<f64>,
    accept_prob_single: f64,
    accept_prob_single_se: Option<f64>,
    accept_within_attempts: f64,
    exhaustion_rate: f64,
    avg_neyman_var: Option<f64>,
    vrr: Option<f64>,
    vrr_se: Option<f64>,
}

impl From<&engine::CurvePoint> for PyCurvePoint {
    fn from(c: &engine::CurvePoint) -> Self {
        Self {
            scenario: c.scenario.name().into(),
            n: c.n,
            design: c.design.name().into(),
            epsilon: c.epsilon,
            split: c.split.name().into(),
            r_total: c.r_total,
            r_effective: c.r_effective,
            asmd_mean: c.asmd_mean,
            asmd_se: c.asmd_se,
            bias: c.bias,
            variance: c.variance,
            mse: c.mse,
            mse_se: c.mse_se,
            accept_prob_single: c.accept_prob_single,
            accept_prob_single_se: c.accept_prob_single_se,
            accept_within_attempts: c.accept_within_attempts,
            exhaustion_rate: c.exhaustion_rate,
            avg_neyman_var: c.avg_neyman_var,
            vrr: c.vrr,
            vrr_se: c.vrr_se,
        }
    }
}

#[pymethods]
impl PyCurvePoint {
    fn is_feasible(&self) -> bool {
        self.r_effective >= 2
    }

    fn __repr__(&self) -> String {
        format!(
            "CurvePoint({} n={} {} eps={:?} split={} mse={:?} accept={:.4})",
            self.scenario, self.n, self.design, self.epsilon, self.split, self.mse, self.accept_prob_single
        )
    }
}

#[pyclass(name = "Selection", frozen, get_all)]
struct PySelection {
    scenario: String,
    n: usize,
    rule: String,
    min_accept: Option<f64>,
    epsilon_star: f64,
    train_mse: f64,
    skipped: Vec<f64>,
    feasible_range: Option<(f64, f64)>,
    test: Option<Py<PyCurvePoint>>,
}

#[pymethods]
impl PySelection {
    fn __repr__(&self) -> String {
        format!(
            "Selection({} n={} {} eps*={} train_mse={:.6})",
            self.scenario, self.n, self.rule, self.epsilon_star, self.train_mse
        )
    }
}

#[pyclass(name = "ExactPoint", frozen, get_all)]
struct PyExactPoint {
    epsilon: f64,
    accepted: usize,
    accept_prob: f64,
    cond_mean: Option<f64>,
    cond_var: Option<f64>,
    cond_mse: Option<f64>,
    reference_var: Option<f64>,
}

#[pyfunction]
#[pyo3(signature = (scenario, n, p = 5, seed = 0, tau = 1.0))]
fn generate_sample(scenario: &str, n: usize, p: usize, seed: u64, tau: f64) -> PyResult<PySample> {
    let spec = scenario_spec(scenario, tau)?;
    dgp::generate_sample(&spec, n, p, seed).map(PySample).map_err(to_py)
}

#[pyfunction]
fn asmd(x: Vec<Vec<f64>>, t: Vec<bool>) -> PyResult<f64> {
    let cov = Covariates::from_rows(&x).map_err(to_py)?;
    metrics::asmd(&cov, &t).map_err(to_py)
}

#[pyfunction]
fn diff_in_means(y: Vec<f64>, t: Vec<bool>) -> PyResult<f64> {
    metrics::diff_in_means(&y, &t).map_err(to_py)
}

#[pyfunction]
fn neyman_variance(y: Vec<f64>, t: Vec<bool>) -> PyResult<f64> {
    metrics::neyman_variance(&y, &t).map_err(to_py)
}

/// Draws one assignment for `sample` under `design`.
#[pyfunction]
#[pyo3(signature = (sample, design, seed = 0))]
fn assign(sample: &PySample, design: &PyDesign, seed: u64) -> PyResult<PyOutcome> {
    let rng = seed::stream_rng(seed, seed::ASSIGNMENT_STREAM);
    let out = designs::assign(&sample.0.x, &design.0, rng).map_err(to_py)?;
    let a = out.assignment();
    Ok(PyOutcome {
        accepted: out.is_accepted(),
        t: a.t.clone(),
        n1: a.n1,
        n0: a.n0,
        attempts: out.attempts(),
        achieved_asmd: a.achieved_asmd,
    })
}

/// Runs one design on a `(scenario, n)` cell and aggregates all replications;
/// VRR is taken against complete randomization on the same replications.
#[pyfunction]
#[pyo3(signature = (scenario, n, design, replications = 1000, seed = 0, p = 5, bootstrap_b = 1000))]
#[allow(clippy::too_many_arguments)]
fn run_cell(
    py: Python<'_>,
    scenario: &str,
    n: usize,
    design: &PyDesign,
    replications: usize,
    seed: u64,
    p: usize,
    bootstrap_b: usize,
) -> PyResult<PyCurvePoint> {
    let spec = scenario_spec(scenario, 1.0)?;
    let d = design.0;
    let point = py
        .detach(|| {
            let recs = engine::run_designs(&spec, n, p, &[DesignSpec::cr(), d], replications, seed)?;
            let opts = AggregateOptions {
                bootstrap_b,
                seed,
                ..AggregateOptions::default()
            };
            engine::aggregate(&recs[1], Some(&recs[0]), &opts)
        })
        .map_err(to_py)?;
    Ok(PyCurvePoint::from(&point))
}

/// Runs the sweep described by a TOML config (defaults when omitted) and
/// returns every curve point.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn sweep(py: Python<'_>, config: Option<&str>) -> PyResult<Vec<PyCurvePoint>> {
    let cfg = load_config(config)?;
    let out = py.detach(|| study::run_sweep(&cfg)).map_err(to_py)?;
    Ok(out.cells.iter().flat_map(|c| &c.curves).map(PyCurvePoint::from).collect())
}

/// Runs the sweep and the threshold selection for every cell.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn select(py: Python<'_>, config: Option<&str>) -> PyResult<Vec<PySelection>> {
    let cfg = load_config(config)?;
    let rows = py
        .detach(|| study::run_sweep(&cfg).and_then(|s| study::run_selection(&cfg, &s)))
        .map_err(to_py)?;
    rows.iter()
        .map(|row| {
            let r = &row.result;
            let test = r
                .test_curve_point
                .as_ref()
                .map(|c| Py::new(py, PyCurvePoint::from(c)))
                .transpose()?;
            Ok(PySelection {
                scenario: row.scenario.name().into(),
                n: row.n,
                rule: r.rule.name().into(),
                min_accept: r.rule.min_accept(),
                epsilon_star: r.epsilon_star,
                train_mse: r.train_mse,
                skipped: r.skipped.clone(),
                feasible_range: r.feasible_range,
                test,
            })
        })
        .collect()
}

/// Exact acceptance probability and conditional moments by enumerating every balanced assignment.
#[pyfunction]
fn exact_curve(py: Python<'_>, sample: &PySample, grid: Vec<f64>) -> PyResult<Vec<PyExactPoint>> {
    let curve = py.detach(|| oracle::exact_curve(&sample.0, &grid)).map_err(to_py)?;
    Ok(curve
        .points
        .iter()
        .map(|e| PyExactPoint {
            epsilon: e.epsilon,
            accepted: e.accepted,
            accept_prob: e.accept_prob,
            cond_mean: e.cond_mean,
            cond_var: e.cond_var,
            cond_mse: e.cond_mse,
            reference_var: e.reference_var,
        })
        .collect())
}

/// The built-in `n = 8`, `p = 2` oracle sample.
#[pyfunction]
fn oracle_fixture() -> PyResult<PySample> {
    oracle::fixture::read_sample(study::ORACLE_FIXTURE).map(PySample).map_err(to_py)
}

#[pymodule]
fn fsmdesign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyOutcome>()?;
    m.add_class::<PyCurvePoint>()?;
    m.add_class::<PySelection>()?;
    m.add_class::<PyExactPoint>()?;
    m.add_function(wrap_pyfunction!(generate_sample, m)?)?;
    m.add_function(wrap_pyfunction!(asmd, m)?)?;
    m.add_function(wrap_pyfunction!(diff_in_means, m)?)?;
    m.add_function(wrap_pyfunction!(neyman_variance, m)?)?;
    m.add_function(wrap_pyfunction!(assign, m)?)?;
    m.add_function(wrap_pyfunction!(run_cell, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(exact_curve, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_fixture, m)?)?;
    m.add("ORACLE_FIXTURE_GRID", study::ORACLE_FIXTURE_GRID.to_vec())?;
    Ok(())
}
