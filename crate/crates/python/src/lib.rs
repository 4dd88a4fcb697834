//! Python bindings. Grid functions cross the boundary as flat lists in
//! node-major order (`values[i * dim + k]`).

use std::path::PathBuf;

use banach_sa::cli::config::ExperimentConfig;
use banach_sa::cli::{cmd_run, cmd_verify};
use banach_sa::noise::{NoiseModel, ScaleRule};
use banach_sa::operators::{
    kernel_contraction, linear_contraction, theta_rho_from_bounds as bounds_to_theta_rho,
    verify_r2, MonotoneBounds, RootProblem,
};
use banach_sa::sa::{self, Trajectory};
use banach_sa::schedule::StepSchedule;
use banach_sa::space::{GridFunction, SpaceDescriptor};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Space", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpace(SpaceDescriptor);

impl PySpace {
    fn function(&self, values: Vec<f64>) -> PyResult<GridFunction> {
        GridFunction::new(self.0.m(), self.0.d(), values).map_err(value_err)
    }
}

#[pymethods]
impl PySpace {
    #[staticmethod]
    #[pyo3(signature = (grid, dim = 1))]
    fn sup(grid: usize, dim: usize) -> PyResult<Self> {
        SpaceDescriptor::sup(grid, dim).map(Self).map_err(value_err)
    }

    /// `L^p` space; `smoothness` is the constant `D` of the inequality at exponent `min(p, 2)`.
    #[staticmethod]
    #[pyo3(signature = (p, grid, dim = 1, smoothness = None))]
    fn lp(p: f64, grid: usize, dim: usize, smoothness: Option<f64>) -> PyResult<Self> {
        let s = SpaceDescriptor::lp(p, grid, dim).map_err(value_err)?;
        match smoothness {
            Some(c) => s
                .with_smoothness(p.min(2.0), c)
                .map(Self)
                .map_err(value_err),
            None => Ok(Self(s)),
        }
    }

    #[getter]
    fn grid(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.d()
    }

    fn norm(&self, values: Vec<f64>) -> PyResult<f64> {
        Ok(self.0.norm(&self.function(values)?))
    }

    fn zeros(&self) -> Vec<f64> {
        self.0.zeros().into_values()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "Schedule", frozen, from_py_object)]
#[derive(Clone)]
struct PySchedule(StepSchedule);

#[pymethods]
impl PySchedule {
    /// `alpha_n = a / (n + b)^q`.
    #[staticmethod]
    fn power_law(a: f64, b: f64, q: f64) -> PyResult<Self> {
        StepSchedule::power_law(a, b, q)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn log_harmonic() -> Self {
        Self(StepSchedule::log_harmonic())
    }

    #[staticmethod]
    fn constant(a: f64) -> PyResult<Self> {
        StepSchedule::constant(a).map(Self).map_err(value_err)
    }

    fn alpha(&self, n: usize) -> f64 {
        self.0.alpha(n)
    }

    fn __repr__(&self) -> String {
        self.0.label()
    }
}

#[pyclass(name = "Noise", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNoise(NoiseModel);

fn scale_rule(
    scale: Option<f64>,
    growth: f64,
    schedule: Option<&PySchedule>,
) -> PyResult<ScaleRule> {
    match (scale, schedule) {
        (Some(scale), None) => Ok(ScaleRule::Fixed { scale, growth }),
        (None, Some(s)) => Ok(ScaleRule::Calibrated {
            schedule: s.0.clone(),
        }),
        _ => Err(PyValueError::new_err(
            "give exactly one of `scale` and `calibrate_to`",
        )),
    }
}

#[pymethods]
impl PyNoise {
    /// Brownian paths with `Var Z(1) = sigma^2`.
    #[staticmethod]
    fn gaussian(sigma: f64, space: &PySpace) -> PyResult<Self> {
        NoiseModel::gaussian(sigma, space.0)
            .map(Self)
            .map_err(value_err)
    }

    /// Random-walk paths with `E|Z(1)|^2 = sigma^2`.
    #[staticmethod]
    fn martingale(sigma: f64, space: &PySpace) -> PyResult<Self> {
        NoiseModel::martingale(sigma, space.0)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (tail, space, scale = None, growth = 0.0, calibrate_to = None))]
    fn heavy_tailed_global(
        tail: f64,
        space: &PySpace,
        scale: Option<f64>,
        growth: f64,
        calibrate_to: Option<PySchedule>,
    ) -> PyResult<Self> {
        let rule = scale_rule(scale, growth, calibrate_to.as_ref())?;
        NoiseModel::heavy_tailed_global(tail, rule, space.0)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (tail, space, scale = None, growth = 0.0, calibrate_to = None))]
    fn heavy_tailed_pointwise(
        tail: f64,
        space: &PySpace,
        scale: Option<f64>,
        growth: f64,
        calibrate_to: Option<PySchedule>,
    ) -> PyResult<Self> {
        let rule = scale_rule(scale, growth, calibrate_to.as_ref())?;
        NoiseModel::heavy_tailed_pointwise(tail, rule, space.0)
            .map(Self)
            .map_err(value_err)
    }

    /// The noise sample entering step `n` of the run seeded with `seed`.
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.0.sample(n, seed).into_values()
    }

    #[getter]
    fn label(&self) -> &'static str {
        self.0.label()
    }
}

#[pyclass(name = "Problem", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProblem(RootProblem);

#[pymethods]
impl PyProblem {
    /// Root of `x - (gamma x + offset)`.
    #[staticmethod]
    fn linear_contraction(gamma: f64, offset: Vec<f64>, space: &PySpace) -> PyResult<Self> {
        linear_contraction(gamma, space.function(offset)?, space.0)
            .map(Self)
            .map_err(value_err)
    }

    /// Root of `x - (gamma K x + offset)` with a Gaussian smoothing kernel `K`.
    #[staticmethod]
    fn kernel_contraction(
        gamma: f64,
        bandwidth: f64,
        offset: Vec<f64>,
        space: &PySpace,
    ) -> PyResult<Self> {
        kernel_contraction(gamma, bandwidth, space.function(offset)?, space.0)
            .map(Self)
            .map_err(value_err)
    }

    /// Builds the `[space]` and `[problem]` sections of a TOML experiment.
    #[staticmethod]
    fn from_config(toml: &str) -> PyResult<(Self, PySpace)> {
        let cfg = ExperimentConfig::from_toml(toml).map_err(value_err)?;
        let space = cfg.build_space().map_err(value_err)?;
        let problem = cfg.build_problem(&space).map_err(value_err)?;
        Ok((Self(problem), PySpace(space)))
    }

    #[getter]
    fn x_star(&self) -> Vec<f64> {
        self.0.x_star().values().to_vec()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho()
    }

    fn apply(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = PySpace(*self.0.space()).function(x)?;
        Ok(self.0.apply(&x).into_values())
    }

    fn error(&self, x: Vec<f64>) -> PyResult<f64> {
        let x = PySpace(*self.0.space()).function(x)?;
        Ok(self.0.error(&x))
    }

    /// Largest sampled `||x - G(x)/theta - x*|| / ||x - x*||`.
    #[pyo3(signature = (samples = 2000, radius = 10.0, seed = 0))]
    fn max_contraction_ratio(&self, samples: usize, radius: f64, seed: u64) -> f64 {
        verify_r2(&self.0, samples, radius, seed)
    }
}

#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory(Trajectory);

#[pymethods]
impl PyTrajectory {
    /// `||x_n - x*||` for `n = 0..=N`.
    #[getter]
    fn error_curve(&self) -> Vec<f64> {
        self.0.error_curve.clone()
    }

    #[getter]
    fn final_error(&self) -> f64 {
        self.0.final_error()
    }

    #[getter]
    fn final_iterate(&self) -> Vec<f64> {
        self.0.final_iterate().values().to_vec()
    }

    #[getter]
    fn checkpoints(&self) -> Vec<(usize, Vec<f64>)> {
        self.0
            .checkpoints
            .iter()
            .map(|c| (c.n, c.iterate.values().to_vec()))
            .collect()
    }

    #[getter]
    fn psi_curve(&self) -> Vec<f64> {
        self.0.psi_curve.clone()
    }

    #[getter]
    fn gain_curve(&self) -> Vec<f64> {
        self.0.gain_curve.clone()
    }

    /// Run metadata as a JSON string.
    #[getter]
    fn metadata(&self) -> String {
        self.0.metadata_json()
    }
}

#[pyfunction]
fn run_stochastic(
    py: Python<'_>,
    problem: &PyProblem,
    noise: &PyNoise,
    schedule: &PySchedule,
    x0: Vec<f64>,
    n_steps: usize,
    seed: u64,
) -> PyResult<PyTrajectory> {
    let x0 = PySpace(*problem.0.space()).function(x0)?;
    let noise = noise.0.clone().with_scale_table(n_steps);
    py.detach(|| sa::run_stochastic(&problem.0, &noise, &schedule.0, &x0, n_steps, seed))
        .map(PyTrajectory)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Deterministic recursion driven by `z_k = ((-1)^k / alpha_k) h / (k + 1)^2`.
#[pyfunction]
#[pyo3(signature = (problem, h, schedule, x0, n_steps, psi = true))]
fn run_deterministic(
    py: Python<'_>,
    problem: &PyProblem,
    h: Vec<f64>,
    schedule: &PySchedule,
    x0: Vec<f64>,
    n_steps: usize,
    psi: bool,
) -> PyResult<PyTrajectory> {
    let space = PySpace(*problem.0.space());
    let (h, x0) = (space.function(h)?, space.function(x0)?);
    let z = sa::summable_sequence(h, schedule.0.clone());
    py.detach(|| sa::run_deterministic(&problem.0, &z, &schedule.0, psi, &x0, n_steps))
        .map(PyTrajectory)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs a TOML experiment into `out_dir`; returns `(n, q25, median, q75)` rows.
#[pyfunction]
fn run_config(
    py: Python<'_>,
    toml: &str,
    out_dir: PathBuf,
) -> PyResult<Vec<(usize, f64, f64, f64)>> {
    let cfg = ExperimentConfig::from_toml(toml).map_err(value_err)?;
    let outcome = py
        .detach(|| cmd_run(&cfg, &out_dir))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(outcome
        .summary
        .iter()
        .map(|s| (s.n, s.q25, s.median, s.q75))
        .collect())
}

/// Certificate table of a TOML experiment as `(check, detail, status)` rows.
#[pyfunction]
fn verify_config(py: Python<'_>, toml: &str) -> PyResult<Vec<(String, String, String)>> {
    let cfg = ExperimentConfig::from_toml(toml).map_err(value_err)?;
    let report = py
        .detach(|| cmd_verify(&cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(report
        .rows
        .into_iter()
        .map(|r| (r.check, r.detail, format!("{:?}", r.status).to_uppercase()))
        .collect())
}

/// `(theta, rho)` for a pointwise map with derivative in `[c1, c2]`.
#[pyfunction]
fn theta_rho_from_bounds(c1: f64, c2: f64) -> PyResult<(f64, f64)> {
    Ok(bounds_to_theta_rho(
        MonotoneBounds::new(c1, c2).map_err(value_err)?,
    ))
}

/// `sum_{k=m}^{n} beta_k prod_{j=k+1}^{n} (1 - beta_j) + prod_{j=m}^{n} (1 - beta_j)`.
#[pyfunction]
fn partition_identity(beta: Vec<f64>, m: usize, n: usize) -> PyResult<f64> {
    if n >= beta.len() || m > n {
        return Err(PyValueError::new_err("need m <= n < len(beta)"));
    }
    Ok(sa::partition_identity(&beta, m, n))
}

#[pymodule]
fn banach_sa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpace>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyNoise>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(run_stochastic, m)?)?;
    m.add_function(wrap_pyfunction!(run_deterministic, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify_config, m)?)?;
    m.add_function(wrap_pyfunction!(theta_rho_from_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(partition_identity, m)?)?;
    Ok(())
}
