//! Python bindings: experiment configs, end-to-end runs and the analytic
//! building blocks (generalization statement, bound constants, θ).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use feel_core::bound::{self, BoundInputs};
use feel_core::cli::{self, ExperimentConfig, RunOutput, Scheme, SweepAxis};
use feel_core::cost::RoundDecision;
use feel_core::datasets::LabelDistribution;
use feel_core::generalization::{self, Branch};
use feel_core::presets::PRESET_NAMES;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Experiment configuration; mirrors the `section.key = value` file format.
#[pyclass(name = "Config", module = "feel", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (preset = "mnist-lenet"))]
    fn new(preset: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_preset(preset).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::parse(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::load(&path).map_err(value_err)?,
        })
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    #[getter]
    fn preset(&self) -> String {
        self.inner.preset.clone()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, v: Vec<u64>) {
        self.inner.seeds = v;
    }

    #[getter]
    fn schemes(&self) -> Vec<String> {
        self.inner.schemes.iter().map(|s| s.to_string()).collect()
    }

    #[setter]
    fn set_schemes(&mut self, v: Vec<String>) -> PyResult<()> {
        self.inner.schemes = v
            .iter()
            .map(|s| s.parse::<Scheme>())
            .collect::<Result<_, _>>()
            .map_err(value_err)?;
        Ok(())
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.rounds
    }

    #[setter]
    fn set_rounds(&mut self, v: usize) {
        self.inner.rounds = v;
    }

    #[getter]
    fn num_clients(&self) -> usize {
        self.inner.num_clients
    }

    #[setter]
    fn set_num_clients(&mut self, v: usize) {
        self.inner.num_clients = v;
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[setter]
    fn set_sigma(&mut self, v: f64) {
        self.inner.sigma = v;
    }

    #[getter]
    fn energy_budget(&self) -> f64 {
        self.inner.energy_budget
    }

    #[setter]
    fn set_energy_budget(&mut self, v: f64) {
        self.inner.energy_budget = v;
    }

    #[getter]
    fn delay_budget(&self) -> f64 {
        self.inner.delay_budget
    }

    #[setter]
    fn set_delay_budget(&mut self, v: f64) {
        self.inner.delay_budget = v;
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.inner.out.clone()
    }

    #[setter]
    fn set_out(&mut self, v: PathBuf) {
        self.inner.out = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(preset={:?}, schemes={:?}, seeds={:?}, rounds={})",
            self.inner.preset,
            self.schemes(),
            self.inner.seeds,
            self.inner.rounds
        )
    }
}

/// One round's selection, pruning ratios, transmit powers and CPU clocks.
#[pyclass(name = "Decision", module = "feel", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyDecision {
    selected: Vec<bool>,
    lambda_: Vec<f64>,
    power: Vec<f64>,
    freq: Vec<f64>,
}

impl From<&RoundDecision> for PyDecision {
    fn from(d: &RoundDecision) -> Self {
        Self {
            selected: d.selected.clone(),
            lambda_: d.lambda.clone(),
            power: d.power.clone(),
            freq: d.freq.clone(),
        }
    }
}

/// Result of one (scheme, seed) run.
#[pyclass(name = "RunResult", module = "feel", get_all)]
struct PyRunResult {
    scheme: String,
    seed: u64,
    phi: Vec<f64>,
    theta: f64,
    final_test_acc: f64,
    final_test_loss: f64,
    total_energy: f64,
    total_delay: f64,
    test_acc: Vec<f64>,
    train_loss: Vec<f64>,
    cum_energy: Vec<f64>,
    cum_delay: Vec<f64>,
    decisions: Vec<PyDecision>,
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(scheme={:?}, seed={}, acc={:.4}, energy={:.3}, delay={:.3}, theta={:.4})",
            self.scheme, self.seed, self.final_test_acc, self.total_energy, self.total_delay, self.theta
        )
    }
}

impl From<&RunOutput> for PyRunResult {
    fn from(o: &RunOutput) -> Self {
        let r = &o.records;
        Self {
            scheme: o.scheme.to_string(),
            seed: o.seed,
            phi: o.phi.clone(),
            theta: o.summary.theta,
            final_test_acc: o.summary.final_test_acc,
            final_test_loss: o.summary.final_test_loss,
            total_energy: o.summary.total_energy_j,
            total_delay: o.summary.total_delay_s,
            test_acc: r.iter().map(|x| x.test_acc).collect(),
            train_loss: r.iter().map(|x| x.train_loss).collect(),
            cum_energy: r.iter().map(|x| x.cum_energy_j).collect(),
            cum_delay: r.iter().map(|x| x.cum_delay_s).collect(),
            decisions: o.solution.decisions.iter().map(PyDecision::from).collect(),
        }
    }
}

/// Run every (seed, scheme) pair. With `write=True` the CSV files are
/// written under `config.out` as the command-line tool does.
#[pyfunction]
#[pyo3(signature = (config, write = false))]
fn run(py: Python<'_>, config: &PyConfig, write: bool) -> PyResult<Vec<PyRunResult>> {
    let cfg = config.inner.clone();
    let outs = py
        .detach(|| if write { cli::run(&cfg) } else { cli::run_all(&cfg) })
        .map_err(runtime_err)?;
    Ok(outs.iter().map(PyRunResult::from).collect())
}

/// Sweep `axis` ("sigma", "E0" or "T0"); returns
/// `(value, scheme, mean_acc, std_acc, mean_phi_std)` rows.
#[pyfunction]
fn sweep(py: Python<'_>, config: &PyConfig, axis: &str, values: Vec<f64>) -> PyResult<Vec<(f64, String, f64, f64, f64)>> {
    let axis: SweepAxis = axis.parse().map_err(value_err)?;
    let cfg = config.inner.clone();
    let rows = py.detach(|| cli::sweep(&cfg, axis, &values)).map_err(runtime_err)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.value, r.scheme, r.mean_final_acc, r.std_final_acc, r.mean_phi_std))
        .collect())
}

/// `(phi, kl, degenerate)` for train/test label distributions.
#[pyfunction]
fn generalization_statement(p_train: Vec<f64>, p_test: Vec<f64>, d_train: usize, d_test: usize) -> PyResult<(f64, f64, bool)> {
    let p = LabelDistribution::from_probs(&p_train).map_err(value_err)?;
    let q = LabelDistribution::from_probs(&p_test).map_err(value_err)?;
    let g = generalization::generalization_statement(&p, &q, d_train, d_test).map_err(value_err)?;
    Ok((g.phi, g.kl, g.branch == Branch::Degenerate))
}

#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let p = LabelDistribution::from_probs(&p).map_err(value_err)?;
    let q = LabelDistribution::from_probs(&q).map_err(value_err)?;
    generalization::kl_divergence(&p, &q).map_err(value_err)
}

fn inputs(lipschitz: f64, grad_sq: f64, model_sq: f64, learning_rate: f64, batch_size: usize, last_round: usize, loss_gap: f64) -> BoundInputs {
    BoundInputs {
        lipschitz,
        grad_sq,
        model_sq,
        learning_rate,
        batch_size,
        last_round,
        loss_gap,
    }
}

/// `(alpha, beta, gamma1, gamma2)` of the convergence bound.
#[pyfunction]
#[pyo3(signature = (lipschitz = 10.0, grad_sq = 100.0, model_sq = 50.0, learning_rate = 0.01, batch_size = 32, last_round = 99, loss_gap = 2.3))]
fn derive_constants(
    lipschitz: f64,
    grad_sq: f64,
    model_sq: f64,
    learning_rate: f64,
    batch_size: usize,
    last_round: usize,
    loss_gap: f64,
) -> PyResult<(f64, f64, f64, f64)> {
    let c = bound::derive_constants(&inputs(lipschitz, grad_sq, model_sq, learning_rate, batch_size, last_round, loss_gap))
        .map_err(value_err)?;
    Ok((c.alpha, c.beta, c.gamma1, c.gamma2))
}

/// Bound θ for per-round selections and pruning ratios. The number of rounds
/// is `len(selected)`.
#[pyfunction]
#[pyo3(signature = (selected, lambda_, phi, lipschitz = 10.0, grad_sq = 100.0, model_sq = 50.0, learning_rate = 0.01, batch_size = 32, loss_gap = 2.3))]
#[allow(clippy::too_many_arguments)]
fn theta(
    selected: Vec<Vec<bool>>,
    lambda_: Vec<Vec<f64>>,
    phi: Vec<f64>,
    lipschitz: f64,
    grad_sq: f64,
    model_sq: f64,
    learning_rate: f64,
    batch_size: usize,
    loss_gap: f64,
) -> PyResult<f64> {
    if selected.is_empty() || selected.len() != lambda_.len() {
        return Err(PyValueError::new_err("selected and lambda_ need one equal-length entry per round"));
    }
    let c = bound::derive_constants(&inputs(
        lipschitz,
        grad_sq,
        model_sq,
        learning_rate,
        batch_size,
        selected.len() - 1,
        loss_gap,
    ))
    .map_err(value_err)?;
    let decisions: Vec<RoundDecision> = selected
        .into_iter()
        .zip(lambda_)
        .map(|(a, l)| RoundDecision {
            power: vec![0.0; a.len()],
            freq: vec![0.0; a.len()],
            selected: a,
            lambda: l,
        })
        .collect();
    Ok(bound::theta(&decisions, &phi, &c).map_err(value_err)?.theta)
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

#[pymodule]
fn feel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDecision>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(generalization_statement, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(derive_constants, m)?)?;
    m.add_function(wrap_pyfunction!(theta, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
