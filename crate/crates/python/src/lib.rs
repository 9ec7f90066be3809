//! Python bindings: configured problems, solutions, oracles, gates and the expression language.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use mfrbsde::analysis::{find_contraction_window, lipschitz_gate, GateParams};
use mfrbsde::expr::{parse, EvalEnv};
use mfrbsde::harness::{self, LoadedProblem, OracleCase, SolveOutput};
use mfrbsde::{Error, MarginalLaw};

create_exception!(mfrbsde_py, MfrbsdeError, PyException);
create_exception!(mfrbsde_py, ConfigError, MfrbsdeError);
create_exception!(mfrbsde_py, GateError, MfrbsdeError);
create_exception!(mfrbsde_py, ConvergenceError, MfrbsdeError);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => GateError::new_err(msg),
        3 => ConvergenceError::new_err(msg),
        _ => ConfigError::new_err(msg),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| MfrbsdeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated problem loaded from a JSON configuration.
#[pyclass(module = "mfrbsde_py", frozen)]
struct Problem {
    inner: LoadedProblem,
}

#[pymethods]
impl Problem {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        harness::load_problem_str(text)
            .map(|inner| Problem { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        harness::load_problem(&path)
            .map(|inner| Problem { inner })
            .map_err(py_err)
    }

    #[getter]
    fn regime(&self) -> &'static str {
        self.inner.problem.regime.name()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.inner.problem.lattice().n_steps()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.problem.lattice().horizon()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn gate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.gate)
    }

    fn to_json(&self) -> String {
        self.inner.config.to_json()
    }

    #[pyo3(signature = (steps=None))]
    fn solve(&self, py: Python<'_>, steps: Option<usize>) -> PyResult<Solution> {
        let inner = &self.inner;
        py.detach(|| harness::run_solve(inner, steps))
            .map(|out| Solution { out })
            .map_err(py_err)
    }

    /// Root values over several step counts, as a list of dicts.
    fn study<'py>(&self, py: Python<'py>, steps: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
        let inner = &self.inner;
        let (rows, _) = py.detach(|| harness::run_study(inner, &steps)).map_err(py_err)?;
        json_to_py(py, &rows)
    }

    fn __repr__(&self) -> String {
        format!("Problem(regime={:?}, n_steps={})", self.regime(), self.n_steps())
    }
}

/// A solved triple `(y, z, k)` on the lattice with its run summary.
#[pyclass(module = "mfrbsde_py", frozen)]
struct Solution {
    out: SolveOutput,
}

#[pymethods]
impl Solution {
    #[getter]
    fn y0(&self) -> f64 {
        self.out.result.y0
    }

    /// Values per level: `y[i][j]` at time level `i`, node `j`.
    #[getter]
    fn y(&self) -> Vec<Vec<f64>> {
        self.out.triple.y.levels().to_vec()
    }

    #[getter]
    fn z(&self) -> Vec<Vec<f64>> {
        self.out.triple.z.levels().to_vec()
    }

    #[getter]
    fn k(&self) -> Vec<Vec<f64>> {
        self.out.triple.k.levels().to_vec()
    }

    #[getter]
    fn csv(&self) -> &str {
        &self.out.csv
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.out.result)
    }

    fn __repr__(&self) -> String {
        format!("Solution(y0={}, n_steps={})", self.out.result.y0, self.out.result.n_steps)
    }
}

/// Run an oracle case (`snell`, `colehopf`, `meanfield_linear`) and return its report.
#[pyfunction]
#[pyo3(signature = (case, depth=None, steps=None, seed=0))]
fn oracle<'py>(
    py: Python<'py>,
    case: &str,
    depth: Option<usize>,
    steps: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let case = OracleCase::from_name(case)
        .ok_or_else(|| ConfigError::new_err(format!("unknown oracle case {case:?}")))?;
    let report = py
        .detach(|| harness::run_oracle(case, depth, steps, seed))
        .map_err(py_err)?;
    json_to_py(py, &report)
}

/// Lipschitz gate value and acceptance for obstacle constants `gamma1`, `gamma2`.
#[pyfunction]
#[pyo3(signature = (gamma1, gamma2, p=2.0))]
fn gate_value(gamma1: f64, gamma2: f64, p: f64) -> PyResult<(f64, bool)> {
    let g = lipschitz_gate(&GateParams::new(gamma1, gamma2, p)).map_err(py_err)?;
    Ok((g.value, g.accept))
}

/// `(mu_star, delta, lambda)` of the contraction window for a Lipschitz problem.
#[pyfunction]
#[pyo3(signature = (gamma1, gamma2, p=2.0, lam=0.0, horizon=1.0, margin=0.05))]
fn contraction_window(
    gamma1: f64,
    gamma2: f64,
    p: f64,
    lam: f64,
    horizon: f64,
    margin: f64,
) -> PyResult<(f64, f64, f64)> {
    let mut gp = GateParams::new(gamma1, gamma2, p);
    gp.lambda = lam;
    gp.horizon = horizon;
    let w = find_contraction_window(&gp, margin).map_err(py_err)?;
    Ok((w.mu_star, w.delta, w.lambda_at_mu_star))
}

/// Canonical printed form of an expression.
#[pyfunction]
fn canonical(src: &str) -> PyResult<String> {
    parse(src).map(|e| e.to_string()).map_err(|e| py_err(e.into()))
}

#[pyfunction]
#[pyo3(signature = (src, t=0.0, y=0.0, z=0.0, b=0.0, m1=0.0, am=0.0))]
fn evaluate(src: &str, t: f64, y: f64, z: f64, b: f64, m1: f64, am: f64) -> PyResult<f64> {
    let e = parse(src).map_err(|e| py_err(e.into()))?;
    e.eval(&EvalEnv { t, y, z, b, m1, am })
        .map_err(|e| py_err(e.into()))
}

/// W1 distance between two weighted samples given as `(value, weight)` lists.
#[pyfunction]
fn wasserstein1(a: Vec<(f64, f64)>, b: Vec<(f64, f64)>) -> PyResult<f64> {
    let a = MarginalLaw::from_weighted(a).map_err(py_err)?;
    let b = MarginalLaw::from_weighted(b).map_err(py_err)?;
    Ok(mfrbsde::wasserstein1(&a, &b))
}

#[pymodule]
fn mfrbsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<Problem>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(gate_value, m)?)?;
    m.add_function(wrap_pyfunction!(contraction_window, m)?)?;
    m.add_function(wrap_pyfunction!(canonical, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add("MfrbsdeError", py.get_type::<MfrbsdeError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("GateError", py.get_type::<GateError>())?;
    m.add("ConvergenceError", py.get_type::<ConvergenceError>())?;
    m.add("SCHEMA_VERSION", harness::SCHEMA_VERSION)?;
    Ok(())
}
