//! Python bindings. Matrices go in and out as lists of rows; structured
//! results come back as dicts.

use esoccp::cones::{lorentz_moreau, ConeSpec};
use esoccp::esoclcp::{classify_pair, demo_instance, verify_solution, EsocLcpInstance};
use esoccp::io::{matrix_from_rows, matrix_to_rows, ProblemFile, ScenarioFile};
use esoccp::portfolio::{self, PortfolioInstance};
use esoccp::solvers::{solve_esoclcp, SolverConfig, SolverKind};
use esoccp::spherical::{qc_analyze_with, QcConfig};
use esoccp::stochastic::{solve_mean_fb, solve_saa, CvarConfig, ScenarioModel};
use esoccp::{DMatrix, DVector, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Dimension(_) | Error::InvalidInput(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(m, what).map_err(to_py)
}

// serde -> Python through the json module keeps the binding free of a
// second conversion layer.
fn to_dict<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn start_point(k: usize, l: usize, z0: Option<Vec<f64>>) -> DVector<f64> {
    z0.map(DVector::from_vec).unwrap_or_else(|| {
        let mut z = DVector::from_element(k + l + 1, 1.0);
        z[k + l] = (l as f64).sqrt();
        z
    })
}

/// LCP over the extended second order cone L(k, l).
#[pyclass(name = "EsocLcp", module = "esoccp_py")]
struct PyEsocLcp {
    inner: EsocLcpInstance,
}

#[pymethods]
impl PyEsocLcp {
    #[new]
    #[allow(clippy::too_many_arguments)]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
        p: Vec<f64>,
        q: Vec<f64>,
    ) -> PyResult<Self> {
        let pf = ProblemFile { k: p.len(), l: q.len(), a, b, c, d, p, q };
        Ok(PyEsocLcp { inner: pf.to_instance().map_err(to_py)? })
    }

    #[staticmethod]
    fn demo() -> Self {
        PyEsocLcp { inner: demo_instance() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let pf: ProblemFile = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyEsocLcp { inner: pf.to_instance().map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&ProblemFile::from_instance(&self.inner)).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn l(&self) -> usize {
        self.inner.l
    }

    /// The stacked matrix T and vector r of F(x, u) = T (x, u) + r.
    fn t_r(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        (matrix_to_rows(&self.inner.t()), self.inner.r().iter().copied().collect())
    }

    #[pyo3(signature = (solver = "lm", tol = None, max_iter = None, z0 = None))]
    fn solve(
        &self,
        py: Python<'_>,
        solver: &str,
        tol: Option<f64>,
        max_iter: Option<usize>,
        z0: Option<Vec<f64>>,
    ) -> PyResult<Py<PyAny>> {
        let kind: SolverKind = solver.parse().map_err(to_py)?;
        let mut cfg = SolverConfig::default();
        if let Some(t) = tol {
            cfg.tol = t;
        }
        if let Some(m) = max_iter {
            cfg.max_iter = m;
        }
        let z0 = start_point(self.inner.k, self.inner.l, z0);
        let sol = solve_esoclcp(&self.inner, kind, Some(&z0), &cfg).map_err(to_py)?;
        let verified = sol.verify.as_ref().is_some_and(|v| v.passed);
        let out = serde_json::json!({
            "x": sol.x.as_slice(),
            "u": sol.u.as_slice(),
            "z": sol.z.as_slice(),
            "status": sol.trace.status,
            "iterations": sol.trace.iterations,
            "final_merit": sol.trace.final_merit(),
            "verified": verified,
            "trace": sol.trace.records,
        });
        to_dict(py, &out)
    }

    fn verify(&self, py: Python<'_>, x: Vec<f64>, u: Vec<f64>) -> PyResult<Py<PyAny>> {
        let rep = verify_solution(&self.inner, &DVector::from_vec(x), &DVector::from_vec(u)).map_err(to_py)?;
        to_dict(py, &rep)
    }

    /// Case of the complementary pair ((x, u), F(x, u)).
    #[pyo3(signature = (x, u, tol = 1e-6))]
    fn classify(&self, py: Python<'_>, x: Vec<f64>, u: Vec<f64>, tol: f64) -> PyResult<Py<PyAny>> {
        let (x, u) = (DVector::from_vec(x), DVector::from_vec(u));
        if x.len() != self.inner.k || u.len() != self.inner.l {
            return Err(PyValueError::new_err("x and u must have lengths k and l"));
        }
        let (y, v) = self.inner.eval_f(&x, &u);
        to_dict(py, &classify_pair(&x, &u, &y, &v, tol).map_err(to_py)?)
    }

    fn __repr__(&self) -> String {
        format!("EsocLcp(k={}, l={})", self.inner.k, self.inner.l)
    }
}

/// Scenario model for the stochastic problem.
#[pyclass(name = "ScenarioModel", module = "esoccp_py")]
struct PyScenarioModel {
    inner: ScenarioModel,
}

#[pymethods]
impl PyScenarioModel {
    #[staticmethod]
    #[pyo3(signature = (seed = 42))]
    fn demo(seed: u64) -> Self {
        PyScenarioModel { inner: ScenarioModel::demo(seed) }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let sf: ScenarioFile = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyScenarioModel { inner: sf.to_model().map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&ScenarioFile::from_model(&self.inner)).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Smoothed CVaR SAA. Returns the stage reports.
    #[pyo3(signature = (sizes, alpha = 0.05, k_max = 100, z0 = None))]
    fn solve_saa(
        &self,
        py: Python<'_>,
        sizes: Vec<usize>,
        alpha: f64,
        k_max: usize,
        z0: Option<Vec<f64>>,
    ) -> PyResult<Py<PyAny>> {
        let cfg = CvarConfig { alpha, sample_sizes: sizes, k_max, ..CvarConfig::default() };
        let z0 = start_point(self.inner.base.k, self.inner.base.l, z0);
        let model = &self.inner;
        let (_, _, report) =
            py.detach(|| solve_saa(model, &cfg, &SolverConfig::default(), &z0)).map_err(to_py)?;
        to_dict(py, &report)
    }

    /// Root of the averaged FB residual on a batch of `n` scenarios drawn
    /// from stream `stream`.
    #[pyo3(signature = (n, stream = 0, z0 = None))]
    fn solve_mean_fb(&self, py: Python<'_>, n: usize, stream: u64, z0: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
        let z0 = start_point(self.inner.base.k, self.inner.base.l, z0);
        let model = &self.inner;
        let (z, residual, iters) = py
            .detach(|| {
                let batch = model.sample_batch(n, stream);
                solve_mean_fb(model, &batch, &z0, &SolverConfig::default())
            })
            .map_err(to_py)?;
        to_dict(py, &serde_json::json!({ "z": z.as_slice(), "residual": residual, "iterations": iters }))
    }
}

/// Portfolio scenarios: `returns` has one row per scenario, one column per asset.
#[pyclass(name = "Portfolio", module = "esoccp_py")]
struct PyPortfolio {
    inner: PortfolioInstance,
}

#[pymethods]
impl PyPortfolio {
    #[new]
    fn new(returns: Vec<Vec<f64>>, f: Vec<f64>, c0: f64) -> PyResult<Self> {
        let r = rows(&returns, "returns")?.transpose();
        Ok(PyPortfolio { inner: PortfolioInstance::new(r, DVector::from_vec(f), c0).map_err(to_py)? })
    }

    #[staticmethod]
    fn example_item_iii() -> Self {
        PyPortfolio { inner: PortfolioInstance::example_item_iii() }
    }

    #[getter]
    fn mean_returns(&self) -> Vec<f64> {
        self.inner.r.iter().copied().collect()
    }

    fn feasibility(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &portfolio::men_feasibility(&self.inner))
    }

    fn men(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &portfolio::men_solve(&self.inner).map_err(to_py)?)
    }

    #[pyo3(signature = (identity_cov = false))]
    fn mv(&self, identity_cov: bool) -> PyResult<Vec<f64>> {
        let n = self.inner.n();
        let sigma = if identity_cov { DMatrix::identity(n, n) } else { self.inner.covariance() };
        let w = portfolio::mv_solve(&self.inner.r, &sigma, self.inner.c0).map_err(to_py)?;
        Ok(w.iter().copied().collect())
    }

    #[pyo3(signature = (max_iter = 1000, tol = 1e-12))]
    fn mad(&self, py: Python<'_>, max_iter: usize, tol: f64) -> PyResult<Py<PyAny>> {
        let n = self.inner.n();
        let w0 = DVector::from_element(n, 1.0 / n as f64);
        to_dict(py, &portfolio::mad_iterate(&self.inner, &w0, max_iter, tol).map_err(to_py)?)
    }
}

/// Quasi-convexity verdict for x'Ax on the orthant or the Lorentz cone.
#[pyfunction]
#[pyo3(signature = (a, cone = "orthant", seed = None))]
fn qc_analyze(py: Python<'_>, a: Vec<Vec<f64>>, cone: &str, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let m = rows(&a, "A")?;
    let n = m.nrows();
    let spec = match cone {
        "orthant" => ConeSpec::NonnegOrthant(n),
        "lorentz" => ConeSpec::Lorentz(n),
        _ => return Err(PyValueError::new_err(format!("unknown cone {cone:?}"))),
    };
    let mut cfg = QcConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let v = py.detach(|| qc_analyze_with(&m, spec, &cfg)).map_err(to_py)?;
    to_dict(py, &v)
}

/// Hold-rates of the MEN feasibility conditions over random instances.
#[pyfunction]
#[pyo3(signature = (n_list, t_list, c0_list, trials = 2000, seed = 1))]
fn probability_experiment(
    py: Python<'_>,
    n_list: Vec<usize>,
    t_list: Vec<usize>,
    c0_list: Vec<f64>,
    trials: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let rows = py
        .detach(|| portfolio::probability_experiment(&n_list, &t_list, &c0_list, trials, seed))
        .map_err(to_py)?;
    to_dict(py, &rows)
}

/// Fischer-Burmeister function sqrt(a^2 + b^2) - a - b.
#[pyfunction]
fn fb_scalar(a: f64, b: f64) -> f64 {
    esoccp::fb::fb_scalar(a, b)
}

/// Moreau split of x against the Lorentz cone: (plus, minus).
#[pyfunction]
fn lorentz_projection(x: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let parts = lorentz_moreau(&DVector::from_vec(x)).map_err(to_py)?;
    Ok((parts.plus.iter().copied().collect(), parts.minus.iter().copied().collect()))
}

#[pymodule]
fn esoccp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEsocLcp>()?;
    m.add_class::<PyScenarioModel>()?;
    m.add_class::<PyPortfolio>()?;
    m.add_function(wrap_pyfunction!(qc_analyze, m)?)?;
    m.add_function(wrap_pyfunction!(probability_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(fb_scalar, m)?)?;
    m.add_function(wrap_pyfunction!(lorentz_projection, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
