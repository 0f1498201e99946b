//! Python bindings for tot-core.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tot_core::lp::LpOptions;
use tot_core::{
    ApproxOptions, MarginalFamily, SinkhornConfig, Solver, Tensor, TotError as CoreError, Variant,
};

create_exception!(
    pytot,
    TotError,
    PyException,
    "Base class for solver failures."
);
create_exception!(
    pytot,
    ContractError,
    TotError,
    "A documented precondition was violated."
);
create_exception!(
    pytot,
    NonConvergenceError,
    TotError,
    "An iteration cap was reached."
);
create_exception!(
    pytot,
    SizeCapError,
    TotError,
    "The linear program exceeds the variable cap."
);

fn to_py(e: CoreError) -> PyErr {
    let msg = e.to_string();
    match e {
        CoreError::NonConvergence { .. } | CoreError::InnerMinimizer { .. } => {
            NonConvergenceError::new_err(msg)
        }
        CoreError::SizeCap { .. } => SizeCapError::new_err(msg),
        _ => ContractError::new_err(msg),
    }
}

/// Dense order-`d` tensor with side `n`, stored row-major.
#[pyclass(name = "Tensor", module = "pytot", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(order: usize, side: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::new(order, side, data).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    /// Entry at a multi-index (modes are 0-based).
    fn get(&self, index: Vec<usize>) -> PyResult<f64> {
        let t = &self.inner;
        if index.len() != t.order() || index.iter().any(|&i| i >= t.side()) {
            return Err(PyValueError::new_err(format!(
                "index {index:?} out of range for order {} and side {}",
                t.order(),
                t.side()
            )));
        }
        Ok(t.get(&index))
    }

    fn marginal(&self, mode: usize) -> PyResult<Vec<f64>> {
        self.inner.marginal(mode).map_err(to_py)
    }

    fn marginals(&self) -> Vec<Vec<f64>> {
        self.inner.marginals()
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn inner(&self, other: PyRef<'_, PyTensor>) -> PyResult<f64> {
        self.inner.inner(&other.inner).map_err(to_py)
    }

    fn l1_distance(&self, other: PyRef<'_, PyTensor>) -> PyResult<f64> {
        self.inner.l1_distance(&other.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Tensor(order={}, side={})",
            self.inner.order(),
            self.inner.side()
        )
    }
}

/// `d` strictly positive vectors of length `n` with equal mass.
#[pyclass(name = "MarginalFamily", module = "pytot", skip_from_py_object)]
#[derive(Clone)]
pub struct PyMarginalFamily {
    inner: MarginalFamily,
}

#[pymethods]
impl PyMarginalFamily {
    #[new]
    fn new(p: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: MarginalFamily::new(p).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn uniform(order: usize, side: usize) -> PyResult<Self> {
        Ok(Self {
            inner: MarginalFamily::uniform(order, side).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: MarginalFamily::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn vectors(&self) -> Vec<Vec<f64>> {
        self.inner.vectors().to_vec()
    }

    #[getter]
    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    fn product_plan(&self) -> PyTensor {
        PyTensor {
            inner: self.inner.product_plan(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "MarginalFamily(order={}, side={})",
            self.inner.order(),
            self.inner.side()
        )
    }
}

fn wrap(t: Tensor) -> PyTensor {
    PyTensor { inner: t }
}

/// Greedy Sinkhorn scaling. Returns `(tensor, scaling, info)`.
#[pyfunction]
#[pyo3(signature = (a, p, epsilon, max_iter=None, nonnegative=false))]
fn sinkhorn_scale<'py>(
    py: Python<'py>,
    a: PyRef<'_, PyTensor>,
    p: PyRef<'_, PyMarginalFamily>,
    epsilon: f64,
    max_iter: Option<usize>,
    nonnegative: bool,
) -> PyResult<(PyTensor, Vec<Vec<f64>>, Bound<'py, PyDict>)> {
    let variant = if nonnegative {
        Variant::NonnegativeSupport
    } else {
        Variant::Positive
    };
    let mut cfg = SinkhornConfig::new(epsilon)
        .map_err(to_py)?
        .with_variant(variant);
    cfg.max_iter = max_iter;
    let res = tot_core::sinkhorn_scale(&a.inner, &p.inner, &cfg).map_err(to_py)?;
    let info = PyDict::new(py);
    info.set_item("k_stop", res.trace.k_stop)?;
    info.set_item("bound", res.trace.bound)?;
    info.set_item("eta", res.trace.eta)?;
    info.set_item("mass", res.trace.mass)?;
    info.set_item("final_residual_l1", res.trace.final_residual_l1)?;
    info.set_item("final_marginal_l1", res.trace.final_marginal_l1)?;
    info.set_item("g_values", res.trace.g_values())?;
    Ok((wrap(res.tensor), res.scaling.vectors().to_vec(), info))
}

/// δ-approximate TOT. Returns `(plan, certificate)`.
#[pyfunction]
#[pyo3(signature = (c, p, delta, lambda_=None, epsilon=None, max_iter=None))]
fn approx_tot<'py>(
    py: Python<'py>,
    c: PyRef<'_, PyTensor>,
    p: PyRef<'_, PyMarginalFamily>,
    delta: f64,
    lambda_: Option<f64>,
    epsilon: Option<f64>,
    max_iter: Option<usize>,
) -> PyResult<(PyTensor, Bound<'py, PyDict>)> {
    let opts = ApproxOptions {
        lambda: lambda_,
        epsilon,
        max_iter,
    };
    let (plan, cert) =
        tot_core::approx_tot_with(&c.inner, &p.inner, delta, &opts).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("value", cert.value)?;
    d.set_item("bracket", cert.bracket.to_vec())?;
    d.set_item("delta", cert.delta)?;
    d.set_item("lambda", cert.lambda)?;
    d.set_item("epsilon", cert.epsilon)?;
    d.set_item("k_stop", cert.k_stop)?;
    d.set_item("movement_l1", cert.movement_l1)?;
    d.set_item("entropic_value", cert.entropic_value)?;
    d.set_item("error_budget", cert.error_budget)?;
    Ok((wrap(plan), d))
}

/// Entropic objective at fixed λ, ε. Returns `(f_lambda, plan, k_stop)`.
#[pyfunction]
#[pyo3(signature = (c, p, lambda_, epsilon, max_iter=None))]
fn entropic_tot(
    c: PyRef<'_, PyTensor>,
    p: PyRef<'_, PyMarginalFamily>,
    lambda_: f64,
    epsilon: f64,
    max_iter: Option<usize>,
) -> PyResult<(f64, PyTensor, Option<usize>)> {
    let sol =
        tot_core::entropic_tot(&c.inner, &p.inner, lambda_, epsilon, max_iter).map_err(to_py)?;
    let k = sol.scaling.trace.k_stop;
    Ok((sol.f_lambda, wrap(sol.plan), k))
}

/// Exact optimum by the simplex oracle. Returns `(value, plan)`.
#[pyfunction]
#[pyo3(signature = (c, p, max_variables=None))]
fn solve_exact_tot(
    c: PyRef<'_, PyTensor>,
    p: PyRef<'_, PyMarginalFamily>,
    max_variables: Option<usize>,
) -> PyResult<(f64, PyTensor)> {
    let mut opts = LpOptions::default();
    if let Some(cap) = max_variables {
        opts.max_variables = cap;
    }
    let sol = tot_core::solve_exact_tot(&c.inner, &p.inner, &opts).map_err(to_py)?;
    Ok((sol.value, wrap(sol.plan)))
}

#[pyfunction]
fn round_to_polytope(f: PyRef<'_, PyTensor>, p: PyRef<'_, PyMarginalFamily>) -> PyResult<PyTensor> {
    Ok(wrap(
        tot_core::round_to_polytope(&f.inner, &p.inner).map_err(to_py)?,
    ))
}

/// Minimum over simultaneous reorderings. Returns `(distance, best_permutation, flags)`.
#[pyfunction]
#[pyo3(signature = (c, p1, p2, solver="exact", delta=0.01))]
fn set_distance<'py>(
    py: Python<'py>,
    c: PyRef<'_, PyTensor>,
    p1: Vec<Vec<f64>>,
    p2: Vec<Vec<f64>>,
    solver: &str,
    delta: f64,
) -> PyResult<(f64, Vec<usize>, Bound<'py, PyDict>)> {
    let solver = match solver {
        "exact" => Solver::Exact(LpOptions::default()),
        "entropic" => Solver::Entropic { delta },
        other => return Err(PyValueError::new_err(format!("unknown solver {other:?}"))),
    };
    let res = tot_core::set_distance(&c.inner, &p1, &p2, solver).map_err(to_py)?;
    let flags = PyDict::new(py);
    flags.set_item("bisymmetric", res.flags.bisymmetric)?;
    flags.set_item("weak_bisymmetric", res.flags.weak_bisymmetric)?;
    flags.set_item("indicator", res.flags.indicator)?;
    flags.set_item("indicator_distance", res.flags.indicator_distance)?;
    flags.set_item("semimetric_caveat", res.flags.semimetric_caveat)?;
    Ok((res.distance, res.best_permutation, flags))
}

/// `KL(p ‖ q)`; `inf` when `q` vanishes where `p` does not.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    if p.len() != q.len() {
        return Err(PyValueError::new_err("p and q must have equal length"));
    }
    Ok(tot_core::kl_divergence(&p, &q))
}

#[pymodule]
fn pytot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyTensor>()?;
    m.add_class::<PyMarginalFamily>()?;
    m.add_function(wrap_pyfunction!(sinkhorn_scale, m)?)?;
    m.add_function(wrap_pyfunction!(approx_tot, m)?)?;
    m.add_function(wrap_pyfunction!(entropic_tot, m)?)?;
    m.add_function(wrap_pyfunction!(solve_exact_tot, m)?)?;
    m.add_function(wrap_pyfunction!(round_to_polytope, m)?)?;
    m.add_function(wrap_pyfunction!(set_distance, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add("TotError", py.get_type::<TotError>())?;
    m.add("ContractError", py.get_type::<ContractError>())?;
    m.add("NonConvergenceError", py.get_type::<NonConvergenceError>())?;
    m.add("SizeCapError", py.get_type::<SizeCapError>())?;
    Ok(())
}
