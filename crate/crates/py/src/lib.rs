//! Python bindings for errlab: expressions with second-order AD, error
//! structures, Γ/bias propagation, the Monte-Carlo oracles, limit
//! passage, and the binary-sequence laboratory.
//!
//! JSON-shaped results (oracle estimates, limit reports, ensembles) are
//! returned as plain Python dicts so they match the CLI reports.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use errlab::sequence::{self, BettingStrategy, BitSequence, Provenance, SelectionRule};

fn err(e: errlab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// serde_json::Value → Python object.
fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, to_py(py, val)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v)
        .map_err(|e| PyValueError::new_err(format!("serialization failed: {e}")))?;
    to_py(py, &value)
}

/// Symbolic expression over named variables.
#[pyclass(name = "Expr", frozen)]
struct PyExpr {
    inner: errlab::Expr,
    vars: Vec<String>,
}

#[pymethods]
impl PyExpr {
    /// Parse `text` over the given variable names.
    #[staticmethod]
    fn parse(text: &str, vars: Vec<String>) -> PyResult<Self> {
        let inner = errlab::parse(text, &vars).map_err(err)?;
        Ok(PyExpr { inner, vars })
    }

    /// Canonical fully-parenthesized form; reparses to the same tree.
    fn canonical(&self) -> String {
        self.inner.print_canonical()
    }

    fn __repr__(&self) -> String {
        format!("Expr({})", self.inner.print_canonical())
    }

    #[getter]
    fn vars(&self) -> Vec<String> {
        self.vars.clone()
    }

    fn value(&self, point: Vec<f64>) -> PyResult<f64> {
        errlab::eval_value(&self.inner, &point).map_err(err)
    }

    fn gradient(&self, point: Vec<f64>) -> PyResult<Vec<f64>> {
        let g = errlab::eval_grad(&self.inner, &point).map_err(err)?;
        Ok(g.gradient.as_slice().to_vec())
    }

    /// (value, gradient, hessian) at `point`; the Hessian is a nested
    /// list and exactly symmetric.
    fn eval2(&self, point: Vec<f64>) -> PyResult<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let r = errlab::eval2(&self.inner, &point).map_err(err)?;
        let n = point.len();
        let hessian = (0..n)
            .map(|i| (0..n).map(|j| r.hessian[(i, j)]).collect())
            .collect();
        Ok((r.value, r.gradient.as_slice().to_vec(), hessian))
    }

    /// Substitute `parts[i]` for variable i.
    fn compose(&self, parts: Vec<PyRef<'_, PyExpr>>) -> PyResult<PyExpr> {
        let exprs: Vec<errlab::Expr> = parts.iter().map(|p| p.inner.clone()).collect();
        let vars = parts
            .first()
            .map(|p| p.vars.clone())
            .unwrap_or_else(|| self.vars.clone());
        let inner = self.inner.compose(&exprs).map_err(err)?;
        Ok(PyExpr { inner, vars })
    }
}

/// Error structure: named variables, a σ field, and a base-point law.
#[pyclass(name = "ErrorStructure", frozen)]
struct PyStructure {
    inner: errlab::ErrorStructure,
}

#[pymethods]
impl PyStructure {
    /// Build from the same JSON config the CLI accepts.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyStructure {
            inner: errlab::ErrorStructure::from_json(text).map_err(err)?,
        })
    }

    /// Constant diagonal σ with independent variances.
    #[staticmethod]
    fn diag(names: Vec<String>, variances: Vec<f64>) -> PyResult<Self> {
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Ok(PyStructure {
            inner: errlab::ErrorStructure::diag(&refs, &variances).map_err(err)?,
        })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, self.inner.config())
    }

    /// Parse an expression over this structure's variables.
    fn parse(&self, text: &str) -> PyResult<PyExpr> {
        PyExpr::parse(text, self.inner.names().to_vec())
    }
}

/// Propagate: value, gradient, Γ, bias of `expr` at `point`.
#[pyfunction]
fn propagate<'py>(
    py: Python<'py>,
    expr: &PyExpr,
    structure: &PyStructure,
    point: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let frame = structure.inner.base_frame(&point).map_err(err)?;
    let q = errlab::propagate(&expr.inner, &frame).map_err(err)?;
    let g = errlab::gamma(&q, &q, &frame).map_err(err)?;
    let value = serde_json::json!({
        "value": q.value,
        "gradient": q.gradient.as_slice(),
        "gamma": g,
        "sqrt_gamma": g.max(0.0).sqrt(),
        "bias": q.bias,
        "nondifferentiable": q.nondifferentiable,
    });
    to_py(py, &value)
}

/// Cross carré du champ Γ[f, g] at `point`.
#[pyfunction]
fn gamma(f: &PyExpr, g: &PyExpr, structure: &PyStructure, point: Vec<f64>) -> PyResult<f64> {
    let frame = structure.inner.base_frame(&point).map_err(err)?;
    let qf = errlab::propagate(&f.inner, &frame).map_err(err)?;
    let qg = errlab::propagate(&g.inner, &frame).map_err(err)?;
    errlab::gamma(&qf, &qg, &frame).map_err(err)
}

/// Residual of Γ[F] = L(F²) − 2F·LF at `point` (rounding-level for
/// smooth expressions).
#[pyfunction]
fn carre_residual(expr: &PyExpr, structure: &PyStructure, point: Vec<f64>) -> PyResult<f64> {
    let frame = structure.inner.base_frame(&point).map_err(err)?;
    errlab::verify_carre_identity(&expr.inner, &frame).map_err(err)
}

/// Transport the base frame at `point` through the maps, then through
/// `second` if given; returns {point, gamma, bias} of the image frame.
#[pyfunction]
#[pyo3(signature = (maps, structure, point, second=None))]
fn pushforward<'py>(
    py: Python<'py>,
    maps: Vec<PyRef<'_, PyExpr>>,
    structure: &PyStructure,
    point: Vec<f64>,
    second: Option<Vec<PyRef<'_, PyExpr>>>,
) -> PyResult<Bound<'py, PyAny>> {
    let frame = structure.inner.base_frame(&point).map_err(err)?;
    let exprs: Vec<errlab::Expr> = maps.iter().map(|m| m.inner.clone()).collect();
    let mut push = errlab::pushforward(&exprs, &frame).map_err(err)?;
    if let Some(second) = second {
        let exprs: Vec<errlab::Expr> = second.iter().map(|m| m.inner.clone()).collect();
        push = errlab::pushforward(&exprs, &push.frame).map_err(err)?;
    }
    let m = push.frame.dim();
    let gamma_rows: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| push.frame.gamma[(i, j)]).collect())
        .collect();
    let value = serde_json::json!({
        "point": push.frame.point.as_slice(),
        "gamma": gamma_rows,
        "bias": push.frame.bias.as_slice(),
        "psd_clip": push.psd_clip,
    });
    to_py(py, &value)
}

/// Monte-Carlo perturbation estimate of Γ[expr] at `point`.
#[pyfunction]
#[pyo3(signature = (expr, structure, point, epsilon=errlab::oracle::DEFAULT_EPSILON_GAMMA, samples=100_000, seed=0))]
fn mc_gamma<'py>(
    py: Python<'py>,
    expr: &PyExpr,
    structure: &PyStructure,
    point: Vec<f64>,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let est = errlab::mc_gamma(&expr.inner, &structure.inner, &point, epsilon, samples, seed)
        .map_err(err)?;
    serialize_to_py(py, &est)
}

/// Monte-Carlo perturbation estimate of the bias L[expr] at `point`.
#[pyfunction]
#[pyo3(signature = (expr, structure, point, epsilon=errlab::oracle::DEFAULT_EPSILON_BIAS, samples=100_000, seed=0))]
fn mc_bias<'py>(
    py: Python<'py>,
    expr: &PyExpr,
    structure: &PyStructure,
    point: Vec<f64>,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let est = errlab::mc_bias(&expr.inner, &structure.inner, &point, epsilon, samples, seed)
        .map_err(err)?;
    serialize_to_py(py, &est)
}

/// Dirichlet energy 𝓔[expr] = E[Γ[expr]] over the structure's law;
/// returns the estimate dict (estimate, std_error, samples, ...).
#[pyfunction]
#[pyo3(signature = (expr, structure, count=10_000, seed=0))]
fn dirichlet_energy<'py>(
    py: Python<'py>,
    expr: &PyExpr,
    structure: &PyStructure,
    count: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let est = errlab::dirichlet_energy(&expr.inner, &structure.inner, count, seed).map_err(err)?;
    serialize_to_py(py, &est)
}

/// Limit passage for an explicit expression sequence; returns the same
/// report dict as `errlab limit`.
#[pyfunction]
#[pyo3(signature = (exprs, structure, count=10_000, seed=0))]
fn extend_by_limit<'py>(
    py: Python<'py>,
    exprs: Vec<PyRef<'_, PyExpr>>,
    structure: &PyStructure,
    count: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let seq: Vec<errlab::Expr> = exprs.iter().map(|e| e.inner.clone()).collect();
    let report = errlab::extend_by_limit(&seq, &structure.inner, count, seed).map_err(err)?;
    serialize_to_py(py, &report)
}

/// Limit passage for the partial sums of `term` with the parameter
/// substituted by 1..count, e.g. term="sin(k*pi*x)/k^2", param="k".
#[pyfunction]
#[pyo3(signature = (term, param, count, structure, points=10_000, seed=0))]
fn extend_family<'py>(
    py: Python<'py>,
    term: &str,
    param: &str,
    count: usize,
    structure: &PyStructure,
    points: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut names = structure.inner.names().to_vec();
    if names.iter().any(|n| n == param) {
        return Err(PyValueError::new_err(format!(
            "family parameter `{param}` collides with a structure variable"
        )));
    }
    names.push(param.to_string());
    let term = errlab::parse(term, &names).map_err(err)?;
    let param_index = names.len() - 1;
    let terms: Vec<errlab::Expr> = (1..=count)
        .map(|k| term.substitute_const(param_index, k as f64))
        .collect();
    if terms.len() < 4 {
        return Err(PyValueError::new_err(format!(
            "limit passage needs at least 4 terms, got {}",
            terms.len()
        )));
    }
    let report =
        errlab::extend_from_increments(&terms[0], &terms[1..], &structure.inner, points, seed)
            .map_err(err)?;
    serialize_to_py(py, &report)
}

// ------------------------------------------------------------ sequences

fn bits_from_str(text: &str) -> PyResult<BitSequence> {
    let provenance = Provenance {
        generator: "python".into(),
        parameters: String::new(),
        seed: None,
    };
    BitSequence::from_ascii(text, provenance).map_err(err)
}

/// First `count` bits of the binary Champernowne sequence as '0'/'1'.
#[pyfunction]
fn champernowne_bits(count: usize) -> PyResult<String> {
    Ok(sequence::champernowne_bits(count).map_err(err)?.to_ascii())
}

/// `count` PRNG bits from the chunked ChaCha stream for `seed`.
#[pyfunction]
#[pyo3(signature = (count, seed=0))]
fn prng_bits(count: usize, seed: u64) -> PyResult<String> {
    Ok(sequence::prng_bits(count, seed).map_err(err)?.to_ascii())
}

/// Length-k block frequencies of an ASCII bit string, keyed by block
/// label ("000", "001", ...). Absent blocks are omitted.
#[pyfunction]
fn block_frequencies(bits: &str, k: usize) -> PyResult<std::collections::BTreeMap<String, f64>> {
    let seq = bits_from_str(bits)?;
    let freqs = sequence::block_frequencies(&seq, k).map_err(err)?;
    Ok(freqs
        .into_iter()
        .map(|(b, f)| (sequence::block_label(b, k), f))
        .collect())
}

/// Borel-normality table up to block length `kmax`.
#[pyfunction]
#[pyo3(signature = (bits, kmax=8))]
fn normality_report<'py>(py: Python<'py>, bits: &str, kmax: usize) -> PyResult<Bound<'py, PyAny>> {
    let seq = bits_from_str(bits)?;
    let report = sequence::normality_report(&seq, kmax).map_err(err)?;
    serialize_to_py(py, &report)
}

/// Apply a non-anticipative selection rule (JSON, same shape as the
/// CLI's --rule file) and return the selected subsequence.
#[pyfunction]
fn select_subsequence(bits: &str, rule_json: &str) -> PyResult<String> {
    let rule = SelectionRule::from_json(rule_json).map_err(err)?;
    let seq = bits_from_str(bits)?;
    Ok(sequence::select_subsequence(&seq, &rule).map_err(err)?.to_ascii())
}

/// Capital trajectory of a betting strategy (JSON, same shape as the
/// CLI's --strategy file) over a bit string; len(bits)+1 entries.
#[pyfunction]
#[pyo3(signature = (bits, strategy_json, initial=1.0))]
fn martingale_capital(bits: &str, strategy_json: &str, initial: f64) -> PyResult<Vec<f64>> {
    let strategy = BettingStrategy::from_json(strategy_json).map_err(err)?;
    let seq = bits_from_str(bits)?;
    sequence::martingale_capital(&seq, &strategy, initial).map_err(err)
}

/// Fair-coin ensemble of one betting strategy; mean final capital and
/// its standard error.
#[pyfunction]
#[pyo3(signature = (strategy_json, sequences=10_000, length=1_000, initial=1.0, seed=0))]
fn martingale_ensemble<'py>(
    py: Python<'py>,
    strategy_json: &str,
    sequences: usize,
    length: usize,
    initial: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let strategy = BettingStrategy::from_json(strategy_json).map_err(err)?;
    let result = sequence::martingale_ensemble(&strategy, sequences, length, initial, seed)
        .map_err(err)?;
    serialize_to_py(py, &result)
}

#[pymodule]
fn errlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpr>()?;
    m.add_class::<PyStructure>()?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(carre_residual, m)?)?;
    m.add_function(wrap_pyfunction!(pushforward, m)?)?;
    m.add_function(wrap_pyfunction!(mc_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(mc_bias, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_energy, m)?)?;
    m.add_function(wrap_pyfunction!(extend_by_limit, m)?)?;
    m.add_function(wrap_pyfunction!(extend_family, m)?)?;
    m.add_function(wrap_pyfunction!(champernowne_bits, m)?)?;
    m.add_function(wrap_pyfunction!(prng_bits, m)?)?;
    m.add_function(wrap_pyfunction!(block_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(normality_report, m)?)?;
    m.add_function(wrap_pyfunction!(select_subsequence, m)?)?;
    m.add_function(wrap_pyfunction!(martingale_capital, m)?)?;
    m.add_function(wrap_pyfunction!(martingale_ensemble, m)?)?;
    Ok(())
}
