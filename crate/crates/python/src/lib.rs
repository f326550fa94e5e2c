//! Python bindings: stopping-time law, accountants, projection, exact audit,
//! landscapes and config-driven runs and benchmarks.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dphypo_core::accountant::{self, AuditReport, BaseGuarantee, FiniteMechanism, SaturatingAudit, UniformAudit};
use dphypo_core::bench::{self, RunOverrides, Workbench};
use dphypo_core::config::{RunConfig, StrategyKind};
use dphypo_core::{
    landscape as land, projection, AdaptivityBounds, DiscreteDensity, Error, GridSpec, NegBinParams, Prior, RdpCurve,
    RdpPoint, RunStream,
};

pyo3::create_exception!(dphypo, InfeasibleError, PyValueError, "Bounds or budget cannot be met.");
pyo3::create_exception!(
    dphypo,
    AuditViolation,
    PyRuntimeError,
    "Realised divergence exceeded the bound."
);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) => InfeasibleError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Guard(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Oracle { .. } => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Domain(_) | Error::Parse { .. } | Error::Config(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for dphypo_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Truncated negative binomial stopping-time law NegBin(theta, gamma).
#[pyclass(name = "NegBin", frozen)]
struct PyNegBin(NegBinParams);

#[pymethods]
impl PyNegBin {
    #[new]
    fn new(theta: f64, gamma: f64) -> PyResult<Self> {
        NegBinParams::new(theta, gamma).py().map(Self)
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }

    fn pmf(&self, k: u64) -> PyResult<f64> {
        self.0.pmf(k).py()
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn pgf(&self, x: f64) -> PyResult<f64> {
        self.0.pgf(x).py()
    }

    fn pgf_derivative(&self, x: f64) -> PyResult<f64> {
        self.0.pgf_derivative(x).py()
    }

    /// `count` draws from the stream of `(seed, run_index)`.
    #[pyo3(signature = (seed, count = 1, run_index = 0))]
    fn sample(&self, seed: u64, count: usize, run_index: u64) -> Vec<u64> {
        let mut rng = RunStream::new(seed, run_index);
        (0..count).map(|_| self.0.sample(&mut rng).value).collect()
    }

    fn __repr__(&self) -> String {
        format!("NegBin(theta={}, gamma={})", self.0.theta(), self.0.gamma())
    }
}

fn bounds(upper: f64, lower: f64) -> PyResult<AdaptivityBounds> {
    AdaptivityBounds::new(upper, lower).py()
}

fn curve(points: Vec<(f64, f64)>, pure_epsilon: Option<f64>) -> PyResult<RdpCurve> {
    let points = points
        .into_iter()
        .map(|(a, e)| RdpPoint::new(a, e))
        .collect::<dphypo_core::Result<Vec<_>>>()
        .py()?;
    RdpCurve::new(points, pure_epsilon).py()
}

fn base(pure_epsilon: Option<f64>, rdp_points: Option<Vec<(f64, f64)>>) -> PyResult<BaseGuarantee> {
    match (pure_epsilon, rdp_points) {
        (Some(epsilon), None) => Ok(BaseGuarantee::Pure { epsilon }),
        (pure, Some(points)) => Ok(BaseGuarantee::Rdp {
            curve: curve(points, pure)?,
        }),
        (None, None) => Err(PyValueError::new_err("give pure_epsilon or rdp_points")),
    }
}

/// Pure-DP epsilon of a search: `(2 + theta)(epsilon + log(C / c))`.
#[pyfunction]
#[pyo3(signature = (epsilon, theta, upper = 1.0, lower = 1.0))]
fn hypo_pure_dp(epsilon: f64, theta: f64, upper: f64, lower: f64) -> PyResult<f64> {
    Ok(accountant::pure_dp_bound(epsilon, theta, &bounds(upper, lower)?))
}

/// RDP epsilon at order `alpha` of a search from two base RDP guarantees.
#[pyfunction]
#[pyo3(signature = (alpha, epsilon, alpha_hat, epsilon_hat, negbin, upper = 1.0, lower = 1.0))]
fn hypo_rdp(
    alpha: f64,
    epsilon: f64,
    alpha_hat: f64,
    epsilon_hat: f64,
    negbin: &PyNegBin,
    upper: f64,
    lower: f64,
) -> PyResult<f64> {
    accountant::hypo_rdp(
        alpha,
        epsilon,
        alpha_hat,
        epsilon_hat,
        &negbin.0,
        &bounds(upper, lower)?,
    )
    .py()
}

/// `(epsilon, delta)` conversion of an RDP curve given as `(alpha, epsilon)` pairs.
#[pyfunction]
#[pyo3(signature = (points, delta, pure_epsilon = None))]
fn rdp_to_dp(points: Vec<(f64, f64)>, delta: f64, pure_epsilon: Option<f64>) -> PyResult<f64> {
    accountant::rdp_to_dp(&curve(points, pure_epsilon)?, delta).py()
}

/// End-to-end epsilon of a search for a pure-DP or RDP base guarantee.
#[pyfunction]
#[pyo3(signature = (negbin, pure_epsilon = None, rdp_points = None, delta = None, upper = 1.0, lower = 1.0))]
fn search_epsilon(
    negbin: &PyNegBin,
    pure_epsilon: Option<f64>,
    rdp_points: Option<Vec<(f64, f64)>>,
    delta: Option<f64>,
    upper: f64,
    lower: f64,
) -> PyResult<f64> {
    accountant::search_epsilon(
        &base(pure_epsilon, rdp_points)?,
        delta,
        &negbin.0,
        &bounds(upper, lower)?,
    )
    .py()
}

/// Factor on the base guarantee whose search cost equals `total_epsilon`.
#[pyfunction]
#[pyo3(signature = (total_epsilon, negbin, pure_epsilon = None, rdp_points = None, delta = None, upper = 1.0, lower = 1.0))]
#[allow(clippy::too_many_arguments)]
fn solve_base_scale(
    total_epsilon: f64,
    negbin: &PyNegBin,
    pure_epsilon: Option<f64>,
    rdp_points: Option<Vec<(f64, f64)>>,
    delta: Option<f64>,
    upper: f64,
    lower: f64,
) -> PyResult<f64> {
    let b = base(pure_epsilon, rdp_points)?;
    accountant::solve_base_scale(&b, total_epsilon, delta, &negbin.0, &bounds(upper, lower)?).py()
}

fn prior_for(prior: Option<Vec<f64>>, weights: &[f64]) -> PyResult<Prior> {
    match prior {
        Some(values) => Prior::new(DiscreteDensity::new(values, weights.to_vec()).py()?).py(),
        None => Prior::uniform(weights.to_vec()).py(),
    }
}

/// Weighted-L2 projection of a density onto `c * prior <= f <= C * prior`
/// with unit mass. `weights` defaults to ones, `prior` to uniform.
#[pyfunction]
#[pyo3(signature = (values, upper, lower, weights = None, prior = None, kl_nu = None))]
fn project(
    values: Vec<f64>,
    upper: f64,
    lower: f64,
    weights: Option<Vec<f64>>,
    prior: Option<Vec<f64>>,
    kl_nu: Option<f64>,
) -> PyResult<Vec<f64>> {
    let weights = weights.unwrap_or_else(|| vec![1.0; values.len()]);
    let prior = prior_for(prior, &weights)?;
    let density = DiscreteDensity::new(values, weights).py()?;
    let b = bounds(upper, lower)?;
    let out = match kl_nu {
        Some(nu) => projection::project_kl_penalized(&density, &b, &prior, nu),
        None => projection::project_l2(&density, &b, &prior),
    }
    .py()?;
    Ok(out.values().to_vec())
}

/// Exact audit of a finite mechanism given as JSON. Returns the report as
/// JSON; raises `AuditViolation` when `raise_on_failure` and a row fails.
#[pyfunction]
#[pyo3(signature = (mechanism_json, negbin, strategy = "uniform", upper = 1.0, lower = 1.0, alphas = vec![2.0, 4.0, 8.0], raise_on_failure = false))]
#[allow(clippy::too_many_arguments)]
fn audit(
    py: Python<'_>,
    mechanism_json: &str,
    negbin: &PyNegBin,
    strategy: &str,
    upper: f64,
    lower: f64,
    alphas: Vec<f64>,
    raise_on_failure: bool,
) -> PyResult<String> {
    let mech: FiniteMechanism =
        serde_json::from_str(mechanism_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let b = bounds(upper, lower)?;
    let nb = negbin.0;
    let report: AuditReport = py
        .detach(|| match strategy {
            "uniform" => Ok(accountant::audit_bound(&mech, &UniformAudit, &nb, &b, &alphas)),
            "saturating" => Ok(accountant::audit_bound(&mech, &SaturatingAudit, &nb, &b, &alphas)),
            other => Err(other.to_string()),
        })
        .map_err(|s| PyValueError::new_err(format!("unknown audit strategy {s:?}")))?
        .py()?;
    if raise_on_failure && !report.passed {
        return Err(AuditViolation::new_err(to_json(&report)?));
    }
    to_json(&report)
}

/// Needle landscape on the 16 x 20 learning-rate by clipping-norm grid, as CSV.
#[pyfunction]
#[pyo3(signature = (seed, background = 0.9, value = 0.95, fraction = 1.0 / 320.0, noise = 0.1))]
fn needle_landscape_csv(seed: u64, background: f64, value: f64, fraction: f64, noise: f64) -> PyResult<String> {
    let generator = land::Generator::Needle {
        background,
        value,
        fraction,
        noise,
    };
    let l = land::synth_landscape(&GridSpec::lr_clip_320(), &generator, seed).py()?;
    let mut buf = Vec::new();
    l.write_csv(&mut buf).py()?;
    String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn load_config(path: PathBuf) -> PyResult<RunConfig> {
    RunConfig::from_path(&path).py()
}

/// Runs one configuration and returns the transcripts as a JSON array.
#[pyfunction]
#[pyo3(signature = (config_path, strategy = None, fixed_t = None, gamma = None, seed = None, repetitions = None, jobs = 1))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    config_path: PathBuf,
    strategy: Option<&str>,
    fixed_t: Option<u64>,
    gamma: Option<f64>,
    seed: Option<u64>,
    repetitions: Option<u64>,
    jobs: usize,
) -> PyResult<String> {
    let config = load_config(config_path)?;
    let strategy = match strategy {
        None => None,
        Some("uniform") => Some(StrategyKind::Uniform),
        Some("gp") => Some(StrategyKind::Gp),
        Some(other) => return Err(PyValueError::new_err(format!("unknown strategy {other:?}"))),
    };
    let overrides = RunOverrides {
        strategy,
        fixed_t,
        gamma,
        seed,
        repetitions,
        record_densities: false,
    };
    let transcripts = py.detach(|| bench::run_repetitions(config, &overrides, jobs)).py()?;
    to_json(&transcripts)
}

/// Runs a benchmark sweep; returns `(report_csv, plot_csv)`.
#[pyfunction]
#[pyo3(signature = (config_path, jobs = 1))]
fn run_bench(py: Python<'_>, config_path: PathBuf, jobs: usize) -> PyResult<(String, String)> {
    let config = load_config(config_path)?;
    py.detach(|| -> dphypo_core::Result<(String, String)> {
        let report = bench::run_bench(&Workbench::new(config)?, jobs)?;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        report.write_report_csv(&mut a)?;
        report.write_plot_csv(&mut b)?;
        Ok((
            String::from_utf8_lossy(&a).into_owned(),
            String::from_utf8_lossy(&b).into_owned(),
        ))
    })
    .py()
}

#[pymodule]
fn dphypo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNegBin>()?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("AuditViolation", m.py().get_type::<AuditViolation>())?;
    m.add_function(wrap_pyfunction!(hypo_pure_dp, m)?)?;
    m.add_function(wrap_pyfunction!(hypo_rdp, m)?)?;
    m.add_function(wrap_pyfunction!(rdp_to_dp, m)?)?;
    m.add_function(wrap_pyfunction!(search_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(solve_base_scale, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(needle_landscape_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
