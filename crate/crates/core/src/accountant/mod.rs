//! Privacy accounting for adaptive hyperparameter search.
//!
//! The base algorithm is described by Rényi-DP points `(alpha, epsilon)`.
//! [`hypo_rdp`] gives the RDP guarantee of the whole search when the number
//! of runs follows a truncated negative binomial law and every sampling
//! density stays within `[c, C]` times the prior; [`hypo_pure_dp`] is the
//! pure-DP counterpart. [`audit`] checks the RDP bound against exact output
//! distributions of small finite mechanisms.

pub mod audit;

use serde::{Deserialize, Serialize};

use crate::distributions::NegBinParams;
use crate::error::{Error, Result};

pub use audit::{
    audit_bound, exact_output_distribution, exact_output_distribution_limited, renyi_divergence, AuditReport, AuditRow,
    AuditStrategy, FiniteMechanism, HistoryAudit, MechanismCandidate, OutputDistribution, SaturatingAudit, Side,
    UniformAudit,
};

/// Density-ratio bounds `c <= pi / prior <= C`.
///
/// The constructor only enforces `0 < c <= C < inf`; whether the bounded set
/// is non-empty (`c <= 1 <= C`) is a property of the prior and is checked by
/// [`crate::projection::bounds_feasible`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptivityBounds {
    upper: f64,
    lower: f64,
}

impl AdaptivityBounds {
    pub fn new(upper: f64, lower: f64) -> Result<Self> {
        if !(lower > 0.0 && lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(Error::Domain(format!(
                "density bounds need 0 < c <= C < inf, got C={upper}, c={lower}"
            )));
        }
        Ok(Self { upper, lower })
    }

    /// `C = c = 1`: the sampling density never moves away from the prior.
    pub fn non_adaptive() -> Self {
        Self { upper: 1.0, lower: 1.0 }
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    /// `log(C / c)`.
    pub fn log_ratio(&self) -> f64 {
        self.upper.ln() - self.lower.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpPoint {
    pub alpha: f64,
    pub epsilon: f64,
}

impl RdpPoint {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("RDP order must be finite and > 1, got {alpha}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!(
                "RDP epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Self { alpha, epsilon })
    }
}

#[derive(Deserialize)]
struct RawCurve {
    #[serde(default)]
    points: Vec<RdpPoint>,
    #[serde(default)]
    pure_epsilon: Option<f64>,
}

/// Rényi-DP guarantees of a base algorithm at a finite set of orders,
/// optionally with a pure-DP value (the `alpha = inf` point).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct RdpCurve {
    points: Vec<RdpPoint>,
    pure_epsilon: Option<f64>,
}

impl TryFrom<RawCurve> for RdpCurve {
    type Error = Error;

    fn try_from(raw: RawCurve) -> Result<Self> {
        RdpCurve::new(raw.points, raw.pure_epsilon)
    }
}

impl RdpCurve {
    pub fn new(points: Vec<RdpPoint>, pure_epsilon: Option<f64>) -> Result<Self> {
        if points.is_empty() && pure_epsilon.is_none() {
            return Err(Error::Domain("an RDP curve needs at least one point".into()));
        }
        for p in &points {
            RdpPoint::new(p.alpha, p.epsilon)?;
        }
        if points.windows(2).any(|w| w[0].alpha >= w[1].alpha) {
            return Err(Error::Domain("RDP orders must be strictly increasing".into()));
        }
        if let Some(e) = pure_epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Domain(format!("pure epsilon must be finite and >= 0, got {e}")));
            }
        }
        Ok(Self { points, pure_epsilon })
    }

    /// A pure `(epsilon, 0)`-DP guarantee.
    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(Vec::new(), Some(epsilon))
    }

    pub fn points(&self) -> &[RdpPoint] {
        &self.points
    }

    pub fn pure_epsilon(&self) -> Option<f64> {
        self.pure_epsilon
    }

    /// Every epsilon multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let points = self
            .points
            .iter()
            .map(|p| RdpPoint::new(p.alpha, p.epsilon * factor))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, self.pure_epsilon.map(|e| e * factor))
    }

    /// A valid RDP epsilon at order `alpha`.
    ///
    /// Rényi divergence is nondecreasing in the order, so the value at the
    /// smallest listed order `>= alpha` (or the pure value) upper-bounds it.
    pub fn epsilon_at(&self, alpha: f64) -> Result<f64> {
        if let Some(p) = self.points.iter().find(|p| p.alpha >= alpha) {
            return Ok(p.epsilon);
        }
        self.pure_epsilon
            .ok_or_else(|| Error::Domain(format!("curve has no order >= {alpha} and no pure-DP value")))
    }
}

/// RDP epsilon at order `alpha` of the full search.
///
/// `(alpha, epsilon)` and `(alpha_hat, epsilon_hat)` are RDP guarantees of
/// every base algorithm; `alpha_hat` ranges over `[1, inf]`, with `inf`
/// meaning `epsilon_hat` is a pure-DP value.
pub fn hypo_rdp(
    alpha: f64,
    epsilon: f64,
    alpha_hat: f64,
    epsilon_hat: f64,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
) -> Result<f64> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be finite and > 1, got {alpha}")));
    }
    if !(alpha_hat >= 1.0) {
        return Err(Error::Domain(format!("alpha_hat must be >= 1, got {alpha_hat}")));
    }
    if !(epsilon >= 0.0 && epsilon_hat >= 0.0) {
        return Err(Error::Domain("base epsilons must be >= 0".into()));
    }
    let theta = negbin.theta();
    let log_ratio = bounds.log_ratio();
    let inv_hat = if alpha_hat.is_infinite() { 0.0 } else { 1.0 / alpha_hat };
    let value = epsilon
        + (1.0 + theta) * (1.0 - inv_hat) * epsilon_hat
        + (alpha / (alpha - 1.0) + 1.0 + theta) * log_ratio
        + (1.0 + theta) * (1.0 / negbin.gamma()).ln() * inv_hat
        + negbin.mean().ln() / (alpha - 1.0);
    Ok(value)
}

/// Minimum of [`hypo_rdp`] over the orders available in `curve`.
/// Returns the bound and the `alpha_hat` achieving it.
pub fn hypo_rdp_best(
    alpha: f64,
    curve: &RdpCurve,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
) -> Result<(f64, f64)> {
    let epsilon = curve.epsilon_at(alpha)?;
    let candidates = curve
        .points
        .iter()
        .map(|p| (p.alpha, p.epsilon))
        .chain(curve.pure_epsilon.map(|e| (f64::INFINITY, e)));
    let mut best: Option<(f64, f64)> = None;
    for (alpha_hat, epsilon_hat) in candidates {
        let value = hypo_rdp(alpha, epsilon, alpha_hat, epsilon_hat, negbin, bounds)?;
        if best.is_none_or(|(b, _)| value < b) {
            best = Some((value, alpha_hat));
        }
    }
    best.ok_or_else(|| Error::Domain("empty RDP curve".into()))
}

/// Pure-DP epsilon of the full search: `(2 + theta)(epsilon + log(C / c))`.
pub fn hypo_pure_dp(epsilon: f64, negbin: &NegBinParams, bounds: &AdaptivityBounds) -> f64 {
    pure_dp_bound(epsilon, negbin.theta(), bounds)
}

/// [`hypo_pure_dp`] without a stopping-time law; the bound only involves `theta`.
pub fn pure_dp_bound(epsilon: f64, theta: f64, bounds: &AdaptivityBounds) -> f64 {
    (2.0 + theta) * (epsilon + bounds.log_ratio())
}

/// Converts an RDP curve to `(epsilon, delta)`-DP:
/// `min_alpha epsilon_alpha + log(1 / delta) / (alpha - 1)`.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv_delta = -delta.ln();
    let finite = curve.points.iter().map(|p| p.epsilon + log_inv_delta / (p.alpha - 1.0));
    Ok(finite.chain(curve.pure_epsilon).fold(f64::INFINITY, f64::min))
}

/// RDP curve of the full search at the orders of the base curve.
pub fn hypo_curve(curve: &RdpCurve, negbin: &NegBinParams, bounds: &AdaptivityBounds) -> Result<RdpCurve> {
    let points = curve
        .points
        .iter()
        .map(|p| {
            let (eps, _) = hypo_rdp_best(p.alpha, curve, negbin, bounds)?;
            RdpPoint::new(p.alpha, eps)
        })
        .collect::<Result<Vec<_>>>()?;
    let pure = curve.pure_epsilon.map(|e| hypo_pure_dp(e, negbin, bounds));
    RdpCurve::new(points, pure)
}

/// End-to-end `(epsilon, delta)` cost of the search for a base curve.
pub fn total_dp_cost(curve: &RdpCurve, delta: f64, negbin: &NegBinParams, bounds: &AdaptivityBounds) -> Result<f64> {
    rdp_to_dp(&hypo_curve(curve, negbin, bounds)?, delta)
}

/// Finds the base-curve scale whose end-to-end cost equals `total_epsilon`.
///
/// `shape` maps a non-negative scale to the base algorithm's RDP curve and
/// must make [`total_dp_cost`] nondecreasing in the scale. The returned scale
/// is the bisection's lower end, so its cost never exceeds the target.
pub fn solve_base_budget<F>(
    total_epsilon: f64,
    delta: f64,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
    shape: F,
) -> Result<f64>
where
    F: Fn(f64) -> Result<RdpCurve>,
{
    const TOL: f64 = 1e-6;
    const SLACK: f64 = 1e-12;
    let cost = |scale: f64| -> Result<f64> { total_dp_cost(&shape(scale)?, delta, negbin, bounds) };
    let mut lo = 0.0;
    let mut lo_cost = cost(lo)?;
    if lo_cost > total_epsilon {
        return Err(Error::Infeasible(format!(
            "total epsilon {total_epsilon} is below the minimum achievable cost {lo_cost}"
        )));
    }
    let mut hi = 1.0;
    let mut hi_cost = cost(hi)?;
    let mut expansions = 0;
    while hi_cost < total_epsilon {
        if hi_cost + SLACK < lo_cost {
            return Err(Error::Numeric("total cost is not monotone in the base scale".into()));
        }
        lo = hi;
        lo_cost = hi_cost;
        hi *= 2.0;
        hi_cost = cost(hi)?;
        expansions += 1;
        if expansions > 1000 || !hi_cost.is_finite() {
            return Err(Error::Infeasible(format!(
                "total epsilon {total_epsilon} is not reached for any base scale"
            )));
        }
    }
    if hi_cost + SLACK < lo_cost {
        return Err(Error::Numeric("total cost is not monotone in the base scale".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let c = cost(mid)?;
        if c + SLACK < lo_cost || c > hi_cost + SLACK {
            return Err(Error::Numeric("total cost is not monotone in the base scale".into()));
        }
        if c <= total_epsilon {
            lo = mid;
            lo_cost = c;
        } else {
            hi = mid;
            hi_cost = c;
        }
    }
    if (lo_cost - total_epsilon).abs() > TOL {
        return Err(Error::Numeric(format!(
            "bisection ended {} away from the target (cost jumps in scale?)",
            (lo_cost - total_epsilon).abs()
        )));
    }
    Ok(lo)
}

/// Privacy of one base training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseGuarantee {
    Pure { epsilon: f64 },
    Rdp { curve: RdpCurve },
}

impl BaseGuarantee {
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Ok(match self {
            BaseGuarantee::Pure { epsilon } => BaseGuarantee::Pure {
                epsilon: epsilon * factor,
            },
            BaseGuarantee::Rdp { curve } => BaseGuarantee::Rdp {
                curve: curve.scaled(factor)?,
            },
        })
    }
}

/// End-to-end epsilon of the search. Pure guarantees give a pure-DP value
/// and ignore `delta`; RDP curves need `delta`.
pub fn search_epsilon(
    base: &BaseGuarantee,
    delta: Option<f64>,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
) -> Result<f64> {
    match base {
        BaseGuarantee::Pure { epsilon } => {
            if !(*epsilon >= 0.0 && epsilon.is_finite()) {
                return Err(Error::Domain(format!("base epsilon must be >= 0, got {epsilon}")));
            }
            Ok(hypo_pure_dp(*epsilon, negbin, bounds))
        }
        BaseGuarantee::Rdp { curve } => {
            let delta = delta.ok_or_else(|| Error::Domain("an RDP curve needs delta".into()))?;
            total_dp_cost(curve, delta, negbin, bounds)
        }
    }
}

/// Largest factor by which `base` can be scaled while the search stays
/// within `total_epsilon`.
pub fn solve_base_scale(
    base: &BaseGuarantee,
    total_epsilon: f64,
    delta: Option<f64>,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
) -> Result<f64> {
    match base {
        BaseGuarantee::Pure { epsilon } => {
            if !(*epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::Domain("solving a budget needs a positive base epsilon".into()));
            }
            let per_run = total_epsilon / (2.0 + negbin.theta()) - bounds.log_ratio();
            if per_run < 0.0 {
                return Err(Error::Infeasible(format!(
                    "total epsilon {total_epsilon} is below the adaptivity cost alone"
                )));
            }
            Ok(per_run / epsilon)
        }
        BaseGuarantee::Rdp { curve } => {
            let delta = delta.ok_or_else(|| Error::Domain("an RDP curve needs delta".into()))?;
            solve_base_budget(total_epsilon, delta, negbin, bounds, |s| curve.scaled(s))
        }
    }
}
