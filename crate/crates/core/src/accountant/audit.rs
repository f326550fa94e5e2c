//! Exact output distributions of the search on small finite mechanisms, and
//! an auditor comparing their Rényi divergence with [`super::hypo_rdp`].
//!
//! Outcomes are indices `0..m` ordered by score, higher is better. A strategy
//! is a deterministic function of an explicit state that is advanced by each
//! `(candidate, outcome)` pair; histories that lead to equal states (and equal
//! best-so-far outcomes) are merged, so enumeration cost is
//! `t_cap * #states * #candidates * #outcomes`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{hypo_rdp, AdaptivityBounds};
use crate::distributions::NegBinParams;
use crate::error::{Error, Result};
use crate::framework::{Strategy, Trial};
use crate::projection::{project_l2, DiscreteDensity, Prior};

/// Histories (merged states) the enumeration may visit in total.
pub const MAX_ENUMERATED_STATES: usize = 10_000_000;
/// NegBin tail mass left out of the enumeration.
pub const ENUMERATION_TAIL: f64 = 1e-10;
/// Allowed excess of the realised divergence over the bound.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismCandidate {
    /// Outcome probabilities on the dataset `D`.
    pub p: Vec<f64>,
    /// Outcome probabilities on the neighbouring dataset `D'`.
    pub p_neighbor: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMechanism {
    outcome_count: usize,
    candidates: Vec<MechanismCandidate>,
}

/// Base algorithms with finitely many ordered outcomes, one per candidate
/// hyperparameter, given on both neighbouring datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMechanism")]
pub struct FiniteMechanism {
    outcome_count: usize,
    candidates: Vec<MechanismCandidate>,
}

impl TryFrom<RawMechanism> for FiniteMechanism {
    type Error = Error;

    fn try_from(raw: RawMechanism) -> Result<Self> {
        FiniteMechanism::new(raw.outcome_count, raw.candidates)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Dataset,
    Neighbor,
}

impl FiniteMechanism {
    pub fn new(outcome_count: usize, candidates: Vec<MechanismCandidate>) -> Result<Self> {
        if outcome_count == 0 || candidates.is_empty() {
            return Err(Error::Domain(
                "mechanism needs at least one candidate and outcome".into(),
            ));
        }
        for (i, c) in candidates.iter().enumerate() {
            for v in [&c.p, &c.p_neighbor] {
                if v.len() != outcome_count {
                    return Err(Error::Domain(format!(
                        "candidate {i}: expected {outcome_count} probabilities, got {}",
                        v.len()
                    )));
                }
                if v.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
                    return Err(Error::Domain(format!(
                        "candidate {i}: probabilities must be strictly positive"
                    )));
                }
                let total: f64 = v.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain(format!("candidate {i}: probabilities sum to {total}")));
                }
            }
        }
        Ok(Self {
            outcome_count,
            candidates,
        })
    }

    pub fn outcome_count(&self) -> usize {
        self.outcome_count
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self) -> &[MechanismCandidate] {
        &self.candidates
    }

    pub fn probabilities(&self, candidate: usize, side: Side) -> &[f64] {
        let c = &self.candidates[candidate];
        match side {
            Side::Dataset => &c.p,
            Side::Neighbor => &c.p_neighbor,
        }
    }

    /// `sup_lambda D_alpha(M_lambda(D) || M_lambda(D'))`.
    pub fn rdp_epsilon(&self, alpha: f64) -> f64 {
        self.candidates
            .iter()
            .map(|c| renyi_divergence(&c.p, &c.p_neighbor, alpha))
            .fold(0.0, f64::max)
    }

    /// Uniform prior over candidates with unit cell weights.
    pub fn uniform_prior(&self) -> Prior {
        Prior::uniform(vec![1.0; self.candidates.len()]).expect("non-empty candidate list")
    }
}

/// `D_alpha(p || q)` for strictly positive probability vectors; `alpha = 1`
/// is the KL divergence and `alpha = inf` the max log-ratio.
pub fn renyi_divergence(p: &[f64], q: &[f64], alpha: f64) -> f64 {
    if alpha.is_infinite() {
        return p
            .iter()
            .zip(q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| (a / b).ln())
            .fold(f64::NEG_INFINITY, f64::max);
    }
    if alpha == 1.0 {
        return p
            .iter()
            .zip(q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum();
    }
    let logs: Vec<f64> = p
        .iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| alpha * a.ln() + (1.0 - alpha) * b.ln())
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse / (alpha - 1.0)
}

/// A deterministic adaptive rule on a finite candidate list.
pub trait AuditStrategy {
    type State: Clone + Ord;

    fn initial_state(&self) -> Self::State;

    /// Raw (pre-projection) sampling density in `state`.
    fn raw_density(&self, state: &Self::State, prior: &Prior) -> Result<DiscreteDensity>;

    /// State after observing `outcome` from `candidate`.
    fn advance(&self, state: &Self::State, candidate: usize, outcome: usize) -> Self::State;

    fn describe(&self) -> String;
}

/// Never moves away from the prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformAudit;

impl AuditStrategy for UniformAudit {
    type State = ();

    fn initial_state(&self) {}

    fn raw_density(&self, _: &(), prior: &Prior) -> Result<DiscreteDensity> {
        Ok(prior.density().clone())
    }

    fn advance(&self, _: &(), _: usize, _: usize) {}

    fn describe(&self) -> String {
        "uniform".into()
    }
}

/// Puts all raw mass on the candidate that produced the best outcome so far
/// (first occurrence on ties); after projection the density sits on the box
/// bounds wherever the bounds allow.
#[derive(Debug, Clone, Copy, Default)]
pub struct SaturatingAudit;

impl AuditStrategy for SaturatingAudit {
    /// `(best outcome, its candidate)`.
    type State = Option<(usize, usize)>;

    fn initial_state(&self) -> Self::State {
        None
    }

    fn raw_density(&self, state: &Self::State, prior: &Prior) -> Result<DiscreteDensity> {
        match state {
            None => Ok(prior.density().clone()),
            Some((_, cand)) => {
                let w = prior.weights().to_vec();
                let mut values = vec![0.0; w.len()];
                values[*cand] = 1.0 / w[*cand];
                DiscreteDensity::new(values, w)
            }
        }
    }

    fn advance(&self, state: &Self::State, candidate: usize, outcome: usize) -> Self::State {
        match state {
            Some((best, _)) if *best >= outcome => *state,
            _ => Some((outcome, candidate)),
        }
    }

    fn describe(&self) -> String {
        "saturating".into()
    }
}

/// Runs a history-based [`Strategy`] inside the enumeration. The state is
/// the full history, so nothing is merged and cost grows exponentially in
/// `t_cap`.
pub struct HistoryAudit<'a, S: Strategy + ?Sized> {
    pub strategy: &'a S,
}

impl<S: Strategy + ?Sized> AuditStrategy for HistoryAudit<'_, S> {
    type State = Vec<(usize, usize)>;

    fn initial_state(&self) -> Self::State {
        Vec::new()
    }

    fn raw_density(&self, state: &Self::State, _prior: &Prior) -> Result<DiscreteDensity> {
        let history: Vec<Trial> = state
            .iter()
            .enumerate()
            .map(|(i, (cand, out))| Trial {
                lambda_index: *cand,
                lambda: vec![*cand as f64],
                q: *out as f64,
                iteration: i,
            })
            .collect();
        self.strategy.update(&history)
    }

    fn advance(&self, state: &Self::State, candidate: usize, outcome: usize) -> Self::State {
        let mut next = state.clone();
        next.push((candidate, outcome));
        next
    }

    fn describe(&self) -> String {
        format!("history:{}", self.strategy.name())
    }
}

/// Exact law of the released pair (best outcome, candidate that produced it
/// first), up to the NegBin tail past `t_cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDistribution {
    /// Indexed by `outcome * candidate_count + candidate`.
    pub probabilities: Vec<f64>,
    pub t_cap: u64,
    /// `P[T > t_cap]`, the mass not represented in `probabilities`.
    pub tail_mass: f64,
}

/// Enumerates the search on one side of the neighbouring pair.
///
/// With `t_cap = None` the horizon is the smallest `t` whose NegBin tail is
/// below [`ENUMERATION_TAIL`].
pub fn exact_output_distribution<S: AuditStrategy>(
    mech: &FiniteMechanism,
    strategy: &S,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
    side: Side,
    t_cap: Option<u64>,
) -> Result<OutputDistribution> {
    exact_output_distribution_limited(mech, strategy, negbin, bounds, side, t_cap, MAX_ENUMERATED_STATES)
}

/// Merged histories: (strategy state, released pair) to probability.
type Frontier<S> = BTreeMap<(S, Option<(usize, usize)>), f64>;

/// [`exact_output_distribution`] with an explicit cap on the number of
/// generated histories (counted before merging).
pub fn exact_output_distribution_limited<S: AuditStrategy>(
    mech: &FiniteMechanism,
    strategy: &S,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
    side: Side,
    t_cap: Option<u64>,
    max_histories: usize,
) -> Result<OutputDistribution> {
    let t_cap = match t_cap {
        Some(t) => t,
        None => negbin.tail_cutoff(ENUMERATION_TAIL)?,
    };
    if t_cap == 0 {
        return Err(Error::Domain("t_cap must be >= 1".into()));
    }
    let prior = mech.uniform_prior();
    let m = mech.outcome_count();
    let n = mech.candidate_count();

    let mut out = vec![0.0; m * n];
    let mut covered = 0.0;
    let mut visited = 0usize;
    // (state, (best outcome, its candidate)) -> probability after k steps.
    let mut frontier: Frontier<S::State> = BTreeMap::new();
    frontier.insert((strategy.initial_state(), None), 1.0);

    for k in 1..=t_cap {
        let mut next: Frontier<S::State> = BTreeMap::new();
        let mut cache: BTreeMap<S::State, Vec<f64>> = BTreeMap::new();
        visited = visited.saturating_add(frontier.len().saturating_mul(n * m));
        if visited > max_histories {
            return Err(Error::Guard(format!(
                "more than {max_histories} histories up to t = {k}"
            )));
        }
        for ((state, best), prob) in &frontier {
            if !cache.contains_key(state) {
                let raw = strategy.raw_density(state, &prior)?;
                let projected = project_l2(&raw, bounds, &prior)?;
                cache.insert(state.clone(), projected.masses());
            }
            let masses = &cache[state];
            for (cand, mass) in masses.iter().enumerate().take(n) {
                if *mass == 0.0 {
                    continue;
                }
                let outcome_probs = mech.probabilities(cand, side);
                for (y, py) in outcome_probs.iter().enumerate() {
                    let released = match best {
                        Some(b) if b.0 >= y => *b,
                        _ => (y, cand),
                    };
                    let key = (strategy.advance(state, cand, y), Some(released));
                    *next.entry(key).or_insert(0.0) += prob * mass * py;
                }
            }
        }
        let pk = negbin.pmf(k)?;
        covered += pk;
        for ((_, best), prob) in &next {
            let (y, cand) = best.expect("best is set after one step");
            out[y * n + cand] += pk * prob;
        }
        frontier = next;
    }
    Ok(OutputDistribution {
        probabilities: out,
        t_cap,
        tail_mass: (1.0 - covered).max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub alpha: f64,
    pub realized: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
    /// Order of the second RDP guarantee that gave the tightest bound;
    /// `null` in JSON when it is the pure-DP (infinite) order.
    pub alpha_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub strategy: String,
    pub theta: f64,
    pub gamma: f64,
    pub upper: f64,
    pub lower: f64,
    pub t_cap: u64,
    pub tail_mass: f64,
    pub rows: Vec<AuditRow>,
    pub passed: bool,
    pub note: String,
}

/// Orders tried for the second RDP guarantee, besides the audited ones.
const ALPHA_HAT_GRID: [f64; 13] = [
    1.0,
    1.25,
    1.5,
    2.0,
    3.0,
    4.0,
    6.0,
    8.0,
    12.0,
    16.0,
    32.0,
    64.0,
    f64::INFINITY,
];

/// Compares realised `D_alpha(A(D) || A(D'))` with the search's RDP bound.
///
/// The base epsilons are the mechanism's exact divergences; the bound is
/// minimised over `alpha_hat`. Stopping times past the enumeration cap have
/// the same probability under both inputs and are lumped into one extra
/// outcome so that both laws sum to one. A row fails iff
/// `realized > bound + AUDIT_TOLERANCE`.
pub fn audit_bound<S: AuditStrategy>(
    mech: &FiniteMechanism,
    strategy: &S,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
    alphas: &[f64],
) -> Result<AuditReport> {
    let on_d = exact_output_distribution(mech, strategy, negbin, bounds, Side::Dataset, None)?;
    let on_n = exact_output_distribution(mech, strategy, negbin, bounds, Side::Neighbor, None)?;
    let with_tail = |d: &OutputDistribution| {
        let mut p = d.probabilities.clone();
        p.push(d.tail_mass);
        p
    };
    let (p, q) = (with_tail(&on_d), with_tail(&on_n));
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let realized = renyi_divergence(&p, &q, alpha);
        let epsilon = mech.rdp_epsilon(alpha);
        let mut best = (f64::INFINITY, f64::NAN);
        for &alpha_hat in ALPHA_HAT_GRID.iter().chain(alphas) {
            let eps_hat = mech.rdp_epsilon(alpha_hat);
            let b = hypo_rdp(alpha, epsilon, alpha_hat, eps_hat, negbin, bounds)?;
            if b < best.0 {
                best = (b, alpha_hat);
            }
        }
        let (bound, alpha_hat) = best;
        rows.push(AuditRow {
            alpha,
            realized,
            bound,
            slack: bound - realized,
            pass: realized <= bound + AUDIT_TOLERANCE,
            alpha_hat,
        });
    }
    Ok(AuditReport {
        strategy: strategy.describe(),
        theta: negbin.theta(),
        gamma: negbin.gamma(),
        upper: bounds.upper(),
        lower: bounds.lower(),
        t_cap: on_d.t_cap,
        tail_mass: on_d.tail_mass,
        passed: rows.iter().all(|r| r.pass),
        rows,
        note: "deterministic strategy enumerated exactly; uniform prior over candidates".into(),
    })
}
