//! Projection of a discretised sampling density onto the bounded-density set
//! `S_{C,c}(prior) = { f : c * prior <= f <= C * prior, sum_i f_i w_i = 1 }`.
//!
//! Distances are measured in the measure-weighted norm
//! `||f||^2 = sum_i f_i^2 w_i`. The weights cancel from the stationarity
//! conditions, so the constrained optimum is a clipped shift of the input by
//! a single scalar dual variable, found by bisection.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::accountant::AdaptivityBounds;
use crate::error::{Error, Result};

/// Tolerance on `sum_i f_i w_i = 1` for a valid density.
pub const NORMALIZATION_TOL: f64 = 1e-9;

const DUAL_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

/// A density on a finite grid. `values[i]` is the density at point `i` and
/// `weights[i]` the measure of its cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDensity {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteDensity {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(Error::Domain(format!(
                "density needs equal, non-zero lengths (values {}, weights {})",
                values.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Domain(format!("cell weights must be positive, got {w}")));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("density values must be non-negative, got {v}")));
        }
        let density = Self { values, weights };
        let mass = density.total_mass();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Domain(format!("density integrates to {mass}, expected 1")));
        }
        Ok(density)
    }

    /// The uniform density `1 / mu(Lambda)`.
    pub fn uniform(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        let values = vec![1.0 / total; weights.len()];
        Self::new(values, weights)
    }

    /// Rescales non-negative values so that they integrate to one.
    pub fn normalized(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mass: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Domain(format!("cannot normalise a density of mass {mass}")));
        }
        Self::new(values.into_iter().map(|v| v / mass).collect(), weights)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Probability of each grid cell, `f_i * w_i`.
    pub fn masses(&self) -> Vec<f64> {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).collect()
    }

    /// Weighted squared distance `sum_i (f_i - g_i)^2 w_i`.
    pub fn sq_distance(&self, other: &DiscreteDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.weights)
            .map(|((a, b), w)| (a - b) * (a - b) * w)
            .sum()
    }

    /// `KL(self, other) = sum_i self_i log(self_i / other_i) w_i`.
    pub fn kl_divergence(&self, other: &DiscreteDensity) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.weights)
            .filter(|((p, _), _)| **p > 0.0)
            .map(|((p, q), w)| p * (p / q).ln() * w)
            .sum()
    }

    /// Writes `point_id,weight,value` rows with shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "point_id,weight,value")?;
        for (i, (w, v)) in self.weights.iter().zip(&self.values).enumerate() {
            writeln!(out, "{i},{w:?},{v:?}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        match lines.next() {
            Some((_, header)) => {
                let header = header?;
                if header.trim() != "point_id,weight,value" {
                    return Err(Error::parse("line 1", format!("unexpected header {header:?}")));
                }
            }
            None => return Err(Error::parse("line 1", "empty density file")),
        }
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("line {}", n + 1);
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(loc, format!("expected 3 columns, got {}", fields.len())));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| Error::parse(&loc, format!("bad point id {:?}", fields[0])))?;
            if id != values.len() {
                return Err(Error::parse(&loc, format!("point ids must be 0..n in order, got {id}")));
            }
            let w: f64 = fields[1]
                .parse()
                .map_err(|_| Error::parse(&loc, format!("bad weight {:?}", fields[1])))?;
            let v: f64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(&loc, format!("bad value {:?}", fields[2])))?;
            weights.push(w);
            values.push(v);
        }
        Self::new(values, weights)
    }
}

/// A reference density with strictly positive values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior(DiscreteDensity);

impl Prior {
    pub fn new(density: DiscreteDensity) -> Result<Self> {
        if density.values.iter().any(|v| *v <= 0.0) {
            return Err(Error::Domain("prior density must be strictly positive".into()));
        }
        Ok(Self(density))
    }

    pub fn uniform(weights: Vec<f64>) -> Result<Self> {
        Self::new(DiscreteDensity::uniform(weights)?)
    }

    pub fn density(&self) -> &DiscreteDensity {
        &self.0
    }

    pub fn weights(&self) -> &[f64] {
        &self.0.weights
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn box_bounds(&self, bounds: &AdaptivityBounds) -> (Vec<f64>, Vec<f64>) {
        let lo = self.0.values.iter().map(|p| bounds.lower() * p).collect();
        let hi = self.0.values.iter().map(|p| bounds.upper() * p).collect();
        (lo, hi)
    }
}

/// Whether `S_{C,c}(prior)` is non-empty.
pub fn bounds_feasible(bounds: &AdaptivityBounds, prior: &Prior) -> bool {
    let w = prior.weights();
    let (lo, hi) = prior.box_bounds(bounds);
    let lo_mass: f64 = lo.iter().zip(w).map(|(l, w)| l * w).sum();
    let hi_mass: f64 = hi.iter().zip(w).map(|(h, w)| h * w).sum();
    lo_mass <= 1.0 + DUAL_TOL && hi_mass >= 1.0 - DUAL_TOL
}

/// Whether `f` already satisfies the box and normalisation constraints.
pub fn contains(f: &DiscreteDensity, bounds: &AdaptivityBounds, prior: &Prior, tol: f64) -> bool {
    let (lo, hi) = prior.box_bounds(bounds);
    f.len() == prior.len()
        && (f.total_mass() - 1.0).abs() <= tol
        && f.values
            .iter()
            .zip(lo.iter().zip(&hi))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
}

fn in_box(f: &DiscreteDensity, bounds: &AdaptivityBounds, prior: &Prior) -> bool {
    let (lo, hi) = prior.box_bounds(bounds);
    f.values
        .iter()
        .zip(lo.iter().zip(&hi))
        .all(|(v, (l, h))| v >= l && v <= h)
}

fn check_inputs(pi: &DiscreteDensity, bounds: &AdaptivityBounds, prior: &Prior) -> Result<()> {
    if pi.len() != prior.len() {
        return Err(Error::Domain(format!(
            "density has {} points but the prior has {}",
            pi.len(),
            prior.len()
        )));
    }
    if pi.weights != prior.0.weights {
        return Err(Error::Domain("density and prior use different cell weights".into()));
    }
    if !bounds_feasible(bounds, prior) {
        return Err(Error::Infeasible(format!(
            "no density satisfies {} <= f / prior <= {}",
            bounds.lower(),
            bounds.upper()
        )));
    }
    Ok(())
}

/// Finds `lambda` with `mass(lambda) = 1` for a monotone `mass`;
/// `increasing` gives the direction of monotonicity.
fn solve_dual(mass: impl Fn(f64) -> f64, increasing: bool) -> Result<f64> {
    let sign = if increasing { 1.0 } else { -1.0 };
    let m = |x: f64| mass(sign * x);
    let bracket_err = || Error::Numeric("could not bracket the dual variable".into());
    let mut a = -1.0;
    let mut guard = 0;
    while m(a) > 1.0 + DUAL_TOL {
        a *= 2.0;
        guard += 1;
        if guard > 1100 {
            return Err(bracket_err());
        }
    }
    let mut b = 1.0;
    while m(b) < 1.0 - DUAL_TOL {
        b *= 2.0;
        guard += 1;
        if guard > 2200 {
            return Err(bracket_err());
        }
    }
    let mut prev = m(a);
    let mut mid = 0.5 * (a + b);
    for _ in 0..MAX_BISECTIONS {
        mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        let mv = m(mid);
        debug_assert!(mv >= prev - 1e-12, "dual map is not monotone");
        if mv == 1.0 {
            break;
        }
        if mv < 1.0 {
            a = mid;
            prev = mv;
        } else {
            b = mid;
        }
    }
    let value = m(mid);
    if !value.is_finite() || (value - 1.0).abs() > DUAL_TOL.max(NORMALIZATION_TOL) {
        return Err(Error::Numeric(format!("dual bisection stalled at mass {value}")));
    }
    Ok(sign * mid)
}

/// Euclidean (measure-weighted) projection of `pi` onto `S_{C,c}(prior)`.
pub fn project_l2(pi: &DiscreteDensity, bounds: &AdaptivityBounds, prior: &Prior) -> Result<DiscreteDensity> {
    check_inputs(pi, bounds, prior)?;
    if in_box(pi, bounds, prior) && (pi.total_mass() - 1.0).abs() <= NORMALIZATION_TOL {
        return Ok(pi.clone());
    }
    let (lo, hi) = prior.box_bounds(bounds);
    let w = &pi.weights;
    let clip_at = |shift: f64| -> Vec<f64> {
        pi.values
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(p, (l, h))| (p + shift).clamp(*l, *h))
            .collect()
    };
    let mass = |shift: f64| -> f64 { clip_at(shift).iter().zip(w).map(|(f, w)| f * w).sum() };
    let shift = solve_dual(mass, true)?;
    let mut f = clip_at(shift);
    polish_free_coordinates(&mut f, &pi.values, &lo, &hi, w);
    finish(f, w.clone(), bounds, prior)
}

/// Re-solves the shift in closed form on the free (unclipped) coordinates so
/// that the normalisation holds to rounding precision.
fn polish_free_coordinates(f: &mut [f64], pi: &[f64], lo: &[f64], hi: &[f64], w: &[f64]) {
    let free: Vec<usize> = (0..f.len()).filter(|&i| f[i] > lo[i] && f[i] < hi[i]).collect();
    if free.is_empty() {
        return;
    }
    let fixed_mass: f64 = (0..f.len()).filter(|i| !free.contains(i)).map(|i| f[i] * w[i]).sum();
    let free_pi: f64 = free.iter().map(|&i| pi[i] * w[i]).sum();
    let free_w: f64 = free.iter().map(|&i| w[i]).sum();
    let shift = (1.0 - fixed_mass - free_pi) / free_w;
    let candidate: Vec<f64> = free.iter().map(|&i| pi[i] + shift).collect();
    if free.iter().zip(&candidate).all(|(&i, v)| *v >= lo[i] && *v <= hi[i]) {
        for (&i, v) in free.iter().zip(candidate) {
            f[i] = v;
        }
    }
}

fn finish(values: Vec<f64>, weights: Vec<f64>, bounds: &AdaptivityBounds, prior: &Prior) -> Result<DiscreteDensity> {
    let f = DiscreteDensity { values, weights };
    if !contains(&f, bounds, prior, NORMALIZATION_TOL) {
        return Err(Error::Numeric(format!(
            "projection left the feasible set (mass {})",
            f.total_mass()
        )));
    }
    Ok(f)
}

/// Projection with an additional `nu * KL(pi, f)` penalty.
///
/// Minimises `sum_i [(f_i - pi_i)^2 - nu pi_i ln f_i] w_i` over
/// `S_{C,c}(prior)`. For a dual value `lambda` the per-coordinate optimum is
/// the positive root of `2 f^2 + (lambda - 2 pi) f - nu pi = 0`, clipped to
/// the box.
pub fn project_kl_penalized(
    pi: &DiscreteDensity,
    bounds: &AdaptivityBounds,
    prior: &Prior,
    nu: f64,
) -> Result<DiscreteDensity> {
    if !(nu.is_finite() && nu >= 0.0) {
        return Err(Error::Domain(format!("penalty weight must be >= 0, got {nu}")));
    }
    check_inputs(pi, bounds, prior)?;
    if nu > 0.0 && pi.values.iter().any(|p| *p <= 0.0) {
        return Err(Error::Domain(
            "KL penalty needs a strictly positive input density".into(),
        ));
    }
    let (lo, hi) = prior.box_bounds(bounds);
    let w = &pi.weights;
    let root = |p: f64, lambda: f64| -> f64 {
        let b = lambda - 2.0 * p;
        let disc = (b * b + 8.0 * nu * p).sqrt();
        if b >= 0.0 {
            if disc + b == 0.0 {
                0.0
            } else {
                2.0 * nu * p / (disc + b)
            }
        } else {
            (disc - b) / 4.0
        }
    };
    let clip_at = |lambda: f64| -> Vec<f64> {
        pi.values
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(p, (l, h))| root(*p, lambda).clamp(*l, *h))
            .collect()
    };
    let mass = |lambda: f64| -> f64 { clip_at(lambda).iter().zip(w).map(|(f, w)| f * w).sum() };
    let lambda = solve_dual(mass, false)?;
    let mut f = clip_at(lambda);
    if nu == 0.0 {
        polish_free_coordinates(&mut f, &pi.values, &lo, &hi, w);
    }
    finish(f, w.clone(), bounds, prior)
}
