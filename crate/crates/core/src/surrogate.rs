//! Gaussian-process surrogate, UCB scores and the softmax sampling density.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::DiscreteDensity;

const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// One lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub jitter: f64,
    /// Prior mean used when `center_observations` is off (or there are no
    /// observations).
    pub prior_mean: f64,
    /// When set, the mean of the observed scores replaces `prior_mean`.
    pub center_observations: bool,
    /// Exploration weight in `mu + tau * sigma`.
    pub tau: f64,
    /// Inverse temperature of the softmax.
    pub beta: f64,
}

impl GpConfig {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Self {
        Self {
            lengthscales,
            signal_variance,
            noise_variance,
            jitter: 1e-8,
            prior_mean: 0.0,
            center_observations: true,
            tau: 0.1,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Domain("lengthscales must be positive".into()));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::Domain("signal variance must be positive".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Domain("noise variance must be >= 0".into()));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::Domain("jitter must be positive".into()));
        }
        if !(self.tau >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Domain("tau and beta must be >= 0".into()));
        }
        if !self.prior_mean.is_finite() {
            return Err(Error::Domain("prior mean must be finite".into()));
        }
        Ok(())
    }

    /// Squared-exponential kernel.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, point: Vec<f64>, value: f64) -> Result<()> {
        if let Some(first) = self.points.first() {
            if first.len() != point.len() {
                return Err(Error::Domain(format!(
                    "observation has {} coordinates, expected {}",
                    point.len(),
                    first.len()
                )));
            }
        }
        if !value.is_finite() {
            return Err(Error::Domain(format!("observed score must be finite, got {value}")));
        }
        self.points.push(point);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Lower-triangular Cholesky factor of a dense SPD matrix, row-major.
struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    /// Solves `L x = b` in place.
    fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    /// Solves `L^T x = b` in place.
    fn backward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

/// Posterior mean and standard deviation of the latent function at `grid`.
///
/// Repeated observations at an identical point are pooled into their average
/// with noise variance divided by the count, which leaves the posterior
/// unchanged and bounds the linear system by the number of distinct points.
pub fn posterior(config: &GpConfig, obs: &ObservationSet, grid: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    let dim = config.lengthscales.len();
    if let Some(bad) = grid.iter().chain(obs.points()).find(|p| p.len() != dim) {
        return Err(Error::Domain(format!(
            "point has {} coordinates but the kernel has {dim} lengthscales",
            bad.len()
        )));
    }
    if obs.is_empty() {
        let sd = config.signal_variance.sqrt();
        return Ok((vec![config.prior_mean; grid.len()], vec![sd; grid.len()]));
    }
    let offset = if config.center_observations {
        obs.values().iter().sum::<f64>() / obs.len() as f64
    } else {
        config.prior_mean
    };

    // Pool duplicates, keeping first-occurrence order.
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut centers: Vec<&[f64]> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for (p, q) in obs.points().iter().zip(obs.values()) {
        let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
        let slot = *index.entry(key).or_insert_with(|| {
            centers.push(p);
            sums.push(0.0);
            counts.push(0.0);
            centers.len() - 1
        });
        sums[slot] += q - offset;
        counts[slot] += 1.0;
    }
    let n = centers.len();
    let targets: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / c).collect();

    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = config.kernel(centers[i], centers[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let mut jitter = config.jitter;
    let chol = loop {
        let mut a = gram.clone();
        for i in 0..n {
            a[i * n + i] += config.noise_variance / counts[i] + jitter;
        }
        if let Some(c) = Cholesky::factor(&a, n) {
            break c;
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER {
            return Err(Error::Numeric(format!(
                "kernel matrix is not positive definite even with jitter {MAX_JITTER}"
            )));
        }
    };
    let mut weights = targets;
    chol.forward(&mut weights);
    chol.backward(&mut weights);

    let mut mu = Vec::with_capacity(grid.len());
    let mut sigma = Vec::with_capacity(grid.len());
    let mut cross = vec![0.0; n];
    for x in grid {
        for (c, slot) in centers.iter().zip(cross.iter_mut()) {
            *slot = config.kernel(x, c);
        }
        mu.push(offset + cross.iter().zip(&weights).map(|(k, w)| k * w).sum::<f64>());
        chol.forward(&mut cross);
        let explained: f64 = cross.iter().map(|v| v * v).sum();
        let var = (config.kernel(x, x) - explained).max(0.0);
        sigma.push(var.sqrt());
    }
    Ok((mu, sigma))
}

/// UCB scores `mu + tau * sigma`.
pub fn scores(mu: &[f64], sigma: &[f64], tau: f64) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() {
        return Err(Error::Domain(format!(
            "mean has {} entries but sigma has {}",
            mu.len(),
            sigma.len()
        )));
    }
    Ok(mu.iter().zip(sigma).map(|(m, s)| m + tau * s).collect())
}

/// `f_i = exp(beta s_i) / sum_j exp(beta s_j) w_j`.
pub fn softmax_density(scores: &[f64], beta: f64, weights: &[f64]) -> Result<DiscreteDensity> {
    if scores.len() != weights.len() {
        return Err(Error::Domain("scores and weights differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) || !beta.is_finite() {
        return Err(Error::Domain("scores and beta must be finite".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = scores.iter().map(|s| (beta * (s - max)).exp()).collect();
    DiscreteDensity::normalized(unnorm, weights.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ls: f64, noise: f64) -> GpConfig {
        let mut c = GpConfig::new(vec![ls], 1.0, noise);
        c.center_observations = false;
        c
    }

    fn obs(pairs: &[(f64, f64)]) -> ObservationSet {
        let mut o = ObservationSet::new();
        for (x, q) in pairs {
            o.push(vec![*x], *q).unwrap();
        }
        o
    }

    #[test]
    fn empty_is_prior() {
        let mut c = cfg(0.3, 0.1);
        c.prior_mean = 0.7;
        c.signal_variance = 4.0;
        let grid = vec![vec![0.0], vec![1.0]];
        let (mu, sd) = posterior(&c, &ObservationSet::new(), &grid).unwrap();
        assert_eq!(mu, vec![0.7, 0.7]);
        assert_eq!(sd, vec![2.0, 2.0]);
    }

    #[test]
    fn single_observation_closed_form() {
        let mut c = cfg(0.5, 0.05);
        c.prior_mean = 0.2;
        c.jitter = 1e-14;
        let x0 = 0.3;
        let q0 = 1.4;
        let grid: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 / 10.0]).collect();
        let (mu, sd) = posterior(&c, &obs(&[(x0, q0)]), &grid).unwrap();
        for (x, (m, s)) in grid.iter().zip(mu.iter().zip(&sd)) {
            let k = c.kernel(x, &[x0]);
            let k00 = c.kernel(&[x0], &[x0]);
            let m_ref = 0.2 + k / (k00 + 0.05) * (q0 - 0.2);
            let v_ref = c.kernel(x, x) - k * k / (k00 + 0.05);
            assert!((m - m_ref).abs() < 1e-8);
            assert!((s - v_ref.max(0.0).sqrt()).abs() < 1e-8);
        }
        // noiseless limit at the observed point
        let mut c0 = cfg(0.5, 0.0);
        c0.jitter = 1e-12;
        let (mu, sd) = posterior(&c0, &obs(&[(x0, q0)]), &[vec![x0]]).unwrap();
        assert!((mu[0] - q0).abs() < 1e-8);
        assert!(sd[0] < 1e-5);
    }

    #[test]
    fn symmetric_pair() {
        let mut c = cfg(0.4, 0.0);
        c.jitter = 1e-12;
        let o = obs(&[(-0.5, 2.0), (0.5, 2.0)]);
        let grid: Vec<Vec<f64>> = (-10..=10).map(|i| vec![i as f64 / 10.0]).collect();
        let (mu, sd) = posterior(&c, &o, &grid).unwrap();
        // closed-form 2x2 solve at the midpoint
        let k = c.kernel(&[0.0], &[0.5]);
        let k01 = c.kernel(&[-0.5], &[0.5]);
        let expected_mid = 2.0 * 2.0 * k / (1.0 + k01);
        assert!((mu[10] - expected_mid).abs() < 1e-8);
        for i in 0..21 {
            assert!((mu[i] - mu[20 - i]).abs() < 1e-10);
            assert!((sd[i] - sd[20 - i]).abs() < 1e-10);
        }
        // with a long lengthscale the midpoint recovers the shared value
        let mut long = cfg(50.0, 0.0);
        long.jitter = 1e-10;
        let (mu, _) = posterior(&long, &o, &[vec![0.0]]).unwrap();
        assert!((mu[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn interpolates_noiseless_observations() {
        let mut c = GpConfig::new(vec![0.2, 0.3], 1.5, 0.0);
        c.jitter = 1e-10;
        let mut o = ObservationSet::new();
        let pts = [
            ([0.0, 0.0], 0.3),
            ([1.0, 0.0], -0.2),
            ([0.0, 1.0], 0.9),
            ([1.0, 1.0], 0.1),
        ];
        for (p, q) in &pts {
            o.push(p.to_vec(), *q).unwrap();
        }
        let grid: Vec<Vec<f64>> = pts.iter().map(|(p, _)| p.to_vec()).collect();
        let (mu, _) = posterior(&c, &o, &grid).unwrap();
        for (m, (_, q)) in mu.iter().zip(&pts) {
            assert!((m - q).abs() < 1e-6);
        }
    }

    #[test]
    fn variance_never_exceeds_prior() {
        let c = cfg(0.1, 0.01);
        let o = obs(&[(0.1, 1.0), (0.15, 0.0), (0.9, 3.0), (0.9, 2.0)]);
        let grid: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 99.0]).collect();
        let (_, sd) = posterior(&c, &o, &grid).unwrap();
        for s in sd {
            assert!(s * s <= c.signal_variance + 1e-8);
            assert!(s >= 0.0);
        }
    }

    #[test]
    fn pooling_duplicates_matches_full_system() {
        // Two noisy repeats at one point equal one observation of their mean
        // with half the noise variance.
        let mut c = cfg(0.3, 0.2);
        c.jitter = 1e-14;
        let pooled = posterior(
            &c,
            &obs(&[(0.4, 1.0), (0.4, 3.0), (0.8, -1.0)]),
            &[vec![0.5], vec![0.0]],
        )
        .unwrap();
        // Explicit 3x3 system with a slightly perturbed duplicate location,
        // converging to the pooled answer.
        let near = posterior(
            &c,
            &obs(&[(0.4, 1.0), (0.4 + 1e-7, 3.0), (0.8, -1.0)]),
            &[vec![0.5], vec![0.0]],
        )
        .unwrap();
        for i in 0..2 {
            assert!((pooled.0[i] - near.0[i]).abs() < 1e-5);
            assert!((pooled.1[i] - near.1[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn centering_uses_observed_mean() {
        let mut c = cfg(0.01, 0.0);
        c.center_observations = true;
        c.jitter = 1e-12;
        let o = obs(&[(0.0, 5.0), (1.0, 7.0)]);
        let (mu, _) = posterior(&c, &o, &[vec![0.5]]).unwrap();
        assert!((mu[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let c = cfg(0.1, 0.0);
        assert!(posterior(&c, &obs(&[(0.0, 1.0)]), &[vec![0.0, 1.0]]).is_err());
        let mut o = ObservationSet::new();
        o.push(vec![0.0], 1.0).unwrap();
        assert!(o.push(vec![0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn score_examples() {
        let mu = [0.0, 0.0];
        let sd = [1.0, 2.0];
        assert_eq!(scores(&mu, &sd, 0.0).unwrap(), mu.to_vec());
        let s = scores(&mu, &sd, 0.1).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-15 && (s[1] - 0.2).abs() < 1e-15);
        let lo = scores(&[0.3, -0.2], &sd, 0.5).unwrap();
        let hi = scores(&[0.3, -0.2], &sd, 0.7).unwrap();
        assert!(lo.iter().zip(&hi).all(|(a, b)| b >= a));
        assert!(scores(&mu, &[1.0], 0.1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let f = softmax_density(&[3.0, -1.0, 0.5], 0.0, &[1.0, 2.0, 1.0]).unwrap();
        assert!(f.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let f = softmax_density(&[2f64.ln(), 0.0], 1.0, &[1.0, 1.0]).unwrap();
        assert!((f.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.values()[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = softmax_density(&[0.1, 0.7, -0.4], 3.0, &[0.5, 1.0, 2.0]).unwrap();
        let b = softmax_density(&[100.1, 100.7, 99.6], 3.0, &[0.5, 1.0, 2.0]).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax_density(&[1e5, 0.0], 10.0, &[1.0, 1.0]).unwrap();
        assert!((big.values()[0] - 1.0).abs() < 1e-15);
    }
}
