//! Truncated negative binomial law of the number of training runs.
//!
//! `NegBin(theta, gamma)` is supported on the positive integers. With
//! `theta = 1` it is the geometric distribution with success probability
//! `gamma`; `theta = 0` is the logarithmic distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative mass at which the inverse-CDF walk gives up and returns the
/// current index.
pub const SAMPLE_TAIL_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegBinParams {
    theta: f64,
    gamma: f64,
}

/// One draw of the stopping time. `truncated` is set when the walk hit the
/// tail cap instead of crossing the uniform variate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingTime {
    pub value: u64,
    pub truncated: bool,
}

impl NegBinParams {
    pub fn new(theta: f64, gamma: f64) -> Result<Self> {
        if !theta.is_finite() || theta <= -1.0 {
            return Err(Error::Domain(format!("theta must be finite and > -1, got {theta}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        Ok(Self { theta, gamma })
    }

    /// Geometric distribution with success probability `gamma`.
    pub fn geometric(gamma: f64) -> Result<Self> {
        Self::new(1.0, gamma)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn log_one_minus_gamma(&self) -> f64 {
        (-self.gamma).ln_1p()
    }

    /// `P[T = k]`.
    pub fn pmf(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("pmf support is k >= 1".into()));
        }
        Ok(self.log_pmf_unchecked(k).exp())
    }

    fn log_pmf_unchecked(&self, k: u64) -> f64 {
        let kf = k as f64;
        let log_decay = kf * self.log_one_minus_gamma();
        if self.theta == 0.0 {
            return log_decay - kf.ln() - (1.0 / self.gamma).ln().ln();
        }
        // prod_{l=0}^{k-1} (l + theta) / (l + 1), accumulated in log space.
        // Only the l = 0 factor can be negative (theta in (-1, 0)); the
        // normaliser gamma^-theta - 1 has the same sign, so they cancel.
        let mut log_prod = 0.0;
        for l in 0..k {
            let l = l as f64;
            log_prod += (l + self.theta).abs().ln() - (l + 1.0).ln();
        }
        let log_norm = (-self.theta * self.gamma.ln()).exp_m1().abs().ln();
        log_decay + log_prod - log_norm
    }

    /// `E[T]` in closed form.
    pub fn mean(&self) -> f64 {
        let g = self.gamma;
        if self.theta == 0.0 {
            (1.0 / g - 1.0) / (1.0 / g).ln()
        } else {
            // 1 - gamma^theta computed as -expm1(theta ln gamma).
            let denom = g * -(self.theta * g.ln()).exp_m1();
            self.theta * (1.0 - g) / denom
        }
    }

    /// Probability generating function `f(x) = E[x^T]` on `[0, 1]`.
    pub fn pgf(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        if x == 1.0 {
            return Ok(1.0);
        }
        let g = self.gamma;
        let log_base = (-(1.0 - g) * x).ln_1p();
        let value = if self.theta == 0.0 {
            log_base / g.ln()
        } else {
            (-self.theta * log_base).exp_m1() / (-self.theta * g.ln()).exp_m1()
        };
        Ok(value.clamp(0.0, 1.0))
    }

    /// `f'(x) = (1 - (1 - gamma) x)^(-theta - 1) * gamma^(theta + 1) * E[T]`.
    pub fn pgf_derivative(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        let g = self.gamma;
        let log_base = (-(1.0 - g) * x).ln_1p();
        let log_scale = (self.theta + 1.0) * (g.ln() - log_base);
        Ok(log_scale.exp() * self.mean())
    }

    /// Smallest `k` with `P[T > k] < tail_mass`.
    pub fn tail_cutoff(&self, tail_mass: f64) -> Result<u64> {
        if !(tail_mass > 0.0 && tail_mass < 1.0) {
            return Err(Error::Domain(format!("tail mass must lie in (0, 1), got {tail_mass}")));
        }
        let mut cum = 0.0;
        let mut k = 0u64;
        let mut term = 0.0;
        loop {
            k += 1;
            term = self.next_term(k, term);
            cum += term;
            if 1.0 - cum < tail_mass {
                return Ok(k);
            }
            if k > 1 << 32 {
                return Err(Error::Numeric("tail cutoff search did not terminate".into()));
            }
        }
    }

    /// `pmf(k)` from `pmf(k - 1)` via the ratio `(1 - gamma)(k - 1 + theta) / k`.
    fn next_term(&self, k: u64, prev: f64) -> f64 {
        if k == 1 {
            return self.log_pmf_unchecked(1).exp();
        }
        let kf = k as f64;
        let ratio = if self.theta == 0.0 {
            (1.0 - self.gamma) * (kf - 1.0) / kf
        } else {
            (1.0 - self.gamma) * (kf - 1.0 + self.theta) / kf
        };
        prev * ratio
    }

    /// Inverse-CDF draw. Consumes exactly one `f64` from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StoppingTime {
        let u: f64 = rng.random();
        let mean = self.mean();
        let mut cum = 0.0;
        let mut term = 0.0;
        let mut k = 0u64;
        loop {
            k += 1;
            term = self.next_term(k, term);
            cum += term;
            if u < cum {
                return StoppingTime {
                    value: k,
                    truncated: false,
                };
            }
            // Rounding can leave the running sum just short of 1; the second
            // clause stops the walk once the remaining terms are negligible.
            if cum >= 1.0 - SAMPLE_TAIL_MASS || (term < 1e-300 && k as f64 > mean) {
                return StoppingTime {
                    value: k,
                    truncated: true,
                };
            }
        }
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("argument must lie in [0, 1], got {x}")))
    }
}
