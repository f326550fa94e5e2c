//! The adaptive tuning loop: draw a stopping time, then repeatedly update the
//! sampling density, project it into the allowed band around the prior,
//! sample a candidate and score it.
//!
//! Random draws happen in a fixed order on a single stream: the stopping time
//! first, then for each iteration one uniform for the candidate followed by
//! whatever the oracle consumes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::AdaptivityBounds;
use crate::distributions::NegBinParams;
use crate::error::{Error, Result};
use crate::projection::{self, DiscreteDensity, Prior, NORMALIZATION_TOL};
use crate::surrogate::{self, GpConfig, ObservationSet};

/// Grids larger than this do not record per-iteration densities unless asked.
pub const DENSITY_RECORD_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub lambda_index: usize,
    pub lambda: Vec<f64>,
    pub q: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub seed: u64,
    pub run_index: u64,
    #[serde(rename = "T")]
    pub t: u64,
    /// The stopping-time draw hit the sampler's tail cap.
    pub t_truncated: bool,
    /// False for fixed-T runs, whose length carries no privacy guarantee.
    pub privacy_accounted: bool,
    pub trials: Vec<Trial>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub densities: Option<Vec<Vec<f64>>>,
    /// `None` only on partial transcripts attached to oracle errors.
    pub best: Option<Trial>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_digest: Option<String>,
}

impl Transcript {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// First trial with the largest score.
pub fn best_trial(trials: &[Trial]) -> Option<&Trial> {
    let mut best: Option<&Trial> = None;
    for t in trials {
        if best.is_none_or(|b| t.q > b.q) {
            best = Some(t);
        }
    }
    best
}

/// A scoring oracle over a finite grid.
pub trait Oracle: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of grid point `index`.
    fn point(&self, index: usize) -> Vec<f64>;

    /// One noisy score at `index`. Larger is better.
    fn query(&self, index: usize, rng: &mut dyn RngCore) -> Result<f64>;
}

/// Maps a run history to a raw (unprojected) sampling density. Must be a
/// pure function of the history.
pub trait Strategy: Send + Sync {
    fn name(&self) -> &str;

    fn update(&self, history: &[Trial]) -> Result<DiscreteDensity>;
}

#[derive(Debug, Clone)]
pub struct UniformStrategy {
    prior: Prior,
}

impl UniformStrategy {
    pub fn new(prior: Prior) -> Self {
        Self { prior }
    }
}

impl Strategy for UniformStrategy {
    fn name(&self) -> &str {
        "uniform"
    }

    fn update(&self, _history: &[Trial]) -> Result<DiscreteDensity> {
        Ok(self.prior.density().clone())
    }
}

/// GP posterior, UCB scores and a softmax over the whole grid.
#[derive(Debug, Clone)]
pub struct GpStrategy {
    prior: Prior,
    features: Vec<Vec<f64>>,
    config: GpConfig,
}

impl GpStrategy {
    /// `features[i]` is the regression input for grid point `i`.
    pub fn new(prior: Prior, features: Vec<Vec<f64>>, config: GpConfig) -> Result<Self> {
        config.validate()?;
        if features.len() != prior.len() {
            return Err(Error::Domain(format!(
                "{} feature vectors for a grid of {} points",
                features.len(),
                prior.len()
            )));
        }
        Ok(Self {
            prior,
            features,
            config,
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }
}

impl Strategy for GpStrategy {
    fn name(&self) -> &str {
        "gp"
    }

    fn update(&self, history: &[Trial]) -> Result<DiscreteDensity> {
        if history.is_empty() {
            return Ok(self.prior.density().clone());
        }
        let mut obs = ObservationSet::new();
        for t in history {
            let x = self
                .features
                .get(t.lambda_index)
                .ok_or_else(|| Error::Domain(format!("trial index {} is outside the grid", t.lambda_index)))?;
            obs.push(x.clone(), t.q)?;
        }
        let (mu, sigma) = surrogate::posterior(&self.config, &obs, &self.features)?;
        let s = surrogate::scores(&mu, &sigma, self.config.tau)?;
        surrogate::softmax_density(&s, self.config.beta, self.prior.weights())
    }
}

/// Random stream for one run, derived from a master seed and the run index
/// by selecting ChaCha stream number `run_index` under key `master`.
#[derive(Debug, Clone)]
pub struct RunStream {
    seed: u64,
    run_index: u64,
    rng: ChaCha8Rng,
}

impl RunStream {
    pub fn new(seed: u64, run_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run_index);
        Self { seed, run_index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn run_index(&self) -> u64 {
        self.run_index
    }
}

impl RngCore for RunStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// `None` records densities for grids up to [`DENSITY_RECORD_LIMIT`].
    pub record_densities: Option<bool>,
    pub config_digest: Option<String>,
}

impl RunOptions {
    fn records(&self, grid_len: usize) -> bool {
        self.record_densities.unwrap_or(grid_len <= DENSITY_RECORD_LIMIT)
    }
}

/// Draws an index with probability proportional to `masses[i]`, using one
/// uniform from `rng`.
pub fn sample_index<R: Rng + ?Sized>(masses: &[f64], rng: &mut R) -> usize {
    let total: f64 = masses.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        if u < acc {
            return i;
        }
    }
    masses.iter().rposition(|m| *m > 0.0).unwrap_or(0)
}

enum Stopping<'a> {
    Random(&'a NegBinParams),
    Fixed(u64),
}

/// One private tuning run with a NegBin stopping time.
pub fn run_hypo(
    oracle: &dyn Oracle,
    strategy: &dyn Strategy,
    negbin: &NegBinParams,
    bounds: &AdaptivityBounds,
    prior: &Prior,
    rng: &mut RunStream,
    options: &RunOptions,
) -> Result<Transcript> {
    run_loop(oracle, strategy, Stopping::Random(negbin), bounds, prior, rng, options)
}

/// Same loop with the number of iterations forced to `t`. The result is
/// flagged as not privacy-accounted.
pub fn run_fixed_t(
    oracle: &dyn Oracle,
    strategy: &dyn Strategy,
    t: u64,
    bounds: &AdaptivityBounds,
    prior: &Prior,
    rng: &mut RunStream,
    options: &RunOptions,
) -> Result<Transcript> {
    if t == 0 {
        return Err(Error::Domain("fixed T must be at least 1".into()));
    }
    run_loop(oracle, strategy, Stopping::Fixed(t), bounds, prior, rng, options)
}

fn run_loop(
    oracle: &dyn Oracle,
    strategy: &dyn Strategy,
    stopping: Stopping<'_>,
    bounds: &AdaptivityBounds,
    prior: &Prior,
    rng: &mut RunStream,
    options: &RunOptions,
) -> Result<Transcript> {
    if oracle.len() != prior.len() {
        return Err(Error::Domain(format!(
            "oracle has {} grid points but the prior has {}",
            oracle.len(),
            prior.len()
        )));
    }
    if !projection::bounds_feasible(bounds, prior) {
        return Err(Error::Infeasible(format!(
            "bounds [{}, {}] admit no density around the prior",
            bounds.lower(),
            bounds.upper()
        )));
    }
    let (t, t_truncated, privacy_accounted) = match stopping {
        Stopping::Random(nb) => {
            let draw = nb.sample(rng);
            (draw.value, draw.truncated, true)
        }
        Stopping::Fixed(t) => (t, false, false),
    };
    let mut transcript = Transcript {
        seed: rng.seed(),
        run_index: rng.run_index(),
        t,
        t_truncated,
        privacy_accounted,
        trials: Vec::new(),
        densities: options.records(prior.len()).then(Vec::new),
        best: None,
        config_digest: options.config_digest.clone(),
    };
    for j in 0..t as usize {
        let raw = strategy.update(&transcript.trials)?;
        let f = projection::project_l2(&raw, bounds, prior)?;
        if !projection::contains(&f, bounds, prior, NORMALIZATION_TOL) {
            return Err(Error::Numeric(format!(
                "projected density at iteration {j} leaves the allowed band"
            )));
        }
        let index = sample_index(&f.masses(), rng);
        if let Some(d) = transcript.densities.as_mut() {
            d.push(f.values().to_vec());
        }
        match oracle.query(index, rng) {
            Ok(q) => transcript.trials.push(Trial {
                lambda_index: index,
                lambda: oracle.point(index),
                q,
                iteration: j,
            }),
            Err(e) => {
                let message = e.to_string();
                transcript.best = best_trial(&transcript.trials).cloned();
                return Err(Error::Oracle {
                    message,
                    partial: Some(Box::new(transcript)),
                });
            }
        }
    }
    transcript.best = best_trial(&transcript.trials).cloned();
    Ok(transcript)
}

/// Plain random search: draw T, then T independent uniform picks over the
/// grid. Written without strategies or projection so it can be checked
/// against [`run_hypo`] with a uniform strategy and `C = c = 1`.
pub fn run_uniform_baseline(
    oracle: &dyn Oracle,
    negbin: &NegBinParams,
    rng: &mut RunStream,
    options: &RunOptions,
) -> Result<Transcript> {
    let n = oracle.len();
    if n == 0 {
        return Err(Error::Domain("empty grid".into()));
    }
    let draw = negbin.sample(rng);
    let masses = vec![1.0 / n as f64; n];
    let record = options.records(n);
    let mut trials = Vec::with_capacity(draw.value as usize);
    let mut densities = record.then(Vec::new);
    for j in 0..draw.value as usize {
        let index = sample_index(&masses, rng);
        if let Some(d) = densities.as_mut() {
            d.push(masses.clone());
        }
        let q = oracle.query(index, rng)?;
        trials.push(Trial {
            lambda_index: index,
            lambda: oracle.point(index),
            q,
            iteration: j,
        });
    }
    let best = best_trial(&trials).cloned();
    Ok(Transcript {
        seed: rng.seed(),
        run_index: rng.run_index(),
        t: draw.value,
        t_truncated: draw.truncated,
        privacy_accounted: true,
        trials,
        densities,
        best,
        config_digest: options.config_digest.clone(),
    })
}
