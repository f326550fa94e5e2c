//! Repeated-run benchmarks over fixed-T or stopping-law sweeps.
//!
//! Repetition `r` of every configuration uses the stream
//! `RunStream::new(seed, r)`, so strategies are compared on common random
//! numbers and results do not depend on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::{search_epsilon, solve_base_scale};
use crate::config::{PrivacyMode, RunConfig, StoppingRule, StrategyKind};
use crate::distributions::NegBinParams;
use crate::error::{Error, Result};
use crate::framework::{self, GpStrategy, RunOptions, RunStream, Strategy, Transcript, UniformStrategy};
use crate::landscape::{Landscape, LandscapeOracle};
use crate::projection::Prior;

const Z_95: f64 = 1.96;

/// One point of a sweep: a fixed number of iterations or a NegBin law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepPoint {
    FixedT(u64),
    NegBin(NegBinParams),
}

impl SweepPoint {
    pub fn sweep_name(&self) -> &'static str {
        match self {
            SweepPoint::FixedT(_) => "T",
            SweepPoint::NegBin(_) => "gamma",
        }
    }

    pub fn label(&self) -> String {
        match self {
            SweepPoint::FixedT(t) => t.to_string(),
            SweepPoint::NegBin(nb) => format!("{:?}", nb.gamma()),
        }
    }
}

pub fn sweep_points(rule: &StoppingRule) -> Result<Vec<SweepPoint>> {
    match rule {
        StoppingRule::FixedT { values } => Ok(values.iter().map(|t| SweepPoint::FixedT(*t)).collect()),
        StoppingRule::NegBin { theta, gammas } => gammas
            .iter()
            .map(|g| Ok(SweepPoint::NegBin(NegBinParams::new(*theta, *g)?)))
            .collect(),
    }
}

/// Everything needed to execute runs of one configuration.
pub struct Workbench {
    pub config: RunConfig,
    pub landscape: Landscape,
    pub prior: Prior,
    digest: String,
}

impl Workbench {
    pub fn new(config: RunConfig) -> Result<Self> {
        let landscape = config.landscape.load()?;
        let prior = config.prior.load(landscape.len())?;
        let digest = config.digest();
        Ok(Self {
            config,
            landscape,
            prior,
            digest,
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn strategy(&self, kind: StrategyKind) -> Result<Box<dyn Strategy>> {
        Ok(match kind {
            StrategyKind::Uniform => Box::new(UniformStrategy::new(self.prior.clone())),
            StrategyKind::Gp => {
                let grid = self.landscape.grid();
                let gp = self.config.gp.for_dim(grid.dim())?;
                Box::new(GpStrategy::new(self.prior.clone(), grid.all_features(), gp)?)
            }
        })
    }

    /// Runs repetitions `0..repetitions` on up to `jobs` threads. Results are
    /// returned in repetition order.
    pub fn transcripts(
        &self,
        kind: StrategyKind,
        point: SweepPoint,
        repetitions: u64,
        jobs: usize,
        options: &RunOptions,
    ) -> Result<Vec<Transcript>> {
        let strategy = self.strategy(kind)?;
        let oracle = LandscapeOracle {
            landscape: &self.landscape,
            direction: self.config.direction,
        };
        let bounds = self.config.bounds_for(kind);
        let one = |r: u64| -> Result<Transcript> {
            let mut rng = RunStream::new(self.config.seed, r);
            match point {
                SweepPoint::FixedT(t) => {
                    framework::run_fixed_t(&oracle, strategy.as_ref(), t, &bounds, &self.prior, &mut rng, options)
                }
                SweepPoint::NegBin(nb) => {
                    framework::run_hypo(&oracle, strategy.as_ref(), &nb, &bounds, &self.prior, &mut rng, options)
                }
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..repetitions).into_par_iter().map(one).collect())
    }

    /// True mean score at the released candidate, in the landscape's own
    /// orientation.
    pub fn metric(&self, transcript: &Transcript) -> Result<f64> {
        let best = transcript
            .best
            .as_ref()
            .ok_or_else(|| Error::Numeric("transcript has no trials".into()))?;
        self.landscape.true_mean(best.lambda_index)
    }
}

/// Changes applied to a config before a single-configuration run.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    /// Defaults to the first strategy of the config.
    pub strategy: Option<StrategyKind>,
    /// Replaces the stopping rule by exactly this many iterations.
    pub fixed_t: Option<u64>,
    /// Replaces the stopping rule by NegBin with this `gamma`, keeping the
    /// config's `theta` (1 when the config has a fixed-T rule).
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub repetitions: Option<u64>,
    /// Record per-iteration densities regardless of grid size.
    pub record_densities: bool,
}

/// Runs repetitions of one strategy at one stopping value. The config (after
/// overrides) must name a single stopping value.
pub fn run_repetitions(mut config: RunConfig, overrides: &RunOverrides, jobs: usize) -> Result<Vec<Transcript>> {
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(r) = overrides.repetitions {
        if r == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        config.repetitions = r;
    }
    match (overrides.fixed_t, overrides.gamma) {
        (Some(_), Some(_)) => return Err(Error::Config("give either a fixed T or a gamma, not both".into())),
        (Some(0), None) => return Err(Error::Config("fixed T must be at least 1".into())),
        (Some(t), None) => config.stopping = StoppingRule::FixedT { values: vec![t] },
        (None, Some(g)) => {
            let theta = match &config.stopping {
                StoppingRule::NegBin { theta, .. } => *theta,
                StoppingRule::FixedT { .. } => 1.0,
            };
            config.stopping = StoppingRule::NegBin { theta, gammas: vec![g] };
        }
        (None, None) => {}
    }
    let points = sweep_points(&config.stopping)?;
    let [point] = points[..] else {
        return Err(Error::Config(
            "run needs a single stopping value; pass --fixed-t or --gamma".into(),
        ));
    };
    let kind = overrides.strategy.unwrap_or(config.strategies[0]);
    let repetitions = config.repetitions;
    let bench = Workbench::new(config)?;
    let options = RunOptions {
        record_densities: overrides.record_densities.then_some(true),
        config_digest: Some(bench.digest().to_string()),
    };
    bench.transcripts(kind, point, repetitions, jobs, &options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub ci_halfwidth: f64,
    pub count: u64,
}

/// Mean, standard error and 95% normal CI half-width, summed in order.
pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        std_error,
        ci_halfwidth: Z_95 * std_error,
        count: values.len() as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyCell {
    pub mode: PrivacyMode,
    /// Factor applied to the configured base guarantee.
    pub base_scale: f64,
    pub epsilon: f64,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sweep: String,
    pub x: String,
    pub strategy: String,
    pub summary: Summary,
    pub privacy: Option<PrivacyCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub config_digest: String,
    pub rows: Vec<BenchRow>,
}

fn privacy_cell(config: &RunConfig, kind: StrategyKind, point: SweepPoint) -> Result<Option<PrivacyCell>> {
    let (Some(p), SweepPoint::NegBin(nb)) = (&config.privacy, point) else {
        return Ok(None);
    };
    let bounds = config.bounds_for(kind);
    let cell = match p.mode {
        PrivacyMode::BlackBox => PrivacyCell {
            mode: p.mode,
            base_scale: 1.0,
            epsilon: search_epsilon(&p.base, p.delta, &nb, &bounds)?,
            delta: p.delta,
        },
        PrivacyMode::WhiteBox => {
            let total = p
                .total_epsilon
                .ok_or_else(|| Error::Config("white-box mode needs total_epsilon".into()))?;
            PrivacyCell {
                mode: p.mode,
                base_scale: solve_base_scale(&p.base, total, p.delta, &nb, &bounds)?,
                epsilon: total,
                delta: p.delta,
            }
        }
    };
    Ok(Some(cell))
}

pub fn run_bench(bench: &Workbench, jobs: usize) -> Result<BenchReport> {
    let config = &bench.config;
    let options = RunOptions {
        record_densities: Some(false),
        config_digest: None,
    };
    let mut rows = Vec::new();
    for kind in &config.strategies {
        for point in sweep_points(&config.stopping)? {
            let transcripts = bench.transcripts(*kind, point, config.repetitions, jobs, &options)?;
            let metrics = transcripts
                .iter()
                .map(|t| bench.metric(t))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(BenchRow {
                sweep: point.sweep_name().into(),
                x: point.label(),
                strategy: kind.name().into(),
                summary: summarize(&metrics),
                privacy: privacy_cell(config, *kind, point)?,
            });
        }
    }
    Ok(BenchReport {
        seed: config.seed,
        config_digest: bench.digest().to_string(),
        rows,
    })
}

pub const REPORT_HEADER: &str =
    "sweep,x,strategy,repetitions,mean,std_error,ci_halfwidth,privacy_mode,base_scale,epsilon,delta";
pub const PLOT_HEADER: &str = "sweep,x,strategy,mean,ci_low,ci_high";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl BenchReport {
    fn write_preamble<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        writeln!(out, "# config_digest={}", self.config_digest)?;
        Ok(())
    }

    pub fn write_report_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_preamble(&mut out)?;
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            let s = &r.summary;
            let p = r.privacy.as_ref();
            writeln!(
                out,
                "{},{},{},{},{:?},{:?},{:?},{},{},{},{}",
                r.sweep,
                r.x,
                r.strategy,
                s.count,
                s.mean,
                s.std_error,
                s.ci_halfwidth,
                p.map_or("none", |p| p.mode.label()),
                opt(p.map(|p| p.base_scale)),
                opt(p.map(|p| p.epsilon)),
                opt(p.and_then(|p| p.delta)),
            )?;
        }
        Ok(())
    }

    pub fn write_plot_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_preamble(&mut out)?;
        writeln!(out, "{PLOT_HEADER}")?;
        for r in &self.rows {
            let s = &r.summary;
            writeln!(
                out,
                "{},{},{},{:?},{:?},{:?}",
                r.sweep,
                r.x,
                r.strategy,
                s.mean,
                s.mean - s.ci_halfwidth,
                s.mean + s.ci_halfwidth
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn config(extra: &str) -> RunConfig {
        let text = format!(
            "seed = 3\nrepetitions = 40\n[landscape]\ngenerator = needle\naxis = x, linear, 0, 1, 8\n\
             background = 0.5\nvalue = 1.0\nfraction = 0.125\nnoise = 0.05\n[search]\nstrategies = uniform, gp\n\
             upper = 2\nlower = 0.5\n{extra}"
        );
        RunConfig::parse(&text, Path::new(".")).unwrap()
    }

    fn csv(report: &BenchReport) -> (String, String) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        report.write_report_csv(&mut a).unwrap();
        report.write_plot_csv(&mut b).unwrap();
        (String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap())
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let se = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((s.std_error - se).abs() < 1e-15);
        assert!((s.ci_halfwidth - 1.96 * se).abs() < 1e-15);
        assert_eq!(summarize(&[7.0]).std_error, 0.0);
    }

    #[test]
    fn fixed_t_sweep_rows_and_headers() {
        let bench = Workbench::new(config("[stopping]\nfixed_t = 1, 3\n")).unwrap();
        let report = run_bench(&bench, 2).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.privacy.is_none() && r.summary.count == 40));
        let (rep, plot) = csv(&report);
        assert_eq!(rep.lines().nth(2).unwrap(), REPORT_HEADER);
        assert_eq!(plot.lines().nth(2).unwrap(), PLOT_HEADER);
        assert!(rep.lines().nth(3).unwrap().starts_with("T,1,uniform,40,"));
        // T = 1 is the same single uniform draw for both strategies
        assert_eq!(report.rows[0].summary, report.rows[2].summary);
    }

    #[test]
    fn output_does_not_depend_on_jobs() {
        let bench = Workbench::new(config("[stopping]\ntheta = 1\ngamma = 0.2, 0.5\n")).unwrap();
        assert_eq!(csv(&run_bench(&bench, 1).unwrap()), csv(&run_bench(&bench, 3).unwrap()));
    }

    #[test]
    fn privacy_columns() {
        let black = "[stopping]\ntheta = 1\ngamma = 0.1\n[privacy]\nmode = black-box\nbase_pure_epsilon = 0.5\n";
        let bench = Workbench::new(config(black)).unwrap();
        let report = run_bench(&bench, 1).unwrap();
        let uni = report.rows[0].privacy.as_ref().unwrap();
        let gp = report.rows[1].privacy.as_ref().unwrap();
        assert!((uni.epsilon - 1.5).abs() < 1e-12);
        assert!((gp.epsilon - 3.0 * (0.5 + 4f64.ln())).abs() < 1e-12);

        let white = "[stopping]\ntheta = 1\ngamma = 0.1\n[privacy]\nmode = white-box\nbase_pure_epsilon = 1\ntotal_epsilon = 9\n";
        let bench = Workbench::new(config(white)).unwrap();
        let report = run_bench(&bench, 1).unwrap();
        let uni = report.rows[0].privacy.as_ref().unwrap();
        let gp = report.rows[1].privacy.as_ref().unwrap();
        assert_eq!(uni.epsilon, 9.0);
        assert!((uni.base_scale - 3.0).abs() < 1e-12);
        assert!((gp.base_scale - (3.0 - 4f64.ln())).abs() < 1e-12);
        let (rep, _) = csv(&report);
        assert!(rep.contains(",white-box,"));
    }

    #[test]
    fn uniform_fixed_t_one_matches_prior_mean() {
        let mut c = config("[stopping]\nfixed_t = 1\n");
        c.repetitions = 4000;
        c.strategies = vec![StrategyKind::Uniform];
        let bench = Workbench::new(c).unwrap();
        let report = run_bench(&bench, 1).unwrap();
        let s = &report.rows[0].summary;
        let expected = bench.landscape.mean().iter().sum::<f64>() / 8.0;
        let sd = {
            let m = bench.landscape.mean();
            (m.iter().map(|v| (v - expected).powi(2)).sum::<f64>() / 8.0).sqrt()
        };
        assert!((s.mean - expected).abs() < 3.0 * sd / (4000f64).sqrt());
    }
}
