//! Command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 infeasible
//! bounds or budget, 4 numerical failure, 5 audit violation.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::accountant::{
    self, audit_bound, pure_dp_bound, AdaptivityBounds, AuditReport, BaseGuarantee, FiniteMechanism, RdpCurve,
    SaturatingAudit, UniformAudit,
};
use crate::bench::{self, RunOverrides, Workbench};
use crate::config::{RunConfig, StrategyKind};
use crate::distributions::NegBinParams;
use crate::error::{Error, Result};
use crate::landscape::{self, Axis, Generator, GridSpec};
use crate::projection::{self, DiscreteDensity, Prior};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_AUDIT_FAILED: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Numeric(_) | Error::Guard(_) | Error::Oracle { .. } => EXIT_NUMERIC,
        Error::Domain(_) | Error::Parse { .. } | Error::Config(_) | Error::Io(_) | Error::Json(_) => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dphypo",
    version,
    about = "Differentially private adaptive hyperparameter search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Privacy of a full search, or the per-run budget that meets a total.
    Account(AccountArgs),
    /// Project a density CSV into the band [c, C] around a prior.
    Project(ProjectArgs),
    /// Run searches from a config file and write transcripts as JSON.
    Run(RunArgs),
    /// Run a benchmark sweep and write report and plot CSVs.
    Bench(BenchArgs),
    /// Check the RDP bound against exact enumeration on a finite mechanism.
    Audit(AuditArgs),
    /// Generate a synthetic landscape CSV.
    Landscape(LandscapeArgs),
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Upper density ratio C.
    #[arg(long = "C", visible_alias = "upper", default_value_t = 1.0)]
    pub upper: f64,
    /// Lower density ratio c.
    #[arg(long = "c", visible_alias = "lower", default_value_t = 1.0)]
    pub lower: f64,
}

impl BoundsArgs {
    fn bounds(&self) -> Result<AdaptivityBounds> {
        if self.lower > self.upper {
            return Err(Error::Infeasible(format!(
                "lower bound {} exceeds upper bound {}",
                self.lower, self.upper
            )));
        }
        let b = AdaptivityBounds::new(self.upper, self.lower)?;
        if b.lower() > 1.0 || b.upper() < 1.0 {
            return Err(Error::Infeasible(format!(
                "bounds [{}, {}] must contain 1",
                b.lower(),
                b.upper()
            )));
        }
        Ok(b)
    }
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    /// NegBin shape; pure-DP accounting needs only this.
    #[arg(long)]
    pub theta: Option<f64>,
    /// NegBin success probability.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    /// Pure-DP epsilon of one base run.
    #[arg(long, conflicts_with = "rdp_curve", required_unless_present = "rdp_curve")]
    pub pure_eps: Option<f64>,
    /// JSON RDP curve of one base run.
    #[arg(long)]
    pub rdp_curve: Option<PathBuf>,
    /// Target delta for RDP curves.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Solve for the base scale that meets this total epsilon.
    #[arg(long)]
    pub total_eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Density CSV (`point_id,weight,value`).
    #[arg(long)]
    pub input: PathBuf,
    /// Prior density CSV; defaults to uniform over the input's weights.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    /// Use the KL-penalised projection with this weight.
    #[arg(long)]
    pub kl_nu: Option<f64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct JobsArg {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, env = "DPHYPO_JOBS")]
    pub jobs: Option<usize>,
}

impl JobsArg {
    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Strategy to run; defaults to the first one in the config.
    #[arg(long)]
    pub strategy: Option<StrategyChoice>,
    /// Run exactly this many iterations (no privacy accounting).
    #[arg(long, conflicts_with = "gamma")]
    pub fixed_t: Option<u64>,
    /// NegBin success probability, overriding the config.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repetitions: Option<u64>,
    /// Record per-iteration densities regardless of grid size.
    #[arg(long)]
    pub record_densities: bool,
    #[command(flatten)]
    pub jobs: JobsArg,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyChoice {
    Uniform,
    Gp,
}

impl From<StrategyChoice> for StrategyKind {
    fn from(c: StrategyChoice) -> Self {
        match c {
            StrategyChoice::Uniform => StrategyKind::Uniform,
            StrategyChoice::Gp => StrategyKind::Gp,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub jobs: JobsArg,
    /// Report CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plot-data CSV path.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AuditChoice {
    /// Non-adaptive uniform search.
    Uniform,
    /// Puts all allowed mass on the best candidate seen so far.
    Saturating,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// FiniteMechanism JSON.
    #[arg(long)]
    pub mechanism: PathBuf,
    #[arg(long, value_enum, default_value = "uniform")]
    pub strategy: AuditChoice,
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    /// Orders to audit.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    pub alphas: Vec<f64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GeneratorChoice {
    Needle,
    GaussianBumps,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[arg(long, value_enum)]
    pub generator: GeneratorChoice,
    /// Grid preset; alternative to --axis.
    #[arg(long, conflicts_with = "axis")]
    pub grid: Option<GridPreset>,
    /// Axis as `name,scale,min,max,count`; repeat per dimension.
    #[arg(long)]
    pub axis: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub background: f64,
    /// Needle value.
    #[arg(long)]
    pub value: Option<f64>,
    /// Needle fraction of the grid.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Number of Gaussian bumps.
    #[arg(long)]
    pub bumps: Option<usize>,
    /// Bump amplitude range `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    pub amplitude: Vec<f64>,
    /// Bump width range `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    pub width: Vec<f64>,
    /// Score noise standard deviation at every point.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GridPreset {
    /// 16 log-spaced learning rates by 20 linear clipping norms.
    #[value(name = "lr-clip-320")]
    LrClip320,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Runs a parsed command. `Ok(code)` carries non-error exit statuses.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Account(a) => account(&a).map(|_| 0),
        Command::Project(a) => project(&a).map(|_| 0),
        Command::Run(a) => run(&a).map(|_| 0),
        Command::Bench(a) => bench_cmd(&a).map(|_| 0),
        Command::Audit(a) => audit(&a),
        Command::Landscape(a) => landscape_cmd(&a).map(|_| 0),
    }
}

#[derive(Debug, Serialize)]
pub struct AccountReport {
    pub theta: Option<f64>,
    pub gamma: Option<f64>,
    pub upper: f64,
    pub lower: f64,
    pub delta: Option<f64>,
    /// End-to-end epsilon of the search (or of one run when no stopping law
    /// is given).
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_epsilon: Option<f64>,
    /// Factor on the base guarantee meeting `total_epsilon`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_scale: Option<f64>,
}

fn account(a: &AccountArgs) -> Result<()> {
    let bounds = a.bounds.bounds()?;
    let base = match (&a.pure_eps, &a.rdp_curve) {
        (Some(e), None) => BaseGuarantee::Pure { epsilon: *e },
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            BaseGuarantee::Rdp {
                curve: serde_json::from_str::<RdpCurve>(&text)?,
            }
        }
        _ => return Err(Error::Config("give exactly one of --pure-eps and --rdp-curve".into())),
    };
    let negbin = match (a.theta, a.gamma) {
        (Some(t), Some(g)) => Some(NegBinParams::new(t, g)?),
        _ => None,
    };
    let epsilon = match (&base, &negbin) {
        (_, Some(nb)) => accountant::search_epsilon(&base, a.delta, nb, &bounds)?,
        (BaseGuarantee::Pure { epsilon }, None) => match a.theta {
            Some(theta) => {
                NegBinParams::new(theta, 0.5)?;
                pure_dp_bound(*epsilon, theta, &bounds)
            }
            None => *epsilon,
        },
        (BaseGuarantee::Rdp { curve }, None) => {
            if a.theta.is_some() || a.gamma.is_some() {
                return Err(Error::Config(
                    "RDP accounting of a search needs both --theta and --gamma".into(),
                ));
            }
            let delta = a
                .delta
                .ok_or_else(|| Error::Config("--rdp-curve needs --delta".into()))?;
            accountant::rdp_to_dp(curve, delta)?
        }
    };
    let base_scale = match a.total_eps {
        None => None,
        Some(total) => {
            let nb = negbin
                .as_ref()
                .ok_or_else(|| Error::Config("--total-eps needs --theta and --gamma".into()))?;
            Some(accountant::solve_base_scale(&base, total, a.delta, nb, &bounds)?)
        }
    };
    let report = AccountReport {
        theta: a.theta,
        gamma: a.gamma,
        upper: bounds.upper(),
        lower: bounds.lower(),
        delta: a.delta,
        epsilon,
        total_epsilon: a.total_eps,
        base_scale,
    };
    emit(None, &json(&report)?)
}

fn read_density(path: &Path) -> Result<DiscreteDensity> {
    DiscreteDensity::read_csv(BufReader::new(fs::File::open(path)?))
}

fn project(a: &ProjectArgs) -> Result<()> {
    let input = read_density(&a.input)?;
    let prior = match &a.prior {
        Some(p) => Prior::new(read_density(p)?)?,
        None => Prior::uniform(input.weights().to_vec())?,
    };
    let bounds = a.bounds.bounds()?;
    let out = match a.kl_nu {
        Some(nu) => projection::project_kl_penalized(&input, &bounds, &prior, nu)?,
        None => projection::project_l2(&input, &bounds, &prior)?,
    };
    let mut buf = Vec::new();
    out.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)
}

fn run(a: &RunArgs) -> Result<()> {
    let overrides = RunOverrides {
        strategy: a.strategy.map(StrategyKind::from),
        fixed_t: a.fixed_t,
        gamma: a.gamma,
        seed: a.seed,
        repetitions: a.repetitions,
        record_densities: a.record_densities,
    };
    let transcripts = bench::run_repetitions(RunConfig::from_path(&a.config)?, &overrides, a.jobs.jobs())?;
    let bytes = if transcripts.len() == 1 {
        json(&transcripts[0])?
    } else {
        json(&transcripts)?
    };
    emit(a.out.as_deref(), &bytes)
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let bench = Workbench::new(RunConfig::from_path(&a.config)?)?;
    let report = bench::run_bench(&bench, a.jobs.jobs())?;
    let mut buf = Vec::new();
    report.write_report_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)?;
    if let Some(plot) = &a.plot {
        let mut buf = Vec::new();
        report.write_plot_csv(&mut buf)?;
        fs::write(plot, buf)?;
    }
    Ok(())
}

fn audit(a: &AuditArgs) -> Result<i32> {
    let mech: FiniteMechanism = serde_json::from_str(&fs::read_to_string(&a.mechanism)?)?;
    let negbin = NegBinParams::new(a.theta, a.gamma)?;
    let bounds = a.bounds.bounds()?;
    let report: AuditReport = match a.strategy {
        AuditChoice::Uniform => audit_bound(&mech, &UniformAudit, &negbin, &bounds, &a.alphas)?,
        AuditChoice::Saturating => audit_bound(&mech, &SaturatingAudit, &negbin, &bounds, &a.alphas)?,
    };
    emit(a.out.as_deref(), &json(&report)?)?;
    if report.passed {
        Ok(0)
    } else {
        for r in report.rows.iter().filter(|r| !r.pass) {
            eprintln!(
                "audit violation at alpha {}: realized {} > bound {}",
                r.alpha, r.realized, r.bound
            );
        }
        Ok(EXIT_AUDIT_FAILED)
    }
}

fn landscape_cmd(a: &LandscapeArgs) -> Result<()> {
    let grid = match (&a.grid, a.axis.is_empty()) {
        (Some(GridPreset::LrClip320), _) => GridSpec::lr_clip_320(),
        (None, false) => {
            let axes = a
                .axis
                .iter()
                .map(|spec| {
                    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
                    let [name, scale, min, max, count] = parts[..] else {
                        return Err(Error::Config(format!("axis {spec:?} needs name,scale,min,max,count")));
                    };
                    let num = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| Error::Config(format!("not a number: {s:?}")))
                    };
                    let count = count
                        .parse()
                        .map_err(|_| Error::Config(format!("not a count: {count:?}")))?;
                    Axis::new(name, scale.parse()?, num(min)?, num(max)?, count)
                })
                .collect::<Result<Vec<_>>>()?;
            GridSpec::new(axes)?
        }
        (None, true) => return Err(Error::Config("give --grid or at least one --axis".into())),
    };
    let range = |v: &[f64], what: &str| -> Result<(f64, f64)> {
        match v {
            [x] => Ok((*x, *x)),
            [lo, hi] => Ok((*lo, *hi)),
            _ => Err(Error::Config(format!("--{what} takes one or two numbers"))),
        }
    };
    let missing = |what: &str| Error::Config(format!("--{what} is required for this generator"));
    let generator = match a.generator {
        GeneratorChoice::Needle => Generator::Needle {
            background: a.background,
            value: a.value.ok_or_else(|| missing("value"))?,
            fraction: a.fraction.ok_or_else(|| missing("fraction"))?,
            noise: a.noise,
        },
        GeneratorChoice::GaussianBumps => Generator::GaussianBumps {
            bumps: a.bumps.ok_or_else(|| missing("bumps"))?,
            amplitude: range(&a.amplitude, "amplitude")?,
            width: range(&a.width, "width")?,
            background: a.background,
            noise: a.noise,
        },
    };
    let l = landscape::synth_landscape(&grid, &generator, a.seed)?;
    let mut buf = Vec::new();
    l.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &buf)
}
