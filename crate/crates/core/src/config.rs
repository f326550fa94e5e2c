//! Run configuration files.
//!
//! The format is line-based `key = value` with `[section]` headers and `#`
//! comments. Keys are unique within a section except `axis`, which repeats
//! once per grid dimension. Unknown keys are rejected.
//!
//! ```text
//! seed = 7
//! repetitions = 200
//! direction = max
//!
//! [landscape]
//! generator = needle          # or: file = path/to/landscape.csv
//! grid = lr-clip-320          # or one `axis = name,scale,min,max,count` per dimension
//! synth_seed = 1
//! background = 0.9
//! value = 0.95
//! fraction = 0.003125
//! noise = 0.1
//!
//! [search]
//! strategies = uniform, gp
//! upper = 2
//! lower = 0.75
//! prior = uniform             # or a density CSV path
//!
//! [stopping]
//! fixed_t = 16, 32, 64        # or: theta = 1 and gamma = 0.001, 0.002
//!
//! [gp]
//! lengthscale = 0.1
//! signal_variance = 0.01
//! noise_variance = 0.01
//! tau = 0.1
//! beta = 1
//!
//! [privacy]
//! mode = white-box            # or black-box
//! base_pure_epsilon = 1       # or base_rdp_curve = curve.json
//! delta = 1e-5
//! total_epsilon = 15          # white-box only
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accountant::{AdaptivityBounds, BaseGuarantee, RdpCurve};
use crate::error::{Error, Result};
use crate::landscape::{self, Axis, Direction, Generator, GridSpec, Landscape};
use crate::projection::{DiscreteDensity, Prior};
use crate::surrogate::GpConfig;

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Parsed but untyped config file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, Vec<Entry>>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = ConfigFile::default();
        let mut section = String::new();
        file.sections.entry(section.clone()).or_default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split_once('#').map_or(raw, |(c, _)| c).trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(format!("line {line}"), "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::parse(format!("line {line}"), "empty section name"));
                }
                if file.sections.contains_key(name) && name != section {
                    return Err(Error::parse(
                        format!("line {line}"),
                        format!("section [{name}] appears twice"),
                    ));
                }
                section = name.to_string();
                file.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::parse(format!("line {line}"), format!("expected key = value, got {content:?}"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(format!("line {line}"), "empty key"));
            }
            let entries = file
                .sections
                .get_mut(&section)
                .expect("section exists")
                .entry(key.into())
                .or_default();
            if !entries.is_empty() && key != "axis" {
                return Err(Error::parse(
                    format!("line {line}"),
                    format!("duplicate key {key:?} (first set on line {})", entries[0].line),
                ));
            }
            entries.push(Entry {
                value: value.trim().to_string(),
                line,
                used: false,
            });
        }
        Ok(file)
    }

    fn entries(&mut self, section: &str, key: &str) -> Option<&mut Vec<Entry>> {
        self.sections.get_mut(section).and_then(|s| s.get_mut(key))
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.sections.get(section).is_some_and(|s| s.contains_key(key))
    }

    /// Raw value and line number, marking the key as consumed.
    pub fn raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries(section, key).map(|e| {
            e[0].used = true;
            (e[0].value.clone(), e[0].line)
        })
    }

    pub fn raw_all(&mut self, section: &str, key: &str) -> Vec<(String, usize)> {
        self.entries(section, key)
            .map(|es| {
                es.iter_mut()
                    .map(|e| {
                        e.used = true;
                        (e.value.clone(), e.line)
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                Error::parse(
                    format!("line {line}"),
                    format!("invalid value {v:?} for {}", qualified(section, key)),
                )
            }),
        }
    }

    pub fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T> {
        self.get(section, key)?
            .ok_or_else(|| Error::Config(format!("missing required key {}", qualified(section, key))))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|item| {
                    item.trim().parse().map_err(|_| {
                        Error::parse(
                            format!("line {line}"),
                            format!("invalid item {:?} in {}", item.trim(), qualified(section, key)),
                        )
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.sections.get(section)?.get(key).map(|e| e[0].line)
    }

    /// Errors on the first key that nothing consumed.
    pub fn finish(&self) -> Result<()> {
        let mut unused: Vec<(usize, String)> = self
            .sections
            .iter()
            .flat_map(|(s, keys)| {
                keys.iter()
                    .flat_map(move |(k, es)| es.iter().filter(|e| !e.used).map(move |e| (e.line, qualified(s, k))))
            })
            .collect();
        unused.sort();
        match unused.first() {
            Some((line, key)) => Err(Error::parse(format!("line {line}"), format!("unknown key {key}"))),
            None => Ok(()),
        }
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("[{section}] {key}")
    }
}

fn at_line(file: &ConfigFile, section: &str, key: &str, e: Error) -> Error {
    match file.line_of(section, key) {
        Some(line) => Error::parse(format!("line {line}"), e.to_string()),
        None => e,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LandscapeSource {
    File {
        path: PathBuf,
    },
    Synth {
        grid: GridSpec,
        generator: Generator,
        seed: u64,
    },
}

impl LandscapeSource {
    pub fn load(&self) -> Result<Landscape> {
        match self {
            LandscapeSource::File { path } => Landscape::load(path),
            LandscapeSource::Synth { grid, generator, seed } => landscape::synth_landscape(grid, generator, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSource {
    Uniform,
    File { path: PathBuf },
}

impl PriorSource {
    /// Prior over `n` grid cells of unit weight.
    pub fn load(&self, n: usize) -> Result<Prior> {
        match self {
            PriorSource::Uniform => Prior::uniform(vec![1.0; n]),
            PriorSource::File { path } => {
                let file = std::fs::File::open(path)?;
                let density = DiscreteDensity::read_csv(std::io::BufReader::new(file))?;
                if density.len() != n {
                    return Err(Error::Config(format!(
                        "prior has {} points but the landscape has {n}",
                        density.len()
                    )));
                }
                Prior::new(density)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Uniform,
    Gp,
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(StrategyKind::Uniform),
            "gp" => Ok(StrategyKind::Gp),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Gp => "gp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StoppingRule {
    NegBin { theta: f64, gammas: Vec<f64> },
    FixedT { values: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrivacyMode {
    /// Base budget shrunk so every strategy reaches the same total.
    WhiteBox,
    /// Base budget fixed; adaptivity adds to the total.
    BlackBox,
}

impl FromStr for PrivacyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white-box" => Ok(PrivacyMode::WhiteBox),
            "black-box" => Ok(PrivacyMode::BlackBox),
            other => Err(Error::Config(format!(
                "privacy mode must be white-box or black-box, got {other:?}"
            ))),
        }
    }
}

impl PrivacyMode {
    pub fn label(self) -> &'static str {
        match self {
            PrivacyMode::WhiteBox => "white-box",
            PrivacyMode::BlackBox => "black-box",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyConfig {
    pub mode: PrivacyMode,
    pub base: BaseGuarantee,
    pub delta: Option<f64>,
    pub total_epsilon: Option<f64>,
}

/// GP settings before the lengthscale is matched to the grid dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSettings {
    /// One value for every dimension, or one per dimension.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub jitter: f64,
    pub prior_mean: f64,
    pub center_observations: bool,
    pub tau: f64,
    pub beta: f64,
}

impl Default for GpSettings {
    fn default() -> Self {
        let base = GpConfig::new(vec![0.1], 0.01, 0.01);
        Self {
            lengthscales: base.lengthscales,
            signal_variance: base.signal_variance,
            noise_variance: base.noise_variance,
            jitter: base.jitter,
            prior_mean: base.prior_mean,
            center_observations: base.center_observations,
            tau: base.tau,
            beta: base.beta,
        }
    }
}

impl GpSettings {
    pub fn for_dim(&self, dim: usize) -> Result<GpConfig> {
        let lengthscales = match self.lengthscales.len() {
            1 => vec![self.lengthscales[0]; dim],
            n if n == dim => self.lengthscales.clone(),
            n => return Err(Error::Config(format!("{n} lengthscales for a {dim}-dimensional grid"))),
        };
        let config = GpConfig {
            lengthscales,
            signal_variance: self.signal_variance,
            noise_variance: self.noise_variance,
            jitter: self.jitter,
            prior_mean: self.prior_mean,
            center_observations: self.center_observations,
            tau: self.tau,
            beta: self.beta,
        };
        config.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub repetitions: u64,
    pub direction: Direction,
    pub landscape: LandscapeSource,
    pub strategies: Vec<StrategyKind>,
    /// Bounds of adaptive strategies; the uniform strategy always runs with
    /// `C = c = 1`.
    pub bounds: AdaptivityBounds,
    pub prior: PriorSource,
    pub stopping: StoppingRule,
    pub gp: GpSettings,
    pub privacy: Option<PrivacyConfig>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut f = ConfigFile::parse(text)?;
        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let seed = f.get("", "seed")?.unwrap_or(0);
        let repetitions: u64 = f.get("", "repetitions")?.unwrap_or(1);
        if repetitions == 0 {
            return Err(at_line(
                &f,
                "",
                "repetitions",
                Error::Config("repetitions must be at least 1".into()),
            ));
        }
        let direction = match f.raw("", "direction") {
            None => Direction::Max,
            Some((v, line)) => v
                .parse()
                .map_err(|e: Error| Error::parse(format!("line {line}"), e.to_string()))?,
        };

        let landscape = match (f.raw("landscape", "file"), f.raw("landscape", "generator")) {
            (Some(_), Some(_)) => {
                return Err(at_line(
                    &f,
                    "landscape",
                    "generator",
                    Error::Config("set either file or generator, not both".into()),
                ))
            }
            (Some((path, _)), None) => LandscapeSource::File { path: resolve(path) },
            (None, Some((kind, line))) => {
                let grid = parse_grid(&mut f)?;
                let generator = match kind.as_str() {
                    "needle" => Generator::Needle {
                        background: f.require("landscape", "background")?,
                        value: f.require("landscape", "value")?,
                        fraction: f.require("landscape", "fraction")?,
                        noise: f.require("landscape", "noise")?,
                    },
                    "gaussian-bumps" => Generator::GaussianBumps {
                        bumps: f.require("landscape", "bumps")?,
                        amplitude: pair(&mut f, "landscape", "amplitude")?,
                        width: pair(&mut f, "landscape", "width")?,
                        background: f.get("landscape", "background")?.unwrap_or(0.0),
                        noise: f.require("landscape", "noise")?,
                    },
                    other => {
                        return Err(Error::parse(
                            format!("line {line}"),
                            format!("unknown generator {other:?}"),
                        ))
                    }
                };
                generator
                    .validate()
                    .map_err(|e| Error::parse(format!("line {line}"), e.to_string()))?;
                LandscapeSource::Synth {
                    grid,
                    generator,
                    seed: f.get("landscape", "synth_seed")?.unwrap_or(0),
                }
            }
            (None, None) => return Err(Error::Config("[landscape] needs file or generator".into())),
        };

        let strategies: Vec<StrategyKind> = f
            .list("search", "strategies")?
            .unwrap_or_else(|| vec![StrategyKind::Uniform]);
        if strategies.is_empty() {
            return Err(Error::Config("no strategies given".into()));
        }
        let upper: f64 = f.get("search", "upper")?.unwrap_or(1.0);
        let lower: f64 = f.get("search", "lower")?.unwrap_or(1.0);
        let bounds = AdaptivityBounds::new(upper, lower)
            .map_err(|e| at_line(&f, "search", "upper", Error::Config(e.to_string())))?;
        if lower > 1.0 || upper < 1.0 {
            return Err(at_line(
                &f,
                "search",
                "lower",
                Error::Infeasible(format!("bounds [{lower}, {upper}] must contain 1")),
            ));
        }
        let prior = match f.raw("search", "prior") {
            None => PriorSource::Uniform,
            Some((v, _)) if v == "uniform" => PriorSource::Uniform,
            Some((v, _)) => PriorSource::File { path: resolve(v) },
        };

        let stopping = match (f.has("stopping", "fixed_t"), f.has("stopping", "gamma")) {
            (true, true) => {
                return Err(at_line(
                    &f,
                    "stopping",
                    "gamma",
                    Error::Config("set either fixed_t or gamma, not both".into()),
                ))
            }
            (true, false) => {
                let values: Vec<u64> = f.list("stopping", "fixed_t")?.expect("present");
                if values.is_empty() || values.contains(&0) {
                    return Err(at_line(
                        &f,
                        "stopping",
                        "fixed_t",
                        Error::Config("fixed T values must be >= 1".into()),
                    ));
                }
                StoppingRule::FixedT { values }
            }
            (false, true) => {
                let theta: f64 = f.get("stopping", "theta")?.unwrap_or(1.0);
                let gammas: Vec<f64> = f.list("stopping", "gamma")?.expect("present");
                for g in &gammas {
                    crate::distributions::NegBinParams::new(theta, *g)
                        .map_err(|e| at_line(&f, "stopping", "gamma", Error::Config(e.to_string())))?;
                }
                StoppingRule::NegBin { theta, gammas }
            }
            (false, false) => return Err(Error::Config("[stopping] needs fixed_t or gamma".into())),
        };

        let defaults = GpSettings::default();
        let gp = GpSettings {
            lengthscales: f.list("gp", "lengthscale")?.unwrap_or(defaults.lengthscales),
            signal_variance: f.get("gp", "signal_variance")?.unwrap_or(defaults.signal_variance),
            noise_variance: f.get("gp", "noise_variance")?.unwrap_or(defaults.noise_variance),
            jitter: f.get("gp", "jitter")?.unwrap_or(defaults.jitter),
            prior_mean: f.get("gp", "prior_mean")?.unwrap_or(defaults.prior_mean),
            center_observations: f.get("gp", "center")?.unwrap_or(defaults.center_observations),
            tau: f.get("gp", "tau")?.unwrap_or(defaults.tau),
            beta: f.get("gp", "beta")?.unwrap_or(defaults.beta),
        };
        gp.for_dim(gp.lengthscales.len())
            .map_err(|e| at_line(&f, "gp", "lengthscale", e))?;

        let privacy = if f.sections.contains_key("privacy") {
            let mode: PrivacyMode = f.get("privacy", "mode")?.unwrap_or(PrivacyMode::BlackBox);
            let base = match (
                f.raw("privacy", "base_pure_epsilon"),
                f.raw("privacy", "base_rdp_curve"),
            ) {
                (Some((v, line)), None) => BaseGuarantee::Pure {
                    epsilon: v
                        .parse()
                        .map_err(|_| Error::parse(format!("line {line}"), format!("invalid epsilon {v:?}")))?,
                },
                (None, Some((path, line))) => {
                    let text = std::fs::read_to_string(resolve(path))
                        .map_err(|e| Error::parse(format!("line {line}"), e.to_string()))?;
                    let curve: RdpCurve = serde_json::from_str(&text)
                        .map_err(|e| Error::parse(format!("line {line}"), format!("bad RDP curve: {e}")))?;
                    BaseGuarantee::Rdp { curve }
                }
                _ => {
                    return Err(Error::Config(
                        "[privacy] needs exactly one of base_pure_epsilon and base_rdp_curve".into(),
                    ))
                }
            };
            let delta: Option<f64> = f.get("privacy", "delta")?;
            let total_epsilon: Option<f64> = f.get("privacy", "total_epsilon")?;
            if mode == PrivacyMode::WhiteBox && total_epsilon.is_none() {
                return Err(Error::Config("white-box privacy needs total_epsilon".into()));
            }
            if matches!(base, BaseGuarantee::Rdp { .. }) && delta.is_none() {
                return Err(Error::Config("an RDP base curve needs delta".into()));
            }
            Some(PrivacyConfig {
                mode,
                base,
                delta,
                total_epsilon,
            })
        } else {
            None
        };

        f.finish()?;
        Ok(RunConfig {
            seed,
            repetitions,
            direction,
            landscape,
            strategies,
            bounds,
            prior,
            stopping,
            gp,
            privacy,
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Bounds a given strategy runs under.
    pub fn bounds_for(&self, kind: StrategyKind) -> AdaptivityBounds {
        match kind {
            StrategyKind::Uniform => AdaptivityBounds::non_adaptive(),
            StrategyKind::Gp => self.bounds,
        }
    }
}

fn pair(f: &mut ConfigFile, section: &str, key: &str) -> Result<(f64, f64)> {
    let values: Vec<f64> = f
        .list(section, key)?
        .ok_or_else(|| Error::Config(format!("missing required key {}", qualified(section, key))))?;
    match values[..] {
        [a] => Ok((a, a)),
        [a, b] => Ok((a, b)),
        _ => Err(at_line(
            f,
            section,
            key,
            Error::Config(format!("{key} takes one or two numbers")),
        )),
    }
}

fn parse_grid(f: &mut ConfigFile) -> Result<GridSpec> {
    let axes = f.raw_all("landscape", "axis");
    match (f.raw("landscape", "grid"), axes.is_empty()) {
        (Some((name, line)), true) => match name.as_str() {
            "lr-clip-320" => Ok(GridSpec::lr_clip_320()),
            other => Err(Error::parse(
                format!("line {line}"),
                format!("unknown grid preset {other:?}"),
            )),
        },
        (None, false) => {
            let mut parsed = Vec::new();
            for (value, line) in axes {
                let err = |m: String| Error::parse(format!("line {line}"), m);
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                let [name, scale, min, max, count] = parts[..] else {
                    return Err(err("axis needs name,scale,min,max,count".into()));
                };
                let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("not a number: {s:?}")));
                let scale = scale.parse().map_err(|e: Error| err(e.to_string()))?;
                let count = count
                    .parse::<usize>()
                    .map_err(|_| err(format!("not a count: {count:?}")))?;
                parsed.push(Axis::new(name, scale, num(min)?, num(max)?, count).map_err(|e| err(e.to_string()))?);
            }
            GridSpec::new(parsed).map_err(|e| Error::Config(e.to_string()))
        }
        (Some(_), false) => Err(Error::Config("set either grid or axis lines, not both".into())),
        (None, true) => Err(Error::Config("[landscape] generator needs grid or axis lines".into())),
    }
}
