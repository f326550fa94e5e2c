//! Gridded score landscapes: CSV storage, noisy score oracles and synthetic
//! generators.
//!
//! Grid points are enumerated row-major in axis declaration order: the last
//! axis varies fastest.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::Oracle;

const FORMAT_TAG: &str = "dphypo-landscape v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisScale {
    Linear,
    Log,
}

impl fmt::Display for AxisScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AxisScale::Linear => "linear",
            AxisScale::Log => "log",
        })
    }
}

impl FromStr for AxisScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(AxisScale::Linear),
            "log" => Ok(AxisScale::Log),
            other => Err(Error::Domain(format!("unknown axis scale {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub scale: AxisScale,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(name: impl Into<String>, scale: AxisScale, min: f64, max: f64, count: usize) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains([',', '=', '\n']) {
            return Err(Error::Domain(format!("invalid axis name {name:?}")));
        }
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::Domain(format!(
                "axis {name}: need min < max, got [{min}, {max}]"
            )));
        }
        if count == 0 {
            return Err(Error::Domain(format!("axis {name}: count must be at least 1")));
        }
        if scale == AxisScale::Log && min <= 0.0 {
            return Err(Error::Domain(format!("axis {name}: log scale needs min > 0")));
        }
        Ok(Self {
            name,
            scale,
            min,
            max,
            count,
        })
    }

    /// Position of step `i` in `[0, 1]`.
    fn fraction(&self, i: usize) -> f64 {
        if self.count == 1 {
            0.0
        } else {
            i as f64 / (self.count - 1) as f64
        }
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        let t = self.fraction(i);
        match self.scale {
            AxisScale::Linear => self.min + (self.max - self.min) * t,
            AxisScale::Log => (self.min.ln() + (self.max.ln() - self.min.ln()) * t).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Domain("a grid needs at least one axis".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Domain(format!("duplicate axis name {}", a.name)));
            }
        }
        Ok(Self { axes })
    }

    /// Learning rate on `[1e-4, 10]` in 16 log steps by clipping norm on
    /// `[0.3, 6]` in 20 linear steps: 320 points.
    pub fn lr_clip_320() -> Self {
        Self::new(vec![
            Axis::new("lr", AxisScale::Log, 1e-4, 10.0, 16).expect("valid axis"),
            Axis::new("clip", AxisScale::Linear, 0.3, 6.0, 20).expect("valid axis"),
        ])
        .expect("valid grid")
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-axis step indices of flat index `index`.
    pub fn unravel(&self, mut index: usize) -> Result<Vec<usize>> {
        if index >= self.len() {
            return Err(Error::Domain(format!("index {index} outside a grid of {}", self.len())));
        }
        let mut steps = vec![0; self.dim()];
        for (slot, axis) in steps.iter_mut().zip(&self.axes).rev() {
            *slot = index % axis.count;
            index /= axis.count;
        }
        Ok(steps)
    }

    pub fn ravel(&self, steps: &[usize]) -> Result<usize> {
        if steps.len() != self.dim() {
            return Err(Error::Domain(format!(
                "{} steps for a {}-axis grid",
                steps.len(),
                self.dim()
            )));
        }
        let mut index = 0;
        for (s, axis) in steps.iter().zip(&self.axes) {
            if *s >= axis.count {
                return Err(Error::Domain(format!("step {s} outside axis {}", axis.name)));
            }
            index = index * axis.count + s;
        }
        Ok(index)
    }

    pub fn point(&self, index: usize) -> Result<Vec<f64>> {
        let steps = self.unravel(index)?;
        Ok(steps.iter().zip(&self.axes).map(|(s, a)| a.coordinate(*s)).collect())
    }

    /// Coordinates mapped into the unit cube, with log axes transformed
    /// before scaling. Used as regression inputs.
    pub fn features(&self, index: usize) -> Result<Vec<f64>> {
        let steps = self.unravel(index)?;
        Ok(steps.iter().zip(&self.axes).map(|(s, a)| a.fraction(*s)).collect())
    }

    pub fn all_points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i).expect("in range")).collect()
    }

    pub fn all_features(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.features(i).expect("in range")).collect()
    }

    fn write_header<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# {FORMAT_TAG}")?;
        for a in &self.axes {
            writeln!(out, "# axis={},{},{:?},{:?},{}", a.name, a.scale, a.min, a.max, a.count)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Max,
    Min,
}

impl Direction {
    /// Converts a raw score so that larger is always better.
    pub fn orient(self, score: f64) -> f64 {
        match self {
            Direction::Max => score,
            Direction::Min => -score,
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Direction::Max),
            "min" => Ok(Direction::Min),
            other => Err(Error::Config(format!("direction must be max or min, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    grid: GridSpec,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Landscape {
    pub fn new(grid: GridSpec, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if mean.len() != n || std.len() != n {
            return Err(Error::Domain(format!(
                "grid has {n} points but got {} means and {} stds",
                mean.len(),
                std.len()
            )));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::Domain(format!("mean at point {i} is not finite")));
        }
        if let Some(i) = std.iter().position(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!("std at point {i} must be finite and >= 0")));
        }
        Ok(Self { grid, mean, std })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `mean + std * z` with `z` standard normal. Always consumes one normal
    /// draw, even when the std is zero.
    pub fn sample_score<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Result<f64> {
        if index >= self.len() {
            return Err(Error::Domain(format!(
                "index {index} outside a landscape of {}",
                self.len()
            )));
        }
        let z: f64 = StandardNormal.sample(rng);
        Ok(self.mean[index] + self.std[index] * z)
    }

    pub fn true_mean(&self, index: usize) -> Result<f64> {
        self.mean
            .get(index)
            .copied()
            .ok_or_else(|| Error::Domain(format!("index {index} outside a landscape of {}", self.len())))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.grid.write_header(&mut out)?;
        let names: Vec<&str> = self.grid.axes.iter().map(|a| a.name.as_str()).collect();
        writeln!(out, "{},mean,std", names.join(","))?;
        for i in 0..self.len() {
            for x in self.grid.point(i)? {
                write!(out, "{x:?},")?;
            }
            writeln!(out, "{:?},{:?}", self.mean[i], self.std[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut axes = Vec::new();
        let mut grid: Option<GridSpec> = None;
        let mut mean = Vec::new();
        let mut std = Vec::new();
        let mut saw_tag = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let at = || format!("line {}", lineno + 1);
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                let comment = comment.trim();
                if grid.is_some() {
                    return Err(Error::parse(at(), "header comment after the column row"));
                }
                if comment == FORMAT_TAG {
                    saw_tag = true;
                    continue;
                }
                let (key, value) = comment
                    .split_once('=')
                    .ok_or_else(|| Error::parse(at(), format!("expected key=value, got {comment:?}")))?;
                match key.trim() {
                    "axis" => axes.push(parse_axis(value).map_err(|e| Error::parse(at(), e.to_string()))?),
                    other => return Err(Error::parse(at(), format!("unknown header key {other:?}"))),
                }
                continue;
            }
            let Some(g) = grid.as_ref() else {
                if !saw_tag {
                    return Err(Error::parse(at(), "missing format tag"));
                }
                let g = GridSpec::new(std::mem::take(&mut axes)).map_err(|e| Error::parse(at(), e.to_string()))?;
                let expected: Vec<String> = g
                    .axes
                    .iter()
                    .map(|a| a.name.clone())
                    .chain(["mean".into(), "std".into()])
                    .collect();
                let got: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                if got != expected {
                    return Err(Error::parse(
                        at(),
                        format!("column row should be {:?}", expected.join(",")),
                    ));
                }
                grid = Some(g);
                continue;
            };
            let row = mean.len();
            let at_row = || format!("line {} (row {row})", lineno + 1);
            if row >= g.len() {
                return Err(Error::parse(
                    at_row(),
                    format!("more rows than the {} grid points", g.len()),
                ));
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != g.dim() + 2 {
                return Err(Error::parse(
                    at_row(),
                    format!("expected {} fields, got {}", g.dim() + 2, fields.len()),
                ));
            }
            let nums = fields
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(at_row(), format!("not a number: {f:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let point = g.point(row)?;
            for (d, (x, want)) in nums.iter().zip(&point).enumerate() {
                if (x - want).abs() > 1e-9 * want.abs().max(1.0) {
                    return Err(Error::parse(
                        at_row(),
                        format!("coordinate {} is {x} but the grid expects {want}", g.axes[d].name),
                    ));
                }
            }
            let (m, s) = (nums[g.dim()], nums[g.dim() + 1]);
            if !m.is_finite() {
                return Err(Error::parse(at_row(), "mean is not finite"));
            }
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::parse(at_row(), format!("std must be >= 0, got {s}")));
            }
            mean.push(m);
            std.push(s);
        }
        let grid = grid.ok_or_else(|| Error::parse("end of file", "no column row"))?;
        if mean.len() != grid.len() {
            return Err(Error::parse(
                "end of file",
                format!("{} rows for a grid of {} points", mean.len(), grid.len()),
            ));
        }
        Landscape::new(grid, mean, std)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn parse_axis(value: &str) -> Result<Axis> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let [name, scale, min, max, count] = parts[..] else {
        return Err(Error::Domain("axis needs name,scale,min,max,count".into()));
    };
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Domain(format!("not a number: {s:?}")))
    };
    let count = count
        .parse::<usize>()
        .map_err(|_| Error::Domain(format!("not a count: {count:?}")))?;
    Axis::new(name, scale.parse()?, num(min)?, num(max)?, count)
}

/// Noisy oracle over a landscape. Scores are negated for minimization so
/// that larger is always better.
#[derive(Debug, Clone, Copy)]
pub struct LandscapeOracle<'a> {
    pub landscape: &'a Landscape,
    pub direction: Direction,
}

impl Oracle for LandscapeOracle<'_> {
    fn len(&self) -> usize {
        self.landscape.len()
    }

    fn point(&self, index: usize) -> Vec<f64> {
        self.landscape
            .grid
            .point(index)
            .expect("sampled index lies on the grid")
    }

    fn query(&self, index: usize, rng: &mut dyn RngCore) -> Result<f64> {
        Ok(self.direction.orient(self.landscape.sample_score(index, rng)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// Flat background with `round(fraction * n)` (at least one) points
    /// raised to `value`, placed uniformly at random.
    Needle {
        background: f64,
        value: f64,
        fraction: f64,
        noise: f64,
    },
    /// `background + sum_j a_j exp(-|x - c_j|^2 / (2 w_j^2))` over unit-cube
    /// features, with each centre on a random grid point and `a_j`, `w_j`
    /// uniform in their ranges.
    GaussianBumps {
        bumps: usize,
        amplitude: (f64, f64),
        width: (f64, f64),
        background: f64,
        noise: f64,
    },
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{what} must be finite")))
            }
        };
        let noise = match self {
            Generator::Needle {
                background,
                value,
                fraction,
                noise,
            } => {
                finite(*background, "background")?;
                finite(*value, "needle value")?;
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::Domain(format!(
                        "needle fraction must lie in (0, 1], got {fraction}"
                    )));
                }
                *noise
            }
            Generator::GaussianBumps {
                bumps,
                amplitude,
                width,
                background,
                noise,
            } => {
                finite(*background, "background")?;
                if *bumps == 0 {
                    return Err(Error::Domain("need at least one bump".into()));
                }
                if !(amplitude.0.is_finite() && amplitude.1.is_finite() && amplitude.0 <= amplitude.1) {
                    return Err(Error::Domain("amplitude range must be finite and ordered".into()));
                }
                if !(width.0 > 0.0 && width.1.is_finite() && width.0 <= width.1) {
                    return Err(Error::Domain("width range must be positive and ordered".into()));
                }
                *noise
            }
        };
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Domain(format!("noise std must be >= 0, got {noise}")));
        }
        Ok(())
    }
}

pub fn synth_landscape(grid: &GridSpec, generator: &Generator, seed: u64) -> Result<Landscape> {
    generator.validate()?;
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match generator {
        Generator::Needle {
            background,
            value,
            fraction,
            noise,
        } => {
            let k = ((fraction * n as f64).round() as usize).clamp(1, n);
            let mut mean = vec![*background; n];
            for i in index::sample(&mut rng, n, k) {
                mean[i] = *value;
            }
            Landscape::new(grid.clone(), mean, vec![*noise; n])
        }
        Generator::GaussianBumps {
            bumps,
            amplitude,
            width,
            background,
            noise,
        } => {
            let features = grid.all_features();
            let mut mean = vec![*background; n];
            for _ in 0..*bumps {
                let centre = features[rng.random_range(0..n)].clone();
                let a = amplitude.0 + (amplitude.1 - amplitude.0) * rng.random::<f64>();
                let w = width.0 + (width.1 - width.0) * rng.random::<f64>();
                for (m, x) in mean.iter_mut().zip(&features) {
                    let r2: f64 = x.iter().zip(&centre).map(|(u, v)| (u - v) * (u - v)).sum();
                    *m += a * (-r2 / (2.0 * w * w)).exp();
                }
            }
            Landscape::new(grid.clone(), mean, vec![*noise; n])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::RunStream;

    fn small_grid() -> GridSpec {
        GridSpec::new(vec![
            Axis::new("a", AxisScale::Linear, 0.0, 1.0, 3).unwrap(),
            Axis::new("b", AxisScale::Log, 0.01, 1.0, 5).unwrap(),
        ])
        .unwrap()
    }

    fn csv(l: &Landscape) -> String {
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn axis_validation() {
        assert!(Axis::new("x", AxisScale::Linear, 1.0, 1.0, 3).is_err());
        assert!(Axis::new("x", AxisScale::Linear, 0.0, 1.0, 0).is_err());
        assert!(Axis::new("x", AxisScale::Log, 0.0, 1.0, 3).is_err());
        assert!(Axis::new("x,y", AxisScale::Linear, 0.0, 1.0, 3).is_err());
        assert!(GridSpec::new(vec![]).is_err());
    }

    #[test]
    fn index_maps_are_inverse_and_row_major() {
        let g = small_grid();
        assert_eq!(g.len(), 15);
        assert_eq!(g.unravel(1).unwrap(), vec![0, 1]);
        assert_eq!(g.unravel(5).unwrap(), vec![1, 0]);
        for i in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(i).unwrap()).unwrap(), i);
        }
        assert!(g.unravel(15).is_err());
        assert!(g.ravel(&[3, 0]).is_err());
    }

    #[test]
    fn log_axis_has_constant_ratio() {
        let g = GridSpec::lr_clip_320();
        assert_eq!(g.len(), 320);
        let lr = &g.axes()[0];
        let ratio = lr.coordinate(1) / lr.coordinate(0);
        assert!((ratio - 10f64.powf(1.0 / 3.0)).abs() < 1e-12);
        for i in 1..lr.count {
            assert!((lr.coordinate(i) / lr.coordinate(i - 1) - ratio).abs() < 1e-12);
        }
        let clip = &g.axes()[1];
        assert!((clip.coordinate(1) - 0.6).abs() < 1e-12);
        assert!((clip.coordinate(19) - 6.0).abs() < 1e-12);
        assert!((lr.coordinate(15) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn features_live_in_unit_cube() {
        let g = small_grid();
        for f in g.all_features() {
            assert!(f.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        assert_eq!(g.features(14).unwrap(), vec![1.0, 1.0]);
        let single = GridSpec::new(vec![Axis::new("x", AxisScale::Linear, 0.0, 1.0, 1).unwrap()]).unwrap();
        assert_eq!(single.features(0).unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_std_returns_mean() {
        let l = Landscape::new(small_grid(), (0..15).map(|i| i as f64 * 0.1).collect(), vec![0.0; 15]).unwrap();
        let mut rng = RunStream::new(1, 0);
        for i in 0..15 {
            assert_eq!(l.sample_score(i, &mut rng).unwrap(), l.mean()[i]);
        }
        assert!(l.sample_score(15, &mut rng).is_err());
    }

    #[test]
    fn noisy_scores_have_right_moments() {
        let l = Landscape::new(small_grid(), vec![0.9; 15], vec![0.1; 15]).unwrap();
        let mut rng = RunStream::new(2, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| l.sample_score(3, &mut rng).unwrap()).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((m - 0.9).abs() < 3.0 * 0.1 / (n as f64).sqrt());
        assert!((sd - 0.1).abs() < 0.01 * 0.1);
        let again: Vec<f64> = {
            let mut rng = RunStream::new(2, 0);
            (0..5).map(|_| l.sample_score(3, &mut rng).unwrap()).collect()
        };
        assert_eq!(&xs[..5], &again[..]);
    }

    #[test]
    fn csv_round_trip_is_byte_exact() {
        let g = GridSpec::lr_clip_320();
        let gen = Generator::GaussianBumps {
            bumps: 3,
            amplitude: (0.1, 0.3),
            width: (0.05, 0.2),
            background: 0.5,
            noise: 0.1,
        };
        let l = synth_landscape(&g, &gen, 11).unwrap();
        let text = csv(&l);
        let back = Landscape::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, l);
        assert_eq!(csv(&back), text);
        assert!(text.starts_with(
            "# dphypo-landscape v1\n# axis=lr,log,0.0001,10.0,16\n# axis=clip,linear,0.3,6.0,20\nlr,clip,mean,std\n"
        ));
    }

    #[test]
    fn malformed_files_name_the_row() {
        let l = Landscape::new(small_grid(), vec![0.5; 15], vec![0.1; 15]).unwrap();
        let text = csv(&l);
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        let short = lines.join("\n");
        let err = Landscape::read_csv(short.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("14 rows"), "{err}");

        let neg = text.replacen(",0.5,0.1\n", ",0.5,-0.1\n", 1);
        let err = Landscape::read_csv(neg.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 5 (row 0)"), "{err}");

        let garbage = text.replacen(",0.5,0.1\n", ",abc,0.1\n", 2);
        let err = Landscape::read_csv(garbage.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("not a number"), "{err}");

        let wrong_coord = text.replacen("\n0.0,", "\n0.25,", 1);
        assert!(Landscape::read_csv(wrong_coord.as_bytes()).is_err());
    }

    #[test]
    fn needle_has_one_point_at_fraction_one_in_320() {
        let g = GridSpec::lr_clip_320();
        let gen = Generator::Needle {
            background: 0.9,
            value: 0.95,
            fraction: 1.0 / 320.0,
            noise: 0.1,
        };
        let l = synth_landscape(&g, &gen, 3).unwrap();
        assert_eq!(l.mean().iter().filter(|m| **m == 0.95).count(), 1);
        assert_eq!(l.mean().iter().filter(|m| **m == 0.9).count(), 319);
        assert!(l.std().iter().all(|s| *s == 0.1));
        assert_eq!(csv(&l), csv(&synth_landscape(&g, &gen, 3).unwrap()));
        assert_ne!(csv(&l), csv(&synth_landscape(&g, &gen, 4).unwrap()));
    }

    #[test]
    fn single_bump_peaks_at_its_centre() {
        let g = GridSpec::lr_clip_320();
        let gen = Generator::GaussianBumps {
            bumps: 1,
            amplitude: (0.2, 0.2),
            width: (0.1, 0.1),
            background: 0.6,
            noise: 0.0,
        };
        let l = synth_landscape(&g, &gen, 5).unwrap();
        let max = l.mean().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((max - 0.8).abs() < 1e-9);
    }

    #[test]
    fn invalid_generators() {
        let g = small_grid();
        let bad = [
            Generator::Needle {
                background: 0.0,
                value: 1.0,
                fraction: 0.0,
                noise: 0.1,
            },
            Generator::Needle {
                background: 0.0,
                value: 1.0,
                fraction: 0.5,
                noise: -0.1,
            },
            Generator::GaussianBumps {
                bumps: 0,
                amplitude: (0.0, 1.0),
                width: (0.1, 0.2),
                background: 0.0,
                noise: 0.0,
            },
            Generator::GaussianBumps {
                bumps: 1,
                amplitude: (1.0, 0.0),
                width: (0.1, 0.2),
                background: 0.0,
                noise: 0.0,
            },
            Generator::GaussianBumps {
                bumps: 1,
                amplitude: (0.0, 1.0),
                width: (0.0, 0.2),
                background: 0.0,
                noise: 0.0,
            },
        ];
        for b in bad {
            assert!(synth_landscape(&g, &b, 0).is_err(), "{b:?}");
        }
    }

    #[test]
    fn minimisation_negates() {
        let l = Landscape::new(small_grid(), vec![0.25; 15], vec![0.0; 15]).unwrap();
        let o = LandscapeOracle {
            landscape: &l,
            direction: Direction::Min,
        };
        let mut rng = RunStream::new(0, 0);
        assert_eq!(o.query(0, &mut rng).unwrap(), -0.25);
    }
}
