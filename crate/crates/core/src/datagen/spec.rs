use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rain::StreakBin;

/// Closed interval a parameter is drawn from uniformly. `lo == hi` pins it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    pub fn new(lo: f64, hi: f64) -> Self {
        Span { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        Span { lo: v, hi: v }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

impl FromStr for Span {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected a number or lo..hi, got {s:?}"));
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        match s.split_once("..") {
            Some((lo, hi)) => Ok(Span::new(parse(lo)?, parse(hi)?)),
            None => Ok(Span::fixed(parse(s)?)),
        }
    }
}

/// Streak statistics for one size bin.
#[derive(Clone, Debug, PartialEq)]
pub struct BinSpec {
    pub bin: StreakBin,
    /// Inclusive range of streaks per image.
    pub count: (usize, usize),
    /// Peak added intensity of a streak.
    pub intensity: Span,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackgroundKind {
    /// Multi-octave value noise over a random color gradient.
    ValueNoise,
    Flat(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthKind {
    /// Planar ramp plus Gaussian blobs, mapped into `[near, far]`.
    RampBlobs { near: f64, far: f64 },
    Constant(f64),
}

/// Declarative description of one synthetic rainy image.
#[derive(Clone, Debug, PartialEq)]
pub struct RainSceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub bins: Vec<BinSpec>,
    /// Streak directions in degrees from vertical.
    pub orientations: Vec<f64>,
    pub beta: Span,
    pub light: Span,
    pub veil: bool,
    pub background: BackgroundKind,
    pub depth: DepthKind,
}

/// Fraction of the image each bin covers on average.
const DEFAULT_COVERAGE: f64 = 0.12;

/// `count` angles evenly spaced over `[-max_deg, max_deg]`.
pub fn even_orientations(count: usize, max_deg: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n)
            .map(|i| -max_deg + 2.0 * max_deg * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl BinSpec {
    /// Streak counts scale with `1 / mean area`, so small streaks are the
    /// densest and large ones the sparsest.
    pub fn desk_default(bin: StreakBin, height: usize, width: usize) -> Self {
        let (lo, hi) = bin.area_range();
        let mean_area = 0.5 * (lo + hi) as f64;
        let mean = DEFAULT_COVERAGE * (height * width) as f64 / mean_area;
        let intensity = match bin {
            StreakBin::Small => Span::new(0.25, 0.6),
            StreakBin::Middle => Span::new(0.3, 0.7),
            StreakBin::Large => Span::new(0.3, 0.7),
        };
        // Bins whose smallest streak would cover half the frame stay empty.
        let count = if 2 * (lo + 1) > height * width {
            (0, 0)
        } else {
            ((0.5 * mean).floor() as usize, (1.5 * mean).ceil() as usize)
        };
        BinSpec {
            bin,
            count,
            intensity,
        }
    }
}

impl RainSceneSpec {
    /// Three bins, eleven orientations over +-55 degrees, no veil.
    pub fn desk(height: usize, width: usize, seed: u64) -> Self {
        RainSceneSpec {
            seed,
            height,
            width,
            bins: StreakBin::ALL
                .iter()
                .map(|&b| BinSpec::desk_default(b, height, width))
                .collect(),
            orientations: even_orientations(11, 55.0),
            beta: Span::new(0.3, 1.0),
            light: Span::new(0.7, 1.0),
            veil: false,
            background: BackgroundKind::ValueNoise,
            depth: DepthKind::RampBlobs {
                near: 0.2,
                far: 2.0,
            },
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RainSceneSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn bin_labels(&self) -> Vec<StreakBin> {
        self.bins.iter().map(|b| b.bin).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        if self.orientations.is_empty() && self.bins.iter().any(|b| b.count.1 > 0) {
            return Err(Error::Config("streaks need at least one orientation".into()));
        }
        for b in &self.bins {
            if b.count.0 > b.count.1 {
                return Err(Error::Config(format!("{} count range is empty", b.bin)));
            }
            if b.intensity.lo < 0.0 || b.intensity.hi < b.intensity.lo {
                return Err(Error::Config(format!("{} intensity range invalid", b.bin)));
            }
        }
        let check = |name: &str, s: Span, lo: f64, hi: f64| {
            if s.lo < lo || s.hi > hi || s.hi < s.lo {
                Err(Error::Config(format!("{name} range {s} outside [{lo}, {hi}]")))
            } else {
                Ok(())
            }
        };
        check("beta", self.beta, 0.0, f64::MAX)?;
        check("light", self.light, 0.0, 1.0)?;
        match self.depth {
            DepthKind::RampBlobs { near, far } if near < 0.0 || far < near => {
                Err(Error::Config("depth needs 0 <= near <= far".into()))
            }
            DepthKind::Constant(d) if d < 0.0 => Err(Error::Config("depth must be >= 0".into())),
            _ => Ok(()),
        }?;
        if let BackgroundKind::Flat(v) = self.background {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config("flat background outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Single-line `key=value;...` description, parseable by [`RainSceneSpec::from_echo`].
    pub fn echo(&self) -> String {
        let bins = self
            .bins
            .iter()
            .map(|b| format!("{}:{}-{}:{}", b.bin, b.count.0, b.count.1, b.intensity))
            .collect::<Vec<_>>()
            .join("|");
        let orient = self
            .orientations
            .iter()
            .map(|o| o.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let background = match self.background {
            BackgroundKind::ValueNoise => "value-noise".to_string(),
            BackgroundKind::Flat(v) => format!("flat:{v}"),
        };
        let depth = match self.depth {
            DepthKind::RampBlobs { near, far } => format!("ramp-blobs:{near}..{far}"),
            DepthKind::Constant(d) => format!("constant:{d}"),
        };
        format!(
            "seed={};size={}x{};bins={};orient={};beta={};light={};veil={};background={};depth={}",
            self.seed,
            self.height,
            self.width,
            bins,
            orient,
            self.beta,
            self.light,
            u8::from(self.veil),
            background,
            depth
        )
    }

    pub fn from_echo(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("bad scene echo field {what}: {s:?}"));
        let mut spec = RainSceneSpec::desk(1, 1, 0);
        let mut seen = 0;
        for field in s.split(';') {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(field))?;
            seen += 1;
            match key {
                "seed" => spec.seed = value.parse().map_err(|_| bad(key))?,
                "size" => {
                    let (h, w) = value.split_once('x').ok_or_else(|| bad(key))?;
                    spec.height = h.parse().map_err(|_| bad(key))?;
                    spec.width = w.parse().map_err(|_| bad(key))?;
                }
                "bins" => {
                    spec.bins = value
                        .split('|')
                        .filter(|b| !b.is_empty())
                        .map(|b| {
                            let mut parts = b.splitn(3, ':');
                            let label = parts.next().ok_or_else(|| bad(key))?;
                            let count = parts.next().ok_or_else(|| bad(key))?;
                            let intensity = parts.next().ok_or_else(|| bad(key))?;
                            let (c0, c1) = count.split_once('-').ok_or_else(|| bad(key))?;
                            Ok(BinSpec {
                                bin: StreakBin::from_label(label).ok_or_else(|| bad(key))?,
                                count: (
                                    c0.parse().map_err(|_| bad(key))?,
                                    c1.parse().map_err(|_| bad(key))?,
                                ),
                                intensity: intensity.parse()?,
                            })
                        })
                        .collect::<Result<_>>()?
                }
                "orient" => {
                    spec.orientations = value
                        .split(',')
                        .filter(|o| !o.is_empty())
                        .map(|o| o.parse().map_err(|_| bad(key)))
                        .collect::<Result<_>>()?
                }
                "beta" => spec.beta = value.parse()?,
                "light" => spec.light = value.parse()?,
                "veil" => spec.veil = value == "1",
                "background" => {
                    spec.background = match value.split_once(':') {
                        None if value == "value-noise" => BackgroundKind::ValueNoise,
                        Some(("flat", v)) => BackgroundKind::Flat(v.parse().map_err(|_| bad(key))?),
                        _ => return Err(bad(key)),
                    }
                }
                "depth" => {
                    spec.depth = match value.split_once(':') {
                        Some(("ramp-blobs", r)) => {
                            let span: Span = r.parse()?;
                            DepthKind::RampBlobs {
                                near: span.lo,
                                far: span.hi,
                            }
                        }
                        Some(("constant", d)) => {
                            DepthKind::Constant(d.parse().map_err(|_| bad(key))?)
                        }
                        _ => return Err(bad(key)),
                    }
                }
                _ => return Err(bad(key)),
            }
        }
        if seen != 9 {
            return Err(bad("count"));
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_even_orientations() {
        let o = even_orientations(11, 55.0);
        assert_eq!(o.len(), 11);
        assert_eq!(o[0], -55.0);
        assert_eq!(o[5], 0.0);
        assert_eq!(o[10], 55.0);
        assert!(o.windows(2).all(|w| (w[1] - w[0] - 11.0).abs() < 1e-12));
    }

    #[test]
    fn default_density_falls_with_size() {
        let spec = RainSceneSpec::desk(64, 64, 1);
        let counts: Vec<_> = spec.bins.iter().map(|b| b.count.1).collect();
        assert!(counts[0] > counts[1] && counts[1] > counts[2], "{counts:?}");
    }

    #[test]
    fn echo_round_trips() {
        let mut spec = RainSceneSpec::desk(17, 31, 99);
        spec.veil = true;
        spec.beta = Span::fixed(0.45);
        spec.background = BackgroundKind::Flat(0.3);
        spec.depth = DepthKind::Constant(1.25);
        assert_eq!(RainSceneSpec::from_echo(&spec.echo()).unwrap(), spec);
        let desk = RainSceneSpec::desk(32, 32, 7);
        assert_eq!(RainSceneSpec::from_echo(&desk.echo()).unwrap(), desk);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = RainSceneSpec::desk(8, 8, 0);
        spec.light = Span::new(0.5, 1.5);
        assert!(spec.validate().is_err());
        let mut spec = RainSceneSpec::desk(8, 8, 0);
        spec.orientations.clear();
        assert!(spec.validate().is_err());
        assert!(RainSceneSpec::from_echo("seed=1").is_err());
    }
}
