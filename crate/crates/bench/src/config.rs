//! Experiment configuration.
//!
//! The file format is flat `key = value` lines with dotted section
//! prefixes (`scene.`, `solver.`, `experiment.`, `sweep.`). Blank lines and
//! lines starting with `#` are ignored. Relative paths are resolved against
//! the directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use twolmm::two_lmm::{AcceptancePoint, TwoLmmConfig};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lmm,
    Slmm,
    Als2Lmm,
    Lbfgs2Lmm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lmm, Method::Slmm, Method::Als2Lmm, Method::Lbfgs2Lmm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lmm => "lmm",
            Method::Slmm => "slmm",
            Method::Als2Lmm => "als2lmm",
            Method::Lbfgs2Lmm => "lbfgs2lmm",
        }
    }

    /// Whether the method is iterative and produces a trace.
    pub fn has_trace(self) -> bool {
        matches!(self, Method::Als2Lmm | Method::Lbfgs2Lmm)
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown method {s:?} (expected lmm, slmm, als2lmm or lbfgs2lmm)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndmemberSource {
    File,
    Vca,
    Truth,
}

impl FromStr for EndmemberSource {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file" => Ok(Self::File),
            "vca" => Ok(Self::Vca),
            "truth" => Ok(Self::Truth),
            _ => Err(BenchError::Config(format!("unknown endmember source {s:?} (expected file, vca or truth)"))),
        }
    }
}

impl fmt::Display for EndmemberSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::File => "file",
            Self::Vca => "vca",
            Self::Truth => "truth",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// Doubly scaled mixtures of smooth synthetic spectra.
    TwoLmm,
    /// Terrain-shaded mixtures rendered through the Hapke model.
    Hapke,
    /// Scene read from `scene.image` (plus optional truth files).
    Files,
}

impl FromStr for Generator {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2lmm" => Ok(Self::TwoLmm),
            "hapke" => Ok(Self::Hapke),
            "files" => Ok(Self::Files),
            _ => Err(BenchError::Config(format!("unknown generator {s:?} (expected 2lmm, hapke or files)"))),
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TwoLmm => "2lmm",
            Self::Hapke => "hapke",
            Self::Files => "files",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Solver bounds `[1/α, α]`.
    BoundsAlpha,
    /// Scene noise level in dB.
    Snr,
}

impl FromStr for SweepKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounds_alpha" => Ok(Self::BoundsAlpha),
            "snr" => Ok(Self::Snr),
            _ => Err(BenchError::Config(format!("unknown sweep {s:?} (expected bounds_alpha or snr)"))),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BoundsAlpha => "bounds_alpha",
            Self::Snr => "snr",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub generator: Generator,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// `inf` disables noise.
    pub snr_db: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub correlation_length: f64,
    pub sharpness: f64,
    pub cell_size: f64,
    /// Standard deviation of the synthetic terrain heights.
    pub relief: f64,
    pub terrain_correlation: f64,
    pub sun_zenith: f64,
    pub sun_azimuth: f64,
    pub image: Option<PathBuf>,
    pub abundances: Option<PathBuf>,
    pub truth_endmembers: Option<PathBuf>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            generator: Generator::TwoLmm,
            width: 50,
            height: 50,
            bands: 100,
            endmembers: 3,
            snr_db: 40.0,
            s_min: 1.0 / 3.0,
            s_max: 3.0,
            correlation_length: 15.0,
            sharpness: 3.0,
            cell_size: 1.0,
            relief: 1.0,
            terrain_correlation: 4.0,
            sun_zenith: 30.0,
            sun_azimuth: 135.0,
            image: None,
            abundances: None,
            truth_endmembers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { kind: SweepKind::BoundsAlpha, values: vec![1.0, 3.0, 5.0, 50.0] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub methods: Vec<Method>,
    pub em_source: EndmemberSource,
    pub em_file: Option<PathBuf>,
    /// Run VCA on the noiseless image of a generated scene.
    pub vca_on_clean: bool,
    pub solver: TwoLmmConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("results"),
            scene: SceneConfig::default(),
            methods: Method::ALL.to_vec(),
            em_source: EndmemberSource::Vca,
            em_file: None,
            vca_on_clean: false,
            solver: TwoLmmConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| BenchError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_path(value: &str, base: Option<&Path>) -> Option<PathBuf> {
    if value.is_empty() {
        return None;
    }
    let p = PathBuf::from(value);
    Some(match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    })
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| BenchError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set_with_base(key.trim(), value.trim(), base)
                .map_err(|e| BenchError::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    /// Sets one key; paths are taken as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_with_base(key, value, None)
    }

    fn set_with_base(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let s = &mut self.scene;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = parse_path(value, base).unwrap_or_else(|| PathBuf::from("results")),
            "scene.generator" => s.generator = value.parse()?,
            "scene.width" => s.width = parse(key, value)?,
            "scene.height" => s.height = parse(key, value)?,
            "scene.bands" => s.bands = parse(key, value)?,
            "scene.endmembers" => s.endmembers = parse(key, value)?,
            "scene.snr_db" => s.snr_db = parse(key, value)?,
            "scene.s_min" => s.s_min = parse(key, value)?,
            "scene.s_max" => s.s_max = parse(key, value)?,
            "scene.correlation_length" => s.correlation_length = parse(key, value)?,
            "scene.sharpness" => s.sharpness = parse(key, value)?,
            "scene.cell_size" => s.cell_size = parse(key, value)?,
            "scene.relief" => s.relief = parse(key, value)?,
            "scene.terrain_correlation" => s.terrain_correlation = parse(key, value)?,
            "scene.sun_zenith" => s.sun_zenith = parse(key, value)?,
            "scene.sun_azimuth" => s.sun_azimuth = parse(key, value)?,
            "scene.image" => s.image = parse_path(value, base),
            "scene.abundances" => s.abundances = parse_path(value, base),
            "scene.truth_endmembers" => s.truth_endmembers = parse_path(value, base),
            "experiment.methods" => self.methods = value.split(',').map(str::trim).filter(|m| !m.is_empty()).map(str::parse).collect::<Result<_>>()?,
            "experiment.em_source" => self.em_source = value.parse()?,
            "experiment.em_file" => self.em_file = parse_path(value, base),
            "experiment.vca_on_clean" => self.vca_on_clean = parse(key, value)?,
            "solver.lower" => self.solver.lower = parse(key, value)?,
            "solver.upper" => self.solver.upper = parse(key, value)?,
            "solver.eps_a" => self.solver.eps_a = parse(key, value)?,
            "solver.eps_s" => self.solver.eps_s = parse(key, value)?,
            "solver.max_iter" => self.solver.max_iter = parse(key, value)?,
            "solver.memory" => self.solver.memory = parse(key, value)?,
            "solver.max_halvings" => self.solver.max_halvings = parse(key, value)?,
            "solver.acceptance" => {
                self.solver.acceptance_point = match value {
                    "preclip" => AcceptancePoint::PreClip,
                    "postclip" => AcceptancePoint::PostClip,
                    _ => return Err(BenchError::Config(format!("{key}: expected preclip or postclip"))),
                }
            }
            "sweep.kind" => self.sweep.kind = value.parse()?,
            "sweep.values" => self.sweep.values = parse_list(key, value)?,
            _ => return Err(BenchError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// All keys with their current values, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.scene;
        let acceptance = match self.solver.acceptance_point {
            AcceptancePoint::PreClip => "preclip",
            AcceptancePoint::PostClip => "postclip",
        };
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("scene.generator", s.generator.to_string()),
            ("scene.width", s.width.to_string()),
            ("scene.height", s.height.to_string()),
            ("scene.bands", s.bands.to_string()),
            ("scene.endmembers", s.endmembers.to_string()),
            ("scene.snr_db", format!("{:?}", s.snr_db)),
            ("scene.s_min", format!("{:?}", s.s_min)),
            ("scene.s_max", format!("{:?}", s.s_max)),
            ("scene.correlation_length", format!("{:?}", s.correlation_length)),
            ("scene.sharpness", format!("{:?}", s.sharpness)),
            ("scene.cell_size", format!("{:?}", s.cell_size)),
            ("scene.relief", format!("{:?}", s.relief)),
            ("scene.terrain_correlation", format!("{:?}", s.terrain_correlation)),
            ("scene.sun_zenith", format!("{:?}", s.sun_zenith)),
            ("scene.sun_azimuth", format!("{:?}", s.sun_azimuth)),
            ("scene.image", show_path(&s.image)),
            ("scene.abundances", show_path(&s.abundances)),
            ("scene.truth_endmembers", show_path(&s.truth_endmembers)),
            ("experiment.methods", join(&self.methods)),
            ("experiment.em_source", self.em_source.to_string()),
            ("experiment.em_file", show_path(&self.em_file)),
            ("experiment.vca_on_clean", self.vca_on_clean.to_string()),
            ("solver.lower", format!("{:?}", self.solver.lower)),
            ("solver.upper", format!("{:?}", self.solver.upper)),
            ("solver.eps_a", format!("{:?}", self.solver.eps_a)),
            ("solver.eps_s", format!("{:?}", self.solver.eps_s)),
            ("solver.max_iter", self.solver.max_iter.to_string()),
            ("solver.memory", self.solver.memory.to_string()),
            ("solver.max_halvings", self.solver.max_halvings.to_string()),
            ("solver.acceptance", acceptance.to_string()),
            ("sweep.kind", self.sweep.kind.to_string()),
            ("sweep.values", self.sweep.values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")),
        ]
    }

    /// Config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        let bad = |m: String| Err(BenchError::Config(m));
        if self.methods.is_empty() {
            return bad("experiment.methods is empty".into());
        }
        if s.generator == Generator::Files {
            match &s.image {
                None => return bad("scene.generator = files needs scene.image".into()),
                Some(p) if !p.exists() => return bad(format!("scene.image {} does not exist", p.display())),
                _ => {}
            }
        } else {
            if s.width == 0 || s.height == 0 || s.bands == 0 || s.endmembers == 0 {
                return bad("scene dimensions must be positive".into());
            }
            if !(s.snr_db > 0.0) {
                return bad(format!("scene.snr_db = {} must be positive", s.snr_db));
            }
            if !(s.s_min > 0.0 && s.s_max >= s.s_min && s.s_max.is_finite()) {
                return bad(format!("scene scaling range [{}, {}] is invalid", s.s_min, s.s_max));
            }
        }
        for (key, p) in [("scene.abundances", &s.abundances), ("scene.truth_endmembers", &s.truth_endmembers), ("experiment.em_file", &self.em_file)] {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("{key} {} does not exist", p.display()));
                }
            }
        }
        match self.em_source {
            EndmemberSource::File if self.em_file.is_none() => return bad("experiment.em_source = file needs experiment.em_file".into()),
            EndmemberSource::Truth if s.generator == Generator::Files && s.truth_endmembers.is_none() => {
                return bad("experiment.em_source = truth needs scene.truth_endmembers for file scenes".into())
            }
            _ => {}
        }
        if self.vca_on_clean && s.generator == Generator::Files {
            return bad("experiment.vca_on_clean needs a generated scene".into());
        }
        self.solver.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if self.sweep.values.is_empty() {
            return bad("sweep.values is empty".into());
        }
        Ok(())
    }

    /// Copy of `self` at one sweep point.
    pub fn at_sweep_point(&self, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        match self.sweep.kind {
            SweepKind::BoundsAlpha => {
                if !(value >= 1.0) {
                    return Err(BenchError::Config(format!("bounds alpha {value} must be at least 1")));
                }
                cfg.solver.lower = 1.0 / value;
                cfg.solver.upper = value;
            }
            SweepKind::Snr => cfg.scene.snr_db = value,
        }
        Ok(cfg)
    }
}
