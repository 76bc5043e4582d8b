//! Run configuration: a flat `key = value` text format with `[section]`
//! headers. `#` starts a comment. Keys before the first header are global.
//!
//! ```text
//! seed = 7
//! mode = track
//!
//! [input]
//! source = synthetic
//!
//! [synth]
//! frames = 200
//! noise_sigma = 8
//! specular_spots = 3
//!
//! [tracker]
//! b = fit
//! noise = em
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use thiserror::Error;

use crate::localizer::LocalizerConfig;
use crate::morphology::{Shape, StructuringElement};
use crate::synth::SynthConfig;
use crate::tracker::{InitialBelief, DEFAULT_B_MAX, GATE_CHI2_99};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Detect,
    Track,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Synthetic(SynthConfig),
    /// `frame_XXXX.pgm` files, with an optional `truth.csv`.
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BSetting {
    Fit,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSetting {
    /// Fit by EM starting from these covariances.
    Em { q_init: Matrix4<f64>, r_init: Matrix2<f64> },
    Manual { q: Matrix4<f64>, r: Matrix2<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub period: f64,
    pub b: BSetting,
    pub b_max: f64,
    /// Valid frames tracked with `b = 0` before fitting `b`.
    pub calibration_frames: usize,
    pub noise: NoiseSetting,
    pub em_iterations: usize,
    pub gate: Option<f64>,
    pub init: InitialBelief,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            period: 1.0,
            b: BSetting::Fit,
            b_max: DEFAULT_B_MAX,
            calibration_frames: 50,
            noise: NoiseSetting::Em {
                q_init: Matrix4::identity() * 1e-3,
                r_init: Matrix2::identity(),
            },
            em_iterations: 20,
            gate: Some(GATE_CHI2_99),
            init: InitialBelief::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write per-frame milliseconds to the CSV. Off by default so that
    /// repeated runs produce identical files.
    pub timing: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), timing: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: InputSource,
    pub mode: Mode,
    pub localizer: LocalizerConfig,
    pub tracker: TrackerConfig,
    pub output: OutputConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: InputSource::Synthetic(SynthConfig::default()),
            mode: Mode::Detect,
            localizer: LocalizerConfig::default(),
            tracker: TrackerConfig::default(),
            output: OutputConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Propagate `seed` into the generator and the clustering initializer.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.localizer.caa.seed = seed;
        if let InputSource::Synthetic(s) = &mut self.input {
            s.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        match &self.input {
            InputSource::Synthetic(s) => s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            InputSource::Directory(dir) if !dir.is_dir() => {
                return invalid(format!("input directory {} does not exist", dir.display()))
            }
            InputSource::Directory(_) => {}
        }
        let c = &self.localizer.coarse;
        if !(c.dark_fraction > 0.0 && c.dark_fraction <= 1.0) {
            return invalid("coarse.dark_fraction must be in (0, 1]".into());
        }
        if c.min_region == 0 {
            return invalid("coarse.min_region must be at least 1".into());
        }
        self.localizer.caa.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let t = &self.tracker;
        if !(t.period > 0.0 && t.period.is_finite()) {
            return invalid("tracker.period must be positive".into());
        }
        if let BSetting::Value(b) = t.b {
            if !(b >= 0.0 && b.is_finite()) {
                return invalid("tracker.b must be non-negative".into());
            }
        }
        if !(t.b_max >= 0.0 && t.b_max.is_finite()) {
            return invalid("tracker.b_max must be non-negative".into());
        }
        if let Some(g) = t.gate {
            if !(g > 0.0) {
                return invalid("tracker.gate_threshold must be positive".into());
            }
        }
        Ok(())
    }
}

/// Read and parse a config file. A relative `input.directory` is resolved
/// against the file's own directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
    let mut cfg = parse_unvalidated(&text)?;
    if let InputSource::Directory(dir) = &mut cfg.input {
        if dir.is_relative() {
            if let Some(parent) = path.parent() {
                *dir = parent.join(&*dir);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn bad(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::BadValue { line: self.line, key: self.key.to_string(), message: message.into() }
    }

    fn f64(&self) -> Result<f64, ConfigError> {
        let v: f64 = self.value.parse().map_err(|_| self.bad(format!("`{}` is not a number", self.value)))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.bad("must be finite"))
        }
    }

    fn usize(&self) -> Result<usize, ConfigError> {
        self.value.parse().map_err(|_| self.bad(format!("`{}` is not a non-negative integer", self.value)))
    }

    fn u64(&self) -> Result<u64, ConfigError> {
        self.value.parse().map_err(|_| self.bad(format!("`{}` is not a non-negative integer", self.value)))
    }

    fn u8(&self) -> Result<u8, ConfigError> {
        self.value.parse().map_err(|_| self.bad(format!("`{}` is not an integer in 0..=255", self.value)))
    }

    fn bool(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" | "on" | "yes" => Ok(true),
            "false" | "off" | "no" => Ok(false),
            other => Err(self.bad(format!("`{other}` is not a boolean"))),
        }
    }

    fn list(&self) -> Result<Vec<f64>, ConfigError> {
        self.value
            .split(',')
            .map(|part| {
                let part = part.trim();
                part.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.bad(format!("`{part}` is not a number")))
            })
            .collect()
    }

    fn pair(&self) -> Result<(f64, f64), ConfigError> {
        match self.list()?.as_slice() {
            &[a, b] => Ok((a, b)),
            _ => Err(self.bad("expected two comma-separated numbers")),
        }
    }

    /// A diagonal given as one value (repeated) or `N` values.
    fn diagonal<const N: usize>(&self) -> Result<[f64; N], ConfigError> {
        let vals = self.list()?;
        if vals.iter().any(|&v| v < 0.0) {
            return Err(self.bad("variances must be non-negative"));
        }
        match vals.len() {
            1 => Ok([vals[0]; N]),
            n if n == N => Ok(std::array::from_fn(|i| vals[i])),
            _ => Err(self.bad(format!("expected 1 or {N} comma-separated numbers"))),
        }
    }

    fn shape(&self) -> Result<Shape, ConfigError> {
        match self.value {
            "disk" => Ok(Shape::Disk),
            "square" => Ok(Shape::Square),
            other => Err(self.bad(format!("unknown shape `{other}`"))),
        }
    }
}

fn diag4(d: [f64; 4]) -> Matrix4<f64> {
    Matrix4::from_diagonal(&Vector4::from(d))
}

fn diag2(d: [f64; 2]) -> Matrix2<f64> {
    Matrix2::from_diagonal(&Vector2::from(d))
}

/// Settings collected before they are assembled into a [`PipelineConfig`].
#[derive(Default)]
struct Raw {
    source: Option<String>,
    directory: Option<PathBuf>,
    seed: Option<u64>,
    close: (Option<Shape>, Option<usize>),
    open: (Option<Shape>, Option<usize>),
    noise: Option<String>,
    q: Option<[f64; 4]>,
    r: Option<[f64; 2]>,
    q_init: Option<[f64; 4]>,
    r_init: Option<[f64; 2]>,
    gate: Option<bool>,
    gate_threshold: Option<f64>,
}

/// Parse and validate config text. Relative paths are taken as given.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let cfg = parse_unvalidated(text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_unvalidated(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    let mut synth = SynthConfig::default();
    let mut raw = Raw::default();
    let mut section = String::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                message: "section header is missing `]`".into(),
            })?;
            let name = name.trim();
            if !matches!(
                name,
                "input" | "synth" | "morphology" | "coarse" | "caa" | "tracker" | "output"
            ) {
                return Err(ConfigError::Syntax { line: line_no, message: format!("unknown section [{name}]") });
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            message: "expected `key = value`".into(),
        })?;
        let e = Entry { line: line_no, key: key.trim(), value: value.trim() };
        if e.key.is_empty() {
            return Err(ConfigError::Syntax { line: line_no, message: "empty key".into() });
        }
        let unknown = || ConfigError::UnknownKey {
            line: line_no,
            section: if section.is_empty() { "global".into() } else { section.clone() },
            key: e.key.to_string(),
        };
        let loc = &mut cfg.localizer;
        let trk = &mut cfg.tracker;
        match (section.as_str(), e.key) {
            ("", "seed") => raw.seed = Some(e.u64()?),
            ("", "mode") => {
                cfg.mode = match e.value {
                    "detect" => Mode::Detect,
                    "track" => Mode::Track,
                    other => return Err(e.bad(format!("unknown mode `{other}`"))),
                }
            }

            ("input", "source") => raw.source = Some(e.value.to_string()),
            ("input", "directory") => raw.directory = Some(PathBuf::from(e.value)),

            ("synth", "width") => synth.width = e.usize()?,
            ("synth", "height") => synth.height = e.usize()?,
            ("synth", "frames") => synth.frame_count = e.usize()?,
            ("synth", "pupil_radius") => synth.pupil_radius = e.f64()?,
            ("synth", "iris_radius") => synth.iris_radius = e.f64()?,
            ("synth", "pupil_intensity") => synth.pupil_intensity = e.u8()?,
            ("synth", "iris_intensity") => synth.iris_intensity = e.u8()?,
            ("synth", "background_intensity") => synth.background_intensity = e.u8()?,
            ("synth", "initial_center") => synth.initial_center = e.pair()?,
            ("synth", "velocity") => synth.velocity = e.pair()?,
            ("synth", "noise_sigma") => synth.noise_sigma = e.f64()?,
            ("synth", "specular_spots") => synth.specular_spot_count = e.usize()?,
            ("synth", "specular_radius") => synth.specular_spot_radius = e.f64()?,
            ("synth", "eyelash_streaks") => synth.eyelash_streak_count = e.usize()?,

            ("morphology", "close_shape") => raw.close.0 = Some(e.shape()?),
            ("morphology", "close_radius") => raw.close.1 = Some(e.usize()?),
            ("morphology", "open_shape") => raw.open.0 = Some(e.shape()?),
            ("morphology", "open_radius") => raw.open.1 = Some(e.usize()?),

            ("coarse", "dark_fraction") => loc.coarse.dark_fraction = e.f64()?,
            ("coarse", "margin") => loc.coarse.margin = e.usize()?,
            ("coarse", "min_region") => loc.coarse.min_region = e.usize()?,

            ("caa", "initial_clusters") => loc.caa.initial_clusters = e.usize()?,
            ("caa", "max_iterations") => loc.caa.max_iterations = e.usize()?,
            ("caa", "epsilon") => loc.caa.convergence_epsilon = e.f64()?,
            ("caa", "eta0") => loc.caa.eta0 = e.f64()?,
            ("caa", "tau") => loc.caa.tau = e.f64()?,
            ("caa", "cardinality_epsilon") => {
                loc.caa.cardinality_epsilon = if e.value == "auto" { None } else { Some(e.f64()?) }
            }

            ("tracker", "period") => trk.period = e.f64()?,
            ("tracker", "b") => {
                trk.b = if e.value == "fit" { BSetting::Fit } else { BSetting::Value(e.f64()?) }
            }
            ("tracker", "b_max") => trk.b_max = e.f64()?,
            ("tracker", "calibration_frames") => trk.calibration_frames = e.usize()?,
            ("tracker", "noise") => raw.noise = Some(e.value.to_string()),
            ("tracker", "q") => raw.q = Some(e.diagonal()?),
            ("tracker", "r") => raw.r = Some(e.diagonal()?),
            ("tracker", "q_init") => raw.q_init = Some(e.diagonal()?),
            ("tracker", "r_init") => raw.r_init = Some(e.diagonal()?),
            ("tracker", "em_iterations") => trk.em_iterations = e.usize()?,
            ("tracker", "gate") => raw.gate = Some(e.bool()?),
            ("tracker", "gate_threshold") => raw.gate_threshold = Some(e.f64()?),
            ("tracker", "p0") => trk.init.p0 = diag4(e.diagonal()?),

            ("output", "dir") => cfg.output.dir = PathBuf::from(e.value),
            ("output", "timing") => cfg.output.timing = e.bool()?,

            _ => return Err(unknown()),
        }
    }

    cfg.input = match (raw.source.as_deref(), raw.directory) {
        (None | Some("synthetic"), None) => InputSource::Synthetic(synth),
        (None | Some("directory"), Some(dir)) => InputSource::Directory(dir),
        (Some("synthetic"), Some(_)) => {
            return Err(ConfigError::Invalid("input.directory given with source = synthetic".into()))
        }
        (Some("directory"), None) => {
            return Err(ConfigError::Invalid("source = directory needs input.directory".into()))
        }
        (Some(other), _) => return Err(ConfigError::Invalid(format!("unknown input source `{other}`"))),
    };

    let se = |(shape, radius): (Option<Shape>, Option<usize>)| {
        let default = StructuringElement::default();
        StructuringElement::new(shape.unwrap_or(default.shape()), radius.unwrap_or(default.radius()))
    };
    cfg.localizer.se_close = se(raw.close);
    cfg.localizer.se_open = se(raw.open);

    let trk = &mut cfg.tracker;
    trk.noise = match raw.noise.as_deref() {
        None | Some("em") => {
            if raw.q.is_some() || raw.r.is_some() {
                return Err(ConfigError::Invalid("tracker.q and tracker.r need noise = manual".into()));
            }
            let NoiseSetting::Em { q_init, r_init } = TrackerConfig::default().noise else {
                unreachable!("default noise setting is EM")
            };
            NoiseSetting::Em {
                q_init: raw.q_init.map_or(q_init, diag4),
                r_init: raw.r_init.map_or(r_init, diag2),
            }
        }
        Some("manual") => match (raw.q, raw.r) {
            (Some(q), Some(r)) => NoiseSetting::Manual { q: diag4(q), r: diag2(r) },
            _ => return Err(ConfigError::Invalid("noise = manual needs tracker.q and tracker.r".into())),
        },
        Some(other) => return Err(ConfigError::Invalid(format!("unknown noise setting `{other}`"))),
    };
    let threshold = raw.gate_threshold.unwrap_or(GATE_CHI2_99);
    trk.gate = if raw.gate.unwrap_or(true) { Some(threshold) } else { None };

    cfg.set_seed(raw.seed.unwrap_or(0));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn full_example() {
        let text = "\
seed = 9   # global
mode = track

[synth]
frames = 12
initial_center = 320.5, 240
noise_sigma = 8
[morphology]
open_shape = square
open_radius = 2
[caa]
cardinality_epsilon = 7
[tracker]
b = 0.004
noise = manual
q = 0.01
r = 2, 3
gate = off
[output]
timing = true
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.mode, Mode::Track);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.localizer.caa.seed, 9);
        let InputSource::Synthetic(s) = &cfg.input else { panic!("expected synthetic input") };
        assert_eq!((s.frame_count, s.initial_center, s.noise_sigma, s.seed), (12, (320.5, 240.0), 8.0, 9));
        assert_eq!(cfg.localizer.se_open, StructuringElement::square(2));
        assert_eq!(cfg.localizer.se_close, StructuringElement::disk(3));
        assert_eq!(cfg.localizer.caa.cardinality_epsilon, Some(7.0));
        assert_eq!(cfg.tracker.b, BSetting::Value(0.004));
        assert_eq!(
            cfg.tracker.noise,
            NoiseSetting::Manual { q: Matrix4::identity() * 0.01, r: diag2([2.0, 3.0]) }
        );
        assert_eq!(cfg.tracker.gate, None);
        assert!(cfg.output.timing);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            parse_config("mode = detect\n\nbogus line"),
            Err(ConfigError::Syntax { line: 3, message: "expected `key = value`".into() })
        );
        assert!(matches!(
            parse_config("[caa]\neta0 = fast"),
            Err(ConfigError::BadValue { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("[synth]\nwidht = 3"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(parse_config("[nope]"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_config("[synth"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn semantic_errors() {
        assert!(matches!(parse_config("[input]\nsource = directory"), Err(ConfigError::Invalid(_))));
        assert!(matches!(
            parse_config("[input]\ndirectory = /definitely/not/here"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(parse_config("[tracker]\nnoise = manual\nq = 1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_config("[tracker]\nq = 1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_config("[synth]\npupil_radius = 400"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_config("[coarse]\ndark_fraction = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_config("[caa]\ninitial_clusters = 0"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn directory_input() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("[input]\ndirectory = {}", dir.path().display());
        assert_eq!(parse_config(&text).unwrap().input, InputSource::Directory(dir.path().to_path_buf()));
    }
}
