//! End-to-end runs: load or synthesize frames, localize the pupil in each,
//! optionally track, and report errors against ground truth.

mod config;
mod csv;

pub use config::{
    load_config, parse_config, BSetting, ConfigError, InputSource, Mode, NoiseSetting, OutputConfig,
    PipelineConfig, TrackerConfig,
};
pub use csv::{format_trajectory, format_truth, parse_trajectory, parse_truth, CsvError, TRAJECTORY_HEADER};

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix2, Matrix4, Vector2};
use thiserror::Error;

use crate::image::GrayImage;
use crate::localizer::{detect, LocalizerConfig};
use crate::pgm::{load_pgm, save_pgm, PgmError};
use crate::synth::{generate_sequence, Sequence, SynthError};
use crate::tracker::{
    em_fit, fit_b, BSample, DynamicsModel, EmConfig, Measurement, ObservationModel, StepOutcome,
    TrackError, Tracker,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Pgm { path: PathBuf, source: PgmError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: CsvError },
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("truth file has {truth} rows but there are {frames} frames")]
    TruthLength { truth: usize, frames: usize },
    #[error("tracking failed: {0}")]
    Track(#[from] TrackError),
}

impl PipelineError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    /// `None` when the detector found no dark region.
    pub detection: Option<(f64, f64)>,
    pub tracked: Option<(f64, f64)>,
    pub truth: Option<(f64, f64)>,
    /// Wall-clock milliseconds spent detecting in this frame.
    pub ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<FrameRecord>,
}

/// Round to the six decimals written to CSV, so that parsing the CSV
/// reproduces the in-memory values exactly.
pub fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn quantize_pair((x, y): (f64, f64)) -> (f64, f64) {
    (quantize(x), quantize(y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisErrors {
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointErrors {
    pub x: AxisErrors,
    pub y: AxisErrors,
    /// Frames that entered the averages.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frames: usize,
    pub misses: usize,
    pub detection: Option<PointErrors>,
    pub tracking: Option<PointErrors>,
    pub mean_ms: Option<f64>,
    pub p95_ms: Option<f64>,
}

fn point_errors<'a>(pairs: impl Iterator<Item = ((f64, f64), (f64, f64))> + 'a) -> Option<PointErrors> {
    let (mut n, mut ax, mut ay, mut sx, mut sy) = (0usize, 0.0, 0.0, 0.0, 0.0);
    for ((ex, ey), (tx, ty)) in pairs {
        let (dx, dy) = (ex - tx, ey - ty);
        n += 1;
        ax += dx.abs();
        ay += dy.abs();
        sx += dx * dx;
        sy += dy * dy;
    }
    (n > 0).then(|| {
        let nf = n as f64;
        PointErrors {
            x: AxisErrors { mae: ax / nf, rmse: (sx / nf).sqrt() },
            y: AxisErrors { mae: ay / nf, rmse: (sy / nf).sqrt() },
            count: n,
        }
    })
}

/// Error metrics over the frames that have both an estimate and ground truth.
/// The 95th percentile uses the nearest-rank definition.
pub fn compute_metrics(traj: &Trajectory) -> MetricsReport {
    let r = &traj.records;
    let detection = point_errors(r.iter().filter_map(|f| Some((f.detection?, f.truth?))));
    let tracking = point_errors(r.iter().filter_map(|f| Some((f.tracked?, f.truth?))));
    let mut ms: Vec<f64> = r.iter().filter_map(|f| f.ms).collect();
    ms.sort_by(f64::total_cmp);
    let mean_ms = (!ms.is_empty()).then(|| ms.iter().sum::<f64>() / ms.len() as f64);
    let p95_ms = (!ms.is_empty()).then(|| {
        let rank = (0.95 * ms.len() as f64).ceil() as usize;
        ms[rank.clamp(1, ms.len()) - 1]
    });
    MetricsReport {
        frames: r.len(),
        misses: r.iter().filter(|f| f.detection.is_none()).count(),
        detection,
        tracking,
        mean_ms,
        p95_ms,
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames {}", self.frames)?;
        writeln!(f, "misses {}", self.misses)?;
        for (name, errs) in [("detection", &self.detection), ("tracking", &self.tracking)] {
            if let Some(e) = errs {
                writeln!(f, "{name}_mae_x {:.6}", e.x.mae)?;
                writeln!(f, "{name}_mae_y {:.6}", e.y.mae)?;
                writeln!(f, "{name}_rmse_x {:.6}", e.x.rmse)?;
                writeln!(f, "{name}_rmse_y {:.6}", e.y.rmse)?;
            }
        }
        if let (Some(mean), Some(p95)) = (self.mean_ms, self.p95_ms) {
            writeln!(f, "mean_ms {mean:.3}")?;
            writeln!(f, "p95_ms {p95:.3}")?;
        }
        Ok(())
    }
}

/// Parameters the tracker ended up using.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerSummary {
    pub b: f64,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    /// EM log-likelihood trace; empty for manual noise settings.
    pub em_log_likelihoods: Vec<f64>,
    pub gated: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: MetricsReport,
    pub tracker: Option<TrackerSummary>,
}

/// Frames of a sequence and, when known, the true center of each.
pub struct Frames {
    pub images: Vec<GrayImage>,
    pub truth: Option<Vec<(f64, f64)>>,
}

fn frame_number(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Load `frame_<n>.pgm` files in numeric order, plus `truth.csv` if present.
pub fn load_directory(dir: &Path) -> Result<Frames, PipelineError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(PipelineError::io(dir))? {
        let entry = entry.map_err(PipelineError::io(dir))?;
        if let Some(n) = entry.file_name().to_str().and_then(frame_number) {
            paths.push((n, entry.path()));
        }
    }
    if paths.is_empty() {
        return Err(PipelineError::NoFrames(dir.to_path_buf()));
    }
    paths.sort();
    let images = paths
        .iter()
        .map(|(_, p)| load_pgm(p).map_err(|source| PipelineError::Pgm { path: p.clone(), source }))
        .collect::<Result<Vec<_>, _>>()?;
    let truth_path = dir.join("truth.csv");
    let truth = if truth_path.is_file() {
        let text = fs::read_to_string(&truth_path).map_err(PipelineError::io(&truth_path))?;
        let truth = parse_truth(&text).map_err(|source| PipelineError::Csv { path: truth_path, source })?;
        if truth.len() != images.len() {
            return Err(PipelineError::TruthLength { truth: truth.len(), frames: images.len() });
        }
        Some(truth)
    } else {
        None
    };
    Ok(Frames { images, truth })
}

/// Write `frame_0000.pgm`, … and `truth.csv` into `dir`.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    for (k, img) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("frame_{k:04}.pgm"));
        save_pgm(img, &path).map_err(|source| PipelineError::Pgm { path: path.clone(), source })?;
    }
    let path = dir.join("truth.csv");
    fs::write(&path, format_truth(&seq.truth.centers)).map_err(PipelineError::io(&path))
}

pub fn load_frames(input: &InputSource) -> Result<Frames, PipelineError> {
    match input {
        InputSource::Synthetic(cfg) => {
            let seq = generate_sequence(cfg)?;
            Ok(Frames { images: seq.frames, truth: Some(seq.truth.centers) })
        }
        InputSource::Directory(dir) => load_directory(dir),
    }
}

/// Localize every frame. Timing covers preprocessing through refinement.
pub fn detect_frames(frames: &Frames, cfg: &LocalizerConfig) -> Trajectory {
    let records = frames
        .images
        .iter()
        .enumerate()
        .map(|(k, img)| {
            let start = Instant::now();
            let detection = detect(img, cfg).ok().map(|d| quantize_pair(d.center()));
            let ms = start.elapsed().as_secs_f64() * 1e3;
            FrameRecord {
                frame: k,
                detection,
                tracked: None,
                truth: frames.truth.as_ref().map(|t| quantize_pair(t[k])),
                ms: Some(quantize(ms)),
            }
        })
        .collect();
    Trajectory { records }
}

fn measurements(traj: &Trajectory) -> Vec<Measurement> {
    traj.records.iter().map(|r| Measurement::from_option(r.detection)).collect()
}

/// Track the first `limit` valid frames with `b = 0` and collect the
/// least-squares samples for `b`.
fn calibration_samples(
    meas: &[Measurement],
    dynamics: &DynamicsModel,
    r: &Matrix2<f64>,
    cfg: &TrackerConfig,
) -> Vec<BSample> {
    let obs = ObservationModel { b: 0.0, r: *r, c_prev: Vector2::zeros() };
    let mut tracker = Tracker::new(dynamics.clone(), obs, cfg.init.clone(), cfg.gate);
    let mut samples = Vec::new();
    let mut valid_seen = 0;
    for m in meas {
        if valid_seen >= cfg.calibration_frames {
            break;
        }
        let started = tracker.state().is_some();
        let c_prev = tracker.observation.c_prev;
        if m.valid {
            valid_seen += 1;
        }
        if let Some((state, StepOutcome::Updated)) = tracker.step(m) {
            if started {
                samples.push(BSample { state: state.s, measurement: m.c, prev_measurement: c_prev });
            }
        }
    }
    samples
}

/// Fit the tracker parameters on the measurements and run the filter.
pub fn track(traj: &mut Trajectory, cfg: &TrackerConfig) -> Result<TrackerSummary, PipelineError> {
    let meas = measurements(traj);
    let fixed_b = match cfg.b {
        BSetting::Value(b) => b,
        BSetting::Fit => 0.0,
    };
    let (q, r, lls) = match &cfg.noise {
        NoiseSetting::Manual { q, r } => (*q, *r, Vec::new()),
        NoiseSetting::Em { q_init, r_init } => {
            let res = em_fit(
                &meas,
                &DynamicsModel::new(cfg.period, *q_init),
                &ObservationModel { b: fixed_b, r: *r_init, c_prev: Vector2::zeros() },
                &EmConfig { iterations: cfg.em_iterations, init: cfg.init.clone(), ..EmConfig::default() },
            )?;
            (res.q, res.r, res.log_likelihoods)
        }
    };
    let dynamics = DynamicsModel::new(cfg.period, q);
    let b = match cfg.b {
        BSetting::Value(b) => b,
        BSetting::Fit => {
            let samples = calibration_samples(&meas, &dynamics, &r, cfg);
            if samples.len() >= 2 {
                fit_b(&samples, cfg.b_max)?
            } else {
                0.0
            }
        }
    };

    let obs = ObservationModel { b, r, c_prev: Vector2::zeros() };
    let mut tracker = Tracker::new(dynamics, obs, cfg.init.clone(), cfg.gate);
    let mut gated = 0;
    for (rec, m) in traj.records.iter_mut().zip(&meas) {
        if let Some((state, outcome)) = tracker.step(m) {
            gated += usize::from(outcome == StepOutcome::Gated);
            rec.tracked = Some(quantize_pair(state.position()));
        }
    }
    Ok(TrackerSummary { b, q, r, em_log_likelihoods: lls, gated })
}

pub fn run(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let frames = load_frames(&cfg.input)?;
    if frames.images.is_empty() {
        return Err(PipelineError::NoFrames(PathBuf::new()));
    }
    let mut trajectory = detect_frames(&frames, &cfg.localizer);
    let tracker = match cfg.mode {
        Mode::Detect => None,
        Mode::Track => Some(track(&mut trajectory, &cfg.tracker)?),
    };
    let metrics = compute_metrics(&trajectory);
    Ok(RunOutput { trajectory, metrics, tracker })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |v| format!("{v:.6}"))
}

/// Render the `x` (axis 0) or `y` (axis 1) series as whitespace-separated
/// columns: frame, truth, detection, tracked. Truth and tracked columns are
/// left out when no frame has them; missing values are `NaN`.
pub fn format_plot_series(traj: &Trajectory, axis: usize) -> String {
    let pick = |p: Option<(f64, f64)>| p.map(|(x, y)| if axis == 0 { x } else { y });
    let has_truth = traj.records.iter().any(|r| r.truth.is_some());
    let has_track = traj.records.iter().any(|r| r.tracked.is_some());
    let mut out = String::from("# frame");
    if has_truth {
        out.push_str(" truth");
    }
    out.push_str(" detection");
    if has_track {
        out.push_str(" tracked");
    }
    out.push('\n');
    for r in &traj.records {
        out.push_str(&r.frame.to_string());
        if has_truth {
            out.push(' ');
            out.push_str(&fmt_value(pick(r.truth)));
        }
        out.push(' ');
        out.push_str(&fmt_value(pick(r.detection)));
        if has_track {
            out.push(' ');
            out.push_str(&fmt_value(pick(r.tracked)));
        }
        out.push('\n');
    }
    out
}

/// Write `plot_x.dat` and `plot_y.dat` into `dir`.
pub fn write_plot_data(traj: &Trajectory, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    for (axis, name) in [(0, "plot_x.dat"), (1, "plot_y.dat")] {
        let path = dir.join(name);
        fs::write(&path, format_plot_series(traj, axis)).map_err(PipelineError::io(&path))?;
    }
    Ok(())
}

pub fn write_csv(traj: &Trajectory, path: &Path, timing: bool) -> Result<(), PipelineError> {
    fs::write(path, format_trajectory(traj, timing)).map_err(PipelineError::io(path))
}

pub fn read_csv(path: &Path) -> Result<Trajectory, PipelineError> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    parse_trajectory(&text).map_err(|source| PipelineError::Csv { path: path.to_path_buf(), source })
}

/// Write `trajectory.csv`, the plot series and `metrics.txt` into the
/// configured output directory.
pub fn write_outputs(out: &RunOutput, cfg: &OutputConfig) -> Result<(), PipelineError> {
    let dir = &cfg.dir;
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    write_csv(&out.trajectory, &dir.join("trajectory.csv"), cfg.timing)?;
    write_plot_data(&out.trajectory, dir)?;
    let mut report = out.metrics.to_string();
    if let Some(t) = &out.tracker {
        report.push_str(&format!("tracker_b {:.9}\n", t.b));
        report.push_str(&format!("tracker_gated {}\n", t.gated));
        let q = t.q.diagonal();
        let r = t.r.diagonal();
        report.push_str(&format!("tracker_q_diag {:.6e} {:.6e} {:.6e} {:.6e}\n", q[0], q[1], q[2], q[3]));
        report.push_str(&format!("tracker_r_diag {:.6e} {:.6e}\n", r[0], r[1]));
    }
    let path = dir.join("metrics.txt");
    fs::write(&path, report).map_err(PipelineError::io(&path))
}
