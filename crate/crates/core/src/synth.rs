//! Synthetic eye-image sequences with analytic ground-truth pupil centers.
//!
//! Each frame is a bright background, a mid-gray iris disk and a dark pupil
//! disk sharing one center that moves at constant velocity. Pixels straddling
//! the pupil or iris boundary are 4×4 supersampled so the rendered disk is
//! faithful at subpixel precision. Optional artifacts: bright specular disks
//! scattered in the iris annulus, dark 1–2 px eyelash streaks in the upper
//! half, and clamped i.i.d. Gaussian intensity noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::image::GrayImage;

const SUPERSAMPLE: usize = 4;
const SPECULAR_INTENSITY: f64 = 250.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Invalid(String),
    #[error("pupil trajectory leaves the frame at frame {frame}: center ({x:.3}, {y:.3})")]
    TrajectoryOutOfFrame { frame: usize, x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub pupil_radius: f64,
    /// Outer radius of the iris disk; must exceed `pupil_radius`.
    pub iris_radius: f64,
    pub pupil_intensity: u8,
    pub iris_intensity: u8,
    pub background_intensity: u8,
    pub initial_center: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub noise_sigma: f64,
    pub specular_spot_count: usize,
    pub specular_spot_radius: f64,
    pub eyelash_streak_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            frame_count: 100,
            pupil_radius: 75.0,
            iris_radius: 170.0,
            pupil_intensity: 30,
            iris_intensity: 110,
            background_intensity: 190,
            initial_center: (300.0, 230.0),
            velocity: (0.6, 0.3),
            noise_sigma: 0.0,
            specular_spot_count: 0,
            specular_spot_radius: 2.0,
            eyelash_streak_count: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        let k = frame as f64;
        (
            self.initial_center.0 + k * self.velocity.0,
            self.initial_center.1 + k * self.velocity.1,
        )
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |msg: &str| Err(SynthError::Invalid(msg.to_string()));
        if self.width == 0 || self.height == 0 {
            return invalid("width and height must be at least 1");
        }
        if self.frame_count == 0 {
            return invalid("frame_count must be at least 1");
        }
        if !(self.pupil_radius > 0.0 && self.pupil_radius.is_finite()) {
            return invalid("pupil_radius must be positive");
        }
        if !(self.iris_radius > self.pupil_radius && self.iris_radius.is_finite()) {
            return invalid("iris_radius must exceed pupil_radius");
        }
        if !(self.pupil_intensity < self.iris_intensity
            && self.iris_intensity < self.background_intensity)
        {
            return invalid("intensities must satisfy pupil < iris < background");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid("noise_sigma must be a non-negative number");
        }
        if self.specular_spot_count > 0 && !(self.specular_spot_radius > 0.0) {
            return invalid("specular_spot_radius must be positive");
        }
        let vals = [
            self.initial_center.0,
            self.initial_center.1,
            self.velocity.0,
            self.velocity.1,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return invalid("center and velocity must be finite");
        }
        // Linear motion: checking both ends covers every frame.
        let r = self.pupil_radius;
        let max_x = (self.width - 1) as f64 - r;
        let max_y = (self.height - 1) as f64 - r;
        for frame in [0, self.frame_count - 1] {
            let (x, y) = self.center_at(frame);
            if x < r || y < r || x > max_x || y > max_y {
                return Err(SynthError::TrajectoryOutOfFrame { frame, x, y });
            }
        }
        Ok(())
    }
}

/// Per-frame analytic pupil centers.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub centers: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<GrayImage>,
    pub truth: GroundTruth,
}

pub fn generate_sequence(cfg: &SynthConfig) -> Result<Sequence, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frames = Vec::with_capacity(cfg.frame_count);
    let mut centers = Vec::with_capacity(cfg.frame_count);
    for k in 0..cfg.frame_count {
        let center = cfg.center_at(k);
        frames.push(render_frame(cfg, center, &mut rng));
        centers.push(center);
    }
    Ok(Sequence { frames, truth: GroundTruth { centers } })
}

/// Render one frame with the pupil at `center`, drawing artifact placement
/// and noise from `rng`.
pub fn render_frame(cfg: &SynthConfig, center: (f64, f64), rng: &mut impl Rng) -> GrayImage {
    let mut canvas = render_eye(cfg, center);
    for _ in 0..cfg.specular_spot_count {
        let (sx, sy) = sample_in_annulus(rng, center, cfg.pupil_radius, cfg.iris_radius);
        paint_disk(&mut canvas, cfg.width, (sx, sy), cfg.specular_spot_radius, SPECULAR_INTENSITY);
    }
    for _ in 0..cfg.eyelash_streak_count {
        paint_streak(&mut canvas, cfg, rng);
    }
    let noise = (cfg.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"));
    let data = canvas
        .into_iter()
        .map(|v| {
            let v = match &noise {
                Some(n) => v + n.sample(rng),
                None => v,
            };
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(cfg.width, cfg.height, data).expect("validated dimensions")
}

fn render_eye(cfg: &SynthConfig, (cx, cy): (f64, f64)) -> Vec<f64> {
    let pupil = cfg.pupil_intensity as f64;
    let iris = cfg.iris_intensity as f64;
    let background = cfg.background_intensity as f64;
    let (r_pupil, r_iris) = (cfg.pupil_radius, cfg.iris_radius);
    let shade = |x: f64, y: f64| {
        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
        if d2 <= r_pupil * r_pupil {
            pupil
        } else if d2 <= r_iris * r_iris {
            iris
        } else {
            background
        }
    };
    // Half-diagonal of a pixel: beyond this margin from a boundary circle,
    // the whole pixel lies on one side.
    let margin = std::f64::consts::FRAC_1_SQRT_2 + 1e-9;
    let step = 1.0 / SUPERSAMPLE as f64;
    let mut out = Vec::with_capacity(cfg.width * cfg.height);
    for py in 0..cfg.height {
        for px in 0..cfg.width {
            let (x, y) = (px as f64, py as f64);
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            let near_edge = (d - r_pupil).abs() <= margin || (d - r_iris).abs() <= margin;
            if !near_edge {
                out.push(shade(x, y));
                continue;
            }
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let ox = -0.5 + (sx as f64 + 0.5) * step;
                    let oy = -0.5 + (sy as f64 + 0.5) * step;
                    acc += shade(x + ox, y + oy);
                }
            }
            out.push(acc / (SUPERSAMPLE * SUPERSAMPLE) as f64);
        }
    }
    out
}

fn sample_in_annulus(rng: &mut impl Rng, (cx, cy): (f64, f64), inner: f64, outer: f64) -> (f64, f64) {
    let r2 = rng.random_range(inner * inner..=outer * outer);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let r = r2.sqrt();
    (cx + r * theta.cos(), cy + r * theta.sin())
}

fn paint_disk(canvas: &mut [f64], width: usize, (cx, cy): (f64, f64), radius: f64, value: f64) {
    let height = canvas.len() / width;
    let x0 = (cx - radius).floor().max(0.0) as usize;
    let y0 = (cy - radius).floor().max(0.0) as usize;
    let x1 = ((cx + radius).ceil() as usize).min(width - 1);
    let y1 = ((cy + radius).ceil() as usize).min(height - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            if d2 <= radius * radius {
                canvas[y * width + x] = value;
            }
        }
    }
}

/// A dark, roughly vertical line segment of width 1 or 2 somewhere in the
/// upper half of the frame.
fn paint_streak(canvas: &mut [f64], cfg: &SynthConfig, rng: &mut impl Rng) {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let thickness: f64 = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
    let length = rng.random_range(20.0..=60.0_f64).min(h / 2.0);
    let angle = std::f64::consts::FRAC_PI_2 + rng.random_range(-0.5..=0.5);
    let ax = rng.random_range(0.0..w);
    let ay = rng.random_range(0.0..(h / 2.0).max(1.0));
    let bx = ax + length * angle.cos();
    let by = (ay + length * angle.sin()).min(h / 2.0);
    let half = thickness / 2.0;
    let value = cfg.pupil_intensity as f64;

    let x0 = (ax.min(bx) - half).floor().max(0.0) as usize;
    let x1 = ((ax.max(bx) + half).ceil().max(0.0) as usize).min(cfg.width - 1);
    let y0 = (ay.min(by) - half).floor().max(0.0) as usize;
    let y1 = ((ay.max(by) + half).ceil().max(0.0) as usize).min(cfg.height - 1);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64, y as f64);
            let t = (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0);
            let d2 = (px - ax - t * dx).powi(2) + (py - ay - t * dy).powi(2);
            if d2 <= half * half {
                canvas[y * cfg.width + x] = value;
            }
        }
    }
}
