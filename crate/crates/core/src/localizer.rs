//! Per-frame pupil center estimation.
//!
//! The coarse stage thresholds the darkest fraction of the (preprocessed)
//! image, keeps the largest 4-connected dark component and takes its
//! centroid; the component's bounding box plus a margin is the coarse region
//! of interest (CRI). The refined stage clusters the CRI pixels on normalized
//! `(x, y, intensity)` features with competitive agglomeration and returns the
//! centroid of the darkest cluster.

use std::collections::VecDeque;

use thiserror::Error;

use crate::caa::{self, CaaConfig, CaaError, Points};
use crate::image::GrayImage;
use crate::morphology::{self, StructuringElement};

#[derive(Debug, Error, PartialEq)]
pub enum LocalizeError {
    #[error("no dark region: largest component has {found} pixels, need {required}")]
    NoDarkRegion { found: usize, required: usize },
    #[error("degenerate region of interest {0:?}")]
    DegenerateRoi(Rect),
    #[error(transparent)]
    Clustering(#[from] CaaError),
}

/// Axis-aligned pixel rectangle `[x0, x0 + width) × [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Whether the point lies within the pixel-center span of the rectangle.
    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        x >= self.x0 as f64
            && y >= self.y0 as f64
            && x <= (self.x0 + self.width) as f64 - 1.0
            && y <= (self.y0 + self.height) as f64 - 1.0
    }

    pub fn within(&self, img: &GrayImage) -> bool {
        self.x0 + self.width <= img.width() && self.y0 + self.height <= img.height()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseConfig {
    /// Fraction `ρ` of darkest pixels that defines the threshold.
    pub dark_fraction: f64,
    /// Pixels added on each side of the dark component's bounding box.
    pub margin: usize,
    /// Smallest acceptable dark component, in pixels.
    pub min_region: usize,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self { dark_fraction: 0.05, margin: 15, min_region: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseResult {
    pub center: (f64, f64),
    pub cri: Rect,
    pub thresholded_pixel_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedResult {
    pub center: (f64, f64),
    pub cluster_count: usize,
    pub darkest_cluster_mean_intensity: f64,
}

/// Intensity at the `ρ` quantile: the smallest `t` such that more than
/// `⌊ρ·N⌋` pixels are `≤ t`.
pub fn dark_quantile(img: &GrayImage, dark_fraction: f64) -> u8 {
    let mut hist = [0usize; 256];
    for &v in img.as_slice() {
        hist[v as usize] += 1;
    }
    let n = img.len();
    let rank = ((dark_fraction.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n - 1);
    let mut cum = 0;
    for (v, &count) in hist.iter().enumerate() {
        cum += count;
        if cum > rank {
            return v as u8;
        }
    }
    255
}

/// Dark mask: pixels strictly below the quantile; if that is smaller than
/// `min_region` (the darkest plateau alone exceeds `ρ`), pixels at or below
/// it, unless that would be the whole image.
pub fn dark_mask(img: &GrayImage, cfg: &CoarseConfig) -> Vec<bool> {
    let t = dark_quantile(img, cfg.dark_fraction);
    let strict: Vec<bool> = img.as_slice().iter().map(|&v| v < t).collect();
    if strict.iter().filter(|&&b| b).count() >= cfg.min_region {
        return strict;
    }
    let inclusive: Vec<bool> = img.as_slice().iter().map(|&v| v <= t).collect();
    if inclusive.iter().all(|&b| b) {
        return vec![false; img.len()];
    }
    inclusive
}

/// Pixel indices of the largest 4-connected `true` component; the first in
/// raster order wins among equal sizes.
pub fn largest_component(mask: &[bool], width: usize, height: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = (i % width, i / width);
            let mut visit = |n: usize| {
                if mask[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

pub fn coarse_localize(img: &GrayImage, cfg: &CoarseConfig) -> Result<CoarseResult, LocalizeError> {
    let (w, h) = (img.width(), img.height());
    let mask = dark_mask(img, cfg);
    let region = largest_component(&mask, w, h);
    let required = cfg.min_region.max(1);
    if region.len() < required {
        return Err(LocalizeError::NoDarkRegion { found: region.len(), required });
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (usize::MAX, usize::MAX, 0, 0);
    for &i in &region {
        let (x, y) = (i % w, i / w);
        sx += x as f64;
        sy += y as f64;
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let n = region.len() as f64;
    let x0 = min_x.saturating_sub(cfg.margin);
    let y0 = min_y.saturating_sub(cfg.margin);
    let x1 = (max_x + cfg.margin).min(w - 1);
    let y1 = (max_y + cfg.margin).min(h - 1);
    Ok(CoarseResult {
        center: (sx / n, sy / n),
        cri: Rect { x0, y0, width: x1 - x0 + 1, height: y1 - y0 + 1 },
        thresholded_pixel_count: region.len(),
    })
}

fn normalize(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// One `(x, y, intensity)` feature per CRI pixel in raster order, each
/// dimension min-max normalized to `[0, 1]` over the CRI. A constant
/// dimension maps to zeros.
pub fn extract_features(img: &GrayImage, cri: Rect) -> Result<Points, LocalizeError> {
    if cri.area() == 0 || !cri.within(img) {
        return Err(LocalizeError::DegenerateRoi(cri));
    }
    let (mut lo, mut hi) = (u8::MAX, u8::MIN);
    for y in cri.y0..cri.y0 + cri.height {
        for &v in &img.row(y)[cri.x0..cri.x0 + cri.width] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let (xmax, ymax) = ((cri.width - 1) as f64, (cri.height - 1) as f64);
    let mut data = Vec::with_capacity(cri.area() * 3);
    for dy in 0..cri.height {
        let row = img.row(cri.y0 + dy);
        for dx in 0..cri.width {
            data.push(normalize(dx as f64, 0.0, xmax));
            data.push(normalize(dy as f64, 0.0, ymax));
            data.push(normalize(row[cri.x0 + dx] as f64, lo as f64, hi as f64));
        }
    }
    Ok(Points::new(3, data).expect("three values per pixel"))
}

pub fn refine_localize(
    img: &GrayImage,
    coarse: &CoarseResult,
    caa_cfg: &CaaConfig,
) -> Result<RefinedResult, LocalizeError> {
    let cri = coarse.cri;
    let features = extract_features(img, cri)?;
    let state = caa::run(&features, caa_cfg)?;
    let labels = state.hard_assignments();

    let c_count = state.cluster_count();
    let mut count = vec![0usize; c_count];
    let mut sum_i = vec![0.0; c_count];
    let mut sum_x = vec![0.0; c_count];
    let mut sum_y = vec![0.0; c_count];
    for (j, &c) in labels.iter().enumerate() {
        count[c] += 1;
        sum_i[c] += features.point(j)[2];
        sum_x[c] += (j % cri.width) as f64;
        sum_y[c] += (j / cri.width) as f64;
    }
    let darkest = (0..c_count)
        .filter(|&c| count[c] > 0)
        .fold(None, |best: Option<usize>, c| match best {
            Some(b) if sum_i[b] / count[b] as f64 <= sum_i[c] / count[c] as f64 => Some(b),
            _ => Some(c),
        })
        .expect("every point has a cluster");
    let n = count[darkest] as f64;
    Ok(RefinedResult {
        center: (cri.x0 as f64 + sum_x[darkest] / n, cri.y0 as f64 + sum_y[darkest] / n),
        cluster_count: c_count,
        darkest_cluster_mean_intensity: sum_i[darkest] / n,
    })
}

/// Everything needed to localize the pupil in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalizerConfig {
    pub se_close: StructuringElement,
    pub se_open: StructuringElement,
    pub coarse: CoarseConfig,
    pub caa: CaaConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub coarse: CoarseResult,
    pub refined: RefinedResult,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        self.refined.center
    }
}

/// Preprocess, coarse localization, then refinement.
pub fn detect(img: &GrayImage, cfg: &LocalizerConfig) -> Result<Detection, LocalizeError> {
    let clean = morphology::preprocess(img, &cfg.se_close, &cfg.se_open);
    let coarse = coarse_localize(&clean, &cfg.coarse)?;
    let refined = refine_localize(&clean, &coarse, &cfg.caa)?;
    Ok(Detection { coarse, refined })
}
