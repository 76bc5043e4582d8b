//! Flat grayscale morphology: erosion, dilation, opening, closing.
//!
//! Borders replicate edge pixels (coordinates are clamped into the image).
//! Structuring elements are symmetric and decompose into one horizontal run
//! per row offset, which lets erosion and dilation run as per-row running
//! extrema followed by a vertical extremum over `2r + 1` rows. The result is
//! identical to the direct definition.

use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// All offsets with `dx² + dy² ≤ r²`.
    Disk,
    /// The `(2r + 1) × (2r + 1)` square.
    Square,
}

/// A flat, symmetric structuring element anchored at its center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    shape: Shape,
    radius: usize,
    /// `(dy, half_width)`: the row `dy` covers `dx ∈ [-half_width, half_width]`.
    runs: Vec<(isize, usize)>,
}

impl StructuringElement {
    pub fn new(shape: Shape, radius: usize) -> Self {
        let r = radius as isize;
        let runs = (-r..=r)
            .map(|dy| {
                let half = match shape {
                    Shape::Square => radius,
                    Shape::Disk => {
                        let mut w = 0usize;
                        while ((w + 1) * (w + 1)) as isize + dy * dy <= r * r {
                            w += 1;
                        }
                        w
                    }
                };
                (dy, half)
            })
            .collect();
        Self { shape, radius, runs }
    }

    pub fn disk(radius: usize) -> Self {
        Self::new(Shape::Disk, radius)
    }

    pub fn square(radius: usize) -> Self {
        Self::new(Shape::Square, radius)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Every `(dx, dy)` offset in the mask. Always contains `(0, 0)`.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        self.runs
            .iter()
            .flat_map(|&(dy, half)| {
                let h = half as isize;
                (-h..=h).map(move |dx| (dx, dy))
            })
            .collect()
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::disk(3)
    }
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

impl Extremum {
    #[inline]
    fn pick(self, a: u8, b: u8) -> u8 {
        match self {
            Extremum::Min => a.min(b),
            Extremum::Max => a.max(b),
        }
    }
}

/// Row extrema for every half-width `0..=max_half`: `tables[w][x]` is the
/// extremum of `row[x - w ..= x + w]` with clamped indices. Each width
/// extends the previous one by its two new end samples.
fn row_extrema(row: &[u8], max_half: usize, op: Extremum, tables: &mut [Vec<u8>]) {
    let n = row.len();
    tables[0].copy_from_slice(row);
    for w in 1..=max_half {
        let (done, rest) = tables.split_at_mut(w);
        let prev = &done[w - 1];
        let cur = &mut rest[0];
        for x in 0..n {
            let left = row[x.saturating_sub(w)];
            let right = row[(x + w).min(n - 1)];
            cur[x] = op.pick(prev[x], op.pick(left, right));
        }
    }
}

fn rank_filter(img: &GrayImage, se: &StructuringElement, op: Extremum) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let max_half = se.runs.iter().map(|&(_, half)| half).max().unwrap_or(0);

    // lookup[half][y * w + x]: horizontal extremum of half-width `half`.
    let mut lookup = vec![vec![0u8; w * h]; max_half + 1];
    let mut tables = vec![vec![0u8; w]; max_half + 1];
    for y in 0..h {
        row_extrema(img.row(y), max_half, op, &mut tables);
        for (dst, src) in lookup.iter_mut().zip(&tables) {
            dst[y * w..(y + 1) * w].copy_from_slice(src);
        }
    }

    let init = match op {
        Extremum::Min => u8::MAX,
        Extremum::Max => u8::MIN,
    };
    let mut out = vec![init; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for &(dy, half) in &se.runs {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let src = &lookup[half][yy * w..(yy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = op.pick(*d, s);
            }
        }
    }
    GrayImage::new(w, h, out).expect("same dimensions as input")
}

/// `out(p) = min_{q ∈ se} img(p + q)`.
pub fn erode(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    rank_filter(img, se, Extremum::Min)
}

/// `out(p) = max_{q ∈ se} img(p + q)`.
pub fn dilate(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    rank_filter(img, se, Extremum::Max)
}

/// Erosion then dilation; removes bright details smaller than `se`.
pub fn open(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    dilate(&erode(img, se), se)
}

/// Dilation then erosion; fills dark details smaller than `se`.
pub fn close(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    erode(&dilate(img, se), se)
}

/// Artifact suppression ahead of localization: a closing against eyelashes,
/// then an opening against specular highlights.
pub fn preprocess(
    img: &GrayImage,
    se_close: &StructuringElement,
    se_open: &StructuringElement,
) -> GrayImage {
    open(&close(img, se_close), se_open)
}
