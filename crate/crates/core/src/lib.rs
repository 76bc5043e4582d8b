//! Pupil center localization and tracking for grayscale eye images.
//!
//! The detection chain per frame is:
//!
//! 1. [`morphology::preprocess`]: a closing to suppress eyelashes followed by
//!    an opening to suppress specular highlights.
//! 2. [`localizer::coarse_localize`]: darkest-quantile threshold, largest
//!    connected component, centroid and a cropped region of interest.
//! 3. [`localizer::refine_localize`]: competitive agglomeration clustering
//!    ([`caa`]) over `(x, y, intensity)` features of the crop; the center is
//!    the centroid of the darkest cluster.
//!
//! Across frames, [`tracker`] runs an extended Kalman filter with an
//! exponential observation model, whose noise covariances can be fitted by
//! EM and whose exponent parameter can be fitted by least squares.
//! [`pipeline`] wires everything together for the `pupiltrack` binary.

pub mod caa;
pub mod image;
pub mod localizer;
pub mod morphology;
pub mod pgm;
pub mod pipeline;
pub mod synth;
pub mod tracker;

pub use image::GrayImage;
