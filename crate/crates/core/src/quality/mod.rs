//! No-reference quality metrics for cystoscopy frames.
//!
//! * [`blur_score`]: variance of the 4-neighbour Laplacian response.
//! * [`brisque_features`]: 36 natural-scene statistics over two scales.
//! * [`ScoreModel`]: pluggable linear regressor mapping features to [0, 100].
//! * [`video_quality`]: min-pooled temporal aggregation of frame qualities.
//!
//! All metrics are pure functions of pixel data.

mod brisque;
mod model;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use brisque::{
    brisque_features, fit_aggd, fit_ggd, mscn, AggdFit, BrisqueFeatures, GgdFit, MscnField,
    BRISQUE_FEATURE_COUNT,
};
pub use model::ScoreModel;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no frame scores to pool")]
    EmptyInput,
    #[error("frame score {0} is outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("score model not found at {0}")]
    ModelMissing(String),
    #[error("score model line {line}: {reason}")]
    ModelParse { line: usize, reason: String },
    #[error("feature vector must hold {BRISQUE_FEATURE_COUNT} finite values")]
    BadFeatures,
    #[error("cannot decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major luminance image with values in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, QualityError> {
        let expected = width * height;
        if pixels.len() != expected {
            return Err(QualityError::DimensionMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    /// Interleaved 8-bit RGB to luminance with ITU-R BT.601 weights.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self, QualityError> {
        if rgb.len() != width * height * 3 {
            return Err(QualityError::DimensionMismatch {
                expected: width * height * 3,
                actual: rgb.len(),
            });
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|px| 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]))
            .collect();
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        use image::DynamicImage;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(buf) => GrayImage {
                width: w,
                height: h,
                pixels: buf.as_raw().iter().map(|&v| f64::from(v)).collect(),
            },
            DynamicImage::ImageLuma16(buf) => GrayImage {
                width: w,
                height: h,
                pixels: buf.as_raw().iter().map(|&v| f64::from(v) / 257.0).collect(),
            },
            other => {
                let rgb = other.to_rgb8();
                GrayImage::from_rgb8(w, h, rgb.as_raw()).expect("rgb buffer matches dimensions")
            }
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, QualityError> {
        Ok(Self::from_dynamic(&image::open(path)?))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub(crate) fn require(&self, min: usize) -> Result<(), QualityError> {
        if self.width < min || self.height < min {
            return Err(QualityError::ImageTooSmall {
                width: self.width,
                height: self.height,
                min,
            });
        }
        Ok(())
    }
}

/// Variance of the Laplacian response `[[0,1,0],[1,-4,1],[0,1,0]]` over the
/// interior pixels (no padding).
pub fn blur_score(img: &GrayImage) -> Result<f64, QualityError> {
    img.require(3)?;
    let (w, h) = (img.width, img.height);
    let mut response = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        let up = &img.pixels[(y - 1) * w..y * w];
        let row = &img.pixels[y * w..(y + 1) * w];
        let down = &img.pixels[(y + 1) * w..(y + 2) * w];
        for x in 1..w - 1 {
            response.push(up[x] + down[x] + row[x - 1] + row[x + 1] - 4.0 * row[x]);
        }
    }
    let n = response.len() as f64;
    let mean = response.iter().sum::<f64>() / n;
    let var = response.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var)
}

/// Pass/fail operating points for a single frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGates {
    /// Minimum Laplacian variance.
    pub blur_threshold: f64,
    /// Maximum BRISQUE score (lower is better).
    pub brisque_threshold: f64,
}

impl Default for QualityGates {
    fn default() -> Self {
        QualityGates {
            blur_threshold: 100.0,
            brisque_threshold: 80.0,
        }
    }
}

impl QualityGates {
    pub fn evaluate(&self, blur: f64, brisque: f64) -> QualityScores {
        QualityScores {
            blur,
            brisque,
            frame_ok: blur >= self.blur_threshold && brisque <= self.brisque_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub blur: f64,
    pub brisque: f64,
    pub frame_ok: bool,
}

/// Blur, BRISQUE and gate verdict for one image.
pub fn score_image(
    img: &GrayImage,
    model: &ScoreModel,
    gates: &QualityGates,
) -> Result<QualityScores, QualityError> {
    let blur = blur_score(img)?;
    let brisque = model.score(&brisque_features(img)?);
    Ok(gates.evaluate(blur, brisque))
}

/// Frame quality on a 100 = best scale from a BRISQUE score.
pub fn frame_quality(brisque: f64) -> f64 {
    (100.0 - brisque).clamp(0.0, 100.0)
}

/// Length of the sliding window used by [`video_quality`].
pub const VIDEO_POOL_WINDOW: usize = 30;

/// Mean of sliding-window minima over per-frame qualities (100 = best).
///
/// The window is [`VIDEO_POOL_WINDOW`] frames, or the whole sequence when
/// shorter. The result lies between the minimum and the mean of the input.
pub fn video_quality(frame_scores: &[f64]) -> Result<f64, QualityError> {
    if frame_scores.is_empty() {
        return Err(QualityError::EmptyInput);
    }
    if let Some(&bad) = frame_scores.iter().find(|s| !(0.0..=100.0).contains(*s)) {
        return Err(QualityError::ScoreOutOfRange(bad));
    }
    let window = VIDEO_POOL_WINDOW.min(frame_scores.len());
    // monotone deque of indices with increasing scores
    let mut deque = std::collections::VecDeque::with_capacity(window);
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &score) in frame_scores.iter().enumerate() {
        while deque.back().is_some_and(|&j| frame_scores[j] >= score) {
            deque.pop_back();
        }
        deque.push_back(i);
        if deque.front().is_some_and(|&j| j + window <= i) {
            deque.pop_front();
        }
        if i + 1 >= window {
            total += frame_scores[*deque.front().expect("non-empty window")];
            count += 1;
        }
    }
    Ok(total / count as f64)
}
