//! BRISQUE natural-scene statistics.
//!
//! Per scale: a generalized Gaussian fit `(alpha, variance)` of the MSCN
//! field, then an asymmetric generalized Gaussian fit
//! `(alpha, mean, left variance, right variance)` of the products of each
//! MSCN coefficient with its horizontal, vertical, main-diagonal and
//! anti-diagonal neighbour (circular at the borders). The second scale is the
//! 2x2 block mean of the input. Shape parameters are moment-matched over the
//! grid `0.2, 0.201, ..., 10.0`.

use std::sync::OnceLock;

use libm::tgamma;
use serde::{Deserialize, Serialize};

use super::{GrayImage, QualityError};

pub const BRISQUE_FEATURE_COUNT: usize = 36;

const WINDOW_RADIUS: usize = 3;
const WINDOW_SIGMA: f64 = 7.0 / 6.0;
const STABILIZER: f64 = 1.0;

/// Smallest shape parameter on the fitting grid; also the shape reported for
/// an all-zero sample.
pub const SHAPE_GRID_START: f64 = 0.2;
const SHAPE_GRID_STEP: f64 = 0.001;
const SHAPE_GRID_LEN: usize = 9801;

/// Mean-subtracted contrast-normalized coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MscnField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl MscnField {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

fn gaussian_taps() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut taps = [0.0; 2 * WINDOW_RADIUS + 1];
    for (i, tap) in taps.iter_mut().enumerate() {
        let d = i as f64 - WINDOW_RADIUS as f64;
        *tap = (-(d * d) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian smoothing with replicated borders.
fn smooth(data: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let r = WINDOW_RADIUS as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            rows[y * width + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * row[clamp(x as isize + k as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[clamp(y as isize + k as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// `(I - mu) / (sigma + 1)` with mu and sigma from a 7x7 Gaussian window
/// (sigma 7/6), replicate borders.
pub fn mscn(img: &GrayImage) -> Result<MscnField, QualityError> {
    img.require(2 * WINDOW_RADIUS + 1)?;
    let (w, h) = (img.width(), img.height());
    // Smoothing commutes with a constant offset, so work relative to one
    // pixel: flat regions come out exactly zero and the variance estimate
    // avoids cancellation between large squares.
    let origin = img.pixels()[0];
    let centered: Vec<f64> = img.pixels().iter().map(|p| p - origin).collect();
    let squared: Vec<f64> = centered.iter().map(|p| p * p).collect();
    let taps = gaussian_taps();
    let mu = smooth(&centered, w, h, &taps);
    let mu_sq = smooth(&squared, w, h, &taps);
    let values = centered
        .iter()
        .zip(mu.iter().zip(&mu_sq))
        .map(|(p, (m, m2))| {
            let sigma = (m2 - m * m).abs().sqrt();
            (p - m) / (sigma + STABILIZER)
        })
        .collect();
    Ok(MscnField {
        width: w,
        height: h,
        values,
    })
}

struct ShapeGrid {
    alpha: Vec<f64>,
    /// Gamma(1/a) Gamma(3/a) / Gamma(2/a)^2
    ggd_ratio: Vec<f64>,
    /// Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a))
    aggd_ratio: Vec<f64>,
}

fn shape_grid() -> &'static ShapeGrid {
    static GRID: OnceLock<ShapeGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let alpha: Vec<f64> = (0..SHAPE_GRID_LEN)
            .map(|i| SHAPE_GRID_START + i as f64 * SHAPE_GRID_STEP)
            .collect();
        let ggd_ratio = alpha
            .iter()
            .map(|a| tgamma(1.0 / a) * tgamma(3.0 / a) / tgamma(2.0 / a).powi(2))
            .collect();
        let aggd_ratio = alpha
            .iter()
            .map(|a| tgamma(2.0 / a).powi(2) / (tgamma(1.0 / a) * tgamma(3.0 / a)))
            .collect();
        ShapeGrid {
            alpha,
            ggd_ratio,
            aggd_ratio,
        }
    })
}

fn argmin_by(values: &[f64], cost: impl Fn(f64) -> f64) -> usize {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (i, &v) in values.iter().enumerate() {
        let c = cost(v);
        if c < best_cost {
            best = i;
            best_cost = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgdFit {
    pub alpha: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggdFit {
    pub alpha: f64,
    pub mean: f64,
    pub left_variance: f64,
    pub right_variance: f64,
}

/// Zero-mean generalized Gaussian fit by moment matching.
///
/// An all-zero sample has no shape information; it yields the degenerate
/// fit `alpha = 0.2` (grid start), `variance = 0`.
pub fn fit_ggd(samples: &[f64]) -> GgdFit {
    if samples.iter().all(|&v| v == 0.0) {
        return GgdFit {
            alpha: SHAPE_GRID_START,
            variance: 0.0,
        };
    }
    let n = samples.len() as f64;
    let variance = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let abs_mean = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let rho = variance / (abs_mean * abs_mean);
    let grid = shape_grid();
    let idx = argmin_by(&grid.ggd_ratio, |r| (rho - r).abs());
    GgdFit {
        alpha: grid.alpha[idx],
        variance,
    }
}

/// Asymmetric generalized Gaussian fit by moment matching.
///
/// An all-zero sample yields `alpha = 0.2` and zeros elsewhere. When only
/// one side of zero is populated the asymmetry correction is taken at its
/// limit (it tends to 1 as the side ratio goes to 0 or infinity).
pub fn fit_aggd(samples: &[f64]) -> AggdFit {
    if samples.iter().all(|&v| v == 0.0) {
        return AggdFit {
            alpha: SHAPE_GRID_START,
            mean: 0.0,
            left_variance: 0.0,
            right_variance: 0.0,
        };
    }
    let (mut left_sq, mut left_n, mut right_sq, mut right_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &v in samples {
        if v < 0.0 {
            left_sq += v * v;
            left_n += 1;
        } else if v > 0.0 {
            right_sq += v * v;
            right_n += 1;
        }
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    let left_std = if left_n > 0 { (left_sq / left_n as f64).sqrt() } else { 0.0 };
    let right_std = if right_n > 0 { (right_sq / right_n as f64).sqrt() } else { 0.0 };
    let n = samples.len() as f64;
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let r_norm = if left_std > 0.0 && right_std > 0.0 {
        let g = left_std / right_std;
        r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2)
    } else {
        r_hat
    };
    let grid = shape_grid();
    let idx = argmin_by(&grid.aggd_ratio, |r| (r - r_norm).powi(2));
    let alpha = grid.alpha[idx];
    let mean = (right_std - left_std) * tgamma(2.0 / alpha)
        / (tgamma(1.0 / alpha) * tgamma(3.0 / alpha)).sqrt();
    AggdFit {
        alpha,
        mean,
        left_variance: left_std * left_std,
        right_variance: right_std * right_std,
    }
}

/// 36 BRISQUE statistics. Order per scale: GGD alpha, GGD variance, then
/// `(alpha, mean, left variance, right variance)` for the horizontal,
/// vertical, main-diagonal and anti-diagonal products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BrisqueFeatures(Vec<f64>);

impl BrisqueFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self, QualityError> {
        if values.len() != BRISQUE_FEATURE_COUNT || !values.iter().all(|v| v.is_finite()) {
            return Err(QualityError::BadFeatures);
        }
        Ok(BrisqueFeatures(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// True when both scales produced an all-zero MSCN field (flat input).
    pub fn is_degenerate(&self) -> bool {
        [0, 18].iter().all(|&s| self.0[s] == SHAPE_GRID_START && self.0[s + 1] == 0.0)
    }
}

impl TryFrom<Vec<f64>> for BrisqueFeatures {
    type Error = QualityError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        BrisqueFeatures::new(values)
    }
}

impl From<BrisqueFeatures> for Vec<f64> {
    fn from(f: BrisqueFeatures) -> Self {
        f.0
    }
}

/// Neighbour offsets `(dy, dx)`: the product at `(y, x)` pairs the
/// coefficient with the one at `(y - dy, x - dx)`, wrapping at the borders.
const PRODUCT_SHIFTS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (-1, 1)];

fn scale_features(img: &GrayImage, out: &mut Vec<f64>) -> Result<(), QualityError> {
    let field = mscn(img)?;
    let ggd = fit_ggd(&field.values);
    out.push(ggd.alpha);
    out.push(ggd.variance);
    let (w, h) = (field.width as isize, field.height as isize);
    let mut products = Vec::with_capacity(field.values.len());
    for (dy, dx) in PRODUCT_SHIFTS {
        products.clear();
        for y in 0..h {
            let sy = (y - dy).rem_euclid(h);
            for x in 0..w {
                let sx = (x - dx).rem_euclid(w);
                products.push(field.values[(y * w + x) as usize] * field.values[(sy * w + sx) as usize]);
            }
        }
        let fit = fit_aggd(&products);
        out.extend([fit.alpha, fit.mean, fit.left_variance, fit.right_variance]);
    }
    Ok(())
}

/// 2x2 block mean; a trailing odd row or column is dropped.
fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() / 2, img.height() / 2);
    GrayImage::from_fn(w, h, |x, y| {
        (img.get(2 * x, 2 * y) + img.get(2 * x + 1, 2 * y) + img.get(2 * x, 2 * y + 1) + img.get(2 * x + 1, 2 * y + 1))
            / 4.0
    })
}

/// Two-scale BRISQUE feature vector. Requires at least 14x14 pixels.
///
/// A flat image has an all-zero MSCN field on both scales and produces the
/// degenerate fits described on [`fit_ggd`] and [`fit_aggd`]; see
/// [`BrisqueFeatures::is_degenerate`].
pub fn brisque_features(img: &GrayImage) -> Result<BrisqueFeatures, QualityError> {
    img.require(4 * WINDOW_RADIUS + 2)?;
    let mut values = Vec::with_capacity(BRISQUE_FEATURE_COUNT);
    scale_features(img, &mut values)?;
    scale_features(&downsample(img), &mut values)?;
    BrisqueFeatures::new(values)
}
