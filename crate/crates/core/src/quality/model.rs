use std::path::Path;

use super::{BrisqueFeatures, QualityError, BRISQUE_FEATURE_COUNT};

/// Linear regressor over min-max scaled BRISQUE features.
///
/// Each feature is mapped to `[-1, 1]` using the per-feature `min`/`max`
/// seen at training time (features with `max <= min` contribute 0), then
/// `score = bias + sum(weight_i * scaled_i)`, clamped to `[0, 100]`.
///
/// File format: one `key = value` per line, `#` comments, keys `bias`,
/// `weight.N`, `min.N`, `max.N` for `N` in `0..36`. Missing weights default to
/// 0, missing ranges to an empty span.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub bias: f64,
    pub weights: [f64; BRISQUE_FEATURE_COUNT],
    pub min: [f64; BRISQUE_FEATURE_COUNT],
    pub max: [f64; BRISQUE_FEATURE_COUNT],
}

const PACKAGED: &str = include_str!("../../models/brisque_linear.model");

impl ScoreModel {
    /// All-zero weights: every input scores `bias` (clamped).
    pub fn with_bias(bias: f64) -> Self {
        ScoreModel {
            bias,
            weights: [0.0; BRISQUE_FEATURE_COUNT],
            min: [0.0; BRISQUE_FEATURE_COUNT],
            max: [0.0; BRISQUE_FEATURE_COUNT],
        }
    }

    /// Regressor shipped with the crate, fitted on a synthetic blur/noise
    /// distortion ladder.
    pub fn packaged() -> Self {
        Self::parse(PACKAGED).expect("packaged model parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, QualityError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => QualityError::ModelMissing(path.display().to_string()),
            _ => QualityError::Io(e),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, QualityError> {
        let mut model = Self::with_bias(0.0);
        let mut saw_bias = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |reason: String| QualityError::ModelParse {
                line: line_no,
                reason,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let value: f64 = value
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(format!("bad number {value:?}")))?;
            if key == "bias" {
                model.bias = value;
                saw_bias = true;
                continue;
            }
            let (table, index) = key
                .split_once('.')
                .ok_or_else(|| err(format!("unknown key {key:?}")))?;
            let index: usize = index
                .parse()
                .ok()
                .filter(|&n| n < BRISQUE_FEATURE_COUNT)
                .ok_or_else(|| err(format!("bad feature index in {key:?}")))?;
            match table {
                "weight" => model.weights[index] = value,
                "min" => model.min[index] = value,
                "max" => model.max[index] = value,
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        if !saw_bias {
            return Err(QualityError::ModelParse {
                line: 0,
                reason: "missing bias".into(),
            });
        }
        Ok(model)
    }

    pub fn score(&self, features: &BrisqueFeatures) -> f64 {
        let mut total = self.bias;
        for (i, &f) in features.as_slice().iter().enumerate() {
            let (lo, hi) = (self.min[i], self.max[i]);
            if hi > lo {
                total += self.weights[i] * (-1.0 + 2.0 * (f - lo) / (hi - lo));
            }
        }
        total.clamp(0.0, 100.0)
    }
}
