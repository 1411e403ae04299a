#![allow(dead_code)]

pub mod cohort;

use std::path::PathBuf;

use cysto_core::quality::GrayImage;
use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Deserialize)]
pub struct FeatureImage {
    pub file: String,
    pub features: Vec<f64>,
}

#[derive(Deserialize)]
pub struct MscnReference {
    pub file: String,
    pub width: usize,
    pub height: usize,
    pub field: Vec<f64>,
}

#[derive(Deserialize)]
pub struct ScoredImage {
    pub file: String,
    pub score: f64,
    pub target: f64,
}

#[derive(Deserialize)]
pub struct BrisqueReference {
    pub feature_images: Vec<FeatureImage>,
    pub mscn: MscnReference,
    pub score_set: Vec<ScoredImage>,
}

pub fn brisque_reference() -> BrisqueReference {
    let text = std::fs::read_to_string(fixture("brisque_reference.json")).expect("reference json");
    serde_json::from_str(&text).expect("reference json parses")
}

pub fn open(name: &str) -> GrayImage {
    GrayImage::open(fixture(name)).expect("fixture image decodes")
}

/// Average ranks (ties share the mean rank).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}
