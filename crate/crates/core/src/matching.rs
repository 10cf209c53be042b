//! Feature-space correspondence, corresponded distance, and feature-match
//! quality (FMR and accuracy).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::feature_distance;
use crate::{par, Vec3};

/// Inlier distance for FMR, meters (desk scale).
pub const DESK_INLIER_DIST: f64 = 0.01;
/// Minimum inlier fraction for a pair to count as recovered.
pub const DESK_INLIER_RATIO: f64 = 0.05;
/// Accuracy radius, meters (desk scale).
pub const DESK_ACCURACY_RADIUS: f64 = 0.005;

/// Source index `i` maps to target index `mapping[i]`. Targets may repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub mapping: Vec<usize>,
    /// Feature distance of each matched pair.
    pub distances: Vec<f64>,
}

impl Correspondence {
    pub fn identity(n: usize) -> Self {
        Self { mapping: (0..n).collect(), distances: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// Index of the nearest target feature, lowest index on ties.
fn nearest(f: &[f64], targets: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, t) in targets.iter().enumerate() {
        let d = feature_distance(f, t);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Minimizes the summed feature distance over unconstrained mappings, which
/// is per-source nearest neighbor in feature space.
pub fn match_features(src: &[Vec<f64>], tgt: &[Vec<f64>]) -> Result<Correspondence> {
    if src.is_empty() {
        return Err(Error::EmptyInput("source features"));
    }
    if tgt.is_empty() {
        return Err(Error::EmptyInput("target features"));
    }
    let dim = src[0].len();
    if src.iter().chain(tgt).any(|f| f.len() != dim) {
        return Err(Error::Shape("feature dimensions differ".into()));
    }
    let found = par::map(src, |f| nearest(f, tgt));
    Ok(Correspondence {
        mapping: found.iter().map(|x| x.0).collect(),
        distances: found.iter().map(|x| x.1).collect(),
    })
}

/// Mean squared distance between each source point and its mapped target.
pub fn d_corr(src: &[Vec3], tgt: &[Vec3], mapping: &[usize]) -> f64 {
    assert_eq!(src.len(), mapping.len(), "mapping must cover every source point");
    if src.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (p, &j) in src.iter().zip(mapping) {
        sum += (p - tgt[j]).norm_squared();
    }
    sum / src.len() as f64
}

fn hit_fraction(pred: &[usize], gt: &[usize], tgt: &[Vec3], radius: f64) -> f64 {
    assert_eq!(pred.len(), gt.len(), "mappings must have equal length");
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(gt).filter(|(&a, &b)| (tgt[a] - tgt[b]).norm() < radius).count();
    hits as f64 / pred.len() as f64
}

/// Per-pair feature-match result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmrResult {
    pub inlier_fraction: f64,
    pub recalled: bool,
}

/// Inlier fraction at distance `tau1` between predicted and true matches in
/// the target state, and whether it exceeds `tau2`.
pub fn fmr(pred: &[usize], gt: &[usize], tgt: &[Vec3], tau1: f64, tau2: f64) -> FmrResult {
    let inlier_fraction = hit_fraction(pred, gt, tgt, tau1);
    FmrResult { inlier_fraction, recalled: inlier_fraction > tau2 }
}

/// Fraction of recalled pairs.
pub fn fmr_mean(results: &[FmrResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.recalled).count() as f64 / results.len() as f64
}

/// Fraction of predicted matches within `radius` of the true match.
pub fn corr_accuracy(pred: &[usize], gt: &[usize], tgt: &[Vec3], radius: f64) -> f64 {
    hit_fraction(pred, gt, tgt, radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchReportRow {
    pub pair: usize,
    pub fmr_bit: bool,
    pub inlier_fraction: f64,
    pub accuracy: f64,
}

pub fn write_report<W: std::io::Write>(rows: &[MatchReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
