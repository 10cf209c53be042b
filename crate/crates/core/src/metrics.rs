//! Evaluation metrics: volumetric IoU, flow MSE, Chamfer distance, F-score
//! and Kendall's rank correlation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, Vec3};

/// Sample count for volumetric IoU.
pub const MIOU_SAMPLES: usize = 100_000;
/// F-score distance threshold, meters (desk scale).
pub const DESK_FSCORE_DIST: f64 = 0.01;

const MIOU_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouEstimate {
    pub iou: f64,
    /// No sample fell inside either shape; `iou` is reported as 0.
    pub union_empty: bool,
}

/// Monte Carlo IoU of two membership tests over uniform samples of the box
/// `[lo, hi]`. Each fixed-size chunk of samples draws from its own stream of
/// the seeded generator, so the estimate is independent of thread count.
pub fn miou<A, B>(pred: A, gt: B, lo: Vec3, hi: Vec3, n_samples: usize, seed: u64) -> Result<IouEstimate>
where
    A: Fn(&Vec3) -> bool + Sync,
    B: Fn(&Vec3) -> bool + Sync,
{
    if n_samples == 0 {
        return Err(Error::Config("miou needs at least one sample".into()));
    }
    let counts = par::map_chunks(n_samples, MIOU_CHUNK, |range| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((range.start / MIOU_CHUNK) as u64);
        let mut inter = 0usize;
        let mut union = 0usize;
        for _ in range {
            let p = Vec3::new(
                lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                lo.y + (hi.y - lo.y) * rng.random::<f64>(),
                lo.z + (hi.z - lo.z) * rng.random::<f64>(),
            );
            let (a, b) = (pred(&p), gt(&p));
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        (inter, union)
    });
    let (inter, union) = counts.iter().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
    if union == 0 {
        return Ok(IouEstimate { iou: 0.0, union_empty: true });
    }
    Ok(IouEstimate { iou: inter as f64 / union as f64, union_empty: false })
}

/// Mean squared 3-vector error over all points.
pub fn flow_mse(pred: &[Vec3], gt: &[Vec3]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "flow arrays must align");
    if pred.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (a, b) in pred.iter().zip(gt) {
        sum += (a - b).norm_squared();
    }
    sum / pred.len() as f64
}

/// Mean squared error restricted to the listed points (e.g. the visible set).
pub fn flow_mse_subset(pred: &[Vec3], gt: &[Vec3], ids: &[usize]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "flow arrays must align");
    if ids.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &i in ids {
        sum += (pred[i] - gt[i]).norm_squared();
    }
    sum / ids.len() as f64
}

fn nearest_sq(p: &Vec3, set: &[Vec3]) -> f64 {
    set.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

fn directed_sums(a: &[Vec3], b: &[Vec3]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer point set"));
    }
    let ab = par::map(a, |p| nearest_sq(p, b)).into_iter().sum::<f64>();
    let ba = par::map(b, |q| nearest_sq(q, a)).into_iter().sum::<f64>();
    Ok((ab, ba))
}

/// Symmetric sum of squared nearest-neighbor distances, unnormalized.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let (ab, ba) = directed_sums(a, b)?;
    Ok(ab + ba)
}

/// Chamfer with each direction averaged over its source set.
pub fn chamfer_mean(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let (ab, ba) = directed_sums(a, b)?;
    Ok(ab / a.len() as f64 + ba / b.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn within_fraction(from: &[Vec3], to: &[Vec3], tau: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let hits = par::map(from, |p| nearest_sq(p, to) < tau * tau).into_iter().filter(|&h| h).count();
    hits as f64 / from.len() as f64
}

/// Precision is the fraction of `source` points closer than `tau` to some
/// `gt` point; recall is the converse.
pub fn fscore(source: &[Vec3], gt: &[Vec3], tau: f64) -> Result<FScore> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("F-score threshold must be positive, got {tau}")));
    }
    let precision = within_fraction(source, gt, tau);
    let recall = within_fraction(gt, source, tau);
    let f = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(FScore { precision, recall, f })
}

/// `(P - Q) / (P + Q)` over all item pairs, where a pair is concordant when
/// both score lists order it the same way. Pairs tied in either list count
/// toward neither.
pub fn kendall_tau(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("rankings of {} and {} items", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::EmptyInput("ranking with at least two items"));
    }
    let n = pred.len();
    let (mut p, mut q) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (pred[i] - pred[j]).partial_cmp(&0.0);
            let b = (gt[i] - gt[j]).partial_cmp(&0.0);
            use std::cmp::Ordering::Equal;
            match (a, b) {
                (Some(x), Some(y)) if x != Equal && y != Equal => {
                    if x == y {
                        p += 1
                    } else {
                        q += 1
                    }
                }
                _ => {}
            }
        }
    }
    if p + q == 0 {
        return Err(Error::AllTied);
    }
    Ok((p - q) as f64 / (p + q) as f64)
}
