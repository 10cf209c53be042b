//! Triplanar feature fields: three axis-aligned feature grids (xy, xz, yz)
//! queried by orthographic projection, bilinear interpolation and summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Plane order and the two world axes each plane spans.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Three `res x res x dim` planes over the box `[lo, hi]`. Grid nodes sit on
/// the box corners, so node `i` of an axis is at `lo + i / (res - 1) * extent`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureField {
    pub res: usize,
    pub dim: usize,
    pub lo: Vec3,
    pub hi: Vec3,
    /// Layout: `[plane][row (second axis)][col (first axis)][channel]`.
    pub values: Vec<f64>,
}

/// One bilinear tap: flat offset of the node's first channel and its weight.
pub type Tap = (usize, f64);

impl FeatureField {
    pub fn zeros(res: usize, dim: usize, lo: Vec3, hi: Vec3) -> Result<Self> {
        if res < 2 || dim == 0 {
            return Err(Error::Shape(format!("feature field needs res >= 2 and dim >= 1, got {res}x{dim}")));
        }
        if !(0..3).all(|k| hi[k] > lo[k]) {
            return Err(Error::Config(format!("degenerate field box {lo:?} .. {hi:?}")));
        }
        Ok(Self { res, dim, lo, hi, values: vec![0.0; 3 * res * res * dim] })
    }

    /// Field over the normalized cube `[-1, 1]^3`.
    pub fn unit(res: usize, dim: usize) -> Result<Self> {
        Self::zeros(res, dim, Vec3::repeat(-1.0), Vec3::repeat(1.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node_offset(&self, plane: usize, row: usize, col: usize) -> usize {
        ((plane * self.res + row) * self.res + col) * self.dim
    }

    /// Continuous grid coordinate of `p` along world axis `k`, clamped.
    fn grid_coord(&self, p: &Vec3, k: usize) -> f64 {
        let t = (p[k] - self.lo[k]) / (self.hi[k] - self.lo[k]);
        t.clamp(0.0, 1.0) * (self.res - 1) as f64
    }

    /// The four bilinear taps of `p` on one plane.
    pub fn plane_taps(&self, plane: usize, p: &Vec3) -> [Tap; 4] {
        let (a, b) = PLANE_AXES[plane];
        let u = self.grid_coord(p, a);
        let v = self.grid_coord(p, b);
        let last = self.res - 2;
        let c0 = (u.floor() as usize).min(last);
        let r0 = (v.floor() as usize).min(last);
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        [
            (self.node_offset(plane, r0, c0), (1.0 - fu) * (1.0 - fv)),
            (self.node_offset(plane, r0, c0 + 1), fu * (1.0 - fv)),
            (self.node_offset(plane, r0 + 1, c0), (1.0 - fu) * fv),
            (self.node_offset(plane, r0 + 1, c0 + 1), fu * fv),
        ]
    }

    /// All twelve taps of `p`, plane by plane.
    pub fn taps(&self, p: &Vec3) -> [Tap; 12] {
        let mut out = [(0, 0.0); 12];
        for plane in 0..3 {
            out[plane * 4..plane * 4 + 4].copy_from_slice(&self.plane_taps(plane, p));
        }
        out
    }

    /// Interpolated feature of one plane.
    pub fn query_plane(&self, plane: usize, p: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (off, w) in self.plane_taps(plane, p) {
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.values[off..off + self.dim]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Sum of the three interpolated plane features.
    pub fn query(&self, p: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (off, w) in self.taps(p) {
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.values[off..off + self.dim]) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// Routes `dL/dfeature` at `p` to the touched cells of `grad`, which has
    /// the layout of `values`.
    pub fn backward(&self, p: &Vec3, dfeat: &[f64], grad: &mut [f64]) {
        for (off, w) in self.taps(p) {
            if w != 0.0 {
                for (g, d) in grad[off..off + self.dim].iter_mut().zip(dfeat) {
                    *g += w * d;
                }
            }
        }
    }
}

/// Splats per-point features onto each plane with bilinear weights and mean
/// pooling per node. Returns the field and whether the point set was empty.
pub fn scatter_points(
    points: &[Vec3],
    features: &[Vec<f64>],
    res: usize,
    dim: usize,
    lo: Vec3,
    hi: Vec3,
) -> Result<(FeatureField, bool)> {
    if points.len() != features.len() {
        return Err(Error::Shape(format!(
            "{} points but {} feature vectors",
            points.len(),
            features.len()
        )));
    }
    let mut field = FeatureField::zeros(res, dim, lo, hi)?;
    if points.is_empty() {
        return Ok((field, true));
    }
    let mut weight = vec![0.0; 3 * res * res];
    for (p, f) in points.iter().zip(features) {
        if f.len() != dim {
            return Err(Error::Shape(format!("feature has {} channels, expected {dim}", f.len())));
        }
        for (off, w) in field.taps(p) {
            if w == 0.0 {
                continue;
            }
            weight[off / dim] += w;
            for (v, x) in field.values[off..off + dim].iter_mut().zip(f) {
                *v += w * x;
            }
        }
    }
    for (node, &w) in weight.iter().enumerate() {
        if w > 0.0 {
            for v in &mut field.values[node * dim..(node + 1) * dim] {
                *v /= w;
            }
        }
    }
    Ok((field, false))
}
