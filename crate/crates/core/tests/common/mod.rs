//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volfield::tetmesh::TetMesh;
use volfield::{shapes, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest coordinate-wise relative error; magnitudes below `floor` are
/// compared against `floor` so exact zeros do not divide by zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Dense Floyd–Warshall over the same adjacency list format the mesh uses.
pub fn floyd_warshall(adjacency: &[Vec<usize>], weights: &[Vec<f64>]) -> Vec<f64> {
    let n = adjacency.len();
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
        for (&j, &w) in adjacency[i].iter().zip(&weights[i]) {
            d[i * n + j] = d[i * n + j].min(w);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    d
}

/// Face-connected random polycube of at most `max_cells` cubes (six tets
/// each) with jittered vertices, so edge weights are irregular.
pub fn random_mesh(r: &mut impl Rng, max_cells: usize) -> TetMesh {
    let target = r.random_range(1..=max_cells);
    let mut cells: Vec<[i32; 3]> = vec![[0, 0, 0]];
    while cells.len() < target {
        let base = cells[r.random_range(0..cells.len())];
        let axis = r.random_range(0..3);
        let mut c = base;
        c[axis] += if r.random_bool(0.5) { 1 } else { -1 };
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let cell = r.random_range(0.02..0.1);
    let grid = shapes::polycube(&cells, cell);
    loop {
        let jittered: Vec<Vec3> = grid
            .vertices
            .iter()
            .map(|v| v + Vec3::from_fn(|_, _| r.random_range(-0.1..0.1) * cell))
            .collect();
        if let Ok(m) = TetMesh::new(jittered, grid.tets.clone()) {
            return m;
        }
    }
}

/// Per-source argmin over every target, lowest index on ties.
pub fn brute_match(src: &[Vec<f64>], tgt: &[Vec<f64>]) -> Vec<usize> {
    src.iter()
        .map(|f| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, t) in tgt.iter().enumerate() {
                let d = f.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn sq(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

pub fn brute_dcorr(src: &[Vec3], tgt: &[Vec3], xi: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..src.len() {
        s += sq(&src[i], &tgt[xi[i]]);
    }
    s / src.len() as f64
}

fn nearest(p: &Vec3, set: &[Vec3]) -> f64 {
    let mut m = f64::INFINITY;
    for q in set {
        let d = sq(p, q);
        if d < m {
            m = d;
        }
    }
    m
}

pub fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let mut ab = 0.0;
    for p in a {
        ab += nearest(p, b);
    }
    let mut ba = 0.0;
    for q in b {
        ba += nearest(q, a);
    }
    ab + ba
}

pub fn brute_flow_mse(pred: &[Vec3], gt: &[Vec3]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += sq(&pred[i], &gt[i]);
    }
    s / pred.len() as f64
}

/// Fraction of predicted matches within `radius` of the true match.
pub fn brute_hits(pred: &[usize], gt: &[usize], tgt: &[Vec3], radius: f64) -> f64 {
    let mut hits = 0;
    for i in 0..pred.len() {
        if sq(&tgt[pred[i]], &tgt[gt[i]]).sqrt() < radius {
            hits += 1;
        }
    }
    hits as f64 / pred.len() as f64
}

/// `(precision, recall, f)` by direct counting.
pub fn brute_fscore(source: &[Vec3], gt: &[Vec3], tau: f64) -> (f64, f64, f64) {
    let frac = |from: &[Vec3], to: &[Vec3]| {
        if from.is_empty() {
            return 0.0;
        }
        let mut hits = 0;
        for p in from {
            if to.iter().any(|q| sq(p, q) < tau * tau) {
                hits += 1;
            }
        }
        hits as f64 / from.len() as f64
    };
    let p = frac(source, gt);
    let r = frac(gt, source);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Concordant minus discordant over untied pairs; `None` when every pair ties.
pub fn brute_kendall(a: &[f64], b: &[f64]) -> Option<f64> {
    let sign = |x: f64| (x > 0.0) as i64 - (x < 0.0) as i64;
    let (mut p, mut q) = (0i64, 0i64);
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i < j {
                let s = sign(a[i] - a[j]) * sign(b[i] - b[j]);
                if s > 0 {
                    p += 1;
                } else if s < 0 {
                    q += 1;
                }
            }
        }
    }
    (p + q > 0).then(|| (p - q) as f64 / (p + q) as f64)
}

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

pub fn random_points(r: &mut impl Rng, n: usize, scale: f64) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::from_fn(|_, _| r.random_range(-scale..scale))).collect()
}
