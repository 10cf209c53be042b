//! Training objectives, pair and query-point samplers, and the joint trainer.
//!
//! The correspondence objective is a hinge contrastive loss on embedding
//! distance. The geodesic variant labels a pair positive when the two points
//! are closer than `d_thres` along the object and grows the negative margin
//! with `log(d_O / d_thres)`, so parts that touch in space but are far apart
//! on the object are pushed further apart in feature space.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decoders::{encode_observation, encode_step, Encoded, Model, ModelConfig, ModelGrad};
use crate::error::{Error, Result};
use crate::neural::{sigmoid, Adam, AdamConfig};
use crate::softsim::{observe, Camera, TrajectoryRecord};
use crate::tetmesh::{bounding_box, containing_tet, GeodesicTable, TetMesh};
use crate::{par, Vec3};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ContrastiveConfig {
    pub m_pos: f64,
    pub m_neg: f64,
    /// Geodesic threshold, meters.
    pub d_thres: f64,
}

impl ContrastiveConfig {
    pub fn new(m_pos: f64, m_neg: f64, d_thres: f64) -> Result<Self> {
        let cfg = Self { m_pos, m_neg, d_thres };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.m_pos && self.m_pos < self.m_neg) {
            return Err(Error::Config(format!(
                "margins must satisfy 0 <= m_pos < m_neg, got {} and {}",
                self.m_pos, self.m_neg
            )));
        }
        if !(self.d_thres > 0.0) {
            return Err(Error::Config(format!("d_thres must be positive, got {}", self.d_thres)));
        }
        Ok(())
    }
}

/// Euclidean distance between feature vectors.
pub fn feature_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Loss and `dL/dD` for the positive hinge `[D - m_pos]^2_+`.
fn positive_hinge(d: f64, m_pos: f64) -> (f64, f64) {
    let h = (d - m_pos).max(0.0);
    (h * h, 2.0 * h)
}

/// Loss and `dL/dD` for the negative hinge `[margin - D]^2_+`.
fn negative_hinge(d: f64, margin: f64) -> (f64, f64) {
    let h = (margin - d).max(0.0);
    (h * h, -2.0 * h)
}

/// Spreads `dL/dD` onto both feature vectors.
fn distance_grads(fp: &[f64], fq: &[f64], d: f64, dl_dd: f64) -> (Vec<f64>, Vec<f64>) {
    if d == 0.0 || dl_dd == 0.0 {
        return (vec![0.0; fp.len()], vec![0.0; fq.len()]);
    }
    let gp: Vec<f64> = fp.iter().zip(fq).map(|(a, b)| dl_dd * (a - b) / d).collect();
    let gq = gp.iter().map(|g| -g).collect();
    (gp, gq)
}

/// Contrastive loss with fixed margins, and its feature gradients.
pub fn contrastive_euclid_grad(
    fp: &[f64],
    fq: &[f64],
    is_match: bool,
    cfg: &ContrastiveConfig,
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = feature_distance(fp, fq);
    let (l, dl) = if is_match { positive_hinge(d, cfg.m_pos) } else { negative_hinge(d, cfg.m_neg) };
    let (gp, gq) = distance_grads(fp, fq, d, dl);
    (l, gp, gq)
}

pub fn contrastive_euclid(fp: &[f64], fq: &[f64], is_match: bool, cfg: &ContrastiveConfig) -> f64 {
    contrastive_euclid_grad(fp, fq, is_match, cfg).0
}

/// Geodesic contrastive loss and its feature gradients. `d_o` is the
/// geodesic distance between the two points, meters.
pub fn contrastive_geo_grad(
    fp: &[f64],
    fq: &[f64],
    d_o: f64,
    cfg: &ContrastiveConfig,
) -> (f64, Vec<f64>, Vec<f64>) {
    debug_assert!(d_o >= 0.0);
    if d_o < cfg.d_thres {
        return contrastive_euclid_grad(fp, fq, true, cfg);
    }
    let d = feature_distance(fp, fq);
    let margin = (d_o / cfg.d_thres).ln() + cfg.m_neg;
    let (l, dl) = negative_hinge(d, margin);
    let (gp, gq) = distance_grads(fp, fq, d, dl);
    (l, gp, gq)
}

pub fn contrastive_geo(fp: &[f64], fq: &[f64], d_o: f64, cfg: &ContrastiveConfig) -> f64 {
    contrastive_geo_grad(fp, fq, d_o, cfg).0
}

/// Which correspondence objective the trainer optimizes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum CorrLoss {
    Geodesic,
    Euclidean,
    None,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Pair {
    pub p: Vec3,
    pub q: Vec3,
    pub p_vertex: usize,
    pub q_vertex: usize,
    /// Geodesic distance, meters.
    pub geodesic: f64,
    /// `geodesic < d_thres`.
    pub positive: bool,
}

impl Pair {
    pub fn same_vertex(&self) -> bool {
        self.p_vertex == self.q_vertex
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

/// Vertex pairs across two states of one object.
///
/// Positives are the same vertex in both states. In geodesic mode negatives
/// are drawn from pairs at least `d_thres` apart; in Euclidean mode from any
/// two distinct vertices. Every pair's `positive` flag is `geodesic < d_thres`.
#[allow(clippy::too_many_arguments)]
pub fn sample_pairs<R: Rng + ?Sized>(
    src: &[Vec3],
    tgt: &[Vec3],
    mesh: &TetMesh,
    table: &GeodesicTable,
    d_thres: f64,
    counts: (usize, usize),
    mode: CorrLoss,
    rng: &mut R,
) -> Result<PairBatch> {
    let n = mesh.vertices.len();
    if src.len() != n || tgt.len() != n {
        return Err(Error::Shape("state sizes do not match the mesh".into()));
    }
    let dist = |u: usize, v: usize| table.vertex_dist(mesh, u, v);
    let far: Vec<Vec<usize>> = (0..n).map(|u| (0..n).filter(|&v| dist(u, v) >= d_thres).collect()).collect();
    let has_far: Vec<usize> = (0..n).filter(|&u| !far[u].is_empty()).collect();
    if counts.1 > 0 && has_far.is_empty() && mode == CorrLoss::Geodesic {
        return Err(Error::NoNegatives { d_thres, diameter: table.diameter() });
    }
    let make = |u: usize, v: usize| {
        let g = dist(u, v);
        Pair { p: src[u], q: tgt[v], p_vertex: u, q_vertex: v, geodesic: g, positive: g < d_thres }
    };
    let mut pairs = Vec::with_capacity(counts.0 + counts.1);
    for _ in 0..counts.0 {
        let u = rng.random_range(0..n);
        pairs.push(make(u, u));
    }
    for _ in 0..counts.1 {
        let (u, v) = match mode {
            CorrLoss::Geodesic => {
                let u = *has_far.choose(rng).expect("checked nonempty");
                (u, *far[u].choose(rng).expect("u has far vertices"))
            }
            _ => {
                if n < 2 {
                    return Err(Error::NoNegatives { d_thres, diameter: table.diameter() });
                }
                let u = rng.random_range(0..n);
                let mut v = rng.random_range(0..n - 1);
                if v >= u {
                    v += 1;
                }
                (u, v)
            }
        };
        pairs.push(make(u, v));
    }
    Ok(PairBatch { pairs })
}

/// Query points drawn from a normal around the centre of mass, per-axis
/// standard deviation `std_scale` times the bounding-box half extent, each
/// labelled inside/outside by exact tet containment.
pub fn sample_query_points<R: Rng + ?Sized>(
    mesh: &TetMesh,
    positions: &[Vec3],
    std_scale: f64,
    n: usize,
    rng: &mut R,
) -> Vec<(Vec3, bool)> {
    if n == 0 {
        return Vec::new();
    }
    let com = positions.iter().sum::<Vec3>() / positions.len() as f64;
    let (lo, hi) = bounding_box(positions);
    let half = (hi - lo) / 2.0;
    let normals: Vec<Normal<f64>> = (0..3)
        .map(|k| Normal::new(com[k], (std_scale * half[k]).max(1e-9)).expect("finite std"))
        .collect();
    (0..n)
        .map(|_| {
            let p = Vec3::new(normals[0].sample(rng), normals[1].sample(rng), normals[2].sample(rng));
            (p, containing_tet(mesh, positions, &p).is_some())
        })
        .collect()
}

/// Numerically stable binary cross-entropy from a logit; returns the loss
/// and `dL/dlogit`.
pub fn bce_with_logit(logit: f64, target: bool) -> (f64, f64) {
    let t = if target { 1.0 } else { 0.0 };
    let loss = logit.max(0.0) - logit * t + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - t)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Records drawn per step; query points and pairs are split among them.
    pub records_per_step: usize,
    pub query_points: usize,
    pub pairs: usize,
    pub m_pos: f64,
    pub m_neg: f64,
    /// `d_thres` as a fraction of the mesh geodesic diameter.
    pub d_thres_fraction: f64,
    pub corr_loss: CorrLoss,
    /// Pair each negative anchor with its feature-nearest valid vertex.
    pub hardest_negatives: bool,
    pub w_occupancy: f64,
    pub w_flow: f64,
    pub w_corr: f64,
    /// Query-point spread relative to the bounding-box half extent.
    pub query_std: f64,
    /// Steps between validation passes used for checkpoint selection.
    pub eval_every: usize,
    /// Every n-th record is held out for validation (0 disables).
    pub val_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            seed: 0,
            lr: 1e-3,
            weight_decay: 1e-4,
            records_per_step: 4,
            query_points: 512,
            pairs: 256,
            m_pos: 0.1,
            m_neg: 1.4,
            d_thres_fraction: 0.1,
            corr_loss: CorrLoss::Geodesic,
            hardest_negatives: true,
            w_occupancy: 1.0,
            w_flow: 1.0,
            w_corr: 1.0,
            query_std: 0.5,
            eval_every: 25,
            val_every: 5,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reads a TOML key-value file; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        crate::pipeline::parse_toml(text)
    }

    pub fn contrastive(&self, table: &GeodesicTable) -> Result<ContrastiveConfig> {
        ContrastiveConfig::new(self.m_pos, self.m_neg, self.d_thres_fraction * table.diameter())
    }
}

/// Trajectory records with everything derived from them that training needs.
pub struct Dataset {
    pub mesh: TetMesh,
    pub table: GeodesicTable,
    pub records: Vec<TrajectoryRecord>,
    pub camera: Camera,
}

/// Per-record encodings of the pre-state observation, the action, and the
/// post-state observation.
#[derive(Debug, Clone)]
pub struct RecordContext {
    pub geo_pre: Encoded,
    pub dynamics: Encoded,
    pub geo_post: Encoded,
}

impl Dataset {
    pub fn new(mesh: TetMesh, table: GeodesicTable, records: Vec<TrajectoryRecord>, camera: Camera) -> Self {
        Self { mesh, table, records, camera }
    }

    pub fn contexts(&self, cfg: &ModelConfig) -> Result<Vec<RecordContext>> {
        par::map_indexed(self.records.len(), |i| self.context(cfg, i)).into_iter().collect()
    }

    pub fn context(&self, cfg: &ModelConfig, i: usize) -> Result<RecordContext> {
        let r = &self.records[i];
        let (geo_pre, dynamics) = encode_step(&r.observation, &r.action, cfg)?;
        let post_obs = observe(&self.mesh, &r.post, &self.camera);
        let geo_post = encode_observation(&post_obs.points, cfg)?;
        Ok(RecordContext { geo_pre, dynamics, geo_post })
    }

    /// Indices of training and validation records.
    pub fn split(&self, val_every: usize) -> (Vec<usize>, Vec<usize>) {
        let n = self.records.len();
        if val_every < 2 || n < 2 {
            return ((0..n).collect(), Vec::new());
        }
        (0..n).partition(|i| (i + 1) % val_every != 0)
    }
}

/// Predicted per-vertex flow for a record.
pub fn predict_flow(model: &Model, record: &TrajectoryRecord, ctx: &RecordContext) -> Vec<Vec3> {
    par::map(&record.pre, |p| {
        let fusion = model.fusion_inputs(&ctx.geo_pre, p);
        model.flow(&ctx.dynamics, &fusion, p)
    })
}

/// Mean squared flow error over all vertices of the given records.
pub fn flow_mse_over(model: &Model, data: &Dataset, ctxs: &[RecordContext], idx: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for &i in idx {
        let pred = predict_flow(model, &data.records[i], &ctxs[i]);
        for (a, b) in pred.iter().zip(&data.records[i].flow) {
            total += (a - b).norm_squared();
        }
        count += pred.len();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub occupancy: f64,
    pub flow: f64,
    pub correspondence: f64,
    /// Validation flow MSE when evaluated at this step.
    pub val_flow: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Checkpoint with the lowest dynamics validation loss.
    pub model: Model,
    pub best_step: usize,
    pub curve: Vec<StepLog>,
    /// Step at which a non-finite loss stopped training.
    pub diverged_at: Option<usize>,
}

impl TrainResult {
    /// Loss curve as CSV; every row carries `config_hash` and the tool version.
    pub fn write_csv<W: Write>(&self, out: W, config_hash: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "total", "occupancy", "flow", "correspondence", "val_flow", "config_hash", "version"])?;
        for s in &self.curve {
            w.write_record([
                s.step.to_string(),
                s.total.to_string(),
                s.occupancy.to_string(),
                s.flow.to_string(),
                s.correspondence.to_string(),
                s.val_flow.map(|v| v.to_string()).unwrap_or_default(),
                config_hash.to_string(),
                crate::VERSION.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// For each anchor, the candidate with the nearest feature among those
/// `valid` for it, lowest index on ties.
pub fn hardest_negative(anchor: &[f64], candidates: &[Vec<f64>], valid: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in candidates.iter().enumerate() {
        if !valid(j) {
            continue;
        }
        let d = feature_distance(anchor, c);
        if best.is_none_or(|b| d < b.1) {
            best = Some((j, d));
        }
    }
    best.map(|b| b.0)
}

/// Replaces the target of every negative pair by its anchor's hardest valid
/// negative under the current model.
fn harden(
    model: &Model,
    ctx: &RecordContext,
    rec: &TrajectoryRecord,
    data: &Dataset,
    d_thres: f64,
    mode: CorrLoss,
    mut batch: PairBatch,
) -> PairBatch {
    let cands = par::map(&rec.post, |q| model.embed(&ctx.geo_post, q));
    let negatives: Vec<usize> = (0..batch.pairs.len()).filter(|&i| !batch.pairs[i].same_vertex()).collect();
    let picks = par::map(&negatives, |&i| {
        let u = batch.pairs[i].p_vertex;
        let f = model.embed(&ctx.geo_pre, &rec.pre[u]);
        hardest_negative(&f, &cands, |v| match mode {
            CorrLoss::Geodesic => data.table.vertex_dist(&data.mesh, u, v) >= d_thres,
            _ => v != u,
        })
    });
    for (&i, pick) in negatives.iter().zip(picks) {
        if let Some(v) = pick {
            let pair = &mut batch.pairs[i];
            let g = data.table.vertex_dist(&data.mesh, pair.p_vertex, v);
            *pair = Pair { q: rec.post[v], q_vertex: v, geodesic: g, positive: g < d_thres, ..*pair };
        }
    }
    batch
}

/// One loss term of a step, tagged with its record.
enum Work {
    Occupancy(usize, Vec3, bool),
    Flow(usize, usize),
    Pair(usize, Pair),
}

const CHUNK: usize = 64;

/// Joint minimization of occupancy BCE, flow MSE and the correspondence loss
/// with Adam. Fully determined by `cfg.seed` and the dataset.
pub fn train(data: &Dataset, mut model: Model, cfg: &TrainConfig) -> Result<TrainResult> {
    if data.records.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    model.check_fusion()?;
    let contrastive = cfg.contrastive(&data.table)?;
    let ctxs = data.contexts(&model.cfg)?;
    let (train_idx, val_idx) = data.split(cfg.val_every);
    let select_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() };
    let mut opts: Vec<Adam> = model.buffer_lens().iter().map(|&n| Adam::new(adam, n)).collect();

    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut diverged_at = None;
    let n_pos = cfg.pairs / 2;
    let n_neg = cfg.pairs - n_pos;

    for step in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.records_per_step.max(1))
            .map(|_| *train_idx.choose(&mut rng).expect("nonempty training split"))
            .collect();
        let share = |total: usize, k: usize| total / batch.len() + usize::from(k < total % batch.len());
        let mut work = Vec::new();
        let (mut occ_n, mut flow_n, mut pair_n) = (0, 0, 0);
        for (k, &ri) in batch.iter().enumerate() {
            let rec = &data.records[ri];
            if cfg.w_occupancy > 0.0 {
                let n = share(cfg.query_points, k);
                for (p, inside) in sample_query_points(&data.mesh, &rec.pre, cfg.query_std, n, &mut rng) {
                    work.push(Work::Occupancy(ri, p, inside));
                }
                occ_n += n;
            }
            if cfg.w_flow > 0.0 {
                work.extend((0..rec.pre.len()).map(|v| Work::Flow(ri, v)));
                flow_n += rec.pre.len();
            }
            if cfg.w_corr > 0.0 && cfg.corr_loss != CorrLoss::None {
                let np = share(n_pos, k);
                let nn = share(n_neg, k);
                let pairs = sample_pairs(
                    &rec.pre,
                    &rec.post,
                    &data.mesh,
                    &data.table,
                    contrastive.d_thres,
                    (np, nn),
                    cfg.corr_loss,
                    &mut rng,
                )?;
                let pairs = if cfg.hardest_negatives {
                    harden(&model, &ctxs[ri], rec, data, contrastive.d_thres, cfg.corr_loss, pairs)
                } else {
                    pairs
                };
                pair_n += pairs.pairs.len();
                work.extend(pairs.pairs.into_iter().map(|pr| Work::Pair(ri, pr)));
            }
        }
        let w_occ = if occ_n > 0 { cfg.w_occupancy / occ_n as f64 } else { 0.0 };
        let w_flow = if flow_n > 0 { cfg.w_flow / flow_n as f64 } else { 0.0 };
        let w_pair = if pair_n > 0 { cfg.w_corr / pair_n as f64 } else { 0.0 };

        let parts = par::map_chunks(work.len(), CHUNK, |range| {
            let mut grad = ModelGrad::zeros(&model);
            let mut sums = [0.0f64; 3];
            for item in &work[range] {
                match item {
                    Work::Occupancy(ri, p, inside) => {
                        let mut l = 0.0;
                        model.occupancy_backward(
                            &ctxs[*ri].geo_pre,
                            p,
                            |logit| {
                                let (loss, dl) = bce_with_logit(logit, *inside);
                                l = loss;
                                dl * w_occ
                            },
                            &mut grad,
                        );
                        sums[0] += l;
                    }
                    Work::Flow(ri, v) => {
                        let (rec, ctx) = (&data.records[*ri], &ctxs[*ri]);
                        let target = rec.flow[*v];
                        let mut sq = 0.0;
                        model.flow_backward_joint(
                            &ctx.geo_pre,
                            &ctx.dynamics,
                            &rec.pre[*v],
                            |pred| {
                                let err = pred - target;
                                sq = err.norm_squared();
                                err * (2.0 * w_flow)
                            },
                            &mut grad,
                        );
                        sums[1] += sq;
                    }
                    Work::Pair(ri, pair) => {
                        let ctx = &ctxs[*ri];
                        let fp = model.embed(&ctx.geo_pre, &pair.p);
                        let fq = model.embed(&ctx.geo_post, &pair.q);
                        let (l, gp, gq) = match cfg.corr_loss {
                            CorrLoss::Euclidean => {
                                contrastive_euclid_grad(&fp, &fq, pair.same_vertex(), &contrastive)
                            }
                            _ => contrastive_geo_grad(&fp, &fq, pair.geodesic, &contrastive),
                        };
                        sums[2] += l;
                        let gp: Vec<f64> = gp.iter().map(|g| g * w_pair).collect();
                        let gq: Vec<f64> = gq.iter().map(|g| g * w_pair).collect();
                        model.embed_backward(&ctx.geo_pre, &pair.p, &gp, &mut grad);
                        model.embed_backward(&ctx.geo_post, &pair.q, &gq, &mut grad);
                    }
                }
            }
            (sums, grad)
        });
        let mut grad = ModelGrad::zeros(&model);
        let mut sums = [0.0f64; 3];
        for (s, g) in &parts {
            for k in 0..3 {
                sums[k] += s[k];
            }
            grad.add(g);
        }
        let occ = if occ_n > 0 { sums[0] / occ_n as f64 } else { 0.0 };
        let flow = if flow_n > 0 { sums[1] / flow_n as f64 } else { 0.0 };
        let corr = if pair_n > 0 { sums[2] / pair_n as f64 } else { 0.0 };
        let total = cfg.w_occupancy * occ + cfg.w_flow * flow + cfg.w_corr * corr;
        if !total.is_finite() || !grad.is_finite() {
            diverged_at = Some(step);
            break;
        }
        for ((buf, g), opt) in model.buffers_mut().into_iter().zip(grad.buffers()).zip(opts.iter_mut()) {
            opt.step(buf, g)?;
        }
        let mut log = StepLog { step, total, occupancy: occ, flow, correspondence: corr, val_flow: None };
        let last = step + 1 == cfg.steps;
        if cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last) {
            let v = if cfg.w_flow > 0.0 {
                flow_mse_over(&model, data, &ctxs, &select_idx)
            } else {
                total
            };
            log.val_flow = Some(v);
            if v.is_finite() && v < best.0 {
                best = (v, model.clone(), step);
            }
        }
        curve.push(log);
    }
    if best.0.is_infinite() && diverged_at.is_none() {
        best = (f64::NAN, model, cfg.steps.saturating_sub(1));
    }
    Ok(TrainResult { model: best.1, best_step: best.2, curve, diverged_at })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ContrastiveConfig {
        ContrastiveConfig::new(0.1, 1.4, 0.05).unwrap()
    }

    #[test]
    fn hinge_edges() {
        let c = cfg();
        let a = [0.0, 0.0];
        assert_eq!(contrastive_euclid(&a, &[0.1, 0.0], true, &c), 0.0);
        assert_eq!(contrastive_euclid(&a, &[1.4, 0.0], false, &c), 0.0);
        assert_eq!(contrastive_euclid(&a, &[3.0, 0.0], false, &c), 0.0);
        let l = contrastive_euclid(&a, &[0.0, 1.1], true, &c);
        assert!((l - 1.0).abs() < 1e-15);
    }

    #[test]
    fn geodesic_margin_closes_exactly() {
        let c = cfg();
        let a = [0.0];
        assert_eq!(contrastive_geo(&a, &[0.1], 0.0, &c), 0.0);
        let d_o = c.d_thres * std::f64::consts::E;
        let margin = (d_o / c.d_thres).ln() + c.m_neg;
        assert_eq!(contrastive_geo(&a, &[margin], d_o, &c), 0.0);
        assert!(contrastive_geo(&a, &[c.m_neg + 0.5], d_o, &c) > 0.0);
    }

    #[test]
    fn invalid_margins_rejected() {
        assert!(ContrastiveConfig::new(1.0, 0.5, 0.1).is_err());
        assert!(ContrastiveConfig::new(0.1, 1.4, 0.0).is_err());
        assert!(ContrastiveConfig::new(-0.1, 1.4, 0.1).is_err());
    }

    #[test]
    fn bce_matches_direct_formula() {
        for &z in &[-3.0, -0.2, 0.0, 0.7, 4.0] {
            let p = sigmoid(z);
            let (l1, _) = bce_with_logit(z, true);
            let (l0, _) = bce_with_logit(z, false);
            assert!((l1 + p.ln()).abs() < 1e-12);
            assert!((l0 + (1.0 - p).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn config_parses_partial_toml() {
        let c = TrainConfig::from_toml("steps = 7\nm_neg = 2.0\ncorr_loss = \"euclidean\"\n").unwrap();
        assert_eq!(c.steps, 7);
        assert_eq!(c.m_neg, 2.0);
        assert_eq!(c.corr_loss, CorrLoss::Euclidean);
        assert_eq!(c.lr, 1e-3);
        assert!(TrainConfig::from_toml("steps = \"many\"").is_err());
    }
}
