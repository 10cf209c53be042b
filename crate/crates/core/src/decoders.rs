//! The three implicit heads: occupancy, correspondence embedding and flow.
//!
//! Each head decodes `(p, feature(p))` with a small network, where the feature
//! is read from a triplanar field. Observations and actions are turned into
//! fields by splatting per-point features onto the planes; a learnable linear
//! map per plane plus learnable base planes turn those raw splats into the
//! decoder features. Points are expressed in an object-centric frame centred
//! on the observed points.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{sigmoid, Activation, Cache, LayerSpec, Mlp};
use crate::softsim::{Action, PartialObservation};
use crate::triplane::{scatter_points, FeatureField};
use crate::Vec3;

/// Planning threshold on occupancy probability.
pub const DEFAULT_TAU: f64 = 0.75;
/// Raw splat channels of an observation: constant plus local coordinates.
pub const GEO_RAW: usize = 4;
/// Raw splat channels of an action: `(p_g - p_i, p_r)`.
pub const ACTION_RAW: usize = 6;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub res: usize,
    pub feature_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub embed_dim: usize,
    /// Half-size of the object-centric frame, meters.
    pub half_extent: f64,
    /// Feed occupancy intermediates into the flow decoder.
    pub fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            res: 32,
            feature_dim: 64,
            width: 32,
            depth: 4,
            embed_dim: 32,
            half_extent: 0.3,
            fusion: true,
        }
    }
}

/// Object-centric coordinate frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Frame {
    pub center: Vec3,
    pub half: f64,
}

impl Frame {
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.half
    }

    pub fn around(points: &[Vec3], half: f64) -> Self {
        let center = if points.is_empty() {
            Vec3::zeros()
        } else {
            points.iter().sum::<Vec3>() / points.len() as f64
        };
        Self { center, half }
    }
}

/// Raw splatted field of an observation or action, in a frame.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Encoded {
    pub frame: Frame,
    pub raw: FeatureField,
    pub empty: bool,
}

/// Learnable base planes plus a per-plane linear map from raw channels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Encoder {
    pub base: FeatureField,
    /// Layout `[plane][feature][raw channel]`.
    pub proj: Vec<f64>,
    pub raw_dim: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(res: usize, dim: usize, raw_dim: usize, rng: &mut R) -> Result<Self> {
        let base = FeatureField::unit(res, dim)?;
        let bound = (6.0 / (raw_dim + dim) as f64).sqrt();
        let proj = (0..3 * dim * raw_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Ok(Self { base, proj, raw_dim })
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    /// Feature at a local-frame point.
    pub fn feature(&self, enc: &Encoded, local: &Vec3) -> Vec<f64> {
        let dim = self.dim();
        let mut out = self.base.query(local);
        for plane in 0..3 {
            let raw = enc.raw.query_plane(plane, local);
            let w = &self.proj[plane * dim * self.raw_dim..(plane + 1) * dim * self.raw_dim];
            for (f, o) in out.iter_mut().enumerate() {
                let row = &w[f * self.raw_dim..(f + 1) * self.raw_dim];
                *o += row.iter().zip(&raw).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    pub fn backward(&self, enc: &Encoded, local: &Vec3, dfeat: &[f64], grad: &mut EncoderGrad) {
        self.base.backward(local, dfeat, &mut grad.base);
        let dim = self.dim();
        for plane in 0..3 {
            let raw = enc.raw.query_plane(plane, local);
            let g = &mut grad.proj[plane * dim * self.raw_dim..(plane + 1) * dim * self.raw_dim];
            for (f, d) in dfeat.iter().enumerate() {
                if *d != 0.0 {
                    for (gi, r) in g[f * self.raw_dim..(f + 1) * self.raw_dim].iter_mut().zip(&raw) {
                        *gi += d * r;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub base: Vec<f64>,
    pub proj: Vec<f64>,
}

impl EncoderGrad {
    fn zeros(e: &Encoder) -> Self {
        Self { base: vec![0.0; e.base.len()], proj: vec![0.0; e.proj.len()] }
    }
}

/// Splats an observation into raw geometry channels `(1, local xyz)`.
pub fn encode_observation(points: &[Vec3], cfg: &ModelConfig) -> Result<Encoded> {
    let frame = Frame::around(points, cfg.half_extent);
    let feats: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let l = frame.to_local(p);
            vec![1.0, l.x, l.y, l.z]
        })
        .collect();
    let locals: Vec<Vec3> = points.iter().map(|p| frame.to_local(p)).collect();
    let (raw, empty) = scatter_points(&locals, &feats, cfg.res, GEO_RAW, Vec3::repeat(-1.0), Vec3::repeat(1.0))?;
    Ok(Encoded { frame, raw, empty })
}

/// Per-point action features `(p_g - p_i, p_r)`, world units.
pub fn action_features(points: &[Vec3], action: &Action) -> Result<Vec<[f64; 6]>> {
    if points.is_empty() {
        return Err(Error::EmptyObservation);
    }
    Ok(points
        .iter()
        .map(|p| {
            let d = action.p_g - p;
            [d.x, d.y, d.z, action.p_r.x, action.p_r.y, action.p_r.z]
        })
        .collect())
}

/// Splats action features, expressed in `frame`, into raw dynamics channels.
pub fn encode_action(points: &[Vec3], action: &Action, frame: Frame, cfg: &ModelConfig) -> Result<Encoded> {
    let feats = action_features(points, action)?;
    let local_feats: Vec<Vec<f64>> = feats
        .iter()
        .map(|f| {
            let r = frame.to_local(&Vec3::new(f[3], f[4], f[5]));
            vec![f[0] / frame.half, f[1] / frame.half, f[2] / frame.half, r.x, r.y, r.z]
        })
        .collect();
    let locals: Vec<Vec3> = points.iter().map(|p| frame.to_local(p)).collect();
    let (raw, empty) =
        scatter_points(&locals, &local_feats, cfg.res, ACTION_RAW, Vec3::repeat(-1.0), Vec3::repeat(1.0))?;
    Ok(Encoded { frame, raw, empty })
}

/// Observation plus action contexts for one step.
pub fn encode_step(obs: &PartialObservation, action: &Action, cfg: &ModelConfig) -> Result<(Encoded, Encoded)> {
    let geo = encode_observation(&obs.points, cfg)?;
    let dynamics = encode_action(&obs.points, action, geo.frame, cfg)?;
    Ok((geo, dynamics))
}

/// Inputs the flow decoder receives from the geometry pathway at a point,
/// evaluated once and reused across roll-out steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInputs {
    pub geo_feature: Vec<f64>,
    /// Occupancy decoder hidden activations, one vector per fused layer.
    pub hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub geometry: Encoder,
    pub dynamics: Encoder,
    pub occupancy: Mlp,
    pub correspondence: Mlp,
    pub flow: Mlp,
}

fn decoder_specs(cfg: &ModelConfig, out: usize, act: Activation) -> Vec<LayerSpec> {
    let mut specs = Mlp::standard_specs(cfg.width, cfg.depth, out, act);
    // re-inject the input halfway through the stack
    if cfg.depth >= 3 {
        specs[cfg.depth / 2].skip_input = true;
    }
    specs
}

fn flow_specs(cfg: &ModelConfig, occupancy: &Mlp) -> Result<Vec<LayerSpec>> {
    let mut specs = Mlp::standard_specs(cfg.width, cfg.depth, 3, Activation::Linear);
    if cfg.fusion {
        if occupancy.num_layers() != specs.len() {
            return Err(Error::Shape(format!(
                "fusion needs {} occupancy layers, decoder has {}",
                specs.len(),
                occupancy.num_layers()
            )));
        }
        specs[0].extra = cfg.feature_dim;
        for l in 1..specs.len() {
            specs[l].extra = occupancy.layer_spec(l - 1).out;
        }
    }
    Ok(specs)
}

impl Model {
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.feature_dim;
        let geometry = Encoder::new(cfg.res, d, GEO_RAW, rng)?;
        let dynamics = Encoder::new(cfg.res, d, ACTION_RAW, rng)?;
        let occupancy = Mlp::new(3 + d, &decoder_specs(&cfg, 1, Activation::Linear), rng)?;
        let correspondence = Mlp::new(3 + d, &decoder_specs(&cfg, cfg.embed_dim, Activation::Linear), rng)?;
        let flow = Mlp::new(3 + d, &flow_specs(&cfg, &occupancy)?, rng)?;
        Ok(Self { cfg, geometry, dynamics, occupancy, correspondence, flow })
    }

    /// Same architecture with every decoder parameter zeroed.
    pub fn zero_decoders(mut self) -> Self {
        for m in [&mut self.occupancy, &mut self.correspondence, &mut self.flow] {
            m.params.iter_mut().for_each(|w| *w = 0.0);
        }
        self
    }

    /// Checks that a decoder can be fused with this model's occupancy head.
    pub fn check_fusion(&self) -> Result<()> {
        flow_specs(&self.cfg, &self.occupancy).map(|_| ())
    }

    fn decoder_input(local: &Vec3, feat: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 + feat.len());
        x.extend_from_slice(local.as_slice());
        x.extend_from_slice(feat);
        x
    }

    pub fn occupancy_logit(&self, geo: &Encoded, p: &Vec3) -> f64 {
        let local = geo.frame.to_local(p);
        let feat = self.geometry.feature(geo, &local);
        self.occupancy
            .eval(&Self::decoder_input(&local, &feat), &[])
            .expect("occupancy input shape")[0]
    }

    pub fn occupancy(&self, geo: &Encoded, p: &Vec3) -> f64 {
        sigmoid(self.occupancy_logit(geo, p))
    }

    /// Keeps candidates whose occupancy exceeds `tau`.
    pub fn extract_state(&self, geo: &Encoded, tau: f64, candidates: &[Vec3]) -> Result<Extraction> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {tau}")));
        }
        let probs = crate::par::map(candidates, |p| self.occupancy(geo, p));
        let points: Vec<Vec3> = candidates
            .iter()
            .zip(&probs)
            .filter(|(_, &pr)| pr > tau)
            .map(|(p, _)| *p)
            .collect();
        Ok(Extraction { empty: points.is_empty(), points })
    }

    pub fn embed(&self, geo: &Encoded, p: &Vec3) -> Vec<f64> {
        let local = geo.frame.to_local(p);
        let feat = self.geometry.feature(geo, &local);
        self.correspondence
            .eval(&Self::decoder_input(&local, &feat), &[])
            .expect("embedding input shape")
    }

    /// Geometry feature and occupancy intermediates at `p`.
    pub fn fusion_inputs(&self, geo: &Encoded, p: &Vec3) -> FusionInputs {
        let local = geo.frame.to_local(p);
        let feat = self.geometry.feature(geo, &local);
        let cache = self
            .occupancy
            .forward(&Self::decoder_input(&local, &feat), &[])
            .expect("occupancy input shape");
        let hidden = (0..self.occupancy.num_layers() - 1)
            .map(|l| cache.activation(l).to_vec())
            .collect();
        FusionInputs { geo_feature: feat, hidden }
    }

    fn flow_extras<'a>(&self, fusion: &'a FusionInputs) -> Vec<&'a [f64]> {
        if !self.cfg.fusion {
            return Vec::new();
        }
        let mut extras: Vec<&[f64]> = vec![&fusion.geo_feature];
        extras.extend(fusion.hidden.iter().map(|h| h.as_slice()));
        extras
    }

    /// Predicted displacement of `p`, meters.
    pub fn flow(&self, dynamics: &Encoded, fusion: &FusionInputs, p: &Vec3) -> Vec3 {
        let local = dynamics.frame.to_local(p);
        let feat = self.dynamics.feature(dynamics, &local);
        let out = self
            .flow
            .eval(&Self::decoder_input(&local, &feat), &self.flow_extras(fusion))
            .expect("flow input shape");
        Vec3::new(out[0], out[1], out[2]) * dynamics.frame.half
    }

    // ---- gradients -------------------------------------------------------

    fn decode_with_cache(&self, net: &Mlp, enc: &Encoder, ctx: &Encoded, p: &Vec3, extras: &[&[f64]]) -> (Vec3, Cache) {
        let local = ctx.frame.to_local(p);
        let feat = enc.feature(ctx, &local);
        let cache = net.forward(&Self::decoder_input(&local, &feat), extras).expect("decoder input shape");
        (local, cache)
    }

    /// Occupancy logit at `p` with `dL/dlogit`, computed from the logit by
    /// `dlogit_of`, routed into the decoder and geometry encoder.
    pub fn occupancy_backward(
        &self,
        geo: &Encoded,
        p: &Vec3,
        dlogit_of: impl FnOnce(f64) -> f64,
        grad: &mut ModelGrad,
    ) -> f64 {
        let (local, cache) = self.decode_with_cache(&self.occupancy, &self.geometry, geo, p, &[]);
        let logit = cache.output()[0];
        let (dx, _) = self
            .occupancy
            .backward_into(&cache, &[dlogit_of(logit)], &mut grad.occupancy)
            .expect("gradient shape");
        self.geometry.backward(geo, &local, &dx[3..], &mut grad.geometry);
        logit
    }

    /// Routes `dL/dembedding` at `p` into the decoder and geometry encoder.
    pub fn embed_backward(&self, geo: &Encoded, p: &Vec3, dembed: &[f64], grad: &mut ModelGrad) {
        let (local, cache) = self.decode_with_cache(&self.correspondence, &self.geometry, geo, p, &[]);
        let (dx, _) = self
            .correspondence
            .backward_into(&cache, dembed, &mut grad.correspondence)
            .expect("gradient shape");
        self.geometry.backward(geo, &local, &dx[3..], &mut grad.geometry);
    }

    /// Routes `dL/dflow` (meters) into the flow decoder and dynamics encoder.
    /// Fusion inputs are treated as constants.
    pub fn flow_backward(&self, dynamics: &Encoded, fusion: &FusionInputs, p: &Vec3, dflow: &Vec3, grad: &mut ModelGrad) {
        let extras = self.flow_extras(fusion);
        let (local, cache) = self.decode_with_cache(&self.flow, &self.dynamics, dynamics, p, &extras);
        let h = dynamics.frame.half;
        let dy = [dflow.x * h, dflow.y * h, dflow.z * h];
        let (dx, _) = self.flow.backward_into(&cache, &dy, &mut grad.flow).expect("gradient shape");
        self.dynamics.backward(dynamics, &local, &dx[3..], &mut grad.dynamics);
    }

    /// Flow at `p` with `dL/dflow` routed through the flow decoder and, when
    /// fused, on through the occupancy decoder and geometry encoder that
    /// produced the fusion inputs. Returns the predicted flow.
    pub fn flow_backward_joint(
        &self,
        geo: &Encoded,
        dynamics: &Encoded,
        p: &Vec3,
        dflow_of: impl FnOnce(&Vec3) -> Vec3,
        grad: &mut ModelGrad,
    ) -> Vec3 {
        let g_local = geo.frame.to_local(p);
        let g_feat = self.geometry.feature(geo, &g_local);
        let occ = self
            .occupancy
            .forward(&Self::decoder_input(&g_local, &g_feat), &[])
            .expect("occupancy input shape");
        let fusion = FusionInputs {
            hidden: (0..self.occupancy.num_layers() - 1).map(|l| occ.activation(l).to_vec()).collect(),
            geo_feature: g_feat,
        };
        let extras = self.flow_extras(&fusion);
        let (local, cache) = self.decode_with_cache(&self.flow, &self.dynamics, dynamics, p, &extras);
        let h = dynamics.frame.half;
        let out = cache.output();
        let flow = Vec3::new(out[0], out[1], out[2]) * h;
        let dflow = dflow_of(&flow);
        let dy = [dflow.x * h, dflow.y * h, dflow.z * h];
        let (dx, dextras) = self.flow.backward_into(&cache, &dy, &mut grad.flow).expect("gradient shape");
        self.dynamics.backward(dynamics, &local, &dx[3..], &mut grad.dynamics);
        if self.cfg.fusion {
            let layers = self.occupancy.num_layers();
            let mut douts: Vec<&[f64]> = vec![&[]; layers];
            for l in 0..layers - 1 {
                douts[l] = &dextras[l + 1];
            }
            let (mut dg, _) = self
                .occupancy
                .backward_layers_into(&occ, &douts, &mut grad.occupancy)
                .expect("gradient shape");
            for (a, b) in dg[3..].iter_mut().zip(&dextras[0]) {
                *a += b;
            }
            self.geometry.backward(geo, &g_local, &dg[3..], &mut grad.geometry);
        }
        flow
    }

    /// Mutable views of every parameter buffer, in [`ModelGrad::buffers`] order.
    pub fn buffers_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.geometry.base.values,
            &mut self.geometry.proj,
            &mut self.dynamics.base.values,
            &mut self.dynamics.proj,
            &mut self.occupancy.params,
            &mut self.correspondence.params,
            &mut self.flow.params,
        ]
    }

    pub fn buffer_lens(&self) -> [usize; 7] {
        [
            self.geometry.base.len(),
            self.geometry.proj.len(),
            self.dynamics.base.len(),
            self.dynamics.proj.len(),
            self.occupancy.num_params(),
            self.correspondence.num_params(),
            self.flow.num_params(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub points: Vec<Vec3>,
    pub empty: bool,
}

/// Gradient buffers mirroring [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub geometry: EncoderGrad,
    pub dynamics: EncoderGrad,
    pub occupancy: Vec<f64>,
    pub correspondence: Vec<f64>,
    pub flow: Vec<f64>,
}

impl ModelGrad {
    pub fn zeros(m: &Model) -> Self {
        Self {
            geometry: EncoderGrad::zeros(&m.geometry),
            dynamics: EncoderGrad::zeros(&m.dynamics),
            occupancy: vec![0.0; m.occupancy.num_params()],
            correspondence: vec![0.0; m.correspondence.num_params()],
            flow: vec![0.0; m.flow.num_params()],
        }
    }

    pub fn buffers(&self) -> [&Vec<f64>; 7] {
        [
            &self.geometry.base,
            &self.geometry.proj,
            &self.dynamics.base,
            &self.dynamics.proj,
            &self.occupancy,
            &self.correspondence,
            &self.flow,
        ]
    }

    fn buffers_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.geometry.base,
            &mut self.geometry.proj,
            &mut self.dynamics.base,
            &mut self.dynamics.proj,
            &mut self.occupancy,
            &mut self.correspondence,
            &mut self.flow,
        ]
    }

    pub fn add(&mut self, other: &ModelGrad) {
        for (a, b) in self.buffers_mut().into_iter().zip(other.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.buffers_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig { res: 8, feature_dim: 6, width: 8, depth: 3, embed_dim: 32, half_extent: 0.3, fusion: true }
    }

    fn cloud() -> Vec<Vec3> {
        (0..40)
            .map(|i| {
                let t = i as f64;
                Vec3::new((t * 0.7).sin() * 0.1, (t * 1.3).cos() * 0.1, 0.05 + (t * 0.4).sin() * 0.04)
            })
            .collect()
    }

    #[test]
    fn zero_decoders_give_half_and_zero_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::new(small_cfg(), &mut rng).unwrap().zero_decoders();
        let pts = cloud();
        let geo = encode_observation(&pts, &m.cfg).unwrap();
        let a = Action { p_g: pts[0], p_r: pts[0] + Vec3::new(0.1, 0.0, 0.1) };
        let dynamics = encode_action(&pts, &a, geo.frame, &m.cfg).unwrap();
        for p in &pts {
            assert_eq!(m.occupancy(&geo, p), 0.5);
            let fus = m.fusion_inputs(&geo, p);
            assert_eq!(m.flow(&dynamics, &fus, p), Vec3::zeros());
        }
        let ex = m.extract_state(&geo, DEFAULT_TAU, &pts).unwrap();
        assert!(ex.empty);
        assert!(m.extract_state(&geo, 1.0, &pts).is_err());
    }

    #[test]
    fn embedding_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Model::new(small_cfg(), &mut rng).unwrap();
        let geo = encode_observation(&cloud(), &m.cfg).unwrap();
        let p = Vec3::new(0.01, -0.02, 0.03);
        let e = m.embed(&geo, &p);
        assert_eq!(e.len(), 32);
        assert_eq!(e, m.embed(&geo, &p));
    }

    #[test]
    fn action_features_are_relative() {
        let pts = cloud();
        let a = Action { p_g: pts[3], p_r: Vec3::new(0.2, 0.1, 0.3) };
        let f = action_features(&pts, &a).unwrap();
        assert_eq!(&f[3][..3], &[0.0, 0.0, 0.0]);
        assert!(f.iter().all(|x| x[3..] == [0.2, 0.1, 0.3]));
        let t = Vec3::new(1.0, -2.0, 0.5);
        let moved: Vec<Vec3> = pts.iter().map(|p| p + t).collect();
        let b = Action { p_g: a.p_g + t, p_r: a.p_r };
        let g = action_features(&moved, &b).unwrap();
        for (x, y) in f.iter().zip(&g) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-12);
            }
        }
        assert!(action_features(&[], &a).is_err());
    }

    #[test]
    fn fusion_dimension_mismatch_is_construction_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = Model::new(small_cfg(), &mut rng).unwrap();
        m.occupancy = Mlp::zeros(3 + 6, &Mlp::standard_specs(8, 5, 1, Activation::Linear)).unwrap();
        assert!(m.check_fusion().is_err());
    }
}
