//! Random-shooting planner: sample action sequences, roll each out with a
//! dynamics provider, score the final point set against the target by
//! corresponded distance, and pick the cheapest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoders::{encode_action, encode_observation, Frame, FusionInputs, Model, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::matching::{d_corr, match_features};
use crate::metrics::{chamfer, chamfer_mean, fscore, miou, FScore, DESK_FSCORE_DIST, MIOU_SAMPLES};
use crate::softsim::{
    observe, random_scene, sample_action, Action, ActionDistribution, Camera, PartialObservation, SceneConfig,
    SceneState, Simulator,
};
use crate::tetmesh::{bounding_box, containing_tet, TetMesh};
use crate::{par, Vec3};

/// Success radius on the root of the corresponded squared distance, meters.
pub const DESK_SUCCESS_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Oracle,
    Learned,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Dcorr,
    Chamfer,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Candidate sequences.
    pub k: usize,
    pub horizon: usize,
    pub success_radius: f64,
    pub cost: CostKind,
    pub actions: ActionDistribution,
    /// Occupancy threshold for extracting learned states.
    pub tau: f64,
    /// Candidate grid per axis for learned state extraction.
    pub grid: usize,
    /// Volumetric IoU sample count for executed metrics.
    pub miou_samples: usize,
    pub fscore_dist: f64,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            k: 64,
            horizon: 3,
            success_radius: DESK_SUCCESS_RADIUS,
            cost: CostKind::Dcorr,
            actions: ActionDistribution::default(),
            tau: DEFAULT_TAU,
            grid: 24,
            miou_samples: MIOU_SAMPLES,
            fscore_dist: DESK_FSCORE_DIST,
            seed: 0,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.horizon == 0 {
            return Err(Error::Config(format!("need k >= 1 and horizon >= 1, got {} and {}", self.k, self.horizon)));
        }
        if !(self.success_radius > 0.0) {
            return Err(Error::Config(format!("success radius must be positive, got {}", self.success_radius)));
        }
        if self.grid < 2 {
            return Err(Error::Config("extraction grid needs at least 2 points per axis".into()));
        }
        Ok(())
    }
}

/// A start scene and a target configuration of the same object.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanProblem {
    pub start: SceneState,
    pub target: SceneState,
    pub camera: Camera,
    pub start_seed: u64,
    pub target_seed: u64,
}

impl PlanProblem {
    pub fn start_observation(&self, mesh: &TetMesh) -> PartialObservation {
        observe(mesh, &self.start.positions, &self.camera)
    }

    pub fn target_observation(&self, mesh: &TetMesh) -> PartialObservation {
        observe(mesh, &self.target.positions, &self.camera)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub scene: SceneConfig,
    pub actions: ActionDistribution,
    /// Random commands applied to the start scene to produce the target.
    pub target_actions: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { scene: SceneConfig::default(), actions: ActionDistribution::default(), target_actions: 1 }
    }
}

/// Start scene from `start_seed`; the target is the start after
/// `target_actions` random commands drawn from `target_seed`.
pub fn make_problem(
    sim: &Simulator,
    mesh: &TetMesh,
    cfg: &ProblemConfig,
    camera: Camera,
    start_seed: u64,
    target_seed: u64,
) -> Result<PlanProblem> {
    let start = random_scene(sim, mesh, &cfg.scene, &mut ChaCha8Rng::seed_from_u64(start_seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(target_seed);
    let mut target = start.clone();
    for _ in 0..cfg.target_actions {
        let obs = observe(mesh, &target.positions, &camera);
        let action = sample_action(&obs, &cfg.actions, &mut rng)?;
        target = sim.execute(&target, &action)?.post;
        target.time = 0.0;
    }
    Ok(PlanProblem { start, target, camera, start_seed, target_seed })
}

/// One candidate sequence and its predicted outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RollOut {
    pub index: usize,
    pub actions: Vec<Action>,
    /// Predicted states after each command; shorter than the horizon when
    /// the roll-out failed.
    pub states: Vec<Vec<Vec3>>,
    /// `+inf` for failed roll-outs.
    pub cost: f64,
}

impl RollOut {
    pub fn is_valid(&self) -> bool {
        self.cost.is_finite()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanResult {
    pub best: RollOut,
    /// `(index, cost)` sorted by cost then index.
    pub ranking: Vec<(usize, f64)>,
    pub rollouts: Vec<RollOut>,
}

/// Source of one-step predictions.
pub enum Dynamics<'a> {
    /// The simulator itself, with ground-truth vertex correspondence.
    Oracle(&'a Simulator),
    /// The flow head with correspondence from the embedding head.
    Learned(&'a Model),
}

/// Everything a roll-out needs that does not depend on the sequence.
pub struct PlanContext {
    /// Initial state point set.
    pub s0: Vec<Vec3>,
    /// Target point set.
    pub target: Vec<Vec3>,
    /// Index of each initial point's corresponded target point.
    pub xi: Vec<usize>,
    pub start_obs: PartialObservation,
    fusion: Vec<FusionInputs>,
    pseudo_camera: Camera,
}

/// Candidate points on a regular grid spanning the frame.
fn frame_grid(frame: &Frame, n: usize) -> Vec<Vec3> {
    let step = 2.0 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let l = Vec3::new(-1.0 + i as f64 * step, -1.0 + j as f64 * step, -1.0 + k as f64 * step);
                out.push(frame.center + l * frame.half);
            }
        }
    }
    out
}

/// Z-buffer observation of a point set, with pixels coarse enough that
/// points behind the front layer are hidden.
pub fn pseudo_observation(points: &[Vec3], camera: &Camera) -> PartialObservation {
    let ids = camera.zbuffer(points, 0..points.len());
    PartialObservation::from_indices(points, ids, *camera)
}

impl Dynamics<'_> {
    pub fn kind(&self) -> DynamicsKind {
        match self {
            Dynamics::Oracle(_) => DynamicsKind::Oracle,
            Dynamics::Learned(_) => DynamicsKind::Learned,
        }
    }

    pub fn context(&self, mesh: &TetMesh, problem: &PlanProblem, cfg: &PlanConfig) -> Result<PlanContext> {
        let start_obs = problem.start_observation(mesh);
        if start_obs.empty {
            return Err(Error::EmptyObservation);
        }
        match self {
            Dynamics::Oracle(_) => Ok(PlanContext {
                s0: problem.start.positions.clone(),
                target: problem.target.positions.clone(),
                xi: (0..problem.start.positions.len()).collect(),
                start_obs,
                fusion: Vec::new(),
                pseudo_camera: problem.camera,
            }),
            Dynamics::Learned(model) => {
                let target_obs = problem.target_observation(mesh);
                if target_obs.empty {
                    return Err(Error::EmptyObservation);
                }
                let geo0 = encode_observation(&start_obs.points, &model.cfg)?;
                let geo_t = encode_observation(&target_obs.points, &model.cfg)?;
                let s0 = model.extract_state(&geo0, cfg.tau, &frame_grid(&geo0.frame, cfg.grid))?;
                let tgt = model.extract_state(&geo_t, cfg.tau, &frame_grid(&geo_t.frame, cfg.grid))?;
                if s0.empty || tgt.empty {
                    return Err(Error::EmptyInput("extracted state"));
                }
                let f0 = par::map(&s0.points, |p| model.embed(&geo0, p));
                let ft = par::map(&tgt.points, |p| model.embed(&geo_t, p));
                let xi = match_features(&f0, &ft)?.mapping;
                let fusion = par::map(&s0.points, |p| model.fusion_inputs(&geo0, p));
                let spacing = 2.0 * geo0.frame.half / (cfg.grid - 1) as f64;
                let mut pseudo_camera = problem.camera;
                pseudo_camera.resolution = ((2.0 * pseudo_camera.extent / (1.5 * spacing)).ceil() as usize).max(1);
                Ok(PlanContext { s0: s0.points, target: tgt.points, xi, start_obs, fusion, pseudo_camera })
            }
        }
    }

    /// Samples and rolls out one sequence. Actions are drawn step by step
    /// from the current (pseudo-)observation.
    fn rollout<R: Rng + ?Sized>(
        &self,
        mesh: &TetMesh,
        problem: &PlanProblem,
        ctx: &PlanContext,
        cfg: &PlanConfig,
        index: usize,
        rng: &mut R,
    ) -> RollOut {
        let mut out = RollOut { index, actions: Vec::new(), states: Vec::new(), cost: f64::INFINITY };
        let ok = match self {
            Dynamics::Oracle(sim) => {
                let mut state = problem.start.clone();
                (0..cfg.horizon).try_for_each(|t| -> Result<()> {
                    let obs = if t == 0 {
                        ctx.start_obs.clone()
                    } else {
                        observe(mesh, &state.positions, &problem.camera)
                    };
                    let action = sample_action(&obs, &cfg.actions, rng)?;
                    let exec = sim.execute(&state, &action)?;
                    if exec.missed_grasp {
                        return Err(Error::EmptyInput("grasped vertices"));
                    }
                    state = exec.post;
                    out.actions.push(action);
                    out.states.push(state.positions.clone());
                    Ok(())
                })
            }
            Dynamics::Learned(model) => {
                let mut points = ctx.s0.clone();
                (0..cfg.horizon).try_for_each(|t| -> Result<()> {
                    let obs = if t == 0 {
                        ctx.start_obs.clone()
                    } else {
                        pseudo_observation(&points, &ctx.pseudo_camera)
                    };
                    let action = sample_action(&obs, &cfg.actions, rng)?;
                    let frame = Frame::around(&obs.points, model.cfg.half_extent);
                    let dynamics = encode_action(&obs.points, &action, frame, &model.cfg)?;
                    let flows = par::map_indexed(points.len(), |i| model.flow(&dynamics, &ctx.fusion[i], &points[i]));
                    for (p, f) in points.iter_mut().zip(&flows) {
                        *p += f;
                    }
                    if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
                        return Err(Error::Diverged { vertex: 0 });
                    }
                    out.actions.push(action);
                    out.states.push(points.clone());
                    Ok(())
                })
            }
        };
        if ok.is_ok() {
            let last = out.states.last().expect("horizon >= 1");
            if let Ok(c) = cost(cfg.cost, last, &ctx.target, &ctx.xi) {
                if c.is_finite() {
                    out.cost = c;
                }
            }
        }
        out
    }
}

/// Planning cost of a final state.
pub fn cost(kind: CostKind, s_n: &[Vec3], target: &[Vec3], xi: &[usize]) -> Result<f64> {
    match kind {
        CostKind::Dcorr => Ok(d_corr(s_n, target, xi)),
        CostKind::Chamfer => chamfer(s_n, target),
    }
}

/// Rolls out `cfg.k` sequences and returns the cheapest, ties to the lowest
/// index. Sequence `i` draws from stream `i` of the seeded generator, so the
/// result does not depend on evaluation order or thread count.
pub fn plan(mesh: &TetMesh, problem: &PlanProblem, dynamics: &Dynamics, cfg: &PlanConfig) -> Result<PlanResult> {
    cfg.validate()?;
    let ctx = dynamics.context(mesh, problem, cfg)?;
    let rollouts = par::map_indexed(cfg.k, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        dynamics.rollout(mesh, problem, &ctx, cfg, i, &mut rng)
    });
    let mut ranking: Vec<(usize, f64)> = rollouts.iter().map(|r| (r.index, r.cost)).collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let valid = rollouts.iter().filter(|r| r.is_valid()).count();
    if valid == 0 {
        return Err(Error::AllRolloutsInvalid(cfg.k));
    }
    let best = rollouts[ranking[0].0].clone();
    Ok(PlanResult { best, ranking, rollouts })
}

/// Result of executing a sequence in the simulator, scored against the
/// target with vertex-identity correspondence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExecutedMetrics {
    pub d_corr: f64,
    pub success: bool,
    pub miou: f64,
    pub fscore: FScore,
    pub chamfer: f64,
    pub chamfer_mean: f64,
    pub missed_grasps: usize,
    pub final_positions: Vec<Vec3>,
}

/// Executes `actions` from the start scene and returns the final state.
pub fn execute_sequence(sim: &Simulator, start: &SceneState, actions: &[Action]) -> Result<(SceneState, usize)> {
    let mut state = start.clone();
    let mut missed = 0;
    for a in actions {
        let exec = sim.execute(&state, a)?;
        missed += exec.missed_grasp as usize;
        state = exec.post;
    }
    Ok((state, missed))
}

/// Ground-truth corresponded distance after executing `actions`.
pub fn executed_dcorr(sim: &Simulator, problem: &PlanProblem, actions: &[Action]) -> Result<f64> {
    let (state, _) = execute_sequence(sim, &problem.start, actions)?;
    let ids: Vec<usize> = (0..state.positions.len()).collect();
    Ok(d_corr(&state.positions, &problem.target.positions, &ids))
}

pub fn evaluate_plan(
    mesh: &TetMesh,
    sim: &Simulator,
    problem: &PlanProblem,
    actions: &[Action],
    cfg: &PlanConfig,
) -> Result<ExecutedMetrics> {
    let (state, missed_grasps) = execute_sequence(sim, &problem.start, actions)?;
    let fin = &state.positions;
    let tgt = &problem.target.positions;
    let ids: Vec<usize> = (0..fin.len()).collect();
    let dc = d_corr(fin, tgt, &ids);
    let (lo_a, hi_a) = bounding_box(fin);
    let (lo_b, hi_b) = bounding_box(tgt);
    let iou = miou(
        |p| containing_tet(mesh, fin, p).is_some(),
        |p| containing_tet(mesh, tgt, p).is_some(),
        lo_a.inf(&lo_b),
        hi_a.sup(&hi_b),
        cfg.miou_samples,
        cfg.seed,
    )?;
    Ok(ExecutedMetrics {
        d_corr: dc,
        success: dc.sqrt() < cfg.success_radius,
        miou: iou.iou,
        fscore: fscore(fin, tgt, cfg.fscore_dist)?,
        chamfer: chamfer(fin, tgt)?,
        chamfer_mean: chamfer_mean(fin, tgt)?,
        missed_grasps,
        final_positions: fin.clone(),
    })
}
