//! Desk-scale soft-body scene simulator.
//!
//! Position-based dynamics over a tet mesh: edge-length and per-tet volume
//! constraints, a floor at `z = 0`, axis-aligned box obstacles, and a
//! kinematic gripper that pins a handful of surface vertices while it moves in
//! a straight line. Everything is sequential and deterministic: the same state
//! and action always produce bit-identical results.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tetmesh::{bounding_box, TetMesh};
use crate::{config_hash, Vec3};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step, seconds.
    pub dt: f64,
    /// Constraint projection sweeps per step.
    pub iterations: usize,
    pub gravity: f64,
    /// Velocity multiplier applied every step.
    pub damping: f64,
    pub edge_stiffness: f64,
    pub volume_stiffness: f64,
    /// Fraction of tangential motion removed for vertices touching a support.
    pub friction: f64,
    /// Per-step tangential slip (meters) below which a supported vertex sticks.
    pub static_slip: f64,
    pub grasp_radius: f64,
    pub grasp_k: usize,
    /// Gripper speed, m/s.
    pub gripper_speed: f64,
    /// Settling ends once the fastest vertex is slower than this, m/s.
    pub settle_speed: f64,
    /// Maximum simulated settling time, seconds.
    pub settle_cap: f64,
    pub contact_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 150.0,
            iterations: 10,
            gravity: 9.81,
            damping: 0.98,
            edge_stiffness: 1.0,
            volume_stiffness: 1.0,
            friction: 0.5,
            static_slip: 2e-5,
            grasp_radius: 0.03,
            grasp_k: 8,
            gripper_speed: 0.5,
            settle_speed: 1e-4,
            settle_cap: 2.0,
            contact_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] > self.min[k] + tol && p[k] < self.max[k] - tol)
    }

    /// Pushes `p` out through the nearest face when it is inside.
    fn project(&self, p: &mut Vec3) -> bool {
        if !self.contains(p, 0.0) {
            return false;
        }
        let mut best = (f64::INFINITY, 0usize, 0.0);
        for k in 0..3 {
            let down = p[k] - self.min[k];
            let up = self.max[k] - p[k];
            if down < best.0 {
                best = (down, k, self.min[k]);
            }
            if up < best.0 {
                best = (up, k, self.max[k]);
            }
        }
        p[best.1] = best.2;
        true
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Gripper {
    pub held: Vec<usize>,
    /// Offset of each held vertex from the gripper position.
    pub offsets: Vec<Vec3>,
    pub position: Vec3,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub gripper: Option<Gripper>,
    pub obstacles: Vec<Aabb>,
    pub time: f64,
}

impl SceneState {
    pub fn at_rest(positions: Vec<Vec3>, obstacles: Vec<Aabb>) -> Self {
        let n = positions.len();
        Self {
            positions,
            velocities: vec![Vec3::zeros(); n],
            gripper: None,
            obstacles,
            time: 0.0,
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn center_of_mass(&self) -> Vec3 {
        self.positions.iter().sum::<Vec3>() / self.positions.len() as f64
    }
}

/// One grasp-move-release command.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Action {
    pub p_g: Vec3,
    pub p_r: Vec3,
}

#[derive(Debug, Clone)]
pub struct ExecOutcome {
    pub post: SceneState,
    /// Per-vertex displacement `post - pre`.
    pub flow: Vec<Vec3>,
    pub missed_grasp: bool,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: SimConfig,
    tets: Vec<[usize; 4]>,
    edges: Vec<[usize; 2]>,
    rest_len: Vec<f64>,
    rest_vol: Vec<f64>,
    surface: Vec<usize>,
    n: usize,
}

fn tet_volume(p: &[Vec3], t: &[usize; 4]) -> f64 {
    let a = p[t[0]];
    (p[t[1]] - a).cross(&(p[t[2]] - a)).dot(&(p[t[3]] - a)) / 6.0
}

impl Simulator {
    pub fn new(mesh: &TetMesh, cfg: SimConfig) -> Self {
        let edges = mesh.edges();
        let rest_len = edges
            .iter()
            .map(|[a, b]| (mesh.vertices[*a] - mesh.vertices[*b]).norm())
            .collect();
        let rest_vol = mesh.tets.iter().map(|t| tet_volume(&mesh.vertices, t)).collect();
        Self {
            cfg,
            tets: mesh.tets.clone(),
            edges,
            rest_len,
            rest_vol,
            surface: mesh.surface_vertices.clone(),
            n: mesh.vertices.len(),
        }
    }

    /// Advances one step of length `dt`.
    pub fn step(&self, state: &SceneState, dt: f64) -> Result<SceneState> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let cfg = &self.cfg;
        let gravity = Vec3::new(0.0, 0.0, -cfg.gravity);
        let mut inv_mass = vec![1.0; self.n];
        let mut pred: Vec<Vec3> = state
            .positions
            .iter()
            .zip(&state.velocities)
            .map(|(x, v)| x + (v * cfg.damping + gravity * dt) * dt)
            .collect();
        if let Some(g) = &state.gripper {
            for (&v, off) in g.held.iter().zip(&g.offsets) {
                inv_mass[v] = 0.0;
                pred[v] = g.position + off;
            }
        }

        for _ in 0..cfg.iterations {
            for (e, [a, b]) in self.edges.iter().enumerate() {
                let (wa, wb) = (inv_mass[*a], inv_mass[*b]);
                let w = wa + wb;
                if w == 0.0 {
                    continue;
                }
                let d = pred[*a] - pred[*b];
                let len = d.norm();
                if len < 1e-12 {
                    continue;
                }
                let corr = d * (cfg.edge_stiffness * (len - self.rest_len[e]) / (len * w));
                pred[*a] -= corr * wa;
                pred[*b] += corr * wb;
            }
            for (t, tet) in self.tets.iter().enumerate() {
                let [x0, x1, x2, x3] = tet.map(|v| pred[v]);
                let g1 = (x2 - x0).cross(&(x3 - x0)) / 6.0;
                let g2 = (x3 - x0).cross(&(x1 - x0)) / 6.0;
                let g3 = (x1 - x0).cross(&(x2 - x0)) / 6.0;
                let g0 = -(g1 + g2 + g3);
                let grads = [g0, g1, g2, g3];
                let denom: f64 = tet
                    .iter()
                    .zip(&grads)
                    .map(|(&v, g)| inv_mass[v] * g.norm_squared())
                    .sum();
                if denom < 1e-30 {
                    continue;
                }
                let c = tet_volume(&pred, tet) - self.rest_vol[t];
                let lambda = -cfg.volume_stiffness * c / denom;
                for (&v, g) in tet.iter().zip(&grads) {
                    pred[v] += g * (lambda * inv_mass[v]);
                }
            }
            for (v, p) in pred.iter_mut().enumerate() {
                if inv_mass[v] == 0.0 {
                    continue;
                }
                if p.z < 0.0 {
                    p.z = 0.0;
                }
                for ob in &state.obstacles {
                    ob.project(p);
                }
            }
        }

        // friction on supported vertices
        for (v, p) in pred.iter_mut().enumerate() {
            if inv_mass[v] == 0.0 {
                continue;
            }
            let x = state.positions[v];
            let supported = p.z <= cfg.contact_tol
                || state
                    .obstacles
                    .iter()
                    .any(|ob| (p.z - ob.max.z).abs() <= cfg.contact_tol && within_xy(ob, p));
            if supported {
                let slip = ((p.x - x.x).powi(2) + (p.y - x.y).powi(2)).sqrt();
                let keep = if slip < cfg.static_slip { 0.0 } else { 1.0 - cfg.friction };
                p.x = x.x + (p.x - x.x) * keep;
                p.y = x.y + (p.y - x.y) * keep;
            }
        }

        let velocities: Vec<Vec3> = pred
            .iter()
            .zip(&state.positions)
            .map(|(p, x)| (p - x) / dt)
            .collect();
        if let Some(v) = pred.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Diverged { vertex: v });
        }
        Ok(SceneState {
            positions: pred,
            velocities,
            gripper: state.gripper.clone(),
            obstacles: state.obstacles.clone(),
            time: state.time + dt,
        })
    }

    /// Steps until the fastest vertex is below the settle speed or the settle
    /// cap elapses. Returns the state and the number of steps taken.
    pub fn settle(&self, state: &SceneState) -> Result<(SceneState, usize)> {
        let cap = (self.cfg.settle_cap / self.cfg.dt).round() as usize;
        let mut s = state.clone();
        for k in 0..cap {
            s = self.step(&s, self.cfg.dt)?;
            if s.max_speed() < self.cfg.settle_speed {
                return Ok((s, k + 1));
            }
        }
        Ok((s, cap))
    }

    /// Up to `grasp_k` surface vertices nearest `p_g` within the grasp radius,
    /// nearest first; empty when the grasp misses.
    pub fn grasp_set(&self, positions: &[Vec3], p_g: &Vec3) -> Vec<usize> {
        let mut cands: Vec<(f64, usize)> = self
            .surface
            .iter()
            .map(|&v| ((positions[v] - p_g).norm(), v))
            .filter(|(d, _)| *d <= self.cfg.grasp_radius)
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cands.truncate(self.cfg.grasp_k);
        cands.into_iter().map(|(_, v)| v).collect()
    }

    /// Pins `held` to a gripper at `at`.
    pub fn grasp(&self, state: &SceneState, held: Vec<usize>, at: Vec3) -> SceneState {
        let offsets = held.iter().map(|&v| state.positions[v] - at).collect();
        let mut s = state.clone();
        s.gripper = Some(Gripper { held, offsets, position: at });
        s
    }

    /// Moves an engaged gripper in a straight line to `target` at the
    /// configured speed. Returns the state and step count.
    pub fn move_gripper(&self, state: &SceneState, target: Vec3) -> Result<(SceneState, usize)> {
        let Some(g) = &state.gripper else {
            return Ok((state.clone(), 0));
        };
        let start = g.position;
        let len = (target - start).norm();
        let steps = (len / (self.cfg.gripper_speed * self.cfg.dt)).ceil() as usize;
        let mut s = state.clone();
        for k in 1..=steps {
            let pos = start + (target - start) * (k as f64 / steps as f64);
            if let Some(g) = s.gripper.as_mut() {
                g.position = pos;
            }
            s = self.step(&s, self.cfg.dt)?;
        }
        Ok((s, steps))
    }

    pub fn release(&self, state: &SceneState) -> SceneState {
        let mut s = state.clone();
        s.gripper = None;
        s
    }

    /// Grasp, move, release and settle.
    pub fn execute(&self, state: &SceneState, action: &Action) -> Result<ExecOutcome> {
        let held = self.grasp_set(&state.positions, &action.p_g);
        if held.is_empty() {
            return Ok(ExecOutcome {
                post: state.clone(),
                flow: vec![Vec3::zeros(); self.n],
                missed_grasp: true,
                steps: 0,
            });
        }
        let grasped = self.grasp(state, held, action.p_g);
        // keep held vertices above the floor
        let floor = grasped
            .gripper
            .as_ref()
            .map(|g| g.offsets.iter().map(|o| -o.z).fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(0.0);
        let mut target = action.p_r;
        target.z = target.z.max(floor);
        let (moved, move_steps) = self.move_gripper(&grasped, target)?;
        let (post, settle_steps) = self.settle(&self.release(&moved))?;
        let flow = post
            .positions
            .iter()
            .zip(&state.positions)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ExecOutcome {
            post,
            flow,
            missed_grasp: false,
            steps: move_steps + settle_steps,
        })
    }
}

fn within_xy(ob: &Aabb, p: &Vec3) -> bool {
    p.x >= ob.min.x && p.x <= ob.max.x && p.y >= ob.min.y && p.y <= ob.max.y
}

/// Orthographic camera: looks along `direction` at `center`, square frame of
/// half-width `extent` sampled at `resolution` pixels per side.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Camera {
    pub direction: Vec3,
    pub center: Vec3,
    pub extent: f64,
    pub resolution: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            direction: Vec3::new(-0.35, -0.25, -1.0).normalize(),
            center: Vec3::new(0.0, 0.0, 0.05),
            extent: 1.0,
            resolution: 128,
        }
    }
}

impl Camera {
    pub fn looking(direction: Vec3, center: Vec3, extent: f64, resolution: usize) -> Self {
        Self { direction: direction.normalize(), center, extent, resolution }
    }

    fn basis(&self) -> (Vec3, Vec3) {
        let w = self.direction.normalize();
        let helper = if w.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
        let u = w.cross(&helper).normalize();
        (u, w.cross(&u))
    }

    /// Pixel index and depth of `p`; `None` when outside the frame.
    pub fn project(&self, p: &Vec3) -> Option<(usize, f64)> {
        let (u, v) = self.basis();
        let d = p - self.center;
        let scale = self.resolution as f64 / (2.0 * self.extent);
        let px = ((d.dot(&u) + self.extent) * scale).floor();
        let py = ((d.dot(&v) + self.extent) * scale).floor();
        let r = self.resolution as f64;
        if !(px >= 0.0 && py >= 0.0 && px < r && py < r) {
            return None;
        }
        Some((py as usize * self.resolution + px as usize, d.dot(&self.direction.normalize())))
    }

    /// Frontmost point per pixel, ties to the lower index. Returns indices in
    /// ascending order.
    pub fn zbuffer(&self, points: &[Vec3], candidates: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut front: std::collections::HashMap<usize, (f64, usize)> = Default::default();
        for i in candidates {
            if let Some((pix, depth)) = self.project(&points[i]) {
                let e = front.entry(pix).or_insert((depth, i));
                if depth < e.0 || (depth == e.0 && i < e.1) {
                    *e = (depth, i);
                }
            }
        }
        let mut kept: Vec<usize> = front.into_values().map(|(_, i)| i).collect();
        kept.sort_unstable();
        kept
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PartialObservation {
    pub points: Vec<Vec3>,
    pub vertex_ids: Vec<usize>,
    pub camera: Camera,
    /// Set when nothing of the object is in frame.
    pub empty: bool,
}

impl PartialObservation {
    pub fn from_indices(points: &[Vec3], ids: Vec<usize>, camera: Camera) -> Self {
        Self {
            points: ids.iter().map(|&i| points[i]).collect(),
            empty: ids.is_empty(),
            vertex_ids: ids,
            camera,
        }
    }
}

/// Ray/triangle hit distance along `dir`, edges inclusive.
fn ray_hits(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3, t_min: f64) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = inv * s.dot(&h);
    let eps = 1e-9;
    if u < -eps || u > 1.0 + eps {
        return false;
    }
    let q = s.cross(&e1);
    let v = inv * dir.dot(&q);
    if v < -eps || u + v > 1.0 + eps {
        return false;
    }
    inv * e2.dot(&q) > t_min
}

/// Visible surface vertices of the current pose: a surface vertex is kept when
/// no boundary triangle lies between it and the camera, then the frontmost
/// survivor per pixel is kept.
pub fn observe(mesh: &TetMesh, positions: &[Vec3], camera: &Camera) -> PartialObservation {
    let toward = -camera.direction.normalize();
    let t_min = 1e-9 * mesh.rest_diagonal();
    let unoccluded = mesh.surface_vertices.iter().copied().filter(|&v| {
        let o = positions[v];
        !mesh.boundary_faces.iter().any(|f| {
            !f.contains(&v) && {
                let [a, b, c] = f.map(|i| positions[i]);
                ray_hits(&o, &toward, &a, &b, &c, t_min)
            }
        })
    });
    let ids = camera.zbuffer(positions, unoccluded.collect::<Vec<_>>());
    PartialObservation::from_indices(positions, ids, *camera)
}

/// Displacement distribution in spherical coordinates: `r` normal (resampled
/// until positive), polar angle `theta` from +z normal, azimuth `phi` uniform.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ActionDistribution {
    pub r_mean: f64,
    pub r_std: f64,
    pub theta_mean: f64,
    pub theta_std: f64,
}

impl Default for ActionDistribution {
    fn default() -> Self {
        Self {
            r_mean: 0.24,
            r_std: 0.08,
            theta_mean: std::f64::consts::FRAC_PI_4,
            theta_std: std::f64::consts::PI / 6.0,
        }
    }
}

impl ActionDistribution {
    pub fn sample_displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let rd = Normal::new(self.r_mean, self.r_std).expect("valid r distribution");
        let td = Normal::new(self.theta_mean, self.theta_std).expect("valid theta distribution");
        let r = loop {
            let r = rd.sample(rng);
            if r > 0.0 {
                break r;
            }
        };
        let theta = td.sample(rng);
        let phi = rng.random::<f64>() * std::f64::consts::TAU;
        Vec3::new(
            r * theta.sin() * phi.cos(),
            r * theta.sin() * phi.sin(),
            r * theta.cos(),
        )
    }
}

/// Grasp point uniform over visible points, displacement from `dist`.
pub fn sample_action<R: Rng + ?Sized>(
    obs: &PartialObservation,
    dist: &ActionDistribution,
    rng: &mut R,
) -> Result<Action> {
    if obs.points.is_empty() {
        return Err(Error::EmptyObservation);
    }
    let p_g = obs.points[rng.random_range(0..obs.points.len())];
    Ok(Action { p_g, p_r: p_g + dist.sample_displacement(rng) })
}

/// Scene randomization applied at every episode reset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Half-width of the square region the object center is placed in.
    pub placement: f64,
    pub max_obstacles: usize,
    /// Commands per episode before the scene is reset.
    pub episode_len: usize,
    /// Rotate the rest pose by a random yaw at every reset.
    pub randomize_yaw: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { placement: 0.1, max_obstacles: 2, episode_len: 15, randomize_yaw: true }
    }
}

/// Random yaw and placement of the rest pose on the floor, plus obstacles
/// clear of the object's footprint. The result is settled.
pub fn random_scene<R: Rng + ?Sized>(
    sim: &Simulator,
    mesh: &TetMesh,
    scene: &SceneConfig,
    rng: &mut R,
) -> Result<SceneState> {
    let (lo, hi) = bounding_box(&mesh.vertices);
    let mid = (lo + hi) / 2.0;
    let yaw = rng.random::<f64>() * std::f64::consts::TAU * if scene.randomize_yaw { 1.0 } else { 0.0 };
    let (s, c) = yaw.sin_cos();
    let shift = Vec3::new(
        (rng.random::<f64>() * 2.0 - 1.0) * scene.placement,
        (rng.random::<f64>() * 2.0 - 1.0) * scene.placement,
        0.0,
    );
    let positions: Vec<Vec3> = mesh
        .vertices
        .iter()
        .map(|v| {
            let d = v - mid;
            Vec3::new(c * d.x - s * d.y, s * d.x + c * d.y, v.z - lo.z) + shift
        })
        .collect();
    let (plo, phi) = bounding_box(&positions);
    let n_obs = if scene.max_obstacles == 0 {
        0
    } else {
        rng.random_range(0..=scene.max_obstacles)
    };
    let mut obstacles = Vec::with_capacity(n_obs);
    while obstacles.len() < n_obs {
        let size = Vec3::new(
            0.04 + 0.06 * rng.random::<f64>(),
            0.04 + 0.06 * rng.random::<f64>(),
            0.02 + 0.05 * rng.random::<f64>(),
        );
        let ang = rng.random::<f64>() * std::f64::consts::TAU;
        let dist = 0.25 + 0.15 * rng.random::<f64>();
        let center = (plo + phi) / 2.0 + Vec3::new(ang.cos(), ang.sin(), 0.0) * dist;
        let ob = Aabb {
            min: Vec3::new(center.x - size.x / 2.0, center.y - size.y / 2.0, 0.0),
            max: Vec3::new(center.x + size.x / 2.0, center.y + size.y / 2.0, size.z),
        };
        let overlaps = ob.min.x < phi.x && ob.max.x > plo.x && ob.min.y < phi.y && ob.max.y > plo.y;
        if !overlaps {
            obstacles.push(ob);
        }
    }
    let (settled, _) = sim.settle(&SceneState::at_rest(positions, obstacles))?;
    let mut settled = settled;
    settled.time = 0.0;
    Ok(settled)
}

/// One executed command with its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub episode: usize,
    pub seed: u64,
    pub config_hash: String,
    pub mesh_id: String,
    pub action: Action,
    pub missed_grasp: bool,
    pub obstacles: Vec<Aabb>,
    pub pre: Vec<Vec3>,
    pub post: Vec<Vec3>,
    pub flow: Vec<Vec3>,
    pub observation: PartialObservation,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub sim: SimConfig,
    pub actions: ActionDistribution,
    pub scene: SceneConfig,
    pub camera: Camera,
}

impl SimulateConfig {
    pub fn hash(&self, mesh: &TetMesh) -> String {
        config_hash(&(self, mesh.id()))
    }
}

/// Generates `n_actions` records. The scene is reset after `episode_len`
/// commands or as soon as the object leaves the camera frame.
pub fn simulate<R: Rng + ?Sized>(
    mesh: &TetMesh,
    cfg: &SimulateConfig,
    n_actions: usize,
    seed: u64,
    rng: &mut R,
) -> Result<Vec<TrajectoryRecord>> {
    let sim = Simulator::new(mesh, cfg.sim.clone());
    let hash = cfg.hash(mesh);
    let mut records = Vec::with_capacity(n_actions);
    let mut state: Option<SceneState> = None;
    let mut episode = 0;
    let mut in_episode = 0;
    for index in 0..n_actions {
        let mut obs = None;
        if let Some(s) = &state {
            let o = observe(mesh, &s.positions, &cfg.camera);
            if in_episode < cfg.scene.episode_len.max(1) && !o.empty {
                obs = Some(o);
            } else {
                state = None;
            }
        }
        if state.is_none() {
            if index > 0 {
                episode += 1;
            }
            in_episode = 0;
            let s = random_scene(&sim, mesh, &cfg.scene, rng)?;
            obs = Some(observe(mesh, &s.positions, &cfg.camera));
            state = Some(s);
        }
        in_episode += 1;
        let pre = state.take().expect("scene initialized");
        let obs = obs.expect("observed");
        let action = sample_action(&obs, &cfg.actions, rng)?;
        let out = sim.execute(&pre, &action)?;
        let mut post = out.post;
        post.time = 0.0;
        records.push(TrajectoryRecord {
            index,
            episode,
            seed,
            config_hash: hash.clone(),
            mesh_id: mesh.id().to_string(),
            action,
            missed_grasp: out.missed_grasp,
            obstacles: pre.obstacles.clone(),
            pre: pre.positions.clone(),
            post: post.positions.clone(),
            flow: out.flow,
            observation: obs,
        });
        state = Some(post);
    }
    Ok(records)
}
