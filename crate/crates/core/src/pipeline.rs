//! File formats and the simulate, train, evaluate, plan and report commands.
//!
//! Every output embeds the tool version and a configuration hash. Nothing
//! here reads the clock, so outputs are pure functions of inputs and seeds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoders::{encode_step, Model, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::losses::{predict_flow, train, Dataset, TrainConfig};
use crate::matching::{
    corr_accuracy, d_corr, fmr, match_features, DESK_ACCURACY_RADIUS, DESK_INLIER_DIST, DESK_INLIER_RATIO,
};
use crate::metrics::{flow_mse, flow_mse_subset, kendall_tau, miou, MIOU_SAMPLES};
use crate::planner::{
    evaluate_plan, make_problem, plan, CostKind, Dynamics, DynamicsKind, ExecutedMetrics, PlanConfig, ProblemConfig,
    RollOut,
};
use crate::softsim::{
    sample_action, simulate, ActionDistribution, Camera, SceneState, SimConfig, SimulateConfig, Simulator,
    TrajectoryRecord,
};
use crate::tetmesh::{bounding_box, containing_tet, geodesic_table, TetMesh};
use crate::{config_hash, par, shapes, Vec3, VERSION};

fn schema_error(path: impl ToString, msg: impl ToString) -> Error {
    Error::Schema { path: path.to_string(), msg: msg.to_string() }
}

fn display_path(p: &serde_path_to_error::Path) -> String {
    let s = p.to_string();
    if s == "." {
        "<root>".into()
    } else {
        s
    }
}

/// Parses JSON, reporting the field path of the first violation.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| schema_error(display_path(e.path()), e.inner()))
}

/// Parses a TOML document, reporting the field path of the first violation.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| schema_error("<toml>", e.message()))?;
    serde_path_to_error::deserialize(de).map_err(|e| schema_error(display_path(e.path()), e.inner().message()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(BufWriter::new(f))
}

fn read_toml_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => parse_toml(&read_text(p)?).map_err(|e| prefix_schema(e, &p.display().to_string())),
        None => Ok(T::default()),
    }
}

fn prefix_schema(e: Error, prefix: &str) -> Error {
    match e {
        Error::Schema { path, msg } => Error::Schema { path: format!("{prefix}: {path}"), msg },
        other => other,
    }
}

/// Built-in mesh name (see [`shapes::NAMES`]) or path to a JSON mesh file.
pub fn load_mesh(source: &str) -> Result<TetMesh> {
    if let Some(m) = shapes::by_name(source) {
        return Ok(m);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{source}: no such mesh file or built-in mesh (built-ins: {})", shapes::NAMES.join(", ")),
        )));
    }
    let file = parse_json(&read_text(path)?).map_err(|e| prefix_schema(e, source))?;
    TetMesh::from_file(file)
}

#[derive(Serialize)]
struct TrajectoryLine {
    version: String,
    #[serde(flatten)]
    record: TrajectoryRecord,
}

/// Writes records as JSON lines, one per action.
pub fn write_trajectories<W: Write>(records: &[TrajectoryRecord], mut out: W) -> Result<()> {
    for record in records {
        let line = TrajectoryLine { version: VERSION.into(), record: record.clone() };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

// `flatten` would hide field paths, so the version is split off by hand.
fn parse_trajectory_line(line: &str) -> Result<TrajectoryRecord> {
    let mut value: serde_json::Value = parse_json(line)?;
    let obj = value.as_object_mut().ok_or_else(|| schema_error("<root>", "expected a JSON object"))?;
    match obj.remove("version") {
        Some(serde_json::Value::String(_)) => {}
        Some(_) => return Err(schema_error("version", "expected a string")),
        None => return Err(schema_error("version", "missing field")),
    }
    serde_path_to_error::deserialize(value).map_err(|e| schema_error(display_path(e.path()), e.inner()))
}

/// Reads a JSON-lines trajectory file; violations name the line and field.
pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let f = File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{} line {}", path.display(), i + 1);
        let r = parse_trajectory_line(&line).map_err(|e| prefix_schema(e, &at))?;
        let n = r.pre.len();
        if r.post.len() != n || r.flow.len() != n {
            return Err(schema_error(
                format!("{} line {}: post/flow", path.display(), i + 1),
                format!("expected {n} entries like pre, got {} and {}", r.post.len(), r.flow.len()),
            ));
        }
        out.push(r);
    }
    Ok(out)
}

fn check_records(mesh: &TetMesh, records: &[TrajectoryRecord]) -> Result<()> {
    for r in records {
        if r.mesh_id != mesh.id() {
            return Err(schema_error(
                format!("record {}: mesh_id", r.index),
                format!("trajectory was generated on mesh {}, not {}", r.mesh_id, mesh.id()),
            ));
        }
        if r.pre.len() != mesh.vertices.len() {
            return Err(schema_error(
                format!("record {}: pre", r.index),
                format!("{} vertices, mesh has {}", r.pre.len(), mesh.vertices.len()),
            ));
        }
        if r.observation.vertex_ids.iter().any(|&v| v >= mesh.vertices.len()) {
            return Err(schema_error(format!("record {}: observation.vertex_ids", r.index), "vertex out of range"));
        }
    }
    Ok(())
}

/// Simulates `n_actions` commands and writes the trajectory file.
pub fn run_simulate(mesh: &TetMesh, cfg: &SimulateConfig, n_actions: usize, seed: u64, out: &Path) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = simulate(mesh, cfg, n_actions, seed, &mut rng)?;
    write_trajectories(&records, create(out)?)?;
    Ok(records.len())
}

pub fn load_simulate_config(path: Option<&Path>) -> Result<SimulateConfig> {
    read_toml_or_default(path)
}

/// Model parameters with the configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config_hash: String,
    pub mesh_id: String,
    pub train_config: TrainConfig,
    pub best_step: usize,
    pub model: Model,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = parse_json(&read_text(path)?).map_err(|e| prefix_schema(e, &path.display().to_string()))?;
        let expected = ck.model.buffer_lens();
        let rebuilt = Model::new(ck.train_config.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        if rebuilt.buffer_lens() != expected || ck.model.cfg != ck.train_config.model {
            return Err(schema_error(
                format!("{}: model", path.display()),
                "parameter shapes do not match the stored model configuration",
            ));
        }
        Ok(ck)
    }
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    read_toml_or_default(Some(path))
}

pub struct TrainSummary {
    pub best_step: usize,
    pub steps_run: usize,
    pub config_hash: String,
}

/// Trains on the given trajectory files and writes the checkpoint and loss
/// curve. On divergence the last good checkpoint is still written and the
/// divergence is returned as an error.
pub fn run_train(mesh: TetMesh, data: &[PathBuf], cfg: &TrainConfig, out: &Path, log: &Path) -> Result<TrainSummary> {
    if data.is_empty() {
        return Err(Error::Config("train needs at least one trajectory file".into()));
    }
    let mut records = Vec::new();
    for p in data {
        records.extend(read_trajectories(p)?);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("trajectory records"));
    }
    check_records(&mesh, &records)?;
    let data_hashes: Vec<&str> = records.iter().map(|r| r.config_hash.as_str()).collect();
    let hash = config_hash(&(cfg, mesh.id(), &data_hashes, records.len()));
    let camera = records[0].observation.camera;
    let table = geodesic_table(&mesh)?;
    let mesh_id = mesh.id().to_string();
    let dataset = Dataset::new(mesh, table, records, camera);
    let model = Model::new(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let result = train(&dataset, model, cfg)?;
    let ck = Checkpoint {
        version: VERSION.into(),
        config_hash: hash.clone(),
        mesh_id,
        train_config: cfg.clone(),
        best_step: result.best_step,
        model: result.model.clone(),
    };
    let mut w = create(out)?;
    serde_json::to_writer(&mut w, &ck)?;
    w.flush()?;
    result.write_csv(create(log)?, &hash)?;
    if let Some(step) = result.diverged_at {
        return Err(Error::TrainingDiverged { step });
    }
    Ok(TrainSummary { best_step: result.best_step, steps_run: result.curve.len(), config_hash: hash })
}

/// Settings for `evaluate`; every field has a default.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Simulator used to execute candidate actions for the ranking metric.
    pub sim: SimConfig,
    pub actions: ActionDistribution,
    /// Candidate actions ranked per record.
    pub candidates: usize,
    pub miou_samples: usize,
    /// Occupancy threshold.
    pub tau: f64,
    pub inlier_dist: f64,
    pub inlier_ratio: f64,
    pub accuracy_radius: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            actions: ActionDistribution::default(),
            candidates: 8,
            miou_samples: MIOU_SAMPLES,
            tau: DEFAULT_TAU,
            inlier_dist: DESK_INLIER_DIST,
            inlier_ratio: DESK_INLIER_RATIO,
            accuracy_radius: DESK_ACCURACY_RADIUS,
            seed: 0,
        }
    }
}

pub fn load_eval_config(path: Option<&Path>) -> Result<EvalConfig> {
    read_toml_or_default(path)
}

/// One row of the `evaluate` CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalRow {
    pub record: usize,
    pub episode: usize,
    pub miou: f64,
    pub vis_mse: f64,
    pub full_mse: f64,
    pub fmr_recalled: bool,
    pub inlier_fraction: f64,
    pub accuracy: f64,
    /// Predicted vs executed ranking of candidate actions; empty when every
    /// pair is tied.
    pub kendall_tau: Option<f64>,
    pub inlier_dist: f64,
    pub inlier_ratio: f64,
    pub accuracy_radius: f64,
    pub config_hash: String,
    pub version: String,
}

fn predicted_post(model: &Model, record: &TrajectoryRecord, action: &crate::softsim::Action) -> Result<Vec<Vec3>> {
    let (geo, dynamics) = encode_step(&record.observation, action, &model.cfg)?;
    let flow = par::map(&record.pre, |p| {
        let fusion = model.fusion_inputs(&geo, p);
        model.flow(&dynamics, &fusion, p)
    });
    Ok(record.pre.iter().zip(&flow).map(|(p, f)| p + f).collect())
}

fn evaluate_record(
    mesh: &TetMesh,
    sim: &Simulator,
    model: &Model,
    data: &Dataset,
    record_idx: usize,
    cfg: &EvalConfig,
    hash: &str,
) -> Result<EvalRow> {
    let r = &data.records[record_idx];
    let ctx = &data.context(&model.cfg, record_idx)?;

    let (lo, hi) = bounding_box(&r.pre);
    let pad = (hi - lo) * 0.1;
    let iou = miou(
        |p| model.occupancy(&ctx.geo_pre, p) > cfg.tau,
        |p| containing_tet(mesh, &r.pre, p).is_some(),
        lo - pad,
        hi + pad,
        cfg.miou_samples,
        cfg.seed,
    )?;

    let pred = predict_flow(model, r, ctx);
    let vis_mse = flow_mse_subset(&pred, &r.flow, &r.observation.vertex_ids);
    let full_mse = flow_mse(&pred, &r.flow);

    let src = par::map(&r.pre, |p| model.embed(&ctx.geo_pre, p));
    let tgt = par::map(&r.post, |p| model.embed(&ctx.geo_post, p));
    let found = match_features(&src, &tgt)?;
    let gt: Vec<usize> = (0..r.pre.len()).collect();
    let m = fmr(&found.mapping, &gt, &r.post, cfg.inlier_dist, cfg.inlier_ratio);
    let accuracy = corr_accuracy(&found.mapping, &gt, &r.post, cfg.accuracy_radius);

    // rank candidate actions by predicted and executed distance to the
    // recorded post state
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r.index as u64);
    let pre_state = SceneState::at_rest(r.pre.clone(), r.obstacles.clone());
    let mut predicted = Vec::with_capacity(cfg.candidates);
    let mut executed = Vec::with_capacity(cfg.candidates);
    for _ in 0..cfg.candidates {
        let action = sample_action(&r.observation, &cfg.actions, &mut rng)?;
        predicted.push(d_corr(&predicted_post(model, r, &action)?, &r.post, &gt));
        executed.push(d_corr(&sim.execute(&pre_state, &action)?.post.positions, &r.post, &gt));
    }
    let tau = match kendall_tau(&predicted, &executed) {
        Ok(t) => Some(t),
        Err(Error::AllTied) | Err(Error::EmptyInput(_)) => None,
        Err(e) => return Err(e),
    };

    Ok(EvalRow {
        record: r.index,
        episode: r.episode,
        miou: iou.iou,
        vis_mse,
        full_mse,
        fmr_recalled: m.recalled,
        inlier_fraction: m.inlier_fraction,
        accuracy,
        kendall_tau: tau,
        inlier_dist: cfg.inlier_dist,
        inlier_ratio: cfg.inlier_ratio,
        accuracy_radius: cfg.accuracy_radius,
        config_hash: hash.into(),
        version: VERSION.into(),
    })
}

/// Scores a checkpoint on a trajectory file, one CSV row per record.
pub fn run_evaluate(mesh: TetMesh, checkpoint: &Path, data: &Path, cfg: &EvalConfig, out: &Path) -> Result<Vec<EvalRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.mesh_id != mesh.id() {
        return Err(schema_error(
            format!("{}: mesh_id", checkpoint.display()),
            format!("checkpoint was trained on mesh {}, not {}", ck.mesh_id, mesh.id()),
        ));
    }
    let records = read_trajectories(data)?;
    check_records(&mesh, &records)?;
    if records.is_empty() {
        return Err(Error::EmptyInput("trajectory records"));
    }
    let hash = config_hash(&(&ck.config_hash, cfg));
    let camera = records[0].observation.camera;
    let table = geodesic_table(&mesh)?;
    let sim = Simulator::new(&mesh, cfg.sim.clone());
    let dataset = Dataset::new(mesh.clone(), table, records, camera);
    let rows = (0..dataset.records.len())
        .map(|i| evaluate_record(&mesh, &sim, &ck.model, &dataset, i, cfg, &hash))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(create(out)?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Settings for `plan` beyond the command-line flags.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PlanFileConfig {
    pub sim: SimConfig,
    pub camera: Camera,
    pub problem: ProblemConfig,
    pub plan: PlanConfig,
}

pub fn load_plan_config(path: Option<&Path>) -> Result<PlanFileConfig> {
    read_toml_or_default(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub version: String,
    pub config_hash: String,
    pub mesh_id: String,
    pub dynamics: DynamicsKind,
    pub cost: CostKind,
    pub start_seed: u64,
    pub target_seed: u64,
    pub k: usize,
    pub horizon: usize,
    pub best: RollOut,
    /// `(index, predicted cost)`, cheapest first; failed roll-outs are `null`.
    pub ranking: Vec<(usize, f64)>,
    pub executed: ExecutedMetrics,
}

/// One row of the executed-metrics CSV written by `plan`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanMetricsRow {
    pub dynamics: DynamicsKind,
    pub cost: CostKind,
    pub start_seed: u64,
    pub target_seed: u64,
    pub predicted_cost: f64,
    pub d_corr: f64,
    pub success: bool,
    pub miou: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub chamfer: f64,
    pub chamfer_mean: f64,
    pub missed_grasps: usize,
    pub success_radius: f64,
    pub fscore_dist: f64,
    pub config_hash: String,
    pub version: String,
}

/// Generates a problem from the two seeds, plans, executes the best
/// sequence in the simulator and writes the report and metrics.
pub fn run_plan(
    mesh: &TetMesh,
    cfg: &PlanFileConfig,
    start_seed: u64,
    target_seed: u64,
    checkpoint: Option<&Path>,
    dynamics_kind: DynamicsKind,
    out: &Path,
    metrics_out: Option<&Path>,
) -> Result<PlanReport> {
    cfg.plan.validate()?;
    let sim = Simulator::new(mesh, cfg.sim.clone());
    let ck = match (dynamics_kind, checkpoint) {
        (DynamicsKind::Learned, None) => {
            return Err(Error::Config("learned dynamics needs --checkpoint".into()));
        }
        (DynamicsKind::Learned, Some(p)) => {
            let ck = Checkpoint::load(p)?;
            if ck.mesh_id != mesh.id() {
                return Err(schema_error(
                    format!("{}: mesh_id", p.display()),
                    format!("checkpoint was trained on mesh {}, not {}", ck.mesh_id, mesh.id()),
                ));
            }
            Some(ck)
        }
        (DynamicsKind::Oracle, _) => None,
    };
    let hash = config_hash(&(cfg, mesh.id(), dynamics_kind, ck.as_ref().map(|c| c.config_hash.as_str())));
    let problem = make_problem(&sim, mesh, &cfg.problem, cfg.camera, start_seed, target_seed)?;
    let dynamics = match &ck {
        Some(c) => Dynamics::Learned(&c.model),
        None => Dynamics::Oracle(&sim),
    };
    let result = plan(mesh, &problem, &dynamics, &cfg.plan)?;
    let executed = evaluate_plan(mesh, &sim, &problem, &result.best.actions, &cfg.plan)?;
    let report = PlanReport {
        version: VERSION.into(),
        config_hash: hash.clone(),
        mesh_id: mesh.id().into(),
        dynamics: dynamics_kind,
        cost: cfg.plan.cost,
        start_seed,
        target_seed,
        k: cfg.plan.k,
        horizon: cfg.plan.horizon,
        best: result.best.clone(),
        ranking: result.ranking.clone(),
        executed: executed.clone(),
    };
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    if let Some(p) = metrics_out {
        let row = PlanMetricsRow {
            dynamics: dynamics_kind,
            cost: cfg.plan.cost,
            start_seed,
            target_seed,
            predicted_cost: result.best.cost,
            d_corr: executed.d_corr,
            success: executed.success,
            miou: executed.miou,
            fscore: executed.fscore.f,
            precision: executed.fscore.precision,
            recall: executed.fscore.recall,
            chamfer: executed.chamfer,
            chamfer_mean: executed.chamfer_mean,
            missed_grasps: executed.missed_grasps,
            success_radius: cfg.plan.success_radius,
            fscore_dist: cfg.plan.fscore_dist,
            config_hash: hash,
            version: VERSION.into(),
        };
        let mut w = csv::Writer::from_writer(create(p)?);
        w.serialize(&row)?;
        w.flush()?;
    }
    Ok(report)
}

/// Aggregated `evaluate` rows of one file.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSummary {
    pub source: String,
    pub records: usize,
    pub miou: f64,
    pub vis_mse: f64,
    pub full_mse: f64,
    pub fmr: f64,
    pub accuracy: f64,
    /// Mean over records where the ranking was defined.
    pub kendall_tau: Option<f64>,
}

/// Aggregated plan runs sharing dynamics and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSummary {
    pub dynamics: DynamicsKind,
    pub cost: CostKind,
    pub runs: usize,
    pub success_rate: f64,
    pub d_corr: f64,
    pub miou: f64,
    pub fscore: f64,
    pub chamfer: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub dynamics: Vec<DynamicsSummary>,
    pub plans: Vec<PlanSummary>,
    pub warnings: Vec<String>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        out.push(row.map_err(|e| schema_error(format!("{} row {}", path.display(), i + 1), e))?);
    }
    Ok(out)
}

/// Collects every `evaluate` and plan-metrics CSV in `dir` (sorted by name)
/// into summary tables. Other files are skipped with a warning.
pub fn run_report(dir: &Path) -> Result<Report> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    entries.sort();
    let mut report = Report::default();
    let mut plan_rows: Vec<PlanMetricsRow> = Vec::new();
    for path in &entries {
        let header = csv::Reader::from_path(path)?.headers()?.clone();
        let has = |name: &str| header.iter().any(|h| h == name);
        if has("vis_mse") {
            let rows: Vec<EvalRow> = read_rows(path)?;
            if rows.is_empty() {
                report.warnings.push(format!("{}: no rows", path.display()));
                continue;
            }
            let taus: Vec<f64> = rows.iter().filter_map(|r| r.kendall_tau).collect();
            report.dynamics.push(DynamicsSummary {
                source: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                records: rows.len(),
                miou: mean(rows.iter().map(|r| r.miou)),
                vis_mse: mean(rows.iter().map(|r| r.vis_mse)),
                full_mse: mean(rows.iter().map(|r| r.full_mse)),
                fmr: mean(rows.iter().map(|r| r.fmr_recalled as u8 as f64)),
                accuracy: mean(rows.iter().map(|r| r.accuracy)),
                kendall_tau: (!taus.is_empty()).then(|| mean(taus)),
            });
        } else if has("success") {
            plan_rows.extend(read_rows::<PlanMetricsRow>(path)?);
        } else {
            report.warnings.push(format!("{}: not a metrics file, skipped", path.display()));
        }
    }
    let mut groups: Vec<(DynamicsKind, CostKind)> = plan_rows.iter().map(|r| (r.dynamics, r.cost)).collect();
    groups.sort_by_key(|g| (g.0 as u8, g.1 as u8));
    groups.dedup();
    for (dk, ck) in groups {
        let rows: Vec<&PlanMetricsRow> = plan_rows.iter().filter(|r| r.dynamics == dk && r.cost == ck).collect();
        report.plans.push(PlanSummary {
            dynamics: dk,
            cost: ck,
            runs: rows.len(),
            success_rate: mean(rows.iter().map(|r| r.success as u8 as f64)),
            d_corr: mean(rows.iter().map(|r| r.d_corr)),
            miou: mean(rows.iter().map(|r| r.miou)),
            fscore: mean(rows.iter().map(|r| r.fscore)),
            chamfer: mean(rows.iter().map(|r| r.chamfer)),
        });
    }
    if report.dynamics.is_empty() && report.plans.is_empty() {
        report.warnings.push(format!("no metrics files found in {}", dir.display()));
    }
    Ok(report)
}

fn kind_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

impl Report {
    /// Plain-text tables: dynamics, correspondence and ranking per evaluated
    /// file, then plan execution per dynamics and cost.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<28} {:>7} {:>8} {:>10} {:>10} {:>6} {:>8} {:>8}\n",
            "evaluation", "records", "mIoU", "vis MSE", "full MSE", "FMR", "acc", "tau"
        ));
        for d in &self.dynamics {
            s.push_str(&format!(
                "{:<28} {:>7} {:>8.4} {:>10.3e} {:>10.3e} {:>6.3} {:>8.4} {:>8}\n",
                d.source,
                d.records,
                d.miou,
                d.vis_mse,
                d.full_mse,
                d.fmr,
                d.accuracy,
                d.kendall_tau.map(|t| format!("{t:.4}")).unwrap_or_else(|| "n/a".into())
            ));
        }
        s.push('\n');
        s.push_str(&format!(
            "{:<10} {:<8} {:>5} {:>8} {:>10} {:>8} {:>8} {:>10}\n",
            "dynamics", "cost", "runs", "success", "d_corr", "mIoU", "F", "chamfer"
        ));
        for p in &self.plans {
            s.push_str(&format!(
                "{:<10} {:<8} {:>5} {:>8.3} {:>10.3e} {:>8.4} {:>8.4} {:>10.3e}\n",
                kind_name(&p.dynamics),
                kind_name(&p.cost),
                p.runs,
                p.success_rate,
                p.d_corr,
                p.miou,
                p.fscore,
                p.chamfer
            ));
        }
        s
    }
}
