//! Checks for the oracle-backed acceptance criteria. Each returns whether it
//! held plus a one-line summary of what was measured.

use std::path::Path;

use rand::Rng;
use volfield::decoders::{encode_action, encode_observation, Model, ModelConfig, ModelGrad};
use volfield::losses::{
    bce_with_logit, contrastive_euclid, contrastive_euclid_grad, contrastive_geo, contrastive_geo_grad,
    ContrastiveConfig, TrainConfig,
};
use volfield::matching::{corr_accuracy, d_corr, fmr, match_features};
use volfield::metrics::{chamfer, flow_mse, fscore, kendall_tau, miou};
use volfield::neural::{Activation, LayerSpec, Mlp};
use volfield::pipeline::{self, EvalConfig, PlanFileConfig};
use volfield::planner::DynamicsKind;
use volfield::softsim::{Action, SimulateConfig};
use volfield::tetmesh::geodesic_table;
use volfield::triplane::FeatureField;
use volfield::{shapes, Error, Vec3};

use super::*;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

/// Relative-error floor for gradient comparisons.
const GRAD_FLOOR: f64 = 1e-6;
const NET_TOL: f64 = 1e-4;
const LOSS_TOL: f64 = 1e-6;
/// Central-difference step; balances truncation against roundoff for O(1) losses.
const FD_STEP: f64 = 1e-5;

fn gradient_row(name: &str, analytic: &[f64], numeric: &[f64], tol: f64, rows: &mut Vec<(String, f64, f64)>) {
    rows.push((name.to_string(), max_rel_err(analytic, numeric, GRAD_FLOOR), tol));
}

fn mlp_gradients(rows: &mut Vec<(String, f64, f64)>) {
    let mut r = rng(11);
    let specs = [
        LayerSpec { out: 7, activation: Activation::Relu, skip_input: false, extra: 2 },
        LayerSpec { out: 6, activation: Activation::Sigmoid, skip_input: true, extra: 3 },
        LayerSpec { out: 4, activation: Activation::Linear, skip_input: false, extra: 0 },
    ];
    let mut net = Mlp::new(5, &specs, &mut r).unwrap();
    for p in net.params.iter_mut() {
        *p = r.random_range(-0.8..0.8);
    }
    let x: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
    let e0: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
    let e1: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    let dh: Vec<f64> = (0..7).map(|_| r.random_range(-1.0..1.0)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // loss reads both the output and the first hidden layer
    let loss = |net: &Mlp, x: &[f64], e0: &[f64], e1: &[f64]| {
        let cache = net.forward(x, &[e0, e1, &[]]).unwrap();
        dot(cache.output(), &c) + dot(cache.activation(0), &dh)
    };
    let cache = net.forward(&x, &[&e0, &e1, &[]]).unwrap();
    let mut g = vec![0.0; net.num_params()];
    let (dx, dextras) = net.backward_layers_into(&cache, &[&dh, &[], &c], &mut g).unwrap();

    let params = net.params.clone();
    let mut probe = net.clone();
    let num = numeric_grad(
        &mut |p| {
            probe.params.copy_from_slice(p);
            loss(&probe, &x, &e0, &e1)
        },
        &params,
        FD_STEP,
    );
    gradient_row("mlp parameters", &g, &num, NET_TOL, rows);
    let num = numeric_grad(&mut |xx| loss(&net, xx, &e0, &e1), &x, FD_STEP);
    gradient_row("mlp input (with skip)", &dx, &num, NET_TOL, rows);
    let num = numeric_grad(&mut |e| loss(&net, &x, e, &e1), &e0, FD_STEP);
    gradient_row("mlp extra input, layer 0", &dextras[0], &num, NET_TOL, rows);
    let num = numeric_grad(&mut |e| loss(&net, &x, &e0, e), &e1, FD_STEP);
    gradient_row("mlp extra input, layer 1", &dextras[1], &num, NET_TOL, rows);
}

fn triplane_gradients(rows: &mut Vec<(String, f64, f64)>) {
    let mut r = rng(12);
    let mut field = FeatureField::zeros(5, 3, Vec3::repeat(-1.0), Vec3::new(1.0, 2.0, 0.5)).unwrap();
    for v in field.values.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let c = [0.3, -1.2, 0.7];
    let mut worst_a = Vec::new();
    let mut worst_n = Vec::new();
    for p in [Vec3::new(0.13, 0.71, -0.2), Vec3::new(-0.9, 1.9, 0.4), Vec3::new(1.5, -2.0, 0.1)] {
        let mut g = vec![0.0; field.len()];
        field.backward(&p, &c, &mut g);
        let mut probe = field.clone();
        let values = field.values.clone();
        let num = numeric_grad(
            &mut |v| {
                probe.values.copy_from_slice(v);
                probe.query(&p).iter().zip(&c).map(|(a, b)| a * b).sum()
            },
            &values,
            FD_STEP,
        );
        worst_a.extend(g);
        worst_n.extend(num);
    }
    gradient_row("triplane query (inside and clamped)", &worst_a, &worst_n, NET_TOL, rows);
}

fn flat_params(m: &Model) -> Vec<f64> {
    let mut m = m.clone();
    m.buffers_mut().iter().flat_map(|b| b.iter().copied()).collect::<Vec<_>>()
}

fn set_params(m: &mut Model, flat: &[f64]) {
    let mut k = 0;
    for b in m.buffers_mut() {
        let n = b.len();
        b.copy_from_slice(&flat[k..k + n]);
        k += n;
    }
}

fn flat_grad(g: &ModelGrad) -> Vec<f64> {
    g.buffers().iter().flat_map(|b| b.iter().copied()).collect()
}

fn random_model(fusion: bool, seed: u64) -> Model {
    let cfg = ModelConfig { res: 4, feature_dim: 3, width: 5, depth: 3, embed_dim: 3, half_extent: 0.3, fusion };
    let mut r = rng(seed);
    let mut m = Model::new(cfg, &mut r).unwrap();
    for b in m.buffers_mut() {
        for v in b.iter_mut() {
            *v = r.random_range(-0.6..0.6);
        }
    }
    m
}

fn head_gradients(rows: &mut Vec<(String, f64, f64)>) {
    let mut r = rng(13);
    let cloud: Vec<Vec3> = random_points(&mut r, 40, 0.1);
    for fusion in [true, false] {
        let m = random_model(fusion, 14);
        let geo = encode_observation(&cloud, &m.cfg).unwrap();
        let action = Action { p_g: cloud[3], p_r: Vec3::new(0.05, -0.1, 0.2) };
        let dynamics = encode_action(&cloud, &action, geo.frame, &m.cfg).unwrap();
        let p = Vec3::new(0.031, -0.042, 0.017);
        let params = flat_params(&m);
        let mut probe = m.clone();

        if fusion {
            let mut g = ModelGrad::zeros(&m);
            m.occupancy_backward(&geo, &p, |z| bce_with_logit(z, true).1, &mut g);
            let num = numeric_grad(
                &mut |x| {
                    set_params(&mut probe, x);
                    bce_with_logit(probe.occupancy_logit(&geo, &p), true).0
                },
                &params,
                FD_STEP,
            );
            gradient_row("occupancy head with BCE", &flat_grad(&g), &num, NET_TOL, rows);

            let c = [0.4, -0.9, 1.1];
            let mut g = ModelGrad::zeros(&m);
            m.embed_backward(&geo, &p, &c, &mut g);
            let num = numeric_grad(
                &mut |x| {
                    set_params(&mut probe, x);
                    probe.embed(&geo, &p).iter().zip(&c).map(|(a, b)| a * b).sum()
                },
                &params,
                FD_STEP,
            );
            gradient_row("correspondence head", &flat_grad(&g), &num, NET_TOL, rows);
        }

        let c = Vec3::new(-0.7, 0.2, 1.3);
        let mut g = ModelGrad::zeros(&m);
        m.flow_backward_joint(&geo, &dynamics, &p, |_| c, &mut g);
        let num = numeric_grad(
            &mut |x| {
                set_params(&mut probe, x);
                let fusion_in = probe.fusion_inputs(&geo, &p);
                probe.flow(&dynamics, &fusion_in, &p).dot(&c)
            },
            &params,
            FD_STEP,
        );
        let name = if fusion { "flow head, fused through occupancy and geometry" } else { "flow head, unfused" };
        gradient_row(name, &flat_grad(&g), &num, NET_TOL, rows);
    }
}

fn loss_gradients(rows: &mut Vec<(String, f64, f64)>) {
    let mut r = rng(15);
    let cfg = ContrastiveConfig::new(0.1, 1.4, 0.05).unwrap();
    let mut a_all = Vec::new();
    let mut n_all = Vec::new();
    let mut ga_all = Vec::new();
    let mut gn_all = Vec::new();
    for case in 0..40 {
        let fp: Vec<f64> = (0..6).map(|_| r.random_range(-0.6..0.6)).collect();
        let fq: Vec<f64> = (0..6).map(|_| r.random_range(-0.6..0.6)).collect();
        let is_match = case % 2 == 0;
        let (_, gp, gq) = contrastive_euclid_grad(&fp, &fq, is_match, &cfg);
        a_all.extend(gp);
        a_all.extend(gq);
        n_all.extend(numeric_grad(&mut |x| contrastive_euclid(x, &fq, is_match, &cfg), &fp, FD_STEP));
        n_all.extend(numeric_grad(&mut |x| contrastive_euclid(&fp, x, is_match, &cfg), &fq, FD_STEP));

        let d_o = if case % 2 == 0 { r.random_range(0.0..0.05) } else { r.random_range(0.05..0.8) };
        let (_, gp, gq) = contrastive_geo_grad(&fp, &fq, d_o, &cfg);
        ga_all.extend(gp);
        ga_all.extend(gq);
        gn_all.extend(numeric_grad(&mut |x| contrastive_geo(x, &fq, d_o, &cfg), &fp, FD_STEP));
        gn_all.extend(numeric_grad(&mut |x| contrastive_geo(&fp, x, d_o, &cfg), &fq, FD_STEP));
    }
    gradient_row("fixed-margin contrastive loss", &a_all, &n_all, LOSS_TOL, rows);
    gradient_row("geodesic contrastive loss", &ga_all, &gn_all, LOSS_TOL, rows);

    let logits: Vec<f64> = (0..20).map(|_| r.random_range(-6.0..6.0)).collect();
    let analytic: Vec<f64> = logits.iter().enumerate().map(|(i, &z)| bce_with_logit(z, i % 2 == 0).1).collect();
    let numeric: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| numeric_grad(&mut |x| bce_with_logit(x[0], i % 2 == 0).0, &[z], FD_STEP)[0])
        .collect();
    gradient_row("binary cross-entropy on logits", &analytic, &numeric, LOSS_TOL, rows);
}

/// Every differentiable path against central differences.
pub fn gradient_rows() -> Vec<(String, f64, f64)> {
    let mut rows = Vec::new();
    mlp_gradients(&mut rows);
    triplane_gradients(&mut rows);
    head_gradients(&mut rows);
    loss_gradients(&mut rows);
    rows
}

pub fn gradients() -> Outcome {
    let rows = gradient_rows();
    let failed: Vec<String> =
        rows.iter().filter(|r| !(r.1 < r.2)).map(|r| format!("{} ({:.1e} >= {:.0e})", r.0, r.1, r.2)).collect();
    let worst = rows.iter().map(|r| r.1 / r.2).fold(0.0, f64::max);
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} paths, worst error {:.2} of tolerance", rows.len(), worst)
        } else {
            format!("failing: {}", failed.join("; "))
        },
    }
}

pub fn geodesics() -> Outcome {
    let mut r = rng(21);
    let mut mismatched = 0;
    let mut max_tets = 0;
    for _ in 0..100 {
        let mesh = random_mesh(&mut r, 8);
        max_tets = max_tets.max(mesh.num_tets());
        let table = geodesic_table(&mesh).unwrap();
        let fw = floyd_warshall(&mesh.adjacency, &mesh.edge_weights);
        let n = mesh.num_tets();
        let same = (0..n).all(|i| (0..n).all(|j| table.dist(i, j).to_bits() == fw[i * n + j].to_bits()));
        mismatched += !same as usize;
    }
    let mesh = shapes::folded_chain_mesh();
    let table = geodesic_table(&mesh).unwrap();
    let diam = table.diameter();
    let n = mesh.vertices.len();
    let mut witness = None;
    'search: for u in 0..n {
        for v in u + 1..n {
            let e = (mesh.vertices[u] - mesh.vertices[v]).norm();
            let g = table.vertex_dist(&mesh, u, v);
            if e < 0.1 * diam && g > 0.5 * diam {
                witness = Some((u, v, e, g));
                break 'search;
            }
        }
    }
    Outcome {
        pass: mismatched == 0 && witness.is_some(),
        detail: format!(
            "{mismatched}/100 tables differ from Floyd-Warshall (up to {max_tets} tets); folded pair {}",
            witness
                .map(|(u, v, e, g)| format!("{u}-{v}: euclid {e:.3} m, geodesic {g:.3} m, diameter {diam:.3} m"))
                .unwrap_or_else(|| "not found".into())
        ),
    }
}

fn random_features(r: &mut impl Rng, n: usize, dim: usize, coarse: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| if coarse { r.random_range(0..3) as f64 } else { r.random_range(-1.0..1.0) })
                .collect()
        })
        .collect()
}

pub fn matching_and_metrics() -> Outcome {
    let mut r = rng(31);
    let mut bad_match = 0;
    for case in 0..100 {
        let m = r.random_range(1..=10);
        let n = r.random_range(1..=10);
        let dim = r.random_range(1..=4);
        // coarse integer features force ties
        let coarse = case % 3 == 0;
        let src = random_features(&mut r, m, dim, coarse);
        let tgt = random_features(&mut r, n, dim, coarse);
        bad_match += (match_features(&src, &tgt).unwrap().mapping != brute_match(&src, &tgt)) as usize;
    }
    let mut bad: Vec<&str> = Vec::new();
    for _ in 0..200 {
        let n = r.random_range(1..=20);
        let m = r.random_range(1..=20);
        let a = random_points(&mut r, n, 0.05);
        let b = random_points(&mut r, m, 0.05);
        let xi: Vec<usize> = (0..n).map(|_| r.random_range(0..m)).collect();
        let gt: Vec<usize> = (0..n).map(|_| r.random_range(0..m)).collect();
        let a2 = random_points(&mut r, n, 0.05);
        if d_corr(&a, &b, &xi) != brute_dcorr(&a, &b, &xi) {
            bad.push("d_corr");
        }
        if chamfer(&a, &b).unwrap() != brute_chamfer(&a, &b) {
            bad.push("chamfer");
        }
        if flow_mse(&a, &a2) != brute_flow_mse(&a, &a2) {
            bad.push("flow mse");
        }
        let f = fmr(&xi, &gt, &b, 0.03, 0.05);
        let hits = brute_hits(&xi, &gt, &b, 0.03);
        if f.inlier_fraction != hits || f.recalled != (hits > 0.05) {
            bad.push("fmr");
        }
        if corr_accuracy(&xi, &gt, &b, 0.02) != brute_hits(&xi, &gt, &b, 0.02) {
            bad.push("accuracy");
        }
        let s = fscore(&a, &b, 0.04).unwrap();
        if (s.precision, s.recall, s.f) != brute_fscore(&a, &b, 0.04) {
            bad.push("f-score");
        }
    }
    bad.sort();
    bad.dedup();
    Outcome {
        pass: bad_match == 0 && bad.is_empty(),
        detail: format!(
            "{bad_match}/100 matchings differ from exhaustive argmin; metric mismatches: {}",
            if bad.is_empty() { "none".to_string() } else { bad.join(", ") }
        ),
    }
}

fn same_tau(a: &[f64], b: &[f64]) -> bool {
    match (kendall_tau(a, b), brute_kendall(a, b)) {
        (Ok(t), Some(o)) => t.to_bits() == o.to_bits(),
        (Err(Error::AllTied), None) => true,
        _ => false,
    }
}

pub fn kendall() -> Outcome {
    let mut perms = 0;
    let mut bad = 0;
    for n in 2..=6 {
        let gt: Vec<f64> = (0..n).map(|i| i as f64).collect();
        for p in permutations(n) {
            let pred: Vec<f64> = p.iter().map(|&i| i as f64).collect();
            perms += 1;
            bad += !same_tau(&pred, &gt) as usize;
        }
    }
    let mut r = rng(41);
    for case in 0..1000 {
        let n = r.random_range(2..=50);
        let tied = case % 4 == 0;
        let draw = |r: &mut ChaCha8Rng| if tied { r.random_range(0..4) as f64 } else { r.random_range(-1.0..1.0) };
        let a: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let b: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        bad += !same_tau(&a, &b) as usize;
    }
    let up: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let down: Vec<f64> = up.iter().rev().copied().collect();
    let extremes = kendall_tau(&up, &up).unwrap() == 1.0 && kendall_tau(&up, &down).unwrap() == -1.0;
    Outcome {
        pass: bad == 0 && extremes,
        detail: format!("{bad} mismatches over {perms} permutations and 1000 random cases; extremes exact: {extremes}"),
    }
}

pub fn miou_estimator() -> Outcome {
    let a = |p: &Vec3| (0..3).all(|k| (0.0..=1.0).contains(&p[k]));
    let b = |p: &Vec3| (0.5..=1.5).contains(&p.x) && (0.0..=1.0).contains(&p.y) && (0.0..=1.0).contains(&p.z);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let e = miou(a, b, Vec3::zeros(), Vec3::new(1.5, 1.0, 1.0), 100_000, seed).unwrap();
        worst = worst.max((e.iou - 1.0 / 3.0).abs());
    }
    Outcome { pass: worst <= 0.01, detail: format!("max |IoU - 1/3| over 20 seeds = {worst:.4}") }
}

pub fn loss_consistency() -> Outcome {
    let mut r = rng(51);
    let cfg = ContrastiveConfig::new(0.1, 1.4, 0.05).unwrap();
    let mut unequal = 0;
    for _ in 0..1000 {
        let fp: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let fq: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
        let d_o = r.random_range(0.0..cfg.d_thres);
        let geo = contrastive_geo_grad(&fp, &fq, d_o, &cfg);
        let euc = contrastive_euclid_grad(&fp, &fq, true, &cfg);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if geo.0.to_bits() != euc.0.to_bits() || bits(&geo.1) != bits(&euc.1) || bits(&geo.2) != bits(&euc.2) {
            unequal += 1;
        }
    }
    let mut decreasing = 0;
    for _ in 0..20 {
        let fp: Vec<f64> = (0..8).map(|_| r.random_range(-0.5..0.5)).collect();
        let fq: Vec<f64> = (0..8).map(|_| r.random_range(-0.5..0.5)).collect();
        let grid: Vec<f64> = (0..100).map(|i| cfg.d_thres * (1.0 + i as f64 * 0.2)).collect();
        let losses: Vec<f64> = grid.iter().map(|&d| contrastive_geo(&fp, &fq, d, &cfg)).collect();
        decreasing += losses.windows(2).filter(|w| w[1] < w[0]).count();
    }
    Outcome {
        pass: unequal == 0 && decreasing == 0,
        detail: format!("{unequal}/1000 positive-branch pairs differ bitwise; {decreasing} decreasing steps on the negative branch"),
    }
}

/// Runs simulate, train, evaluate and plan into `dir`; returns the files written.
pub fn run_pipeline(dir: &Path) -> volfield::Result<Vec<std::path::PathBuf>> {
    let mesh = shapes::box_mesh();
    let traj = dir.join("traj.jsonl");
    pipeline::run_simulate(&mesh, &SimulateConfig::default(), 4, 5, &traj)?;
    let mut tc = TrainConfig { steps: 8, query_points: 64, pairs: 32, eval_every: 4, ..Default::default() };
    tc.model = ModelConfig { res: 8, feature_dim: 8, width: 8, depth: 3, embed_dim: 4, ..Default::default() };
    let ck = dir.join("checkpoint.json");
    let loss = dir.join("loss.csv");
    pipeline::run_train(mesh.clone(), std::slice::from_ref(&traj), &tc, &ck, &loss)?;
    let eval = dir.join("eval.csv");
    let ec = EvalConfig { miou_samples: 4000, candidates: 3, ..Default::default() };
    pipeline::run_evaluate(mesh.clone(), &ck, &traj, &ec, &eval)?;
    let mut pc = PlanFileConfig::default();
    pc.plan.k = 4;
    pc.plan.horizon = 2;
    pc.plan.grid = 8;
    pc.plan.tau = 1e-3;
    pc.plan.miou_samples = 4000;
    let mut out = vec![traj, ck.clone(), loss, eval];
    for (kind, name) in [(DynamicsKind::Oracle, "oracle"), (DynamicsKind::Learned, "learned")] {
        let report = dir.join(format!("plan_{name}.json"));
        let metrics = dir.join(format!("plan_{name}.csv"));
        pipeline::run_plan(&mesh, &pc, 8, 9, Some(&ck), kind, &report, Some(&metrics))?;
        out.push(report);
        out.push(metrics);
    }
    Ok(out)
}

pub fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (fa, fb) = match (run_pipeline(a.path()), run_pipeline(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Outcome { pass: false, detail: format!("pipeline failed: {e}") },
    };
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} output files byte-identical across two runs", fa.len())
        } else {
            format!("differing outputs: {}", differing.join(", "))
        },
    }
}
