//! One test per acceptance criterion. Each prints a `criterion N: PASS|FAIL`
//! line straight to stderr, so the lines show up without `--nocapture`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use cikan::dataset::TsgSample;
use cikan::governor::{
    run_governed_mission, tsg_exact, GovernorConfig, MissionMode, MissionSummary, NetPredictor,
    OracleStats, ScenarioFamily,
};
use cikan::sim::{Scenario, Simulator};
use cikan::spline::bspline_basis;
use cikan::train::{
    build_kan, loss_and_gradient, loss_from_predictions, train, transform_output, AdamWConfig, LossMode, LossSpec,
    TrainConfig,
};
use cikan::{AnyModel, EdgeKind, KanNetwork, KnotGrid, Model};
use cikan_cli::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn sim() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| Simulator::new(Scenario::default()).unwrap())
}

fn artifacts() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Dataset of 2000 exact-governor samples plus a KAN trained on it, shared by criteria 7, 8 and 10.
/// Also returns the seconds spent generating and training.
fn trained() -> &'static (PathBuf, PathBuf, f64) {
    static TRAINED: OnceLock<(PathBuf, PathBuf, f64)> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let start = Instant::now();
        let dir = artifacts();
        let dataset = dir.join("tsg.csv");
        cmd_generate(&GenerateArgs { config: None, out: dataset.clone(), seed: 1, count: 2000 }).unwrap();
        let ckpt = dir.join("kan.json");
        cmd_train(&TrainArgs {
            config: None,
            dataset: dataset.clone(),
            arch: Arch::KanBspline,
            grid_sizes: vec![],
            out: ckpt.clone(),
            seed: 1,
            epochs: Some(300),
        })
        .unwrap();
        (dataset, ckpt, start.elapsed().as_secs_f64())
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn criterion_01_partition_of_unity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for g in [3, 5, 10, 20] {
        for k in [1, 2, 3] {
            let grid = KnotGrid::new(-1.0, 1.0, g, k).unwrap();
            for _ in 0..1000 {
                let x = rng.random_range(-1.0..1.0);
                let s: f64 = bspline_basis(x, &grid).unwrap().iter().sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(1, worst <= 1e-12 && secs < 1.0, format!("max |sum - 1| = {worst:.2e} over 12 (G,k) x 1000 points, {secs:.3} s"));
}

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for kind in [EdgeKind::BSpline, EdgeKind::Grbf, EdgeKind::Rswaf] {
        let net = KanNetwork::new(&[2, 4, 1], kind, KnotGrid::default(), &mut rng).unwrap();
        let base = net.parameters();
        for _ in 0..20 {
            let x = [rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95)];
            let mut grad = vec![0.0; base.len()];
            net.predict_with_gradient(&x, &mut grad).unwrap();
            for p in 0..base.len() {
                // Five-point stencil: O(h^4) truncation keeps round-off small even for tiny gradients.
                let h = 1e-4;
                let mut m = net.clone();
                let mut at = |d: f64| {
                    let mut v = base.clone();
                    v[p] += d;
                    m.set_parameters(&v);
                    m.forward(&x).unwrap()
                };
                let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
                worst = worst.max(rel_err(fd, grad[p]));
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(2, worst <= 1e-5 && secs < 10.0, format!("max relative error {worst:.2e} over {checked} (param, input) pairs, {secs:.2} s"));
}

#[test]
fn criterion_03_grid_convergence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = |x: f64| (std::f64::consts::PI * x).sin() * (-x * x).exp();
    let data: Vec<TsgSample> = (0..1000)
        .map(|_| {
            let x = rng.random_range(-1.0..1.0);
            TsgSample::new(vec![x], f(x))
        })
        .collect();
    let spec = LossSpec { mode: LossMode::PlainMsRelu, theta_c: 0.0, reg_weight: 0.0, ..LossSpec::default() };
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 50,
        seed: 1,
        patience: 300,
        fit_input_norm: false,
        optimizer: AdamWConfig { lr: 1e-2, weight_decay: 0.0, ..AdamWConfig::default() },
        ..TrainConfig::default()
    };
    // Grid extension: each finer grid starts from the previous fit, re-projected.
    let mut net = build_kan(&[1, 5, 1], EdgeKind::BSpline, KnotGrid::new(-1.0, 1.0, 3, 3).unwrap(), 2).unwrap();
    let mut rmse = Vec::new();
    for g in [3, 5, 10, 20] {
        let mut cfg = cfg;
        if g != 3 {
            net.refine_grid(g).unwrap();
            // Finer grids continue from a good fit, so they take smaller steps.
            cfg.optimizer.lr = 3e-2 / g as f64;
        }
        let out = train(&data, net, &spec, &cfg).unwrap();
        rmse.push(out.best_val.total.sqrt());
        net = out.model;
    }
    let monotone = rmse.windows(2).all(|w| w[1] <= w[0]);
    let secs = start.elapsed().as_secs_f64();
    let shown: Vec<String> = rmse.iter().map(|r| format!("{r:.3e}")).collect();
    verdict(
        3,
        monotone && rmse[3] < 1e-3 && secs < 300.0,
        format!("best-val RMSE for G = 3,5,10,20: [{}], {secs:.1} s", shown.join(", ")),
    );
}

#[test]
fn criterion_04_loss_algebra() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = KanNetwork::new(&[2, 3, 1], EdgeKind::BSpline, KnotGrid::default(), &mut rng).unwrap();
    let (mut exact, mut one_sided) = (0, 0);
    for b in 0..100 {
        let n = rng.random_range(1..40);
        let mode = if b % 2 == 0 { LossMode::LogMsRelu } else { LossMode::PlainMsRelu };
        let spec = LossSpec { mode, theta_c: rng.random_range(0.0..50.0), reg_weight: rng.random_range(0.0..1.0), ..LossSpec::default() };
        let batch: Vec<TsgSample> = (0..n)
            .map(|_| TsgSample::new(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], -rng.random_range(0.1..500.0)))
            .collect();
        let mut grad = vec![0.0; net.num_parameters()];
        let l = loss_and_gradient(&batch, &net, &spec, &mut grad).unwrap();
        exact += (l.total == l.regression + spec.theta_c * l.constraint + spec.reg_weight * l.regularizer) as usize;
        // Predictions strictly above every (log-)target: |t*| in plain mode, ln|t*| in log mode.
        let preds: Vec<f64> = batch
            .iter()
            .map(|s| {
                let target = match mode {
                    LossMode::LogMsRelu => spec.target(s.t_star),
                    LossMode::PlainMsRelu => s.t_star.abs(),
                };
                target + rng.random_range(1e-9..2.0)
            })
            .collect();
        one_sided += (loss_from_predictions(&batch, &preds, net.regularizer(), &spec).unwrap().constraint == 0.0) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        exact == 100 && one_sided == 100 && secs < 1.0,
        format!("decomposition exact in {exact}/100 batches, constraint zero in {one_sided}/100 dominated batches, {secs:.3} s"),
    );
}

#[test]
fn criterion_05_transform_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = LossSpec::default();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = -rng.random_range(1e-3..1200.0);
        worst = worst.max((transform_output(spec.target(t), &spec) - t).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(5, worst <= 1e-12 && secs < 1.0, format!("max |transform(ln|t|) + |t|| = {worst:.2e} for 1000 shifts in (-1200, 0), {secs:.4} s"));
}

#[test]
fn criterion_06_exact_tsg_optimality() {
    let start = Instant::now();
    let s = sim();
    let cfg = GovernorConfig::default();
    let family = ScenarioFamily::default();
    let (mut checked, mut ok, mut worst_gap) = (0, 0, 0.0f64);
    let mut index = 0;
    while checked < 50 {
        let state = family.sample(6, index);
        index += 1;
        let window = cfg.initial_window(s);
        if !s.is_feasible(&state, window.lo).unwrap() {
            continue;
        }
        let mut stats = OracleStats::default();
        let t = tsg_exact(s, &state, window, cfg.tol_shift, &mut stats).unwrap();
        let n = ((window.hi - window.lo) / 0.01).round() as i64;
        let dense = (0..=n).map(|i| window.hi - i as f64 * 0.01).find(|&c| s.is_feasible(&state, c).unwrap()).unwrap();
        let feasible = s.rollout(&state, t, s.scenario().horizon_steps).unwrap().min_margin > 0.0;
        let gap = (t - dense).abs();
        worst_gap = worst_gap.max(gap);
        ok += (feasible && gap <= 0.1) as usize;
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(6, ok == 50 && secs < 300.0, format!("{ok}/50 feasible and within 0.1 s of the dense grid; max gap {worst_gap:.4} s, {secs:.1} s"));
}

fn fly(mode: MissionMode<'_>) -> (MissionSummary, bool, f64) {
    let start = Instant::now();
    let s = sim();
    let out = run_governed_mission(s, &s.scenario().initial_state, &GovernorConfig::default(), mode).unwrap();
    let safe = out.summary.violations == 0 && out.margins.iter().all(|m| *m > 0.0);
    (out.summary, safe, start.elapsed().as_secs_f64())
}

#[test]
fn criterion_07_safety() {
    let model = cikan_cli::load_checkpoint(&trained().1).unwrap();
    let spec = cikan_cli::load_loss_spec(&trained().1, LossSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let random = KanNetwork::new(&[8, 4, 1], EdgeKind::BSpline, KnotGrid::default(), &mut rng).unwrap();
    let trained_p = NetPredictor { model: &model, spec };
    let random_p = NetPredictor { model: &random, spec: LossSpec::default() };
    let runs = [
        ("exact", fly(MissionMode::ExactOnly)),
        ("hybrid/random", fly(MissionMode::Hybrid(&random_p))),
        ("hybrid/trained", fly(MissionMode::Hybrid(&trained_p))),
    ];
    let pass = runs.iter().all(|(_, (s, safe, secs))| *safe && s.captured && *secs < 120.0);
    let detail: Vec<String> = runs
        .iter()
        .map(|(name, (s, _, secs))| format!("{name}: {} violations, captured {}, {:.2} s", s.violations, s.captured, secs))
        .collect();
    verdict(7, pass, detail.join("; "));
}

#[test]
fn criterion_08_hybrid_efficiency() {
    let start = Instant::now();
    let (dataset, ckpt, setup_secs) = trained();
    let samples = cikan::dataset::load_csv(dataset).unwrap().len();
    let model: AnyModel = cikan_cli::load_checkpoint(ckpt).unwrap();
    let spec = cikan_cli::load_loss_spec(ckpt, LossSpec::default()).unwrap();
    let predictor = NetPredictor { model: &model, spec };
    let s = sim();
    let cfg = GovernorConfig::default();
    let family = ScenarioFamily::default();
    let (mut paired, mut fewer, mut index) = (0, 0, 0);
    let (mut exact_bis, mut hybrid_bis, mut cands, mut accepted, mut open, mut open_acc) = (0, 0, 0, 0, 0, 0.0);
    let mut min_rate = f64::INFINITY;
    while paired < 10 {
        let initial = family.sample(2024, index);
        index += 1;
        let Ok(exact) = run_governed_mission(s, &initial, &cfg, MissionMode::ExactOnly) else { continue };
        let hybrid = run_governed_mission(s, &initial, &cfg, MissionMode::Hybrid(&predictor)).unwrap();
        let (e, h) = (exact.summary, hybrid.summary);
        fewer += (h.bisection_calls < e.bisection_calls) as usize;
        exact_bis += e.bisection_calls;
        hybrid_bis += h.bisection_calls;
        cands += h.nn_candidates;
        accepted += h.nn_accepted;
        open += h.nn_open_candidates;
        open_acc += h.nn_open_accept_rate * h.nn_open_candidates as f64;
        min_rate = min_rate.min(h.nn_accept_rate);
        paired += 1;
    }
    let rate = accepted as f64 / cands as f64;
    let secs = start.elapsed().as_secs_f64() + setup_secs;
    let pass = samples >= 2000 && fewer == 10 && min_rate > 0.5 && secs < 1800.0;
    verdict(
        8,
        pass,
        format!(
            "{samples} samples; hybrid bisections lower in {fewer}/10 missions ({hybrid_bis} vs {exact_bis} total); \
             nn_accept_rate {rate:.3} overall, min {min_rate:.3} per mission (needs > 0.5); \
             acceptance over windows wider than tol: {:.3} of {open}; {secs:.1} s including generation and training",
            open_acc / open.max(1) as f64
        ),
    );
}

fn pipeline(dir: &Path) {
    let data = dir.join("data.csv");
    cmd_generate(&GenerateArgs { config: None, out: data.clone(), seed: 5, count: 300 }).unwrap();
    let ckpt = dir.join("model.json");
    cmd_train(&TrainArgs { config: None, dataset: data, arch: Arch::KanBspline, grid_sizes: vec![], out: ckpt.clone(), seed: 5, epochs: Some(20) }).unwrap();
    cmd_simulate(&SimulateArgs { config: None, mode: Mode::Hybrid, checkpoint: Some(ckpt), out: dir.join("mission"), seed: 5 }).unwrap();
}

fn outputs(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with("manifest.json") {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_09_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (outputs(a.path()), outputs(b.path()));
    let names: Vec<String> = fa.iter().map(|(p, _)| p.display().to_string()).collect();
    let identical = fa.len() == fb.len() && fa.iter().zip(&fb).all(|(x, y)| x == y);
    verdict(9, identical && fa.len() >= 8, format!("{} output files compared byte for byte: {}", fa.len(), names.join(", ")));
}

#[test]
fn criterion_10_baseline_parity() {
    let (dataset, kan_ckpt, _) = trained();
    let mlp_ckpt = artifacts().join("mlp.json");
    cmd_train(&TrainArgs { config: None, dataset: dataset.clone(), arch: Arch::Mlp, grid_sizes: vec![], out: mlp_ckpt.clone(), seed: 1, epochs: Some(300) }).unwrap();
    let eval = |ckpt: &PathBuf| cmd_eval(&EvalArgs { config: None, checkpoint: ckpt.clone(), dataset: dataset.clone(), out: None }).unwrap();
    let (kan, mlp) = (eval(kan_ckpt), eval(&mlp_ckpt));
    let keys = |r: &MetricsReport| {
        let v = serde_json::to_value(r).unwrap();
        let mut k: Vec<String> = v["metrics"].as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    let same_schema = keys(&kan) == keys(&mlp) && kan.loss == mlp.loss;
    let show = |r: &MetricsReport| {
        format!(
            "{} ({} params): rmse_log {:.4}, rmse_shift {:.2} s, under-prediction {:.3}",
            r.arch,
            r.num_parameters,
            r.metrics.rmse_log.unwrap_or(f64::NAN),
            r.metrics.rmse_shift,
            r.metrics.under_prediction_rate
        )
    };
    verdict(10, same_schema, format!("same loss spec and metrics schema; {}; {}", show(&kan), show(&mlp)));
}
