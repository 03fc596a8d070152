use std::path::{Path, PathBuf};
use std::process::Command;

use cikan::checkpoint::save_network;
use cikan::dataset::{load_csv, save_csv, TsgSample};
use cikan::spline::EdgeFunction;
use cikan::{EdgeKind, InputNorm, KanLayer, KanNetwork, KnotGrid};
use cikan_cli::report::{OBSERVATIONS_FILE, SHIFT_HISTORY_FILE};
use cikan_cli::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cikan"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn generate(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    cmd_generate(&GenerateArgs { config: None, out: out.clone(), seed, count }).unwrap();
    out
}

#[test]
fn generate_is_deterministic_and_accounts_for_missions() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.csv", 100, 9);
    let b = generate(dir.path(), "b.csv", 100, 9);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load_csv(&a).unwrap().len(), 100);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.csv.meta.json")).unwrap()).unwrap();
    let r = &meta["report"];
    assert_eq!(
        r["missions_flown"].as_u64().unwrap() + r["missions_skipped"].as_u64().unwrap(),
        r["missions_attempted"].as_u64().unwrap()
    );
    assert!(dir.path().join("a.csv.manifest.json").exists());
}

#[test]
fn malformed_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"governor": {"tol_shift": "small"}}"#);
    let out = bin()
        .args(["generate", "--count", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("governor.tol_shift"), "{err}");

    let cfg = write_config(dir.path(), "{ not json");
    let out = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_arch_trains_and_evaluates_with_one_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.csv", 120, 2);
    let mut keys = Vec::new();
    for arch in [Arch::KanBspline, Arch::KanGrbf, Arch::KanRswaf, Arch::Mlp] {
        let out = dir.path().join(format!("{}.json", arch.name()));
        let trained = cmd_train(&TrainArgs {
            config: None,
            dataset: data.clone(),
            arch,
            grid_sizes: vec![],
            out: out.clone(),
            seed: 1,
            epochs: Some(3),
        })
        .unwrap();
        assert_eq!(trained.len(), 1);
        let report = cmd_eval(&EvalArgs { config: None, checkpoint: out.clone(), dataset: data.clone(), out: None }).unwrap();
        assert_eq!(report.arch, arch.name());
        assert!(report.metrics.rmse_shift.is_finite());
        let json: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(format!("{}.json.metrics.json", arch.name()))).unwrap()).unwrap();
        let mut k: Vec<String> = json["metrics"].as_object().unwrap().keys().cloned().collect();
        k.sort();
        keys.push(k);
    }
    assert!(keys.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn grid_sweep_writes_one_history_per_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.csv", 60, 4);
    let status = bin()
        .args(["train", "--grid-size", "3,5,10,20", "--epochs", "2", "--dataset"])
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("m.json"))
        .status()
        .unwrap();
    assert!(status.success());
    for g in [3, 5, 10, 20] {
        assert!(dir.path().join(format!("m-G{g}.json.history.csv")).exists());
        assert!(dir.path().join(format!("m-G{g}.json")).exists());
    }
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.csv", 60, 4);
    let cfg = write_config(dir.path(), r#"{"train": {"optimizer": {"lr": 1e300}}}"#);
    let out = bin()
        .args(["train", "--epochs", "50", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("last finite epoch"));
}

#[test]
fn perfect_oracle_checkpoint_scores_zero() {
    // A 1 -> 1 KAN with zero spline and residual outputs raw 0, i.e. shift -1 s.
    let dir = tempfile::tempdir().unwrap();
    let mut edge = EdgeFunction::zeros(EdgeKind::BSpline, KnotGrid::default());
    edge.beta = 0.0;
    let layer = KanLayer::new(1, 1, vec![edge]).unwrap();
    let net = KanNetwork::from_layers(vec![1, 1], vec![layer], InputNorm::identity(1)).unwrap();
    let ckpt = dir.path().join("oracle.json");
    std::fs::write(&ckpt, save_network(&net).unwrap()).unwrap();
    let data = dir.path().join("d.csv");
    let samples: Vec<TsgSample> = (0..20).map(|i| TsgSample::new(vec![i as f64 / 10.0 - 1.0], -1.0)).collect();
    save_csv(&samples, &data).unwrap();
    let r = cmd_eval(&EvalArgs { config: None, checkpoint: ckpt, dataset: data, out: None }).unwrap();
    assert_eq!(r.metrics.rmse_shift, 0.0);
    assert_eq!(r.metrics.rmse_log, Some(0.0));
    assert_eq!(r.metrics.under_prediction_rate, 0.0);
}

#[test]
fn eval_rejects_feature_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let samples: Vec<TsgSample> = (0..12).map(|i| TsgSample::new(vec![i as f64, 1.0, 2.0], -1.0 - i as f64)).collect();
    save_csv(&samples, &data).unwrap();
    cmd_train(&TrainArgs { config: None, dataset: data, arch: Arch::Mlp, grid_sizes: vec![], out: dir.path().join("m.json"), seed: 0, epochs: Some(1) }).unwrap();
    let other = dir.path().join("e.csv");
    save_csv(&[TsgSample::new(vec![0.0], -1.0)], &other).unwrap();
    let err = cmd_eval(&EvalArgs { config: None, checkpoint: dir.path().join("m.json"), dataset: other, out: None }).unwrap_err();
    assert!(err.to_string().contains("dimension mismatch"), "{err}");
}

#[test]
fn infeasible_start_exits_4_with_margins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"scenario": {"initial_state": {"r": [0.0, 150.0, 0.0], "v": [0.0, 0.0, 0.0], "t": 0.0}}}"#,
    );
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("sim"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("min margin"));
}

#[test]
fn hybrid_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_simulate(&SimulateArgs { config: None, mode: Mode::Hybrid, checkpoint: None, out: dir.path().join("s"), seed: 0 })
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn simulate_exact_and_random_hybrid_are_safe() {
    let dir = tempfile::tempdir().unwrap();
    let exact = cmd_simulate(&SimulateArgs { config: None, mode: Mode::Exact, checkpoint: None, out: dir.path().join("ex"), seed: 0 }).unwrap();
    assert_eq!(exact.violations, 0);
    assert!(exact.captured);
    for f in [TRAJECTORY_FILE, TRACE_FILE, SUMMARY_FILE, MANIFEST_FILE] {
        assert!(dir.path().join("ex").join(f).exists(), "{f}");
    }

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(77);
    let net = KanNetwork::new(&[8, 4, 1], EdgeKind::BSpline, KnotGrid::default(), &mut rng).unwrap();
    let ckpt = dir.path().join("random.json");
    std::fs::write(&ckpt, save_network(&net).unwrap()).unwrap();
    let hybrid = cmd_simulate(&SimulateArgs { config: None, mode: Mode::Hybrid, checkpoint: Some(ckpt), out: dir.path().join("hy"), seed: 0 }).unwrap();
    assert_eq!(hybrid.violations, 0);
    assert!(hybrid.nn_accept_rate < 0.1, "{}", hybrid.nn_accept_rate);
}

#[test]
fn report_merges_traces_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |name: &str| {
        cmd_simulate(&SimulateArgs { config: None, mode: Mode::Exact, checkpoint: None, out: dir.path().join(name), seed: 0 }).unwrap();
        dir.path().join(name).join(TRACE_FILE)
    };
    let (a, b) = (sim("a"), sim("b"));
    let single = |p: &PathBuf, out: &str| cmd_report(&ReportArgs { inputs: vec![p.clone()], out: dir.path().join(out) }).unwrap();
    let (ra, rb) = (single(&a, "ra"), single(&b, "rb"));
    let both = cmd_report(&ReportArgs { inputs: vec![a.clone(), b.clone()], out: dir.path().join("rab") }).unwrap();
    assert_eq!(both.observations, ra.observations + rb.observations);
    assert_eq!(both.shift_points, ra.shift_points + rb.shift_points);
    let again = cmd_report(&ReportArgs { inputs: vec![a, b], out: dir.path().join("rab2") }).unwrap();
    assert_eq!(again.observations, both.observations);
    for f in [OBSERVATIONS_FILE, SHIFT_HISTORY_FILE] {
        assert_eq!(
            std::fs::read(dir.path().join("rab").join(f)).unwrap(),
            std::fs::read(dir.path().join("rab2").join(f)).unwrap()
        );
    }

    // Accepted shifts recover monotonically to zero on a captured mission.
    let mut r = csv::Reader::from_path(dir.path().join("ra").join(SHIFT_HISTORY_FILE)).unwrap();
    let accepted: Vec<f64> = r.deserialize::<cikan_cli::report::ShiftPoint>().map(|p| p.unwrap().accepted).collect();
    assert!(accepted[0] < 0.0);
    assert!(accepted.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*accepted.last().unwrap(), 0.0);
}

#[test]
fn report_flattens_json_and_rejects_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&SimulateArgs { config: None, mode: Mode::Exact, checkpoint: None, out: dir.path().join("s"), seed: 0 }).unwrap();
    let r = cmd_report(&ReportArgs { inputs: vec![dir.path().join("s").join(SUMMARY_FILE)], out: dir.path().join("r") }).unwrap();
    assert!(r.observations > 5);
    let text = std::fs::read_to_string(dir.path().join("r").join(OBSERVATIONS_FILE)).unwrap();
    assert!(text.contains("nn_accept_rate"));
    assert!(cmd_report(&ReportArgs { inputs: vec![dir.path().join("nope.csv")], out: dir.path().join("r2") }).is_err());
}
