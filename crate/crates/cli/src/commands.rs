use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use cikan::checkpoint::{load_model, save_model};
use cikan::dataset::{load_csv, save_csv, TsgSample};
use cikan::governor::{
    generate_dataset, run_governed_mission, write_trace_csv, DatasetMeta, DatasetReport,
    MissionMode, MissionOutcome, MissionSummary, NetPredictor, FEATURE_NAMES,
};
use cikan::sim::{write_trajectory_csv, Simulator};
use cikan::train::{
    build_kan, evaluate, train, train_mlp_baseline, EvalMetrics, HistoryRow, LossSpec,
    TrainOutcome,
};
use cikan::{AnyModel, EdgeKind, GovernorError, KnotGrid, Model, TrainError};
use serde::{Deserialize, Serialize};

use crate::{manifest_path_for, with_suffix, write_bytes, write_json, CliError, Config, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    KanBspline,
    KanGrbf,
    KanRswaf,
    Mlp,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::KanBspline => "kan-bspline",
            Arch::KanGrbf => "kan-grbf",
            Arch::KanRswaf => "kan-rswaf",
            Arch::Mlp => "mlp",
        }
    }

    fn edge_kind(self) -> Option<EdgeKind> {
        match self {
            Arch::KanBspline => Some(EdgeKind::BSpline),
            Arch::KanGrbf => Some(EdgeKind::Grbf),
            Arch::KanRswaf => Some(EdgeKind::Rswaf),
            Arch::Mlp => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Exact,
    Hybrid,
}

fn other(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Other(e.into())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub count: usize,
}

/// Writes the dataset CSV, a `<out>.meta.json` sidecar and the manifest.
pub fn cmd_generate(args: &GenerateArgs) -> Result<DatasetReport, CliError> {
    let mut manifest = RunManifest::start("generate", args.config.as_deref(), Some(args.seed));
    let config = Config::load(args.config.as_deref())?;
    let sim = Simulator::new(config.scenario.clone()).map_err(|e| CliError::Config(format!("at `scenario`: {e}")))?;
    let (samples, report) = generate_dataset(&sim, &config.family, &config.governor, args.count, args.seed)
        .map_err(|e| CliError::Config(format!("at `governor`: {e}")))?;
    if samples.is_empty() {
        return Err(other(anyhow::anyhow!(
            "no samples generated from {} missions ({} skipped infeasible)",
            report.missions_attempted,
            report.missions_skipped
        )));
    }
    save_csv(&samples, &args.out).map_err(other)?;
    let meta = DatasetMeta {
        seed: args.seed,
        count: args.count,
        scenario: config.scenario.clone(),
        family: config.family,
        governor: config.governor,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        position_scale: config.governor.position_scale,
        velocity_scale: config.governor.velocity_scale,
        time_scale: config.governor.max_mission_time,
        report: report.clone(),
    };
    let meta_path = with_suffix(&args.out, ".meta.json");
    write_json(&meta_path, &meta)?;
    println!(
        "generated {} samples from {} missions ({} flown, {} skipped infeasible, {} aborted)",
        report.samples,
        report.missions_attempted,
        report.missions_flown,
        report.missions_skipped,
        report.missions_aborted
    );
    manifest.outputs = vec![path_str(&args.out), path_str(&meta_path)];
    manifest.parameters = serde_json::json!({ "count": args.count, "seed": args.seed, "config": config });
    manifest.finish(&manifest_path_for(&args.out))?;
    Ok(report)
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub dataset: PathBuf,
    pub arch: Arch,
    /// One model per entry; empty means the config's grid size.
    pub grid_sizes: Vec<usize>,
    pub out: PathBuf,
    pub seed: u64,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub arch: String,
    pub grid_size: Option<usize>,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub best_epoch: usize,
    pub best_val_total: f64,
    pub epochs_run: usize,
}

/// Checkpoint path for one entry of a grid sweep: `model.json` becomes
/// `model-G10.json` when more than one grid size is trained.
pub fn sweep_path(out: &Path, grid: usize, sweep: bool) -> PathBuf {
    if !sweep {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-G{grid}.{}", ext.to_string_lossy()),
        None => format!("{stem}-G{grid}"),
    };
    out.with_file_name(name)
}

pub fn loss_sidecar(checkpoint: &Path) -> PathBuf {
    with_suffix(checkpoint, ".loss.json")
}

pub fn history_path(checkpoint: &Path) -> PathBuf {
    with_suffix(checkpoint, ".history.csv")
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Diverged { epoch, last_finite_epoch } => CliError::Diverged(format!(
            "non-finite loss at epoch {epoch}; last finite epoch {}",
            last_finite_epoch.map_or("none".to_string(), |e| e.to_string())
        )),
        TrainError::Config(m) => CliError::Config(format!("at `train`: {m}")),
        other => CliError::Other(other.into()),
    }
}

fn write_history(path: &Path, history: &[HistoryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in history {
        w.serialize(row).map_err(other)?;
    }
    w.flush().map_err(other)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<TrainedModel>, CliError> {
    let mut manifest = RunManifest::start("train", args.config.as_deref(), Some(args.seed));
    let config = Config::load(args.config.as_deref())?;
    let dataset = load_csv(&args.dataset).with_context(|| format!("reading {}", args.dataset.display()))?;
    let dim = dataset.first().map_or(0, |s| s.features.len());
    let mut train_cfg = config.train;
    train_cfg.seed = args.seed;
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    let grids = if args.grid_sizes.is_empty() { vec![train_cfg.grid_size] } else { args.grid_sizes.clone() };
    let sweep = grids.len() > 1;
    let mut trained = Vec::new();
    for &g in &grids {
        let mut cfg = train_cfg;
        cfg.grid_size = g;
        let (model, outcome_meta) = match args.arch.edge_kind() {
            Some(kind) => {
                let grid = KnotGrid::new(-1.0, 1.0, g, config.network.spline_degree)
                    .map_err(|e| CliError::Config(format!("at `network`: {e}")))?;
                let mut widths = vec![dim];
                widths.extend(&config.network.hidden);
                widths.push(1);
                let net = build_kan(&widths, kind, grid, args.seed).map_err(train_error)?;
                let out = train(&dataset, net, &config.loss, &cfg).map_err(train_error)?;
                (AnyModel::Kan(out.model.clone()), summary_of(&out))
            }
            None => {
                let out = train_mlp_baseline(&dataset, config.network.mlp_hidden, &config.loss, &cfg)
                    .map_err(train_error)?;
                (AnyModel::Mlp(out.model.clone()), summary_of(&out))
            }
        };
        let (history, best_epoch, best_val) = outcome_meta;
        let ckpt = sweep_path(&args.out, g, sweep);
        write_bytes(&ckpt, &save_model(&model).map_err(other)?)?;
        write_json(&loss_sidecar(&ckpt), &config.loss)?;
        let hist = history_path(&ckpt);
        write_history(&hist, &history)?;
        let final_val = history.last().map_or(best_val, |h| h.val_total);
        println!(
            "{} G={g}: best val loss {best_val:.6e} at epoch {best_epoch}, final val loss {final_val:.6e}",
            args.arch.name()
        );
        manifest.outputs.extend([path_str(&ckpt), path_str(&loss_sidecar(&ckpt)), path_str(&hist)]);
        trained.push(TrainedModel {
            arch: args.arch.name().into(),
            grid_size: args.arch.edge_kind().map(|_| g),
            checkpoint: ckpt,
            history: hist,
            best_epoch,
            best_val_total: best_val,
            epochs_run: history.len(),
        });
    }
    manifest.inputs = vec![path_str(&args.dataset)];
    manifest.parameters = serde_json::json!({
        "arch": args.arch, "grid_sizes": grids, "seed": args.seed, "epochs": train_cfg.epochs, "config": config,
    });
    manifest.finish(&manifest_path_for(&args.out))?;
    Ok(trained)
}

fn summary_of<M>(out: &TrainOutcome<M>) -> (Vec<HistoryRow>, usize, f64) {
    (out.history.clone(), out.best_epoch, out.best_val.total)
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub config: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Metrics JSON path; defaults to `<checkpoint>.metrics.json`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arch: String,
    pub checkpoint: String,
    pub dataset: String,
    pub num_parameters: usize,
    pub loss: LossSpec,
    pub metrics: EvalMetrics,
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel, CliError> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_model(&bytes).with_context(|| format!("loading {}", path.display())).map_err(CliError::Other)
}

/// The loss spec saved with a checkpoint, or `fallback` if there is none.
pub fn load_loss_spec(checkpoint: &Path, fallback: LossSpec) -> Result<LossSpec, CliError> {
    let path = loss_sidecar(checkpoint);
    if !path.exists() {
        return Ok(fallback);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("in {}: {e}", path.display())))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport, CliError> {
    let mut manifest = RunManifest::start("eval", args.config.as_deref(), None);
    let config = Config::load(args.config.as_deref())?;
    let model = load_checkpoint(&args.checkpoint)?;
    let spec = load_loss_spec(&args.checkpoint, config.loss)?;
    let samples: Vec<TsgSample> =
        load_csv(&args.dataset).with_context(|| format!("reading {}", args.dataset.display()))?;
    let dim = samples.first().map_or(0, |s| s.features.len());
    if dim != model.input_dim() {
        return Err(other(anyhow::anyhow!(
            "feature dimension mismatch: checkpoint expects {}, dataset has {dim}",
            model.input_dim()
        )));
    }
    let metrics = evaluate(&model, &samples, &spec).map_err(other)?;
    let report = MetricsReport {
        arch: model.arch_name(),
        checkpoint: path_str(&args.checkpoint),
        dataset: path_str(&args.dataset),
        num_parameters: model.num_parameters(),
        loss: spec,
        metrics,
    };
    let out = args.out.clone().unwrap_or_else(|| with_suffix(&args.checkpoint, ".metrics.json"));
    write_json(&out, &report)?;
    println!(
        "{}: rmse_shift {:.6e} s, rmse_log {}, under-prediction rate {:.4}",
        report.arch,
        metrics.rmse_shift,
        metrics.rmse_log.map_or("n/a".into(), |v| format!("{v:.6e}")),
        metrics.under_prediction_rate
    );
    manifest.inputs = vec![path_str(&args.checkpoint), path_str(&args.dataset)];
    manifest.outputs = vec![path_str(&out)];
    manifest.parameters = serde_json::json!({ "loss": spec });
    manifest.finish(&manifest_path_for(&out))?;
    Ok(report)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub mode: Mode,
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    pub out: PathBuf,
    pub seed: u64,
}

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn write_mission(dir: &Path, outcome: &MissionOutcome) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let traj = dir.join(TRAJECTORY_FILE);
    let f = File::create(&traj).with_context(|| format!("writing {}", traj.display()))?;
    write_trajectory_csv(&outcome.states, &outcome.controls, &outcome.margins, BufWriter::new(f)).map_err(other)?;
    let trace = dir.join(TRACE_FILE);
    let f = File::create(&trace).with_context(|| format!("writing {}", trace.display()))?;
    write_trace_csv(&outcome.trace, BufWriter::new(f)).map_err(other)?;
    let summary = dir.join(SUMMARY_FILE);
    write_json(&summary, &outcome.summary)?;
    Ok(vec![traj, trace, summary])
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<MissionSummary, CliError> {
    let mut manifest = RunManifest::start("simulate", args.config.as_deref(), Some(args.seed));
    let config = Config::load(args.config.as_deref())?;
    let sim = Simulator::new(config.scenario.clone()).map_err(|e| CliError::Config(format!("at `scenario`: {e}")))?;
    let loaded = match (args.mode, &args.checkpoint) {
        (Mode::Exact, _) => None,
        (Mode::Hybrid, None) => {
            return Err(CliError::Config("hybrid mode needs --checkpoint".into()));
        }
        (Mode::Hybrid, Some(path)) => {
            let model = load_checkpoint(path)?;
            if model.input_dim() != FEATURE_NAMES.len() {
                return Err(other(anyhow::anyhow!(
                    "checkpoint expects {} features, the governor provides {}",
                    model.input_dim(),
                    FEATURE_NAMES.len()
                )));
            }
            let spec = load_loss_spec(path, config.loss)?;
            Some((model, spec))
        }
    };
    let predictor = loaded.as_ref().map(|(model, spec)| NetPredictor { model, spec: *spec });
    let mode = match &predictor {
        None => MissionMode::ExactOnly,
        Some(p) => MissionMode::Hybrid(p),
    };
    let result = run_governed_mission(&sim, &config.scenario.initial_state, &config.governor, mode);
    manifest.inputs = args.checkpoint.iter().map(|p| path_str(p)).collect();
    manifest.parameters = serde_json::json!({ "mode": args.mode, "seed": args.seed, "config": config });
    let (outcome, failure) = match result {
        Ok(o) => (o, None),
        Err(abort) => (*abort.partial, Some(abort.source)),
    };
    let written = write_mission(&args.out, &outcome)?;
    manifest.outputs = written.iter().map(|p| path_str(p)).collect();
    manifest.finish(&args.out.join(MANIFEST_FILE))?;
    if let Some(source) = failure {
        return Err(match source {
            GovernorError::Infeasible { t, anchor, min_margin, margins } => {
                let worst = margins
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(i, _)| i);
                CliError::Infeasible(format!(
                    "at t = {t} s no shift in the window is feasible; anchor {anchor} s has min margin \
                     {min_margin:.6e} at horizon step {worst} of {}",
                    margins.len()
                ))
            }
            e => other(e),
        });
    }
    let s = &outcome.summary;
    println!(
        "{} mission: {} steps, {:.0} s, captured {}, violations {}, oracle calls {}, bisections {}, nn accept rate {:.3}",
        s.mode, s.steps, s.mission_time, s.captured, s.violations, s.oracle_calls, s.bisection_calls, s.nn_accept_rate
    );
    Ok(outcome.summary)
}

// ------------------------------------------------------------------ report

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub inputs: Vec<PathBuf>,
    /// Output directory.
    pub out: PathBuf,
}

pub fn cmd_report(args: &ReportArgs) -> Result<crate::report::ReportSummary, CliError> {
    let mut manifest = RunManifest::start("report", None, None);
    if args.inputs.is_empty() {
        return Err(other(anyhow::anyhow!("report needs at least one input")));
    }
    let summary = crate::report::build_report(&args.inputs, &args.out)?;
    manifest.inputs = args.inputs.iter().map(|p| path_str(p)).collect();
    manifest.outputs = summary.outputs.iter().map(|p| path_str(p)).collect();
    manifest.finish(&args.out.join(MANIFEST_FILE))?;
    println!("report: {} observations from {} inputs", summary.observations, args.inputs.len());
    Ok(summary)
}
