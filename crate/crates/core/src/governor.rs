//! Time shift governors: the exact bisection oracle, the network-assisted
//! hybrid update, governed missions and dataset generation.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TsgSample;
use crate::error::{GovernorError, ModelError};
use crate::model::Model;
use crate::sim::{RelativeState, Simulator};
use crate::train::LossSpec;

/// Admissible shifts `lo <= s <= hi`, both non-positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftWindow {
    pub lo: f64,
    pub hi: f64,
}

impl ShiftWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GovernorError> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi && hi <= 0.0) {
            return Err(GovernorError::Window { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, s: f64) -> bool {
        self.lo <= s && s <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GovernorConfig {
    pub tol_shift: f64,
    /// Lower end of the initial window; defaults to minus the horizon duration.
    pub shift_min: Option<f64>,
    /// Governor period in simulation steps.
    pub g_steps: usize,
    pub max_mission_time: f64,
    /// Capture: within this distance of the hold point...
    pub capture_tolerance: f64,
    /// ...and slower than this.
    pub capture_speed: f64,
    pub position_scale: f64,
    pub velocity_scale: f64,
}

impl Default for GovernorConfig {
    fn default() -> Self {
        Self {
            tol_shift: 0.1,
            shift_min: None,
            g_steps: 1,
            max_mission_time: 4000.0,
            capture_tolerance: 5.0,
            capture_speed: 0.05,
            position_scale: 1000.0,
            velocity_scale: 1.0,
        }
    }
}

impl GovernorConfig {
    pub fn validate(&self) -> Result<(), GovernorError> {
        let ok = self.tol_shift > 0.0
            && self.g_steps >= 1
            && self.max_mission_time > 0.0
            && self.capture_tolerance > 0.0
            && self.capture_speed > 0.0
            && self.position_scale > 0.0
            && self.velocity_scale > 0.0
            && self.shift_min.is_none_or(|s| s.is_finite() && s <= 0.0);
        if ok {
            Ok(())
        } else {
            Err(GovernorError::Window {
                lo: self.shift_min.unwrap_or(f64::NAN),
                hi: 0.0,
            })
        }
    }

    pub fn initial_window(&self, sim: &Simulator) -> ShiftWindow {
        let lo = self.shift_min.unwrap_or(-sim.scenario().horizon_duration());
        ShiftWindow { lo, hi: 0.0 }
    }
}

pub const FEATURE_NAMES: [&str; 8] = ["r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "range", "time_fraction"];

/// Network input: scaled position and velocity, scaled range, elapsed-time fraction.
pub fn features(state: &RelativeState, config: &GovernorConfig) -> Vec<f64> {
    let ps = config.position_scale;
    let vs = config.velocity_scale;
    let range = state.position().norm();
    vec![
        state.r[0] / ps,
        state.r[1] / ps,
        state.r[2] / ps,
        state.v[0] / vs,
        state.v[1] / vs,
        state.v[2] / vs,
        range / ps,
        state.t / config.max_mission_time,
    ]
}

/// Oracle bookkeeping. `bisection_calls` counts oracle invocations that had
/// to bisect; `rollouts` counts every horizon feasibility check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleStats {
    pub oracle_calls: usize,
    pub bisection_calls: usize,
    pub rollouts: usize,
}

impl OracleStats {
    fn add(&mut self, other: &OracleStats) {
        self.oracle_calls += other.oracle_calls;
        self.bisection_calls += other.bisection_calls;
        self.rollouts += other.rollouts;
    }
}

fn checked_feasible(
    sim: &Simulator,
    state: &RelativeState,
    shift: f64,
    stats: &mut OracleStats,
) -> Result<bool, GovernorError> {
    stats.rollouts += 1;
    Ok(sim.is_feasible(state, shift)?)
}

fn infeasible(sim: &Simulator, state: &RelativeState, anchor: f64) -> GovernorError {
    match sim.rollout(state, anchor, sim.scenario().horizon_steps) {
        Ok(roll) => GovernorError::Infeasible {
            t: state.t,
            anchor,
            min_margin: roll.min_margin,
            margins: roll.margins,
        },
        Err(e) => e.into(),
    }
}

fn tsg_exact_inner(
    sim: &Simulator,
    state: &RelativeState,
    window: ShiftWindow,
    tol: f64,
    hi_known_infeasible: bool,
    stats: &mut OracleStats,
) -> Result<f64, GovernorError> {
    stats.oracle_calls += 1;
    if !hi_known_infeasible && checked_feasible(sim, state, window.hi, stats)? {
        return Ok(window.hi);
    }
    if !checked_feasible(sim, state, window.lo, stats)? {
        return Err(infeasible(sim, state, window.lo));
    }
    stats.bisection_calls += 1;
    let (mut lo, mut hi) = (window.lo, window.hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if checked_feasible(sim, state, mid, stats)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Closest-to-zero feasible shift in `window`: `hi` itself when feasible,
/// otherwise the feasible end of a bisection bracket narrower than `tol`.
pub fn tsg_exact(
    sim: &Simulator,
    state: &RelativeState,
    window: ShiftWindow,
    tol: f64,
    stats: &mut OracleStats,
) -> Result<f64, GovernorError> {
    tsg_exact_inner(sim, state, window, tol, false, stats)
}

/// A source of shift candidates for the hybrid governor.
pub trait ShiftPredictor {
    fn predict_shift(&self, features: &[f64]) -> Result<f64, ModelError>;
}

/// A trained regressor plus the loss spec that fixes its output transform.
pub struct NetPredictor<'a, M> {
    pub model: &'a M,
    pub spec: LossSpec,
}

impl<M: Model> ShiftPredictor for NetPredictor<'_, M> {
    fn predict_shift(&self, features: &[f64]) -> Result<f64, ModelError> {
        Ok(self.spec.to_shift(self.model.predict(features)?))
    }
}

impl<F: Fn(&[f64]) -> f64> ShiftPredictor for F {
    fn predict_shift(&self, features: &[f64]) -> Result<f64, ModelError> {
        Ok(self(features))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Initial solve over the configured window.
    Initial,
    /// Exact-only warm-started update.
    Exact,
    /// Candidate in the window and feasible.
    Accepted,
    /// Candidate in the window but infeasible; exact solve over the narrowed window.
    Narrowed,
    /// Candidate outside the window; exact solve over the previous window.
    OutOfWindow,
    /// Shift held between governor updates.
    Hold,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Initial => "initial",
            Branch::Exact => "exact",
            Branch::Accepted => "accepted",
            Branch::Narrowed => "narrowed",
            Branch::OutOfWindow => "out_of_window",
            Branch::Hold => "hold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub accepted: f64,
    pub window: ShiftWindow,
    pub branch: Branch,
    pub candidate: Option<f64>,
}

/// One update of the network-assisted governor. `window` is the previous
/// window `[t_prev, 0]` whose lower end is the last accepted shift.
pub fn hybrid_step(
    sim: &Simulator,
    state: &RelativeState,
    window: ShiftWindow,
    predictor: &dyn ShiftPredictor,
    config: &GovernorConfig,
    stats: &mut OracleStats,
) -> Result<StepResult, GovernorError> {
    let candidate = predictor.predict_shift(&features(state, config))?;
    let (accepted, branch) = if candidate.is_finite() && window.contains(candidate) {
        if checked_feasible(sim, state, candidate, stats)? {
            (candidate, Branch::Accepted)
        } else {
            let narrowed = ShiftWindow {
                lo: window.lo.min(candidate),
                hi: window.lo.max(candidate),
            };
            let hi_known = narrowed.hi == candidate;
            let s = tsg_exact_inner(sim, state, narrowed, config.tol_shift, hi_known, stats)?;
            (s, Branch::Narrowed)
        }
    } else {
        (
            tsg_exact(sim, state, window, config.tol_shift, stats)?,
            Branch::OutOfWindow,
        )
    };
    Ok(StepResult {
        accepted,
        window: ShiftWindow { lo: accepted, hi: 0.0 },
        branch,
        candidate: Some(candidate),
    })
}

#[derive(Clone, Copy)]
pub enum MissionMode<'a> {
    ExactOnly,
    Hybrid(&'a dyn ShiftPredictor),
}

impl MissionMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            MissionMode::ExactOnly => "exact",
            MissionMode::Hybrid(_) => "hybrid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub state: RelativeState,
    pub branch: Branch,
    pub candidate: Option<f64>,
    pub accepted: f64,
    pub window: ShiftWindow,
    /// Oracle work done at this step only.
    pub stats: OracleStats,
    /// Constraint margin of the applied `(state, control)` pair.
    pub margin: f64,
    pub wall_time_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub mode: String,
    pub steps: usize,
    pub mission_time: f64,
    pub captured: bool,
    pub violations: usize,
    pub oracle_calls: usize,
    pub bisection_calls: usize,
    pub rollouts: usize,
    pub nn_candidates: usize,
    pub nn_accepted: usize,
    pub nn_accept_rate: f64,
    /// Candidates issued while the previous window was wider than the
    /// bisection tolerance, and the acceptance rate among those.
    pub nn_open_candidates: usize,
    pub nn_open_accept_rate: f64,
    /// Steps where the previous shift had become infeasible and the full window was re-solved.
    pub anchor_failures: usize,
    pub final_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionOutcome {
    pub trace: Vec<TraceRow>,
    /// Realized trajectory, one state longer than `controls`.
    pub states: Vec<RelativeState>,
    pub controls: Vec<[f64; 3]>,
    pub margins: Vec<f64>,
    pub summary: MissionSummary,
}

#[derive(Debug, thiserror::Error)]
#[error("mission aborted after {} steps: {source}", partial.trace.len())]
pub struct MissionAbort {
    pub partial: Box<MissionOutcome>,
    #[source]
    pub source: GovernorError,
}

fn summarize(
    trace: &[TraceRow],
    margins: &[f64],
    config: &GovernorConfig,
    mode: &str,
    captured: bool,
    anchor_failures: usize,
    t: f64,
) -> MissionSummary {
    let mut stats = OracleStats::default();
    let (mut cands, mut acc, mut open, mut open_acc) = (0, 0, 0, 0);
    let mut prev: Option<ShiftWindow> = None;
    for row in trace {
        stats.add(&row.stats);
        if row.candidate.is_some() {
            cands += 1;
            let accepted = row.branch == Branch::Accepted;
            acc += accepted as usize;
            if prev.is_some_and(|w| w.hi - w.lo > config.tol_shift) {
                open += 1;
                open_acc += accepted as usize;
            }
        }
        prev = Some(row.window);
    }
    let rate = |a: usize, c: usize| if c > 0 { a as f64 / c as f64 } else { 0.0 };
    MissionSummary {
        mode: mode.to_string(),
        steps: trace.len(),
        mission_time: t,
        captured,
        violations: margins.iter().filter(|m| !(**m > 0.0)).count(),
        oracle_calls: stats.oracle_calls,
        bisection_calls: stats.bisection_calls,
        rollouts: stats.rollouts,
        nn_candidates: cands,
        nn_accepted: acc,
        nn_accept_rate: rate(acc, cands),
        nn_open_candidates: open,
        nn_open_accept_rate: rate(open_acc, open),
        anchor_failures,
        final_shift: trace.last().map_or(0.0, |r| r.accepted),
    }
}

pub fn is_captured(sim: &Simulator, state: &RelativeState, config: &GovernorConfig) -> bool {
    let hold = sim.scenario().reference.y_hold;
    let d = ((state.r[0]).powi(2) + (state.r[1] - hold).powi(2) + state.r[2].powi(2)).sqrt();
    let speed = state.v.iter().map(|v| v * v).sum::<f64>().sqrt();
    d < config.capture_tolerance && speed < config.capture_speed
}

/// Closed loop with the governor in the loop, from `initial` until capture
/// or `max_mission_time`.
pub fn run_governed_mission(
    sim: &Simulator,
    initial: &RelativeState,
    config: &GovernorConfig,
    mode: MissionMode<'_>,
) -> Result<MissionOutcome, MissionAbort> {
    let mut trace = Vec::new();
    let mut states = vec![*initial];
    let mut controls = Vec::new();
    let mut margins = Vec::new();
    let mut anchor_failures = 0;
    let mut state = *initial;
    let mut window = config.initial_window(sim);
    let mut shift = 0.0;
    let mut captured = false;

    let abort = |trace: Vec<TraceRow>, states, controls, margins: Vec<f64>, af, t, source| MissionAbort {
        partial: Box::new(MissionOutcome {
            summary: summarize(&trace, &margins, config, mode.name(), false, af, t),
            trace,
            states,
            controls,
            margins,
        }),
        source,
    };
    if let Err(e) = config.validate() {
        return Err(abort(trace, states, controls, margins, 0, state.t, e));
    }

    for step in 0.. {
        let start = Instant::now();
        let mut stats = OracleStats::default();
        let update = if step == 0 {
            tsg_exact(sim, &state, window, config.tol_shift, &mut stats).map(|s| StepResult {
                accepted: s,
                window: ShiftWindow { lo: s, hi: 0.0 },
                branch: Branch::Initial,
                candidate: None,
            })
        } else if step % config.g_steps != 0 {
            Ok(StepResult {
                accepted: shift,
                window,
                branch: Branch::Hold,
                candidate: None,
            })
        } else {
            let attempt = match mode {
                MissionMode::ExactOnly => tsg_exact(sim, &state, window, config.tol_shift, &mut stats).map(|s| StepResult {
                    accepted: s,
                    window: ShiftWindow { lo: s, hi: 0.0 },
                    branch: Branch::Exact,
                    candidate: None,
                }),
                MissionMode::Hybrid(p) => hybrid_step(sim, &state, window, p, config, &mut stats),
            };
            match attempt {
                Err(GovernorError::Infeasible { anchor, .. }) => {
                    // The previous shift lost feasibility; re-solve over the full window.
                    log::warn!("t = {}: previous shift {anchor} no longer feasible", state.t);
                    anchor_failures += 1;
                    let full = ShiftWindow {
                        lo: config.initial_window(sim).lo.min(anchor),
                        hi: 0.0,
                    };
                    let branch = match mode {
                        MissionMode::ExactOnly => Branch::Exact,
                        MissionMode::Hybrid(_) => Branch::OutOfWindow,
                    };
                    tsg_exact(sim, &state, full, config.tol_shift, &mut stats).map(|s| StepResult {
                        accepted: s,
                        window: ShiftWindow { lo: s, hi: 0.0 },
                        branch,
                        candidate: None,
                    })
                }
                other => other,
            }
        };
        let update = match update {
            Ok(u) => u,
            Err(e) => return Err(abort(trace, states, controls, margins, anchor_failures, state.t, e)),
        };
        shift = update.accepted;
        window = update.window;
        let u = sim.nominal_control(&state, shift);
        let margin = sim.constraint_margin(&state, &u);
        trace.push(TraceRow {
            step,
            state,
            branch: update.branch,
            candidate: update.candidate,
            accepted: shift,
            window,
            stats,
            margin,
            wall_time_us: start.elapsed().as_micros() as u64,
        });
        if !(margin > 0.0) {
            log::warn!("t = {}: realized constraint violation, margin {margin}", state.t);
        }
        controls.push(u);
        margins.push(margin);
        state = match sim.step_dynamics(&state, u) {
            Ok(s) => s,
            Err(e) => return Err(abort(trace, states, controls, margins, anchor_failures, state.t, e.into())),
        };
        states.push(state);
        if is_captured(sim, &state, config) {
            captured = true;
            break;
        }
        if state.t >= config.max_mission_time {
            break;
        }
    }
    Ok(MissionOutcome {
        summary: summarize(&trace, &margins, config, mode.name(), captured, anchor_failures, state.t),
        trace,
        states,
        controls,
        margins,
    })
}

/// Trace CSV. Wall time is left out so that traces are reproducible byte for byte.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "step",
        "t",
        "r_x",
        "r_y",
        "r_z",
        "v_x",
        "v_y",
        "v_z",
        "branch",
        "candidate",
        "accepted",
        "window_lo",
        "window_hi",
        "oracle_calls",
        "bisection_calls",
        "rollouts",
        "margin",
    ])?;
    for row in trace {
        let s = &row.state;
        let mut rec = vec![row.step.to_string(), s.t.to_string()];
        rec.extend(s.r.iter().chain(&s.v).map(f64::to_string));
        rec.push(row.branch.as_str().to_string());
        rec.push(row.candidate.map_or(String::new(), |c| c.to_string()));
        rec.push(row.accepted.to_string());
        rec.push(row.window.lo.to_string());
        rec.push(row.window.hi.to_string());
        rec.push(row.stats.oracle_calls.to_string());
        rec.push(row.stats.bisection_calls.to_string());
        rec.push(row.stats.rollouts.to_string());
        rec.push(row.margin.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Ranges from which mission initial states are drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFamily {
    pub r_min: [f64; 3],
    pub r_max: [f64; 3],
    pub v_min: [f64; 3],
    pub v_max: [f64; 3],
    /// Mission start time range; a start after zero means the deputy is
    /// behind the nominal schedule.
    pub t_min: f64,
    pub t_max: f64,
    /// Upper bound on missions attempted before giving up on `count`.
    pub max_missions: usize,
}

impl Default for ScenarioFamily {
    fn default() -> Self {
        Self {
            r_min: [-150.0, 1400.0, -50.0],
            r_max: [150.0, 1600.0, 50.0],
            v_min: [-0.1, -0.1, -0.1],
            v_max: [0.1, 0.1, 0.1],
            t_min: 200.0,
            t_max: 500.0,
            max_missions: 10_000,
        }
    }
}

impl ScenarioFamily {
    /// Initial state of mission `index`; each mission has its own RNG stream.
    pub fn sample(&self, seed: u64, index: u64) -> RelativeState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let r = std::array::from_fn(|i| draw(self.r_min[i], self.r_max[i]));
        let v = std::array::from_fn(|i| draw(self.v_min[i], self.v_max[i]));
        let t = draw(self.t_min, self.t_max);
        RelativeState::new(r, v, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub samples: usize,
    pub missions_attempted: usize,
    /// Missions that started feasible and were flown.
    pub missions_flown: usize,
    /// Missions whose initial window was already infeasible.
    pub missions_skipped: usize,
    /// Flown missions that hit an infeasible step; their samples up to that point are kept.
    pub missions_aborted: usize,
    /// Governor updates with a zero optimal shift, excluded from the dataset.
    pub zero_shift_updates: usize,
}

/// Runs exact-governed missions from sampled initial states and records
/// `(features, t*)` at every governor update with `t* < 0`, until `count`
/// samples are collected.
pub fn generate_dataset(
    sim: &Simulator,
    family: &ScenarioFamily,
    config: &GovernorConfig,
    count: usize,
    seed: u64,
) -> Result<(Vec<TsgSample>, DatasetReport), GovernorError> {
    config.validate()?;
    let mut samples = Vec::with_capacity(count);
    let mut report = DatasetReport {
        samples: 0,
        missions_attempted: 0,
        missions_flown: 0,
        missions_skipped: 0,
        missions_aborted: 0,
        zero_shift_updates: 0,
    };
    while samples.len() < count && report.missions_attempted < family.max_missions {
        let initial = family.sample(seed, report.missions_attempted as u64);
        report.missions_attempted += 1;
        let trace = match run_governed_mission(sim, &initial, config, MissionMode::ExactOnly) {
            Ok(outcome) => outcome.trace,
            Err(abort) => {
                if abort.partial.trace.is_empty() {
                    report.missions_skipped += 1;
                    continue;
                }
                log::warn!("{abort}");
                report.missions_aborted += 1;
                abort.partial.trace
            }
        };
        report.missions_flown += 1;
        for row in trace.iter().filter(|r| r.branch != Branch::Hold) {
            if row.accepted < 0.0 {
                samples.push(TsgSample::new(features(&row.state, config), row.accepted));
            } else {
                report.zero_shift_updates += 1;
            }
        }
    }
    samples.truncate(count);
    report.samples = samples.len();
    if samples.len() < count {
        log::warn!(
            "only {} of {count} samples after {} missions",
            samples.len(),
            report.missions_attempted
        );
    }
    Ok((samples, report))
}

/// Sidecar written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub count: usize,
    pub scenario: crate::sim::Scenario,
    pub family: ScenarioFamily,
    pub governor: GovernorConfig,
    pub feature_names: Vec<String>,
    pub position_scale: f64,
    pub velocity_scale: f64,
    pub time_scale: f64,
    pub report: DatasetReport,
}
