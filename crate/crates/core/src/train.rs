//! Constraint-informed training: MSReLU losses, the exponential output
//! transform, AdamW and a seeded mini-batch loop.
//!
//! Plain mode regresses the signed shift directly:
//!
//! ```text
//! L = E[(t* - p)^2] + theta_c * E[relu(|t*| - p)^2] + reg_weight * R
//! ```
//!
//! Log mode regresses `y = ln|t*|` and penalizes predictions of smaller magnitude:
//!
//! ```text
//! L = E[(y - p)^2] + theta_c * E[relu(y - p)^2] + reg_weight * R
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TsgSample;
use crate::error::TrainError;
use crate::kan::{KanNetwork, ParameterTape};
use crate::mlp::Mlp;
use crate::model::{InputNorm, Model};
use crate::spline::{EdgeKind, KnotGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    PlainMsRelu,
    LogMsRelu,
}

/// Which maneuver family the model serves; fixes the sign of the transformed output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftSign {
    NonPositive,
    NonNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub mode: LossMode,
    pub theta_c: f64,
    pub reg_weight: f64,
    pub sign: ShiftSign,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            mode: LossMode::LogMsRelu,
            theta_c: 1.0,
            reg_weight: 0.0,
            sign: ShiftSign::NonPositive,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.theta_c >= 0.0 && self.reg_weight >= 0.0) {
            return Err(TrainError::Config("theta_c and reg_weight must be >= 0".into()));
        }
        Ok(())
    }

    /// The regression target for a shift: `t*` in plain mode, `ln|t*|` in log mode.
    pub fn target(&self, t_star: f64) -> f64 {
        match self.mode {
            LossMode::PlainMsRelu => t_star,
            LossMode::LogMsRelu => t_star.abs().ln(),
        }
    }

    /// Maps a raw network output to a time shift in seconds.
    pub fn to_shift(&self, raw: f64) -> f64 {
        match self.mode {
            LossMode::PlainMsRelu => raw,
            LossMode::LogMsRelu => transform_output(raw, self),
        }
    }
}

/// Loss terms for one batch. `total = regression + theta_c * constraint
/// + reg_weight * regularizer`, with `constraint` unweighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub regression: f64,
    pub constraint: f64,
    pub regularizer: f64,
}

/// `exp(raw)` with the maneuver sign applied.
pub fn transform_output(raw: f64, spec: &LossSpec) -> f64 {
    let magnitude = raw.exp();
    match spec.sign {
        ShiftSign::NonPositive => -magnitude,
        ShiftSign::NonNegative => magnitude,
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Violation argument of the one-sided term for a prediction; positive means penalized.
#[inline]
fn violation(spec: &LossSpec, t_star: f64, target: f64, prediction: f64) -> f64 {
    match spec.mode {
        LossMode::PlainMsRelu => t_star.abs() - prediction,
        LossMode::LogMsRelu => target - prediction,
    }
}

fn check_batch(batch: &[TsgSample], spec: &LossSpec) -> Result<(), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    spec.validate()?;
    if spec.mode == LossMode::LogMsRelu {
        if let Some(index) = batch.iter().position(|s| s.t_star == 0.0) {
            return Err(TrainError::ZeroShift { index });
        }
    }
    Ok(())
}

/// Loss from precomputed predictions; `regularizer` is `R(theta)` of the model.
pub fn loss_from_predictions(
    batch: &[TsgSample],
    predictions: &[f64],
    regularizer: f64,
    spec: &LossSpec,
) -> Result<LossBreakdown, TrainError> {
    check_batch(batch, spec)?;
    if predictions.len() != batch.len() {
        return Err(TrainError::LengthMismatch(predictions.len(), batch.len()));
    }
    let n = batch.len() as f64;
    let mut regression = 0.0;
    let mut constraint = 0.0;
    for (s, &p) in batch.iter().zip(predictions) {
        let y = spec.target(s.t_star);
        regression += (y - p).powi(2);
        constraint += relu(violation(spec, s.t_star, y, p)).powi(2);
    }
    regression /= n;
    constraint /= n;
    Ok(LossBreakdown {
        total: regression + spec.theta_c * constraint + spec.reg_weight * regularizer,
        regression,
        constraint,
        regularizer,
    })
}

fn predictions<M: Model>(batch: &[TsgSample], model: &M) -> Result<Vec<f64>, TrainError> {
    batch
        .iter()
        .map(|s| model.predict(&s.features).map_err(TrainError::from))
        .collect()
}

/// Plain MSReLU loss on the signed shift.
pub fn loss_plain<M: Model>(
    batch: &[TsgSample],
    model: &M,
    spec: &LossSpec,
) -> Result<LossBreakdown, TrainError> {
    if spec.mode != LossMode::PlainMsRelu {
        return Err(TrainError::Config("loss_plain needs PlainMsRelu mode".into()));
    }
    loss(batch, model, spec)
}

/// Logarithmic MSReLU loss on `ln|t*|`.
pub fn loss_log<M: Model>(
    batch: &[TsgSample],
    model: &M,
    spec: &LossSpec,
) -> Result<LossBreakdown, TrainError> {
    if spec.mode != LossMode::LogMsRelu {
        return Err(TrainError::Config("loss_log needs LogMsRelu mode".into()));
    }
    loss(batch, model, spec)
}

/// Loss in whichever mode `spec` selects.
pub fn loss<M: Model>(
    batch: &[TsgSample],
    model: &M,
    spec: &LossSpec,
) -> Result<LossBreakdown, TrainError> {
    check_batch(batch, spec)?;
    let preds = predictions(batch, model)?;
    loss_from_predictions(batch, &preds, model.regularizer(), spec)
}

/// Loss plus its gradient with respect to every model parameter (overwrites `grad`).
pub fn loss_and_gradient<M: Model>(
    batch: &[TsgSample],
    model: &M,
    spec: &LossSpec,
    grad: &mut [f64],
) -> Result<LossBreakdown, TrainError> {
    check_batch(batch, spec)?;
    if grad.len() != model.num_parameters() {
        return Err(TrainError::LengthMismatch(grad.len(), model.num_parameters()));
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = batch.len() as f64;
    let mut sample_grad = vec![0.0; grad.len()];
    let mut preds = Vec::with_capacity(batch.len());
    for s in batch {
        let p = model.predict_with_gradient(&s.features, &mut sample_grad)?;
        let y = spec.target(s.t_star);
        // d/dp of (y - p)^2 + theta_c * relu(v)^2 with dv/dp = -1.
        let dl_dp = (-2.0 * (y - p) - spec.theta_c * 2.0 * relu(violation(spec, s.t_star, y, p))) / n;
        for (g, sg) in grad.iter_mut().zip(&sample_grad) {
            *g += dl_dp * sg;
        }
        preds.push(p);
    }
    model.add_regularizer_gradient(spec.reg_weight, grad);
    loss_from_predictions(batch, &preds, model.regularizer(), spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, len: usize) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        }
    }

    /// One AdamW update with bias correction and decoupled weight decay.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(TrainError::LengthMismatch(params.len(), grads.len()));
        }
        let c = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= c.lr * (m_hat / (v_hat.sqrt() + c.eps)) + c.lr * c.weight_decay * *p;
        }
        Ok(())
    }
}

/// AdamW step driven by the tape's own gradient buffer.
pub fn adamw_step(tape: &mut ParameterTape, state: &mut AdamWState) -> Result<(), TrainError> {
    let ParameterTape { values, grads } = tape;
    state.step(values, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub patience: usize,
    pub grid_size: usize,
    pub optimizer: AdamWConfig,
    /// Fit the model's input normalization from the training split before training.
    pub fit_input_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            seed: 0,
            validation_fraction: 0.2,
            patience: 50,
            grid_size: 5,
            optimizer: AdamWConfig::default(),
            fit_input_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainError::Config("validation_fraction must be in (0, 1)".into()));
        }
        if self.grid_size == 0 {
            return Err(TrainError::Config("grid_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the training history CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_total: f64,
    /// Regression term on the training split.
    pub train_reg: f64,
    pub train_constraint: f64,
    pub train_regularizer: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Model at the best validation epoch.
    pub model: M,
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
    pub best_val: LossBreakdown,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Deterministic train/validation split of `n` samples.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val_sorted = val;
    val_sorted.sort_unstable();
    (train, val_sorted)
}

fn gather(dataset: &[TsgSample], idx: &[usize]) -> Vec<TsgSample> {
    idx.iter().map(|&i| dataset[i].clone()).collect()
}

/// Mini-batch AdamW training with early stopping on validation loss.
///
/// Shuffling is driven only by `config.seed`, so two runs with the same
/// inputs produce identical histories and models.
pub fn train<M: Model>(
    dataset: &[TsgSample],
    mut model: M,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<M>, TrainError> {
    config.validate()?;
    spec.validate()?;
    if dataset.len() < 10 {
        return Err(TrainError::DatasetTooSmall(dataset.len()));
    }
    check_batch(dataset, spec)?;
    let (train_idx, val_idx) = split_indices(dataset.len(), config.validation_fraction, config.seed);
    let train_set = gather(dataset, &train_idx);
    let val_set = gather(dataset, &val_idx);
    if config.fit_input_norm {
        let norm = InputNorm::fit(train_set.iter().map(|s| s.features.as_slice()), model.input_dim());
        model.set_input_norm(norm);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut opt = AdamWState::new(config.optimizer, model.num_parameters());
    let mut params = model.parameters();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);

    let mut best_params = params.clone();
    let mut best_val = loss(&val_set, &model, spec)?;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut last_finite = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let step = loss_and_gradient(&batch, &model, spec, &mut grad);
            let diverged = match &step {
                Ok(b) => !b.total.is_finite() || grad.iter().any(|g| !g.is_finite()),
                Err(TrainError::Model(_)) => true,
                Err(_) => false,
            };
            if diverged {
                return Err(TrainError::Diverged {
                    epoch,
                    last_finite_epoch: last_finite,
                });
            }
            step?;
            opt.step(&mut params, &grad)?;
            model.set_parameters(&params);
        }
        let (train_b, val_b) = match (loss(&train_set, &model, spec), loss(&val_set, &model, spec)) {
            (Ok(t), Ok(v)) if t.total.is_finite() && v.total.is_finite() => (t, v),
            _ => {
                return Err(TrainError::Diverged {
                    epoch,
                    last_finite_epoch: last_finite,
                })
            }
        };
        last_finite = Some(epoch);
        history.push(HistoryRow {
            epoch,
            train_total: train_b.total,
            train_reg: train_b.regression,
            train_constraint: train_b.constraint,
            train_regularizer: train_b.regularizer,
            val_total: val_b.total,
        });
        if val_b.total < best_val.total {
            best_val = val_b;
            best_epoch = epoch;
            best_params.clone_from(&params);
        } else if epoch - best_epoch >= config.patience {
            log::debug!("early stop at epoch {epoch}, best {best_epoch}");
            break;
        }
    }
    model.set_parameters(&best_params);
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Fresh KAN with widths `[n_0, hidden..., 1]` seeded from `seed`.
pub fn build_kan(
    widths: &[usize],
    kind: EdgeKind,
    grid: KnotGrid,
    seed: u64,
) -> Result<KanNetwork, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(KanNetwork::new(widths, kind, grid, &mut rng)?)
}

/// Trains the tanh MLP baseline through the same loss, optimizer and data pipeline.
pub fn train_mlp_baseline(
    dataset: &[TsgSample],
    hidden: usize,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<Mlp>, TrainError> {
    let dim = dataset.first().map_or(0, |s| s.features.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mlp = Mlp::new(dim, hidden, &mut rng)?;
    train(dataset, mlp, spec, config)
}

/// Accuracy summary of a model on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    /// Mean squared error in the regression target space.
    pub regression_mse: f64,
    /// RMSE of `ln|t*|` (log mode only).
    pub rmse_log: Option<f64>,
    /// RMSE of the transformed shift in seconds.
    pub rmse_shift: f64,
    /// Fraction of samples whose predicted |shift| is below the true |shift|.
    pub under_prediction_rate: f64,
}

pub fn evaluate<M: Model>(
    model: &M,
    samples: &[TsgSample],
    spec: &LossSpec,
) -> Result<EvalMetrics, TrainError> {
    check_batch(samples, spec)?;
    let n = samples.len() as f64;
    let mut se_target = 0.0;
    let mut se_shift = 0.0;
    let mut under = 0usize;
    for s in samples {
        let raw = model.predict(&s.features)?;
        se_target += (spec.target(s.t_star) - raw).powi(2);
        let shift = spec.to_shift(raw);
        se_shift += (shift - s.t_star).powi(2);
        if shift.abs() < s.t_star.abs() {
            under += 1;
        }
    }
    let regression_mse = se_target / n;
    Ok(EvalMetrics {
        samples: samples.len(),
        regression_mse,
        rmse_log: (spec.mode == LossMode::LogMsRelu).then(|| regression_mse.sqrt()),
        rmse_shift: (se_shift / n).sqrt(),
        under_prediction_rate: under as f64 / n,
    })
}
