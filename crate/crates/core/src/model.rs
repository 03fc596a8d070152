//! The regressor interface shared by the KAN and the MLP baseline.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::kan::KanNetwork;
use crate::mlp::Mlp;

/// Per-feature affine map `x' = (x - shift) * scale`, applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Maps each feature's observed `[min, max]` onto `[-1, 1]`. Constant
    /// features are only centered.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in rows {
            for (i, &v) in row.iter().enumerate().take(dim) {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        let mut norm = Self::identity(dim);
        for i in 0..dim {
            if lo[i].is_finite() && hi[i].is_finite() {
                norm.shift[i] = 0.5 * (lo[i] + hi[i]);
                let span = hi[i] - lo[i];
                norm.scale[i] = if span > 0.0 { 2.0 / span } else { 1.0 };
            }
        }
        norm
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| (v - s) * c)
            .collect()
    }
}

/// A scalar regressor with a flat, stably indexed parameter vector.
pub trait Model: Clone {
    fn input_dim(&self) -> usize;
    fn num_parameters(&self) -> usize;
    fn parameters(&self) -> Vec<f64>;
    fn set_parameters(&mut self, values: &[f64]);
    fn predict(&self, x: &[f64]) -> Result<f64, ModelError>;
    /// Returns the prediction and overwrites `grad` with d(prediction)/d(parameters).
    fn predict_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ModelError>;
    /// Regularization term `R(theta)`.
    fn regularizer(&self) -> f64;
    /// Adds `weight * dR/d(parameters)` into `grad`.
    fn add_regularizer_gradient(&self, weight: f64, grad: &mut [f64]);
    fn input_norm(&self) -> &InputNorm;
    fn set_input_norm(&mut self, norm: InputNorm);
}

/// A loaded checkpoint of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Kan(KanNetwork),
    Mlp(Mlp),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Kan($m) => $e,
            AnyModel::Mlp($m) => $e,
        }
    };
}

impl Model for AnyModel {
    fn input_dim(&self) -> usize {
        delegate!(self, m => m.input_dim())
    }
    fn num_parameters(&self) -> usize {
        delegate!(self, m => m.num_parameters())
    }
    fn parameters(&self) -> Vec<f64> {
        delegate!(self, m => m.parameters())
    }
    fn set_parameters(&mut self, values: &[f64]) {
        delegate!(self, m => m.set_parameters(values))
    }
    fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        delegate!(self, m => m.predict(x))
    }
    fn predict_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        delegate!(self, m => m.predict_with_gradient(x, grad))
    }
    fn regularizer(&self) -> f64 {
        delegate!(self, m => m.regularizer())
    }
    fn add_regularizer_gradient(&self, weight: f64, grad: &mut [f64]) {
        delegate!(self, m => m.add_regularizer_gradient(weight, grad))
    }
    fn input_norm(&self) -> &InputNorm {
        delegate!(self, m => m.input_norm())
    }
    fn set_input_norm(&mut self, norm: InputNorm) {
        delegate!(self, m => m.set_input_norm(norm))
    }
}

impl AnyModel {
    pub fn arch_name(&self) -> String {
        match self {
            AnyModel::Kan(net) => match net.layers.first().and_then(|l| l.edges.first()) {
                Some(e) => match e.kind {
                    crate::spline::EdgeKind::BSpline => "kan-bspline".into(),
                    crate::spline::EdgeKind::Grbf => "kan-grbf".into(),
                    crate::spline::EdgeKind::Rswaf => "kan-rswaf".into(),
                },
                None => "kan".into(),
            },
            AnyModel::Mlp(_) => "mlp".into(),
        }
    }
}
