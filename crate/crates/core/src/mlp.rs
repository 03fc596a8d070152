//! Two-hidden-layer tanh MLP used as the comparison baseline.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::ModelError;
use crate::model::{InputNorm, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    /// `weights[l]` is row-major `widths[l+1] x widths[l]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_norm: InputNorm,
}

impl Mlp {
    /// `input -> hidden -> hidden -> 1` with Glorot-uniform weights and zero biases.
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self, ModelError> {
        if input_dim == 0 || hidden == 0 {
            return Err(ModelError::Invalid("MLP widths must be positive".into()));
        }
        let widths = vec![input_dim, hidden, hidden, 1];
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit)
                .map_err(|e| ModelError::Invalid(e.to_string()))?;
            weights.push((0..w[0] * w[1]).map(|_| dist.sample(rng)).collect());
            biases.push(vec![0.0; w[1]]);
        }
        Self::from_parts(widths, weights, biases, InputNorm::identity(input_dim))
    }

    pub fn from_parts(
        widths: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        input_norm: InputNorm,
    ) -> Result<Self, ModelError> {
        if widths.len() < 2 || weights.len() != widths.len() - 1 || biases.len() != weights.len() {
            return Err(ModelError::Invalid("inconsistent MLP layer count".into()));
        }
        for (l, w) in widths.windows(2).enumerate() {
            if weights[l].len() != w[0] * w[1] || biases[l].len() != w[1] {
                return Err(ModelError::Invalid(format!("layer {l} shape mismatch")));
            }
        }
        if *widths.last().unwrap() != 1 || input_norm.dim() != widths[0] {
            return Err(ModelError::Invalid("MLP must map n_0 inputs to 1 output".into()));
        }
        Ok(Self {
            widths,
            weights,
            biases,
            input_norm,
        })
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Layer inputs; the last entry is the `[output]` vector.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        if x.len() != self.widths[0] {
            return Err(ModelError::Dimension {
                expected: self.widths[0],
                got: x.len(),
            });
        }
        let mut acts = vec![self.input_norm.apply(x)];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let input = acts.last().unwrap();
            let mut out = self.biases[l].clone();
            for (j, o) in out.iter_mut().enumerate() {
                let row = &self.weights[l][j * n_in..(j + 1) * n_in];
                *o += row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            }
            if l + 1 < self.n_layers() {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { layer: l });
            }
            debug_assert_eq!(out.len(), n_out);
            acts.push(out);
        }
        Ok(acts)
    }

    fn weight_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }
}

impl Model for Mlp {
    fn input_dim(&self) -> usize {
        self.widths[0]
    }

    fn num_parameters(&self) -> usize {
        self.weight_count() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Tape order: per layer, weights (row-major) then biases.
    fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn set_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_parameters(), "tape length");
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&values[offset..offset + nw]);
            offset += nw;
            b.copy_from_slice(&values[offset..offset + nb]);
            offset += nb;
        }
    }

    fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.activations(x)?.last().unwrap()[0])
    }

    fn predict_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        let acts = self.activations(x)?;
        let mut starts = Vec::new();
        let mut offset = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            starts.push(offset);
            offset += w.len() + b.len();
        }
        // Gradient w.r.t. the pre-activation of the current layer.
        let mut delta = vec![1.0];
        for l in (0..self.n_layers()).rev() {
            let n_in = self.widths[l];
            let input = &acts[l];
            let base = starts[l];
            let wlen = self.weights[l].len();
            for (j, &d) in delta.iter().enumerate() {
                for i in 0..n_in {
                    grad[base + j * n_in + i] = d * input[i];
                }
                grad[base + wlen + j] = d;
            }
            if l > 0 {
                // acts[l] = tanh(z), so dz = (1 - a^2) * W^T delta.
                let mut next = vec![0.0; n_in];
                for (j, &d) in delta.iter().enumerate() {
                    for i in 0..n_in {
                        next[i] += self.weights[l][j * n_in + i] * d;
                    }
                }
                for (n, a) in next.iter_mut().zip(input) {
                    *n *= 1.0 - a * a;
                }
                delta = next;
            }
        }
        Ok(acts.last().unwrap()[0])
    }

    /// Mean absolute weight (biases excluded).
    fn regularizer(&self) -> f64 {
        let count = self.weight_count();
        if count == 0 {
            return 0.0;
        }
        self.weights.iter().flatten().map(|w| w.abs()).sum::<f64>() / count as f64
    }

    fn add_regularizer_gradient(&self, weight: f64, grad: &mut [f64]) {
        let count = self.weight_count();
        if count == 0 || weight == 0.0 {
            return;
        }
        let w = weight / count as f64;
        let mut offset = 0;
        for (ws, b) in self.weights.iter().zip(&self.biases) {
            for (i, v) in ws.iter().enumerate() {
                if *v > 0.0 {
                    grad[offset + i] += w;
                } else if *v < 0.0 {
                    grad[offset + i] -= w;
                }
            }
            offset += ws.len() + b.len();
        }
    }

    fn input_norm(&self) -> &InputNorm {
        &self.input_norm
    }

    fn set_input_norm(&mut self, norm: InputNorm) {
        assert_eq!(norm.dim(), self.widths[0]);
        self.input_norm = norm;
    }
}
