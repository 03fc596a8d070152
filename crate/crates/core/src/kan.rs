//! Kolmogorov-Arnold network: layers of edge activations summed at each node.
//!
//! Layer `l` maps `n_l` inputs to `n_{l+1}` outputs with
//! `out[j] = sum_i phi_{j,i}(x[i])`. Edges are stored row-major, so edge
//! `(j, i)` lives at `edges[j * n_in + i]`.
//!
//! Parameters are exposed through a flat tape ordered layer by layer, edge by
//! edge (row-major), and within an edge as `theta..., alpha, beta` (radial
//! edges contribute only `theta`).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::ModelError;
use crate::model::{InputNorm, Model};
use crate::spline::{EdgeFunction, EdgeKind, KnotGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub edges: Vec<EdgeFunction>,
}

impl KanLayer {
    pub fn new(n_in: usize, n_out: usize, edges: Vec<EdgeFunction>) -> Result<Self, ModelError> {
        if n_in == 0 || n_out == 0 {
            return Err(ModelError::Invalid("layer widths must be positive".into()));
        }
        if edges.len() != n_in * n_out {
            return Err(ModelError::Invalid(format!(
                "{}x{} layer needs {} edges, got {}",
                n_out,
                n_in,
                n_in * n_out,
                edges.len()
            )));
        }
        for e in &edges {
            e.validate()?;
        }
        Ok(Self { n_in, n_out, edges })
    }

    /// Layer filled with freshly initialized edges: `theta ~ N(0, 0.1 / sqrt(G + k))`,
    /// `alpha = beta = 1` for B-spline edges.
    pub fn random(
        n_in: usize,
        n_out: usize,
        kind: EdgeKind,
        grid: KnotGrid,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        grid.validate()?;
        let m = grid.num_basis();
        let normal = Normal::new(0.0, 0.1 / (m as f64).sqrt())
            .map_err(|e| ModelError::Invalid(e.to_string()))?;
        let edges = (0..n_in * n_out)
            .map(|_| {
                let theta: Vec<f64> = (0..m).map(|_| normal.sample(rng)).collect();
                match kind {
                    EdgeKind::BSpline => EdgeFunction::bspline(grid, theta, 1.0, 1.0),
                    _ => EdgeFunction::radial(kind, grid, theta),
                }
            })
            .collect();
        Self::new(n_in, n_out, edges)
    }

    #[inline]
    pub fn edge(&self, j: usize, i: usize) -> &EdgeFunction {
        &self.edges[j * self.n_in + i]
    }

    pub fn edge_mut(&mut self, j: usize, i: usize) -> &mut EdgeFunction {
        &mut self.edges[j * self.n_in + i]
    }

    pub fn num_parameters(&self) -> usize {
        self.edges.iter().map(EdgeFunction::num_parameters).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.n_in {
            return Err(ModelError::Dimension {
                expected: self.n_in,
                got: x.len(),
            });
        }
        Ok((0..self.n_out)
            .map(|j| {
                x.iter()
                    .enumerate()
                    .map(|(i, &xi)| self.edge(j, i).eval(xi))
                    .sum()
            })
            .collect())
    }

    /// Backpropagates `g_out` through the layer at input `x`. Parameter
    /// gradients are added into `grads` (this layer's slice of the tape);
    /// returns the gradient with respect to `x`.
    fn backward(&self, x: &[f64], g_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut g_in = vec![0.0; self.n_in];
        let mut offset = 0;
        for j in 0..self.n_out {
            for (i, &xi) in x.iter().enumerate() {
                let edge = self.edge(j, i);
                let np = edge.num_parameters();
                g_in[i] += edge.accumulate_grad(xi, g_out[j], &mut grads[offset..offset + np]);
                offset += np;
            }
        }
        g_in
    }
}

/// Gradients from [`KanNetwork::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradient {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Flat view of every learnable scalar with an aligned gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterTape {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParameterTape {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    pub widths: Vec<usize>,
    pub layers: Vec<KanLayer>,
    pub input_norm: InputNorm,
}

impl KanNetwork {
    /// Randomly initialized network with the same edge kind and grid everywhere.
    pub fn new(
        widths: &[usize],
        kind: EdgeKind,
        grid: KnotGrid,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if widths.len() < 2 {
            return Err(ModelError::Invalid("need at least one layer".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::random(w[0], w[1], kind, grid, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_layers(widths.to_vec(), layers, InputNorm::identity(widths[0]))
    }

    pub fn from_layers(
        widths: Vec<usize>,
        layers: Vec<KanLayer>,
        input_norm: InputNorm,
    ) -> Result<Self, ModelError> {
        if widths.len() != layers.len() + 1 || layers.is_empty() {
            return Err(ModelError::Invalid(format!(
                "{} widths for {} layers",
                widths.len(),
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.n_in != widths[l] || layer.n_out != widths[l + 1] {
                return Err(ModelError::Invalid(format!(
                    "layer {l} is {}->{}, widths say {}->{}",
                    layer.n_in,
                    layer.n_out,
                    widths[l],
                    widths[l + 1]
                )));
            }
        }
        if *widths.last().unwrap() != 1 {
            return Err(ModelError::Invalid("output width must be 1".into()));
        }
        if input_norm.dim() != widths[0] || input_norm.scale.len() != widths[0] {
            return Err(ModelError::Invalid("input_norm dimension differs from n_0".into()));
        }
        Ok(Self {
            widths,
            layers,
            input_norm,
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.widths[0] {
            return Err(ModelError::Dimension {
                expected: self.widths[0],
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Inputs to every layer plus the final output: `acts[0]` is the
    /// normalized input, `acts[L]` the `[output]` vector.
    fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(self.input_norm.apply(x));
        for (l, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(acts.last().unwrap())?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { layer: l });
            }
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, ModelError> {
        Ok(self.activations(x)?.last().unwrap()[0])
    }

    /// Gradients of `upstream * forward(x)` with respect to every parameter and to `x`.
    pub fn backward(&self, x: &[f64], upstream: f64) -> Result<NetworkGradient, ModelError> {
        let mut params = vec![0.0; self.num_parameters()];
        let (_, input) = self.backward_into(x, upstream, &mut params)?;
        Ok(NetworkGradient { params, input })
    }

    /// Adds parameter gradients into `grads`; returns `(output, input gradient)`.
    fn backward_into(
        &self,
        x: &[f64],
        upstream: f64,
        grads: &mut [f64],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let acts = self.activations(x)?;
        let output = acts.last().unwrap()[0];
        let mut starts = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            starts.push(offset);
            offset += layer.num_parameters();
        }
        let mut g = vec![upstream];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let end = starts[l] + layer.num_parameters();
            g = layer.backward(&acts[l], &g, &mut grads[starts[l]..end]);
        }
        let input = g
            .iter()
            .zip(&self.input_norm.scale)
            .map(|(gi, s)| gi * s)
            .collect();
        Ok((output, input))
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(KanLayer::num_parameters).sum()
    }

    pub fn tape(&self) -> ParameterTape {
        let values = self.parameters();
        let grads = vec![0.0; values.len()];
        ParameterTape { values, grads }
    }

    pub fn load_tape(&mut self, tape: &ParameterTape) {
        self.set_parameters(&tape.values);
    }

    /// Re-fits every edge onto a grid with `grid_size` intervals.
    pub fn refine_grid(&mut self, grid_size: usize) -> Result<(), ModelError> {
        for layer in &mut self.layers {
            for edge in &mut layer.edges {
                edge.refine_grid(grid_size)?;
            }
        }
        Ok(())
    }

    fn spline_coefficient_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.edges)
            .map(|e| e.theta.len())
            .sum()
    }
}

impl Model for KanNetwork {
    fn input_dim(&self) -> usize {
        self.widths[0]
    }

    fn num_parameters(&self) -> usize {
        KanNetwork::num_parameters(self)
    }

    fn parameters(&self) -> Vec<f64> {
        let mut out = vec![0.0; KanNetwork::num_parameters(self)];
        let mut offset = 0;
        for edge in self.layers.iter().flat_map(|l| &l.edges) {
            let np = edge.num_parameters();
            edge.write_parameters(&mut out[offset..offset + np]);
            offset += np;
        }
        out
    }

    fn set_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), KanNetwork::num_parameters(self), "tape length");
        let mut offset = 0;
        for edge in self.layers.iter_mut().flat_map(|l| &mut l.edges) {
            let np = edge.num_parameters();
            edge.read_parameters(&values[offset..offset + np]);
            offset += np;
        }
    }

    fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.forward(x)
    }

    fn predict_with_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        Ok(self.backward_into(x, 1.0, grad)?.0)
    }

    /// Mean absolute spline coefficient across all edges.
    fn regularizer(&self) -> f64 {
        let count = self.spline_coefficient_count();
        if count == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .layers
            .iter()
            .flat_map(|l| &l.edges)
            .flat_map(|e| &e.theta)
            .map(|t| t.abs())
            .sum();
        sum / count as f64
    }

    fn add_regularizer_gradient(&self, weight: f64, grad: &mut [f64]) {
        let count = self.spline_coefficient_count();
        if count == 0 || weight == 0.0 {
            return;
        }
        let w = weight / count as f64;
        let mut offset = 0;
        for edge in self.layers.iter().flat_map(|l| &l.edges) {
            for (i, t) in edge.theta.iter().enumerate() {
                // Subgradient 0 at 0.
                if *t > 0.0 {
                    grad[offset + i] += w;
                } else if *t < 0.0 {
                    grad[offset + i] -= w;
                }
            }
            offset += edge.num_parameters();
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
