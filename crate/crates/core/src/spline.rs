//! Edge activations: B-spline with SiLU residual, Gaussian RBF and reflectional
//! switch functions, all on a uniform knot grid.
//!
//! B-spline bases follow the Cox–de Boor recursion on a uniform knot vector that
//! is extended `k` steps past each end of `[lo, hi]`, giving `G + k` bases of
//! degree `k`. Only the `k + 1` bases that are non-zero at a point are computed
//! in the hot path; [`bspline_basis`] expands them into the full vector.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::SplineError;

/// Local basis values, stack-allocated for the degrees used in practice.
type LocalBasis = SmallVec<[f64; 8]>;

/// Uniform knot grid over `[lo, hi]` with `grid_size` intervals and spline degree `degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotGrid {
    pub lo: f64,
    pub hi: f64,
    #[serde(rename = "G")]
    pub grid_size: usize,
    #[serde(rename = "k")]
    pub degree: usize,
}

impl Default for KnotGrid {
    fn default() -> Self {
        Self {
            lo: -1.0,
            hi: 1.0,
            grid_size: 5,
            degree: 3,
        }
    }
}

impl KnotGrid {
    pub fn new(lo: f64, hi: f64, grid_size: usize, degree: usize) -> Result<Self, SplineError> {
        let grid = Self {
            lo,
            hi,
            grid_size,
            degree,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), SplineError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(SplineError::InvalidGrid(format!(
                "need finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.grid_size == 0 {
            return Err(SplineError::InvalidGrid("grid_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Knot spacing `(hi - lo) / G`.
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.grid_size as f64
    }

    /// Number of degree-`k` basis functions, `G + k`.
    pub fn num_basis(&self) -> usize {
        self.grid_size + self.degree
    }

    pub fn num_knots(&self) -> usize {
        self.grid_size + 2 * self.degree + 1
    }

    /// Knot `j` of the extended vector; knot `k` is `lo` and knot `G + k` is `hi`.
    #[inline]
    pub fn knot(&self, j: usize) -> f64 {
        self.lo + (j as f64 - self.degree as f64) * self.step()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.num_knots()).map(|j| self.knot(j)).collect()
    }

    /// Index `s` of the knot span `[t_s, t_{s+1})` containing `x`, or `None`
    /// outside the extended knot vector. `x == hi` is assigned to the last
    /// interior span so that the grid is closed on the right.
    fn span(&self, x: f64) -> Option<usize> {
        if !x.is_finite() {
            return None;
        }
        let last_interior = self.grid_size + self.degree - 1;
        if x == self.hi {
            return Some(last_interior);
        }
        let t0 = self.knot(0);
        let pos = (x - t0) / self.step();
        if pos < 0.0 {
            return None;
        }
        let mut s = pos.floor() as usize;
        // Guard against rounding at knot boundaries.
        if s < self.num_knots() - 1 && x < self.knot(s) {
            s = s.saturating_sub(1);
        } else if s + 1 < self.num_knots() && x >= self.knot(s + 1) {
            s += 1;
        }
        if s >= self.num_knots() - 1 {
            return None;
        }
        Some(s)
    }

    /// Non-zero bases of degree `degree` on span `s`: values of `B_{s-degree..=s}`.
    fn local_basis(&self, x: f64, s: usize, degree: usize) -> LocalBasis {
        let mut n: LocalBasis = SmallVec::from_elem(0.0, degree + 1);
        let mut left: LocalBasis = SmallVec::from_elem(0.0, degree + 1);
        let mut right: LocalBasis = SmallVec::from_elem(0.0, degree + 1);
        n[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - self.knot_signed(s as isize + 1 - j as isize);
            right[j] = self.knot_signed(s as isize + j as isize) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    // Knots are uniform, so indices past either end are still well defined.
    #[inline]
    fn knot_signed(&self, j: isize) -> f64 {
        self.lo + (j as f64 - self.degree as f64) * self.step()
    }
}

/// The `G + k` B-spline basis values at `x`, via Cox–de Boor.
pub fn bspline_basis(x: f64, grid: &KnotGrid) -> Result<Vec<f64>, SplineError> {
    grid.validate()?;
    if !x.is_finite() {
        return Err(SplineError::NonFinite(x));
    }
    let mut out = vec![0.0; grid.num_basis()];
    for_each_basis(grid, x, |i, b| out[i] = b);
    Ok(out)
}

/// Calls `f(i, B_i(x))` for each basis index with non-zero support at `x`.
fn for_each_basis(grid: &KnotGrid, x: f64, mut f: impl FnMut(usize, f64)) {
    let Some(s) = grid.span(x) else { return };
    let k = grid.degree;
    let local = grid.local_basis(x, s, k);
    let nb = grid.num_basis() as isize;
    for (r, &b) in local.iter().enumerate() {
        let i = s as isize - k as isize + r as isize;
        if (0..nb).contains(&i) {
            f(i as usize, b);
        }
    }
}

/// Calls `f(i, B_i(x), B_i'(x))` for each basis index with support at `x`.
fn for_each_basis_with_derivative(grid: &KnotGrid, x: f64, mut f: impl FnMut(usize, f64, f64)) {
    let Some(s) = grid.span(x) else { return };
    let k = grid.degree;
    let local = grid.local_basis(x, s, k);
    // Degree k-1 bases on the same span are B_{s-k+1..=s}.
    let lower: LocalBasis = if k > 0 {
        grid.local_basis(x, s, k - 1)
    } else {
        LocalBasis::new()
    };
    let inv_h = 1.0 / grid.step();
    let nb = grid.num_basis() as isize;
    for (r, &b) in local.iter().enumerate() {
        let i = s as isize - k as isize + r as isize;
        if !(0..nb).contains(&i) {
            continue;
        }
        // B'_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h on uniform knots.
        let d = if k == 0 {
            0.0
        } else {
            let left = if r >= 1 { lower[r - 1] } else { 0.0 };
            let right = if r < k { lower[r] } else { 0.0 };
            (left - right) * inv_h
        };
        f(i as usize, b, d);
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x / (1 + e^{-x})`.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "BSpline")]
    BSpline,
    #[serde(rename = "GRBF")]
    Grbf,
    #[serde(rename = "RSWAF")]
    Rswaf,
}

impl std::str::FromStr for EdgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bspline" | "kan-bspline" => Ok(Self::BSpline),
            "grbf" | "kan-grbf" => Ok(Self::Grbf),
            "rswaf" | "kan-rswaf" => Ok(Self::Rswaf),
            other => Err(format!("unknown edge kind `{other}`")),
        }
    }
}

/// A single learnable univariate activation on a network edge.
///
/// For `BSpline` edges the value is `beta * silu(x) + alpha * sum_i theta_i B_i(x)`
/// and all of `theta`, `alpha`, `beta` are learnable. The radial variants have
/// no residual term; `alpha` and `beta` are pinned to 1 and 0 and only `theta`
/// is learnable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFunction {
    pub kind: EdgeKind,
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub grid: KnotGrid,
    pub centers: Vec<f64>,
    pub width: f64,
}

/// Partial derivatives of an edge's output.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrad {
    pub dx: f64,
    pub dtheta: Vec<f64>,
    pub dalpha: f64,
    pub dbeta: f64,
}

impl EdgeFunction {
    /// B-spline edge with the given coefficients.
    pub fn bspline(grid: KnotGrid, theta: Vec<f64>, alpha: f64, beta: f64) -> Self {
        Self {
            kind: EdgeKind::BSpline,
            theta,
            alpha,
            beta,
            width: grid.step(),
            grid,
            centers: Vec::new(),
        }
    }

    /// Radial edge with `G + k` centers spread uniformly over the grid and
    /// width equal to the knot step.
    pub fn radial(kind: EdgeKind, grid: KnotGrid, theta: Vec<f64>) -> Self {
        let m = grid.num_basis();
        let centers = if m == 1 {
            vec![0.5 * (grid.lo + grid.hi)]
        } else {
            (0..m)
                .map(|i| grid.lo + (grid.hi - grid.lo) * i as f64 / (m - 1) as f64)
                .collect()
        };
        Self::with_centers(kind, grid, theta, centers, grid.step())
    }

    pub fn with_centers(
        kind: EdgeKind,
        grid: KnotGrid,
        theta: Vec<f64>,
        centers: Vec<f64>,
        width: f64,
    ) -> Self {
        Self {
            kind,
            theta,
            alpha: 1.0,
            beta: 0.0,
            grid,
            centers,
            width,
        }
    }

    /// Edge with zero coefficients; B-spline edges keep `beta` so they reduce to `beta * silu`.
    pub fn zeros(kind: EdgeKind, grid: KnotGrid) -> Self {
        match kind {
            EdgeKind::BSpline => Self::bspline(grid, vec![0.0; grid.num_basis()], 1.0, 1.0),
            _ => Self::radial(kind, grid, vec![0.0; grid.num_basis()]),
        }
    }

    pub fn validate(&self) -> Result<(), SplineError> {
        self.grid.validate()?;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.theta) && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(SplineError::InvalidEdge("non-finite parameter".into()));
        }
        match self.kind {
            EdgeKind::BSpline => {
                if self.theta.len() != self.grid.num_basis() {
                    return Err(SplineError::InvalidEdge(format!(
                        "B-spline edge needs {} coefficients, has {}",
                        self.grid.num_basis(),
                        self.theta.len()
                    )));
                }
            }
            EdgeKind::Grbf | EdgeKind::Rswaf => {
                if self.theta.len() != self.centers.len() {
                    return Err(SplineError::InvalidEdge(format!(
                        "{} coefficients for {} centers",
                        self.theta.len(),
                        self.centers.len()
                    )));
                }
                if !(self.width.is_finite() && self.width > 0.0) || !finite(&self.centers) {
                    return Err(SplineError::InvalidEdge(
                        "radial edge needs finite centers and width > 0".into(),
                    ));
                }
                if self.alpha != 1.0 || self.beta != 0.0 {
                    return Err(SplineError::InvalidEdge(
                        "radial edges have no residual: alpha must be 1, beta 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of learnable scalars.
    pub fn num_parameters(&self) -> usize {
        match self.kind {
            EdgeKind::BSpline => self.theta.len() + 2,
            _ => self.theta.len(),
        }
    }

    /// Learnable scalars in tape order: `theta..., alpha, beta` (radial: `theta...`).
    pub fn write_parameters(&self, out: &mut [f64]) {
        let n = self.theta.len();
        out[..n].copy_from_slice(&self.theta);
        if self.kind == EdgeKind::BSpline {
            out[n] = self.alpha;
            out[n + 1] = self.beta;
        }
    }

    pub fn read_parameters(&mut self, src: &[f64]) {
        let n = self.theta.len();
        self.theta.copy_from_slice(&src[..n]);
        if self.kind == EdgeKind::BSpline {
            self.alpha = src[n];
            self.beta = src[n + 1];
        }
    }

    #[inline]
    fn grbf_term(&self, x: f64, c: f64) -> f64 {
        (-(x - c).abs() / (2.0 * self.width * self.width)).exp()
    }

    #[inline]
    fn rswaf_term(&self, x: f64, c: f64) -> f64 {
        let t = ((x - c) / self.width).tanh();
        1.0 - t * t
    }

    /// Spline part `sum_i theta_i B_i(x)` of a B-spline edge.
    pub fn spline_value(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for_each_basis(&self.grid, x, |i, b| acc += self.theta[i] * b);
        acc
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            EdgeKind::BSpline => self.beta * silu(x) + self.alpha * self.spline_value(x),
            EdgeKind::Grbf => self
                .theta
                .iter()
                .zip(&self.centers)
                .map(|(t, &c)| t * self.grbf_term(x, c))
                .sum(),
            EdgeKind::Rswaf => self
                .theta
                .iter()
                .zip(&self.centers)
                .map(|(t, &c)| t * self.rswaf_term(x, c))
                .sum(),
        }
    }

    /// Analytic partials of [`eval`](Self::eval). The GRBF kink at `x = c_i`
    /// contributes zero to `dx`.
    pub fn grad(&self, x: f64) -> EdgeGrad {
        let mut dtheta = vec![0.0; self.theta.len()];
        let mut params = vec![0.0; self.num_parameters()];
        let dx = self.accumulate_grad(x, 1.0, &mut params);
        dtheta.copy_from_slice(&params[..self.theta.len()]);
        let (dalpha, dbeta) = if self.kind == EdgeKind::BSpline {
            (params[self.theta.len()], params[self.theta.len() + 1])
        } else {
            (0.0, 0.0)
        };
        EdgeGrad {
            dx,
            dtheta,
            dalpha,
            dbeta,
        }
    }

    /// Adds `upstream * d(eval)/d(param)` into `params` (tape order) and
    /// returns `upstream * d(eval)/dx`.
    pub fn accumulate_grad(&self, x: f64, upstream: f64, params: &mut [f64]) -> f64 {
        match self.kind {
            EdgeKind::BSpline => {
                let n = self.theta.len();
                let mut spline = 0.0;
                let mut dspline = 0.0;
                let scale = upstream * self.alpha;
                for_each_basis_with_derivative(&self.grid, x, |i, b, db| {
                    spline += self.theta[i] * b;
                    dspline += self.theta[i] * db;
                    params[i] += scale * b;
                });
                params[n] += upstream * spline;
                params[n + 1] += upstream * silu(x);
                upstream * (self.beta * silu_derivative(x) + self.alpha * dspline)
            }
            EdgeKind::Grbf => {
                let inv = 1.0 / (2.0 * self.width * self.width);
                let mut dx = 0.0;
                for (i, (&t, &c)) in self.theta.iter().zip(&self.centers).enumerate() {
                    let e = self.grbf_term(x, c);
                    params[i] += upstream * e;
                    let sign = if x > c {
                        1.0
                    } else if x < c {
                        -1.0
                    } else {
                        0.0
                    };
                    dx -= t * e * sign * inv;
                }
                upstream * dx
            }
            EdgeKind::Rswaf => {
                let mut dx = 0.0;
                for (i, (&t, &c)) in self.theta.iter().zip(&self.centers).enumerate() {
                    let th = ((x - c) / self.width).tanh();
                    let sech2 = 1.0 - th * th;
                    params[i] += upstream * sech2;
                    dx += t * (-2.0 * th * sech2) / self.width;
                }
                upstream * dx
            }
        }
    }

    /// Basis values that multiply `theta` (before `alpha`).
    pub fn basis_values(&self, x: f64) -> Vec<f64> {
        match self.kind {
            EdgeKind::BSpline => {
                let mut out = vec![0.0; self.grid.num_basis()];
                for_each_basis(&self.grid, x, |i, b| out[i] = b);
                out
            }
            EdgeKind::Grbf => self.centers.iter().map(|&c| self.grbf_term(x, c)).collect(),
            EdgeKind::Rswaf => self.centers.iter().map(|&c| self.rswaf_term(x, c)).collect(),
        }
    }

    /// Moves the edge onto a grid with `new_grid_size` intervals, re-fitting
    /// `theta` by least squares at `10 * new_grid_size` uniform samples so the
    /// basis part of the edge is preserved as closely as the new basis allows.
    pub fn refine_grid(&mut self, new_grid_size: usize) -> Result<(), SplineError> {
        let new_grid = KnotGrid::new(self.grid.lo, self.grid.hi, new_grid_size, self.grid.degree)?;
        let old = self.clone();
        let target = |x: f64| match old.kind {
            EdgeKind::BSpline => old.spline_value(x),
            _ => old.eval(x),
        };
        let mut next = match self.kind {
            EdgeKind::BSpline => {
                Self::bspline(new_grid, vec![0.0; new_grid.num_basis()], self.alpha, self.beta)
            }
            kind => Self::radial(kind, new_grid, vec![0.0; new_grid.num_basis()]),
        };
        let samples = 10 * new_grid_size;
        let m = next.theta.len();
        let mut design = nalgebra::DMatrix::<f64>::zeros(samples, m);
        let mut rhs = nalgebra::DVector::<f64>::zeros(samples);
        for s in 0..samples {
            let x = new_grid.lo + (new_grid.hi - new_grid.lo) * s as f64 / (samples - 1).max(1) as f64;
            for (j, b) in next.basis_values(x).into_iter().enumerate() {
                design[(s, j)] = b;
            }
            rhs[s] = target(x);
        }
        let svd = design.svd(true, true);
        let theta = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| SplineError::InvalidGrid(format!("refit failed: {e}")))?;
        next.theta = theta.iter().copied().collect();
        *self = next;
        Ok(())
    }
}
