//! Feedforward tanh policies with structural observation masks, exact
//! input/parameter gradients, layer-norm Lipschitz bounds, hard
//! thresholding, and the gradient sign monitor.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::gradient_bounds::{GradientBoundSet, SignClass};
use crate::simulator::Controller;

/// One affine layer `W h + b` with a fixed 0/1 sparsity mask on `W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    #[serde(with = "crate::config::rows")]
    pub weight: DMatrix<f64>,
    pub bias: Vec<f64>,
    /// `true` where the weight entry is trainable; other entries stay zero.
    pub mask: Vec<Vec<bool>>,
}

impl Layer {
    fn free(&self, r: usize, c: usize) -> bool {
        self.mask[r][c]
    }
}

/// Multi-layer perceptron `π(y)` with tanh hidden activations and a linear
/// output layer.
///
/// `input_mask[i][j]` records whether output `i` may depend on input `j`.
/// The layer masks enforce it structurally: the hidden units of output `i`
/// only connect to its observed inputs and to its own hidden units, so the
/// masked partial derivatives are exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyNet {
    pub layers: Vec<Layer>,
    pub input_mask: Vec<Vec<bool>>,
    /// Biases fixed at zero so that `π(0) = 0`.
    pub centered: bool,
}

/// Forward-pass intermediates: `acts[0] = y`, `acts[k]` the output of layer `k`.
struct Cache {
    acts: Vec<DVector<f64>>,
}

impl PolicyNet {
    /// Block-structured network: each output `i` gets its own tower of
    /// `hidden` tanh layers fed by the inputs with `obs_mask[i][j] = true`.
    /// Weights are Gaussian with standard deviation `init_scale/√fan_in`.
    pub fn agents<R: Rng + ?Sized>(
        obs_mask: &[Vec<bool>],
        hidden: &[usize],
        init_scale: f64,
        centered: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let n_out = obs_mask.len();
        if n_out == 0 {
            return Err(dim_err("policy needs at least one output"));
        }
        let n_in = obs_mask[0].len();
        if n_in == 0 || obs_mask.iter().any(|r| r.len() != n_in) {
            return Err(dim_err("observation mask rows must share a positive length"));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        // Owner agent of every unit, layer by layer.
        let mut owners: Vec<Vec<usize>> = Vec::new();
        for &h in hidden {
            owners.push((0..n_out).flat_map(|i| std::iter::repeat(i).take(h)).collect());
        }
        owners.push((0..n_out).collect());
        let mut layers = Vec::with_capacity(owners.len());
        for (k, out_owner) in owners.iter().enumerate() {
            let rows = out_owner.len();
            let mask: Vec<Vec<bool>> = if k == 0 {
                out_owner.iter().map(|&i| obs_mask[i].clone()).collect()
            } else {
                let in_owner = &owners[k - 1];
                out_owner
                    .iter()
                    .map(|&i| in_owner.iter().map(|&j| i == j).collect())
                    .collect()
            };
            let cols = mask[0].len();
            let mut weight = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let fan_in = mask[r].iter().filter(|m| **m).count().max(1) as f64;
                for c in 0..cols {
                    if mask[r][c] {
                        let z: f64 = StandardNormal.sample(rng);
                        weight[(r, c)] = z * init_scale / fan_in.sqrt();
                    }
                }
            }
            layers.push(Layer {
                weight,
                bias: vec![0.0; rows],
                mask,
            });
        }
        Self::new(layers, obs_mask.to_vec(), centered)
    }

    /// Network from explicit layers; all-true masks may be passed for dense nets.
    pub fn new(layers: Vec<Layer>, input_mask: Vec<Vec<bool>>, centered: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(dim_err("policy needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            let (r, c) = l.weight.shape();
            if l.bias.len() != r || l.mask.len() != r || l.mask.iter().any(|m| m.len() != c) {
                return Err(dim_err(format!("layer {k} has inconsistent shapes")));
            }
            if k > 0 && c != layers[k - 1].weight.nrows() {
                return Err(dim_err(format!("layer {k} input width does not match layer {}", k - 1)));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(invalid(format!("layer {k} has non-finite parameters")));
            }
            for i in 0..r {
                for j in 0..c {
                    if !l.mask[i][j] && l.weight[(i, j)] != 0.0 {
                        return Err(invalid(format!("layer {k} has a nonzero masked weight")));
                    }
                }
            }
            if centered && l.bias.iter().any(|b| *b != 0.0) {
                return Err(invalid("centered policies must have zero biases"));
            }
        }
        let net = Self {
            layers,
            input_mask,
            centered,
        };
        if net.input_mask.len() != net.n_out() || net.input_mask.iter().any(|r| r.len() != net.n_in()) {
            return Err(dim_err("input mask must be n_out × n_in"));
        }
        Ok(net)
    }

    /// Dense network with the given layer widths `[n_in, h_1, …, n_out]`.
    pub fn dense<R: Rng + ?Sized>(sizes: &[usize], init_scale: f64, centered: bool, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(dim_err("dense policy needs ≥ 2 positive widths"));
        }
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            let (cols, rows) = (w[0], w[1]);
            let weight = DMatrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                z * init_scale / (cols as f64).sqrt()
            });
            let bias = if centered {
                vec![0.0; rows]
            } else {
                (0..rows)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        0.1 * z
                    })
                    .collect()
            };
            layers.push(Layer {
                weight,
                bias,
                mask: vec![vec![true; cols]; rows],
            });
        }
        let n_out = sizes[sizes.len() - 1];
        Self::new(layers, vec![vec![true; sizes[0]]; n_out], centered)
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    /// Number of weight layers `n_L`.
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn forward_cache(&self, y: &DVector<f64>) -> Cache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(y.clone());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = &l.weight * &acts[k];
            for (zi, bi) in z.iter_mut().zip(&l.bias) {
                *zi += bi;
            }
            if k < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Cache { acts }
    }

    /// `π(y)`.
    pub fn forward(&self, y: &DVector<f64>) -> DVector<f64> {
        self.forward_cache(y).acts.pop().expect("non-empty")
    }

    /// Jacobian `∂π_i/∂y_j` (n_out × n_in) by reverse accumulation.
    pub fn partial_gradients(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let cache = self.forward_cache(y);
        let last = self.layers.len() - 1;
        let mut jac = self.layers[last].weight.clone();
        for k in (0..last).rev() {
            let a = &cache.acts[k + 1];
            for (c, av) in a.iter().enumerate() {
                let d = 1.0 - av * av;
                jac.column_mut(c).scale_mut(d);
            }
            jac = jac * &self.layers[k].weight;
        }
        jac
    }

    /// Number of trainable parameters (free weights, plus biases unless centered).
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.mask.iter().flatten().filter(|m| **m).count() + if self.centered { 0 } else { l.bias.len() }
            })
            .sum()
    }

    /// Trainable parameters, layer by layer: free weights row-major, then biases.
    pub fn params(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in 0..l.weight.nrows() {
                for c in 0..l.weight.ncols() {
                    if l.free(r, c) {
                        out.push(l.weight[(r, c)]);
                    }
                }
            }
            if !self.centered {
                out.extend_from_slice(&l.bias);
            }
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`PolicyNet::params`].
    pub fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(dim_err("parameter vector has the wrong length"));
        }
        let centered = self.centered;
        let mut k = 0;
        for l in &mut self.layers {
            for r in 0..l.weight.nrows() {
                for c in 0..l.weight.ncols() {
                    if l.mask[r][c] {
                        l.weight[(r, c)] = p[k];
                        k += 1;
                    }
                }
            }
            if !centered {
                for b in &mut l.bias {
                    *b = p[k];
                    k += 1;
                }
            }
        }
        Ok(())
    }

    /// Gradient of `gᵀπ(y)` with respect to the parameters.
    pub fn param_vjp(&self, y: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let cache = self.forward_cache(y);
        let last = self.layers.len() - 1;
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = g.clone();
        for k in (0..=last).rev() {
            if k < last {
                let a = &cache.acts[k + 1];
                for (d, av) in delta.iter_mut().zip(a.iter()) {
                    *d *= 1.0 - av * av;
                }
            }
            let gw = &delta * cache.acts[k].transpose();
            let next = self.layers[k].weight.transpose() * &delta;
            grads.push((gw, delta));
            delta = next;
        }
        grads.reverse();
        let mut out = Vec::with_capacity(self.n_params());
        for (l, (gw, gb)) in self.layers.iter().zip(&grads) {
            for r in 0..gw.nrows() {
                for c in 0..gw.ncols() {
                    if l.free(r, c) {
                        out.push(gw[(r, c)]);
                    }
                }
            }
            if !self.centered {
                out.extend(gb.iter().copied());
            }
        }
        DVector::from_vec(out)
    }

    /// Spectral norm of every weight matrix.
    pub fn spectral_norms(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| crate::linalg::spectral_norm(&l.weight))
            .collect()
    }

    /// `Π_k ‖W_k‖₂`, a global Lipschitz bound since tanh is 1-Lipschitz.
    pub fn lipschitz_upper(&self) -> f64 {
        self.spectral_norms().iter().product()
    }

    /// If `lipschitz_upper > l_cert`, scales every weight matrix by
    /// `(l_cert/l)^{1/n_L}` (biases untouched). Any residual excess from
    /// roundoff is removed from the last layer so the bound never exceeds
    /// `l_cert`. Returns whether the net was changed.
    pub fn hard_threshold(&mut self, l_cert: f64) -> Result<bool> {
        if !(l_cert > 0.0 && l_cert.is_finite()) {
            return Err(invalid("certified level must be positive"));
        }
        let l = self.lipschitz_upper();
        if l <= l_cert {
            return Ok(false);
        }
        let factor = (l_cert / l).powf(1.0 / self.n_layers() as f64);
        for layer in &mut self.layers {
            layer.weight *= factor;
        }
        let mut shrink = 1.0;
        while self.lipschitz_upper() > l_cert {
            shrink *= 1.0 - 1e-14;
            let last = self.layers.len() - 1;
            let lnow = self.lipschitz_upper();
            self.layers[last].weight *= (l_cert / lnow).min(shrink);
        }
        Ok(true)
    }
}

impl Controller for PolicyNet {
    fn act(&self, y: &DVector<f64>) -> DVector<f64> {
        self.forward(y)
    }
}

/// Running per-entry statistics of observed partial gradients.
///
/// Each call to [`GradientMonitor::update`] records the per-entry min/max of
/// one batch (one iteration); only the most recent `window` batches count.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMonitor {
    pub mask: Vec<Vec<bool>>,
    pub window: usize,
    batches: VecDeque<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Exported sign-pattern file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternFile {
    pub pattern: Vec<Vec<SignClass>>,
    pub eps: f64,
    pub l: f64,
}

impl GradientMonitor {
    /// Default window length in iterations.
    pub const DEFAULT_WINDOW: usize = 20;

    pub fn new(mask: Vec<Vec<bool>>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(invalid("monitor window must be positive"));
        }
        if mask.is_empty() || mask[0].is_empty() || mask.iter().any(|r| r.len() != mask[0].len()) {
            return Err(dim_err("monitor mask must be a non-empty rectangle"));
        }
        Ok(Self {
            mask,
            window,
            batches: VecDeque::new(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Records one batch of gradient matrices.
    pub fn update(&mut self, grads: &[DMatrix<f64>]) -> Result<()> {
        let (r, c) = (self.mask.len(), self.mask[0].len());
        if grads.is_empty() {
            return Ok(());
        }
        let mut lo = DMatrix::from_element(r, c, f64::INFINITY);
        let mut hi = DMatrix::from_element(r, c, f64::NEG_INFINITY);
        for g in grads {
            if g.shape() != (r, c) {
                return Err(dim_err("gradient matrix shape does not match the monitor"));
            }
            lo = lo.zip_map(g, f64::min);
            hi = hi.zip_map(g, f64::max);
        }
        self.batches.push_back((lo, hi));
        while self.batches.len() > self.window {
            self.batches.pop_front();
        }
        Ok(())
    }

    /// Per-entry `(min, max)` over the window.
    pub fn range(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let first = self
            .batches
            .front()
            .ok_or_else(|| invalid("gradient monitor has no observations"))?;
        let mut lo = first.0.clone();
        let mut hi = first.1.clone();
        for (l, h) in self.batches.iter().skip(1) {
            lo = lo.zip_map(l, f64::min);
            hi = hi.zip_map(h, f64::max);
        }
        Ok((lo, hi))
    }

    /// Sign class per entry: consistently positive `+`, consistently
    /// negative `−`, otherwise `±`; masked entries `0`.
    pub fn pattern(&self) -> Result<Vec<Vec<SignClass>>> {
        let (lo, hi) = self.range()?;
        Ok(self
            .mask
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &seen)| {
                        if !seen {
                            SignClass::Zero
                        } else if lo[(i, j)] > 0.0 {
                            SignClass::Positive
                        } else if hi[(i, j)] < 0.0 {
                            SignClass::Negative
                        } else {
                            SignClass::Mixed
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// One-sided bounds at level `l` with margin `eps`. Fails if `l` is below
    /// an observed gradient magnitude or an observed-εl band excludes data,
    /// since the exported set must contain every observed gradient.
    pub fn export(&self, eps: f64, l: f64) -> Result<GradientBoundSet> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("pattern margin ε must lie in (0, 1)"));
        }
        let pattern = self.pattern()?;
        let bounds = GradientBoundSet::from_pattern(&pattern, self.mask[0].len(), l, eps)?;
        let (lo, hi) = self.range()?;
        for i in 0..lo.nrows() {
            for j in 0..lo.ncols() {
                if self.mask[i][j] && (lo[(i, j)] < bounds.xi_lower[(i, j)] || hi[(i, j)] > bounds.xi_upper[(i, j)]) {
                    return Err(invalid(format!(
                        "level {l} does not contain the observed gradient range of entry ({i}, {j})"
                    )));
                }
            }
        }
        Ok(bounds)
    }

    /// Pattern file for [`GradientMonitor::export`]; fails under the same
    /// conditions.
    pub fn pattern_file(&self, eps: f64, l: f64) -> Result<PatternFile> {
        self.export(eps, l)?;
        Ok(PatternFile {
            pattern: self.pattern()?,
            eps,
            l,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masked_entries_have_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask = vec![vec![true, false, true], vec![false, true, false]];
        let net = PolicyNet::agents(&mask, &[4, 3], 1.0, true, &mut rng).unwrap();
        let g = net.partial_gradients(&DVector::from_vec(vec![0.3, -0.2, 0.5]));
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(1, 0)], 0.0);
        assert_eq!(g[(1, 2)], 0.0);
        assert!(net.forward(&DVector::zeros(3)).norm() == 0.0);
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = PolicyNet::dense(&[3, 5, 2], 1.0, false, &mut rng).unwrap();
        let p = net.params();
        let q = &p * 2.0;
        net.set_params(&q).unwrap();
        assert_eq!(net.params(), q);
    }
}
