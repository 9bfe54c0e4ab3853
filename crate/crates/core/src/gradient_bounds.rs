//! The controller uncertainty set of gradient-bounded policies, its quadratic
//! constraint matrix, and the constructive sector decomposition.
//!
//! A policy `π : R^{n_s} → R^{n_a}` belongs to the set when every partial
//! derivative satisfies `ξ_lower[i,j] ≤ ∂_j π_i ≤ ξ_upper[i,j]`. Writing
//! `c = (ξ_lower + ξ_upper)/2`, `c̄ = ξ_upper − c`, the increments
//! `q_ij` of the decomposition `π_i(x) − π_i(y) = Σ_j q_ij` obey
//!
//! ```text
//!   φ_ij = (c̄²_ij − c²_ij)Δ_j² + 2 c_ij q_ij Δ_j − q_ij² ≥ 0,   Δ = x − y.
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::system_model::selection_matrix;

/// Default tolerance of the pointwise sector checks.
pub const POINTWISE_TOL: f64 = 1e-10;

/// Per-entry partial-derivative bounds (n_a × n_s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoundSet {
    #[serde(with = "crate::config::rows")]
    pub xi_lower: DMatrix<f64>,
    #[serde(with = "crate::config::rows")]
    pub xi_upper: DMatrix<f64>,
}

/// Sign observed for one gradient entry, used for one-sided bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignClass {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-", alias = "−")]
    Negative,
    #[serde(rename = "±", alias = "+-")]
    Mixed,
    #[serde(rename = "0")]
    Zero,
}

impl GradientBoundSet {
    pub fn new(xi_lower: DMatrix<f64>, xi_upper: DMatrix<f64>) -> Result<Self> {
        if xi_lower.shape() != xi_upper.shape() {
            return Err(dim_err("lower and upper bound matrices differ in shape"));
        }
        if xi_lower.iter().chain(xi_upper.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("gradient bounds must be finite"));
        }
        if xi_lower.iter().zip(xi_upper.iter()).any(|(l, u)| l > u) {
            return Err(invalid("gradient bounds require ξ_lower ≤ ξ_upper"));
        }
        Ok(Self { xi_lower, xi_upper })
    }

    /// Uniform bounds `[-l, l]` on every entry.
    pub fn uniform(n_a: usize, n_s: usize, l: f64) -> Result<Self> {
        if !(l >= 0.0) {
            return Err(invalid("Lipschitz level must be non-negative"));
        }
        Self::new(DMatrix::from_element(n_a, n_s, -l), DMatrix::from_element(n_a, n_s, l))
    }

    /// Uniform bounds `[-l, l]` on entries where `mask` is true, zero elsewhere.
    pub fn masked(mask: &[Vec<bool>], n_s: usize, l: f64) -> Result<Self> {
        let pattern: Vec<Vec<SignClass>> = mask
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&m| if m { SignClass::Mixed } else { SignClass::Zero })
                    .collect()
            })
            .collect();
        Self::from_pattern(&pattern, n_s, l, 0.0)
    }

    /// Bounds from a sign pattern: `+` → `[-εl, l]`, `−` → `[-l, εl]`,
    /// `±` → `[-l, l]`, `0` → `[0, 0]`.
    pub fn from_pattern(pattern: &[Vec<SignClass>], n_s: usize, l: f64, eps: f64) -> Result<Self> {
        if !(l >= 0.0) || !(0.0..1.0).contains(&eps) {
            return Err(invalid("pattern bounds need l ≥ 0 and ε ∈ [0, 1)"));
        }
        let n_a = pattern.len();
        if pattern.iter().any(|r| r.len() != n_s) {
            return Err(dim_err(format!("sign pattern rows must have {n_s} entries")));
        }
        let mut lo = DMatrix::zeros(n_a, n_s);
        let mut hi = DMatrix::zeros(n_a, n_s);
        for i in 0..n_a {
            for j in 0..n_s {
                let (a, b) = match pattern[i][j] {
                    SignClass::Positive => (-eps * l, l),
                    SignClass::Negative => (-l, eps * l),
                    SignClass::Mixed => (-l, l),
                    SignClass::Zero => (0.0, 0.0),
                };
                lo[(i, j)] = a;
                hi[(i, j)] = b;
            }
        }
        Self::new(lo, hi)
    }

    pub fn n_a(&self) -> usize {
        self.xi_lower.nrows()
    }

    pub fn n_s(&self) -> usize {
        self.xi_lower.ncols()
    }

    /// Midpoints `c`.
    pub fn c(&self) -> DMatrix<f64> {
        (&self.xi_lower + &self.xi_upper) * 0.5
    }

    /// Radii `c̄ = ξ_upper − c`.
    pub fn c_bar(&self) -> DMatrix<f64> {
        &self.xi_upper - self.c()
    }

    /// True when entry `(i, j)` is structurally zero (agent i ignores j).
    pub fn is_zero_entry(&self, i: usize, j: usize) -> bool {
        self.xi_lower[(i, j)] == 0.0 && self.xi_upper[(i, j)] == 0.0
    }

    /// Bounds scaled by `s ≥ 0`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            xi_lower: &self.xi_lower * s,
            xi_upper: &self.xi_upper * s,
        }
    }

    /// Elementwise containment `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.xi_lower.shape() == other.xi_lower.shape()
            && self
                .xi_lower
                .iter()
                .zip(other.xi_lower.iter())
                .all(|(a, b)| a >= b)
            && self
                .xi_upper
                .iter()
                .zip(other.xi_upper.iter())
                .all(|(a, b)| a <= b)
    }

    /// Largest absolute bound over all entries.
    pub fn max_abs(&self) -> f64 {
        self.xi_lower
            .iter()
            .chain(self.xi_upper.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Non-negative S-procedure multipliers, one per gradient entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    #[serde(with = "crate::config::rows")]
    pub lambda: DMatrix<f64>,
}

impl MultiplierSet {
    pub fn new(lambda: DMatrix<f64>) -> Result<Self> {
        if lambda.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("multipliers must be finite and non-negative"));
        }
        Ok(Self { lambda })
    }

    pub fn uniform(n_a: usize, n_s: usize, value: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(n_a, n_s, value))
    }
}

/// The quadratic constraint on `[Δ; q]` with `q` ordered agent-major
/// (`q = [q_11 … q_1n_s, q_21 …]`), and the selection `W` with `w = Wq`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadConstraint {
    pub m: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

/// Index of `q_ij` inside the stacked decomposition vector.
pub fn q_index(n_s: usize, i: usize, j: usize) -> usize {
    i * n_s + j
}

/// Builds the constraint matrix `M(λ; ξ)`.
pub fn build_m(bounds: &GradientBoundSet, mult: &MultiplierSet) -> Result<QuadConstraint> {
    let (n_a, n_s) = (bounds.n_a(), bounds.n_s());
    if mult.lambda.shape() != (n_a, n_s) {
        return Err(dim_err("multiplier and bound shapes differ"));
    }
    if mult.lambda.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(invalid("multipliers must be non-negative"));
    }
    let c = bounds.c();
    let cb = bounds.c_bar();
    let dim = n_s + n_a * n_s;
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..n_a {
        for j in 0..n_s {
            let lam = mult.lambda[(i, j)];
            let k = n_s + q_index(n_s, i, j);
            m[(j, j)] += lam * (cb[(i, j)].powi(2) - c[(i, j)].powi(2));
            m[(j, k)] = lam * c[(i, j)];
            m[(k, j)] = lam * c[(i, j)];
            m[(k, k)] = -lam;
        }
    }
    Ok(QuadConstraint {
        m,
        w: selection_matrix(n_a, n_s),
    })
}

/// Individual terms `φ_ij(Δ, q)` (n_a × n_s); `q` is given as an n_a × n_s matrix.
pub fn phi_terms(bounds: &GradientBoundSet, delta: &DVector<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let c = bounds.c();
    let cb = bounds.c_bar();
    DMatrix::from_fn(bounds.n_a(), bounds.n_s(), |i, j| {
        let (d, qq) = (delta[j], q[(i, j)]);
        (cb[(i, j)].powi(2) - c[(i, j)].powi(2)) * d * d + 2.0 * c[(i, j)] * qq * d - qq * qq
    })
}

/// The multiplier-weighted sum `Σ λ_ij φ_ij(Δ, q)`.
pub fn scalar_form(
    bounds: &GradientBoundSet,
    mult: &MultiplierSet,
    delta: &DVector<f64>,
    q: &DMatrix<f64>,
) -> f64 {
    phi_terms(bounds, delta, q).component_mul(&mult.lambda).sum()
}

/// Increments of `f` along the coordinate path from `from` to `to`:
/// `q_ij = f_i(h_j) − f_i(h_{j−1})` with hybrid points
/// `h_j = (to_1, …, to_j, from_{j+1}, …)`.
pub fn hybrid_increments<F>(f: &F, to: &DVector<f64>, from: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    let n = to.len();
    let mut h = from.clone();
    let mut prev = f(&h);
    let mut q = DMatrix::zeros(prev.len(), n);
    for j in 0..n {
        if to[j] == from[j] {
            continue;
        }
        h[j] = to[j];
        let cur = f(&h);
        for i in 0..prev.len() {
            q[(i, j)] = cur[i] - prev[i];
        }
        prev = cur;
    }
    q
}

/// Sampling verifier of the pointwise quadratic constraint for the pair
/// `(x, y)`; true iff every term `φ_ij ≥ −tol`.
pub fn check_pointwise<F>(
    bounds: &GradientBoundSet,
    f: &F,
    x: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
) -> bool
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    let q = hybrid_increments(f, x, y);
    if q.shape() != (bounds.n_a(), bounds.n_s()) {
        return false;
    }
    let delta = x - y;
    phi_terms(bounds, &delta, &q).iter().all(|v| *v >= -tol)
}

/// Constructive decomposition `π_i(y) − π_i(0) = Σ_j q_ij` along hybrid
/// vectors from the origin.
pub fn decompose_sector<F>(pi: &F, bounds: &GradientBoundSet, y: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    if y.len() != bounds.n_s() {
        return Err(dim_err("point dimension differs from n_s"));
    }
    let q = hybrid_increments(pi, y, &DVector::zeros(y.len()));
    if q.nrows() != bounds.n_a() {
        return Err(dim_err("policy output dimension differs from n_a"));
    }
    Ok(q)
}

/// True iff `(x, q)` satisfies every sector constraint `φ_ij(x, q) ≥ −tol`.
pub fn membership_s(bounds: &GradientBoundSet, x: &DVector<f64>, q: &DMatrix<f64>, tol: f64) -> bool {
    if x.len() != bounds.n_s() || q.shape() != (bounds.n_a(), bounds.n_s()) {
        return false;
    }
    phi_terms(bounds, x, q).iter().all(|v| *v >= -tol)
}
