//! Plants, nonlinear residual blocks and the augmented interconnection.
//!
//! The certified loop is
//!
//! ```text
//!   ẋ = A x + B (π(y) + e) + E v,     y = x,     v = φ(S x)
//! ```
//!
//! where `A` already contains any nominal state feedback, `π` is the
//! gradient-bounded controller under certification, `e` the exogenous
//! (exploration) input, and `v` collects scalar slope-restricted residual
//! nonlinearities of selected state combinations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::iqc_blocks::IqcBlock;
use crate::linalg;

/// Margin applied to eigenvalue real parts by [`is_hurwitz`].
pub const EPS_HURWITZ: f64 = 1e-9;

/// Returns true iff every eigenvalue of `a` has real part below `-EPS_HURWITZ`.
pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool> {
    is_hurwitz_with(a, EPS_HURWITZ)
}

/// [`is_hurwitz`] with an explicit margin.
pub fn is_hurwitz_with(a: &DMatrix<f64>, eps: f64) -> Result<bool> {
    Ok(linalg::spectral_abscissa(a)? < -eps)
}

/// Linear time-invariant plant `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    #[serde(with = "crate::config::rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::config::rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::config::rows")]
    pub c: DMatrix<f64>,
}

impl LtiSystem {
    /// Builds a plant; `c` defaults to the identity.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: Option<DMatrix<f64>>) -> Result<Self> {
        linalg::ensure_square(&a, "A")?;
        let n = a.nrows();
        if n == 0 {
            return Err(invalid("plant must have at least one state"));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_err(format!(
                "B must be {n}×n_a with n_a ≥ 1, got {}×{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let c = c.unwrap_or_else(|| DMatrix::identity(n, n));
        if c.ncols() != n {
            return Err(dim_err(format!("C must have {n} columns, got {}", c.ncols())));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C")] {
            linalg::ensure_finite(m, name)?;
        }
        Ok(Self { a, b, c })
    }

    pub fn n_s(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_a(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_o(&self) -> usize {
        self.c.nrows()
    }

    /// Errors with [`Error::NotHurwitz`] unless `A` is Hurwitz.
    pub fn require_hurwitz(&self) -> Result<()> {
        let abscissa = linalg::spectral_abscissa(&self.a)?;
        if abscissa < -EPS_HURWITZ {
            Ok(())
        } else {
            Err(Error::NotHurwitz(abscissa))
        }
    }

    /// Plant with the static feedback `u = Kx + u'` closed around it.
    pub fn with_feedback(&self, k: &DMatrix<f64>) -> Result<Self> {
        if k.shape() != (self.n_a(), self.n_s()) {
            return Err(dim_err("feedback gain must be n_a×n_s"));
        }
        Self::new(&self.a + &self.b * k, self.b.clone(), Some(self.c.clone()))
    }
}

/// Tag of a scalar residual nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    /// `φ(s) = sin s − s`
    SinMinusIdentity,
    /// `φ(s) = s − sin s`
    IdentityMinusSin,
}

impl ResidualKind {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            ResidualKind::SinMinusIdentity => s.sin() - s,
            ResidualKind::IdentityMinusSin => s - s.sin(),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            ResidualKind::SinMinusIdentity => s.cos() - 1.0,
            ResidualKind::IdentityMinusSin => 1.0 - s.cos(),
        }
    }

    /// Exact slope interval over the symmetric domain `[-r, r]`, `0 ≤ r ≤ π`.
    pub fn slope_sector(self, r: f64) -> (f64, f64) {
        let c = r.min(std::f64::consts::PI).cos();
        match self {
            ResidualKind::SinMinusIdentity => (c - 1.0, 0.0),
            ResidualKind::IdentityMinusSin => (0.0, 1.0 - c),
        }
    }
}

/// One scalar channel `v = φ(sᵀx)` entering the dynamics as `ẋ += input · v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualChannel {
    pub kind: ResidualKind,
    /// Row vector `s` selecting the argument `sᵀx`.
    pub argument: Vec<f64>,
    /// Column through which the residual enters `ẋ`.
    pub input: Vec<f64>,
    /// Half-width `r` of the validity interval `[-r, r]` of the argument.
    pub domain: f64,
}

impl ResidualChannel {
    pub fn slope_sector(&self) -> (f64, f64) {
        self.kind.slope_sector(self.domain)
    }
}

/// Collection of residual channels acting on an `n_s`-state plant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NonlinearBlock {
    pub n_s: usize,
    pub channels: Vec<ResidualChannel>,
}

impl NonlinearBlock {
    pub fn new(n_s: usize, channels: Vec<ResidualChannel>) -> Result<Self> {
        for (k, ch) in channels.iter().enumerate() {
            if ch.argument.len() != n_s || ch.input.len() != n_s {
                return Err(dim_err(format!("residual channel {k} must act on {n_s} states")));
            }
            if !(ch.domain > 0.0 && ch.domain <= std::f64::consts::PI) {
                return Err(invalid(format!("residual channel {k} domain must lie in (0, π]")));
            }
            if ch.argument.iter().chain(&ch.input).any(|v| !v.is_finite()) {
                return Err(invalid(format!("residual channel {k} has non-finite data")));
            }
        }
        Ok(Self { n_s, channels })
    }

    /// Block with no channels (linear plant).
    pub fn empty(n_s: usize) -> Self {
        Self { n_s, channels: Vec::new() }
    }

    pub fn n_v(&self) -> usize {
        self.channels.len()
    }

    /// Argument selector `S` (n_v × n_s).
    pub fn selector(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_v(), self.n_s, |k, j| self.channels[k].argument[j])
    }

    /// Input map `E` (n_s × n_v).
    pub fn input_map(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_s, self.n_v(), |i, k| self.channels[k].input[i])
    }

    /// Channel arguments `Sx`.
    pub fn arguments(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_v(), |k, _| {
            self.channels[k]
                .argument
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    /// Channel outputs `v = φ(Sx)`.
    pub fn outputs(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = self.arguments(x);
        DVector::from_fn(self.n_v(), |k, _| self.channels[k].kind.eval(s[k]))
    }

    /// The residual vector field `g(x) = E φ(Sx)`.
    pub fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = self.outputs(x);
        let mut out = DVector::zeros(self.n_s);
        for (k, ch) in self.channels.iter().enumerate() {
            for i in 0..self.n_s {
                out[i] += ch.input[i] * v[k];
            }
        }
        out
    }

    /// Per-channel slope intervals.
    pub fn slope_sectors(&self) -> Vec<(f64, f64)> {
        self.channels.iter().map(|c| c.slope_sector()).collect()
    }

    /// True while every channel argument stays inside its validity domain.
    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        let s = self.arguments(x);
        self.channels
            .iter()
            .zip(s.iter())
            .all(|(c, v)| v.abs() <= c.domain)
    }
}

/// Controller-input selection matrix `W = I_{n_a} ⊗ 1_{1×n_s}`.
pub fn selection_matrix(n_a: usize, n_s: usize) -> DMatrix<f64> {
    linalg::kron(&DMatrix::identity(n_a, n_a), &DMatrix::from_element(1, n_s, 1.0))
}

/// Plant augmented with the IQC filter states.
///
/// State `x = [x_G; ψ]`; inputs `q` (controller decomposition), `v`
/// (residual outputs) and `e` (exogenous); IQC output `z = C̄x + D_v v`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSystem {
    pub n_s: usize,
    pub n_psi: usize,
    pub a_bar: DMatrix<f64>,
    pub b_bar_e: DMatrix<f64>,
    pub b_bar_q: DMatrix<f64>,
    pub b_bar_v: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub d_psi_v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl AugmentedSystem {
    pub fn n_x(&self) -> usize {
        self.n_s + self.n_psi
    }

    pub fn n_a(&self) -> usize {
        self.b_bar_e.ncols()
    }

    pub fn n_v(&self) -> usize {
        self.b_bar_v.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.c_bar.nrows()
    }
}

/// Combines the plant, its residual block and an IQC filter covering every
/// residual channel into the augmented system.
///
/// The filter is driven by the channel arguments `Sx_G` and outputs `v`.
pub fn augment(
    plant: &LtiSystem,
    residuals: &NonlinearBlock,
    filter: &IqcBlock,
) -> Result<AugmentedSystem> {
    let n_s = plant.n_s();
    let n_a = plant.n_a();
    if residuals.n_s != n_s {
        return Err(dim_err("residual block and plant disagree on n_s"));
    }
    let n_v = residuals.n_v();
    let mut covered = vec![false; n_v];
    for &c in &filter.channels {
        if c >= n_v {
            return Err(dim_err(format!("filter references channel {c} but only {n_v} exist")));
        }
        covered[c] = true;
    }
    if covered.iter().any(|c| !c) {
        return Err(invalid("every residual channel must be covered by the IQC filter"));
    }
    let n_psi = filter.n_psi();
    let n_x = n_s + n_psi;
    let n_z = filter.n_z();
    let sel = residuals.selector();
    let e_map = residuals.input_map();
    // Scatter the filter's channel-ordered inputs onto the global channel order.
    let scatter = DMatrix::from_fn(filter.channels.len(), n_v, |r, k| {
        if filter.channels[r] == k {
            1.0
        } else {
            0.0
        }
    });
    let s_filter = &scatter * &sel; // filter y-input as a function of x_G

    let w = selection_matrix(n_a, n_s);
    let mut a_bar = DMatrix::zeros(n_x, n_x);
    a_bar.view_mut((0, 0), (n_s, n_s)).copy_from(&plant.a);
    if n_psi > 0 {
        a_bar
            .view_mut((n_s, 0), (n_psi, n_s))
            .copy_from(&(&filter.b_psi_y * &s_filter));
        a_bar.view_mut((n_s, n_s), (n_psi, n_psi)).copy_from(&filter.a_psi);
    }
    let mut b_bar_e = DMatrix::zeros(n_x, n_a);
    b_bar_e.view_mut((0, 0), (n_s, n_a)).copy_from(&plant.b);
    let mut b_bar_q = DMatrix::zeros(n_x, n_a * n_s);
    b_bar_q
        .view_mut((0, 0), (n_s, n_a * n_s))
        .copy_from(&(&plant.b * &w));
    let mut b_bar_v = DMatrix::zeros(n_x, n_v);
    b_bar_v.view_mut((0, 0), (n_s, n_v)).copy_from(&e_map);
    if n_psi > 0 {
        b_bar_v
            .view_mut((n_s, 0), (n_psi, n_v))
            .copy_from(&(&filter.b_psi_v * &scatter));
    }
    let mut c_bar = DMatrix::zeros(n_z, n_x);
    c_bar
        .view_mut((0, 0), (n_z, n_s))
        .copy_from(&(&filter.d_psi_y * &s_filter));
    if n_psi > 0 {
        c_bar.view_mut((0, n_s), (n_z, n_psi)).copy_from(&filter.c_psi);
    }
    let d_psi_v = &filter.d_psi_v * &scatter;
    Ok(AugmentedSystem {
        n_s,
        n_psi,
        a_bar,
        b_bar_e,
        b_bar_q,
        b_bar_v,
        c_bar,
        d_psi_v,
        w,
    })
}

/// How the nominal stabilising gain is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalMethod {
    /// Infinite-horizon LQR with state weight `q` and input weight `r`.
    Lqr {
        #[serde(with = "crate::config::rows")]
        q: DMatrix<f64>,
        #[serde(with = "crate::config::rows")]
        r: DMatrix<f64>,
    },
    /// A user-supplied gain, returned after a stability check.
    Given(#[serde(with = "crate::config::rows")] DMatrix<f64>),
}

/// Nominal gain `K_n` with `A + B K_n` Hurwitz.
pub fn nominal_controller(plant: &LtiSystem, method: &NominalMethod) -> Result<DMatrix<f64>> {
    let k = match method {
        NominalMethod::Given(k) => {
            if k.shape() != (plant.n_a(), plant.n_s()) {
                return Err(dim_err("given gain must be n_a×n_s"));
            }
            k.clone()
        }
        NominalMethod::Lqr { q, r } => {
            let x = linalg::care(&plant.a, &plant.b, q, r).map_err(|e| match e {
                Error::Numerical(msg) => Error::CertificationImpossible(format!(
                    "no stabilising Riccati solution (pair likely unstabilizable): {msg}"
                )),
                other => other,
            })?;
            let rinv = r
                .clone()
                .cholesky()
                .ok_or_else(|| invalid("R must be positive definite"))?
                .inverse();
            -(rinv * plant.b.transpose() * x)
        }
    };
    let abscissa = linalg::spectral_abscissa(&(&plant.a + &plant.b * &k))?;
    if abscissa < -EPS_HURWITZ {
        Ok(k)
    } else {
        Err(Error::CertificationImpossible(format!(
            "nominal gain does not stabilise the plant (abscissa {abscissa:.3e})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hurwitz_examples() {
        assert!(is_hurwitz(&DMatrix::from_element(1, 1, -1.0)).unwrap());
        let di = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(!is_hurwitz(&di).unwrap());
        assert!(is_hurwitz(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn scalar_lqr_gain() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let plant = LtiSystem::new(DMatrix::zeros(1, 1), one.clone(), None).unwrap();
        let k = nominal_controller(&plant, &NominalMethod::Lqr { q: one.clone(), r: one }).unwrap();
        assert!((k[(0, 0)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_sectors() {
        let (lo, hi) = ResidualKind::SinMinusIdentity.slope_sector(std::f64::consts::FRAC_PI_2);
        assert!((lo + 1.0).abs() < 1e-15 && hi == 0.0);
        let (lo, hi) = ResidualKind::IdentityMinusSin.slope_sector(std::f64::consts::FRAC_PI_3);
        assert!(lo == 0.0 && (hi - 0.5).abs() < 1e-15);
    }
}
