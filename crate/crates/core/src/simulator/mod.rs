//! Closed-loop simulation: fixed-step RK4 with zero-order-hold control,
//! excitation signals, empirical L2 gains and the bundled benchmarks.

mod benchmarks;

pub use benchmarks::{
    build_flight, build_power, nominal_sign_pattern, Benchmark, IqcChoice, PowerNetwork, FLIGHT_PARAMS,
};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::system_model::{LtiSystem, NonlinearBlock};

/// States with `‖x‖∞` above this are treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
/// Default integration step (s).
pub const DEFAULT_STEP: f64 = 1e-3;

/// A static output-feedback controller `u = π(y)`.
pub trait Controller: Sync {
    fn act(&self, y: &DVector<f64>) -> DVector<f64>;
}

/// `u = K y`.
#[derive(Clone, Debug)]
pub struct LinearController {
    pub k: DMatrix<f64>,
}

impl Controller for LinearController {
    fn act(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.k * y
    }
}

/// `u ≡ 0`.
#[derive(Clone, Debug)]
pub struct ZeroController {
    pub n_a: usize,
}

impl Controller for ZeroController {
    fn act(&self, _y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.n_a)
    }
}

/// Adapter for closures.
pub struct FnController<F>(pub F);

impl<F> Controller for FnController<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    fn act(&self, y: &DVector<f64>) -> DVector<f64> {
        (self.0)(y)
    }
}

/// Plant dynamics `ẋ = Ax + Bu + g(x)`, `y = Cx`.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub plant: LtiSystem,
    pub residuals: NonlinearBlock,
}

impl Dynamics {
    pub fn new(plant: LtiSystem, residuals: NonlinearBlock) -> Result<Self> {
        if residuals.n_s != plant.n_s() {
            return Err(dim_err("residual block and plant disagree on n_s"));
        }
        Ok(Self { plant, residuals })
    }

    pub fn linear(plant: LtiSystem) -> Self {
        let n = plant.n_s();
        Self {
            plant,
            residuals: NonlinearBlock::empty(n),
        }
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut dx = &self.plant.a * x + &self.plant.b * u;
        if self.residuals.n_v() > 0 {
            dx += self.residuals.g(x);
        }
        dx
    }
}

/// Quadratic stage cost `xᵀQx + uᵀRu`.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }
}

/// A sampled signal on the uniform grid `t_k = k·h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub h: f64,
    pub samples: Vec<DVector<f64>>,
}

impl Signal {
    pub fn zeros(dim: usize, n: usize, h: f64) -> Self {
        Self {
            h,
            samples: vec![DVector::zeros(dim); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    /// Sample `k`, zero beyond the end.
    pub fn at(&self, k: usize, dim: usize) -> DVector<f64> {
        self.samples.get(k).cloned().unwrap_or_else(|| DVector::zeros(dim))
    }

    /// Trapezoidal `∫|s|² dt`.
    pub fn energy(&self) -> f64 {
        trapezoid_energy(&self.samples, self.h)
    }

    /// Signal scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            h: self.h,
            samples: self.samples.iter().map(|v| v * s).collect(),
        }
    }
}

/// Trapezoidal energy `∫|v(t)|² dt` of uniformly sampled vectors.
pub fn trapezoid_energy(samples: &[DVector<f64>], h: f64) -> f64 {
    let vals: Vec<f64> = samples.iter().map(|v| v.norm_squared()).collect();
    trapezoid(&vals, h)
}

/// Trapezoidal integral of uniformly sampled scalars.
pub fn trapezoid(vals: &[f64], h: f64) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    let inner: f64 = vals[1..vals.len() - 1].iter().sum();
    h * (inner + 0.5 * (vals[0] + vals[vals.len() - 1]))
}

/// Gaussian white noise passed through the first-order low-pass
/// `ṡ = ω_c (w − s)`, active on `[0, active)` and zero afterwards.
///
/// `std` is the standard deviation of the driving noise samples; the
/// output is deterministic for a given seed.
pub fn lowpass_noise(dim: usize, n: usize, h: f64, cutoff: f64, std: f64, active: f64, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = DVector::zeros(dim);
    let a = (-cutoff * h).exp();
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        if (k as f64) * h < active {
            samples.push(s.clone());
            let w = DVector::from_fn(dim, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std * z
            });
            s = &s * a + w * (1.0 - a);
        } else {
            samples.push(DVector::zeros(dim));
        }
    }
    Signal { h, samples }
}

/// Gaussian vector with independent `N(0, std²)` entries, seeded.
pub fn random_state(dim: usize, std: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        std * z
    })
}

/// `amplitude · sin(ω t)` on one channel for `t < active`.
pub fn sinusoid(dim: usize, channel: usize, n: usize, h: f64, omega: f64, amplitude: f64, active: f64) -> Signal {
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * h;
            let mut v = DVector::zeros(dim);
            if t < active && channel < dim {
                v[channel] = amplitude * (omega * t).sin();
            }
            v
        })
        .collect();
    Signal { h, samples }
}

/// A closed-loop sample path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Applied inputs `u_k = π(y_k) + e_k`.
    pub actions: Vec<DVector<f64>>,
    pub exploration: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
    pub diverged: bool,
    /// False if a residual argument ever left its validity domain.
    pub in_domain: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Trapezoidal `∫|y|² dt`.
    pub fn output_energy(&self) -> f64 {
        trapezoid_energy(&self.outputs, self.h)
    }

    /// Trapezoidal `∫|e|² dt`.
    pub fn exploration_energy(&self) -> f64 {
        trapezoid_energy(&self.exploration, self.h)
    }

    /// Trapezoidal integral of the stage cost.
    pub fn total_cost(&self) -> f64 {
        trapezoid(&self.costs, self.h)
    }
}

/// One classical RK4 step with the input held constant.
pub fn rk4_step(dynamics: &Dynamics, x: &DVector<f64>, u: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = dynamics.rhs(x, u);
    let k2 = dynamics.rhs(&(x + &k1 * (h / 2.0)), u);
    let k3 = dynamics.rhs(&(x + &k2 * (h / 2.0)), u);
    let k4 = dynamics.rhs(&(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Non-finite or beyond [`DIVERGENCE_THRESHOLD`] in the ∞-norm.
pub fn is_divergent(x: &DVector<f64>) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD)
}

/// Integrates the closed loop with classical RK4 and zero-order-hold
/// control `u_k = π(y_k) + e_k` over `[0, horizon]`.
pub fn integrate(
    dynamics: &Dynamics,
    controller: &dyn Controller,
    exploration: &Signal,
    x0: &DVector<f64>,
    horizon: f64,
    h: f64,
    cost: Option<&QuadraticCost>,
) -> Result<Trajectory> {
    if !(h > 0.0 && h.is_finite()) || !(horizon >= 0.0) {
        return Err(invalid("step must be positive and horizon non-negative"));
    }
    let n_s = dynamics.plant.n_s();
    let n_a = dynamics.plant.n_a();
    if x0.len() != n_s {
        return Err(dim_err("initial state has the wrong dimension"));
    }
    if exploration.dim() != 0 && exploration.dim() != n_a {
        return Err(dim_err("exploration signal must have n_a channels"));
    }
    let steps = (horizon / h).round() as usize;
    let mut traj = Trajectory {
        h,
        in_domain: true,
        ..Default::default()
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        let y = &dynamics.plant.c * &x;
        let e = exploration.at(k, n_a);
        let pi = controller.act(&y);
        if pi.len() != n_a {
            return Err(dim_err("controller output has the wrong dimension"));
        }
        let u = pi + &e;
        traj.in_domain &= dynamics.residuals.in_domain(&x);
        traj.times.push(k as f64 * h);
        if let Some(c) = cost {
            traj.costs.push(c.eval(&x, &u));
        }
        traj.outputs.push(y);
        traj.exploration.push(e);
        traj.actions.push(u.clone());
        traj.states.push(x.clone());
        if k == steps {
            break;
        }
        x = rk4_step(dynamics, &x, &u, h);
        if is_divergent(&x) {
            traj.diverged = true;
            break;
        }
    }
    Ok(traj)
}

/// Empirical gain estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    /// Largest ratio `‖y‖₂ / ‖e‖₂` observed.
    pub gain: f64,
    /// Ratio per accepted excitation.
    pub ratios: Vec<f64>,
    /// Excitations skipped for zero energy.
    pub skipped: usize,
    /// Any rollout diverged.
    pub diverged: bool,
    /// Every rollout kept the residual arguments inside their domains.
    pub in_domain: bool,
}

/// Largest `‖y‖₂/‖e‖₂` over the excitations from `x0 = 0`.
///
/// Zero-energy excitations are skipped with a warning; if none remain the
/// call fails.
pub fn empirical_l2_gain(
    dynamics: &Dynamics,
    controller: &dyn Controller,
    excitations: &[Signal],
    horizon: f64,
) -> Result<GainEstimate> {
    let x0 = DVector::zeros(dynamics.plant.n_s());
    let mut ratios = Vec::new();
    let mut skipped = 0;
    let mut diverged = false;
    let mut in_domain = true;
    for e in excitations {
        let traj = integrate(dynamics, controller, e, &x0, horizon, e.h, None)?;
        let ee = traj.exploration_energy();
        if !(ee > 0.0) {
            warn!("skipping zero-energy excitation");
            skipped += 1;
            continue;
        }
        diverged |= traj.diverged;
        in_domain &= traj.in_domain;
        let ratio = if traj.diverged {
            f64::INFINITY
        } else {
            (traj.output_energy() / ee).sqrt()
        };
        ratios.push(ratio);
    }
    if ratios.is_empty() {
        return Err(invalid("all excitations have zero energy"));
    }
    Ok(GainEstimate {
        gain: ratios.iter().copied().fold(0.0, f64::max),
        ratios,
        skipped,
        diverged,
        in_domain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_of_linear_ramp() {
        let v: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        assert!((trapezoid(&v, 0.1) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn lowpass_noise_is_deterministic_and_windowed() {
        let a = lowpass_noise(2, 100, 0.01, 5.0, 1.0, 0.5, 3);
        let b = lowpass_noise(2, 100, 0.01, 5.0, 1.0, 0.5, 3);
        assert_eq!(a, b);
        assert!(a.samples[60].iter().all(|v| *v == 0.0));
        assert!(a.energy() > 0.0);
    }
}
