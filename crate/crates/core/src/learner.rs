//! On-policy policy-gradient training with a trust region, natural
//! gradient, smoothness penalties and per-iteration gradient regulation.
//!
//! The weighted objective maximised at every iteration is
//!
//! ```text
//!   J(θ) = L_surr(θ) − w₁ L_explore(θ) − w₂ L_smooth(θ)
//! ```
//!
//! with the importance-weighted surrogate `L_surr = Σ_t ρ_t Λ̂_t`, the
//! exploration-consistency penalty `L_explore = Σ_t ‖u_{t−1} − π(x_t)‖²`
//! and the smoothness penalty `L_smooth = Σ_t ‖∂π/∂x(x_t)‖²_F`.

use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::policy::{GradientMonitor, PolicyNet};
use crate::simulator::{is_divergent, rk4_step, Benchmark};

/// How the learner keeps the policy inside the certified set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regulation {
    /// No regulation and no smoothness penalty.
    None,
    /// Smoothness penalty whose weight adapts to bound violations.
    SoftPenalty,
    /// Projection of the weights onto the certified Lipschitz level.
    HardThreshold,
}

impl FromStr for Regulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "soft" | "soft_penalty" => Ok(Self::SoftPenalty),
            "ht" | "hard_threshold" => Ok(Self::HardThreshold),
            other => Err(invalid(format!("unknown regulation mode '{other}'"))),
        }
    }
}

/// Which gradient the smoothness penalty measures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothVariant {
    /// `‖∂π/∂x‖²_F` at visited states.
    #[default]
    InputGradient,
    /// `‖∂π/∂θ‖²_F` at visited states.
    ParameterGradient,
}

/// Training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Discount `ρ ∈ (0, 1]` per decision step.
    pub discount: f64,
    /// Episode length (s).
    pub horizon: f64,
    /// Integration step (s).
    pub h: f64,
    /// Integration steps per decision (the policy is held in between).
    pub control_every: usize,
    /// Rollouts per iteration.
    pub batch: usize,
    pub iterations: usize,
    /// Penalty weights; `None` calibrates them at the first iteration.
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    /// Target penalty share of `Σ|Λ̂|` used by the calibration.
    pub penalty_fraction: f64,
    /// Certified Lipschitz level `l°`.
    pub l_cert: f64,
    pub delta_kl: f64,
    pub sigma0: f64,
    pub sigma_decay: f64,
    pub sigma_floor: f64,
    pub seed: u64,
    pub mode: Regulation,
    pub smooth_variant: SmoothVariant,
    /// Hidden widths of each agent's tower.
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    /// Standard deviation of the initial state entries.
    pub x0_std: f64,
    pub reward_scale: f64,
    /// States sampled per iteration for the Fisher matrix, KL and penalties.
    pub fisher_samples: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub damping: f64,
    pub max_backtracks: usize,
    pub checkpoint_every: usize,
    pub monitor_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            horizon: 20.0,
            h: 1e-3,
            control_every: 10,
            batch: 4,
            iterations: 100,
            w1: None,
            w2: None,
            penalty_fraction: 0.03,
            l_cert: 1.0,
            delta_kl: 0.01,
            sigma0: 0.3,
            sigma_decay: 0.995,
            sigma_floor: 0.02,
            seed: 0,
            mode: Regulation::HardThreshold,
            smooth_variant: SmoothVariant::InputGradient,
            hidden: vec![8],
            init_scale: 0.5,
            x0_std: 0.1,
            reward_scale: 1.0,
            fisher_samples: 256,
            cg_iters: 20,
            cg_tol: 1e-10,
            damping: 1e-3,
            max_backtracks: 10,
            checkpoint_every: 50,
            monitor_window: GradientMonitor::DEFAULT_WINDOW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(invalid("discount must lie in (0, 1]"));
        }
        if !pos(self.horizon) || !pos(self.h) || self.control_every == 0 || self.batch == 0 {
            return Err(invalid("horizon, step, control period and batch must be positive"));
        }
        if self.w1.is_some_and(|w| !(w >= 0.0)) || self.w2.is_some_and(|w| !(w >= 0.0)) {
            return Err(invalid("penalty weights must be non-negative"));
        }
        if !pos(self.l_cert) || !(self.delta_kl >= 0.0) {
            return Err(invalid("l_cert must be positive and delta_kl non-negative"));
        }
        if !pos(self.sigma0) || !pos(self.sigma_floor) || !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return Err(invalid("exploration schedule must be positive with decay in (0, 1]"));
        }
        if self.hidden.iter().any(|&w| w == 0) || self.fisher_samples == 0 {
            return Err(invalid("hidden widths and Fisher sample count must be positive"));
        }
        if !(self.x0_std >= 0.0 && self.penalty_fraction >= 0.0 && self.damping >= 0.0) {
            return Err(invalid("x0_std, penalty_fraction and damping must be non-negative"));
        }
        Ok(())
    }

    /// Exploration standard deviation at iteration `k`.
    pub fn sigma_at(&self, k: usize) -> f64 {
        (self.sigma0 * self.sigma_decay.powi(k as i32)).max(self.sigma_floor)
    }
}

/// One decision step of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub x: DVector<f64>,
    /// Applied action `u_t = μ_t + σ ε_t`.
    pub u: DVector<f64>,
    /// Previous applied action (zero at `t = 0`).
    pub u_prev: DVector<f64>,
    /// Log-density of `u_t` under the sampling policy.
    pub logprob: f64,
    pub reward: f64,
    /// Normalised time `t/T`.
    pub time: f64,
    pub first: bool,
}

/// A batch of on-policy rollouts with advantage estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub sigma: f64,
    pub steps: Vec<Step>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Undiscounted return of each trajectory.
    pub episode_rewards: Vec<f64>,
    pub diverged: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Gaussian log-density `log N(u; μ, σ² I)`.
pub fn gaussian_logprob(u: &DVector<f64>, mean: &DVector<f64>, sigma: f64) -> f64 {
    let n = u.len() as f64;
    -(u - mean).norm_squared() / (2.0 * sigma * sigma) - n * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Discounted reward-to-go per step, restarting at each `first` flag.
pub fn rewards_to_go(steps: &[Step], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; steps.len()];
    let mut acc = 0.0;
    for t in (0..steps.len()).rev() {
        let next_first = t + 1 == steps.len() || steps[t + 1].first;
        if next_first {
            acc = 0.0;
        }
        acc = steps[t].reward + discount * acc;
        out[t] = acc;
    }
    out
}

/// Least-squares linear baseline on features `[x; t/T; 1]`; returns the
/// advantages `G_t − V(x_t)`.
pub fn linear_baseline_advantages(steps: &[Step], returns: &[f64]) -> Vec<f64> {
    if steps.is_empty() {
        return Vec::new();
    }
    let n_s = steps[0].x.len();
    let n_f = n_s + 2;
    let phi = DMatrix::from_fn(steps.len(), n_f, |r, c| {
        if c < n_s {
            steps[r].x[c]
        } else if c == n_s {
            steps[r].time
        } else {
            1.0
        }
    });
    let g = DVector::from_column_slice(returns);
    let mut gram = phi.transpose() * &phi;
    let ridge = 1e-10 * (gram.trace() / n_f as f64).max(1e-300);
    for i in 0..n_f {
        gram[(i, i)] += ridge;
    }
    let rhs = phi.transpose() * &g;
    let w = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| gram.pseudo_inverse(1e-12).map(|p| p * &rhs).unwrap_or_else(|_| DVector::zeros(n_f)));
    (g - phi * w).iter().copied().collect()
}

/// Simulates `batch` rollouts of the Gaussian policy `N(π(x), σ²I)`.
pub fn collect_rollouts(
    bench: &Benchmark,
    net: &PolicyNet,
    cfg: &TrainConfig,
    sigma: f64,
    iteration: usize,
) -> Result<RolloutBatch> {
    if net.n_in() != bench.n_s() || net.n_out() != bench.n_a() {
        return Err(dim_err("policy shape does not match the benchmark"));
    }
    let dynamics = bench.dynamics();
    let n_dec = ((cfg.horizon / cfg.h).round() as usize / cfg.control_every).max(1);
    let dt = cfg.h * cfg.control_every as f64;
    let results: Vec<(Vec<Step>, bool)> = (0..cfg.batch)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((iteration * cfg.batch + r) as u64);
            let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
            let mut x = DVector::from_fn(bench.n_s(), |_, _| cfg.x0_std * normal(&mut rng));
            let mut u_prev = DVector::zeros(bench.n_a());
            let mut steps = Vec::with_capacity(n_dec);
            let mut diverged = false;
            for t in 0..n_dec {
                let mean = net.forward(&x);
                let u = &mean + DVector::from_fn(bench.n_a(), |_, _| sigma * normal(&mut rng));
                let cost = bench.cost.eval(&x, &u);
                let logprob = gaussian_logprob(&u, &mean, sigma);
                steps.push(Step {
                    x: x.clone(),
                    u: u.clone(),
                    u_prev: u_prev.clone(),
                    logprob,
                    reward: -cost * dt * cfg.reward_scale,
                    time: t as f64 / n_dec as f64,
                    first: t == 0,
                });
                for _ in 0..cfg.control_every {
                    x = rk4_step(&dynamics, &x, &u, cfg.h);
                }
                if is_divergent(&x) {
                    diverged = true;
                    break;
                }
                u_prev = u;
            }
            (steps, diverged)
        })
        .collect();
    let mut steps = Vec::new();
    let mut episode_rewards = Vec::new();
    let mut diverged = 0;
    for (s, d) in results {
        episode_rewards.push(s.iter().map(|st| st.reward).sum());
        diverged += d as usize;
        steps.extend(s);
    }
    let returns = rewards_to_go(&steps, cfg.discount);
    let advantages = linear_baseline_advantages(&steps, &returns);
    Ok(RolloutBatch {
        sigma,
        steps,
        advantages,
        returns,
        episode_rewards,
        diverged,
    })
}

/// `Σ_t π(u_t|x_t)/π_old(u_t|x_t) · Λ̂_t` with the batch's `σ`.
pub fn surrogate_loss(batch: &RolloutBatch, net: &PolicyNet) -> Result<f64> {
    if !(batch.sigma > 0.0 && batch.sigma.is_finite()) {
        return Err(invalid("Gaussian policy needs a positive standard deviation"));
    }
    Ok(batch
        .steps
        .iter()
        .zip(&batch.advantages)
        .map(|(s, a)| {
            let lp = gaussian_logprob(&s.u, &net.forward(&s.x), batch.sigma);
            (lp - s.logprob).exp() * a
        })
        .sum())
}

/// `‖∂π/∂θ(x)‖²_F`.
fn param_gradient_sq(net: &PolicyNet, x: &DVector<f64>) -> f64 {
    (0..net.n_out())
        .map(|i| {
            let mut e = DVector::zeros(net.n_out());
            e[i] = 1.0;
            net.param_vjp(x, &e).norm_squared()
        })
        .sum()
}

fn smooth_term(net: &PolicyNet, x: &DVector<f64>, variant: SmoothVariant) -> f64 {
    match variant {
        SmoothVariant::InputGradient => net.partial_gradients(x).norm_squared(),
        SmoothVariant::ParameterGradient => param_gradient_sq(net, x),
    }
}

/// `(L_explore, L_smooth)` summed over the whole batch.
pub fn smoothness_penalties(batch: &RolloutBatch, net: &PolicyNet, variant: SmoothVariant) -> (f64, f64) {
    let mut explore = 0.0;
    let mut smooth = 0.0;
    for s in &batch.steps {
        if !s.first {
            explore += (&s.u_prev - net.forward(&s.x)).norm_squared();
        }
        smooth += smooth_term(net, &s.x, variant);
    }
    (explore, smooth)
}

/// Conjugate gradient for `A x = b` with `A` symmetric positive definite.
/// Returns the iterate and whether the residual reached `tol·‖b‖`.
pub fn conjugate_gradient<F>(apply: F, b: &DVector<f64>, iters: usize, tol: f64) -> (DVector<f64>, bool)
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let target = tol * tol * b.norm_squared();
    if rr <= target {
        return (x, true);
    }
    for _ in 0..iters {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return (x, false);
        }
        let alpha = rr / pap;
        x += &p * alpha;
        r -= &ap * alpha;
        let rr_new = r.norm_squared();
        if rr_new <= target {
            return (x, true);
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    (x, false)
}

/// Empirical Fisher matrix of the Gaussian policy, stored as the stacked
/// scaled Jacobians `J` so that `F = JᵀJ / N`.
#[derive(Clone, Debug)]
pub struct FisherEstimate {
    pub jac: DMatrix<f64>,
    pub n_states: usize,
}

impl FisherEstimate {
    /// From the mean-Jacobians `∂μ/∂θ` at `states`, scaled by `1/σ`.
    pub fn new(net: &PolicyNet, states: &[DVector<f64>], sigma: f64) -> Self {
        let n_out = net.n_out();
        let rows: Vec<DVector<f64>> = states
            .par_iter()
            .flat_map_iter(|x| {
                (0..n_out).map(move |i| {
                    let mut e = DVector::zeros(n_out);
                    e[i] = 1.0 / sigma;
                    net.param_vjp(x, &e)
                })
            })
            .collect();
        let p = net.n_params();
        let mut jac = DMatrix::zeros(rows.len(), p);
        for (r, row) in rows.iter().enumerate() {
            jac.row_mut(r).copy_from(&row.transpose());
        }
        Self {
            jac,
            n_states: states.len().max(1),
        }
    }

    /// Explicit Fisher matrix (for small problems and tests).
    pub fn from_matrix(f: &DMatrix<f64>) -> Result<Self> {
        let chol = f
            .clone()
            .cholesky()
            .ok_or_else(|| invalid("explicit Fisher matrix must be positive definite"))?;
        Ok(Self {
            jac: chol.l().transpose(),
            n_states: 1,
        })
    }

    /// `F v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.jac.tr_mul(&(&self.jac * v)) / self.n_states as f64
    }
}

/// Outcome of one trust-region natural-gradient step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NaturalStep {
    pub accepted: bool,
    /// Fraction of the full KL-scaled step taken (`0.5^k`).
    pub step_fraction: f64,
    /// Full-step scale `β = √(2δ/dᵀFd)`.
    pub scale: f64,
    /// Averaged KL of the accepted policy (0 if rejected).
    pub kl: f64,
    pub objective_gain: f64,
    pub cg_converged: bool,
    /// Plain gradient used because CG failed.
    pub fallback: bool,
}

/// Options of [`natural_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub max_backtracks: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            cg_iters: 20,
            cg_tol: 1e-10,
            max_backtracks: 10,
        }
    }
}

/// Solves `(F + μI) d = ζ` by CG, scales `d` so that `½ dᵀFd = δ_KL`, and
/// backtracks by halving until the objective improves with actual KL ≤ δ_KL.
/// The net is left unchanged when no step is accepted.
pub fn natural_step(
    net: &mut PolicyNet,
    zeta: &DVector<f64>,
    fisher: &FisherEstimate,
    delta_kl: f64,
    objective: &dyn Fn(&PolicyNet) -> f64,
    kl: &dyn Fn(&PolicyNet) -> f64,
    opts: &StepOptions,
) -> Result<NaturalStep> {
    let theta0 = net.params();
    if zeta.len() != theta0.len() || fisher.jac.ncols() != theta0.len() {
        return Err(dim_err("gradient and Fisher must match the parameter count"));
    }
    let (mut d, cg_converged) = conjugate_gradient(
        |v| fisher.apply(v) + v * opts.damping,
        zeta,
        opts.cg_iters,
        opts.cg_tol,
    );
    let mut fallback = false;
    if !cg_converged || d.iter().any(|v| !v.is_finite()) {
        warn!("conjugate gradient did not converge; using the plain gradient");
        d = zeta.clone();
        fallback = true;
    }
    let mut quad = d.dot(&fisher.apply(&d));
    if !(quad > 0.0) && !fallback {
        d = zeta.clone();
        fallback = true;
        quad = d.dot(&fisher.apply(&d));
    }
    let mut out = NaturalStep {
        cg_converged,
        fallback,
        ..Default::default()
    };
    if !(quad > 0.0) || delta_kl == 0.0 {
        return Ok(out);
    }
    let beta = (2.0 * delta_kl / quad).sqrt();
    out.scale = beta;
    let j0 = objective(net);
    let mut frac = 1.0;
    for _ in 0..=opts.max_backtracks {
        net.set_params(&(&theta0 + &d * (beta * frac)))?;
        let j = objective(net);
        let k = kl(net);
        if j > j0 && k <= delta_kl {
            out.accepted = true;
            out.step_fraction = frac;
            out.kl = k;
            out.objective_gain = j - j0;
            return Ok(out);
        }
        frac *= 0.5;
    }
    net.set_params(&theta0)?;
    Ok(out)
}

/// Per-iteration learning-curve record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub mean_reward: f64,
    /// Lipschitz bound after the update (and projection).
    pub lipschitz: f64,
    pub kl: f64,
    pub w1: f64,
    pub w2: f64,
    pub sigma: f64,
    pub surrogate_abs: f64,
    pub l_explore: f64,
    pub l_smooth: f64,
    pub accepted: bool,
    pub fallback: bool,
    pub thresholded: bool,
    /// Some rollout diverged; the update was skipped.
    pub failed: bool,
}

/// Output of [`train`].
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub curve: Vec<IterRecord>,
    pub net: PolicyNet,
    pub checkpoints: Vec<(usize, PolicyNet)>,
    pub monitor: GradientMonitor,
    /// Penalty weights after the first-iteration calibration.
    pub calibrated: (f64, f64),
}

/// Sub-sample of `n` step indices, evenly spaced.
fn sample_indices(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    (0..n).map(|k| k * len / n).collect()
}

/// Gradient of `L_smooth` (scaled to the batch) at the sampled steps.
fn smooth_gradient(net: &PolicyNet, states: &[&DVector<f64>], variant: SmoothVariant) -> DVector<f64> {
    let p = net.n_params();
    match variant {
        SmoothVariant::InputGradient => {
            // Directional central differences of the input Jacobian columns
            // turn the double-backprop gradient into two parameter VJPs.
            let hstep = 1e-5;
            let used: Vec<usize> = (0..net.n_in())
                .filter(|&j| net.input_mask.iter().any(|r| r[j]))
                .collect();
            states
                .par_iter()
                .map(|x| {
                    let mut g = DVector::zeros(p);
                    for &j in &used {
                        let mut xp = (*x).clone();
                        let mut xm = (*x).clone();
                        xp[j] += hstep;
                        xm[j] -= hstep;
                        let col = (net.forward(&xp) - net.forward(&xm)) / (2.0 * hstep);
                        g += (net.param_vjp(&xp, &col) - net.param_vjp(&xm, &col)) / hstep;
                    }
                    g
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(DVector::zeros(p), |a, b| a + b)
        }
        SmoothVariant::ParameterGradient => {
            let base = net.params();
            let hstep = 1e-6;
            let f = |theta: &DVector<f64>| -> f64 {
                let mut n2 = net.clone();
                n2.set_params(theta).expect("same length");
                states.iter().map(|x| param_gradient_sq(&n2, x)).sum()
            };
            DVector::from_fn(p, |k, _| {
                let mut tp = base.clone();
                let mut tm = base.clone();
                tp[k] += hstep;
                tm[k] -= hstep;
                (f(&tp) - f(&tm)) / (2.0 * hstep)
            })
        }
    }
}

/// Runs the on-policy training loop on a benchmark.
///
/// Every iteration: rollouts → reward-to-go advantages with a linear
/// baseline → gradient of the weighted objective → natural step → the
/// regulation action of `cfg.mode`. Iterations with a divergent rollout
/// skip the update and are recorded as failed.
pub fn train(
    bench: &Benchmark,
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(&IterRecord, &PolicyNet),
) -> Result<TrainResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyNet::agents(&bench.obs_mask, &cfg.hidden, cfg.init_scale, true, &mut rng)?;
    if cfg.mode == Regulation::HardThreshold {
        net.hard_threshold(cfg.l_cert)?;
    }
    let mut monitor = GradientMonitor::new(bench.obs_mask.clone(), cfg.monitor_window)?;
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();
    let mut weights: Option<(f64, f64)> = None;
    let mut calibrated: Option<(f64, f64)> = None;
    let mut w2_floor = 0.0;
    let mut clean = 0usize;
    let opts = StepOptions {
        damping: cfg.damping,
        cg_iters: cfg.cg_iters,
        cg_tol: cfg.cg_tol,
        max_backtracks: cfg.max_backtracks,
    };
    for iter in 0..cfg.iterations {
        let sigma = cfg.sigma_at(iter);
        let batch = collect_rollouts(bench, &net, cfg, sigma, iter)?;
        let mean_reward = batch.episode_rewards.iter().sum::<f64>() / batch.episode_rewards.len() as f64;
        let idx = sample_indices(batch.len(), cfg.fisher_samples);
        let scale = batch.len() as f64 / idx.len().max(1) as f64;
        let states: Vec<&DVector<f64>> = idx.iter().map(|&i| &batch.steps[i].x).collect();
        let surrogate_abs: f64 = batch.advantages.iter().map(|a| a.abs()).sum();
        let explore_of = |n: &PolicyNet| -> f64 {
            idx.iter()
                .filter(|&&i| !batch.steps[i].first)
                .map(|&i| (&batch.steps[i].u_prev - n.forward(&batch.steps[i].x)).norm_squared())
                .sum::<f64>()
                * scale
        };
        let smooth_of = |n: &PolicyNet| -> f64 {
            states.iter().map(|x| smooth_term(n, x, cfg.smooth_variant)).sum::<f64>() * scale
        };
        let l_explore = explore_of(&net);
        let l_smooth = smooth_of(&net);
        let (w1, mut w2) = *weights.get_or_insert_with(|| {
            let w1 = cfg
                .w1
                .unwrap_or(if l_explore > 0.0 { cfg.penalty_fraction * surrogate_abs / l_explore } else { 0.0 });
            let w2 = match cfg.mode {
                Regulation::None => cfg.w2.unwrap_or(0.0),
                _ => cfg
                    .w2
                    .unwrap_or(if l_smooth > 0.0 { cfg.penalty_fraction * surrogate_abs / l_smooth } else { 0.0 }),
            };
            w2_floor = w2;
            (w1, w2)
        });
        calibrated.get_or_insert((w1, w2));
        let mut record = IterRecord {
            iter,
            mean_reward,
            lipschitz: net.lipschitz_upper(),
            kl: 0.0,
            w1,
            w2,
            sigma,
            surrogate_abs,
            l_explore,
            l_smooth,
            accepted: false,
            fallback: false,
            thresholded: false,
            failed: batch.diverged > 0,
        };
        if batch.diverged > 0 {
            warn!("iteration {iter}: {} rollout(s) diverged; update skipped", batch.diverged);
        } else {
            // Gradient of the weighted objective at θ_old.
            let p = net.n_params();
            let inv_var = 1.0 / (sigma * sigma);
            let surr_grad = batch
                .steps
                .par_iter()
                .zip(batch.advantages.par_iter())
                .map(|(s, a)| {
                    let g = (&s.u - net.forward(&s.x)) * (a * inv_var);
                    net.param_vjp(&s.x, &g)
                })
                // Summed in order so results do not depend on scheduling.
                .collect::<Vec<_>>()
                .into_iter()
                .fold(DVector::zeros(p), |a, b| a + b);
            let mut zeta = surr_grad;
            if w1 > 0.0 {
                let ge = idx
                    .iter()
                    .filter(|&&i| !batch.steps[i].first)
                    .map(|&i| {
                        let s = &batch.steps[i];
                        let resid = &s.u_prev - net.forward(&s.x);
                        net.param_vjp(&s.x, &(resid * -2.0))
                    })
                    .fold(DVector::zeros(p), |a, b| a + b);
                zeta -= ge * (w1 * scale);
            }
            if w2 > 0.0 {
                zeta -= smooth_gradient(&net, &states, cfg.smooth_variant) * (w2 * scale);
            }
            let owned: Vec<DVector<f64>> = states.iter().map(|x| (*x).clone()).collect();
            let fisher = FisherEstimate::new(&net, &owned, sigma);
            let old_means: Vec<DVector<f64>> = owned.iter().map(|x| net.forward(x)).collect();
            let objective = |n: &PolicyNet| -> f64 {
                let surr = surrogate_loss(&batch, n).unwrap_or(f64::NEG_INFINITY);
                let mut j = surr;
                if w1 > 0.0 {
                    j -= w1 * explore_of(n);
                }
                if w2 > 0.0 {
                    j -= w2 * smooth_of(n);
                }
                j
            };
            let kl = |n: &PolicyNet| -> f64 {
                owned
                    .iter()
                    .zip(&old_means)
                    .map(|(x, m)| (n.forward(x) - m).norm_squared())
                    .sum::<f64>()
                    / (2.0 * sigma * sigma * owned.len().max(1) as f64)
            };
            let step = natural_step(&mut net, &zeta, &fisher, cfg.delta_kl, &objective, &kl, &opts)?;
            record.accepted = step.accepted;
            record.kl = step.kl;
            record.fallback = step.fallback;
        }
        match cfg.mode {
            Regulation::HardThreshold => {
                record.thresholded = net.hard_threshold(cfg.l_cert)?;
            }
            Regulation::SoftPenalty => {
                if net.lipschitz_upper() > cfg.l_cert {
                    w2 = if w2 > 0.0 { 2.0 * w2 } else { cfg.penalty_fraction };
                    clean = 0;
                } else {
                    clean += 1;
                    if clean >= 10 {
                        w2 = (0.5 * w2).max(w2_floor);
                        clean = 0;
                    }
                }
                weights = Some((w1, w2));
            }
            Regulation::None => {}
        }
        record.lipschitz = net.lipschitz_upper();
        record.w2 = w2;
        let grads: Vec<DMatrix<f64>> = states.iter().map(|x| net.partial_gradients(x)).collect();
        monitor.update(&grads)?;
        debug!(
            "iter {iter}: reward {:.4e} lipschitz {:.4} kl {:.2e}",
            record.mean_reward, record.lipschitz, record.kl
        );
        on_iter(&record, &net);
        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push((iter + 1, net.clone()));
        }
        curve.push(record);
    }
    let calibrated = calibrated.unwrap_or((0.0, 0.0));
    Ok(TrainResult {
        curve,
        net,
        checkpoints,
        monitor,
        calibrated,
    })
}
