//! LMI assembly, feasibility, γ bisection, margin sweeps and the
//! frequency-domain cross-check.
//!
//! Both dissipation LMIs are written over the stacked signal
//! `ξ = [x; q; v; e]` as
//!
//! ```text
//!   F(P, λ, τ) = ΞᵀPΦ + ΦᵀPΞ + Σ λ_ij M_ij + Σ τ_k Z_kᵀ M_k Z_k + F₀ ≺ 0
//! ```
//!
//! with `Φ = [Ā, B̄_q, B̄_v, B̄_e]` (so `Ξξ = x`, `Φξ = ẋ`),
//! `F₀ = diag((1/γ)I on x_G, 0, 0, −γI)`, `M_ij` the per-entry gradient
//! constraint forms and `Z_k` the IQC output map restricted to group `k`.
//! The linear case is the special case without filter states and residuals.

mod freq;
mod sweep;

pub use freq::{freq_domain_check, freq_domain_feasibility, freq_max_eig, FreqVerdict};
pub use sweep::{max_certified_level, sweep_margin, BoundsFamily, ConstraintMode, LevelSearch, MarginCurve, MarginPoint};

use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::gradient_bounds::{GradientBoundSet, MultiplierSet};
use crate::iqc_blocks::IqcBlock;
use crate::linalg;
use crate::sdp::{self, BarrierOptions, BarrierProblem, Control, LmiBlock, Outcome, Term};
use crate::system_model::{augment, AugmentedSystem, LtiSystem, NonlinearBlock};

/// Strict-inequality margin: `≺ 0` is enforced as `⪯ −EPS_FEAS·I`.
pub const EPS_FEAS: f64 = 1e-8;
/// Tolerance on the storage matrix: `P ⪰ −EPS_PSD·I`.
pub const EPS_PSD: f64 = 1e-9;
/// Default upper end of the γ search.
pub const GAMMA_HI: f64 = 1e4;
/// Default multiplicative tolerance of the γ bisection.
pub const GAMMA_TOL: f64 = 0.05;
/// Iteration cap of the γ search.
pub const GAMMA_MAX_ITERS: usize = 40;

/// An assembled dissipation LMI at fixed γ.
#[derive(Clone, Debug)]
pub struct LmiProblem {
    pub gamma: f64,
    /// Plant states `n_s` (the certified output is `y = x_G`).
    pub n_s: usize,
    /// Storage state dimension `n_s + n_ψ`.
    pub n_x: usize,
    pub n_a: usize,
    pub n_v: usize,
    /// Gradient entries `(i, j)` carried as decomposition inputs `q`.
    pub q_entries: Vec<(usize, usize)>,
    pub bounds: GradientBoundSet,
    /// `[Ā, B̄_q, B̄_v, B̄_e]`, `n_x × dim`.
    pub phi: DMatrix<f64>,
    /// `F₀`.
    pub constant: DMatrix<f64>,
    /// Per multiplier group: output map `Z_k` (`n_zk × dim`) and middle matrix.
    pub groups: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Values of the decision variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(with = "crate::config::rows")]
    pub p: DMatrix<f64>,
    #[serde(with = "crate::config::rows")]
    pub lambda: DMatrix<f64>,
    pub taus: Vec<f64>,
}

impl LmiProblem {
    pub fn n_q(&self) -> usize {
        self.q_entries.len()
    }

    pub fn dim(&self) -> usize {
        self.n_x + self.n_q() + self.n_v + self.n_a
    }

    fn q_offset(&self) -> usize {
        self.n_x
    }

    /// Sparse terms of the per-entry constraint form `M_ij` for active entry `r`.
    pub(crate) fn lambda_terms(&self, r: usize) -> [Term; 3] {
        let (i, j) = self.q_entries[r];
        let c = 0.5 * (self.bounds.xi_lower[(i, j)] + self.bounds.xi_upper[(i, j)]);
        let cb = self.bounds.xi_upper[(i, j)] - c;
        let qk = self.q_offset() + r;
        [
            Term::new(cb * cb - c * c, j, j),
            Term::new(2.0 * c, j, qk),
            Term::new(-1.0, qk, qk),
        ]
    }

    /// The assembled LMI matrix at the given decision values.
    pub fn evaluate(&self, w: &Witness) -> Result<DMatrix<f64>> {
        if w.p.shape() != (self.n_x, self.n_x)
            || w.lambda.shape() != (self.n_a, self.n_s)
            || w.taus.len() != self.groups.len()
        {
            return Err(dim_err("witness does not match the LMI layout"));
        }
        let mut f = self.constant.clone();
        let pphi = &w.p * &self.phi;
        for k in 0..self.n_x {
            for c in 0..self.dim() {
                f[(k, c)] += pphi[(k, c)];
                f[(c, k)] += pphi[(k, c)];
            }
        }
        for r in 0..self.n_q() {
            let (i, j) = self.q_entries[r];
            let lam = w.lambda[(i, j)];
            for t in self.lambda_terms(r) {
                f[(t.a, t.b)] += 0.5 * lam * t.coef;
                f[(t.b, t.a)] += 0.5 * lam * t.coef;
            }
        }
        for ((z, m), tau) in self.groups.iter().zip(&w.taus) {
            f += z.transpose() * m * z * *tau;
        }
        Ok(linalg::symmetrize(&f))
    }

    /// Number of P entries in the packed upper triangle.
    fn n_p(&self) -> usize {
        self.n_x * (self.n_x + 1) / 2
    }

    fn p_pairs(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::with_capacity(self.n_p());
        for k in 0..self.n_x {
            for l in k..self.n_x {
                v.push((k, l));
            }
        }
        v
    }

    /// Decodes a barrier variable vector into a witness.
    fn decode(&self, x: &DVector<f64>) -> Witness {
        let mut p = DMatrix::zeros(self.n_x, self.n_x);
        for (idx, (k, l)) in self.p_pairs().into_iter().enumerate() {
            p[(k, l)] = x[idx];
            p[(l, k)] = x[idx];
        }
        let off = self.n_p();
        let mut lambda = DMatrix::zeros(self.n_a, self.n_s);
        for (r, &(i, j)) in self.q_entries.iter().enumerate() {
            lambda[(i, j)] = x[off + r];
        }
        let off = off + self.n_q();
        let taus = (0..self.groups.len()).map(|k| x[off + k]).collect();
        Witness { p, lambda, taus }
    }

    /// Epigraph problem `min t  s.t.  tI − F ≻ 0, P ≻ 0, λ > 0, τ > 0`
    /// inside the box `tr P + Σλ + Στ < radius`; returns it with a strictly
    /// feasible starting point.
    fn barrier_problem(&self, radius: f64) -> (BarrierProblem, DVector<f64>) {
        let dim = self.dim();
        let pairs = self.p_pairs();
        let n_p = pairs.len();
        let n_l = self.n_q();
        let n_t = self.groups.len();
        let t_var = n_p + n_l + n_t;
        let n_vars = t_var + 1;

        let n_zrows: usize = self.groups.iter().map(|(z, _)| z.nrows()).sum();
        let mut atoms = DMatrix::zeros(dim, self.n_x + n_zrows);
        atoms
            .view_mut((0, 0), (dim, self.n_x))
            .copy_from(&self.phi.transpose());
        let mut zoff = self.n_x;
        for (z, _) in &self.groups {
            atoms
                .view_mut((0, zoff), (dim, z.nrows()))
                .copy_from(&z.transpose());
            zoff += z.nrows();
        }
        let phi_atom = |k: usize| dim + k;

        let mut lmi = LmiBlock::new(-&self.constant, atoms);
        let mut pblk = LmiBlock::new(DMatrix::zeros(self.n_x, self.n_x), DMatrix::zeros(self.n_x, 0));
        for (idx, &(k, l)) in pairs.iter().enumerate() {
            if k == l {
                lmi.push_var(idx, vec![Term::new(-2.0, k, phi_atom(k))]);
                pblk.push_var(idx, vec![Term::new(1.0, k, k)]);
            } else {
                lmi.push_var(
                    idx,
                    vec![Term::new(-2.0, k, phi_atom(l)), Term::new(-2.0, l, phi_atom(k))],
                );
                pblk.push_var(idx, vec![Term::new(2.0, k, l)]);
            }
        }
        for r in 0..n_l {
            let terms = self
                .lambda_terms(r)
                .iter()
                .filter(|t| t.coef != 0.0)
                .map(|t| Term::new(-t.coef, t.a, t.b))
                .collect();
            lmi.push_var(n_p + r, terms);
        }
        let mut zoff = dim + self.n_x;
        for (g, (z, m)) in self.groups.iter().enumerate() {
            let nz = z.nrows();
            let mut terms = Vec::new();
            for a in 0..nz {
                for b in a..nz {
                    let coef = if a == b { m[(a, a)] } else { 2.0 * m[(a, b)] };
                    if coef != 0.0 {
                        terms.push(Term::new(-coef, zoff + a, zoff + b));
                    }
                }
            }
            lmi.push_var(n_p + n_l + g, terms);
            zoff += nz;
        }
        lmi.push_var(t_var, (0..dim).map(|i| Term::new(1.0, i, i)).collect());

        let mut blocks = vec![lmi, pblk];
        for v in n_p..t_var {
            blocks.push(LmiBlock::scalar(0.0, &[(v, 1.0)]));
        }
        let mut box_coefs: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, (k, l))| k == l)
            .map(|(i, _)| (i, -1.0))
            .collect();
        box_coefs.extend((n_p..t_var).map(|v| (v, -1.0)));
        blocks.push(LmiBlock::scalar(radius, &box_coefs));

        // Start in the middle of the box: half of the radius spread evenly.
        let s0 = 0.5 * radius / (self.n_x + n_l + n_t) as f64;
        let mut x0 = DVector::zeros(n_vars);
        for (idx, &(k, l)) in pairs.iter().enumerate() {
            if k == l {
                x0[idx] = s0;
            }
        }
        for v in n_p..t_var {
            x0[v] = s0;
        }
        // blocks[0] stores tI − F, so with t = 0 its value is −F(x0).
        let fx0 = -(blocks[0].linear_part(&x0) + &blocks[0].constant);
        let top = linalg::max_sym_eig(&fx0);
        x0[t_var] = top + top.abs().max(1.0);

        let mut objective = DVector::zeros(n_vars);
        objective[t_var] = 1.0;
        (
            BarrierProblem {
                n_vars,
                objective,
                blocks,
            },
            x0,
        )
    }
}

/// Assembles the LMI for an LTI plant (no residual nonlinearities).
pub fn assemble_lti_sdp(plant: &LtiSystem, bounds: &GradientBoundSet, gamma: f64) -> Result<LmiProblem> {
    plant.require_hurwitz()?;
    let empty = NonlinearBlock::empty(plant.n_s());
    let filter = crate::iqc_blocks::static_identity(0)?;
    let aug = augment(plant, &empty, &filter)?;
    assemble_nonlinear_sdp(&aug, &filter, bounds, gamma)
}

/// Assembles the LMI for an augmented plant with IQC-described residuals.
/// Every multiplier group of `block` receives its own weight τ_k ≥ 0.
pub fn assemble_nonlinear_sdp(
    aug: &AugmentedSystem,
    block: &IqcBlock,
    bounds: &GradientBoundSet,
    gamma: f64,
) -> Result<LmiProblem> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid("γ must be positive and finite"));
    }
    let (n_s, n_x, n_a, n_v) = (aug.n_s, aug.n_x(), aug.n_a(), aug.n_v());
    if bounds.n_a() != n_a || bounds.n_s() != n_s {
        return Err(dim_err(format!(
            "bounds are {}×{}, plant needs {n_a}×{n_s}",
            bounds.n_a(),
            bounds.n_s()
        )));
    }
    if block.n_z() != aug.n_z() {
        return Err(dim_err("IQC block does not match the augmented system"));
    }
    let a_g = aug.a_bar.view((0, 0), (n_s, n_s)).into_owned();
    if !crate::system_model::is_hurwitz(&a_g)? {
        return Err(Error::NotHurwitz(linalg::spectral_abscissa(&a_g)?));
    }
    // Entries with both bounds zero force q_ij = 0 and are dropped exactly.
    let q_entries: Vec<(usize, usize)> = (0..n_a)
        .flat_map(|i| (0..n_s).map(move |j| (i, j)))
        .filter(|&(i, j)| !bounds.is_zero_entry(i, j))
        .collect();
    let n_q = q_entries.len();
    let dim = n_x + n_q + n_v + n_a;
    let mut phi = DMatrix::zeros(n_x, dim);
    phi.view_mut((0, 0), (n_x, n_x)).copy_from(&aug.a_bar);
    for (r, &(i, j)) in q_entries.iter().enumerate() {
        phi.column_mut(n_x + r)
            .copy_from(&aug.b_bar_q.column(crate::gradient_bounds::q_index(n_s, i, j)));
    }
    phi.view_mut((0, n_x + n_q), (n_x, n_v)).copy_from(&aug.b_bar_v);
    phi.view_mut((0, n_x + n_q + n_v), (n_x, n_a))
        .copy_from(&aug.b_bar_e);

    let mut constant = DMatrix::zeros(dim, dim);
    for k in 0..n_s {
        constant[(k, k)] = 1.0 / gamma;
    }
    for k in 0..n_a {
        let e = n_x + n_q + n_v + k;
        constant[(e, e)] = -gamma;
    }

    let mut groups = Vec::with_capacity(block.groups.len());
    for (g, rows) in block.groups.iter().enumerate() {
        let nz = rows.len();
        let mut z = DMatrix::zeros(nz, dim);
        z.view_mut((0, 0), (nz, n_x))
            .copy_from(&aug.c_bar.view((rows.start, 0), (nz, n_x)));
        z.view_mut((0, n_x + n_q), (nz, n_v))
            .copy_from(&aug.d_psi_v.view((rows.start, 0), (nz, n_v)));
        groups.push((z, block.group_m(g)));
    }
    Ok(LmiProblem {
        gamma,
        n_s,
        n_x,
        n_a,
        n_v,
        q_entries,
        bounds: bounds.clone(),
        phi,
        constant,
        groups,
    })
}

/// Outcome class of a feasibility problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "detail", rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
    NumericalFailure(String),
}

/// Solver diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub outer_iterations: usize,
    pub newton_steps: usize,
    /// Number of γ values tried (1 for a plain feasibility call).
    pub gamma_evaluations: usize,
    /// γ evaluations that ended in numerical failure.
    pub numerical_failures: usize,
    /// Final epigraph value `t ≥ λ_max(F)`.
    pub t_value: f64,
    pub gap: f64,
    /// Largest eigenvalue of the assembled LMI at the witness.
    pub max_lmi_eig: f64,
    /// Smallest eigenvalue of P at the witness.
    pub min_p_eig: f64,
    pub solve_ms: f64,
}

/// Result of a feasibility problem or γ search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub feasible: bool,
    pub verdict: Verdict,
    pub gamma: f64,
    #[serde(with = "crate::config::rows")]
    pub p: DMatrix<f64>,
    pub lambda: MultiplierSet,
    pub taus: Vec<f64>,
    pub bounds: GradientBoundSet,
    pub solver_stats: SolverStats,
}

impl Certificate {
    /// Storage function value `V(x) = xᵀPx` on the storage state.
    pub fn storage(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.p * x))
    }
}

/// Options of the feasibility engine.
#[derive(Clone, Debug)]
pub struct FeasibilityOptions {
    pub eps_feas: f64,
    pub eps_psd: f64,
    /// Radius of the normalising box `tr P + Σλ + Στ < R`; `None` picks
    /// `max(1e4, 10·(#variables))`.
    pub box_radius: Option<f64>,
    pub barrier: BarrierOptions,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        Self {
            eps_feas: EPS_FEAS,
            eps_psd: EPS_PSD,
            box_radius: None,
            barrier: BarrierOptions::default(),
        }
    }
}

fn empty_certificate(lmi: &LmiProblem, verdict: Verdict, stats: SolverStats) -> Certificate {
    Certificate {
        feasible: false,
        verdict,
        gamma: lmi.gamma,
        p: DMatrix::zeros(lmi.n_x, lmi.n_x),
        lambda: MultiplierSet {
            lambda: DMatrix::zeros(lmi.n_a, lmi.n_s),
        },
        taus: vec![0.0; lmi.groups.len()],
        bounds: lmi.bounds.clone(),
        solver_stats: stats,
    }
}

/// Decides feasibility of the LMI at its fixed γ.
///
/// Feasible witnesses are re-validated on the assembled matrix; numerical
/// failure is reported as its own verdict, never as infeasibility.
pub fn feasibility(lmi: &LmiProblem, opts: &FeasibilityOptions) -> Certificate {
    let start = Instant::now();
    let n_free = lmi.n_x + lmi.n_q() + lmi.groups.len();
    let radius = opts.box_radius.unwrap_or_else(|| (10.0 * n_free as f64).max(1e4));
    let (problem, x0) = lmi.barrier_problem(radius);
    let t_var = problem.n_vars - 1;
    let eps = opts.eps_feas;
    let report = sdp::solve_barrier(&problem, x0, &opts.barrier, |it| {
        let t = it.x[t_var];
        let lower = t - it.gap;
        if t < -eps && t <= 0.5 * lower {
            Control::Stop
        } else if lower > -eps {
            Control::Stop
        } else {
            Control::Continue
        }
    });
    let t = report.x[t_var];
    let mut stats = SolverStats {
        outer_iterations: report.outer_iterations,
        newton_steps: report.newton_steps,
        gamma_evaluations: 1,
        numerical_failures: 0,
        t_value: t,
        gap: report.gap,
        max_lmi_eig: f64::NAN,
        min_p_eig: f64::NAN,
        solve_ms: 0.0,
    };
    let elapsed = |s: &mut SolverStats| s.solve_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Outcome::Failed(msg) = &report.outcome {
        if !(t < -eps) {
            elapsed(&mut stats);
            stats.numerical_failures = 1;
            return empty_certificate(lmi, Verdict::NumericalFailure(msg.clone()), stats);
        }
    }
    if !(t < -eps) {
        elapsed(&mut stats);
        return empty_certificate(lmi, Verdict::Infeasible, stats);
    }
    let w = lmi.decode(&report.x);
    let f = match lmi.evaluate(&w) {
        Ok(f) => f,
        Err(e) => {
            elapsed(&mut stats);
            return empty_certificate(lmi, Verdict::NumericalFailure(e.to_string()), stats);
        }
    };
    stats.max_lmi_eig = linalg::max_sym_eig(&f);
    stats.min_p_eig = linalg::min_sym_eig(&w.p);
    elapsed(&mut stats);
    let multipliers_ok = w.lambda.iter().all(|v| *v >= 0.0) && w.taus.iter().all(|v| *v >= 0.0);
    if stats.max_lmi_eig > -eps || stats.min_p_eig < -opts.eps_psd || !multipliers_ok {
        let msg = format!(
            "witness failed re-validation (λmax = {:.3e}, λmin(P) = {:.3e})",
            stats.max_lmi_eig, stats.min_p_eig
        );
        stats.numerical_failures = 1;
        return empty_certificate(lmi, Verdict::NumericalFailure(msg), stats);
    }
    Certificate {
        feasible: true,
        verdict: Verdict::Feasible,
        gamma: lmi.gamma,
        p: w.p,
        lambda: MultiplierSet { lambda: w.lambda },
        taus: w.taus,
        bounds: lmi.bounds.clone(),
        solver_stats: stats,
    }
}

/// Smallest certified γ in `[lo, hi]` up to multiplicative tolerance `tol`.
///
/// Doubles γ from `lo` until feasible (capped at `hi`), then bisects on a log
/// scale; at most [`GAMMA_MAX_ITERS`] feasibility problems are solved. If `hi`
/// is infeasible the returned certificate is infeasible and carries `hi`.
/// Evaluations that fail numerically are treated as "not certified" for
/// bracketing and counted in the statistics; if no γ could be certified and
/// any evaluation failed, the verdict is a numerical failure.
pub fn bisect_gamma<F>(assemble: F, lo: f64, hi: f64, tol: f64, opts: &FeasibilityOptions) -> Result<Certificate>
where
    F: Fn(f64) -> Result<LmiProblem>,
{
    if !(lo > 0.0 && hi >= lo && tol > 0.0) {
        return Err(invalid("γ range must satisfy 0 < lo ≤ hi and tol > 0"));
    }
    let start = Instant::now();
    let mut tally = Tally::default();
    let run = |tally: &mut Tally, g: f64| -> Result<Certificate> {
        let c = feasibility(&assemble(g)?, opts);
        tally.evals += 1;
        tally.newton += c.solver_stats.newton_steps;
        if let Verdict::NumericalFailure(msg) = &c.verdict {
            tally.failures += 1;
            warn!("γ = {g:.4e}: {msg}");
            tally.last_failure = Some(msg.clone());
        }
        Ok(c)
    };
    let finish = |mut c: Certificate, tally: &Tally| {
        c.solver_stats.gamma_evaluations = tally.evals;
        c.solver_stats.numerical_failures = tally.failures;
        c.solver_stats.newton_steps = tally.newton;
        c.solver_stats.solve_ms = start.elapsed().as_secs_f64() * 1e3;
        c
    };

    let mut g = lo;
    let mut below = None;
    let mut best = loop {
        let mut c = run(&mut tally, g)?;
        if c.feasible {
            break c;
        }
        if g >= hi || tally.evals >= GAMMA_MAX_ITERS {
            c.gamma = g;
            if tally.failures > 0 && c.verdict == Verdict::Infeasible {
                c.verdict = Verdict::NumericalFailure(tally.last_failure.clone().unwrap_or_default());
            }
            return Ok(finish(c, &tally));
        }
        below = Some(g);
        g = (2.0 * g).min(hi);
    };
    if let Some(mut low) = below {
        let mut high = best.gamma;
        while high / low > 1.0 + tol && tally.evals < GAMMA_MAX_ITERS {
            let mid = (low * high).sqrt();
            let c = run(&mut tally, mid)?;
            if c.feasible {
                high = mid;
                best = c;
            } else {
                low = mid;
            }
        }
    }
    Ok(finish(best, &tally))
}

#[derive(Default)]
struct Tally {
    evals: usize,
    failures: usize,
    newton: usize,
    last_failure: Option<String>,
}

/// A loop to be certified: an LTI plant, or a plant with IQC-described
/// residual nonlinearities.
#[derive(Clone, Debug)]
pub enum LoopModel {
    Lti(LtiSystem),
    Nonlinear {
        plant: LtiSystem,
        residuals: NonlinearBlock,
        filter: IqcBlock,
        aug: AugmentedSystem,
    },
}

impl LoopModel {
    pub fn lti(plant: LtiSystem) -> Result<Self> {
        plant.require_hurwitz()?;
        Ok(Self::Lti(plant))
    }

    pub fn nonlinear(plant: LtiSystem, residuals: NonlinearBlock, filter: IqcBlock) -> Result<Self> {
        plant.require_hurwitz()?;
        let aug = augment(&plant, &residuals, &filter)?;
        Ok(Self::Nonlinear {
            plant,
            residuals,
            filter,
            aug,
        })
    }

    pub fn plant(&self) -> &LtiSystem {
        match self {
            LoopModel::Lti(p) => p,
            LoopModel::Nonlinear { plant, .. } => plant,
        }
    }

    pub fn n_s(&self) -> usize {
        self.plant().n_s()
    }

    pub fn n_a(&self) -> usize {
        self.plant().n_a()
    }

    pub fn assemble(&self, bounds: &GradientBoundSet, gamma: f64) -> Result<LmiProblem> {
        match self {
            LoopModel::Lti(p) => assemble_lti_sdp(p, bounds, gamma),
            LoopModel::Nonlinear { aug, filter, .. } => assemble_nonlinear_sdp(aug, filter, bounds, gamma),
        }
    }

    /// Feasibility at a single γ.
    pub fn certify_at(&self, bounds: &GradientBoundSet, gamma: f64, opts: &FeasibilityOptions) -> Result<Certificate> {
        Ok(feasibility(&self.assemble(bounds, gamma)?, opts))
    }

    /// γ search over `[lo, hi]`.
    pub fn certify(
        &self,
        bounds: &GradientBoundSet,
        lo: f64,
        hi: f64,
        tol: f64,
        opts: &FeasibilityOptions,
    ) -> Result<Certificate> {
        bisect_gamma(|g| self.assemble(bounds, g), lo, hi, tol, opts)
    }
}
