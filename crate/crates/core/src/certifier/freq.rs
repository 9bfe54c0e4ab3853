//! Frequency-domain form of the LTI dissipation condition.
//!
//! With `B̃ = [BW, B]` and `N(jω) = [(jωI − A)⁻¹B̃; I]`, the time-domain LMI
//! is feasible iff `N(jω)* Π(λ) N(jω) ≺ 0` for all `ω ∈ [0, ∞]`, where `Π`
//! is the multiplier part of the LMI (everything except the `P` terms). Here
//! the condition is sampled on a finite grid, giving an independent check of
//! time-domain witnesses and an independent feasibility problem in λ alone.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assemble_lti_sdp, FeasibilityOptions, LmiProblem, Verdict, EPS_FEAS};
use crate::error::{dim_err, Error, Result};
use crate::gradient_bounds::GradientBoundSet;
use crate::linalg;
use crate::sdp::{self, BarrierProblem, Control, LmiBlock, Outcome, Term};
use crate::system_model::LtiSystem;

type C64 = Complex<f64>;

/// `N(jω)`; `None` stands for ω = ∞.
fn n_matrix(lmi: &LmiProblem, a: &DMatrix<f64>, omega: Option<f64>) -> Result<DMatrix<C64>> {
    let n_s = lmi.n_s;
    let m = lmi.dim() - n_s;
    let mut n = DMatrix::<C64>::zeros(n_s + m, m);
    for k in 0..m {
        n[(n_s + k, k)] = C64::new(1.0, 0.0);
    }
    if let Some(w) = omega {
        let resolvent = DMatrix::<C64>::from_fn(n_s, n_s, |i, j| {
            let d = if i == j { C64::new(0.0, w) } else { C64::new(0.0, 0.0) };
            d - C64::new(a[(i, j)], 0.0)
        });
        let bt = lmi.phi.view((0, n_s), (n_s, m)).map(|v| C64::new(v, 0.0));
        let x = resolvent
            .lu()
            .solve(&bt)
            .ok_or_else(|| Error::Numerical(format!("jωI − A singular at ω = {w}")))?;
        n.view_mut((0, 0), (n_s, m)).copy_from(&x);
    }
    Ok(n)
}

/// `Π(λ)` in the stacked `[x; q; e]` coordinates.
fn pi_matrix(lmi: &LmiProblem, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let mut pi = lmi.constant.clone();
    for r in 0..lmi.n_q() {
        let (i, j) = lmi.q_entries[r];
        for t in lmi.lambda_terms(r) {
            let v = 0.5 * lambda[(i, j)] * t.coef;
            pi[(t.a, t.b)] += v;
            pi[(t.b, t.a)] += v;
        }
    }
    pi
}

fn hermitian_max_eig(h: &DMatrix<C64>) -> f64 {
    let sym = (h + h.adjoint()).map(|v| v * 0.5);
    SymmetricEigen::new(sym).eigenvalues.max()
}

fn checked_lmi(plant: &LtiSystem, bounds: &GradientBoundSet, gamma: f64) -> Result<LmiProblem> {
    let lmi = assemble_lti_sdp(plant, bounds, gamma)?;
    Ok(lmi)
}

/// Largest eigenvalue of `N* Π N` over the grid (and ω = ∞).
pub fn freq_max_eig(
    plant: &LtiSystem,
    bounds: &GradientBoundSet,
    lambda: &DMatrix<f64>,
    gamma: f64,
    omegas: &[f64],
) -> Result<f64> {
    let lmi = checked_lmi(plant, bounds, gamma)?;
    if lambda.shape() != (lmi.n_a, lmi.n_s) {
        return Err(dim_err("multiplier matrix must be n_a×n_s"));
    }
    let pi = pi_matrix(&lmi, lambda).map(|v| C64::new(v, 0.0));
    let points: Vec<Option<f64>> = omegas.iter().map(|w| Some(*w)).chain(std::iter::once(None)).collect();
    let vals = points
        .par_iter()
        .map(|w| -> Result<f64> {
            let n = n_matrix(&lmi, &plant.a, *w)?;
            Ok(hermitian_max_eig(&(n.adjoint() * &pi * &n)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// True iff `N(jω)* Π(λ) N(jω) ⪯ −ε_feas·I` at every grid point and at ω = ∞.
pub fn freq_domain_check(
    plant: &LtiSystem,
    bounds: &GradientBoundSet,
    lambda: &DMatrix<f64>,
    gamma: f64,
    omegas: &[f64],
) -> Result<bool> {
    Ok(freq_max_eig(plant, bounds, lambda, gamma, omegas)? <= -EPS_FEAS)
}

/// Outcome of the frequency-grid feasibility problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqVerdict {
    pub feasible: bool,
    pub verdict: Verdict,
    /// Optimal-so-far epigraph value `max_ω λ_max(N*ΠN) ≤ t`.
    pub t_value: f64,
    #[serde(with = "crate::config::rows")]
    pub lambda: DMatrix<f64>,
}

/// Real atoms `(â, ǎ)` of every row of `N`: for the row `r`, `ρ = conj(r)ᵀ`
/// and `â = [Re ρ; Im ρ]`, `ǎ = [−Im ρ; Re ρ]`.
fn embedded_atoms(n: &DMatrix<C64>) -> DMatrix<f64> {
    let (rows, m) = n.shape();
    let mut atoms = DMatrix::zeros(2 * m, 2 * rows);
    for a in 0..rows {
        for k in 0..m {
            let rho = n[(a, k)].conj();
            atoms[(k, 2 * a)] = rho.re;
            atoms[(m + k, 2 * a)] = rho.im;
            atoms[(k, 2 * a + 1)] = -rho.im;
            atoms[(m + k, 2 * a + 1)] = rho.re;
        }
    }
    atoms
}

/// Real embedding `[[Re H, −Im H], [Im H, Re H]]` of a Hermitian matrix.
fn embed(h: &DMatrix<C64>) -> DMatrix<f64> {
    let m = h.nrows();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let v = h[(i, j)];
            out[(i, j)] = v.re;
            out[(m + i, m + j)] = v.re;
            out[(i, m + j)] = -v.im;
            out[(m + i, j)] = v.im;
        }
    }
    linalg::symmetrize(&out)
}

/// Searches for multipliers λ ≥ 0 satisfying the frequency condition on the
/// grid (plus ω = ∞), independently of any storage matrix.
pub fn freq_domain_feasibility(
    plant: &LtiSystem,
    bounds: &GradientBoundSet,
    gamma: f64,
    omegas: &[f64],
    opts: &FeasibilityOptions,
) -> Result<FreqVerdict> {
    let lmi = checked_lmi(plant, bounds, gamma)?;
    let n_q = lmi.n_q();
    let t_var = n_q;
    let n_vars = n_q + 1;
    let pi0 = lmi.constant.map(|v| C64::new(v, 0.0));
    let points: Vec<Option<f64>> = omegas.iter().map(|w| Some(*w)).chain(std::iter::once(None)).collect();
    let mut blocks = points
        .par_iter()
        .map(|w| -> Result<LmiBlock> {
            let n = n_matrix(&lmi, &plant.a, *w)?;
            let m2 = 2 * n.ncols();
            let h0 = embed(&(n.adjoint() * &pi0 * &n));
            let mut blk = LmiBlock::new(-h0, embedded_atoms(&n));
            let hat = |a: usize| m2 + 2 * a;
            let chk = |a: usize| m2 + 2 * a + 1;
            for r in 0..n_q {
                let mut terms = Vec::new();
                for t in lmi.lambda_terms(r) {
                    if t.coef != 0.0 {
                        terms.push(Term::new(-t.coef, hat(t.a), hat(t.b)));
                        terms.push(Term::new(-t.coef, chk(t.a), chk(t.b)));
                    }
                }
                blk.push_var(r, terms);
            }
            blk.push_var(t_var, (0..m2).map(|i| Term::new(1.0, i, i)).collect());
            Ok(blk)
        })
        .collect::<Result<Vec<_>>>()?;
    let radius = opts.box_radius.unwrap_or_else(|| (10.0 * n_q as f64).max(1e4));
    for r in 0..n_q {
        blocks.push(LmiBlock::scalar(0.0, &[(r, 1.0)]));
    }
    let box_coefs: Vec<(usize, f64)> = (0..n_q).map(|r| (r, -1.0)).collect();
    blocks.push(LmiBlock::scalar(radius, &box_coefs));

    let mut x0 = DVector::from_element(n_vars, 1.0);
    x0[t_var] = 0.0;
    let top = blocks[..points.len()]
        .iter()
        .map(|b| linalg::max_sym_eig(&(-b.value(&x0))))
        .fold(f64::NEG_INFINITY, f64::max);
    x0[t_var] = top + top.abs().max(1.0);
    let mut objective = DVector::zeros(n_vars);
    objective[t_var] = 1.0;
    let problem = BarrierProblem {
        n_vars,
        objective,
        blocks,
    };
    let eps = opts.eps_feas;
    let report = sdp::solve_barrier(&problem, x0, &opts.barrier, |it| {
        let t = it.x[t_var];
        let lower = t - it.gap;
        if (t < -eps && t <= 0.5 * lower) || lower > -eps {
            Control::Stop
        } else {
            Control::Continue
        }
    });
    let t = report.x[t_var];
    let mut lambda = DMatrix::zeros(lmi.n_a, lmi.n_s);
    for (r, &(i, j)) in lmi.q_entries.iter().enumerate() {
        lambda[(i, j)] = report.x[r];
    }
    let verdict = if t < -eps {
        Verdict::Feasible
    } else if let Outcome::Failed(msg) = report.outcome {
        Verdict::NumericalFailure(msg)
    } else {
        Verdict::Infeasible
    };
    Ok(FreqVerdict {
        feasible: verdict == Verdict::Feasible,
        verdict,
        t_value: t,
        lambda,
    })
}
