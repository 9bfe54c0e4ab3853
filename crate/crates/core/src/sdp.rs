//! A small log-barrier interior-point engine for affine LMI constraints.
//!
//! Each constraint block is `F(x) = F₀ + Σ_i x_i F_i ≻ 0`, where every `F_i`
//! is stored as a short list of symmetric dyads `coef · sym(u_a u_bᵀ)` over a
//! shared set of *atoms* `u` (unit vectors and a few dense columns). The
//! structured representation keeps Hessian assembly cheap:
//!
//! ```text
//!   ∂/∂x_i (−log det F)         = −Σ coef·G_ab
//!   tr(F⁻¹ sym(pqᵀ) F⁻¹ sym(rsᵀ)) = ½ (G_qr G_sp + G_qs G_rp)
//! ```
//!
//! with the Gram matrix `G = Uᵀ F⁻¹ U`. The engine minimises a linear
//! objective by following the central path; a monitor callback sees every
//! centred iterate together with a duality-gap bound and may stop early.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// One symmetric dyad `coef · (u_a u_bᵀ + u_b u_aᵀ)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub a: usize,
    pub b: usize,
}

impl Term {
    pub fn new(coef: f64, a: usize, b: usize) -> Self {
        Self { coef, a, b }
    }
}

/// An affine symmetric matrix-valued constraint `F(x) ≻ 0`.
///
/// Atom `a < dim` is the unit vector `e_a`; atom `dim + k` is column `k` of
/// `extra_atoms`.
#[derive(Clone, Debug)]
pub struct LmiBlock {
    pub dim: usize,
    pub extra_atoms: DMatrix<f64>,
    pub constant: DMatrix<f64>,
    /// `(variable index, dyads)` pairs, at most one entry per variable.
    pub vars: Vec<(usize, Vec<Term>)>,
}

impl LmiBlock {
    pub fn new(constant: DMatrix<f64>, extra_atoms: DMatrix<f64>) -> Self {
        let dim = constant.nrows();
        assert_eq!(constant.ncols(), dim, "constant must be square");
        assert_eq!(extra_atoms.nrows(), dim, "atoms must have block dimension rows");
        Self {
            dim,
            extra_atoms,
            constant,
            vars: Vec::new(),
        }
    }

    /// Scalar constraint `c₀ + Σ coef_i x_i > 0`.
    pub fn scalar(c0: f64, coefs: &[(usize, f64)]) -> Self {
        let mut b = Self::new(DMatrix::from_element(1, 1, c0), DMatrix::zeros(1, 0));
        for &(v, c) in coefs {
            b.push_var(v, vec![Term::new(c, 0, 0)]);
        }
        b
    }

    pub fn n_atoms(&self) -> usize {
        self.dim + self.extra_atoms.ncols()
    }

    pub fn push_var(&mut self, var: usize, terms: Vec<Term>) {
        debug_assert!(terms.iter().all(|t| t.a < self.n_atoms() && t.b < self.n_atoms()));
        if let Some(slot) = self.vars.iter_mut().find(|(v, _)| *v == var) {
            slot.1.extend(terms);
        } else {
            self.vars.push((var, terms));
        }
    }

    /// Sum `Σ_i x_i F_i` (without the constant).
    pub fn linear_part(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let na = self.n_atoms();
        let mut c = DMatrix::zeros(na, na);
        let mut touched_extra = false;
        for (v, terms) in &self.vars {
            let xv = x[*v];
            if xv == 0.0 {
                continue;
            }
            for t in terms {
                let s = 0.5 * xv * t.coef;
                c[(t.a, t.b)] += s;
                c[(t.b, t.a)] += s;
                touched_extra |= t.a >= self.dim || t.b >= self.dim;
            }
        }
        let d = self.dim;
        let mut f = c.view((0, 0), (d, d)).into_owned();
        if touched_extra && self.extra_atoms.ncols() > 0 {
            let k = self.extra_atoms.ncols();
            let v = &self.extra_atoms;
            let c12 = c.view((0, d), (d, k));
            let c22 = c.view((d, d), (k, k));
            let x12: DMatrix<f64> = c12 * v.transpose();
            f += &x12 + x12.transpose();
            f += v * c22 * v.transpose();
        }
        f
    }

    /// `F(x)`.
    pub fn value(&self, x: &DVector<f64>) -> DMatrix<f64> {
        &self.constant + self.linear_part(x)
    }

    /// `Uᵀ Z U` for symmetric `Z`.
    fn gram(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim;
        let k = self.extra_atoms.ncols();
        if k == 0 {
            return z.clone();
        }
        let zv = z * &self.extra_atoms;
        let vzv = self.extra_atoms.transpose() * &zv;
        let mut g = DMatrix::zeros(d + k, d + k);
        g.view_mut((0, 0), (d, d)).copy_from(z);
        g.view_mut((0, d), (d, k)).copy_from(&zv);
        g.view_mut((d, 0), (k, d)).copy_from(&zv.transpose());
        g.view_mut((d, d), (k, k)).copy_from(&vzv);
        g
    }

    /// Adds this block's barrier gradient and Hessian at the point where
    /// `F⁻¹ = z`.
    fn accumulate(&self, z: &DMatrix<f64>, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        let g = self.gram(z);
        let na = g.nrows();
        let gs = g.as_slice();
        let at = |i: usize, j: usize| gs[i + j * na];
        for (v, terms) in &self.vars {
            grad[*v] -= terms.iter().map(|t| t.coef * at(t.a, t.b)).sum::<f64>();
        }
        let n = self.vars.len();
        for ii in 0..n {
            let (vi, ti) = &self.vars[ii];
            for jj in ii..n {
                let (vj, tj) = &self.vars[jj];
                let mut h = 0.0;
                for s in ti {
                    let mut inner = 0.0;
                    for r in tj {
                        inner += r.coef * (at(s.b, r.a) * at(r.b, s.a) + at(s.b, r.b) * at(r.a, s.a));
                    }
                    h += s.coef * inner;
                }
                h *= 0.5;
                hess[(*vi, *vj)] += h;
                if vi != vj {
                    hess[(*vj, *vi)] += h;
                }
            }
        }
    }
}

/// Minimise `cᵀx` subject to every block being positive definite.
#[derive(Clone, Debug)]
pub struct BarrierProblem {
    pub n_vars: usize,
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
}

impl BarrierProblem {
    /// Barrier parameter ν = Σ block dimensions.
    pub fn nu(&self) -> f64 {
        self.blocks.iter().map(|b| b.dim).sum::<usize>() as f64
    }
}

#[derive(Clone, Debug)]
pub struct BarrierOptions {
    /// Barrier-weight growth per outer iteration.
    pub mu: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    /// Stop once the duality-gap bound drops below this.
    pub gap_tol: f64,
    /// Centring threshold on the Newton decrement.
    pub center_tol: f64,
    /// Initial barrier weight; `None` picks ν / max(1, |cᵀx₀|).
    pub t0: Option<f64>,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            mu: 10.0,
            max_outer: 60,
            max_newton: 200,
            gap_tol: 1e-10,
            center_tol: 0.1,
            t0: None,
        }
    }
}

/// A centred iterate reported to the monitor.
pub struct Iterate<'a> {
    pub x: &'a DVector<f64>,
    pub objective: f64,
    /// Upper bound on `cᵀx − p*`.
    pub gap: f64,
    pub outer: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// The monitor asked to stop.
    Stopped,
    /// The duality-gap bound fell below tolerance.
    Converged,
    /// The method could not make progress.
    Failed(String),
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub outcome: Outcome,
    pub outer_iterations: usize,
    pub newton_steps: usize,
    pub gap: f64,
}

fn factor_all(blocks: &[LmiBlock], mats: &[DMatrix<f64>]) -> Option<(Vec<Cholesky<f64, Dyn>>, f64)> {
    let mut logdet = 0.0;
    let mut chols = Vec::with_capacity(blocks.len());
    for m in mats {
        let ch = m.clone().cholesky()?;
        let l = ch.l_dirty();
        let mut ld = 0.0;
        for i in 0..m.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            ld += d.ln();
        }
        logdet += 2.0 * ld;
        chols.push(ch);
    }
    Some((chols, logdet))
}

/// Runs the path-following method from the strictly feasible `x0`.
pub fn solve_barrier<M>(
    problem: &BarrierProblem,
    x0: DVector<f64>,
    opts: &BarrierOptions,
    mut monitor: M,
) -> SolveReport
where
    M: FnMut(&Iterate) -> Control,
{
    let n = problem.n_vars;
    let nu = problem.nu();
    let c = &problem.objective;
    let mut x = x0;
    let mut newton_steps = 0;
    let fail = |x: DVector<f64>, msg: String, outer: usize, steps: usize| SolveReport {
        x,
        outcome: Outcome::Failed(msg),
        outer_iterations: outer,
        newton_steps: steps,
        gap: f64::INFINITY,
    };

    let mut mats: Vec<DMatrix<f64>> = problem.blocks.iter().map(|b| b.value(&x)).collect();
    let Some((mut chols, mut logdet)) = factor_all(&problem.blocks, &mats) else {
        return fail(x, "initial point is not strictly feasible".into(), 0, 0);
    };
    let mut t = opts.t0.unwrap_or_else(|| nu / c.dot(&x).abs().max(1.0));
    let mut last_gap = f64::INFINITY;

    for outer in 0..opts.max_outer {
        // Centring by damped Newton.
        let mut decrement = f64::INFINITY;
        for _ in 0..opts.max_newton {
            let mut grad = c * t;
            let mut hess = DMatrix::zeros(n, n);
            for (blk, ch) in problem.blocks.iter().zip(&chols) {
                let z = ch.inverse();
                blk.accumulate(&z, &mut grad, &mut hess);
            }
            if grad.iter().chain(hess.iter()).any(|v| !v.is_finite()) {
                return fail(x, "non-finite barrier derivatives".into(), outer, newton_steps);
            }
            let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut reg = 0.0;
            let dx = loop {
                let mut hr = hess.clone();
                for i in 0..n {
                    hr[(i, i)] += reg;
                }
                if let Some(ch) = hr.cholesky() {
                    break ch.solve(&(-&grad));
                }
                reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
                if reg > 1e-2 * scale {
                    return fail(x, "barrier Hessian is singular".into(), outer, newton_steps);
                }
            };
            let lam2 = -grad.dot(&dx);
            if !lam2.is_finite() {
                return fail(x, "non-finite Newton decrement".into(), outer, newton_steps);
            }
            decrement = lam2.max(0.0).sqrt();
            if decrement <= opts.center_tol {
                break;
            }
            // Backtracking line search keeping every block positive definite.
            let dmats: Vec<DMatrix<f64>> =
                problem.blocks.iter().map(|b| b.linear_part(&dx)).collect();
            let phi0 = t * c.dot(&x) - logdet;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<DMatrix<f64>> = mats
                    .iter()
                    .zip(&dmats)
                    .map(|(m, d)| m + d * alpha)
                    .collect();
                if let Some((tc, tl)) = factor_all(&problem.blocks, &trial) {
                    let xt = &x + &dx * alpha;
                    let phi = t * c.dot(&xt) - tl;
                    if phi <= phi0 - 0.01 * alpha * lam2 {
                        x = xt;
                        mats = trial;
                        chols = tc;
                        logdet = tl;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            newton_steps += 1;
            if !accepted {
                // No decrease possible: already centred to working precision.
                if decrement < 1.0 {
                    break;
                }
                return fail(x, "line search failed".into(), outer, newton_steps);
            }
        }
        if decrement > opts.center_tol.max(0.5) {
            return fail(x, "centring did not converge".into(), outer, newton_steps);
        }
        let gap = (nu + 2.0 * decrement * nu.sqrt()) / t;
        last_gap = gap;
        let it = Iterate {
            x: &x,
            objective: c.dot(&x),
            gap,
            outer,
        };
        if monitor(&it) == Control::Stop {
            return SolveReport {
                x,
                outcome: Outcome::Stopped,
                outer_iterations: outer + 1,
                newton_steps,
                gap,
            };
        }
        if gap < opts.gap_tol {
            return SolveReport {
                x,
                outcome: Outcome::Converged,
                outer_iterations: outer + 1,
                newton_steps,
                gap,
            };
        }
        t *= opts.mu;
    }
    SolveReport {
        x,
        outcome: Outcome::Failed("outer iteration cap reached".into()),
        outer_iterations: opts.max_outer,
        newton_steps,
        gap: last_gap,
    }
}
