//! Margin sweeps over a one-parameter family of gradient bounds.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Certificate, FeasibilityOptions, LoopModel, Verdict};
use crate::error::{invalid, Result};
use crate::gradient_bounds::{GradientBoundSet, SignClass};

/// How the Lipschitz level `l` is turned into per-entry bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// `[-l, l]` on every entry.
    #[serde(alias = "l2")]
    L2Only,
    /// `[-l, l]` on observed entries, zero elsewhere.
    Sparsity,
    /// One-sided `[-εl, l]` / `[-l, εl]` from a sign pattern.
    #[serde(alias = "nonhom")]
    Nonhomogeneous,
}

impl ConstraintMode {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintMode::L2Only => "l2_only",
            ConstraintMode::Sparsity => "sparsity",
            ConstraintMode::Nonhomogeneous => "nonhomogeneous",
        }
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "l2_only" => Ok(Self::L2Only),
            "sparsity" => Ok(Self::Sparsity),
            "nonhom" | "nonhomogeneous" => Ok(Self::Nonhomogeneous),
            other => Err(invalid(format!("unknown constraint mode '{other}'"))),
        }
    }
}

/// A family `l ↦ ξ(l)` of bounds, linear in `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsFamily {
    Uniform { n_a: usize, n_s: usize },
    Masked { mask: Vec<Vec<bool>>, n_s: usize },
    Pattern { pattern: Vec<Vec<SignClass>>, n_s: usize, eps: f64 },
}

impl BoundsFamily {
    pub fn mode(&self) -> ConstraintMode {
        match self {
            BoundsFamily::Uniform { .. } => ConstraintMode::L2Only,
            BoundsFamily::Masked { .. } => ConstraintMode::Sparsity,
            BoundsFamily::Pattern { .. } => ConstraintMode::Nonhomogeneous,
        }
    }

    pub fn at(&self, l: f64) -> Result<GradientBoundSet> {
        match self {
            BoundsFamily::Uniform { n_a, n_s } => GradientBoundSet::uniform(*n_a, *n_s, l),
            BoundsFamily::Masked { mask, n_s } => GradientBoundSet::masked(mask, *n_s, l),
            BoundsFamily::Pattern { pattern, n_s, eps } => GradientBoundSet::from_pattern(pattern, *n_s, l, *eps),
        }
    }
}

/// Result at one level of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub l: f64,
    pub feasible: bool,
    /// Certified γ (None when not certified).
    pub gamma: Option<f64>,
    pub verdict: Verdict,
    pub solve_ms: f64,
}

/// A certified-margin curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginCurve {
    pub mode: ConstraintMode,
    pub points: Vec<MarginPoint>,
}

impl MarginCurve {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.l).collect()
    }

    /// Largest level such that it and every smaller grid level are certified.
    pub fn max_feasible_level(&self) -> Option<f64> {
        self.points
            .iter()
            .take_while(|p| p.feasible)
            .last()
            .map(|p| p.l)
    }

    /// True when infeasibility is upward closed along the grid.
    pub fn is_monotone(&self) -> bool {
        let first_bad = self.points.iter().position(|p| !p.feasible);
        match first_bad {
            None => true,
            Some(k) => self.points[k..].iter().all(|p| !p.feasible),
        }
    }
}

/// Certifies every level of `grid` (in parallel) and returns the curve.
///
/// Each level is first tested at `gamma_hi`; certified levels are then
/// refined by [`super::bisect_gamma`] over `[gamma_lo, gamma_hi]`.
pub fn sweep_margin(
    model: &LoopModel,
    family: &BoundsFamily,
    grid: &[f64],
    gamma_lo: f64,
    gamma_hi: f64,
    tol: f64,
    opts: &FeasibilityOptions,
) -> Result<MarginCurve> {
    if grid.is_empty() {
        return Err(invalid("level grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid[0] < 0.0 {
        return Err(invalid("level grid must be non-negative and strictly increasing"));
    }
    let points = grid
        .par_iter()
        .map(|&l| -> Result<MarginPoint> {
            let start = Instant::now();
            let bounds = family.at(l)?;
            let top = model.certify_at(&bounds, gamma_hi, opts)?;
            let cert: Certificate = if top.feasible {
                model.certify(&bounds, gamma_lo, gamma_hi, tol, opts)?
            } else {
                top
            };
            Ok(MarginPoint {
                l,
                feasible: cert.feasible,
                gamma: cert.feasible.then_some(cert.gamma),
                verdict: cert.verdict,
                solve_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MarginCurve {
        mode: family.mode(),
        points,
    })
}

/// Result of a search for the largest certified level.
#[derive(Clone, Debug)]
pub struct LevelSearch {
    /// Largest level certified at `gamma_hi`.
    pub level: f64,
    /// Smallest level found not certifiable (∞ if the cap was reached).
    pub refuted: f64,
    pub certificate: Option<Certificate>,
    pub evaluations: usize,
    pub numerical_failures: usize,
}

/// Largest `l` with a certificate at `gamma_hi`, located by doubling from
/// `l_start` and bisecting until the bracket ratio is within `1 + rel_tol`.
pub fn max_certified_level(
    model: &LoopModel,
    family: &BoundsFamily,
    gamma_hi: f64,
    l_start: f64,
    l_cap: f64,
    rel_tol: f64,
    opts: &FeasibilityOptions,
) -> Result<LevelSearch> {
    if !(l_start > 0.0 && l_cap >= l_start && rel_tol > 0.0) {
        return Err(invalid("level search needs 0 < l_start ≤ l_cap and rel_tol > 0"));
    }
    let mut evals = 0;
    let mut failures = 0;
    let mut test = |l: f64| -> Result<Certificate> {
        let c = model.certify_at(&family.at(l)?, gamma_hi, opts)?;
        evals += 1;
        if matches!(c.verdict, Verdict::NumericalFailure(_)) {
            failures += 1;
        }
        Ok(c)
    };
    let mut lo = 0.0;
    let mut best = None;
    let mut hi = f64::INFINITY;
    let mut l = l_start;
    // Bracket.
    loop {
        let c = test(l)?;
        if c.feasible {
            lo = l;
            best = Some(c);
            if l >= l_cap {
                break;
            }
            l = (2.0 * l).min(l_cap);
        } else {
            hi = l;
            if best.is_some() || l < 1e-9 {
                break;
            }
            l *= 0.5;
        }
    }
    if best.is_some() && hi.is_finite() {
        while hi / lo > 1.0 + rel_tol {
            let mid = (lo * hi).sqrt();
            let c = test(mid)?;
            if c.feasible {
                lo = mid;
                best = Some(c);
            } else {
                hi = mid;
            }
        }
    }
    Ok(LevelSearch {
        level: lo,
        refuted: hi,
        certificate: best,
        evaluations: evals,
        numerical_failures: failures,
    })
}
