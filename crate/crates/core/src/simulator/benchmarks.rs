//! The two bundled benchmarks: a four-aircraft flight formation and a
//! multi-machine power network governed by the swing equation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Dynamics, QuadraticCost};
use crate::certifier::{BoundsFamily, LoopModel};
use crate::error::{invalid, Result};
use crate::gradient_bounds::SignClass;
use crate::iqc_blocks::{combine, replicate, sector_iqc, zames_falb_iqc, IqcBlock};
use crate::system_model::{
    nominal_controller, LtiSystem, NominalMethod, NonlinearBlock, ResidualChannel, ResidualKind,
};

/// Aircraft coefficients `(α, β, γ, δ)` of the longitudinal model.
pub const FLIGHT_PARAMS: (f64, f64, f64, f64) = (90.62, -42.15, -13.22, 0.1);

/// Which IQC covers the benchmark's residual channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IqcChoice {
    /// Static slope sector per channel.
    Sector,
    /// First-order Zames–Falb block per channel.
    ZamesFalb { pole: f64 },
    /// Sector and Zames–Falb blocks per channel, independently weighted.
    Combined { pole: f64 },
}

impl Default for IqcChoice {
    fn default() -> Self {
        IqcChoice::Combined { pole: 1.0 }
    }
}

/// A benchmark plant with its nominal controller, residuals and cost.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: String,
    /// Open-loop linearisation `(A, B)`.
    pub open_loop: LtiSystem,
    pub nominal_gain: DMatrix<f64>,
    /// `A + B K_n`, the plant seen by the learned controller.
    pub closed_loop: LtiSystem,
    pub residuals: NonlinearBlock,
    pub cost: QuadraticCost,
    /// `obs_mask[i][j]`: agent `i` observes state `j`.
    pub obs_mask: Vec<Vec<bool>>,
    /// Default sign pattern of the learned controller's partial gradients.
    pub sign_pattern: Vec<Vec<SignClass>>,
}

impl Benchmark {
    pub fn n_s(&self) -> usize {
        self.closed_loop.n_s()
    }

    pub fn n_a(&self) -> usize {
        self.closed_loop.n_a()
    }

    /// Closed-loop dynamics (nominal feedback folded in) for simulation.
    pub fn dynamics(&self) -> Dynamics {
        Dynamics {
            plant: self.closed_loop.clone(),
            residuals: self.residuals.clone(),
        }
    }

    /// IQC filter covering every residual channel.
    pub fn iqc(&self, choice: IqcChoice) -> Result<IqcBlock> {
        let sectors = self.residuals.slope_sectors();
        let per_channel = sectors
            .iter()
            .enumerate()
            .map(|(k, &(lo, hi))| {
                let block = match choice {
                    IqcChoice::Sector => sector_iqc(lo, hi)?,
                    IqcChoice::ZamesFalb { pole } => zames_falb_iqc(lo, hi, pole)?,
                    IqcChoice::Combined { pole } => {
                        combine(&[sector_iqc(lo, hi)?, zames_falb_iqc(lo, hi, pole)?], &[1.0, 1.0])?
                    }
                };
                replicate(&block, &[k])
            })
            .collect::<Result<Vec<_>>>()?;
        combine(&per_channel, &vec![1.0; per_channel.len()])
    }

    /// Nonlinear loop model for certification.
    pub fn loop_model(&self, choice: IqcChoice) -> Result<LoopModel> {
        LoopModel::nonlinear(self.closed_loop.clone(), self.residuals.clone(), self.iqc(choice)?)
    }

    /// The bound family for each constraint mode.
    pub fn family(&self, mode: crate::certifier::ConstraintMode, eps: f64) -> BoundsFamily {
        use crate::certifier::ConstraintMode::*;
        let (n_a, n_s) = (self.n_a(), self.n_s());
        match mode {
            L2Only => BoundsFamily::Uniform { n_a, n_s },
            Sparsity => BoundsFamily::Masked {
                mask: self.obs_mask.clone(),
                n_s,
            },
            Nonhomogeneous => BoundsFamily::Pattern {
                pattern: self.sign_pattern.clone(),
                n_s,
                eps,
            },
        }
    }
}

fn finish(
    name: &str,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    (q, r): (DMatrix<f64>, DMatrix<f64>),
    cost: QuadraticCost,
    channels: Vec<ResidualChannel>,
    obs_mask: Vec<Vec<bool>>,
) -> Result<Benchmark> {
    let open_loop = LtiSystem::new(a, b, None)?;
    let nominal_gain = nominal_controller(&open_loop, &NominalMethod::Lqr { q, r })?;
    let closed_loop = open_loop.with_feedback(&nominal_gain)?;
    let residuals = NonlinearBlock::new(open_loop.n_s(), channels)?;
    let sign_pattern = nominal_sign_pattern(&nominal_gain, &obs_mask);
    Ok(Benchmark {
        name: name.to_string(),
        open_loop,
        nominal_gain,
        closed_loop,
        residuals,
        cost,
        obs_mask,
        sign_pattern,
    })
}

/// Sign pattern of the nominal gain on the observed entries: the learned
/// correction is expected to push in the same direction as the nominal
/// feedback. Entries where the nominal gain vanishes are left mixed.
pub fn nominal_sign_pattern(gain: &DMatrix<f64>, obs_mask: &[Vec<bool>]) -> Vec<Vec<SignClass>> {
    obs_mask
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &seen)| {
                    let k = gain[(i, j)];
                    if !seen {
                        SignClass::Zero
                    } else if k > 0.0 {
                        SignClass::Positive
                    } else if k < 0.0 {
                        SignClass::Negative
                    } else {
                        SignClass::Mixed
                    }
                })
                .collect()
        })
        .collect()
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Four-aircraft formation: three 4-state followers (relative distance,
/// velocity, pitch, pitch rate) and a 3-state leader, `n_s = 15`, `n_a = 4`.
///
/// Each aircraft contributes one `sin θ − θ` residual on its pitch-rate row,
/// valid for `|θ| ≤ π/2`. Agents observe only the relative distances to
/// their neighbours. The nominal gain is LQR with `Q = 1000·I`, `R = I`.
pub fn build_flight() -> Result<Benchmark> {
    let (al, be, ga, de) = FLIGHT_PARAMS;
    let n_s = 15;
    let n_a = 4;
    let mut a = DMatrix::zeros(n_s, n_s);
    let mut b = DMatrix::zeros(n_s, n_a);
    let follower = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            0.0, al, be, ga, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, al / de, (be + 1.0) / de, ga / de,
        ],
    );
    let leader = DMatrix::from_row_slice(
        3,
        3,
        &[
            al, be, ga, //
            0.0, 0.0, 1.0, //
            al / de, (be + 1.0) / de, ga / de,
        ],
    );
    let mut channels = Vec::new();
    for i in 0..3 {
        let o = 4 * i;
        a.view_mut((o, o), (4, 4)).copy_from(&follower);
        // Relative distance rate subtracts the next aircraft's velocity.
        a[(o, o + 5)] = -1.0;
        b[(o + 1, i)] = 1.0;
        b[(o + 3, i)] = 1.0 / de;
        channels.push(ResidualChannel {
            kind: ResidualKind::SinMinusIdentity,
            argument: unit(n_s, o + 2),
            input: unit(n_s, o + 3),
            domain: std::f64::consts::FRAC_PI_2,
        });
    }
    let o = 12;
    a.view_mut((o, o), (3, 3)).copy_from(&leader);
    b[(o, 3)] = 1.0;
    b[(o + 2, 3)] = 1.0 / de;
    channels.push(ResidualChannel {
        kind: ResidualKind::SinMinusIdentity,
        argument: unit(n_s, o + 1),
        input: unit(n_s, o + 2),
        domain: std::f64::consts::FRAC_PI_2,
    });
    let observed: [&[usize]; 4] = [&[0], &[0, 4], &[4, 8], &[8]];
    let obs_mask: Vec<Vec<bool>> = observed
        .iter()
        .map(|js| (0..n_s).map(|j| js.contains(&j)).collect())
        .collect();
    finish(
        "flight4",
        a,
        b,
        (DMatrix::identity(n_s, n_s) * 1000.0, DMatrix::identity(n_a, n_a)),
        QuadraticCost {
            q: DMatrix::identity(n_s, n_s) * 1000.0,
            r: DMatrix::identity(n_a, n_a),
        },
        channels,
        obs_mask,
    )
}

/// Parameters of a swing-equation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNetwork {
    /// Inertia `m_i` per generator.
    pub inertia: Vec<f64>,
    /// Damping `d_i` per generator.
    pub damping: Vec<f64>,
    /// Lines `(i, j, b_ij)`.
    pub lines: Vec<(usize, usize, f64)>,
    /// Index of the communication hub; `None` gives fully local observation.
    pub hub: Option<usize>,
    /// Phase-difference cap `θ̄` of the residual validity domain.
    pub theta_bar: f64,
    /// Nominal LQR weights `Q = q·I`, `R = r·I`.
    pub nominal_q: f64,
    pub nominal_r: f64,
    /// Learning cost weights `Q = q·I`, `R = r·I`.
    pub cost_q: f64,
    pub cost_r: f64,
}

impl PowerNetwork {
    /// The bundled ten-generator meshed network with star communication
    /// centred on the last generator.
    pub fn ten_generator() -> Self {
        Self {
            inertia: vec![4.2, 3.0, 3.6, 2.9, 2.6, 3.5, 2.6, 2.4, 3.4, 4.6],
            damping: vec![1.0, 0.8, 0.9, 0.8, 0.7, 0.9, 0.7, 0.6, 0.8, 1.1],
            lines: vec![
                (0, 1, 1.6),
                (1, 2, 1.4),
                (2, 3, 1.5),
                (3, 4, 1.2),
                (4, 5, 1.3),
                (5, 6, 1.5),
                (6, 7, 1.1),
                (7, 8, 1.4),
                (8, 9, 1.7),
                (9, 0, 1.5),
                (0, 5, 0.9),
                (2, 7, 0.8),
                (4, 9, 1.0),
            ],
            hub: Some(9),
            theta_bar: std::f64::consts::FRAC_PI_3,
            nominal_q: 1.0,
            nominal_r: 1.0,
            cost_q: 10.0,
            cost_r: 0.1,
        }
    }

    pub fn n_gen(&self) -> usize {
        self.inertia.len()
    }

    /// Weighted Laplacian `L`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_gen();
        let mut l = DMatrix::zeros(n, n);
        for &(i, j, bij) in &self.lines {
            l[(i, i)] += bij;
            l[(j, j)] += bij;
            l[(i, j)] -= bij;
            l[(j, i)] -= bij;
        }
        l
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_gen();
        if n < 2 || self.damping.len() != n {
            return Err(invalid("power network needs ≥ 2 generators with one damping each"));
        }
        if self.inertia.iter().chain(&self.damping).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("inertias and dampings must be positive"));
        }
        if self.lines.iter().any(|&(i, j, b)| i >= n || j >= n || i == j || !(b > 0.0)) {
            return Err(invalid("lines must join distinct generators with positive susceptance"));
        }
        if self.hub.is_some_and(|h| h >= n) {
            return Err(invalid("hub index out of range"));
        }
        if !(self.theta_bar > 0.0 && self.theta_bar <= std::f64::consts::PI) {
            return Err(invalid("θ̄ must lie in (0, π]"));
        }
        // Connectivity by flood fill.
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &(i, j, _) in &self.lines {
                for (a, b) in [(i, j), (j, i)] {
                    if a == k && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("power network topology is disconnected"));
        }
        Ok(())
    }
}

/// Swing-equation network with state `[θ; ω]`, inputs the mechanical power
/// of each generator, and one `Δθ − sin Δθ` residual per line.
///
/// `A = [[0, I], [−M⁻¹L, −M⁻¹D]]`, `B = [0; M⁻¹]`. Generator `i` observes
/// its own angle and frequency and, with a hub, the hub's; the hub observes
/// every generator.
pub fn build_power(net: &PowerNetwork) -> Result<Benchmark> {
    net.validate()?;
    let n = net.n_gen();
    let n_s = 2 * n;
    let lap = net.laplacian();
    let mut a = DMatrix::zeros(n_s, n_s);
    let mut b = DMatrix::zeros(n_s, n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
        a[(n + i, n + i)] = -net.damping[i] / net.inertia[i];
        for j in 0..n {
            a[(n + i, j)] = -lap[(i, j)] / net.inertia[i];
        }
        b[(n + i, i)] = 1.0 / net.inertia[i];
    }
    let channels = net
        .lines
        .iter()
        .map(|&(i, j, bij)| {
            let mut argument = vec![0.0; n_s];
            argument[i] = 1.0;
            argument[j] = -1.0;
            let mut input = vec![0.0; n_s];
            input[n + i] = bij / net.inertia[i];
            input[n + j] = -bij / net.inertia[j];
            ResidualChannel {
                kind: ResidualKind::IdentityMinusSin,
                argument,
                input,
                domain: net.theta_bar,
            }
        })
        .collect();
    let obs_mask: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n_s)
                .map(|j| {
                    let g = j % n;
                    match net.hub {
                        Some(h) if i == h => true,
                        Some(h) => g == i || g == h,
                        None => g == i,
                    }
                })
                .collect()
        })
        .collect();
    finish(
        "power_swing",
        a,
        b,
        (DMatrix::identity(n_s, n_s) * net.nominal_q, DMatrix::identity(n, n) * net.nominal_r),
        QuadraticCost {
            q: DMatrix::identity(n_s, n_s) * net.cost_q,
            r: DMatrix::identity(n, n) * net.cost_r,
        },
        channels,
        obs_mask,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn flight_dimensions_and_spectrum() {
        let bm = build_flight().unwrap();
        assert_eq!((bm.n_s(), bm.n_a()), (15, 4));
        assert_eq!(bm.residuals.n_v(), 4);
        assert!(linalg::spectral_abscissa(&bm.closed_loop.a).unwrap() < 0.0);
    }

    #[test]
    fn power_laplacian_has_zero_row_sums() {
        let net = PowerNetwork::ten_generator();
        let l = net.laplacian();
        for i in 0..net.n_gen() {
            assert!(l.row(i).sum().abs() < 1e-12);
        }
        let bm = build_power(&net).unwrap();
        assert_eq!((bm.n_s(), bm.n_a()), (20, 10));
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let mut net = PowerNetwork::ten_generator();
        net.lines.retain(|&(i, j, _)| i != 9 && j != 9);
        assert!(build_power(&net).is_err());
    }
}
