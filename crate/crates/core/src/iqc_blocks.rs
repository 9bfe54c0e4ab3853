//! Integral quadratic constraints as (Ψ, M) factorisations.
//!
//! A block is a stable filter
//!
//! ```text
//!   ψ̇ = A_ψ ψ + B_ψ^y y + B_ψ^v v,    z = C_ψ ψ + D_ψ^y y + D_ψ^v v
//! ```
//!
//! with a symmetric middle matrix `M`; the nonlinearity `v = φ(y)` satisfies
//! the hard IQC when `∫₀ᵀ zᵀ M z dt ≥ 0` for every `T` and ψ(0) = 0.
//!
//! Each block also records which residual channels it acts on and how its
//! output rows split into independent multiplier groups; the certifier
//! assigns every group its own non-negative weight.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, invalid, Result};
use crate::linalg;
use crate::system_model::is_hurwitz;

/// An IQC filter plus middle matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct IqcBlock {
    pub a_psi: DMatrix<f64>,
    pub b_psi_y: DMatrix<f64>,
    pub b_psi_v: DMatrix<f64>,
    pub c_psi: DMatrix<f64>,
    pub d_psi_y: DMatrix<f64>,
    pub d_psi_v: DMatrix<f64>,
    pub m: DMatrix<f64>,
    /// Residual channels driving the filter, in input order.
    pub channels: Vec<usize>,
    /// Row ranges of `z` that carry independent multipliers.
    pub groups: Vec<Range<usize>>,
}

impl IqcBlock {
    /// Builds and validates a block. `channels` may be empty for blocks whose
    /// input/output widths differ (they cannot be attached to residuals).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a_psi: DMatrix<f64>,
        b_psi_y: DMatrix<f64>,
        b_psi_v: DMatrix<f64>,
        c_psi: DMatrix<f64>,
        d_psi_y: DMatrix<f64>,
        d_psi_v: DMatrix<f64>,
        m: DMatrix<f64>,
        channels: Vec<usize>,
        groups: Vec<Range<usize>>,
    ) -> Result<Self> {
        linalg::ensure_square(&a_psi, "A_psi")?;
        let n_psi = a_psi.nrows();
        let n_y = d_psi_y.ncols();
        let n_v = d_psi_v.ncols();
        let n_z = m.nrows();
        let ok = b_psi_y.shape() == (n_psi, n_y)
            && b_psi_v.shape() == (n_psi, n_v)
            && c_psi.shape() == (n_z, n_psi)
            && d_psi_y.nrows() == n_z
            && d_psi_v.nrows() == n_z
            && m.ncols() == n_z;
        if !ok {
            return Err(dim_err("IQC filter matrices are inconsistent"));
        }
        if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
            return Err(invalid("IQC middle matrix must be symmetric"));
        }
        if n_psi > 0 && !is_hurwitz(&a_psi)? {
            return Err(invalid("IQC filter must be stable"));
        }
        if !channels.is_empty() && (channels.len() != n_y || channels.len() != n_v) {
            return Err(dim_err("channel list must match the filter input widths"));
        }
        let mut cursor = 0;
        for g in &groups {
            if g.start != cursor || g.end <= g.start {
                return Err(invalid("multiplier groups must tile the output rows"));
            }
            cursor = g.end;
        }
        if cursor != n_z {
            return Err(invalid("multiplier groups must tile the output rows"));
        }
        Ok(Self {
            a_psi,
            b_psi_y,
            b_psi_v,
            c_psi,
            d_psi_y,
            d_psi_v,
            m,
            channels,
            groups,
        })
    }

    pub fn n_psi(&self) -> usize {
        self.a_psi.nrows()
    }

    pub fn n_z(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.d_psi_y.ncols()
    }

    pub fn n_v(&self) -> usize {
        self.d_psi_v.ncols()
    }

    /// Copy acting on residual channel `k` (single-channel blocks only).
    pub fn on_channel(&self, k: usize) -> Result<Self> {
        if self.n_y() != 1 || self.n_v() != 1 {
            return Err(dim_err("on_channel requires a single-channel block"));
        }
        let mut b = self.clone();
        b.channels = vec![k];
        Ok(b)
    }

    /// Middle matrix of one multiplier group.
    pub fn group_m(&self, g: usize) -> DMatrix<f64> {
        let r = &self.groups[g];
        self.m.view((r.start, r.start), (r.len(), r.len())).into_owned()
    }

    /// Filters sampled signals (uniform step `h`, linear interpolation of the
    /// inputs between samples, RK4) and returns the IQC outputs `z_k`.
    pub fn filter(&self, y: &[DVector<f64>], v: &[DVector<f64>], h: f64) -> Vec<DVector<f64>> {
        let n = y.len().min(v.len());
        let mut psi = DVector::zeros(self.n_psi());
        let mut out = Vec::with_capacity(n);
        let drift = |psi: &DVector<f64>, yy: &DVector<f64>, vv: &DVector<f64>| {
            &self.a_psi * psi + &self.b_psi_y * yy + &self.b_psi_v * vv
        };
        for k in 0..n {
            out.push(&self.c_psi * &psi + &self.d_psi_y * &y[k] + &self.d_psi_v * &v[k]);
            if k + 1 == n || self.n_psi() == 0 {
                continue;
            }
            let ym = (&y[k] + &y[k + 1]) * 0.5;
            let vm = (&v[k] + &v[k + 1]) * 0.5;
            let k1 = drift(&psi, &y[k], &v[k]);
            let k2 = drift(&(&psi + &k1 * (h / 2.0)), &ym, &vm);
            let k3 = drift(&(&psi + &k2 * (h / 2.0)), &ym, &vm);
            let k4 = drift(&(&psi + &k3 * h), &y[k + 1], &v[k + 1]);
            psi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        out
    }

    /// Running trapezoidal integrals `∫₀^{t_k} zᵀ M z dt` of sampled signals.
    pub fn running_integral(&self, y: &[DVector<f64>], v: &[DVector<f64>], h: f64) -> Vec<f64> {
        let z = self.filter(y, v, h);
        let vals: Vec<f64> = z.iter().map(|zk| zk.dot(&(&self.m * zk))).collect();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(vals.len());
        for k in 0..vals.len() {
            if k > 0 {
                acc += 0.5 * h * (vals[k - 1] + vals[k]);
            }
            out.push(acc);
        }
        out
    }
}

/// Static sector IQC for `v = φ(y)` with `φ(y)/y ∈ [α, β]`:
/// `z = [y; v]`, `M = [[−2αβ, α+β], [α+β, −2]]`.
pub fn sector_iqc(alpha: f64, beta: f64) -> Result<IqcBlock> {
    if !(alpha.is_finite() && beta.is_finite()) || alpha > beta {
        return Err(invalid("sector IQC requires finite α ≤ β"));
    }
    IqcBlock::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, 1),
        DMatrix::zeros(0, 1),
        DMatrix::zeros(2, 0),
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[-2.0 * alpha * beta, alpha + beta, alpha + beta, -2.0]),
        vec![0],
        vec![0..2],
    )
}

/// Static L2-gain IQC for an operator `R^n → R^m` of gain `γ`:
/// `z = [y; v]`, `M = diag(λ₀γ² I_n, −λ₀ I_m)`.
pub fn l2_gain_iqc(gamma: f64, n: usize, m: usize, lambda0: f64) -> Result<IqcBlock> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("L2-gain IQC requires γ ≥ 0"));
    }
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(invalid("L2-gain IQC requires λ₀ > 0"));
    }
    if n == 0 || m == 0 {
        return Err(dim_err("L2-gain IQC needs positive dimensions"));
    }
    let nz = n + m;
    let mut dy = DMatrix::zeros(nz, n);
    dy.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut dv = DMatrix::zeros(nz, m);
    dv.view_mut((n, 0), (m, m)).fill_with_identity();
    let mut mm = DMatrix::zeros(nz, nz);
    for k in 0..n {
        mm[(k, k)] = lambda0 * gamma * gamma;
    }
    for k in n..nz {
        mm[(k, k)] = -lambda0;
    }
    let channels = if n == m { (0..n).collect() } else { Vec::new() };
    IqcBlock::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, n),
        DMatrix::zeros(0, m),
        DMatrix::zeros(nz, 0),
        dy,
        dv,
        mm,
        channels,
        vec![0..nz],
    )
}

/// First-order causal Zames–Falb IQC for a slope-restricted `φ` with
/// `φ' ∈ [m_lo, m_hi]`, `φ(0) = 0`.
///
/// The loop-shifted `φ̃ = φ − m_lo·y` has slope in `[0, k]`, `k = m_hi − m_lo`.
/// With `h(t) = p e^{−pt}` (unit L1 norm) the filter realises
///
/// ```text
///   z = [k y − φ̃;  φ̃ − h ∗ φ̃],   M = [[0, 1], [1, 0]].
/// ```
///
/// `pole = f64::INFINITY` requests the memoryless limit and returns
/// [`sector_iqc`]`(m_lo, m_hi)` unchanged.
pub fn zames_falb_iqc(m_lo: f64, m_hi: f64, pole: f64) -> Result<IqcBlock> {
    if !(m_lo.is_finite() && m_hi.is_finite()) || m_hi < m_lo {
        return Err(invalid("Zames–Falb IQC requires finite m_lo ≤ m_hi"));
    }
    if pole == f64::INFINITY {
        return sector_iqc(m_lo, m_hi);
    }
    if !(pole > 0.0 && pole.is_finite()) {
        return Err(invalid("Zames–Falb pole must be positive"));
    }
    IqcBlock::new(
        DMatrix::from_element(1, 1, -pole),
        DMatrix::from_element(1, 1, -pole * m_lo),
        DMatrix::from_element(1, 1, pole),
        DMatrix::from_column_slice(2, 1, &[0.0, -1.0]),
        DMatrix::from_column_slice(2, 1, &[m_hi, -m_lo]),
        DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        vec![0],
        vec![0..2],
    )
}

/// Conic combination of blocks: filters stacked block-diagonally, channel
/// inputs merged by channel index (blocks on the same channel share inputs,
/// blocks on disjoint channels become block-diagonal), `M = diag(τ_k M_k)`.
pub fn combine(blocks: &[IqcBlock], taus: &[f64]) -> Result<IqcBlock> {
    if blocks.len() != taus.len() {
        return Err(dim_err("one weight per block is required"));
    }
    if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("combination weights must be non-negative"));
    }
    if blocks.iter().any(|b| b.channels.is_empty()) {
        return Err(dim_err("only channel-attached blocks can be combined"));
    }
    if blocks.len() == 1 && taus[0] == 1.0 {
        return Ok(blocks[0].clone());
    }
    let mut channels: Vec<usize> = blocks.iter().flat_map(|b| b.channels.iter().copied()).collect();
    channels.sort_unstable();
    channels.dedup();
    let n_ch = channels.len();
    let n_psi: usize = blocks.iter().map(|b| b.n_psi()).sum();
    let n_z: usize = blocks.iter().map(|b| b.n_z()).sum();
    let mut a = DMatrix::zeros(n_psi, n_psi);
    let mut by = DMatrix::zeros(n_psi, n_ch);
    let mut bv = DMatrix::zeros(n_psi, n_ch);
    let mut c = DMatrix::zeros(n_z, n_psi);
    let mut dy = DMatrix::zeros(n_z, n_ch);
    let mut dv = DMatrix::zeros(n_z, n_ch);
    let mut m = DMatrix::zeros(n_z, n_z);
    let mut groups = Vec::new();
    let (mut ps, mut zs) = (0, 0);
    for (b, &tau) in blocks.iter().zip(taus) {
        let (np, nz) = (b.n_psi(), b.n_z());
        a.view_mut((ps, ps), (np, np)).copy_from(&b.a_psi);
        c.view_mut((zs, ps), (nz, np)).copy_from(&b.c_psi);
        m.view_mut((zs, zs), (nz, nz)).copy_from(&(&b.m * tau));
        for (col, ch) in b.channels.iter().enumerate() {
            let dst = channels.binary_search(ch).expect("channel present");
            for r in 0..np {
                by[(ps + r, dst)] += b.b_psi_y[(r, col)];
                bv[(ps + r, dst)] += b.b_psi_v[(r, col)];
            }
            for r in 0..nz {
                dy[(zs + r, dst)] += b.d_psi_y[(r, col)];
                dv[(zs + r, dst)] += b.d_psi_v[(r, col)];
            }
        }
        groups.extend(b.groups.iter().map(|g| (g.start + zs)..(g.end + zs)));
        ps += np;
        zs += nz;
    }
    IqcBlock::new(a, by, bv, c, dy, dv, m, channels, groups)
}

/// Copies of a single-channel block on each listed channel, unit weights.
pub fn replicate(block: &IqcBlock, channels: &[usize]) -> Result<IqcBlock> {
    let copies = channels
        .iter()
        .map(|&k| block.on_channel(k))
        .collect::<Result<Vec<_>>>()?;
    combine(&copies, &vec![1.0; copies.len()])
}

/// The identity pass-through filter on `n` channels with a zero middle
/// matrix: it constrains nothing and adds no filter states.
pub fn static_identity(n: usize) -> Result<IqcBlock> {
    let mut dy = DMatrix::zeros(2 * n, n);
    let mut dv = DMatrix::zeros(2 * n, n);
    dy.view_mut((0, 0), (n, n)).fill_with_identity();
    dv.view_mut((n, 0), (n, n)).fill_with_identity();
    let groups = if n == 0 { Vec::new() } else { vec![0..2 * n] };
    IqcBlock::new(
        DMatrix::zeros(0, 0),
        DMatrix::zeros(0, n),
        DMatrix::zeros(0, n),
        DMatrix::zeros(2 * n, 0),
        dy,
        dv,
        DMatrix::zeros(2 * n, 2 * n),
        (0..n).collect(),
        groups,
    )
}
