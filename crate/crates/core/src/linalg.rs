//! Dense linear-algebra helpers shared by the modules: spectra, Lyapunov and
//! Riccati solvers, symmetric eigenvalue bounds.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{dim_err, invalid, Error, Result};

/// Checks that every entry of `m` is finite.
pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite entries")))
    }
}

/// Checks that `m` is square.
pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() == m.ncols() {
        Ok(())
    } else {
        Err(dim_err(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())))
    }
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    ensure_square(a, "matrix")?;
    ensure_finite(a, "matrix")?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part among the eigenvalues of `a` (−∞ for an empty matrix).
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Symmetrised copy `(m + mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_sym_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.max()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

/// Solves the continuous Lyapunov equation `AᵀX + XA + Q = 0`.
///
/// Uses the vectorised Kronecker form; intended for the small state
/// dimensions (≤ ~30) that appear in this crate.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(a, "A")?;
    let n = a.nrows();
    if q.shape() != (n, n) {
        return Err(dim_err("Lyapunov right-hand side must match A"));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = kron(&eye, &at) + kron(&at, &eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x))
}

/// Linearly spaced grid.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Logarithmically spaced grid between `lo` and `hi`.
///
/// # Panics
/// If either endpoint is not positive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > 0.0, "logspace endpoints must be positive");
    linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect()
}

/// Matrix sign function by the scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    let mut z = h.clone();
    for _ in 0..200 {
        let lu = z.clone().lu();
        let det = lu.determinant().abs();
        let zinv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("sign iteration hit a singular matrix".into()))?;
        let c = if det.is_finite() && det > 0.0 {
            det.powf(1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&z / c + &zinv * c) * 0.5;
        let diff = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if diff < 1e-13 {
            break;
        }
    }
    ensure_finite(&z, "sign iterate")?;
    Ok(z)
}

/// Stabilising solution of the continuous algebraic Riccati equation
/// `AᵀX + XA − XBR⁻¹BᵀX + Q = 0`.
///
/// A matrix-sign-function solve provides the initial stabilising solution,
/// which is then polished by Newton–Kleinman iterations.
pub fn care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    ensure_square(a, "A")?;
    let n = a.nrows();
    let m = b.ncols();
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(dim_err("CARE data dimensions are inconsistent"));
    }
    let rinv = r
        .clone()
        .cholesky()
        .ok_or_else(|| invalid("R must be positive definite"))?
        .inverse();
    let s = b * &rinv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let w = matrix_sign(&h)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let mut x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(format!("Riccati subspace solve failed: {e}")))?;
    x = symmetrize(&x);

    // Newton–Kleinman polish; every iterate stays stabilising once the start is.
    for _ in 0..20 {
        let k = -(&rinv * b.transpose() * &x);
        let acl = a + b * &k;
        if spectral_abscissa(&acl)? >= 0.0 {
            break;
        }
        let qk = q + k.transpose() * r * &k;
        let next = lyapunov(&acl, &qk)?;
        let diff = (&next - &x).norm() / next.norm().max(1e-300);
        x = next;
        if diff < 1e-14 {
            break;
        }
    }
    let resid = a.transpose() * &x + &x * a - &x * &s * &x + q;
    let scale = q.norm().max(x.norm()).max(1.0);
    if !(resid.norm() / scale < 1e-6) {
        return Err(Error::Numerical(format!(
            "Riccati residual too large ({:.3e})",
            resid.norm() / scale
        )));
    }
    Ok(x)
}
