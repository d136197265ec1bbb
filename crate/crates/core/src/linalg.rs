//! Small dense factorizations used by the likelihood.

use ndarray::Array2;
use num_complex::Complex64;

/// In-place Cholesky factorization `A = L L*` of a Hermitian matrix, keeping
/// the lower triangle. Returns `None` unless the matrix is positive definite.
pub fn cholesky_hermitian(a: &mut Array2<Complex64>) -> Option<()> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for j in 0..n {
        let mut diag = a[[j, j]].re;
        for k in 0..j {
            diag -= a[[j, k]].norm_sqr();
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        a[[j, j]] = Complex64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]].conj();
            }
            a[[i, j]] = s / ljj;
        }
    }
    Some(())
}

/// `(log|A|, x* A⁻¹ x)` from one Cholesky factorization of Hermitian `A`.
/// Returns `None` if `A` is not positive definite.
pub fn hermitian_logdet_quad(a: &Array2<Complex64>, x: &[Complex64]) -> Option<(f64, f64)> {
    let mut l = a.clone();
    cholesky_hermitian(&mut l)?;
    let n = l.nrows();
    let mut logdet = 0.0;
    let mut y = x.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]].re;
        logdet += 2.0 * l[[i, i]].re.ln();
    }
    let quad = y.iter().map(|v| v.norm_sqr()).sum();
    Some((logdet, quad))
}

/// In-place `L D Lᵀ` factorization of a symmetric positive definite `k × k`
/// row-major matrix; the unit lower factor overwrites the strict lower
/// triangle and `D` the diagonal. Returns `false` on a non-positive pivot.
#[inline]
pub fn ldl_in_place(m: &mut [f64], k: usize) -> bool {
    for j in 0..k {
        let mut d = m[j * k + j];
        for p in 0..j {
            let ljp = m[j * k + p];
            d -= ljp * ljp * m[p * k + p];
        }
        if !(d > 0.0) {
            return false;
        }
        m[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = m[i * k + j];
            for p in 0..j {
                s -= m[i * k + p] * m[j * k + p] * m[p * k + p];
            }
            m[i * k + j] = s / d;
        }
    }
    true
}

/// `bᵀ M⁻¹ b` given the output of [`ldl_in_place`]; overwrites `b`.
#[inline]
pub fn ldl_quad(m: &[f64], k: usize, b: &mut [f64]) -> f64 {
    for i in 0..k {
        let mut s = b[i];
        for p in 0..i {
            s -= m[i * k + p] * b[p];
        }
        b[i] = s;
    }
    (0..k).map(|i| b[i] * b[i] / m[i * k + i]).sum()
}
