//! Complex dense linear-algebra helpers shared by the solvers.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Replaces `m` by `(m + m^H) / 2`.
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        m[(i, i)] = c64(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

pub fn frobenius_sq(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().sum()
}

/// Dense Kronecker product.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in descending order.
///
/// Column `j` of the returned matrix is the eigenvector of `values[j]`.
pub fn hermitian_eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Roots of `coeffs[0] z^d + coeffs[1] z^{d-1} + ... + coeffs[d]`.
///
/// Leading and trailing zero coefficients are stripped first; each trailing
/// zero contributes a root at the origin.
pub fn polynomial_roots(coeffs: &[C64]) -> Result<Vec<C64>> {
    let first = coeffs
        .iter()
        .position(|c| *c != C64::default())
        .ok_or_else(|| Error::DegenerateInput("zero polynomial".into()))?;
    let mut trimmed = &coeffs[first..];
    let mut roots = Vec::new();
    while trimmed.len() > 1 && trimmed[trimmed.len() - 1] == C64::default() {
        roots.push(C64::default());
        trimmed = &trimmed[..trimmed.len() - 1];
    }
    let degree = trimmed.len() - 1;
    if degree == 0 {
        return Ok(roots);
    }
    let lead = trimmed[0];
    let mut companion = CMatrix::zeros(degree, degree);
    for j in 0..degree {
        companion[(0, j)] = -trimmed[j + 1] / lead;
    }
    for i in 1..degree {
        companion[(i, i - 1)] = c64(1.0, 0.0);
    }
    let eig = companion
        .eigenvalues()
        .ok_or_else(|| Error::solver(0, "companion-matrix Schur iteration did not converge"))?;
    roots.extend(eig.iter().copied());
    Ok(roots)
}

#[cfg(test)]
pub(crate) fn circular_gaussian_for_tests(rows: usize, cols: usize, seed: u64) -> CMatrix {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    crate::signal_model::circular_gaussian(rows, cols, 1.0, &mut rng)
}
