//! Small complex linear-algebra helpers shared by the engines.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// `e^{iθ}`.
pub fn phase(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// Frobenius norm of `U†U − I`; zero for an exact isometry.
pub fn isometry_residual(u: &CMatrix) -> f64 {
    let gram = u.adjoint() * u;
    let n = gram.nrows();
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { ONE } else { ZERO };
            acc += (gram[(r, c)] - target).norm_sqr();
        }
    }
    acc.sqrt()
}

/// Frobenius norm of `U†U − I` for a square matrix, or infinity otherwise.
pub fn unitarity_residual(u: &CMatrix) -> f64 {
    if u.nrows() != u.ncols() {
        return f64::INFINITY;
    }
    isometry_residual(u)
}

pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Build a matrix from row-major nested slices.
pub fn from_rows(rows: &[&[C64]]) -> CMatrix {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    CMatrix::from_fn(n, m, |r, c| rows[r][c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_residual() {
        let id = CMatrix::identity(4, 4);
        assert_eq!(unitarity_residual(&id), 0.0);
    }

    #[test]
    fn non_square_is_not_unitary() {
        let m = CMatrix::zeros(2, 3);
        assert!(unitarity_residual(&m).is_infinite());
    }
}
