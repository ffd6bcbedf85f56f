use super::Matrix;
use crate::error::{Error, Result};

/// Diagonal entries at or below this magnitude make a triangular matrix singular.
pub const SINGULAR_DIAGONAL: f64 = 1e-300;

/// Lower-triangular `L` with `L Lᵀ = Σ` and a strictly positive diagonal.
///
/// Reads the lower triangle of `sigma`. Fails with
/// [`Error::NotPositiveDefinite`] at the first pivot that is not positive.
pub fn cholesky(sigma: &Matrix) -> Result<Matrix> {
    if !sigma.is_square() {
        return Err(Error::Validation(format!(
            "cholesky needs a square matrix, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    let n = sigma.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = sigma[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix by forward substitution. Entries
/// above the diagonal of the result are exactly zero.
pub fn tri_lower_inverse(l: &Matrix) -> Result<Matrix> {
    if !l.is_square() {
        return Err(Error::Validation(format!(
            "triangular inverse needs a square matrix, got {}x{}",
            l.rows(),
            l.cols()
        )));
    }
    let n = l.rows();
    for i in 0..n {
        let v = l[(i, i)];
        if !(v.abs() > SINGULAR_DIAGONAL) {
            return Err(Error::Singular { index: i, value: v });
        }
    }
    let mut inv = Matrix::zeros(n, n);
    // column j of the inverse solves L x = e_j; x is zero above row j
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    Ok(inv)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        let diff = (a - b).max_abs();
        assert!(diff <= tol, "max diff {diff:e}\n{a:?}\n{b:?}");
    }

    #[test]
    fn identity() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert_eq!(tri_lower_inverse(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn two_by_two_hand_factorization() {
        let sigma = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let l = cholesky(&sigma).unwrap();
        // l11 = √2, l21 = 1/√2, l22 = √(2 − 1/2)
        let expected = Matrix::from_rows(&[
            [2f64.sqrt(), 0.0],
            [1.0 / 2f64.sqrt(), 1.5f64.sqrt()],
        ])
        .unwrap();
        assert_close(&l, &expected, 1e-15);
        assert_close(&l.matmul_t(&l), &sigma, 1e-14);
        let frozen = Matrix::from_rows(&[[1.41421356, 0.0], [0.70710678, 1.22474487]]).unwrap();
        assert_close(&l, &frozen, 1e-8);
    }

    #[test]
    fn diagonal_is_elementwise_sqrt() {
        let l = cholesky(&Matrix::diag_embed(&[4.0, 1.0])).unwrap();
        assert_eq!(l, Matrix::diag_embed(&[2.0, 1.0]));
    }

    #[test]
    fn inverse_examples() {
        let inv = tri_lower_inverse(&Matrix::diag_embed(&[2.0, 1.0])).unwrap();
        assert_eq!(inv, Matrix::diag_embed(&[0.5, 1.0]));

        let l = Matrix::from_rows(&[[1.41421356, 0.0], [0.70710678, 1.22474487]]).unwrap();
        let inv = tri_lower_inverse(&l).unwrap();
        let expected = Matrix::from_rows(&[[0.70710678, 0.0], [-0.40824829, 0.81649658]]).unwrap();
        assert_close(&inv, &expected, 1e-8);
        assert_close(&(&l * &inv), &Matrix::identity(2), 1e-14);
        assert!(inv.is_lower_triangular());
    }

    #[test]
    fn not_positive_definite_names_pivot() {
        let sigma = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        match cholesky(&sigma) {
            Err(Error::NotPositiveDefinite { pivot, value }) => {
                assert_eq!(pivot, 1);
                assert!(value < 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            cholesky(&Matrix::zeros(2, 2)),
            Err(Error::NotPositiveDefinite { pivot: 0, .. })
        ));
    }

    #[test]
    fn singular_diagonal() {
        let l = Matrix::from_rows(&[[1.0, 0.0], [3.0, 0.0]]).unwrap();
        assert!(matches!(tri_lower_inverse(&l), Err(Error::Singular { index: 1, .. })));
    }
}
