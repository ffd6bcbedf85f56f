use super::Matrix;
use crate::error::{Error, Result};

/// Inputs whose entries differ from their transpose by more than this are rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Jacobi sweeps stop once the off-diagonal norm falls to this fraction of `‖Σ‖_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Above this size [`sym_eig`] switches from Jacobi rotations to
/// Householder tridiagonalization followed by implicit QL.
pub const JACOBI_MAX_DIM: usize = 64;

/// Eigenpairs of a symmetric matrix, `Σ = D Λ Dᵀ`.
///
/// Eigenvalues are sorted in descending order and column `k` of
/// `eigenvectors` pairs with `eigenvalues[k]`. Each eigenvector is signed so
/// that its entry of largest magnitude is non-negative (the first such entry
/// on ties), which makes the decomposition a deterministic function of the
/// input bits.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `D Λ Dᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let scaled = self.eigenvectors.scale_cols(&self.eigenvalues);
        scaled.matmul_t(&self.eigenvectors)
    }

    /// Smallest gap between any two eigenvalues and the pair attaining it.
    pub fn min_gap(&self) -> Option<(usize, usize, f64)> {
        // sorted, so adjacent pairs suffice
        self.eigenvalues
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, i + 1, (w[0] - w[1]).abs()))
            .min_by(|a, b| a.2.total_cmp(&b.2))
    }
}

/// Which algorithm produced a decomposition. Both yield the same sorted,
/// sign-normalized output up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenSolver {
    Jacobi,
    Tridiagonal,
}

/// Symmetric eigendecomposition.
///
/// The input is symmetrized as `(Σ + Σᵀ)/2` first. Matrices up to
/// [`JACOBI_MAX_DIM`] use cyclic Jacobi; larger ones use the tridiagonal QL
/// path, which is an order of magnitude cheaper at the group sizes used by
/// the stochasticity experiments.
pub fn sym_eig(sigma: &Matrix) -> Result<EigenDecomposition> {
    let solver = if sigma.rows() <= JACOBI_MAX_DIM {
        EigenSolver::Jacobi
    } else {
        EigenSolver::Tridiagonal
    };
    sym_eig_with(sigma, solver)
}

pub fn sym_eig_with(sigma: &Matrix, solver: EigenSolver) -> Result<EigenDecomposition> {
    let a = validate_symmetric(sigma)?;
    let (values, vectors) = match solver {
        EigenSolver::Jacobi => jacobi(a)?,
        EigenSolver::Tridiagonal => tridiagonal_ql(a)?,
    };
    Ok(normalize(values, vectors))
}

fn validate_symmetric(sigma: &Matrix) -> Result<Matrix> {
    if !sigma.is_square() {
        return Err(Error::Validation(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    if !sigma.is_finite() {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let asym = sigma.asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::Validation(format!(
            "matrix is not symmetric: max |a_ij - a_ji| = {asym:e}"
        )));
    }
    Ok(sigma.symmetrize())
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Cyclic-by-row Jacobi. Returns unsorted eigenvalues and the accumulated
/// rotation matrix.
fn jacobi(mut a: Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    let mut v = Matrix::identity(n);
    let target = JACOBI_TOLERANCE * a.frobenius_norm();
    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= target {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok((a.diag_extract(), v))
}

/// Householder reduction to tridiagonal form followed by the implicit QL
/// algorithm (the EISPACK tred2/tql2 pair).
fn tridiagonal_ql(a: Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    // Both stages run on the transpose of the classic column-oriented
    // formulation so inner loops touch contiguous rows. The input is
    // symmetric, so it is its own transpose.
    let mut vt = a;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut vt, &mut d, &mut e);
    tql2(&mut vt, &mut d, &mut e)?;
    Ok((d, vt.transpose()))
}

/// Householder tridiagonalization; `u` holds the transposed accumulator.
fn tred2(u: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    let a = u.as_mut_slice();
    for j in 0..n {
        d[j] = a[j * n + n - 1];
    }
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = a[j * n + i - 1];
                a[j * n + i] = 0.0;
                a[i * n + j] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].iter_mut().for_each(|x| *x = 0.0);
            // e = A v over the leading i×i block, using its upper triangle
            for j in 0..i {
                let f = d[j];
                a[i * n + j] = f;
                let row = &a[j * n..j * n + i];
                let g = e[j] + row[j] * f + dot(&row[j + 1..], &d[j + 1..i]);
                for (ek, &ujk) in e[j + 1..i].iter_mut().zip(&row[j + 1..]) {
                    *ek += ujk * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for (ej, &dj) in e[..i].iter_mut().zip(&d[..i]) {
                *ej /= h;
                f += *ej * dj;
            }
            let hh = f / (h + h);
            for (ej, &dj) in e[..i].iter_mut().zip(&d[..i]) {
                *ej -= hh * dj;
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                let row = &mut a[j * n + j..j * n + i];
                for ((ujk, &ek), &dk) in row.iter_mut().zip(&e[j..i]).zip(&d[j..i]) {
                    *ujk -= f * ek + g * dk;
                }
                d[j] = a[j * n + i - 1];
                a[j * n + i] = 0.0;
            }
        }
        d[i] = h;
    }
    // accumulate the transformations
    for i in 0..n.saturating_sub(1) {
        a[i * n + n - 1] = a[i * n + i];
        a[i * n + i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            let (head, tail) = a.split_at_mut((i + 1) * n);
            let v = &tail[..=i];
            for (dk, &vk) in d[..=i].iter_mut().zip(v) {
                *dk = vk / h;
            }
            for j in 0..=i {
                let row = &mut head[j * n..j * n + i + 1];
                let g = dot(v, row);
                for (r, &dk) in row.iter_mut().zip(&d[..=i]) {
                    *r -= g * dk;
                }
            }
        }
        a[(i + 1) * n..(i + 1) * n + i + 1].iter_mut().for_each(|x| *x = 0.0);
    }
    for j in 0..n {
        d[j] = a[j * n + n - 1];
        a[j * n + n - 1] = 0.0;
    }
    a[n * n - 1] = 1.0;
    e[0] = 0.0;
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [0.0; 4];
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (a, b) in (&mut xc).zip(&mut yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `vt` holds eigenvectors as rows.
fn tql2(vt: &mut Matrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    let max_iter = 30 * n.max(1);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::NoConvergence {
                        sweeps: iter,
                        residual: e[l].abs(),
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    rotate_rows(vt, i, c, s);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

fn rotate_rows(vt: &mut Matrix, i: usize, c: f64, s: f64) {
    let n = vt.cols();
    let data = vt.as_mut_slice();
    let (head, tail) = data.split_at_mut((i + 1) * n);
    let row_i = &mut head[i * n..];
    let row_next = &mut tail[..n];
    for (vi, vn) in row_i.iter_mut().zip(row_next.iter_mut()) {
        let h = *vn;
        *vn = s * *vi + c * h;
        *vi = c * *vi - s * h;
    }
}

/// Sorts eigenpairs descending and applies the sign convention.
fn normalize(values: Vec<f64>, vectors: Matrix) -> EigenDecomposition {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut eigenvectors = Matrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (k, &src) in order.iter().enumerate() {
        eigenvalues.push(values[src]);
        let mut col = vectors.column(src);
        let mut lead = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        eigenvectors.set_column(k, &col);
    }
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

impl Matrix {
    /// Multiplies column `j` by `v[j]`.
    pub fn scale_cols(&self, v: &[f64]) -> Matrix {
        assert_eq!(v.len(), self.cols());
        Matrix::from_fn(self.rows(), self.cols(), |i, j| self[(i, j)] * v[j])
    }
}
