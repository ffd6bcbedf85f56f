//! Analytic backward passes through the whitening transforms.
//!
//! Each `backward_*` maps `∂L/∂W` to `∂L/∂Σ`. The returned matrix need not be
//! symmetric; only its symmetric part is meaningful because `Σ` is
//! symmetric, and [`backward_layer_input`] consumes it through
//! `(∂L/∂Σ + ∂L/∂Σᵀ)`.

use crate::error::{Error, Result};
use crate::linalg::{EigenDecomposition, Matrix};
use crate::transforms::{GroupCache, TransformCache};

/// Eigenvalue gaps below `gap_floor · max|σ|` count as degenerate.
pub const DEFAULT_GAP_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    /// Relative eigenvalue-gap floor for the PCA/ZCA backward passes.
    pub gap_floor: f64,
    /// Clamp `|σ_i − σ_j|` to the floor instead of failing.
    pub clamp_eigengap: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            gap_floor: DEFAULT_GAP_FLOOR,
            clamp_eigengap: false,
        }
    }
}

/// `K_ij = 1/(σ_i − σ_j)` for `i ≠ j`, zero on the diagonal.
///
/// Fails with [`Error::Degenerate`] when two eigenvalues are closer than the
/// floor, unless clamping is enabled.
pub fn grad_k_matrix(eigenvalues: &[f64], opts: &BackwardOptions) -> Result<Matrix> {
    let n = eigenvalues.len();
    let scale = eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let floor = opts.gap_floor * scale;
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let diff = eigenvalues[i] - eigenvalues[j];
            let value = if diff.abs() > floor {
                1.0 / diff
            } else if opts.clamp_eigengap {
                // eigenvalues are sorted descending, so the sign follows the index order
                let sign = if i < j { 1.0 } else { -1.0 };
                sign / floor.max(f64::MIN_POSITIVE)
            } else {
                let (a, b) = (i.min(j), i.max(j));
                return Err(Error::Degenerate {
                    i: a,
                    j: b,
                    gap: diff.abs(),
                    floor,
                });
            };
            k[(i, j)] = value;
        }
    }
    Ok(k)
}

/// Shared tail of the PCA and ZCA passes:
/// `D {(Kᵀ ⊙ (Dᵀ ∂L/∂D)) + (∂L/∂Λ)_diag} Dᵀ`.
fn eigen_assembly(
    eig: &EigenDecomposition,
    d_eigvecs: &Matrix,
    d_eigvals_diag: &[f64],
    opts: &BackwardOptions,
) -> Result<Matrix> {
    let d = &eig.eigenvectors;
    let k = grad_k_matrix(&eig.eigenvalues, opts)?;
    let mut inner = k.transpose().hadamard(&d.t_matmul(d_eigvecs));
    for (i, &v) in d_eigvals_diag.iter().enumerate() {
        inner[(i, i)] += v;
    }
    Ok((d * &inner).matmul_t(d))
}

fn powers_of(eigenvalues: &[f64], p: f64) -> Vec<f64> {
    eigenvalues.iter().map(|&s| s.powf(p)).collect()
}

/// Backward pass of `W = Λ^{-1/2} Dᵀ`.
pub fn backward_pca(dw: &Matrix, eig: &EigenDecomposition, opts: &BackwardOptions) -> Result<Matrix> {
    let inv_sqrt = powers_of(&eig.eigenvalues, -0.5);
    let inv_three_halves = powers_of(&eig.eigenvalues, -1.5);
    // ∂L/∂Λ = (∂L/∂W) D (−½ Λ^{-3/2}); only its diagonal is used
    let dw_d = dw * &eig.eigenvectors;
    let d_lambda: Vec<f64> = (0..eig.dim())
        .map(|i| -0.5 * dw_d[(i, i)] * inv_three_halves[i])
        .collect();
    // ∂L/∂D = (∂L/∂W)ᵀ Λ^{-1/2}
    let d_eigvecs = dw.transpose().scale_cols(&inv_sqrt);
    eigen_assembly(eig, &d_eigvecs, &d_lambda, opts)
}

/// Backward pass of `W = D Λ^{-1/2} Dᵀ`.
pub fn backward_zca(dw: &Matrix, eig: &EigenDecomposition, opts: &BackwardOptions) -> Result<Matrix> {
    let d = &eig.eigenvectors;
    let inv_sqrt = powers_of(&eig.eigenvalues, -0.5);
    let inv_three_halves = powers_of(&eig.eigenvalues, -1.5);
    // ∂L/∂Λ = Dᵀ (∂L/∂W) D (−½ Λ^{-3/2})
    let rotated = &d.t_matmul(dw) * d;
    let d_lambda: Vec<f64> = (0..eig.dim())
        .map(|i| -0.5 * rotated[(i, i)] * inv_three_halves[i])
        .collect();
    // ∂L/∂D = (∂L/∂W + (∂L/∂W)ᵀ) D Λ^{-1/2}
    let sym = dw + &dw.transpose();
    let d_eigvecs = (&sym * d).scale_cols(&inv_sqrt);
    eigen_assembly(eig, &d_eigvecs, &d_lambda, opts)
}

/// Mask of the Cholesky differential: `½` on the diagonal, `1` strictly
/// below, `0` above.
pub fn cholesky_mask(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.5,
        std::cmp::Ordering::Less => 0.0,
    })
}

/// Backward pass of `W = L⁻¹` with `L Lᵀ = Σ`; `w` is the cached `L⁻¹`.
pub fn backward_cd(dw: &Matrix, l: &Matrix, w: &Matrix) -> Matrix {
    // ∂L/∂L = −Wᵀ (∂L/∂W) Wᵀ
    let d_l = -&w.t_matmul(dw).matmul_t(w);
    let masked = cholesky_mask(l.rows()).hadamard(&l.t_matmul(&d_l));
    let sym = &masked + &masked.transpose();
    // ½ L^{-T} (·) L^{-1}
    (&w.t_matmul(&sym) * w).scale(0.5)
}

/// Backward pass of the Newton iteration, run in reverse over the cached
/// iterates `P_0 … P_T`.
pub fn backward_itn(dw: &Matrix, sigma_n: &Matrix, powers: &[Matrix], trace: f64) -> Matrix {
    let n = sigma_n.rows();
    let t = powers.len() - 1;
    let sqrt_tr = trace.sqrt();
    let mut d_p = dw.scale(1.0 / sqrt_tr);
    let mut d_sigma_n = Matrix::zeros(n, n);
    for k in (1..=t).rev() {
        let p = &powers[k - 1];
        let p2 = p * p;
        let p3 = &p2 * p;
        // ∂L/∂Σ_N += −½ (P_{k−1}³)ᵀ ∂L/∂P_k
        d_sigma_n -= &p3.t_matmul(&d_p).scale(0.5);
        let term_a = d_p.matmul_t(&(&p2 * sigma_n));
        let term_b = &p2.t_matmul(&d_p).matmul_t(sigma_n);
        let term_c = p.t_matmul(&d_p).matmul_t(&(p * sigma_n));
        let mut prev = d_p.scale(1.5);
        prev -= &term_a.scale(0.5);
        prev -= &term_b.scale(0.5);
        prev -= &term_c.scale(0.5);
        d_p = prev;
    }
    let sigma = sigma_n.scale(trace);
    let p_t = &powers[t];
    let mut d_sigma = d_sigma_n.scale(1.0 / trace);
    let diag_shift = -d_sigma_n.dot(&sigma) / (trace * trace) - dw.dot(p_t) / (2.0 * trace * sqrt_tr);
    d_sigma.add_diagonal(diag_shift);
    d_sigma
}

/// Backward pass of `W = diag(Σ)^{-1/2}`; the result is diagonal.
pub fn backward_bn(dw: &Matrix, diag: &[f64]) -> Matrix {
    let values: Vec<f64> = diag
        .iter()
        .enumerate()
        .map(|(i, &s)| -0.5 * s.powf(-1.5) * dw[(i, i)])
        .collect();
    Matrix::diag_embed(&values)
}

/// Dispatches to the backward pass matching the cached transform.
pub fn backward_whitening(dw: &Matrix, cache: &TransformCache, opts: &BackwardOptions) -> Result<Matrix> {
    match cache {
        TransformCache::Bn { diag } => Ok(backward_bn(dw, diag)),
        TransformCache::Pca(eig) => backward_pca(dw, eig, opts),
        TransformCache::Zca(eig) => backward_zca(dw, eig, opts),
        TransformCache::Cd { l, w } => Ok(backward_cd(dw, l, w)),
        TransformCache::Itn {
            sigma_n,
            powers,
            trace,
        } => Ok(backward_itn(dw, sigma_n, powers, *trace)),
    }
}

/// Gradient with respect to the layer input through centering and grouped
/// whitening.
///
/// Per group: `∂L/∂W = ∂L/∂X̂ Xᵀ`, `∂L/∂Σ` from the transform, and
/// `∂L/∂X = Wᵀ ∂L/∂X̂ + (1/m)(∂L/∂Σ + ∂L/∂Σᵀ) X`. The per-row mean of the
/// result is then removed, which is the Jacobian of the centering step.
pub fn backward_layer_input(
    d_xhat: &Matrix,
    groups: &[GroupCache],
    x_centered: &Matrix,
    opts: &BackwardOptions,
) -> Result<Matrix> {
    if d_xhat.shape() != x_centered.shape() {
        return Err(Error::DimensionMismatch {
            op: "backward_layer_input",
            left: d_xhat.shape(),
            right: x_centered.shape(),
        });
    }
    let covered: usize = groups.iter().map(|g| g.w.rows()).sum();
    if covered != x_centered.rows() {
        return Err(Error::Validation(format!(
            "group caches cover {covered} rows, input has {}",
            x_centered.rows()
        )));
    }
    let m = x_centered.cols() as f64;
    let mut dx = Matrix::zeros(x_centered.rows(), x_centered.cols());
    for group in groups {
        let g = group.w.rows();
        let xg = x_centered.row_block(group.start, g);
        let dxg_hat = d_xhat.row_block(group.start, g);
        let dw = dxg_hat.matmul_t(&xg);
        let d_sigma = backward_whitening(&dw, &group.transform, opts)?;
        let mut dxg = group.w.t_matmul(&dxg_hat);
        let sym = &d_sigma + &d_sigma.transpose();
        dxg += &(&sym * &xg).scale(1.0 / m);
        dx.set_row_block(group.start, &dxg);
    }
    let means = dx.row_means();
    Ok(dx.sub_row_vector(&means))
}
