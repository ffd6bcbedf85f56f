//! Mini-batch whitening matrices.
//!
//! Given a (ridge-regularized) covariance `Σ`, each transform produces a
//! matrix `W` with `W Σ Wᵀ ≈ I`:
//!
//! | kind | whitening matrix |
//! |------|------------------|
//! | BN   | `diag(Σ)^{-1/2}` (standardization only) |
//! | PCA  | `Λ^{-1/2} Dᵀ` |
//! | ZCA  | `D Λ^{-1/2} Dᵀ` |
//! | CD   | `L⁻¹` where `L Lᵀ = Σ` |
//! | ItN  | Newton iterations toward `Σ^{-1/2}` |
//!
//! [`grouped_whitening`] partitions the rows of a centered batch into
//! contiguous groups and whitens each group independently.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, sym_eig, tri_lower_inverse, EigenDecomposition, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformKind {
    Bn,
    Pca,
    Zca,
    Cd,
    Itn,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Bn,
        TransformKind::Pca,
        TransformKind::Zca,
        TransformKind::Cd,
        TransformKind::Itn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Bn => "bn",
            TransformKind::Pca => "pca",
            TransformKind::Zca => "zca",
            TransformKind::Cd => "cd",
            TransformKind::Itn => "itn",
        }
    }

    /// PCA, ZCA and CD whiten exactly; BN only standardizes and ItN
    /// approximates ZCA.
    pub fn is_exact_whitening(self) -> bool {
        matches!(self, TransformKind::Pca | TransformKind::Zca | TransformKind::Cd)
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            TransformKind::Bn => 0,
            TransformKind::Pca => 1,
            TransformKind::Zca => 2,
            TransformKind::Cd => 3,
            TransformKind::Itn => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        TransformKind::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown transform '{s}'")))
    }
}

/// Which statistic is running-averaged for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimationObject {
    /// Average `Σ`, compute the whitening matrix once after training.
    Covariance,
    /// Average the per-batch whitening matrices `W` directly.
    Whitening,
}

/// Learnable affine map applied after whitening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecoveryKind {
    /// `y_k = γ_k x̂_k + β_k`.
    ScaleShift,
    /// `y = W_color x̂ + b`.
    Coloring,
}

/// Configuration of one batch-whitening instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiteningSpec {
    pub kind: TransformKind,
    /// Group size; `None` whitens all dimensions jointly.
    pub group_size: Option<usize>,
    /// Ridge added to the covariance diagonal.
    pub epsilon: f64,
    /// Newton iterations for [`TransformKind::Itn`].
    pub itn_iterations: usize,
    pub estimation_object: EstimationObject,
    pub recovery: RecoveryKind,
    /// Running-average weight given to the newest batch statistic.
    pub momentum: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_ITN_ITERATIONS: usize = 5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

impl Default for WhiteningSpec {
    fn default() -> Self {
        Self {
            kind: TransformKind::Zca,
            group_size: None,
            epsilon: DEFAULT_EPSILON,
            itn_iterations: DEFAULT_ITN_ITERATIONS,
            estimation_object: EstimationObject::Covariance,
            recovery: RecoveryKind::ScaleShift,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

impl WhiteningSpec {
    pub fn new(kind: TransformKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_group_size(mut self, g: usize) -> Self {
        self.group_size = Some(g);
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn with_itn_iterations(mut self, t: usize) -> Self {
        self.itn_iterations = t;
        self
    }

    pub fn with_estimation(mut self, object: EstimationObject) -> Self {
        self.estimation_object = object;
        self
    }

    pub fn with_recovery(mut self, recovery: RecoveryKind) -> Self {
        self.recovery = recovery;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    /// Checks these settings against a layer dimension and returns the group size.
    pub fn resolve(&self, dim: usize) -> Result<usize> {
        if dim == 0 {
            return Err(Error::Validation("layer dimension must be positive".into()));
        }
        let g = self.group_size.unwrap_or(dim);
        if g == 0 || g > dim || !dim.is_multiple_of(g) {
            return Err(Error::Validation(format!(
                "group size {g} must divide the dimension {dim}"
            )));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Validation(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.itn_iterations == 0 {
            return Err(Error::Validation("ItN needs at least one iteration".into()));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::Validation(format!(
                "momentum must lie in (0, 1], got {}",
                self.momentum
            )));
        }
        Ok(g)
    }
}

/// Intermediates saved by the forward pass of one transform; exactly what
/// the matching backward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformCache {
    Bn { diag: Vec<f64> },
    Pca(EigenDecomposition),
    Zca(EigenDecomposition),
    Cd { l: Matrix, w: Matrix },
    /// `powers` holds `P_0 … P_T`.
    Itn {
        sigma_n: Matrix,
        powers: Vec<Matrix>,
        trace: f64,
    },
}

impl TransformCache {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformCache::Bn { .. } => TransformKind::Bn,
            TransformCache::Pca(_) => TransformKind::Pca,
            TransformCache::Zca(_) => TransformKind::Zca,
            TransformCache::Cd { .. } => TransformKind::Cd,
            TransformCache::Itn { .. } => TransformKind::Itn,
        }
    }
}

/// Whitening matrix of `sigma` (already ridge-regularized) plus the cache
/// for the backward pass.
pub fn whitening_matrix(
    sigma: &Matrix,
    kind: TransformKind,
    itn_iterations: usize,
) -> Result<(Matrix, TransformCache)> {
    if !sigma.is_square() {
        return Err(Error::Validation(format!(
            "covariance must be square, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    match kind {
        TransformKind::Bn => {
            let diag = sigma.diag_extract();
            let mut inv_sqrt = Vec::with_capacity(diag.len());
            for (i, &v) in diag.iter().enumerate() {
                if !(v > 0.0) {
                    return Err(Error::NonPositiveEigenvalue { index: i, value: v });
                }
                inv_sqrt.push(1.0 / v.sqrt());
            }
            Ok((Matrix::diag_embed(&inv_sqrt), TransformCache::Bn { diag }))
        }
        TransformKind::Pca | TransformKind::Zca => {
            let eig = sym_eig(sigma)?;
            let scaled = eigen_inv_sqrt_scaled(&eig)?;
            if kind == TransformKind::Pca {
                Ok((scaled.transpose(), TransformCache::Pca(eig)))
            } else {
                let w = scaled.matmul_t(&eig.eigenvectors);
                Ok((w, TransformCache::Zca(eig)))
            }
        }
        TransformKind::Cd => {
            let l = cholesky(sigma)?;
            let w = tri_lower_inverse(&l)?;
            Ok((w.clone(), TransformCache::Cd { l, w }))
        }
        TransformKind::Itn => itn(sigma, itn_iterations),
    }
}

/// `D Λ^{-1/2}`.
fn eigen_inv_sqrt_scaled(eig: &EigenDecomposition) -> Result<Matrix> {
    let mut scales = Vec::with_capacity(eig.dim());
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositiveEigenvalue { index: i, value: v });
        }
        scales.push(1.0 / v.sqrt());
    }
    Ok(eig.eigenvectors.scale_cols(&scales))
}

fn itn(sigma: &Matrix, iterations: usize) -> Result<(Matrix, TransformCache)> {
    if iterations == 0 {
        return Err(Error::Validation("ItN needs at least one iteration".into()));
    }
    let trace = sigma.trace()?;
    if !(trace > 0.0) {
        return Err(Error::Validation(format!("ItN needs tr(Σ) > 0, got {trace:e}")));
    }
    let sigma_n = sigma.scale(1.0 / trace);
    // Coupled form of P_k = 1.5 P_{k-1} - 0.5 P_{k-1}^3 Σ_N: same iterates in
    // exact arithmetic (Y_k = Σ_N P_k), but the direct form amplifies roundoff
    // once cond(Σ) passes ~10 and blows up within 20 steps.
    let mut powers = Vec::with_capacity(iterations + 1);
    powers.push(Matrix::identity(sigma.rows()));
    let mut y = sigma_n.clone();
    for _ in 0..iterations {
        let z = powers.last().unwrap();
        let mut t = (z * &y).scale(-0.5);
        t.add_diagonal(1.5);
        y = &y * &t;
        powers.push(&t * z);
    }
    let w = powers.last().unwrap().scale(1.0 / trace.sqrt());
    Ok((
        w,
        TransformCache::Itn {
            sigma_n,
            powers,
            trace,
        },
    ))
}

/// Saved state for one group of a grouped whitening pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCache {
    /// First row of the group.
    pub start: usize,
    /// `(1/m) X_g X_gᵀ + εI`.
    pub sigma: Matrix,
    pub w: Matrix,
    pub transform: TransformCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedWhitening {
    pub output: Matrix,
    pub groups: Vec<GroupCache>,
}

impl GroupedWhitening {
    pub fn whitening_matrices(&self) -> Vec<Matrix> {
        self.groups.iter().map(|g| g.w.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<Matrix> {
        self.groups.iter().map(|g| g.sigma.clone()).collect()
    }
}

/// Per-group covariances `(1/m) X_g X_gᵀ + εI` over contiguous row groups.
pub fn group_covariances(x_centered: &Matrix, group_size: usize, epsilon: f64) -> Vec<Matrix> {
    (0..x_centered.rows() / group_size)
        .map(|k| {
            let mut s = x_centered.row_block(k * group_size, group_size).gram();
            s.add_diagonal(epsilon);
            s
        })
        .collect()
}

/// Whitens a centered `d × m` batch group by group.
///
/// Rows are split into contiguous groups of `spec.group_size` in index
/// order; the caller is responsible for centering.
pub fn grouped_whitening(x_centered: &Matrix, spec: &WhiteningSpec) -> Result<GroupedWhitening> {
    let g = spec.resolve(x_centered.rows())?;
    let mut output = Matrix::zeros(x_centered.rows(), x_centered.cols());
    let mut groups = Vec::with_capacity(x_centered.rows() / g);
    for (k, sigma) in group_covariances(x_centered, g, spec.epsilon).into_iter().enumerate() {
        let start = k * g;
        let (w, transform) = whitening_matrix(&sigma, spec.kind, spec.itn_iterations)?;
        let xg = x_centered.row_block(start, g);
        output.set_row_block(start, &(&w * &xg));
        groups.push(GroupCache {
            start,
            sigma,
            w,
            transform,
        });
    }
    Ok(GroupedWhitening { output, groups })
}

/// Applies fixed per-group whitening matrices to a centered batch.
pub fn apply_grouped(ws: &[Matrix], x_centered: &Matrix) -> Matrix {
    let mut output = Matrix::zeros(x_centered.rows(), x_centered.cols());
    let mut start = 0;
    for w in ws {
        let g = w.rows();
        output.set_row_block(start, &(w * &x_centered.row_block(start, g)));
        start += g;
    }
    assert_eq!(start, x_centered.rows(), "group matrices do not cover the input");
    output
}
