use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};
use crate::rng::{standard_normal_matrix, stream, StreamRng};

/// A source of i.i.d. data columns.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;

    /// `dim × n` matrix of fresh samples.
    fn sample(&self, rng: &mut StreamRng, n: usize) -> Matrix;
}

/// Multivariate normal `N(mean, Σ)`, sampled as `mean + L z` with `L Lᵀ = Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSampler {
    mean: Vec<f64>,
    covariance: Matrix,
    factor: Matrix,
}

impl GaussianSampler {
    pub fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        if mean.len() != covariance.rows() {
            return Err(Error::DimensionMismatch {
                op: "gaussian sampler",
                left: (mean.len(), 1),
                right: covariance.shape(),
            });
        }
        let factor = cholesky(&covariance)
            .map_err(|e| Error::Validation(format!("sampler covariance is not positive definite: {e}")))?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    pub fn isotropic(d: usize) -> Self {
        Self::new(vec![0.0; d], Matrix::identity(d)).expect("identity is positive definite")
    }

    /// Zero mean, covariance `A Aᵀ/d + ½ I` with `A` standard normal drawn
    /// from `seed`.
    pub fn mixed(d: usize, seed: u64) -> Self {
        let a = standard_normal_matrix(&mut stream(seed, &[0x5a4d, d as u64]), d, d);
        let mut cov = a.matmul_t(&a).scale(1.0 / d as f64);
        cov.add_diagonal(0.5);
        Self::new(vec![0.0; d], cov).expect("ridge keeps the covariance positive definite")
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }
}

impl Sampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut StreamRng, n: usize) -> Matrix {
        let z = standard_normal_matrix(rng, self.dim(), n);
        (&self.factor * &z).add_row_vector(&self.mean)
    }
}
