//! The batch-whitening layer.
//!
//! Training mode centers the batch, whitens it group by group, folds the
//! batch statistic into a running average and applies the recovery map.
//! [`BwLayer::finalize`] freezes the running statistics into fixed whitening
//! matrices, after which [`BwLayer::forward_infer`] is a per-sample affine map.

mod checkpoint;

pub use checkpoint::{read_sequence, write_sequence, LAYER_MAGIC, SEQUENCE_MAGIC};

use crate::error::{Error, Result};
use crate::gradients::{backward_layer_input, BackwardOptions};
use crate::linalg::Matrix;
use crate::transforms::{
    apply_grouped, grouped_whitening, whitening_matrix, EstimationObject, GroupedWhitening, RecoveryKind,
    WhiteningSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recovery {
    ScaleShift { gamma: Vec<f64>, beta: Vec<f64> },
    Coloring { weight: Matrix, bias: Vec<f64> },
}

impl Recovery {
    /// Identity recovery: `γ = 1, β = 0` or `W_color = I, b = 0`.
    pub fn identity(kind: RecoveryKind, dim: usize) -> Self {
        match kind {
            RecoveryKind::ScaleShift => Recovery::ScaleShift {
                gamma: vec![1.0; dim],
                beta: vec![0.0; dim],
            },
            RecoveryKind::Coloring => Recovery::Coloring {
                weight: Matrix::identity(dim),
                bias: vec![0.0; dim],
            },
        }
    }

    pub fn kind(&self) -> RecoveryKind {
        match self {
            Recovery::ScaleShift { .. } => RecoveryKind::ScaleShift,
            Recovery::Coloring { .. } => RecoveryKind::Coloring,
        }
    }

    pub fn apply(&self, xhat: &Matrix) -> Matrix {
        match self {
            Recovery::ScaleShift { gamma, beta } => xhat.scale_rows(gamma).add_row_vector(beta),
            Recovery::Coloring { weight, bias } => (weight * xhat).add_row_vector(bias),
        }
    }

    /// Gradients of the recovery parameters and of its input.
    fn backward(&self, xhat: &Matrix, dy: &Matrix) -> (RecoveryGrads, Matrix) {
        match self {
            Recovery::ScaleShift { gamma, .. } => {
                let d_gamma = dy.hadamard(xhat).row_sums();
                let d_beta = dy.row_sums();
                (RecoveryGrads::ScaleShift { d_gamma, d_beta }, dy.scale_rows(gamma))
            }
            Recovery::Coloring { weight, .. } => {
                let d_weight = dy.matmul_t(xhat);
                let d_bias = dy.row_sums();
                (RecoveryGrads::Coloring { d_weight, d_bias }, weight.t_matmul(dy))
            }
        }
    }

    /// `params -= lr · grads`.
    pub fn sgd_step(&mut self, grads: &RecoveryGrads, lr: f64) {
        match (self, grads) {
            (Recovery::ScaleShift { gamma, beta }, RecoveryGrads::ScaleShift { d_gamma, d_beta }) => {
                axpy(gamma, d_gamma, -lr);
                axpy(beta, d_beta, -lr);
            }
            (Recovery::Coloring { weight, bias }, RecoveryGrads::Coloring { d_weight, d_bias }) => {
                axpy(weight.as_mut_slice(), d_weight.as_slice(), -lr);
                axpy(bias, d_bias, -lr);
            }
            _ => panic!("recovery gradient kind does not match parameters"),
        }
    }
}

fn axpy(y: &mut [f64], x: &[f64], alpha: f64) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryGrads {
    ScaleShift { d_gamma: Vec<f64>, d_beta: Vec<f64> },
    Coloring { d_weight: Matrix, d_bias: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dx: Matrix,
    pub recovery: RecoveryGrads,
}

/// What [`BwLayer::backward_train`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub x_centered: Matrix,
    pub whitened: GroupedWhitening,
}

impl LayerCache {
    /// The whitened batch `X̂` before recovery.
    pub fn xhat(&self) -> &Matrix {
        &self.whitened.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BwLayer {
    spec: WhiteningSpec,
    dim: usize,
    group_size: usize,
    running_mean: Vec<f64>,
    /// `Σ̂_g` (ridge-free) or `Ŵ_g`, one per group.
    running_stat: Vec<Matrix>,
    recovery: Recovery,
    mode: Mode,
    finalized: Option<Vec<Matrix>>,
    steps: u64,
    backward_opts: BackwardOptions,
}

impl BwLayer {
    /// A fresh layer in training mode with identity recovery. Running
    /// statistics start at zero mean and identity.
    pub fn new(dim: usize, spec: WhiteningSpec) -> Result<Self> {
        let group_size = spec.resolve(dim)?;
        Ok(Self {
            spec,
            dim,
            group_size,
            running_mean: vec![0.0; dim],
            running_stat: vec![Matrix::identity(group_size); dim / group_size],
            recovery: Recovery::identity(spec.recovery, dim),
            mode: Mode::Training,
            finalized: None,
            steps: 0,
            backward_opts: BackwardOptions::default(),
        })
    }

    pub fn with_backward_options(mut self, opts: BackwardOptions) -> Self {
        self.backward_opts = opts;
        self
    }

    pub fn spec(&self) -> &WhiteningSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_stat(&self) -> &[Matrix] {
        &self.running_stat
    }

    pub fn finalized(&self) -> Option<&[Matrix]> {
        self.finalized.as_deref()
    }

    pub fn recovery(&self) -> &Recovery {
        &self.recovery
    }

    pub fn recovery_mut(&mut self) -> &mut Recovery {
        &mut self.recovery
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.dim {
            return Err(Error::Validation(format!(
                "layer expects {} input rows, got {}",
                self.dim,
                x.rows()
            )));
        }
        Ok(())
    }

    /// Training-mode computation on one batch without touching the running
    /// statistics. Returns the output, the cache and the batch mean.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, LayerCache, Vec<f64>)> {
        self.check_input(x)?;
        if x.cols() < 2 {
            return Err(Error::Validation(format!(
                "training needs at least 2 samples per batch, got {}",
                x.cols()
            )));
        }
        let mu = x.row_means();
        let x_centered = x.sub_row_vector(&mu);
        let whitened = grouped_whitening(&x_centered, &self.spec)?;
        let y = self.recovery.apply(&whitened.output);
        Ok((y, LayerCache { x_centered, whitened }, mu))
    }

    /// Training forward pass; folds the batch statistics into the running
    /// averages.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, LayerCache)> {
        if self.mode != Mode::Training {
            return Err(Error::State("forward_train called on a layer in inference mode".into()));
        }
        let (y, cache, mu) = self.forward_batch(x)?;
        self.record_batch(&mu, &cache.whitened)?;
        Ok((y, cache))
    }

    /// Folds one batch's mean and whitening result into the running
    /// statistics. [`BwLayer::forward_train`] is `forward_batch` followed by
    /// this; calling it separately lets several layers with different
    /// estimation objects track the same batch sequence.
    pub fn record_batch(&mut self, mu: &[f64], whitened: &GroupedWhitening) -> Result<()> {
        if self.mode != Mode::Training {
            return Err(Error::State("record_batch called on a layer in inference mode".into()));
        }
        if mu.len() != self.dim
            || whitened.groups.len() != self.running_stat.len()
            || whitened.groups.iter().any(|g| g.w.rows() != self.group_size)
        {
            return Err(Error::State("batch statistics do not match this layer's grouping".into()));
        }
        let lambda = self.spec.momentum;
        for (r, &m) in self.running_mean.iter_mut().zip(mu) {
            *r = (1.0 - lambda) * *r + lambda * m;
        }
        for (stat, group) in self.running_stat.iter_mut().zip(&whitened.groups) {
            let batch_stat = match self.spec.estimation_object {
                EstimationObject::Covariance => {
                    let mut s = group.sigma.clone();
                    s.add_diagonal(-self.spec.epsilon);
                    s
                }
                EstimationObject::Whitening => group.w.clone(),
            };
            let mut next = stat.scale(1.0 - lambda);
            next += &batch_stat.scale(lambda);
            if self.spec.estimation_object == EstimationObject::Covariance {
                next = next.symmetrize();
            }
            *stat = next;
        }
        self.steps += 1;
        Ok(())
    }

    /// Freezes the population whitening matrices and switches to inference.
    pub fn finalize(&mut self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::State("finalize called before any training step".into()));
        }
        let ws = match self.spec.estimation_object {
            EstimationObject::Covariance => self
                .running_stat
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.add_diagonal(self.spec.epsilon);
                    whitening_matrix(&s, self.spec.kind, self.spec.itn_iterations).map(|(w, _)| w)
                })
                .collect::<Result<Vec<_>>>()?,
            EstimationObject::Whitening => self.running_stat.clone(),
        };
        self.finalized = Some(ws);
        self.mode = Mode::Inference;
        Ok(())
    }

    /// Returns to training mode, discarding the finalized matrices.
    pub fn train(&mut self) {
        self.mode = Mode::Training;
        self.finalized = None;
    }

    /// Inference forward pass: `recovery(Ŵ (x − μ̂))`, column by column.
    pub fn forward_infer(&self, x: &Matrix) -> Result<Matrix> {
        let ws = self
            .finalized
            .as_ref()
            .ok_or_else(|| Error::State("forward_infer called before finalize".into()))?;
        self.check_input(x)?;
        let xc = x.sub_row_vector(&self.running_mean);
        Ok(self.recovery.apply(&apply_grouped(ws, &xc)))
    }

    /// Gradients for one training batch given `∂L/∂Y`.
    pub fn backward_train(&self, cache: &LayerCache, dy: &Matrix) -> Result<LayerGrads> {
        if cache.x_centered.rows() != self.dim
            || dy.shape() != cache.x_centered.shape()
            || cache.whitened.groups.len() != self.running_stat.len()
        {
            return Err(Error::State(format!(
                "cache for shape {:?} does not match this layer (dim {}, dy {:?})",
                cache.x_centered.shape(),
                self.dim,
                dy.shape()
            )));
        }
        let (recovery, d_xhat) = self.recovery.backward(cache.xhat(), dy);
        let dx = backward_layer_input(&d_xhat, &cache.whitened.groups, &cache.x_centered, &self.backward_opts)?;
        Ok(LayerGrads { dx, recovery })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_matrix, stream};
    use crate::transforms::TransformKind;

    fn batch(seed: u64, d: usize, m: usize) -> Matrix {
        let mut rng = stream(seed, &[]);
        let a = standard_normal_matrix(&mut rng, d, d);
        let z = standard_normal_matrix(&mut rng, d, m);
        (&a * &z).add_row_vector(&vec![0.3; d])
    }

    #[test]
    fn white_input_passes_through() {
        // rows of an orthogonal-column construction: X_c X_cᵀ / m = I exactly
        let m = 8;
        let mut x = Matrix::zeros(2, m);
        for j in 0..m {
            let a = if j % 2 == 0 { 1.0 } else { -1.0 };
            let b = if (j / 2) % 2 == 0 { 1.0 } else { -1.0 };
            x[(0, j)] = a;
            x[(1, j)] = b;
        }
        let mut layer = BwLayer::new(2, WhiteningSpec::new(TransformKind::Zca).with_epsilon(0.0)).unwrap();
        let (y, _) = layer.forward_train(&x).unwrap();
        assert!((&y - &x).max_abs() < 1e-6);
    }

    #[test]
    fn unit_momentum_copies_batch_statistic() {
        let x = batch(1, 4, 32);
        for object in [EstimationObject::Covariance, EstimationObject::Whitening] {
            let spec = WhiteningSpec::new(TransformKind::Cd)
                .with_momentum(1.0)
                .with_estimation(object);
            let mut layer = BwLayer::new(4, spec).unwrap();
            let (_, cache) = layer.forward_train(&x).unwrap();
            let expected = match object {
                EstimationObject::Covariance => {
                    let mut s = cache.whitened.groups[0].sigma.clone();
                    s.add_diagonal(-spec.epsilon);
                    s
                }
                EstimationObject::Whitening => cache.whitened.groups[0].w.clone(),
            };
            assert!((&layer.running_stat()[0] - &expected).max_abs() < 1e-15);
            assert_eq!(layer.running_mean(), x.row_means().as_slice());
        }
    }

    #[test]
    fn finalize_after_one_step_reproduces_batch_w() {
        let x = batch(2, 6, 40);
        for object in [EstimationObject::Covariance, EstimationObject::Whitening] {
            let spec = WhiteningSpec::new(TransformKind::Zca)
                .with_group_size(3)
                .with_momentum(1.0)
                .with_estimation(object);
            let mut layer = BwLayer::new(6, spec).unwrap();
            let (y_train, cache) = layer.forward_train(&x).unwrap();
            layer.finalize().unwrap();
            for (fw, g) in layer.finalized().unwrap().iter().zip(&cache.whitened.groups) {
                assert!((fw - &g.w).max_abs() < 1e-8);
            }
            let y_infer = layer.forward_infer(&x).unwrap();
            assert!((&y_infer - &y_train).max_abs() < 1e-7);
        }
    }

    #[test]
    fn state_errors() {
        let mut layer = BwLayer::new(3, WhiteningSpec::new(TransformKind::Zca)).unwrap();
        assert!(matches!(layer.finalize(), Err(Error::State(_))));
        assert!(matches!(layer.forward_infer(&batch(3, 3, 4)), Err(Error::State(_))));
        assert!(matches!(
            layer.forward_train(&Matrix::zeros(3, 1)),
            Err(Error::Validation(_))
        ));
        layer.forward_train(&batch(3, 3, 10)).unwrap();
        layer.finalize().unwrap();
        assert!(matches!(layer.forward_train(&batch(4, 3, 10)), Err(Error::State(_))));
        layer.train();
        assert!(layer.forward_train(&batch(4, 3, 10)).is_ok());
        assert!(BwLayer::new(4, WhiteningSpec::new(TransformKind::Zca).with_group_size(3)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut layer = BwLayer::new(4, WhiteningSpec::new(TransformKind::Itn)).unwrap();
        let x = batch(5, 4, 12);
        let (_, cache) = layer.forward_train(&x).unwrap();
        let grads = layer.backward_train(&cache, &Matrix::zeros(4, 12)).unwrap();
        assert_eq!(grads.dx.max_abs(), 0.0);
        match grads.recovery {
            RecoveryGrads::ScaleShift { d_gamma, d_beta } => {
                assert!(d_gamma.iter().chain(&d_beta).all(|&v| v == 0.0));
            }
            _ => unreachable!(),
        }
        assert!(layer.backward_train(&cache, &Matrix::zeros(4, 11)).is_err());
    }

    #[test]
    fn zero_gamma_blocks_input_gradient() {
        let mut layer = BwLayer::new(4, WhiteningSpec::new(TransformKind::Zca)).unwrap();
        if let Recovery::ScaleShift { gamma, .. } = layer.recovery_mut() {
            gamma.iter_mut().for_each(|g| *g = 0.0);
        }
        let x = batch(6, 4, 12);
        let (_, cache) = layer.forward_train(&x).unwrap();
        let dy = standard_normal_matrix(&mut stream(7, &[]), 4, 12);
        let grads = layer.backward_train(&cache, &dy).unwrap();
        assert_eq!(grads.dx.max_abs(), 0.0);
        match grads.recovery {
            RecoveryGrads::ScaleShift { d_beta, .. } => assert_eq!(d_beta, dy.row_sums()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn inference_of_running_mean_gives_bias() {
        let spec = WhiteningSpec::new(TransformKind::Cd).with_recovery(RecoveryKind::Coloring);
        let mut layer = BwLayer::new(3, spec).unwrap();
        layer.forward_train(&batch(8, 3, 16)).unwrap();
        if let Recovery::Coloring { bias, .. } = layer.recovery_mut() {
            *bias = vec![0.5, -1.0, 2.0];
        }
        layer.finalize().unwrap();
        let probe = Matrix::new(3, 1, layer.running_mean().to_vec()).unwrap();
        let y = layer.forward_infer(&probe).unwrap();
        assert_eq!(y.column(0), vec![0.5, -1.0, 2.0]);
    }
}
