use bwlab::layer::{BwLayer, Mode};
use bwlab::rng::{standard_normal_matrix, stream};
use bwlab::transforms::{EstimationObject, TransformKind, WhiteningSpec};
use bwlab::{Error, Matrix};

/// Zero-mean Gaussian columns with covariance `A Aᵀ/d + ½ I`, `A` drawn from `mix_seed`.
fn gaussian(mix_seed: u64, seed: u64, d: usize, m: usize) -> Matrix {
    let a = standard_normal_matrix(&mut stream(mix_seed, &[d as u64]), d, d);
    let mut sigma = a.matmul_t(&a).scale(1.0 / d as f64);
    sigma.add_diagonal(0.5);
    let l = bwlab::linalg::cholesky(&sigma).unwrap();
    &l * &standard_normal_matrix(&mut stream(seed, &[m as u64]), d, m)
}

fn cov(x: &Matrix) -> Matrix {
    x.sub_row_vector(&x.row_means()).gram()
}

const EXACT: [TransformKind; 3] = [TransformKind::Pca, TransformKind::Zca, TransformKind::Cd];

#[test]
fn train_output_is_white_per_group() {
    let (d, m) = (8, 64);
    for kind in EXACT {
        for g in [2, 4, 8] {
            let mut layer = BwLayer::new(d, WhiteningSpec::new(kind).with_group_size(g)).unwrap();
            let (_, cache) = layer.forward_train(&gaussian(1, 2, d, m)).unwrap();
            let c = cov(cache.xhat());
            let bound = 5.0 * g as f64 / (m as f64).sqrt();
            for b in 0..d / g {
                let block = c.diag_block(b * g, g);
                let dev = (&block - &Matrix::identity(g)).frobenius_norm();
                assert!(dev < bound, "{kind} g={g}: {dev}");
                assert!(dev < 1e-3, "{kind} g={g}: {dev}");
            }
        }
    }
}

#[test]
fn whitened_output_is_scale_invariant() {
    let x = gaussian(3, 4, 6, 40);
    for kind in TransformKind::ALL {
        let layer = BwLayer::new(6, WhiteningSpec::new(kind).with_epsilon(0.0)).unwrap();
        let base = layer.forward_batch(&x).unwrap().1;
        for alpha in [0.1, 10.0] {
            let scaled = layer.forward_batch(&x.scale(alpha)).unwrap().1;
            let diff = (scaled.xhat() - base.xhat()).max_abs();
            assert!(diff < 1e-8, "{kind} alpha={alpha}: {diff:e}");
        }
    }
}

#[test]
fn running_statistic_contracts_geometrically() {
    let lambda = 0.25;
    let x = gaussian(5, 6, 4, 32);
    for object in [EstimationObject::Covariance, EstimationObject::Whitening] {
        let spec = WhiteningSpec::new(TransformKind::Zca)
            .with_momentum(lambda)
            .with_estimation(object);
        let mut layer = BwLayer::new(4, spec).unwrap();
        let target = {
            let mut probe = BwLayer::new(4, spec.with_momentum(1.0)).unwrap();
            probe.forward_train(&x).unwrap();
            probe.running_stat()[0].clone()
        };
        let mut prev = (&layer.running_stat()[0] - &target).frobenius_norm();
        for _ in 0..20 {
            layer.forward_train(&x).unwrap();
            let now = (&layer.running_stat()[0] - &target).frobenius_norm();
            assert!((now / prev - (1.0 - lambda)).abs() < 1e-9, "{object:?}: ratio {}", now / prev);
            prev = now;
        }
    }
}

#[test]
fn cd_grouped_output_has_identity_blocks() {
    let (d, g, m) = (16, 4, 256);
    // groups are independent in the population, so cross blocks carry only sampling noise
    let mut x = Matrix::zeros(d, m);
    for b in 0..d / g {
        x.set_row_block(b * g, &gaussian(20 + b as u64, 30 + b as u64, g, m));
    }
    let mut layer = BwLayer::new(d, WhiteningSpec::new(TransformKind::Cd).with_group_size(g)).unwrap();
    let (_, cache) = layer.forward_train(&x).unwrap();
    let c = cov(cache.xhat());
    for i in 0..d {
        for j in 0..d {
            let (bi, bj) = (i / g, j / g);
            let target = if i == j { 1.0 } else { 0.0 };
            let dev = (c[(i, j)] - target).abs();
            if bi == bj {
                assert!(dev < 1e-2, "({i},{j}) {dev}");
            } else {
                assert!(dev < 5.0 / (m as f64).sqrt(), "({i},{j}) {dev}");
            }
        }
    }
}

#[test]
fn inference_statistics_whiten_fresh_data() {
    let (d, m) = (16, 1024);
    let spec = WhiteningSpec::new(TransformKind::Zca).with_momentum(0.1);
    let mut layer = BwLayer::new(d, spec).unwrap();
    for step in 0..500 {
        layer.forward_train(&gaussian(40, 1000 + step, d, m)).unwrap();
    }
    layer.finalize().unwrap();
    assert_eq!(layer.mode(), Mode::Inference);
    let y = layer.forward_infer(&gaussian(40, 99, d, 10_000)).unwrap();
    let dev = (&cov(&y) - &Matrix::identity(d)).max_abs();
    assert!(dev < 0.05, "max entry deviation {dev}");
}

#[test]
fn one_step_finalize_matches_batch_whitening_for_both_objects() {
    let x = gaussian(7, 8, 4, 16);
    let mut outputs = Vec::new();
    for object in [EstimationObject::Covariance, EstimationObject::Whitening] {
        let spec = WhiteningSpec::new(TransformKind::Zca)
            .with_momentum(1.0)
            .with_estimation(object);
        let mut layer = BwLayer::new(4, spec).unwrap();
        let (y_train, cache) = layer.forward_train(&x).unwrap();
        layer.finalize().unwrap();
        let w = &layer.finalized().unwrap()[0];
        let batch_w = &cache.whitened.groups[0].w;
        assert!((w - batch_w).max_abs() < 1e-8, "{object:?}");
        let y_infer = layer.forward_infer(&x).unwrap();
        assert!((&y_infer - &y_train).max_abs() < 1e-7, "{object:?}");
        outputs.push(w.clone());
    }
    assert!((&outputs[0] - &outputs[1]).max_abs() < 1e-8);
}

#[test]
fn averaging_does_not_commute_with_the_matrix_function() {
    let first = gaussian(50, 51, 4, 32);
    let second = gaussian(52, 53, 4, 32).scale(3.0);
    let mut finals = Vec::new();
    for object in [EstimationObject::Covariance, EstimationObject::Whitening] {
        let spec = WhiteningSpec::new(TransformKind::Zca)
            .with_momentum(0.5)
            .with_estimation(object);
        let mut layer = BwLayer::new(4, spec).unwrap();
        layer.forward_train(&first).unwrap();
        layer.forward_train(&second).unwrap();
        layer.finalize().unwrap();
        finals.push(layer.finalized().unwrap()[0].clone());
    }
    assert!((&finals[0] - &finals[1]).frobenius_norm() > 1e-3);
}

#[test]
fn inference_is_per_column() {
    let mut layer = BwLayer::new(8, WhiteningSpec::new(TransformKind::Cd).with_group_size(4)).unwrap();
    layer.forward_train(&gaussian(60, 61, 8, 64)).unwrap();
    layer.finalize().unwrap();
    let a = gaussian(60, 62, 8, 7);
    let b = gaussian(60, 63, 8, 13);
    let joint = layer.forward_infer(&Matrix::hstack(&[a.clone(), b.clone()])).unwrap();
    let split = Matrix::hstack(&[layer.forward_infer(&a).unwrap(), layer.forward_infer(&b).unwrap()]);
    assert_eq!(joint, split);
    for j in 0..a.cols() {
        let col = Matrix::new(8, 1, a.column(j)).unwrap();
        let single = layer.forward_infer(&col).unwrap();
        assert_eq!(single.as_slice(), joint.column(j).as_slice());
    }
}

#[test]
fn training_rejects_single_sample_batches() {
    let mut layer = BwLayer::new(3, WhiteningSpec::default()).unwrap();
    let x = gaussian(1, 1, 3, 1);
    assert!(matches!(layer.forward_train(&x), Err(Error::Validation(_))));
    assert_eq!(layer.steps(), 0);
}
