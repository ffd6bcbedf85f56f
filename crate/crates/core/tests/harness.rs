use std::path::PathBuf;

use bwlab::gradcheck::{max_relative_error, FD_STEP, LAYER_TOLERANCE, MIN_EIGENGAP};
use bwlab::linalg::sym_eig;
use bwlab::harness::data::{parse_idx_images, parse_idx_labels};
use bwlab::harness::*;
use bwlab::layer::Recovery;
use bwlab::rng::{standard_normal_matrix, stream};
use bwlab::transforms::{EstimationObject, RecoveryKind, TransformKind, WhiteningSpec};
use bwlab::{Error, Matrix};

fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x803, count, rows, cols] {
        b.extend(v.to_be_bytes());
    }
    b.extend(pixels);
    b
}

fn idx_labels(magic: u32, labels: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    b
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bwlab-harness-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn idx_fixture_loads() {
    let dir = tmp_dir("fixture");
    let (ip, lp) = (dir.join("img"), dir.join("lbl"));
    std::fs::write(&ip, idx_images(2, 2, 2, &[0, 255, 0, 255, 255, 0, 255, 0])).unwrap();
    std::fs::write(&lp, idx_labels(0x801, &[3, 7])).unwrap();
    let data = load_idx(&ip, &lp).unwrap();
    assert_eq!((data.len(), data.dim()), (2, 4));
    assert_eq!(data.sample(0), &[0.0, 1.0, 0.0, 1.0]);
    assert_eq!(data.sample(1), &[1.0, 0.0, 1.0, 0.0]);
    assert_eq!(data.labels(), &[3, 7]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn idx_errors_name_offsets() {
    let err = parse_idx_labels(&idx_labels(0x802, &[1])).unwrap_err();
    assert!(matches!(&err, Error::Parse { offset: 0, message } if message.contains("bad magic")), "{err}");

    let err = parse_idx_images(&idx_images(2, 2, 2, &[0; 5])).unwrap_err();
    assert!(matches!(err, Error::Parse { offset: 21, .. }), "{err}");

    let err = parse_idx_labels(&idx_labels(0x801, &[1, 12])).unwrap_err();
    assert!(matches!(err, Error::Parse { offset: 9, .. }), "{err}");

    let dir = tmp_dir("mismatch");
    let (ip, lp) = (dir.join("img"), dir.join("lbl"));
    std::fs::write(&ip, idx_images(2, 1, 1, &[0, 1])).unwrap();
    std::fs::write(&lp, idx_labels(0x801, &[1, 2, 3])).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::Parse { .. })));
    assert!(matches!(load_idx(&dir.join("missing"), &lp), Err(Error::Io(_))));
    std::fs::remove_dir_all(dir).unwrap();
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("BWLAB_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/data/mnist"))
}

#[test]
fn real_mnist_shapes() {
    let dir = mnist_dir();
    if !mnist_paths(&dir).iter().all(|p| p.exists()) {
        eprintln!("MNIST not found under {}, skipping", dir.display());
        return;
    }
    let (train, test) = load_mnist(&dir).unwrap();
    assert_eq!((train.len(), train.dim()), (60000, 784));
    assert_eq!((test.len(), test.dim()), (10000, 784));
    let (lo, hi) = (0..100).flat_map(|i| train.sample(i).to_vec()).fold((1.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    assert_eq!((lo, hi), (0.0, 1.0));
}

#[test]
fn synth_gaussian_basics() {
    let empty = synth_gaussian(3, 0, &CovarianceRecipe::Identity, 1).unwrap();
    assert!(empty.is_empty());

    let recipe = CovarianceRecipe::Mixed { seed: 4 };
    let a = synth_gaussian(5, 100_000, &recipe, 9).unwrap();
    assert_eq!(a, synth_gaussian(5, 100_000, &recipe, 9).unwrap());
    assert_ne!(a, synth_gaussian(5, 100_000, &recipe, 10).unwrap());

    let target = bwlab::stochasticity::GaussianSampler::mixed(5, 4).covariance().clone();
    let n = a.len() as f64;
    for r in 0..5 {
        for c in 0..5 {
            let cov: f64 = (0..a.len()).map(|i| a.sample(i)[r] * a.sample(i)[c]).sum::<f64>() / n;
            assert!((cov - target[(r, c)]).abs() < 0.05, "({r},{c}): {cov} vs {}", target[(r, c)]);
        }
    }

    let not_spd = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
    assert!(matches!(
        synth_gaussian(2, 10, &CovarianceRecipe::Explicit(not_spd), 0),
        Err(Error::Validation(_))
    ));
}

fn tiny_config(kind: Option<TransformKind>, group: Option<usize>) -> MlpConfig {
    MlpConfig {
        widths: vec![8, 6, 6, 4],
        norm: kind.map(|k| WhiteningSpec {
            group_size: group,
            ..WhiteningSpec::new(k)
        }),
        lr: 0.1,
        batch: 16,
        epochs: 2,
        clamp_eigengap: false,
    }
}

fn tiny_data(n: usize, seed: u64) -> Dataset {
    let full = synth_gaussian(8, n, &CovarianceRecipe::Mixed { seed: 1 }, seed).unwrap();
    let labels: Vec<u8> = full.labels().iter().map(|l| l % 4).collect();
    let features = (0..n).flat_map(|i| full.sample(i).to_vec()).collect();
    Dataset::new(8, features, labels, 4).unwrap()
}

#[test]
fn width_mismatch_is_a_validation_error() {
    let data = synth_gaussian(5, 64, &CovarianceRecipe::Identity, 0).unwrap();
    let err = train_mlp(&tiny_config(None, None), &data, None, 0, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

fn flat_parameters(model: &Mlp) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &model.linears {
        out.extend(l.weight.as_slice());
        out.extend(&l.bias);
    }
    for bw in model.norms.iter().flatten() {
        match bw.recovery() {
            Recovery::ScaleShift { gamma, beta } => out.extend(gamma.iter().chain(beta)),
            Recovery::Coloring { weight, bias } => out.extend(weight.as_slice().iter().chain(bias)),
        }
    }
    out
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = tiny_data(80, 2);
    let cfg = MlpConfig {
        lr: 0.0,
        epochs: 1,
        ..tiny_config(Some(TransformKind::Zca), None)
    };
    let before = Mlp::new(&cfg, 5).unwrap();
    let out = train_mlp(&cfg, &data, None, 5, &TrainOptions::default()).unwrap();
    assert_eq!(flat_parameters(&before), flat_parameters(&out.model));
    assert_eq!(out.log.records.len(), 1);
}

/// Relative error, except for blocks that are identically zero in exact
/// arithmetic (biases feeding a normalizer): there the finite-difference
/// value is pure roundoff and the absolute difference is checked instead.
fn block_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    if analytic.max_abs().max(numeric.max_abs()) < 1e-8 {
        return if (analytic - numeric).max_abs() < 1e-9 { 0.0 } else { f64::INFINITY };
    }
    max_relative_error(analytic, numeric)
}

/// Central differences of the batch loss with respect to one parameter,
/// reached through `get`.
fn fd(model: &Mlp, x: &Matrix, labels: &[u8], get: impl Fn(&mut Mlp) -> &mut f64) -> f64 {
    let mut plus = model.clone();
    *get(&mut plus) += FD_STEP;
    let mut minus = model.clone();
    *get(&mut minus) -= FD_STEP;
    let lp = plus.forward(x, labels).unwrap().loss;
    let lm = minus.forward(x, labels).unwrap().loss;
    (lp - lm) / (2.0 * FD_STEP)
}

/// Whether every whitened group of the batch is usable for finite
/// differences. Dead ReLU units make the next covariance rank deficient, and
/// the eigenvector-based transforms additionally need separated eigenvalues.
fn well_conditioned(tape: &Tape, layers: usize, kind: TransformKind) -> bool {
    let needs_gap = matches!(kind, TransformKind::Pca | TransformKind::Zca);
    (0..layers).filter_map(|l| tape.norm_cache(l)).all(|(_, cache)| {
        cache.whitened.groups.iter().all(|g| {
            let eig = sym_eig(&g.sigma).unwrap();
            let smallest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let gap_ok = !needs_gap || eig.min_gap().is_none_or(|(_, _, gap)| gap >= MIN_EIGENGAP);
            smallest >= 1e-3 && gap_ok
        })
    })
}

fn whole_model_error(cfg: &MlpConfig, seed: u64) -> Option<f64> {
    let mut model = Mlp::new(cfg, seed).unwrap();
    // Zero biases put samples whose ReLU inputs are all dead exactly on a kink.
    for (l, lin) in model.linears.iter_mut().enumerate() {
        let b = standard_normal_matrix(&mut stream(seed, &[0xb1, l as u64]), 1, lin.bias.len());
        lin.bias = b.scale(0.1).into_vec();
    }
    for (k, bw) in model.norms.iter_mut().flatten().enumerate() {
        let mut rng = stream(seed, &[0x9e, k as u64]);
        match bw.recovery_mut() {
            Recovery::ScaleShift { gamma, beta } => {
                let g = standard_normal_matrix(&mut rng, 2, gamma.len());
                gamma.iter_mut().zip(g.row(0)).for_each(|(v, n)| *v = 1.0 + 0.3 * n);
                beta.copy_from_slice(g.row(1));
            }
            Recovery::Coloring { weight, bias } => {
                let d = bias.len();
                *weight = &Matrix::identity(d) + &standard_normal_matrix(&mut rng, d, d).scale(0.3);
                bias.copy_from_slice(&standard_normal_matrix(&mut rng, 1, d).into_vec());
            }
        }
    }
    let data = tiny_data(16, seed);
    let (x, labels) = data.batch(&(0..16).collect::<Vec<_>>()).unwrap();
    let tape = model.forward(&x, &labels).ok()?;
    if cfg.norm.is_some_and(|n| !well_conditioned(&tape, model.norms.len(), n.kind)) {
        return None;
    }
    let grads = model.backward(&tape, &labels).unwrap();
    let mut worst = 0.0f64;
    for l in 0..model.linears.len() {
        let (dw, db) = &grads.linear[l];
        let (r, c) = dw.shape();
        let num_w = Matrix::from_fn(r, c, |i, j| fd(&model, &x, &labels, |m| &mut m.linears[l].weight[(i, j)]));
        worst = worst.max(block_error(dw, &num_w));
        let num_b: Vec<f64> = (0..r).map(|i| fd(&model, &x, &labels, |m| &mut m.linears[l].bias[i])).collect();
        worst = worst.max(block_error(
            &Matrix::new(1, r, db.clone()).unwrap(),
            &Matrix::new(1, r, num_b).unwrap(),
        ));
    }
    Some(worst)
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    let kinds = [
        TransformKind::Bn,
        TransformKind::Pca,
        TransformKind::Zca,
        TransformKind::Cd,
        TransformKind::Itn,
    ];
    let mut cases = vec![tiny_config(None, None)];
    for kind in kinds {
        for group in [Some(3), None] {
            cases.push(tiny_config(Some(kind), group));
        }
    }
    let coloring = MlpConfig {
        norm: Some(WhiteningSpec::new(TransformKind::Zca).with_recovery(RecoveryKind::Coloring)),
        ..tiny_config(None, None)
    };
    cases.push(coloring);
    for cfg in &cases {
        let mut checked = 0;
        for seed in 0..200 {
            if let Some(err) = whole_model_error(cfg, seed) {
                assert!(err < LAYER_TOLERANCE, "{:?} seed {seed}: {err:e}", cfg.norm);
                checked += 1;
                if checked == 3 {
                    break;
                }
            }
        }
        assert_eq!(checked, 3, "{:?}: too few well-conditioned instances", cfg.norm);
    }
}

#[test]
fn replay_is_bit_exact() {
    let data = tiny_data(96, 3);
    let cfg = tiny_config(Some(TransformKind::Zca), Some(3));
    let opts = TrainOptions {
        record_layer: Some(0),
        ..TrainOptions::default()
    };
    let a = train_mlp(&cfg, &data, Some(&data), 11, &opts).unwrap();
    let b = train_mlp(&cfg, &data, Some(&data), 11, &opts).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.log.config_digest, b.log.config_digest);
    assert_eq!(a.model, b.model);
    let c = train_mlp(&cfg, &data, Some(&data), 12, &opts).unwrap();
    assert_ne!(a.log.to_csv(), c.log.to_csv());
}

#[test]
fn evaluation_is_batch_size_invariant() {
    let data = tiny_data(300, 4);
    let cfg = tiny_config(Some(TransformKind::Cd), None);
    let mut model = train_mlp(&cfg, &data, None, 1, &TrainOptions::default()).unwrap().model;
    model.finalize().unwrap();
    let one = model.evaluate(&data, 1).unwrap();
    let many = model.evaluate(&data, 256).unwrap();
    assert_eq!(one.error_rate, many.error_rate);
}

#[test]
fn log_has_monotone_epochs_and_rates_in_range() {
    let data = tiny_data(128, 5);
    let cfg = MlpConfig {
        epochs: 3,
        ..tiny_config(Some(TransformKind::Bn), None)
    };
    let log = train_mlp(&cfg, &data, Some(&data), 0, &TrainOptions::default()).unwrap().log;
    assert_eq!(log.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    for r in &log.records {
        assert!((0.0..=1.0).contains(&r.train_error));
        assert!((0.0..=1.0).contains(&r.test_accuracy.unwrap()));
    }
    let csv = log.to_csv();
    assert!(csv.starts_with("epoch,train_error,train_loss,test_acc,diverged\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn numeric_failure_marks_the_run_diverged() {
    let data = tiny_data(64, 6);
    let cfg = MlpConfig {
        lr: 1e6,
        epochs: 5,
        ..tiny_config(Some(TransformKind::Pca), None)
    };
    let log = train_mlp(&cfg, &data, None, 0, &TrainOptions::default()).unwrap().log;
    assert!(log.is_diverged(), "{:?}", log.records);
    assert!(log.to_csv().trim_end().ends_with(",,,,1"));
}

#[test]
fn recorded_statistics_cover_every_step() {
    let data = tiny_data(64, 7);
    let cfg = tiny_config(Some(TransformKind::Zca), None);
    let opts = TrainOptions {
        record_layer: Some(1),
        keep_every: 2,
        ..TrainOptions::default()
    };
    let stats = train_mlp(&cfg, &data, None, 0, &opts).unwrap().stats.unwrap();
    assert_eq!(stats.sigma.len(), 8);
    assert_eq!(stats.w.len(), 8);
    assert_eq!(stats.sigma_kept.len(), 4);
    assert!(stats.sigma_kept[0].asymmetry() == 0.0);
}

fn estimate_config(arms: (EstimationObject, EstimationObject)) -> EstimateConfig {
    EstimateConfig {
        widths: vec![6],
        batches: vec![16],
        lrs: vec![0.2],
        seeds: vec![0, 1],
        kinds: vec![TransformKind::Zca, TransformKind::Cd],
        arms,
        hidden_layers: 2,
        epochs: 2,
        ..EstimateConfig::default()
    }
}

#[test]
fn identical_arms_give_zero_difference() {
    let train = tiny_data(96, 8);
    let test = tiny_data(64, 9);
    for object in [EstimationObject::Covariance, EstimationObject::Whitening] {
        let rows = estimation_compare(&estimate_config((object, object)), &train, &test).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| !r.diverged && r.difference() == 0.0));
    }
}

#[test]
fn shared_trajectory_matches_separately_trained_arms() {
    let train = tiny_data(96, 8);
    let test = tiny_data(64, 9);
    let cfg = estimate_config((EstimationObject::Covariance, EstimationObject::Whitening));
    let row = estimate_cell(&cfg, 6, 16, 0.2, TransformKind::Zca, 3, &train, &test).unwrap();
    let mut accs = Vec::new();
    for object in [cfg.arms.0, cfg.arms.1] {
        let mlp = MlpConfig {
            widths: vec![8, 6, 6, 4],
            norm: Some(WhiteningSpec::new(TransformKind::Zca).with_estimation(object)),
            lr: 0.2,
            batch: 16,
            epochs: 2,
            clamp_eigengap: false,
        };
        let opts = TrainOptions {
            skip_train_eval: true,
            ..TrainOptions::default()
        };
        let mut model = train_mlp(&mlp, &train, None, 3, &opts).unwrap().model;
        model.finalize().unwrap();
        accs.push(model.evaluate(&test, 1000).unwrap().accuracy());
    }
    assert_eq!((row.acc_a, row.acc_b), (accs[0], accs[1]));
}

#[test]
fn empty_estimation_sweep_is_rejected() {
    let data = tiny_data(32, 0);
    let cfg = EstimateConfig {
        seeds: vec![],
        ..EstimateConfig::default()
    };
    assert!(matches!(estimation_compare(&cfg, &data, &data), Err(Error::Validation(_))));
}

#[test]
fn estimate_csv_layout() {
    let rows = vec![EstimateRow {
        width: 512,
        batch: 32,
        lr: 0.5,
        kind: TransformKind::Zca,
        seed: 2,
        acc_a: 0.75,
        acc_b: 0.5,
        diverged: false,
    }];
    assert_eq!(
        estimate_csv(&rows),
        "width,batch,lr,transform,seed,acc_sigma,acc_w,diff,diverged\n512,32,0.5,zca,2,0.75,0.5,0.25,0\n"
    );
}

