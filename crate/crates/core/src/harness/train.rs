//! Training runs, logs and statistic recording.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use super::data::Dataset;
use super::mlp::{Mlp, MlpConfig};
use crate::error::{Error, Result};
use crate::layer::BwLayer;
use crate::linalg::Matrix;
use crate::rng::stream;
use crate::stochasticity::DiversityAccumulator;
use crate::transforms::EstimationObject;

pub const DEFAULT_EVAL_BATCH: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_error: f64,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub seed: u64,
    pub config_digest: String,
    pub records: Vec<EpochRecord>,
    /// Epoch and reason of a numeric failure; the curve stops there.
    pub diverged: Option<(usize, String)>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,train_error,train_loss,test_acc,diverged";

    /// `epoch,train_error,train_loss,test_acc,diverged`; a diverged run ends
    /// with one row for the failing epoch with empty metrics. Wall-clock
    /// times are left out so the file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let test = r.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},0", r.epoch, r.train_error, r.train_loss, test);
        }
        if let Some((epoch, _)) = &self.diverged {
            let _ = writeln!(out, "{epoch},,,,1");
        }
        out
    }

    pub fn final_train_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_error)
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged.is_some()
    }
}

/// Which statistics to record during training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOptions {
    /// Hidden layer whose per-step `Σ_t` and `W_t` (first group) are tracked.
    pub record_layer: Option<usize>,
    /// Keep every `k`-th recorded matrix in memory (0 keeps none).
    pub keep_every: usize,
    /// Also track the running statistics under these estimation objects,
    /// on the same training trajectory.
    pub shadow_objects: Vec<EstimationObject>,
    pub eval_batch: Option<usize>,
    /// Skip the per-epoch full-training-set evaluation.
    pub skip_train_eval: bool,
}

#[derive(Debug, Clone)]
pub struct StatRecording {
    pub layer: usize,
    pub sigma: DiversityAccumulator,
    pub w: DiversityAccumulator,
    pub sigma_kept: Vec<Matrix>,
    pub w_kept: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub log: TrainLog,
    pub model: Mlp,
    pub stats: Option<StatRecording>,
    /// One model per shadow estimation object: the trained weights with that
    /// object's running statistics.
    pub shadows: Vec<(EstimationObject, Mlp)>,
}

pub fn config_digest(config: &MlpConfig) -> String {
    let digest = Sha256::digest(format!("{config:?}").as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::NotPositiveDefinite { .. }
            | Error::Singular { .. }
            | Error::NonPositiveEigenvalue { .. }
            | Error::NoConvergence { .. }
            | Error::Degenerate { .. }
            | Error::NonFinite(_)
    )
}

fn shadow_norms(model: &Mlp, object: EstimationObject) -> Result<Vec<Option<BwLayer>>> {
    model
        .norms
        .iter()
        .map(|n| match n {
            Some(bw) => {
                let spec = bw.spec().with_estimation(object);
                Ok(Some(BwLayer::new(bw.dim(), spec)?))
            }
            None => Ok(None),
        })
        .collect()
}

fn assemble_shadow(model: &Mlp, norms: &[Option<BwLayer>]) -> Mlp {
    let norms = norms
        .iter()
        .zip(&model.norms)
        .map(|(s, m)| match (s, m) {
            (Some(s), Some(m)) => {
                let mut s = s.clone();
                *s.recovery_mut() = m.recovery().clone();
                Some(s)
            }
            _ => None,
        })
        .collect();
    Mlp {
        linears: model.linears.clone(),
        norms,
    }
}

/// Trains with plain SGD. Each epoch visits a seeded permutation of the
/// training set in full batches (the remainder is dropped), then evaluates
/// the inference-mode model on the whole training set and, if given, the
/// test set. A numeric failure ends the run and marks the log diverged.
pub fn train_mlp(
    config: &MlpConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainOutput> {
    config.validate()?;
    if train.dim() != config.widths[0] || train.classes() > *config.widths.last().unwrap() {
        return Err(Error::Validation(format!(
            "dataset (dim {}, {} classes) does not match widths {:?}",
            train.dim(),
            train.classes(),
            config.widths
        )));
    }
    if train.len() < config.batch {
        return Err(Error::Validation(format!(
            "training set of {} samples is smaller than one batch of {}",
            train.len(),
            config.batch
        )));
    }
    if let Some(l) = options.record_layer {
        if l >= config.hidden_layers() {
            return Err(Error::Validation(format!("no hidden layer {l} to record")));
        }
    }
    let mut model = Mlp::new(config, seed)?;
    let mut shadows = options
        .shadow_objects
        .iter()
        .map(|&o| Ok((o, shadow_norms(&model, o)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut log = TrainLog {
        seed,
        config_digest: config_digest(config),
        records: Vec::new(),
        diverged: None,
    };
    let mut stats = options.record_layer.map(|layer| StatRecording {
        layer,
        sigma: DiversityAccumulator::new(),
        w: DiversityAccumulator::new(),
        sigma_kept: Vec::new(),
        w_kept: Vec::new(),
    });
    let eval_batch = options.eval_batch.unwrap_or(DEFAULT_EVAL_BATCH);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;

    'epochs: for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream(seed, &[0x5e0f, epoch as u64]));
        for chunk in order.chunks_exact(config.batch) {
            let (x, labels) = train.batch(chunk)?;
            let tape = match model.train_step(&x, &labels, config.lr) {
                Ok(t) => t,
                Err(e) if is_numeric_failure(&e) => {
                    log.diverged = Some((epoch, e.to_string()));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            for (_, norms) in &mut shadows {
                for (bw, cache) in norms.iter_mut().zip((0..).map(|l| tape.norm_cache(l))) {
                    if let (Some(bw), Some((mu, cache))) = (bw, cache) {
                        bw.record_batch(mu, &cache.whitened)?;
                    }
                }
            }
            if let Some(rec) = &mut stats {
                if let Some((_, cache)) = tape.norm_cache(rec.layer) {
                    let group = &cache.whitened.groups[0];
                    let mut sigma = group.sigma.clone();
                    sigma.add_diagonal(-config.norm.map(|s| s.epsilon).unwrap_or(0.0));
                    rec.sigma.push(&sigma)?;
                    rec.w.push(&group.w)?;
                    if options.keep_every > 0 && step.is_multiple_of(options.keep_every) {
                        rec.sigma_kept.push(sigma);
                        rec.w_kept.push(group.w.clone());
                    }
                }
            }
            step += 1;
        }
        let evaluated = (|| -> Result<EpochRecord> {
            model.finalize()?;
            let (train_error, train_loss) = if options.skip_train_eval {
                (f64::NAN, f64::NAN)
            } else {
                let e = model.evaluate(train, eval_batch)?;
                (e.error_rate, e.loss)
            };
            let test_accuracy = match test {
                Some(t) => Some(model.evaluate(t, eval_batch)?.accuracy()),
                None => None,
            };
            model.train_mode();
            Ok(EpochRecord {
                epoch,
                train_error,
                train_loss,
                test_accuracy,
                wall_seconds: started.elapsed().as_secs_f64(),
            })
        })();
        match evaluated {
            Ok(r) if r.train_loss.is_finite() || options.skip_train_eval => log.records.push(r),
            Ok(r) => {
                log.diverged = Some((epoch, format!("training loss is {}", r.train_loss)));
                model.train_mode();
                break;
            }
            Err(e) if is_numeric_failure(&e) => {
                log.diverged = Some((epoch, e.to_string()));
                model.train_mode();
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let shadows = shadows
        .iter()
        .map(|(o, norms)| (*o, assemble_shadow(&model, norms)))
        .collect();
    Ok(TrainOutput {
        log,
        model,
        stats,
        shadows,
    })
}
