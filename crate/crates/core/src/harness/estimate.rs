//! Comparing the two estimation objects on held-out accuracy.

use super::data::Dataset;
use super::mlp::MlpConfig;
use super::train::{train_mlp, TrainOptions};
use crate::error::{Error, Result};
use crate::transforms::{EstimationObject, TransformKind, WhiteningSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    /// Hidden widths to sweep; every hidden layer of a cell has this width.
    pub widths: Vec<usize>,
    pub batches: Vec<usize>,
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Base whitening spec; its kind and estimation object are overridden.
    pub spec: WhiteningSpec,
    pub kinds: Vec<TransformKind>,
    /// The two arms; the difference is `acc(arms.0) − acc(arms.1)`.
    pub arms: (EstimationObject, EstimationObject),
    pub hidden_layers: usize,
    pub epochs: usize,
    pub clamp_eigengap: bool,
    pub eval_batch: Option<usize>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            widths: vec![512],
            batches: vec![32],
            lrs: vec![1.0, 0.5],
            seeds: (0..5).collect(),
            spec: WhiteningSpec::new(TransformKind::Zca),
            kinds: vec![TransformKind::Zca, TransformKind::Cd],
            arms: (EstimationObject::Covariance, EstimationObject::Whitening),
            hidden_layers: 4,
            epochs: 1,
            clamp_eigengap: false,
            eval_batch: None,
        }
    }
}

/// One `(width, batch, lr, transform, seed)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub width: usize,
    pub batch: usize,
    pub lr: f64,
    pub kind: TransformKind,
    pub seed: u64,
    pub acc_a: f64,
    pub acc_b: f64,
    pub diverged: bool,
}

impl EstimateRow {
    pub fn difference(&self) -> f64 {
        self.acc_a - self.acc_b
    }
}

pub const ESTIMATE_CSV_HEADER: &str = "width,batch,lr,transform,seed,acc_sigma,acc_w,diff,diverged";

pub fn estimate_csv(rows: &[EstimateRow]) -> String {
    let mut out = format!("{ESTIMATE_CSV_HEADER}\n");
    for r in rows {
        let (a, b, d) = if r.diverged {
            (String::new(), String::new(), String::new())
        } else {
            (r.acc_a.to_string(), r.acc_b.to_string(), r.difference().to_string())
        };
        out.push_str(&format!(
            "{},{},{},{},{},{a},{b},{d},{}\n",
            r.width,
            r.batch,
            r.lr,
            r.kind,
            r.seed,
            u8::from(r.diverged)
        ));
    }
    out
}

/// Mean difference over the non-diverged rows matching `kind`.
pub fn mean_difference(rows: &[EstimateRow], kind: TransformKind) -> Option<f64> {
    let diffs: Vec<f64> = rows
        .iter()
        .filter(|r| r.kind == kind && !r.diverged)
        .map(EstimateRow::difference)
        .collect();
    (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
}

/// Trains one cell and evaluates both arms on `test`. Running statistics
/// never feed back into training, so the two arms share a single training
/// trajectory and differ only in what was averaged for inference.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cell(
    cfg: &EstimateConfig,
    width: usize,
    batch: usize,
    lr: f64,
    kind: TransformKind,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
) -> Result<EstimateRow> {
    let mut widths = vec![train.dim()];
    widths.extend(std::iter::repeat_n(width, cfg.hidden_layers));
    widths.push(train.classes());
    let spec = WhiteningSpec { kind, ..cfg.spec }.with_estimation(cfg.arms.0);
    let mlp = MlpConfig {
        widths,
        norm: Some(spec),
        lr,
        batch,
        epochs: cfg.epochs,
        clamp_eigengap: cfg.clamp_eigengap,
    };
    let options = TrainOptions {
        shadow_objects: vec![cfg.arms.0, cfg.arms.1],
        eval_batch: cfg.eval_batch,
        skip_train_eval: true,
        ..TrainOptions::default()
    };
    let out = train_mlp(&mlp, train, None, seed, &options)?;
    let mut row = EstimateRow {
        width,
        batch,
        lr,
        kind,
        seed,
        acc_a: f64::NAN,
        acc_b: f64::NAN,
        diverged: out.log.is_diverged(),
    };
    if row.diverged {
        return Ok(row);
    }
    let eval_batch = cfg.eval_batch.unwrap_or(super::train::DEFAULT_EVAL_BATCH);
    let mut accs = Vec::with_capacity(2);
    for (_, mut model) in out.shadows {
        match model.finalize().and_then(|_| model.evaluate(test, eval_batch)) {
            Ok(e) => accs.push(e.accuracy()),
            Err(e) if matches!(e, Error::Validation(_) | Error::Io(_) | Error::Parse { .. } | Error::State(_)) => {
                return Err(e)
            }
            Err(_) => {
                row.diverged = true;
                return Ok(row);
            }
        }
    }
    row.acc_a = accs[0];
    row.acc_b = accs[1];
    Ok(row)
}

/// Every cell of the grid, in `(width, batch, lr, kind, seed)` order.
pub fn estimation_compare(cfg: &EstimateConfig, train: &Dataset, test: &Dataset) -> Result<Vec<EstimateRow>> {
    let cells = grid(cfg)?;
    cells
        .into_iter()
        .map(|(w, b, lr, k, s)| estimate_cell(cfg, w, b, lr, k, s, train, test))
        .collect()
}

/// `(width, batch, lr, transform, seed)`.
pub type Cell = (usize, usize, f64, TransformKind, u64);

/// The cell coordinates of a grid; errors on an empty sweep.
pub fn grid(cfg: &EstimateConfig) -> Result<Vec<Cell>> {
    if cfg.widths.is_empty() || cfg.batches.is_empty() || cfg.lrs.is_empty() || cfg.seeds.is_empty() || cfg.kinds.is_empty()
    {
        return Err(Error::Validation("empty estimation sweep".into()));
    }
    let mut cells = Vec::new();
    for &w in &cfg.widths {
        for &b in &cfg.batches {
            for &lr in &cfg.lrs {
                for &k in &cfg.kinds {
                    for &s in &cfg.seeds {
                        cells.push((w, b, lr, k, s));
                    }
                }
            }
        }
    }
    Ok(cells)
}
