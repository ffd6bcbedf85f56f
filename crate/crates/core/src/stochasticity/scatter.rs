use super::sampler::Sampler;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::stream;
use crate::transforms::{apply_grouped, group_covariances, whitening_matrix, WhiteningSpec};

const TAG_POPULATION: u64 = 0x909;
const TAG_PROBE: u64 = 0x960;
const TAG_BATCH: u64 = 0xb7c;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterConfig {
    pub batch: usize,
    pub trials: usize,
    /// Zero-based coordinates to report.
    pub axes: (usize, usize),
    /// Raw population points emitted for context.
    pub population: usize,
    pub seed: u64,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            trials: 100,
            axes: (5, 15),
            population: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterResult {
    pub population: Vec<(f64, f64)>,
    /// The probe's normalized coordinates under each trial batch.
    pub normalized: Vec<(f64, f64)>,
}

impl ScatterResult {
    /// Population standard deviation of the normalized cloud along each axis.
    pub fn normalized_std(&self) -> (f64, f64) {
        let n = self.normalized.len() as f64;
        let (mx, my) = self
            .normalized
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
        let (vx, vy) = self
            .normalized
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + (x - mx).powi(2) / n, b + (y - my).powi(2) / n));
        (vx.sqrt(), vy.sqrt())
    }
}

/// Normalizes one fixed probe against `trials` independent mini-batches and
/// reports two of its coordinates per trial.
pub fn scatter_probe(sampler: &dyn Sampler, spec: &WhiteningSpec, config: &ScatterConfig) -> Result<ScatterResult> {
    let d = sampler.dim();
    let (a, b) = config.axes;
    if a >= d || b >= d {
        return Err(Error::Validation(format!(
            "scatter axes ({a}, {b}) out of range for dimension {d}"
        )));
    }
    if config.trials < 1 {
        return Err(Error::Validation("scatter needs at least one trial".into()));
    }
    if config.batch < 2 {
        return Err(Error::Validation("scatter batches need at least 2 samples".into()));
    }
    let group = spec.resolve(d)?;
    let pop = sampler.sample(&mut stream(config.seed, &[TAG_POPULATION]), config.population.max(1));
    let population = (0..config.population).map(|j| (pop[(a, j)], pop[(b, j)])).collect();
    let probe = sampler.sample(&mut stream(config.seed, &[TAG_PROBE]), 1);

    let mut normalized = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let batch = sampler.sample(&mut stream(config.seed, &[TAG_BATCH, t as u64]), config.batch);
        let mu = batch.row_means();
        let ws = group_covariances(&batch.sub_row_vector(&mu), group, spec.epsilon)
            .iter()
            .map(|s| whitening_matrix(s, spec.kind, spec.itn_iterations).map(|(w, _)| w))
            .collect::<Result<Vec<Matrix>>>()?;
        let out = apply_grouped(&ws, &probe.sub_row_vector(&mu));
        normalized.push((out[(a, 0)], out[(b, 0)]));
    }
    Ok(ScatterResult { population, normalized })
}
