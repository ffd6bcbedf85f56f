use super::sampler::Sampler;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::stream;
use crate::transforms::{apply_grouped, group_covariances, whitening_matrix, TransformKind, WhiteningSpec};

const TAG_BATCH: u64 = 0xb7c;
const TAG_PROBE: u64 = 0x960;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SndConfig {
    /// Mini-batch size `B`.
    pub batch: usize,
    /// Number of mini-batches `s` per probe.
    pub num_batches: usize,
    /// Number of probe points `N`.
    pub num_points: usize,
    pub seed: u64,
    /// Compute the batch statistics over `X^B ∪ {x}` instead of `X^B`.
    pub probe_in_batch: bool,
}

impl Default for SndConfig {
    fn default() -> Self {
        Self {
            batch: 1024,
            num_batches: 200,
            num_points: 20,
            seed: 0,
            probe_in_batch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SndReport {
    pub kind: TransformKind,
    pub dim: usize,
    pub group: usize,
    pub config: SndConfig,
    /// `Δ̂(x_i)` for each probe.
    pub per_point: Vec<f64>,
    /// Mean of `per_point`.
    pub snd: f64,
    pub warnings: Vec<String>,
}

impl SndReport {
    /// Sample standard deviation of the per-point disturbances.
    pub fn std_over_points(&self) -> f64 {
        let n = self.per_point.len();
        if n < 2 {
            return 0.0;
        }
        let ss: f64 = self.per_point.iter().map(|v| (v - self.snd).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn standard_error(&self) -> f64 {
        self.std_over_points() / (self.per_point.len() as f64).sqrt()
    }
}

fn batch_whitening(x: &Matrix, spec: &WhiteningSpec, group: usize) -> Result<(Vec<f64>, Vec<Matrix>)> {
    let mu = x.row_means();
    let ws = group_covariances(&x.sub_row_vector(&mu), group, spec.epsilon)
        .iter()
        .map(|s| whitening_matrix(s, spec.kind, spec.itn_iterations).map(|(w, _)| w))
        .collect::<Result<Vec<_>>>()?;
    Ok((mu, ws))
}

/// Mean Euclidean distance of `outputs` to their mean. Deviations are
/// taken relative to the first output, so identical outputs give exactly 0.
fn disturbance(outputs: &[Vec<f64>]) -> f64 {
    let s = outputs.len() as f64;
    let base = &outputs[0];
    let mut offset = vec![0.0; base.len()];
    for o in outputs {
        offset.iter_mut().zip(o.iter().zip(base)).for_each(|(m, (v, b))| *m += v - b);
    }
    offset.iter_mut().for_each(|m| *m /= s);
    outputs
        .iter()
        .map(|o| {
            o.iter()
                .zip(base)
                .zip(&offset)
                .map(|((v, b), m)| (v - b - m).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / s
}

/// Empirical stochastic normalization disturbance.
///
/// For each of `N` probes `x`, the normalized output `W_j (x − μ_j)` is
/// computed under `s` independent mini-batches and `Δ̂(x)` is the mean
/// distance of those outputs to their average. The batches are drawn once
/// per seed and shared by all probes (and, through the seed, by every
/// transform evaluated with the same configuration).
pub fn snd(sampler: &dyn Sampler, spec: &WhiteningSpec, config: &SndConfig) -> Result<SndReport> {
    let d = sampler.dim();
    let group = spec.resolve(d)?;
    if config.num_batches < 2 {
        return Err(Error::Validation(format!(
            "SND needs at least 2 batches, got {}",
            config.num_batches
        )));
    }
    if config.num_points < 1 || config.batch < 1 {
        return Err(Error::Validation("SND needs at least one probe and a non-empty batch".into()));
    }
    let stat_count = config.batch + usize::from(config.probe_in_batch);
    if stat_count < 2 {
        return Err(Error::Validation("batch statistics need at least 2 samples".into()));
    }
    let mut warnings = Vec::new();
    if spec.kind != TransformKind::Bn && stat_count < group {
        warnings.push(format!(
            "batch of {stat_count} samples is smaller than the whitening group {group}; covariance is singular up to epsilon"
        ));
    }

    let probes = sampler.sample(&mut stream(config.seed, &[TAG_PROBE]), config.num_points);
    let mut outputs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(config.num_batches); config.num_points];
    for j in 0..config.num_batches {
        let batch = sampler.sample(&mut stream(config.seed, &[TAG_BATCH, j as u64]), config.batch);
        if config.probe_in_batch {
            for (i, out) in outputs.iter_mut().enumerate() {
                let x = Matrix::new(d, 1, probes.column(i))?;
                let joint = Matrix::hstack(&[batch.clone(), x.clone()]);
                let (mu, ws) = batch_whitening(&joint, spec, group)?;
                out.push(apply_grouped(&ws, &x.sub_row_vector(&mu)).into_vec());
            }
        } else {
            let (mu, ws) = batch_whitening(&batch, spec, group)?;
            let normalized = apply_grouped(&ws, &probes.sub_row_vector(&mu));
            for (i, out) in outputs.iter_mut().enumerate() {
                out.push(normalized.column(i));
            }
        }
    }
    let per_point: Vec<f64> = outputs.iter().map(|o| disturbance(o)).collect();
    let snd = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(SndReport {
        kind: spec.kind,
        dim: d,
        group,
        config: *config,
        per_point,
        snd,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Dimension,
    Batch,
    Group,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Dimension => "dim",
            SweepAxis::Batch => "batch",
            SweepAxis::Group => "group",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dim" | "dimension" => Ok(SweepAxis::Dimension),
            "batch" => Ok(SweepAxis::Batch),
            "group" => Ok(SweepAxis::Group),
            other => Err(Error::Validation(format!("unknown sweep axis '{other}'"))),
        }
    }
}

/// One row of `snd.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis_value: usize,
    pub report: SndReport,
}

/// Runs [`snd`] for every `(value, transform)` pair. `sampler_for(d)`
/// supplies the data source for dimension `d`; the base spec's group size
/// is replaced on the group axis and each value is a batch size on the
/// batch axis.
pub fn snd_sweep<S: Sampler>(
    axis: SweepAxis,
    values: &[usize],
    kinds: &[TransformKind],
    base_spec: &WhiteningSpec,
    base_dim: usize,
    base_config: &SndConfig,
    sampler_for: impl Fn(usize) -> S,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() || kinds.is_empty() {
        return Err(Error::Validation("empty sweep".into()));
    }
    let mut points = Vec::with_capacity(values.len() * kinds.len());
    for &value in values {
        let (dim, config, group) = match axis {
            SweepAxis::Dimension => (value, *base_config, base_spec.group_size),
            SweepAxis::Batch => (
                base_dim,
                SndConfig {
                    batch: value,
                    ..*base_config
                },
                base_spec.group_size,
            ),
            SweepAxis::Group => (base_dim, *base_config, Some(value)),
        };
        let sampler = sampler_for(dim);
        for &kind in kinds {
            let spec = WhiteningSpec {
                kind,
                group_size: group,
                ..*base_spec
            };
            let report = snd(&sampler, &spec, &config)?;
            points.push(SweepPoint {
                axis_value: value,
                report,
            });
        }
    }
    Ok(points)
}

pub const SND_CSV_HEADER: &str = "sweep,value,transform,dim,batch,group,snd,std,stderr";

/// `snd.csv`: one row per `(axis value, report)`; `sweep` names the swept
/// axis or is `none`.
pub fn snd_csv(sweep: &str, rows: &[(usize, SndReport)]) -> String {
    let mut out = format!("{SND_CSV_HEADER}\n");
    for (value, r) in rows {
        out.push_str(&format!(
            "{sweep},{value},{},{},{},{},{},{},{}\n",
            r.kind,
            r.dim,
            r.config.batch,
            r.group,
            r.snd,
            r.std_over_points(),
            r.standard_error()
        ));
    }
    out
}
