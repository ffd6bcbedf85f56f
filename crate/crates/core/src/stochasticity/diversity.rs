use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const HISTOGRAM_BINS: usize = 50;

/// Uniform-bin histogram over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; bins];
        if values.is_empty() {
            return Self { lo: 0.0, hi: 0.0, counts };
        }
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let k = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_edges(&self) -> Vec<(f64, f64)> {
        let n = self.counts.len();
        let width = (self.hi - self.lo) / n as f64;
        (0..n)
            .map(|k| (self.lo + k as f64 * width, self.lo + (k + 1) as f64 * width))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub length: usize,
    /// Per-element population standard deviation `δ`.
    pub delta: Matrix,
    /// Per-element standard deviation `δ̃` of the sequence rescaled to unit
    /// sum of squares.
    pub delta_normalized: Matrix,
    /// Elements whose sequence is identically zero; their `δ̃` is reported as 0.
    pub skipped: usize,
    pub histogram: Histogram,
    pub histogram_normalized: Histogram,
}

impl DiversityReport {
    pub fn mean_delta(&self) -> f64 {
        mean(self.delta.as_slice())
    }

    pub fn mean_delta_normalized(&self) -> f64 {
        mean(self.delta_normalized.as_slice())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Streaming per-element moments (Welford), so long training runs need not
/// keep every matrix.
#[derive(Debug, Clone)]
pub struct DiversityAccumulator {
    shape: Option<(usize, usize)>,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Default for DiversityAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl DiversityAccumulator {
    pub fn new() -> Self {
        Self {
            shape: None,
            count: 0,
            mean: Vec::new(),
            m2: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn push(&mut self, m: &Matrix) -> Result<()> {
        match self.shape {
            None => {
                self.shape = Some(m.shape());
                self.mean = vec![0.0; m.as_slice().len()];
                self.m2 = vec![0.0; m.as_slice().len()];
            }
            Some(s) if s != m.shape() => {
                return Err(Error::DimensionMismatch {
                    op: "sequence diversity",
                    left: s,
                    right: m.shape(),
                })
            }
            Some(_) => {}
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mu, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(m.as_slice()) {
            let delta = x - *mu;
            *mu += delta / n;
            *m2 += delta * (x - *mu);
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<DiversityReport> {
        let (rows, cols) = self.shape.unwrap_or((0, 0));
        if self.count < 2 {
            return Err(Error::Validation(format!(
                "sequence diversity needs at least 2 matrices, got {}",
                self.count
            )));
        }
        let t = self.count as f64;
        let mut skipped = 0;
        let mut delta = Vec::with_capacity(self.mean.len());
        let mut normalized = Vec::with_capacity(self.mean.len());
        for (&mu, &m2) in self.mean.iter().zip(&self.m2) {
            let m2 = m2.max(0.0);
            let d = (m2 / t).sqrt();
            // Σ_t M_t² = M2 + T·mean²; rescaling the sequence rescales δ
            let sum_sq = m2 + t * mu * mu;
            let dn = if sum_sq > 0.0 {
                d / sum_sq.sqrt()
            } else {
                skipped += 1;
                0.0
            };
            delta.push(d);
            normalized.push(dn);
        }
        let histogram = Histogram::from_values(&delta, HISTOGRAM_BINS);
        let histogram_normalized = Histogram::from_values(&normalized, HISTOGRAM_BINS);
        Ok(DiversityReport {
            length: self.count,
            delta: Matrix::new(rows, cols, delta)?,
            delta_normalized: Matrix::new(rows, cols, normalized)?,
            skipped,
            histogram,
            histogram_normalized,
        })
    }
}

/// Per-element standard deviation of a statistic sequence and its
/// normalized variant.
pub fn sequence_diversity(sequence: &[Matrix]) -> Result<DiversityReport> {
    let mut acc = DiversityAccumulator::new();
    for m in sequence {
        acc.push(m)?;
    }
    acc.finish()
}

pub const DIVERSITY_SUMMARY_HEADER: &str = "object,steps,elements,mean_delta,mean_delta_normalized,skipped";

/// One summary row per named report.
pub fn diversity_summary_csv(reports: &[(&str, &DiversityReport)]) -> String {
    let mut out = format!("{DIVERSITY_SUMMARY_HEADER}\n");
    for (name, r) in reports {
        out.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            r.length,
            r.delta.as_slice().len(),
            r.mean_delta(),
            r.mean_delta_normalized(),
            r.skipped
        ));
    }
    out
}
