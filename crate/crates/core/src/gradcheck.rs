//! Central finite-difference checks of every analytic backward pass.
//!
//! Transform level: `L(Σ) = <G, W(Σ)>` for a random upstream `G`, perturbing
//! `Σ_ij` and `Σ_ji` together so `Σ` stays symmetric. The numeric derivative
//! of an off-diagonal pair is halved, which makes it comparable with the
//! symmetric part of the analytic `∂L/∂Σ`.
//!
//! Layer level: `L(X, θ) = <R, Y(X, θ)>` through centering, grouped whitening
//! and recovery, perturbing each raw input entry and each recovery parameter.
//!
//! Errors are `max |a − n| / max(max|a|, max|n|, 1e-12)` per gradient block.

use std::fmt::Write as _;

use crate::error::Result;
use crate::gradients::{backward_whitening, BackwardOptions};
use crate::layer::{BwLayer, Recovery, RecoveryGrads};
use crate::linalg::Matrix;
use crate::rng::{standard_normal_matrix, stream};
use crate::transforms::{whitening_matrix, RecoveryKind, TransformCache, TransformKind, WhiteningSpec};

pub const FD_STEP: f64 = 1e-5;
pub const TRANSFORM_TOLERANCE: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;

/// Deliberate defects for checking that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the transform-level ZCA backward result.
    ZcaSignFlip,
}

impl std::str::FromStr for Fault {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fault::None),
            "zca-sign-flip" => Ok(Fault::ZcaSignFlip),
            other => Err(crate::Error::Validation(format!("unknown fault '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub kinds: Vec<TransformKind>,
    pub dims: Vec<usize>,
    /// ItN iteration counts; each count is a separate configuration.
    pub itn_iterations: Vec<usize>,
    pub cases: usize,
    pub seed: u64,
    /// Also run the end-to-end layer checks.
    pub layer: bool,
    pub layer_dim: usize,
    pub layer_batch: usize,
    pub layer_groups: Vec<usize>,
    pub fault: Fault,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            kinds: TransformKind::ALL.to_vec(),
            dims: vec![2, 4, 8, 16],
            itn_iterations: vec![1, 3, 5],
            cases: 50,
            seed: 0,
            layer: true,
            layer_dim: 6,
            layer_batch: 24,
            layer_groups: vec![3, 6],
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub label: String,
    pub kind: TransformKind,
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Analytic failures (for example a degenerate spectrum) counted as failed cases.
    pub errors: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.errors == 0 && self.max_rel_error < self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    /// Largest error seen for `kind` across all of its configurations.
    pub fn max_error_for(&self, kind: TransformKind) -> Option<f64> {
        self.results
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.max_rel_error)
            .reduce(f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<34} {:>6} {:>12} {:>10}  status", "check", "cases", "max_rel_err", "tolerance");
        for r in &self.results {
            let status = if r.passed() { "ok" } else { "FAIL" };
            let _ = write!(
                out,
                "{:<34} {:>6} {:>12.3e} {:>10.0e}  {status}",
                r.label, r.cases, r.max_rel_error, r.tolerance
            );
            if r.errors > 0 {
                let _ = write!(out, " ({} analytic errors)", r.errors);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\nper-transform max relative error:");
        for kind in TransformKind::ALL {
            if let Some(e) = self.max_error_for(kind) {
                let _ = writeln!(out, "  {:<4} {e:.3e}", kind.name());
            }
        }
        let _ = writeln!(out, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// `A Aᵀ/d + ½ I` with `A` standard normal: symmetric positive definite with
/// smallest eigenvalue at least ½.
pub fn random_spd(seed: u64, tags: &[u64], d: usize) -> Matrix {
    let mut rng = stream(seed, tags);
    let a = standard_normal_matrix(&mut rng, d, d);
    let mut s = a.matmul_t(&a).scale(1.0 / d as f64);
    s.add_diagonal(0.5);
    s
}

/// Smallest eigengap accepted by [`random_separated_spd`]. Central
/// differences of eigenvector-dependent maps carry a truncation error of
/// order `(h / gap)²`, so near-degenerate spectra test the oracle rather than
/// the analytic gradient.
pub const MIN_EIGENGAP: f64 = 2e-2;

/// [`random_spd`] redrawn until adjacent eigenvalues differ by at least
/// `min_gap`.
pub fn random_separated_spd(seed: u64, tags: &[u64], d: usize, min_gap: f64) -> Matrix {
    let mut tags = tags.to_vec();
    tags.push(0);
    loop {
        let s = random_spd(seed, &tags, d);
        let ok = crate::linalg::sym_eig(&s)
            .ok()
            .and_then(|e| e.min_gap().map(|g| g.2 >= min_gap).or(Some(true)))
            .unwrap_or(false);
        if ok {
            return s;
        }
        *tags.last_mut().unwrap() += 1;
    }
}

pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-12);
    (analytic - numeric).max_abs() / scale
}

/// Symmetric central differences of `Σ ↦ <g, W(Σ)>`.
pub fn numeric_dsigma(sigma: &Matrix, g: &Matrix, kind: TransformKind, itn_iterations: usize) -> Result<Matrix> {
    let n = sigma.rows();
    let loss = |s: &Matrix| -> Result<f64> { Ok(whitening_matrix(s, kind, itn_iterations)?.0.dot(g)) };
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut plus = sigma.clone();
            let mut minus = sigma.clone();
            plus[(i, j)] += FD_STEP;
            minus[(i, j)] -= FD_STEP;
            if i != j {
                plus[(j, i)] += FD_STEP;
                minus[(j, i)] -= FD_STEP;
            }
            let mut v = (loss(&plus)? - loss(&minus)?) / (2.0 * FD_STEP);
            if i != j {
                v *= 0.5;
            }
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

fn analytic_dsigma(g: &Matrix, cache: &TransformCache, fault: Fault) -> Result<Matrix> {
    let ds = backward_whitening(g, cache, &BackwardOptions::default())?;
    Ok(match (fault, cache.kind()) {
        (Fault::ZcaSignFlip, TransformKind::Zca) => -&ds,
        _ => ds,
    })
}

/// Relative error of one transform-level case.
pub fn transform_case(
    kind: TransformKind,
    sigma: &Matrix,
    g: &Matrix,
    itn_iterations: usize,
    fault: Fault,
) -> Result<f64> {
    let (_, cache) = whitening_matrix(sigma, kind, itn_iterations)?;
    let analytic = analytic_dsigma(g, &cache, fault)?.symmetrize();
    let numeric = numeric_dsigma(sigma, g, kind, itn_iterations)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Relative error of one end-to-end layer case: the worst block among
/// `∂L/∂X` and the recovery parameter gradients.
pub fn layer_case(layer: &BwLayer, x: &Matrix, r: &Matrix) -> Result<f64> {
    let (_, cache, _) = layer.forward_batch(x)?;
    let grads = layer.backward_train(&cache, r)?;
    let loss = |l: &BwLayer, x: &Matrix| -> Result<f64> { Ok(l.forward_batch(x)?.0.dot(r)) };

    let mut num_dx = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[(i, j)] += FD_STEP;
            minus[(i, j)] -= FD_STEP;
            num_dx[(i, j)] = (loss(layer, &plus)? - loss(layer, &minus)?) / (2.0 * FD_STEP);
        }
    }
    let mut worst = max_relative_error(&grads.dx, &num_dx);

    let params = recovery_params(layer.recovery());
    let mut numeric = vec![0.0; params.len()];
    for (k, slot) in numeric.iter_mut().enumerate() {
        let mut plus = layer.clone();
        let mut minus = layer.clone();
        nudge(plus.recovery_mut(), k, FD_STEP);
        nudge(minus.recovery_mut(), k, -FD_STEP);
        *slot = (loss(&plus, x)? - loss(&minus, x)?) / (2.0 * FD_STEP);
    }
    let (a_first, a_second) = match &grads.recovery {
        RecoveryGrads::ScaleShift { d_gamma, d_beta } => (d_gamma.clone(), d_beta.clone()),
        RecoveryGrads::Coloring { d_weight, d_bias } => (d_weight.as_slice().to_vec(), d_bias.clone()),
    };
    let split = a_first.len();
    for (a, n) in [(a_first, &numeric[..split]), (a_second, &numeric[split..])] {
        let a = Matrix::new(1, a.len(), a)?;
        let n = Matrix::new(1, n.len(), n.to_vec())?;
        worst = worst.max(max_relative_error(&a, &n));
    }
    Ok(worst)
}

fn recovery_params(rec: &Recovery) -> Vec<f64> {
    match rec {
        Recovery::ScaleShift { gamma, beta } => gamma.iter().chain(beta).copied().collect(),
        Recovery::Coloring { weight, bias } => weight.as_slice().iter().chain(bias).copied().collect(),
    }
}

fn nudge(rec: &mut Recovery, k: usize, delta: f64) {
    match rec {
        Recovery::ScaleShift { gamma, beta } => {
            let d = gamma.len();
            if k < d {
                gamma[k] += delta;
            } else {
                beta[k - d] += delta;
            }
        }
        Recovery::Coloring { weight, bias } => {
            let n = weight.as_slice().len();
            if k < n {
                weight.as_mut_slice()[k] += delta;
            } else {
                bias[k - n] += delta;
            }
        }
    }
}

/// Random non-identity recovery parameters so every gradient path is exercised.
fn randomized_recovery(kind: RecoveryKind, d: usize, seed: u64, tags: &[u64]) -> Recovery {
    let mut rng = stream(seed, tags);
    match kind {
        RecoveryKind::ScaleShift => {
            let g = standard_normal_matrix(&mut rng, 2, d);
            Recovery::ScaleShift {
                gamma: g.row(0).iter().map(|v| 1.0 + 0.5 * v).collect(),
                beta: g.row(1).to_vec(),
            }
        }
        RecoveryKind::Coloring => {
            let mut w = standard_normal_matrix(&mut rng, d, d).scale(0.5);
            w.add_diagonal(1.0);
            Recovery::Coloring {
                weight: w,
                bias: standard_normal_matrix(&mut rng, 1, d).into_vec(),
            }
        }
    }
}

fn accumulate(label: String, kind: TransformKind, tolerance: f64, cases: impl Iterator<Item = Result<f64>>) -> CheckResult {
    let mut result = CheckResult {
        label,
        kind,
        cases: 0,
        max_rel_error: 0.0,
        tolerance,
        errors: 0,
    };
    for case in cases {
        result.cases += 1;
        match case {
            Ok(e) if e.is_finite() => result.max_rel_error = result.max_rel_error.max(e),
            _ => result.errors += 1,
        }
    }
    result
}

pub fn run(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    for &kind in &config.kinds {
        let ts: &[usize] = if kind == TransformKind::Itn { &config.itn_iterations } else { &[0] };
        for &t in ts {
            for &d in &config.dims {
                let label = match kind {
                    TransformKind::Itn => format!("{} T={t} d={d}", kind.name()),
                    _ => format!("{} d={d}", kind.name()),
                };
                let tag = kind_tag(kind);
                let cases = (0..config.cases).map(|c| {
                    let tags = [1, tag, t as u64, d as u64, c as u64];
                    let sigma = random_separated_spd(config.seed, &tags, d, MIN_EIGENGAP);
                    let g = standard_normal_matrix(&mut stream(config.seed, &[2, tag, t as u64, d as u64, c as u64]), d, d);
                    transform_case(kind, &sigma, &g, t.max(1), config.fault)
                });
                report.results.push(accumulate(label, kind, TRANSFORM_TOLERANCE, cases));
            }
        }
    }
    if config.layer {
        let d = config.layer_dim;
        for &kind in &config.kinds {
            for recovery in [RecoveryKind::ScaleShift, RecoveryKind::Coloring] {
                for &g in &config.layer_groups {
                    if !d.is_multiple_of(g) {
                        continue;
                    }
                    let rec_name = match recovery {
                        RecoveryKind::ScaleShift => "scale-shift",
                        RecoveryKind::Coloring => "coloring",
                    };
                    let label = format!("layer {} {rec_name} d={d} g={g}", kind.name());
                    let spec = WhiteningSpec::new(kind).with_group_size(g).with_recovery(recovery);
                    let tag = kind_tag(kind);
                    let rtag = recovery as u64;
                    let cases = (0..config.cases).map(|c| {
                        let tags = [3, tag, rtag, g as u64, c as u64];
                        let mut layer = BwLayer::new(d, spec)?;
                        *layer.recovery_mut() = randomized_recovery(recovery, d, config.seed, &tags);
                        let mut rng = stream(config.seed, &[4, tag, rtag, g as u64, c as u64]);
                        let a = standard_normal_matrix(&mut rng, d, d);
                        let x = (&a * &standard_normal_matrix(&mut rng, d, config.layer_batch))
                            .add_row_vector(&standard_normal_matrix(&mut rng, 1, d).into_vec());
                        let r = standard_normal_matrix(&mut rng, d, config.layer_batch);
                        layer_case(&layer, &x, &r)
                    });
                    report.results.push(accumulate(label, kind, LAYER_TOLERANCE, cases));
                }
            }
        }
    }
    Ok(report)
}

fn kind_tag(kind: TransformKind) -> u64 {
    TransformKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64
}
