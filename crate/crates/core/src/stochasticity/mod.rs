//! Measuring the stochasticity that mini-batch statistics inject into
//! normalized outputs.

mod diversity;
mod sampler;
mod scatter;
mod snd;

pub use diversity::{
    diversity_summary_csv, sequence_diversity, DiversityAccumulator, DiversityReport, Histogram, DIVERSITY_SUMMARY_HEADER,
    HISTOGRAM_BINS,
};
pub use sampler::{GaussianSampler, Sampler};
pub use scatter::{scatter_probe, ScatterConfig, ScatterResult};
pub use snd::{snd, snd_csv, snd_sweep, SndConfig, SndReport, SweepAxis, SweepPoint, SND_CSV_HEADER};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::transforms::{TransformKind, WhiteningSpec};

    fn small() -> SndConfig {
        SndConfig {
            batch: 32,
            num_batches: 10,
            num_points: 4,
            seed: 3,
            probe_in_batch: false,
        }
    }

    #[test]
    fn scalar_data_gives_equal_snd_for_all_transforms() {
        let sampler = GaussianSampler::mixed(1, 1);
        let base = snd(&sampler, &WhiteningSpec::new(TransformKind::Bn), &small()).unwrap().snd;
        for kind in [TransformKind::Zca, TransformKind::Cd, TransformKind::Pca] {
            let v = snd(&sampler, &WhiteningSpec::new(kind), &small()).unwrap().snd;
            assert!((v - base).abs() < 1e-12, "{kind}: {v} vs {base}");
        }
    }

    #[test]
    fn identical_batches_have_no_disturbance() {
        struct Fixed(Matrix);
        impl Sampler for Fixed {
            fn dim(&self) -> usize {
                self.0.rows()
            }
            fn sample(&self, _: &mut crate::rng::StreamRng, n: usize) -> Matrix {
                self.0.col_block(0, n)
            }
        }
        let data = crate::rng::standard_normal_matrix(&mut crate::rng::stream(0, &[]), 3, 40);
        let r = snd(&Fixed(data), &WhiteningSpec::new(TransformKind::Zca), &small()).unwrap();
        assert!(r.per_point.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snd_rejects_single_batch() {
        let sampler = GaussianSampler::isotropic(2);
        let cfg = SndConfig {
            num_batches: 1,
            ..small()
        };
        assert!(snd(&sampler, &WhiteningSpec::default(), &cfg).is_err());
    }

    #[test]
    fn small_batches_warn_for_full_whitening() {
        let sampler = GaussianSampler::isotropic(8);
        let cfg = SndConfig { batch: 4, ..small() };
        let r = snd(&sampler, &WhiteningSpec::new(TransformKind::Zca), &cfg).unwrap();
        assert_eq!(r.warnings.len(), 1);
        let r = snd(&sampler, &WhiteningSpec::new(TransformKind::Bn), &cfg).unwrap();
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn probe_in_batch_changes_the_estimate_slightly() {
        let sampler = GaussianSampler::mixed(4, 2);
        let spec = WhiteningSpec::new(TransformKind::Zca);
        let out = snd(&sampler, &spec, &small()).unwrap().snd;
        let cfg = SndConfig {
            probe_in_batch: true,
            ..small()
        };
        let inside = snd(&sampler, &spec, &cfg).unwrap().snd;
        assert_ne!(out, inside);
        assert!((out - inside).abs() < 0.5 * out);
    }

    #[test]
    fn scatter_single_trial_and_bad_axes() {
        let sampler = GaussianSampler::mixed(16, 0);
        let cfg = ScatterConfig {
            trials: 1,
            population: 5,
            ..ScatterConfig::default()
        };
        let r = scatter_probe(&sampler, &WhiteningSpec::new(TransformKind::Pca), &cfg).unwrap();
        assert_eq!(r.normalized.len(), 1);
        assert_eq!(r.population.len(), 5);
        let bad = ScatterConfig { axes: (3, 16), ..cfg };
        assert!(scatter_probe(&sampler, &WhiteningSpec::default(), &bad).is_err());
    }

    #[test]
    fn diversity_hand_example() {
        let seq = [Matrix::from_rows(&[[1.0]]).unwrap(), Matrix::from_rows(&[[-1.0]]).unwrap()];
        let r = sequence_diversity(&seq).unwrap();
        assert!((r.delta[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((r.delta_normalized[(0, 0)] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn diversity_constant_and_zero_sequences() {
        let c = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let r = sequence_diversity(&[c.clone(), c.clone(), c]).unwrap();
        assert_eq!(r.delta.as_slice(), &[0.0, 0.0]);
        assert_eq!(r.delta_normalized.as_slice(), &[0.0, 0.0]);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.histogram.counts.iter().sum::<u64>(), 2);
        assert_eq!(r.histogram.counts.len(), HISTOGRAM_BINS);
    }

    #[test]
    fn diversity_rejects_short_or_ragged_sequences() {
        let a = Matrix::zeros(2, 2);
        assert!(sequence_diversity(std::slice::from_ref(&a)).is_err());
        assert!(sequence_diversity(&[a, Matrix::zeros(2, 3)]).is_err());
    }
}
