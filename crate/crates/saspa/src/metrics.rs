//! Distribution and diversity metrics over injected feature providers.
//!
//! The matrix square root inside the Fréchet distance uses an
//! eigendecomposition of the symmetrized covariance product with eigenvalues
//! clamped at 1e-10. For commuting covariances this is exact; in general it
//! is the usual FID stabilization and the documented tolerance.

use image::RgbImage;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIGENVALUE_CLAMP: f64 = 1e-10;
const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Real,
    Synthetic,
}

/// N × D feature matrix; N ≥ 2 so a covariance is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    vectors: Vec<Vec<f64>>,
    pub source: FeatureSource,
}

impl FeatureSet {
    pub fn new(vectors: Vec<Vec<f64>>, source: FeatureSource) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::TooFewSamples {
                have: vectors.len(),
                need: 2,
            });
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::Validation("zero-dimensional features".into()));
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation("non-finite feature value".into()));
            }
        }
        Ok(Self { vectors, source })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let (n, d) = (self.len(), self.dim());
        let mut mean = vec![0.0; d];
        for v in &self.vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        mean
    }

    /// Unbiased (N−1) sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let (n, d) = (self.len(), self.dim());
        let mean = self.mean();
        let centered = DMatrix::from_fn(n, d, |r, c| self.vectors[r][c] - mean[c]);
        centered.transpose() * centered / (n as f64 - 1.0)
    }
}

fn validate_covariance(cov: &DMatrix<f64>, dim: usize) -> Result<()> {
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(Error::DimensionMismatch {
            left: cov.nrows().max(cov.ncols()),
            right: dim,
        });
    }
    let scale = cov.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..dim {
        for j in (i + 1)..dim {
            if (cov[(i, j)] - cov[(j, i)]).abs() > PSD_TOLERANCE * scale {
                return Err(Error::Validation(format!(
                    "covariance not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let eigen = cov.clone().symmetric_eigen();
    let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::NotPsd { eigenvalue: min });
    }
    Ok(())
}

/// Fréchet distance between two Gaussians:
/// ‖μ1−μ2‖² + Tr(Σ1 + Σ2 − 2(Σ1Σ2)^{1/2}), clamped at zero.
pub fn frechet_distance(
    mu1: &[f64],
    cov1: &DMatrix<f64>,
    mu2: &[f64],
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let dim = mu1.len();
    if mu2.len() != dim {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: mu2.len(),
        });
    }
    if dim == 0 {
        return Err(Error::Validation("zero-dimensional Gaussian".into()));
    }
    validate_covariance(cov1, dim)?;
    validate_covariance(cov2, dim)?;

    let mean_term: f64 = mu1
        .iter()
        .zip(mu2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let product = cov1 * cov2;
    let symmetrized = (&product + product.transpose()) * 0.5;
    let eigen = symmetrized.symmetric_eigen();
    let sqrt_trace: f64 = eigen
        .eigenvalues
        .iter()
        .map(|&l| if l < EIGENVALUE_CLAMP { 0.0 } else { l.sqrt() })
        .sum();

    let distance = mean_term + cov1.trace() + cov2.trace() - 2.0 * sqrt_trace;
    Ok(distance.max(0.0))
}

/// FID over two feature sets: Gaussian fits, then the Fréchet distance.
pub fn fid(real: &FeatureSet, synth: &FeatureSet) -> Result<f64> {
    if real.dim() != synth.dim() {
        return Err(Error::DimensionMismatch {
            left: real.dim(),
            right: synth.dim(),
        });
    }
    frechet_distance(
        &real.mean(),
        &real.covariance(),
        &synth.mean(),
        &synth.covariance(),
    )
}

/// One (original, augmentation) pair with its perceptual distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityPair {
    pub original: String,
    pub augmentation: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiversityPairing {
    pub pairs: Vec<DiversityPair>,
}

impl DiversityPairing {
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Precondition("empty diversity pairing".into()));
        }
        for p in &self.pairs {
            if p.distance.is_nan() || p.distance < 0.0 {
                return Err(Error::Validation(format!(
                    "negative distance {} for pair ({}, {})",
                    p.distance, p.original, p.augmentation
                )));
            }
        }
        Ok(())
    }
}

/// Mean perceptual distance between originals and their augmentations.
pub fn lpips_diversity(pairing: &DiversityPairing) -> Result<f64> {
    pairing.validate()?;
    let sum: f64 = pairing.pairs.iter().map(|p| p.distance).sum();
    Ok(sum / pairing.pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

/// Mean and sample standard deviation (N−1) across run accuracies.
pub fn aggregate_accuracy(runs: &[f64]) -> Result<AccuracySummary> {
    if runs.is_empty() {
        return Err(Error::Precondition("no accuracy runs".into()));
    }
    if runs.iter().any(|r| !r.is_finite()) {
        return Err(Error::Validation("non-finite accuracy".into()));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let std = if runs.len() < 2 {
        0.0
    } else {
        (runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(AccuracySummary {
        mean,
        std,
        runs: runs.to_vec(),
    })
}

/// Turns images into feature vectors for FID. Real feature extractors are
/// models; the report records which one ran.
pub trait FeatureProvider: Sync {
    /// Human-readable configuration recorded in the metrics report.
    fn configuration(&self) -> String;

    fn features(&self, image: &RgbImage) -> Result<Vec<f64>>;
}

/// Perceptual distance between an original and an augmentation.
pub trait DistanceProvider: Sync {
    fn configuration(&self) -> String;

    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64>;
}

/// Model-free feature stand-in: per-channel means and standard deviations.
#[derive(Debug, Default, Clone)]
pub struct PixelStats;

impl FeatureProvider for PixelStats {
    fn configuration(&self) -> String {
        "pixel-stats: per-channel mean and std, D=6".into()
    }

    fn features(&self, image: &RgbImage) -> Result<Vec<f64>> {
        let n = (image.width() * image.height()) as f64;
        if n == 0.0 {
            return Err(Error::Validation("zero-dimension image".into()));
        }
        let mut mean = [0.0f64; 3];
        for pixel in image.pixels() {
            for (m, &v) in mean.iter_mut().zip(&pixel.0) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = [0.0f64; 3];
        for pixel in image.pixels() {
            for ((acc, &m), &v) in var.iter_mut().zip(&mean).zip(&pixel.0) {
                let d = v as f64 - m;
                *acc += d * d;
            }
        }
        Ok(vec![
            mean[0] / 255.0,
            mean[1] / 255.0,
            mean[2] / 255.0,
            (var[0] / n).sqrt() / 255.0,
            (var[1] / n).sqrt() / 255.0,
            (var[2] / n).sqrt() / 255.0,
        ])
    }
}

/// Model-free distance stand-in: mean absolute pixel difference in [0, 1].
#[derive(Debug, Default, Clone)]
pub struct MeanAbsDiff;

impl DistanceProvider for MeanAbsDiff {
    fn configuration(&self) -> String {
        "mean-abs-diff: normalized L1 over aligned pixels".into()
    }

    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64> {
        if a.dimensions() != b.dimensions() {
            return Err(Error::DimensionMismatch {
                left: (a.width() * a.height()) as usize,
                right: (b.width() * b.height()) as usize,
            });
        }
        let n = (a.width() * a.height() * 3) as f64;
        let sum: f64 = a
            .as_raw()
            .iter()
            .zip(b.as_raw())
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum();
        Ok(sum / n / 255.0)
    }
}

/// One (dataset, method) metrics cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracySummary>,
    /// Configurations of the providers that produced the numbers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub providers: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(entries: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(entries))
    }

    #[test]
    fn frechet_closed_forms() {
        let identity = diag(&[1.0, 1.0]);
        let zero = frechet_distance(&[0.0, 0.0], &identity, &[0.0, 0.0], &identity).unwrap();
        assert_abs_diff_eq!(zero, 0.0, epsilon = 1e-8);

        let shifted =
            frechet_distance(&[0.0, 0.0], &identity, &[3.0, 4.0], &identity).unwrap();
        assert_abs_diff_eq!(shifted, 25.0, epsilon = 1e-8);

        let commuting = frechet_distance(
            &[1.0, 2.0],
            &diag(&[1.0, 4.0]),
            &[1.0, 2.0],
            &diag(&[9.0, 16.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(commuting, 8.0, epsilon = 1e-8);
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = 3;
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let cov1 = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
            let cov2 = &b * b.transpose() + DMatrix::identity(d, d) * 0.1;
            let mu1: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mu2: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let forward = frechet_distance(&mu1, &cov1, &mu2, &cov2).unwrap();
            let backward = frechet_distance(&mu2, &cov2, &mu1, &cov1).unwrap();
            assert_abs_diff_eq!(forward, backward, epsilon = 1e-9 * (1.0 + forward));
            assert!(forward >= 0.0);
        }
    }

    #[test]
    fn frechet_zero_only_for_equal_gaussians() {
        let cov = diag(&[2.0, 0.5]);
        let same = frechet_distance(&[1.0, 1.0], &cov, &[1.0, 1.0], &cov.clone()).unwrap();
        assert_abs_diff_eq!(same, 0.0, epsilon = 1e-8);

        let different =
            frechet_distance(&[1.0, 1.0], &cov, &[1.0, 1.0], &diag(&[3.0, 0.5])).unwrap();
        assert!(different > 1e-3);
    }

    #[test]
    fn frechet_rejects_bad_inputs() {
        let identity = diag(&[1.0, 1.0]);
        assert!(matches!(
            frechet_distance(&[0.0, 0.0], &identity, &[0.0], &identity),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            frechet_distance(&[0.0, 0.0], &diag(&[1.0, -0.5]), &[0.0, 0.0], &identity),
            Err(Error::NotPsd { .. })
        ));
        let mut asymmetric = diag(&[1.0, 1.0]);
        asymmetric[(0, 1)] = 0.9;
        assert!(frechet_distance(&[0.0, 0.0], &asymmetric, &[0.0, 0.0], &identity).is_err());
    }

    #[test]
    fn fid_zero_for_identical_sets() {
        let vectors = vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 1.0, 0.0],
            vec![0.5, 0.5, 4.0],
            vec![3.0, 2.5, 1.5],
        ];
        let real = FeatureSet::new(vectors.clone(), FeatureSource::Real).unwrap();
        let synth = FeatureSet::new(vectors, FeatureSource::Synthetic).unwrap();
        assert_abs_diff_eq!(fid(&real, &synth).unwrap(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn fid_validates_shapes() {
        assert!(matches!(
            FeatureSet::new(vec![vec![1.0, 2.0]], FeatureSource::Real),
            Err(Error::TooFewSamples { have: 1, need: 2 })
        ));
        assert!(FeatureSet::new(
            vec![vec![1.0], vec![1.0, 2.0]],
            FeatureSource::Real
        )
        .is_err());
        let a = FeatureSet::new(vec![vec![1.0], vec![2.0]], FeatureSource::Real).unwrap();
        let b = FeatureSet::new(
            vec![vec![1.0, 0.0], vec![2.0, 1.0]],
            FeatureSource::Synthetic,
        )
        .unwrap();
        assert!(matches!(fid(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    /// Two independent standard normals via Box-Muller.
    fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    #[test]
    fn fid_monte_carlo_approaches_the_analytic_value() {
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut real = Vec::with_capacity(n);
        let mut synth = Vec::with_capacity(n);
        for _ in 0..n {
            let (z1, z2) = gaussian_pair(&mut rng);
            real.push(vec![z1, 2.0 * z2]);
            let (z1, z2) = gaussian_pair(&mut rng);
            synth.push(vec![3.0 + 3.0 * z1, 4.0 + 4.0 * z2]);
        }
        let real = FeatureSet::new(real, FeatureSource::Real).unwrap();
        let synth = FeatureSet::new(synth, FeatureSource::Synthetic).unwrap();
        let estimate = fid(&real, &synth).unwrap();
        // ‖Δμ‖² = 25; trace term (1+9−6)+(4+16−16) = 8
        let analytic = 33.0;
        let relative = (estimate - analytic).abs() / analytic;
        assert!(relative < 0.05, "estimate {estimate}, relative error {relative:.4}");
    }

    #[test]
    fn fid_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = 4;
        let sample = |rng: &mut ChaCha8Rng, offset: f64| -> Vec<Vec<f64>> {
            (0..200)
                .map(|_| (0..d).map(|c| rng.random_range(0.0..1.0) + offset * c as f64).collect())
                .collect()
        };
        let real_raw = sample(&mut rng, 0.0);
        let synth_raw = sample(&mut rng, 0.3);

        let random = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let q = random.qr().q();
        let rotate = |vectors: &[Vec<f64>]| -> Vec<Vec<f64>> {
            vectors
                .iter()
                .map(|v| {
                    let x = nalgebra::DVector::from_row_slice(v);
                    (&q * x).iter().cloned().collect()
                })
                .collect()
        };

        let base = fid(
            &FeatureSet::new(real_raw.clone(), FeatureSource::Real).unwrap(),
            &FeatureSet::new(synth_raw.clone(), FeatureSource::Synthetic).unwrap(),
        )
        .unwrap();
        let rotated = fid(
            &FeatureSet::new(rotate(&real_raw), FeatureSource::Real).unwrap(),
            &FeatureSet::new(rotate(&synth_raw), FeatureSource::Synthetic).unwrap(),
        )
        .unwrap();
        let relative = (base - rotated).abs() / base.max(1e-12);
        assert!(relative < 1e-6, "base {base}, rotated {rotated}");
    }

    #[test]
    fn diversity_is_the_mean_distance() {
        let pairing = DiversityPairing {
            pairs: vec![
                DiversityPair { original: "a".into(), augmentation: "a1".into(), distance: 0.2 },
                DiversityPair { original: "b".into(), augmentation: "b1".into(), distance: 0.4 },
            ],
        };
        assert_abs_diff_eq!(lpips_diversity(&pairing).unwrap(), 0.3, epsilon = 1e-12);

        let zeros = DiversityPairing {
            pairs: vec![DiversityPair {
                original: "a".into(),
                augmentation: "a1".into(),
                distance: 0.0,
            }],
        };
        assert_eq!(lpips_diversity(&zeros).unwrap(), 0.0);

        assert!(lpips_diversity(&DiversityPairing::default()).is_err());
    }

    #[test]
    fn diversity_orders_methods_by_distance_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = |center: f64, rng: &mut ChaCha8Rng| DiversityPairing {
            pairs: (0..50)
                .map(|i| DiversityPair {
                    original: format!("img{i}"),
                    augmentation: format!("img{i}.aug"),
                    distance: (center + rng.random_range(-0.05..0.05)).max(0.0),
                })
                .collect(),
        };
        // magnitudes from the published comparison: structure-preserving
        // full-generation augs score ~0.55, real-guidance augs ~0.11
        let saspa_like = table(0.55, &mut rng);
        let real_guidance_like = table(0.11, &mut rng);
        let high = lpips_diversity(&saspa_like).unwrap();
        let low = lpips_diversity(&real_guidance_like).unwrap();
        assert!(high > low);
        assert!((high - 0.55).abs() < 0.05);
        assert!((low - 0.11).abs() < 0.05);
    }

    #[test]
    fn accuracy_aggregation() {
        let single = aggregate_accuracy(&[85.0]).unwrap();
        assert_eq!(single.mean, 85.0);
        assert_eq!(single.std, 0.0);

        let three = aggregate_accuracy(&[84.0, 86.0, 85.0]).unwrap();
        assert_abs_diff_eq!(three.mean, 85.0, epsilon = 1e-12);
        assert_abs_diff_eq!(three.std, 1.0, epsilon = 1e-12);

        let permuted = aggregate_accuracy(&[86.0, 85.0, 84.0]).unwrap();
        assert_eq!(permuted.mean, three.mean);
        assert_eq!(permuted.std, three.std);

        assert!(aggregate_accuracy(&[]).is_err());
    }

    #[test]
    fn pixel_stats_features_are_deterministic() {
        use image::Rgb;
        let img = RgbImage::from_fn(16, 12, |x, y| {
            Rgb([(x * 16) as u8, (y * 20) as u8, 128])
        });
        let provider = PixelStats;
        let a = provider.features(&img).unwrap();
        let b = provider.features(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_abs_diff_eq!(a[2], 128.0 / 255.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[5], 0.0, epsilon = 1e-12);
        assert!(!provider.configuration().is_empty());
    }

    #[test]
    fn mean_abs_diff_distance() {
        use image::Rgb;
        let a = RgbImage::from_pixel(8, 8, Rgb([100, 100, 100]));
        let b = RgbImage::from_pixel(8, 8, Rgb([110, 90, 100]));
        let provider = MeanAbsDiff;
        assert_eq!(provider.distance(&a, &a).unwrap(), 0.0);
        let d = provider.distance(&a, &b).unwrap();
        assert_abs_diff_eq!(d, 20.0 / 3.0 / 255.0, epsilon = 1e-12);
        let c = RgbImage::new(4, 4);
        assert!(provider.distance(&a, &c).is_err());
    }
}
