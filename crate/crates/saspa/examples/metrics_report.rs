//! Distribution distance, diversity, and accuracy aggregation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saspa::metrics::{
    aggregate_accuracy, fid, frechet_distance, lpips_diversity, DiversityPair, DiversityPairing,
    FeatureSet, FeatureSource, MetricsReport,
};

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    (r * (std::f64::consts::TAU * u2).cos(), r * (std::f64::consts::TAU * u2).sin())
}

fn main() -> saspa::Result<()> {
    let identity = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1.0]));
    println!(
        "frechet, identical gaussians: {}",
        frechet_distance(&[0.0, 0.0], &identity, &[0.0, 0.0], &identity)?
    );
    println!(
        "frechet, means (0,0) vs (3,4): {}",
        frechet_distance(&[0.0, 0.0], &identity, &[3.0, 4.0], &identity)?
    );

    // two sampled clouds vs the closed form for their generating gaussians
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut real = Vec::new();
    let mut synth = Vec::new();
    for _ in 0..5000 {
        let (a, b) = gaussian_pair(&mut rng);
        real.push(vec![a, 2.0 * b]);
        let (a, b) = gaussian_pair(&mut rng);
        synth.push(vec![3.0 + 3.0 * a, 4.0 + 4.0 * b]);
    }
    let estimate = fid(
        &FeatureSet::new(real, FeatureSource::Real)?,
        &FeatureSet::new(synth, FeatureSource::Synthetic)?,
    )?;
    println!("fid estimate from 5000 samples: {estimate:.3} (analytic 33.0)");

    let pairing = DiversityPairing {
        pairs: (0..20)
            .map(|i| DiversityPair {
                original: format!("img{i}"),
                augmentation: format!("img{i}.aug"),
                distance: 0.5 + 0.01 * (i % 5) as f64,
            })
            .collect(),
    };
    println!("diversity: {:.4}", lpips_diversity(&pairing)?);

    let accuracy = aggregate_accuracy(&[84.3, 86.1, 85.0])?;
    println!("accuracy: {:.2} +- {:.2}", accuracy.mean, accuracy.std);

    let report = MetricsReport {
        fid: Some(estimate),
        diversity: Some(lpips_diversity(&pairing)?),
        accuracy: Some(accuracy),
        providers: vec!["example features".into(), "example distances".into()],
    };
    println!("--- report json ---");
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
