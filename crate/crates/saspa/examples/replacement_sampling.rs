//! Alpha-replacement sampling and the per-dataset training recipes.

use saspa::fixtures::toy_descriptor;
use saspa::manifest::{AugmentationManifest, AugmentationRecord, Verdict};
use saspa::training::{
    default_hyperparameters, hyperparameter_registry, resolve_alpha, run_training, sample_epoch,
    AlphaRegime, CountingTrainer, ReplacementPolicy, SlotSource,
};

fn kept_manifest(d: &saspa::DatasetDescriptor, per_image: usize) -> AugmentationManifest {
    let mut manifest = AugmentationManifest::new(&d.name);
    for id in d.split("train") {
        let class = &d.sub_classes[d.image(id).unwrap().sub_class];
        for j in 0..per_image {
            manifest.records.push(AugmentationRecord {
                aug_id: format!("{id}-aug{j}"),
                source_image_id: id.clone(),
                sub_class: class.clone(),
                prompt_text: format!("a photo of a {class}"),
                reference_image_id: None,
                method: saspa::generation::Method::Saspa,
                params_digest: "demo".into(),
                seed: j as u64,
                output_path: format!("{id}-aug{j}.png"),
                verdict: Verdict::Kept,
                drop_reason: None,
            });
        }
    }
    manifest
}

fn main() -> saspa::Result<()> {
    println!("alpha defaults:");
    for (name, regime) in [
        ("Aircraft", AlphaRegime::Full),
        ("CUB", AlphaRegime::Full),
        ("Aircraft", AlphaRegime::FewShot),
        ("Aircraft", AlphaRegime::High),
    ] {
        println!("  {name:<9} {regime:?}: {}", resolve_alpha(name, regime)?);
    }

    let d = toy_descriptor(2, 50);
    let manifest = kept_manifest(&d, 2);
    let policy = ReplacementPolicy { alpha: 0.4, m: 2, seed: 11 };

    let mut synthetic = 0usize;
    let epochs = 50;
    for epoch in 0..epochs {
        let plan = sample_epoch(&d, &manifest, &policy, epoch)?;
        synthetic += plan.synthetic_count();
    }
    let total = epochs * d.split("train").len();
    println!(
        "over {epochs} epochs: {synthetic}/{total} synthetic slots ({:.3}, alpha 0.4)",
        synthetic as f64 / total as f64
    );

    let plan = sample_epoch(&d, &manifest, &policy, 0)?;
    let replaced = plan
        .slots
        .iter()
        .find(|s| s.source == SlotSource::Synthetic)
        .expect("alpha 0.4 replaces something in 100 slots");
    println!(
        "slot {} swapped its real image for `{}`",
        replaced.slot_index, replaced.image_ref
    );

    println!("training recipes:");
    for (name, hp) in hyperparameter_registry() {
        println!(
            "  {name:<18} lr {} batch {:>2} wd {} epochs {} {} momentum {}",
            hp.learning_rate, hp.batch_size, hp.weight_decay, hp.epochs, hp.optimizer, hp.momentum
        );
    }
    assert_eq!(default_hyperparameters("aircraft")?.batch_size, 4);

    // stream three epochs of the replacement schedule as jsonl
    let mut trainer = CountingTrainer::default();
    let mut log = Vec::new();
    run_training(&d, &manifest, &policy, &mut trainer, 3, &mut log)?;
    println!("run log:");
    print!("{}", String::from_utf8_lossy(&log));
    Ok(())
}
