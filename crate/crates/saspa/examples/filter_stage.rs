//! Fidelity filtering: semantic and top-k stages plus the alia alternative.

use saspa::filters::{
    alia_threshold_filter, apply_filter_pipeline, compute_class_thresholds, FilterConfig,
    HashScorer, ScoreKind, ScoreVector,
};
use saspa::fixtures::{toy_descriptor, toy_pool};
use saspa::generation::{execute_jobs, plan_baseline_jobs, FsJobPreparer, Method, MockBackend};
use saspa::manifest::AugmentationManifest;

fn main() -> saspa::Result<()> {
    let d = toy_descriptor(3, 5);
    let pool = toy_pool("Airplane", 6);
    // text2img jobs need no files on disk, so the demo stays in memory
    let jobs = plan_baseline_jobs(&d, &pool, 2, 13, Method::Text2img, None)?;

    let preparer = FsJobPreparer::new(
        &d,
        ".",
        "unused-edges",
        saspa::edges::DetectorParams { low: 0, high: 0, gaussian_sigma: 1.4 },
    );
    let (manifest, _) = execute_jobs(
        &jobs,
        &MockBackend,
        &preparer,
        AugmentationManifest::new(&d.name),
        None,
        4,
        0,
    )?;
    println!("{} pending records before filtering", manifest.records.len());

    let scorer = HashScorer::new(&d, 7);
    let config = FilterConfig { use_topk: true, k: 2, ..FilterConfig::default() };
    let (filtered, report) = apply_filter_pipeline(manifest, &d, &scorer, &config, None)?;
    println!(
        "kept {} / dropped {} ({:.1}% drop rate)",
        report.kept,
        report.dropped,
        100.0 * report.drop_fraction
    );
    for stage in &report.per_stage {
        println!("  stage {:<18} dropped {}", stage.name, stage.dropped);
        for (reason, n) in &stage.reasons {
            println!("    {reason}: {n}");
        }
    }
    assert_eq!(filtered.records.len(), report.total);

    // the alia alternative drops anything at or above its class threshold
    let val_scores = [
        ("class-0", 0.62),
        ("class-0", 0.58),
        ("class-1", 0.91),
        ("class-1", 0.89),
    ];
    let thresholds = compute_class_thresholds(&val_scores)?;
    println!("alia thresholds: {thresholds:?}");
    let v = ScoreVector::new(
        ScoreKind::ClassifierSoftmax,
        vec!["class-0".into(), "class-1".into()],
        vec![0.7, 0.3],
    )?;
    let verdict = alia_threshold_filter(&v, 0, &thresholds)?;
    println!("confidence 0.70 vs threshold 0.60 -> keep: {}", verdict.keep);
    Ok(())
}
