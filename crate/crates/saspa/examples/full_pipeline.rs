//! End-to-end run on a toy dataset through the staged pipeline.

use std::fs;
use std::path::Path;

use saspa::fixtures::{write_toy_dataset, ToyDatasetOptions};
use saspa::pipeline::{run_pipeline, PipelineConfig, ScorerChoice, StageStatus};

fn main() -> saspa::Result<()> {
    let scratch = Path::new("target/example-scratch/full_pipeline");
    if scratch.exists() {
        fs::remove_dir_all(scratch).expect("clear scratch");
    }
    let descriptor = write_toy_dataset(
        scratch.join("data"),
        &ToyDatasetOptions { classes: 2, per_class: 4, ..ToyDatasetOptions::default() },
    )?;

    let mut config = PipelineConfig::new(descriptor, scratch.join("run"));
    config.seed = 3;
    config.m = 2;
    config.epochs = 2;
    config.alpha = Some(0.4);
    config.filter.k = 2;
    config.scorer = ScorerChoice::Hash;

    let report = run_pipeline(&config)?;
    println!("first run:");
    for s in &report.stages {
        println!("  {:<9} {:>4}  {}", s.stage.name(), s.count, s.detail);
    }
    println!(
        "planned {} -> kept {} + dropped {} + failed {}",
        report.planned, report.kept, report.dropped, report.failed
    );
    assert!(report.conservation_holds());
    if let Some(metrics) = &report.metrics {
        println!(
            "fid {:.3}, diversity {:.3}",
            metrics.fid.unwrap_or(f64::NAN),
            metrics.diversity.unwrap_or(f64::NAN)
        );
    }

    // second run: every artifact is up to date
    let rerun = run_pipeline(&config)?;
    println!("rerun:");
    for s in &rerun.stages {
        println!("  {:<9} {:>4}  {}", s.stage.name(), s.count, s.detail);
    }
    assert!(rerun.stages.iter().all(|s| s.status == StageStatus::Skipped));
    Ok(())
}
