//! Execute planned jobs against the mock backend and write a manifest.

use std::fs;
use std::path::Path;

use saspa::dataset::load_dataset;
use saspa::edges::{auto_thresholds, extract_canny_edges, resize_shortest_side, DetectorParams};
use saspa::fixtures::{toy_pool, write_toy_dataset, ToyDatasetOptions};
use saspa::generation::{execute_jobs, plan_saspa_jobs, FsJobPreparer, MockBackend};
use saspa::manifest::{read_manifest, write_manifest, AugmentationManifest};

fn main() -> saspa::Result<()> {
    let scratch = Path::new("target/example-scratch/generate_mock");
    fs::create_dir_all(scratch).expect("scratch dir");

    let descriptor_path = write_toy_dataset(scratch.join("data"), &ToyDatasetOptions::default())?;
    let d = load_dataset(&descriptor_path)?;
    let root = descriptor_path.parent().unwrap();

    // saspa jobs need edge maps on disk before execution
    let edge_dir = scratch.join("edges");
    fs::create_dir_all(&edge_dir).expect("edge dir");
    for id in d.train_ids()? {
        let record = d.image(id).unwrap();
        let image = image::open(root.join(&record.path)).expect("toy image");
        let resized = resize_shortest_side(&image, 512)?;
        let (low, high) = auto_thresholds(&resized)?;
        extract_canny_edges(&resized, id, low, high)?.save_png(&edge_dir)?;
    }
    println!("extracted {} edge maps", d.train_ids()?.len());

    let pool = toy_pool("Airplane", 6);
    let jobs = plan_saspa_jobs(&d, &pool, 2, 5, true)?;
    let preparer = FsJobPreparer::new(
        &d,
        root,
        &edge_dir,
        DetectorParams { low: 0, high: 0, gaussian_sigma: 1.4 },
    );

    let images_dir = scratch.join("images");
    let (manifest, report) = execute_jobs(
        &jobs,
        &MockBackend,
        &preparer,
        AugmentationManifest::new(&d.name),
        Some(&images_dir),
        4,
        2,
    )?;
    println!(
        "attempted {} / completed {} / failed {}",
        report.attempted,
        report.completed,
        report.failures.len()
    );

    let manifest_path = scratch.join("manifest.jsonl");
    write_manifest(&manifest, &manifest_path)?;
    let back = read_manifest(&manifest_path)?;
    assert_eq!(back.records.len(), manifest.records.len());
    println!(
        "manifest at {} with {} pending records",
        manifest_path.display(),
        back.records.len()
    );

    // executing again skips everything already in the manifest
    let (_, rerun) = execute_jobs(&jobs, &MockBackend, &preparer, back, Some(&images_dir), 4, 2)?;
    println!("rerun: attempted {}, skipped {}", rerun.attempted, rerun.skipped);
    Ok(())
}
