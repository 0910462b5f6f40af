//! Plan generation jobs: M per train image, same-class references, seeds.

use saspa::fixtures::{toy_descriptor, toy_pool};
use saspa::generation::{plan_baseline_jobs, plan_saspa_jobs, Method};

fn main() -> saspa::Result<()> {
    let d = toy_descriptor(3, 4);
    let pool = toy_pool("Airplane", 8);

    let jobs = plan_saspa_jobs(&d, &pool, 2, 99, true)?;
    println!("planned {} jobs for {} train images (M=2)", jobs.len(), 12);
    println!("{:<12} {:<12} {:<10} {:<18} prompt", "source", "reference", "class", "aug_id");
    for job in jobs.iter().take(6) {
        println!(
            "{:<12} {:<12} {:<10} {:<18} {}",
            job.source_image_id,
            job.reference_image_id.as_deref().unwrap_or("-"),
            job.sub_class,
            job.aug_id(),
            job.prompt_text
        );
    }

    // the reference is always a different image of the same sub-class
    assert!(jobs
        .iter()
        .all(|j| j.reference_image_id.as_deref() != Some(j.source_image_id.as_str())));
    println!("reference != source holds for every job");

    let subject = jobs[0].subject_texts.as_ref().expect("saspa carries subject texts");
    println!("subject texts: ({}, {})", subject.0, subject.1);

    // replanning with the same seed reproduces the plan byte for byte
    let again = plan_saspa_jobs(&d, &pool, 2, 99, true)?;
    assert_eq!(again, jobs);
    println!("plan is deterministic under the seed");

    let baseline = plan_baseline_jobs(&d, &pool, 2, 99, Method::Img2img, Some(0.5))?;
    println!(
        "img2img baseline: strength {:?}, no references: {}",
        baseline[0].params.strength,
        baseline.iter().all(|j| j.reference_image_id.is_none())
    );
    Ok(())
}
