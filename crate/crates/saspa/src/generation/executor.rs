//! Runs planned jobs against a backend and appends manifest records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::dataset::DatasetDescriptor;
use crate::edges::{edge_png_name, load_edge_png, resize_shortest_side, Detector, DetectorParams, TARGET_SHORTEST_SIDE};
use crate::error::{Error, Result};
use crate::manifest::{AugmentationManifest, AugmentationRecord, Verdict};

use super::{GenerationBackend, GenerationJob, GenerationRequest};

/// Turns a planned job into a concrete request by gathering its inputs.
pub trait JobPreparer: Sync {
    fn prepare(&self, job: &GenerationJob) -> Result<GenerationRequest>;
}

/// Preparer backed by the dataset directory layout: source images live under
/// the dataset root at their descriptor paths, edge maps as
/// `<id>.edge.png` under a separate directory. Edge maps must already be
/// extracted; this preparer never computes them on the fly.
pub struct FsJobPreparer {
    image_paths: HashMap<String, PathBuf>,
    edge_dir: PathBuf,
    edge_params: DetectorParams,
}

impl FsJobPreparer {
    pub fn new(
        descriptor: &DatasetDescriptor,
        dataset_root: impl Into<PathBuf>,
        edge_dir: impl Into<PathBuf>,
        edge_params: DetectorParams,
    ) -> Self {
        let dataset_root = dataset_root.into();
        let image_paths = descriptor
            .images
            .iter()
            .map(|img| (img.id.clone(), dataset_root.join(&img.path)))
            .collect();
        Self {
            image_paths,
            edge_dir: edge_dir.into(),
            edge_params,
        }
    }

    fn open_rgb(&self, id: &str) -> Result<image::RgbImage> {
        let path = self
            .image_paths
            .get(id)
            .ok_or_else(|| Error::Validation(format!("unknown image id `{id}`")))?;
        let img = image::open(path).map_err(|e| Error::parse(path, e))?;
        Ok(resize_shortest_side(&img, TARGET_SHORTEST_SIDE)?.to_rgb8())
    }
}

impl JobPreparer for FsJobPreparer {
    fn prepare(&self, job: &GenerationJob) -> Result<GenerationRequest> {
        let edge_map = if job.method.needs_edges() {
            Some(load_edge_png(
                self.edge_dir.join(edge_png_name(&job.source_image_id)),
                &job.source_image_id,
                Detector::Canny,
                self.edge_params.clone(),
            )?)
        } else {
            None
        };
        let init_image = if job.method.needs_init_image() {
            Some(self.open_rgb(&job.source_image_id)?)
        } else {
            None
        };
        let reference_image = if job.method.needs_reference() {
            let id = job.reference_image_id.as_ref().ok_or_else(|| {
                Error::Precondition(format!("job {} lacks a reference image id", job.job_id))
            })?;
            Some(self.open_rgb(id)?)
        } else {
            None
        };
        let request = GenerationRequest {
            method: job.method,
            prompt: job.prompt_text.clone(),
            edge_map,
            init_image,
            reference_image,
            subject_texts: job.subject_texts.clone(),
            seed: job.seed,
            params: job.params.clone(),
        };
        request.validate()?;
        Ok(request)
    }
}

/// One job that could not be completed, after exhausting its retries.
#[derive(Debug)]
pub struct JobFailure {
    pub job_id: u64,
    pub aug_id: String,
    /// Backend attempts made; 0 when preparation already failed.
    pub attempts: u32,
    pub error: Error,
}

/// Outcome counts for one execution pass.
#[derive(Debug, Default)]
pub struct ExecutionReport {
    /// Jobs actually run this pass.
    pub attempted: usize,
    pub completed: usize,
    /// Jobs whose aug_id was already present in the manifest.
    pub skipped: usize,
    /// Backend attempts per job_id, for every job run this pass.
    pub attempts: BTreeMap<u64, u32>,
    pub failures: Vec<JobFailure>,
}

enum Outcome {
    Done {
        job_id: u64,
        record: AugmentationRecord,
        attempts: u32,
    },
    Failed(JobFailure),
}

/// Execute `jobs` with up to `max_in_flight` worker threads, appending one
/// pending record per completed job (sorted by job_id). Jobs already in the
/// manifest are skipped, which makes re-running an interrupted pass cheap.
/// Only backend errors marked retryable are retried; each job gets at most
/// `retries + 1` attempts.
pub fn execute_jobs(
    jobs: &[GenerationJob],
    backend: &dyn GenerationBackend,
    preparer: &dyn JobPreparer,
    mut manifest: AugmentationManifest,
    out_dir: Option<&Path>,
    max_in_flight: usize,
    retries: u32,
) -> Result<(AugmentationManifest, ExecutionReport)> {
    if max_in_flight == 0 {
        return Err(Error::Validation("max_in_flight must be at least 1".into()));
    }
    let info = backend
        .handshake()
        .map_err(|e| Error::BackendHandshake(e.to_string()))?;
    for job in jobs {
        if !info.methods.contains(&job.method) {
            return Err(Error::UnsupportedMethod {
                backend: info.name.clone(),
                method: job.method,
            });
        }
    }

    let mut report = ExecutionReport::default();
    let mut seen: HashSet<String> = manifest.records.iter().map(|r| r.aug_id.clone()).collect();
    let mut pending: Vec<(&GenerationJob, String)> = Vec::new();
    for job in jobs {
        let aug_id = job.aug_id();
        if seen.insert(aug_id.clone()) {
            pending.push((job, aug_id));
        } else {
            report.skipped += 1;
        }
    }
    report.attempted = pending.len();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let outcomes: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..pending.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = max_in_flight.min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::Relaxed);
                let Some((job, aug_id)) = pending.get(index) else {
                    break;
                };
                let outcome = run_one(job, aug_id, backend, preparer, out_dir, retries);
                outcomes.lock().unwrap()[index] = Some(outcome);
            });
        }
    });

    let mut completed: Vec<(u64, AugmentationRecord)> = Vec::new();
    for outcome in outcomes.into_inner().unwrap() {
        match outcome.expect("every pending job produced an outcome") {
            Outcome::Done { job_id, record, attempts } => {
                report.attempts.insert(job_id, attempts);
                completed.push((job_id, record));
            }
            Outcome::Failed(failure) => {
                report.attempts.insert(failure.job_id, failure.attempts);
                report.failures.push(failure);
            }
        }
    }
    completed.sort_by_key(|(job_id, _)| *job_id);
    report.failures.sort_by_key(|f| f.job_id);
    report.completed = completed.len();
    manifest
        .records
        .extend(completed.into_iter().map(|(_, record)| record));

    debug_assert_eq!(report.completed + report.failures.len(), report.attempted);
    debug_assert_eq!(report.attempted + report.skipped, jobs.len());
    Ok((manifest, report))
}

fn run_one(
    job: &GenerationJob,
    aug_id: &str,
    backend: &dyn GenerationBackend,
    preparer: &dyn JobPreparer,
    out_dir: Option<&Path>,
    retries: u32,
) -> Outcome {
    let fail = |attempts: u32, error: Error| {
        Outcome::Failed(JobFailure {
            job_id: job.job_id,
            aug_id: aug_id.to_string(),
            attempts,
            error,
        })
    };
    let request = match preparer.prepare(job) {
        Ok(request) => request,
        Err(error) => return fail(0, error),
    };
    let mut attempts = 0;
    let image = loop {
        attempts += 1;
        match backend.generate(&request) {
            Ok(image) => break image,
            Err(Error::Backend { retryable: true, .. }) if attempts <= retries => {}
            Err(error) => return fail(attempts, error),
        }
    };
    let output_name = job.output_name();
    if let Some(dir) = out_dir {
        let path = dir.join(&output_name);
        if let Err(e) = image.save(&path) {
            return fail(
                attempts,
                Error::Validation(format!("failed to write {}: {e}", path.display())),
            );
        }
    }
    Outcome::Done {
        job_id: job.job_id,
        record: AugmentationRecord {
            aug_id: aug_id.to_string(),
            source_image_id: job.source_image_id.clone(),
            sub_class: job.sub_class.clone(),
            prompt_text: job.prompt_text.clone(),
            reference_image_id: job.reference_image_id.clone(),
            method: job.method,
            params_digest: job.params.digest(),
            seed: job.seed,
            output_path: output_name,
            verdict: Verdict::Pending,
            drop_reason: None,
        },
        attempts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edges::{extract_canny_edges, EdgeMap};
    use crate::fixtures::{toy_pool, write_toy_dataset, ToyDatasetOptions};
    use crate::generation::{plan_saspa_jobs, BackendInfo, FlakyBackend, Method, MockBackend};
    use image::{Rgb, RgbImage};

    /// In-memory preparer deriving every input image from the ids alone.
    struct SyntheticPreparer;

    fn synthetic_image(id: &str) -> RgbImage {
        let tone = id.bytes().fold(37u8, |acc, b| acc.wrapping_mul(31).wrapping_add(b));
        RgbImage::from_pixel(48, 32, Rgb([tone, tone.wrapping_add(40), 200]))
    }

    fn synthetic_edge(id: &str) -> EdgeMap {
        let column = id.len() as u32 % 48;
        let mut data = vec![0u8; 48 * 32];
        for y in 0..32u32 {
            data[(y * 48 + column) as usize] = 255;
        }
        EdgeMap {
            width: 48,
            height: 32,
            data,
            source_image_id: id.to_string(),
            detector: Detector::Canny,
            params: DetectorParams { low: 20, high: 60, gaussian_sigma: 1.4 },
        }
    }

    impl JobPreparer for SyntheticPreparer {
        fn prepare(&self, job: &GenerationJob) -> Result<GenerationRequest> {
            Ok(GenerationRequest {
                method: job.method,
                prompt: job.prompt_text.clone(),
                edge_map: job
                    .method
                    .needs_edges()
                    .then(|| synthetic_edge(&job.source_image_id)),
                init_image: job
                    .method
                    .needs_init_image()
                    .then(|| synthetic_image(&job.source_image_id)),
                reference_image: job
                    .method
                    .needs_reference()
                    .then(|| synthetic_image(job.reference_image_id.as_ref().unwrap())),
                subject_texts: job.subject_texts.clone(),
                seed: job.seed,
                params: job.params.clone(),
            })
        }
    }

    fn toy_jobs() -> Vec<GenerationJob> {
        let descriptor = crate::fixtures::toy_descriptor(2, 3);
        let pool = toy_pool("Airplane", 4);
        plan_saspa_jobs(&descriptor, &pool, 2, 11, true).unwrap()
    }

    #[test]
    fn mock_run_completes_every_job_in_order() {
        let jobs = toy_jobs();
        let dir = tempfile::tempdir().unwrap();
        let manifest = AugmentationManifest::new("toy");
        let (manifest, report) = execute_jobs(
            &jobs,
            &MockBackend,
            &SyntheticPreparer,
            manifest,
            Some(dir.path()),
            4,
            0,
        )
        .unwrap();
        assert_eq!(report.attempted, jobs.len());
        assert_eq!(report.completed, jobs.len());
        assert_eq!(report.skipped, 0);
        assert!(report.failures.is_empty());
        assert_eq!(manifest.records.len(), jobs.len());
        // appended in job order regardless of worker interleaving
        let expected: Vec<String> = jobs.iter().map(|j| j.aug_id()).collect();
        let got: Vec<String> = manifest.records.iter().map(|r| r.aug_id.clone()).collect();
        assert_eq!(got, expected);
        for (job, record) in jobs.iter().zip(&manifest.records) {
            assert_eq!(record.verdict, Verdict::Pending);
            assert_eq!(record.output_path, job.output_name());
            assert!(dir.path().join(&record.output_path).is_file());
        }
        manifest.validate().unwrap();
    }

    #[test]
    fn retryable_failures_are_retried_to_success() {
        let jobs = toy_jobs();
        let flaky_seed = jobs[2].seed;
        let backend = FlakyBackend::new(MockBackend, [(flaky_seed, 2)]);
        let (manifest, report) = execute_jobs(
            &jobs,
            &backend,
            &SyntheticPreparer,
            AugmentationManifest::new("toy"),
            None,
            2,
            2,
        )
        .unwrap();
        assert_eq!(report.completed, jobs.len());
        assert_eq!(report.attempts[&jobs[2].job_id], 3);
        assert_eq!(report.attempts[&jobs[0].job_id], 1);
        assert_eq!(manifest.records.len(), jobs.len());
    }

    #[test]
    fn exhausted_retries_surface_as_failures() {
        let jobs = toy_jobs();
        let flaky_seed = jobs[1].seed;
        let backend = FlakyBackend::new(MockBackend, [(flaky_seed, 5)]);
        let (manifest, report) = execute_jobs(
            &jobs,
            &backend,
            &SyntheticPreparer,
            AugmentationManifest::new("toy"),
            None,
            1,
            1,
        )
        .unwrap();
        assert_eq!(report.completed, jobs.len() - 1);
        assert_eq!(report.failures.len(), 1);
        let failure = &report.failures[0];
        assert_eq!(failure.job_id, jobs[1].job_id);
        assert_eq!(failure.attempts, 2);
        assert!(matches!(failure.error, Error::Backend { retryable: true, .. }));
        assert_eq!(manifest.records.len(), jobs.len() - 1);
    }

    #[test]
    fn rerun_skips_existing_records() {
        let jobs = toy_jobs();
        let (manifest, first) = execute_jobs(
            &jobs,
            &MockBackend,
            &SyntheticPreparer,
            AugmentationManifest::new("toy"),
            None,
            2,
            0,
        )
        .unwrap();
        assert_eq!(first.completed, jobs.len());
        let before = manifest.records.clone();
        let (manifest, second) = execute_jobs(
            &jobs,
            &MockBackend,
            &SyntheticPreparer,
            manifest,
            None,
            2,
            0,
        )
        .unwrap();
        assert_eq!(second.attempted, 0);
        assert_eq!(second.skipped, jobs.len());
        assert_eq!(manifest.records, before);
    }

    #[test]
    fn handshake_failure_aborts() {
        struct Broken;
        impl GenerationBackend for Broken {
            fn handshake(&self) -> Result<BackendInfo> {
                Err(Error::Backend { message: "unreachable".into(), retryable: true })
            }
            fn generate(&self, _: &GenerationRequest) -> Result<RgbImage> {
                unreachable!("generate must not be called after a failed handshake")
            }
        }
        let jobs = toy_jobs();
        let result = execute_jobs(
            &jobs,
            &Broken,
            &SyntheticPreparer,
            AugmentationManifest::new("toy"),
            None,
            1,
            0,
        );
        assert!(matches!(result, Err(Error::BackendHandshake(_))));
    }

    #[test]
    fn unsupported_method_is_refused_up_front() {
        struct EdgeOnly;
        impl GenerationBackend for EdgeOnly {
            fn handshake(&self) -> Result<BackendInfo> {
                Ok(BackendInfo {
                    name: "edge-only".into(),
                    version: "1".into(),
                    methods: vec![Method::Text2img],
                })
            }
            fn generate(&self, request: &GenerationRequest) -> Result<RgbImage> {
                MockBackend.generate(request)
            }
        }
        let jobs = toy_jobs();
        let result = execute_jobs(
            &jobs,
            &EdgeOnly,
            &SyntheticPreparer,
            AugmentationManifest::new("toy"),
            None,
            1,
            0,
        );
        match result {
            Err(Error::UnsupportedMethod { backend, method }) => {
                assert_eq!(backend, "edge-only");
                assert_eq!(method, Method::Saspa);
            }
            other => panic!("expected unsupported-method error, got {other:?}"),
        }
    }

    #[test]
    fn fs_preparer_assembles_requests_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let options = ToyDatasetOptions {
            classes: 2,
            per_class: 2,
            width: 64,
            height: 48,
            captioned: false,
        };
        let descriptor_path = write_toy_dataset(dir.path(), &options).unwrap();
        let descriptor = crate::dataset::load_dataset(&descriptor_path).unwrap();

        let edge_dir = dir.path().join("edges");
        std::fs::create_dir_all(&edge_dir).unwrap();
        let edge_params = DetectorParams { low: 20, high: 60, gaussian_sigma: 1.4 };
        for record in &descriptor.images {
            let img = image::open(dir.path().join(&record.path)).unwrap();
            let map = extract_canny_edges(&img, &record.id, edge_params.low, edge_params.high).unwrap();
            map.save_png(&edge_dir).unwrap();
        }

        let pool = toy_pool("Airplane", 3);
        let jobs = plan_saspa_jobs(&descriptor, &pool, 2, 5, true).unwrap();
        let preparer = FsJobPreparer::new(&descriptor, dir.path(), &edge_dir, edge_params.clone());
        let request = preparer.prepare(&jobs[0]).unwrap();
        assert!(request.edge_map.is_some());
        assert!(request.reference_image.is_some());
        // init images resize to the generation resolution
        let reference = request.reference_image.as_ref().unwrap();
        assert_eq!(reference.height().min(reference.width()), 512);
        request.validate().unwrap();

        // a missing edge map is an error, not a silent fallback
        std::fs::remove_file(edge_dir.join(edge_png_name(&jobs[0].source_image_id))).unwrap();
        assert!(preparer.prepare(&jobs[0]).is_err());

        // whole plan executes against the mock
        for record in &descriptor.images {
            let img = image::open(dir.path().join(&record.path)).unwrap();
            let map = extract_canny_edges(&img, &record.id, edge_params.low, edge_params.high).unwrap();
            map.save_png(&edge_dir).unwrap();
        }
        let (manifest, report) = execute_jobs(
            &jobs,
            &MockBackend,
            &preparer,
            AugmentationManifest::new(descriptor.name.clone()),
            None,
            2,
            0,
        )
        .unwrap();
        assert_eq!(report.completed, jobs.len());
        assert_eq!(manifest.records.len(), jobs.len());
    }

    #[test]
    fn zero_workers_is_rejected() {
        let jobs = toy_jobs();
        assert!(matches!(
            execute_jobs(
                &jobs,
                &MockBackend,
                &SyntheticPreparer,
                AugmentationManifest::new("toy"),
                None,
                0,
                0
            ),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn text2img_jobs_run_without_source_inputs() {
        let descriptor = crate::fixtures::toy_descriptor(1, 2);
        let pool = toy_pool("Airplane", 2);
        let jobs =
            crate::generation::plan_baseline_jobs(&descriptor, &pool, 2, 3, Method::Text2img, None)
                .unwrap();
        let (manifest, report) = execute_jobs(
            &jobs,
            &MockBackend,
            &SyntheticPreparer,
            AugmentationManifest::new("toy"),
            None,
            2,
            0,
        )
        .unwrap();
        assert_eq!(report.completed, jobs.len());
        for record in &manifest.records {
            assert!(record.reference_image_id.is_none());
        }
    }
}
