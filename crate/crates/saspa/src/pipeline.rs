//! Staged end-to-end runs driven by one config file and one root seed.
//!
//! Stage order: prompts, edges, plan, generate, filter, train, metrics.
//! Every stage persists its artifact under `out_dir` and is skipped on rerun
//! when that artifact is already present, so a run can resume from any
//! persisted stage. Stage-log timestamps come from the config (fixed epoch
//! default) so reruns of the same config stay byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataset::{load_dataset, DatasetDescriptor};
use crate::edges::{
    auto_thresholds, edge_png_name, extract_canny_edges, resize_shortest_side, DetectorParams,
    GAUSSIAN_SIGMA, TARGET_SHORTEST_SIDE,
};
use crate::error::{Error, Result};
use crate::filters::{
    apply_filter_pipeline, AlternativeFilter, ClassThresholds, FilterConfig, FilterScorer,
    HashScorer, KeepAllScorer,
};
use crate::fixtures::{builtin_pool, builtin_prompt_lines};
use crate::generation::wire::http_backend;
use crate::generation::{
    execute_jobs, plan_baseline_jobs, plan_saspa_jobs, FsJobPreparer, GenerationBackend,
    GenerationJob, GenerationParams, Method, MockBackend, DEFAULT_M,
};
use crate::manifest::{read_manifest, write_manifest, AugmentationManifest};
use crate::metrics::{
    aggregate_accuracy, fid, lpips_diversity, DistanceProvider, DiversityPair, DiversityPairing,
    FeatureProvider, FeatureSet, FeatureSource, MeanAbsDiff, MetricsReport, PixelStats,
};
use crate::prompts::{append_artistic_styles, caption_pool, PromptPool, DEFAULT_ARTISTS};
use crate::training::{
    resolve_alpha, run_training, AlphaRegime, CountingTrainer, ReplacementPolicy,
};
use crate::util::{mix_seed, short_digest};

/// Overrides the http backend endpoint from the environment.
pub const BACKEND_ENDPOINT_ENV: &str = "SASPA_BACKEND_ENDPOINT";

/// Stage-log timestamp used when the config pins none; a constant keeps
/// reruns byte-identical. Set `timestamp` in the config for real provenance.
pub const DEFAULT_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

pub const PROMPTS_FILE: &str = "prompts.json";
pub const EDGES_DIR: &str = "edges";
pub const JOBS_FILE: &str = "jobs.json";
pub const IMAGES_DIR: &str = "images";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const GENERATE_REPORT_FILE: &str = "generate_report.json";
pub const FILTER_REPORT_FILE: &str = "filter_report.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.json";

// seed channels 1 and 2 belong to the planner
const STYLE_SEED_CHANNEL: u64 = 3;
const SCORER_SEED_CHANNEL: u64 = 4;
const TRAIN_SEED_CHANNEL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prompts,
    Edges,
    Plan,
    Generate,
    Filter,
    Train,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Prompts,
        Stage::Edges,
        Stage::Plan,
        Stage::Generate,
        Stage::Filter,
        Stage::Train,
        Stage::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prompts => "prompts",
            Stage::Edges => "edges",
            Stage::Plan => "plan",
            Stage::Generate => "generate",
            Stage::Filter => "filter",
            Stage::Train => "train",
            Stage::Metrics => "metrics",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    #[default]
    LlmPool,
    Captions,
}

impl FromStr for PromptSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm_pool" => Ok(Self::LlmPool),
            "captions" => Ok(Self::Captions),
            other => Err(Error::Validation(format!("unknown prompt source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
}

impl FromStr for BackendChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(Error::Validation(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerChoice {
    /// Favors the true class everywhere; nothing gets dropped.
    #[default]
    KeepAll,
    /// Deterministic pseudo-scores derived from aug ids; exercises drops.
    Hash,
}

impl FromStr for ScorerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep_all" => Ok(Self::KeepAll),
            "hash" => Ok(Self::Hash),
            other => Err(Error::Validation(format!("unknown scorer `{other}`"))),
        }
    }
}

fn default_method() -> Method {
    Method::Saspa
}

fn default_regime() -> AlphaRegime {
    AlphaRegime::Full
}

fn default_m() -> usize {
    DEFAULT_M
}

fn default_workers() -> usize {
    4
}

fn default_retries() -> u32 {
    2
}

fn default_epochs() -> usize {
    3
}

fn default_true() -> bool {
    true
}

/// Everything a run needs; CLI flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset descriptor path; image paths resolve against its directory.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Overrides the method defaults when set.
    #[serde(default)]
    pub params: Option<GenerationParams>,
    #[serde(default)]
    pub prompt_source: PromptSource,
    /// Style half the llm pool with painting suffixes.
    #[serde(default = "default_true")]
    pub artistic: bool,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Root seed; all stage randomness derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Per-class confidence thresholds, required by the alia alternative.
    #[serde(default)]
    pub alia_thresholds: Option<BTreeMap<String, f64>>,
    #[serde(default = "default_regime")]
    pub regime: AlphaRegime,
    /// Images per class when the dataset is a few-shot subset.
    #[serde(default)]
    pub shots: Option<usize>,
    /// Explicit replacement probability; otherwise resolved from the
    /// dataset name and regime.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub scorer: ScorerChoice,
    /// Externally measured run accuracies to aggregate in the report.
    #[serde(default)]
    pub accuracy_runs: Option<Vec<f64>>,
    #[serde(default)]
    pub timestamp: Option<String>,
}

impl PipelineConfig {
    pub fn new(dataset: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            out_dir: out_dir.into(),
            method: default_method(),
            params: None,
            prompt_source: PromptSource::default(),
            artistic: true,
            m: default_m(),
            seed: 0,
            workers: default_workers(),
            retries: default_retries(),
            filter: FilterConfig::default(),
            alia_thresholds: None,
            regime: default_regime(),
            shots: None,
            alpha: None,
            epochs: default_epochs(),
            backend: BackendChoice::default(),
            endpoint: None,
            scorer: ScorerChoice::default(),
            accuracy_runs: None,
            timestamp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Validation("m must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Validation("workers must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if let Some(alpha) = self.alpha {
            if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Validation(format!("alpha {alpha} outside [0, 1]")));
            }
        }
        if let Some(shots) = self.shots {
            if shots == 0 {
                return Err(Error::Validation("shots must be >= 1".into()));
            }
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub status: StageStatus,
    pub detail: String,
    pub count: usize,
}

impl StageSummary {
    fn completed(stage: Stage, count: usize) -> Self {
        Self {
            stage,
            status: StageStatus::Completed,
            detail: "completed".into(),
            count,
        }
    }

    fn completed_with(stage: Stage, count: usize, detail: impl Into<String>) -> Self {
        Self {
            stage,
            status: StageStatus::Completed,
            detail: detail.into(),
            count,
        }
    }

    fn skipped(stage: Stage, count: usize) -> Self {
        Self {
            stage,
            status: StageStatus::Skipped,
            detail: "skipped (up-to-date)".into(),
            count,
        }
    }

    fn skipped_with(stage: Stage, count: usize, detail: impl Into<String>) -> Self {
        Self {
            stage,
            status: StageStatus::Skipped,
            detail: detail.into(),
            count,
        }
    }
}

/// Counts carried across resumed runs so conservation stays checkable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub attempted: usize,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub dataset_name: String,
    pub dataset_path: PathBuf,
    pub method: Method,
    pub seed: u64,
    pub m: usize,
    pub alpha: f64,
    pub backend: String,
    pub topk_enabled: bool,
    pub config_digest: String,
    pub stages: Vec<StageSummary>,
    /// Jobs the planner produced (M per train image).
    pub planned: usize,
    /// Records in the manifest.
    pub generated: usize,
    pub kept: usize,
    pub dropped: usize,
    pub pending: usize,
    pub failed: usize,
    pub epoch_slots: usize,
    pub train_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

impl PipelineReport {
    /// Every planned job is accounted for once filtering has run.
    pub fn conservation_holds(&self) -> bool {
        self.pending == 0 && self.kept + self.dropped + self.failed == self.planned
    }
}

pub fn load_report(out_dir: impl AsRef<Path>) -> Result<PipelineReport> {
    read_json(&out_dir.as_ref().join(REPORT_FILE))
}

/// Config resolved against the dataset; built before any stage runs so
/// every fixture, backend, and threshold problem surfaces fail-fast.
struct Resolved {
    dataset: DatasetDescriptor,
    dataset_root: PathBuf,
    endpoint: Option<String>,
    alpha: f64,
    filter: FilterConfig,
    thresholds: Option<ClassThresholds>,
    params: GenerationParams,
    timestamp: String,
}

fn resolve(config: &PipelineConfig) -> Result<Resolved> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let dataset_root = config
        .dataset
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();

    match config.prompt_source {
        PromptSource::LlmPool => {
            if builtin_prompt_lines(&dataset.meta_class).is_none() {
                return Err(Error::Validation(format!(
                    "no built-in prompt pool for meta-class `{}`",
                    dataset.meta_class
                )));
            }
        }
        PromptSource::Captions => {
            for id in dataset.train_ids()? {
                let record = dataset.image(id);
                if record.and_then(|r| r.caption.as_ref()).is_none() {
                    return Err(Error::Validation(format!(
                        "prompt source `captions` but train image `{id}` has no caption"
                    )));
                }
            }
        }
    }

    let endpoint = match config.backend {
        BackendChoice::Mock => None,
        BackendChoice::Http => {
            let from_env = std::env::var(BACKEND_ENDPOINT_ENV)
                .ok()
                .filter(|v| !v.trim().is_empty());
            Some(from_env.or_else(|| config.endpoint.clone()).ok_or_else(|| {
                Error::Validation(format!(
                    "http backend needs an endpoint (config `endpoint` or ${BACKEND_ENDPOINT_ENV})"
                ))
            })?)
        }
    };

    let alpha = match config.alpha {
        Some(alpha) => alpha,
        None => resolve_alpha(&dataset.name, config.regime)?,
    };

    let mut filter = config.filter.clone();
    if config.regime == AlphaRegime::FewShot && config.shots.is_some_and(|s| s <= 8) {
        filter.use_topk = false;
    }
    if filter.use_topk && (filter.k == 0 || filter.k > dataset.sub_classes.len()) {
        return Err(Error::Validation(format!(
            "filter k={} outside 1..={} for this dataset",
            filter.k,
            dataset.sub_classes.len()
        )));
    }
    let thresholds = match (&filter.alternative, &config.alia_thresholds) {
        (AlternativeFilter::Alia, None) => {
            return Err(Error::Validation(
                "alia alternative filter needs `alia_thresholds`".into(),
            ))
        }
        (_, Some(map)) => Some(ClassThresholds::new(map.clone())?),
        (_, None) => None,
    };

    let params = config
        .params
        .clone()
        .unwrap_or_else(|| GenerationParams::for_method(config.method));
    params.validate()?;
    if config.method.needs_strength() && params.strength.is_none() {
        return Err(Error::Validation(format!(
            "method `{}` needs params.strength",
            config.method
        )));
    }
    if !config.method.needs_strength() && params.strength.is_some() {
        return Err(Error::Validation(format!(
            "method `{}` takes no params.strength",
            config.method
        )));
    }

    Ok(Resolved {
        dataset,
        dataset_root,
        endpoint,
        alpha,
        filter,
        thresholds,
        params,
        timestamp: config
            .timestamp
            .clone()
            .unwrap_or_else(|| DEFAULT_TIMESTAMP.into()),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn wrap_stage(stage: Stage, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.name(),
            source: Box::new(other),
        },
    }
}

fn stage_prompts(
    config: &PipelineConfig,
    r: &Resolved,
    manifest: &mut AugmentationManifest,
    manifest_path: &Path,
) -> Result<(StageSummary, PromptPool)> {
    let path = config.out_dir.join(PROMPTS_FILE);
    if path.exists() {
        let pool: PromptPool = read_json(&path)?;
        pool.validate()?;
        return Ok((StageSummary::skipped(Stage::Prompts, pool.len()), pool));
    }
    let pool = match config.prompt_source {
        PromptSource::LlmPool => {
            let pool = builtin_pool(&r.dataset.meta_class)?;
            if config.artistic {
                let artists: Vec<String> = DEFAULT_ARTISTS.iter().map(|a| a.to_string()).collect();
                append_artistic_styles(&pool, &artists, mix_seed(config.seed, STYLE_SEED_CHANNEL))?
            } else {
                pool
            }
        }
        PromptSource::Captions => caption_pool(&r.dataset)?,
    };
    write_json(&path, &pool)?;
    let digest = short_digest(&serde_json::to_vec(&pool).map_err(|e| Error::parse(&path, e))?);
    manifest.push_stage(Stage::Prompts.name(), digest, &r.timestamp);
    write_manifest(manifest, manifest_path)?;
    Ok((StageSummary::completed(Stage::Prompts, pool.len()), pool))
}

fn stage_edges(
    config: &PipelineConfig,
    r: &Resolved,
    manifest: &mut AugmentationManifest,
    manifest_path: &Path,
) -> Result<StageSummary> {
    if !config.method.needs_edges() {
        return Ok(StageSummary::skipped_with(
            Stage::Edges,
            0,
            format!("skipped (not required for {})", config.method),
        ));
    }
    let dir = config.out_dir.join(EDGES_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let train = r.dataset.train_ids()?;
    let mut computed = 0usize;
    for id in train {
        let target = dir.join(edge_png_name(id));
        if target.exists() {
            continue;
        }
        let record = r.dataset.image(id).ok_or_else(|| {
            Error::Validation(format!("train id `{id}` missing from the image table"))
        })?;
        let path = r.dataset_root.join(&record.path);
        let image = image::open(&path).map_err(|e| Error::parse(&path, e))?;
        let resized = resize_shortest_side(&image, TARGET_SHORTEST_SIDE)?;
        let (low, high) = auto_thresholds(&resized)?;
        extract_canny_edges(&resized, id, low, high)?.save_png(&dir)?;
        computed += 1;
    }
    if computed == 0 {
        return Ok(StageSummary::skipped(Stage::Edges, train.len()));
    }
    let digest = short_digest(
        format!("canny,sigma={GAUSSIAN_SIGMA},side={TARGET_SHORTEST_SIDE}").as_bytes(),
    );
    manifest.push_stage(Stage::Edges.name(), digest, &r.timestamp);
    write_manifest(manifest, manifest_path)?;
    Ok(StageSummary::completed(Stage::Edges, computed))
}

fn stage_plan(
    config: &PipelineConfig,
    r: &Resolved,
    pool: &PromptPool,
    manifest: &mut AugmentationManifest,
    manifest_path: &Path,
) -> Result<(StageSummary, Vec<GenerationJob>)> {
    let path = config.out_dir.join(JOBS_FILE);
    if path.exists() {
        let jobs: Vec<GenerationJob> = read_json(&path)?;
        return Ok((StageSummary::skipped(Stage::Plan, jobs.len()), jobs));
    }
    let mut jobs = match config.method {
        Method::Saspa => plan_saspa_jobs(&r.dataset, pool, config.m, config.seed, true)?,
        Method::SaspaNoSubject => plan_saspa_jobs(&r.dataset, pool, config.m, config.seed, false)?,
        baseline => plan_baseline_jobs(
            &r.dataset,
            pool,
            config.m,
            config.seed,
            baseline,
            r.params.strength,
        )?,
    };
    if config.params.is_some() {
        for job in &mut jobs {
            job.params = r.params.clone();
        }
    }
    write_json(&path, &jobs)?;
    let digest_source = serde_json::json!({
        "method": config.method,
        "m": config.m,
        "seed": config.seed,
        "params": r.params.digest(),
    });
    let digest = short_digest(digest_source.to_string().as_bytes());
    manifest.push_stage(Stage::Plan.name(), digest, &r.timestamp);
    write_manifest(manifest, manifest_path)?;
    Ok((StageSummary::completed(Stage::Plan, jobs.len()), jobs))
}

fn stage_generate(
    config: &PipelineConfig,
    r: &Resolved,
    jobs: &[GenerationJob],
    manifest: AugmentationManifest,
    manifest_path: &Path,
) -> Result<(StageSummary, AugmentationManifest, GenerateSummary)> {
    let report_path = config.out_dir.join(GENERATE_REPORT_FILE);
    if manifest.has_stage(Stage::Generate.name()) {
        let summary: GenerateSummary = read_json(&report_path)?;
        return Ok((
            StageSummary::skipped(Stage::Generate, summary.completed),
            manifest,
            summary,
        ));
    }
    let backend: Box<dyn GenerationBackend> = match config.backend {
        BackendChoice::Mock => Box::new(MockBackend),
        BackendChoice::Http => {
            let endpoint = r.endpoint.as_deref().expect("resolved for http");
            Box::new(http_backend(endpoint))
        }
    };
    let preparer = FsJobPreparer::new(
        &r.dataset,
        &r.dataset_root,
        config.out_dir.join(EDGES_DIR),
        DetectorParams {
            low: 0,
            high: 0,
            gaussian_sigma: GAUSSIAN_SIGMA,
        },
    );
    let images_dir = config.out_dir.join(IMAGES_DIR);
    let (mut manifest, exec) = execute_jobs(
        jobs,
        backend.as_ref(),
        &preparer,
        manifest,
        Some(&images_dir),
        config.workers,
        config.retries,
    )?;
    let summary = GenerateSummary {
        attempted: exec.attempted,
        completed: exec.completed,
        skipped: exec.skipped,
        failed: exec.failures.len(),
    };
    write_json(&report_path, &summary)?;
    // failures leave the stage open so a rerun retries them
    if summary.failed == 0 {
        manifest.push_stage(Stage::Generate.name(), r.params.digest(), &r.timestamp);
    }
    write_manifest(&manifest, manifest_path)?;
    let stage_summary = if summary.failed == 0 {
        StageSummary::completed(Stage::Generate, summary.completed)
    } else {
        StageSummary::completed_with(
            Stage::Generate,
            summary.completed,
            format!("completed with {} failed jobs", summary.failed),
        )
    };
    Ok((stage_summary, manifest, summary))
}

fn stage_filter(
    config: &PipelineConfig,
    r: &Resolved,
    manifest: AugmentationManifest,
    manifest_path: &Path,
) -> Result<(StageSummary, AugmentationManifest)> {
    if manifest.has_stage(Stage::Filter.name()) {
        let dropped = manifest.count(crate::manifest::Verdict::Dropped);
        return Ok((StageSummary::skipped(Stage::Filter, dropped), manifest));
    }
    let scorer: Box<dyn FilterScorer> = match config.scorer {
        ScorerChoice::KeepAll => Box::new(KeepAllScorer::new(&r.dataset)),
        ScorerChoice::Hash => Box::new(HashScorer::new(
            &r.dataset,
            mix_seed(config.seed, SCORER_SEED_CHANNEL),
        )),
    };
    let (mut manifest, report) = apply_filter_pipeline(
        manifest,
        &r.dataset,
        scorer.as_ref(),
        &r.filter,
        r.thresholds.as_ref(),
    )?;
    write_json(&config.out_dir.join(FILTER_REPORT_FILE), &report)?;
    let filter_json =
        serde_json::to_vec(&r.filter).map_err(|e| Error::parse(Path::new(FILTER_REPORT_FILE), e))?;
    manifest.push_stage(Stage::Filter.name(), short_digest(&filter_json), &r.timestamp);
    write_manifest(&manifest, manifest_path)?;
    Ok((
        StageSummary::completed(Stage::Filter, report.dropped),
        manifest,
    ))
}

fn stage_train(
    config: &PipelineConfig,
    r: &Resolved,
    manifest: AugmentationManifest,
    manifest_path: &Path,
) -> Result<(StageSummary, AugmentationManifest, usize)> {
    let log_path = config.out_dir.join(TRAIN_LOG_FILE);
    if manifest.has_stage(Stage::Train.name()) {
        let epochs = fs::read_to_string(&log_path)
            .map_err(|e| Error::io(&log_path, e))?
            .lines()
            .count();
        return Ok((StageSummary::skipped(Stage::Train, epochs), manifest, epochs));
    }
    let policy = ReplacementPolicy {
        alpha: r.alpha,
        m: config.m,
        seed: mix_seed(config.seed, TRAIN_SEED_CHANNEL),
    };
    let mut trainer = CountingTrainer::default();
    let mut sink = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let log = run_training(
        &r.dataset,
        &manifest,
        &policy,
        &mut trainer,
        config.epochs,
        &mut sink,
    )?;
    let mut manifest = manifest;
    let policy_json = serde_json::json!({
        "alpha": policy.alpha,
        "m": policy.m,
        "seed": policy.seed,
        "epochs": config.epochs,
    });
    manifest.push_stage(
        Stage::Train.name(),
        short_digest(policy_json.to_string().as_bytes()),
        &r.timestamp,
    );
    write_manifest(&manifest, manifest_path)?;
    Ok((
        StageSummary::completed(Stage::Train, log.len()),
        manifest,
        log.len(),
    ))
}

fn load_rgb_resized(path: &Path) -> Result<image::RgbImage> {
    let image = image::open(path).map_err(|e| Error::parse(path, e))?;
    Ok(resize_shortest_side(&image, TARGET_SHORTEST_SIDE)?.to_rgb8())
}

fn stage_metrics(
    config: &PipelineConfig,
    r: &Resolved,
    manifest: &mut AugmentationManifest,
    manifest_path: &Path,
) -> Result<(StageSummary, MetricsReport)> {
    let path = config.out_dir.join(METRICS_FILE);
    if path.exists() {
        let report: MetricsReport = read_json(&path)?;
        let kept = manifest.count(crate::manifest::Verdict::Kept);
        return Ok((StageSummary::skipped(Stage::Metrics, kept), report));
    }
    let features = PixelStats;
    let perceptual = MeanAbsDiff;
    let images_dir = config.out_dir.join(IMAGES_DIR);
    let kept: Vec<_> = manifest.kept().cloned().collect();

    let mut synth_vectors = Vec::with_capacity(kept.len());
    let mut pairs = Vec::with_capacity(kept.len());
    for record in &kept {
        let aug_path = images_dir.join(&record.output_path);
        let aug = image::open(&aug_path)
            .map_err(|e| Error::parse(&aug_path, e))?
            .to_rgb8();
        synth_vectors.push(features.features(&aug)?);
        let source = r.dataset.image(&record.source_image_id).ok_or_else(|| {
            Error::Validation(format!(
                "manifest references unknown image `{}`",
                record.source_image_id
            ))
        })?;
        let source_path = r.dataset_root.join(&source.path);
        let original = image::open(&source_path).map_err(|e| Error::parse(&source_path, e))?;
        // compare at the augmentation's resolution
        let original = image::imageops::resize(
            &original.to_rgb8(),
            aug.width(),
            aug.height(),
            image::imageops::FilterType::Triangle,
        );
        pairs.push(DiversityPair {
            original: record.source_image_id.clone(),
            augmentation: record.aug_id.clone(),
            distance: perceptual.distance(&original, &aug)?,
        });
    }

    let mut real_vectors = Vec::new();
    for id in r.dataset.train_ids()? {
        let record = r.dataset.image(id).expect("validated descriptor");
        real_vectors.push(features.features(&load_rgb_resized(&r.dataset_root.join(&record.path))?)?);
    }

    let fid_value = if real_vectors.len() >= 2 && synth_vectors.len() >= 2 {
        Some(fid(
            &FeatureSet::new(real_vectors, FeatureSource::Real)?,
            &FeatureSet::new(synth_vectors, FeatureSource::Synthetic)?,
        )?)
    } else {
        None
    };
    let diversity = if pairs.is_empty() {
        None
    } else {
        Some(lpips_diversity(&DiversityPairing { pairs })?)
    };
    let accuracy = match &config.accuracy_runs {
        Some(runs) => Some(aggregate_accuracy(runs)?),
        None => None,
    };
    let report = MetricsReport {
        fid: fid_value,
        diversity,
        accuracy,
        providers: vec![features.configuration(), perceptual.configuration()],
    };
    write_json(&path, &report)?;
    let digest = short_digest(report.providers.join(";").as_bytes());
    manifest.push_stage(Stage::Metrics.name(), digest, &r.timestamp);
    write_manifest(manifest, manifest_path)?;
    Ok((StageSummary::completed(Stage::Metrics, kept.len()), report))
}

/// Run every stage. See [`run_until`] for partial runs.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    run_until(config, Stage::Metrics)
}

/// Run stages in order up to and including `last`, then write the report.
pub fn run_until(config: &PipelineConfig, last: Stage) -> Result<PipelineReport> {
    let r = resolve(config)?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;

    let manifest_path = config.out_dir.join(MANIFEST_FILE);
    let mut manifest = if manifest_path.exists() {
        let existing = read_manifest(&manifest_path)?;
        if existing.dataset_name != r.dataset.name {
            return Err(Error::Validation(format!(
                "manifest belongs to `{}`, config dataset is `{}`",
                existing.dataset_name, r.dataset.name
            )));
        }
        existing
    } else {
        AugmentationManifest::new(&r.dataset.name)
    };

    let mut stages = Vec::new();
    let mut planned = 0usize;
    let mut gen_summary = GenerateSummary::default();
    let mut train_epochs = 0usize;
    let mut metrics = None;

    let (summary, pool) = stage_prompts(config, &r, &mut manifest, &manifest_path)
        .map_err(|e| wrap_stage(Stage::Prompts, e))?;
    stages.push(summary);

    if last >= Stage::Edges {
        stages.push(
            stage_edges(config, &r, &mut manifest, &manifest_path)
                .map_err(|e| wrap_stage(Stage::Edges, e))?,
        );
    }

    let mut jobs = Vec::new();
    if last >= Stage::Plan {
        let (summary, planned_jobs) = stage_plan(config, &r, &pool, &mut manifest, &manifest_path)
            .map_err(|e| wrap_stage(Stage::Plan, e))?;
        stages.push(summary);
        jobs = planned_jobs;
        planned = jobs.len();
    }

    if last >= Stage::Generate {
        let (summary, next, gs) = stage_generate(config, &r, &jobs, manifest, &manifest_path)
            .map_err(|e| wrap_stage(Stage::Generate, e))?;
        stages.push(summary);
        manifest = next;
        gen_summary = gs;
    }

    if last >= Stage::Filter {
        let (summary, next) = stage_filter(config, &r, manifest, &manifest_path)
            .map_err(|e| wrap_stage(Stage::Filter, e))?;
        stages.push(summary);
        manifest = next;
    }

    if last >= Stage::Train {
        let (summary, next, epochs) = stage_train(config, &r, manifest, &manifest_path)
            .map_err(|e| wrap_stage(Stage::Train, e))?;
        stages.push(summary);
        manifest = next;
        train_epochs = epochs;
    }

    if last >= Stage::Metrics {
        let (summary, report) = stage_metrics(config, &r, &mut manifest, &manifest_path)
            .map_err(|e| wrap_stage(Stage::Metrics, e))?;
        stages.push(summary);
        metrics = Some(report);
    }

    let config_json = serde_json::to_vec(config)
        .map_err(|e| Error::parse(Path::new(REPORT_FILE), e))?;
    let report = PipelineReport {
        dataset_name: r.dataset.name.clone(),
        dataset_path: config.dataset.clone(),
        method: config.method,
        seed: config.seed,
        m: config.m,
        alpha: r.alpha,
        backend: match config.backend {
            BackendChoice::Mock => "mock".into(),
            BackendChoice::Http => {
                format!("http {}", r.endpoint.as_deref().unwrap_or_default())
            }
        },
        topk_enabled: r.filter.use_topk,
        config_digest: short_digest(&config_json),
        stages,
        planned,
        generated: manifest.records.len(),
        kept: manifest.count(crate::manifest::Verdict::Kept),
        dropped: manifest.count(crate::manifest::Verdict::Dropped),
        pending: manifest.count(crate::manifest::Verdict::Pending),
        failed: gen_summary.failed,
        epoch_slots: r.dataset.train_ids()?.len(),
        train_epochs,
        metrics,
    };
    write_json(&config.out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}
