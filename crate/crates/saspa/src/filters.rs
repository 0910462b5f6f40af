//! Fidelity filtering: semantic and sub-class verdicts for pending records.
//!
//! Filters are pure functions from score vectors to verdicts. Scores come
//! from injected scorers (a text-image similarity provider and a baseline
//! classifier); this module ships deterministic fakes so the whole pipeline
//! runs offline.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::manifest::{AugmentationManifest, AugmentationRecord, Verdict};

pub const DEFAULT_TOP_K: usize = 10;

pub const STAGE_SEMANTIC: &str = "semantic";
pub const STAGE_TOPK: &str = "topk_confidence";
pub const STAGE_ALIA: &str = "alia_threshold";
pub const STAGE_CLIP_LABEL: &str = "clip_label";

/// Records dropped because a scorer errored carry this reason.
pub const SCORER_ERROR_REASON: &str = "scorer_error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    TextImageSimilarity,
    ClassifierSoftmax,
}

/// Scores aligned to labels. Softmax vectors must be a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub labels: Vec<String>,
    pub scores: Vec<f64>,
    pub kind: ScoreKind,
}

impl ScoreVector {
    pub fn new(kind: ScoreKind, labels: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        let v = Self { labels, scores, kind };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Validation("empty score vector".into()));
        }
        if self.labels.len() != self.scores.len() {
            return Err(Error::DimensionMismatch {
                left: self.labels.len(),
                right: self.scores.len(),
            });
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Validation("non-finite score".into()));
        }
        if self.kind == ScoreKind::ClassifierSoftmax {
            if self.scores.iter().any(|&s| s < 0.0) {
                return Err(Error::Validation("negative softmax entry".into()));
            }
            let sum: f64 = self.scores.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "softmax sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    fn expect_kind(&self, expected: ScoreKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::WrongScoreKind {
                expected,
                got: self.kind,
            });
        }
        Ok(())
    }

    /// Index of the highest score; ties resolve to the lowest index.
    fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate().skip(1) {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    /// 1-based rank of `label` by descending score; equal scores rank by
    /// ascending index, so an earlier tying label outranks a later one.
    fn rank(&self, label: usize) -> usize {
        let target = self.scores[label];
        let mut rank = 1;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > target || (s == target && i < label) {
                rank += 1;
            }
        }
        rank
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterVerdict {
    pub aug_id: String,
    pub keep: bool,
    pub stage: &'static str,
    /// Non-empty whenever `keep` is false.
    pub reason: String,
}

impl FilterVerdict {
    fn keep(stage: &'static str) -> Self {
        Self {
            aug_id: String::new(),
            keep: true,
            stage,
            reason: String::new(),
        }
    }

    fn drop(stage: &'static str, reason: String) -> Self {
        debug_assert!(!reason.is_empty());
        Self {
            aug_id: String::new(),
            keep: false,
            stage,
            reason,
        }
    }
}

/// Per-class confidence thresholds for the ALIA-style filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    thresholds: BTreeMap<String, f64>,
}

impl ClassThresholds {
    pub fn new(thresholds: BTreeMap<String, f64>) -> Result<Self> {
        for (class, t) in &thresholds {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Validation(format!(
                    "threshold {t} for class `{class}` outside [0, 1]"
                )));
            }
        }
        Ok(Self { thresholds })
    }

    pub fn get(&self, class: &str) -> Option<f64> {
        self.thresholds.get(class).copied()
    }
}

/// The fixed semantic prompt battery. Index 0 is the meta prompt; the
/// article is not adjusted for vowel-initial meta-classes.
pub fn semantic_prompt_set(meta_class: &str) -> Result<Vec<String>> {
    if meta_class.is_empty() {
        return Err(Error::Precondition("empty meta-class".into()));
    }
    Ok(vec![
        format!("a photo of a {}", meta_class.to_lowercase()),
        "a photo of an object".into(),
        "a photo of a scene".into(),
        "a photo".into(),
        "a black photo".into(),
    ])
}

/// Keep iff the meta prompt (label 0) wins the similarity comparison.
pub fn semantic_filter(s: &ScoreVector) -> Result<FilterVerdict> {
    s.validate()?;
    s.expect_kind(ScoreKind::TextImageSimilarity)?;
    let best = s.argmax();
    Ok(if best == 0 {
        FilterVerdict::keep(STAGE_SEMANTIC)
    } else {
        FilterVerdict::drop(
            STAGE_SEMANTIC,
            format!("semantic_argmax={}", s.labels[best]),
        )
    })
}

/// Keep iff the true label ranks within the top k classifier predictions.
pub fn topk_confidence_filter(s: &ScoreVector, true_label: usize, k: usize) -> Result<FilterVerdict> {
    s.validate()?;
    s.expect_kind(ScoreKind::ClassifierSoftmax)?;
    if true_label >= s.labels.len() {
        return Err(Error::LabelOutOfRange {
            index: true_label,
            len: s.labels.len(),
        });
    }
    if k == 0 || k > s.labels.len() {
        return Err(Error::Validation(format!(
            "k={k} outside 1..={}",
            s.labels.len()
        )));
    }
    let rank = s.rank(true_label);
    Ok(if rank <= k {
        FilterVerdict::keep(STAGE_TOPK)
    } else {
        FilterVerdict::drop(STAGE_TOPK, format!("true_rank={rank}>k={k}"))
    })
}

/// Per-class mean of correct-label softmax scores over the training set.
pub fn compute_class_thresholds<S: AsRef<str>>(
    train_confidences: &[(S, f64)],
) -> Result<ClassThresholds> {
    if train_confidences.is_empty() {
        return Err(Error::Precondition("no training confidences".into()));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (class, score) in train_confidences {
        if !(0.0..=1.0).contains(score) {
            return Err(Error::Validation(format!(
                "softmax score {score} outside [0, 1]"
            )));
        }
        let entry = sums.entry(class.as_ref().to_string()).or_insert((0.0, 0));
        entry.0 += score;
        entry.1 += 1;
    }
    ClassThresholds::new(
        sums.into_iter()
            .map(|(class, (sum, n))| (class, sum / n as f64))
            .collect(),
    )
}

/// Drop iff the predicted class's confidence meets its threshold. The
/// boundary case drops, and the predicted class is used whether or not it
/// matches the true label: confident-correct is redundant, confident-wrong
/// is drift.
pub fn alia_threshold_filter(
    s: &ScoreVector,
    true_label: usize,
    t: &ClassThresholds,
) -> Result<FilterVerdict> {
    s.validate()?;
    s.expect_kind(ScoreKind::ClassifierSoftmax)?;
    if true_label >= s.labels.len() {
        return Err(Error::LabelOutOfRange {
            index: true_label,
            len: s.labels.len(),
        });
    }
    let predicted = s.argmax();
    let class = &s.labels[predicted];
    let threshold = t.get(class).ok_or_else(|| Error::MissingThreshold {
        class: class.clone(),
    })?;
    Ok(if s.scores[predicted] >= threshold {
        FilterVerdict::drop(STAGE_ALIA, format!("confidence>=t[{class}]"))
    } else {
        FilterVerdict::keep(STAGE_ALIA)
    })
}

/// Keep iff the true label wins the similarity comparison over all
/// sub-class label texts; exact ties keep.
pub fn clip_label_filter(s: &ScoreVector, true_label: usize) -> Result<FilterVerdict> {
    s.validate()?;
    s.expect_kind(ScoreKind::TextImageSimilarity)?;
    if true_label >= s.labels.len() {
        return Err(Error::LabelOutOfRange {
            index: true_label,
            len: s.labels.len(),
        });
    }
    let best = s.argmax();
    Ok(if s.scores[true_label] >= s.scores[best] {
        FilterVerdict::keep(STAGE_CLIP_LABEL)
    } else {
        FilterVerdict::drop(
            STAGE_CLIP_LABEL,
            format!("clip_argmax={}", s.labels[best]),
        )
    })
}

/// Which sub-class filter runs after (or instead of) top-k confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlternativeFilter {
    #[default]
    None,
    Alia,
    ClipLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub use_semantic: bool,
    pub use_topk: bool,
    pub k: usize,
    #[serde(default)]
    pub alternative: AlternativeFilter,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            use_semantic: true,
            use_topk: true,
            k: DEFAULT_TOP_K,
            alternative: AlternativeFilter::None,
        }
    }
}

/// Provides the two kinds of scores the filters consume.
pub trait FilterScorer: Sync {
    /// Text-image similarity of the augmentation against arbitrary texts.
    fn similarity(&self, record: &AugmentationRecord, texts: &[String]) -> Result<ScoreVector>;

    /// Baseline-classifier softmax over the dataset's sub-classes.
    fn softmax(&self, record: &AugmentationRecord) -> Result<ScoreVector>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub dropped: usize,
    /// Scorer failures, counted apart from filter-decided drops.
    pub scorer_errors: usize,
    pub reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterReport {
    /// Pending records before this pass.
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    pub drop_fraction: f64,
    pub per_stage: Vec<StageReport>,
}

/// Run the configured filters over every pending record, cheapest first:
/// semantic, then top-k confidence, then the alternative sub-class filter.
/// A record's first drop is final; later stages never re-score it.
pub fn apply_filter_pipeline(
    mut manifest: AugmentationManifest,
    d: &DatasetDescriptor,
    scorer: &dyn FilterScorer,
    config: &FilterConfig,
    thresholds: Option<&ClassThresholds>,
) -> Result<(AugmentationManifest, FilterReport)> {
    if config.use_topk && (config.k == 0 || config.k > d.sub_classes.len()) {
        return Err(Error::Validation(format!(
            "k={} outside 1..={}",
            config.k,
            d.sub_classes.len()
        )));
    }
    if config.alternative == AlternativeFilter::Alia && thresholds.is_none() {
        return Err(Error::Validation(
            "alia filter requires class thresholds".into(),
        ));
    }
    let semantic_prompts = semantic_prompt_set(&d.meta_class)?;
    let label_texts = d.sub_classes.clone();

    let mut stages: Vec<StageReport> = Vec::new();
    let mut stage_index: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut active: Vec<&'static str> = Vec::new();
    if config.use_semantic {
        active.push(STAGE_SEMANTIC);
    }
    if config.use_topk {
        active.push(STAGE_TOPK);
    }
    match config.alternative {
        AlternativeFilter::None => {}
        AlternativeFilter::Alia => active.push(STAGE_ALIA),
        AlternativeFilter::ClipLabel => active.push(STAGE_CLIP_LABEL),
    }
    for &name in &active {
        stage_index.insert(name, stages.len());
        stages.push(StageReport {
            name: name.to_string(),
            dropped: 0,
            scorer_errors: 0,
            reasons: BTreeMap::new(),
        });
    }

    let mut total = 0;
    let mut kept = 0;
    let mut dropped = 0;
    for record in &mut manifest.records {
        if record.verdict != Verdict::Pending {
            continue;
        }
        total += 1;
        let true_label = d
            .sub_class_index(&record.sub_class)
            .ok_or_else(|| Error::UnknownClass {
                class: record.sub_class.clone(),
            })?;

        let mut decision: Option<(&'static str, String, bool)> = None;
        for &stage in &active {
            let verdict = match stage {
                STAGE_SEMANTIC => scorer
                    .similarity(record, &semantic_prompts)
                    .and_then(|s| semantic_filter(&s)),
                STAGE_TOPK => scorer
                    .softmax(record)
                    .and_then(|s| topk_confidence_filter(&s, true_label, config.k)),
                STAGE_ALIA => scorer.softmax(record).and_then(|s| {
                    alia_threshold_filter(&s, true_label, thresholds.expect("checked above"))
                }),
                STAGE_CLIP_LABEL => scorer
                    .similarity(record, &label_texts)
                    .and_then(|s| clip_label_filter(&s, true_label)),
                _ => unreachable!(),
            };
            match verdict {
                Ok(v) if v.keep => continue,
                Ok(v) => {
                    decision = Some((stage, v.reason, false));
                    break;
                }
                Err(_) => {
                    decision = Some((stage, SCORER_ERROR_REASON.to_string(), true));
                    break;
                }
            }
        }
        match decision {
            None => {
                record.verdict = Verdict::Kept;
                kept += 1;
            }
            Some((stage, reason, scorer_error)) => {
                record.verdict = Verdict::Dropped;
                record.drop_reason = Some(reason.clone());
                dropped += 1;
                let report = &mut stages[stage_index[stage]];
                if scorer_error {
                    report.scorer_errors += 1;
                } else {
                    report.dropped += 1;
                    *report.reasons.entry(reason).or_insert(0) += 1;
                }
            }
        }
    }

    let report = FilterReport {
        total,
        kept,
        dropped,
        drop_fraction: if total == 0 {
            0.0
        } else {
            dropped as f64 / total as f64
        },
        per_stage: stages,
    };
    debug_assert_eq!(report.kept + report.dropped, report.total);
    Ok((manifest, report))
}

/// Scorer that keeps everything: the meta prompt wins similarity, the true
/// class wins the softmax.
pub struct KeepAllScorer {
    sub_classes: Vec<String>,
}

impl KeepAllScorer {
    pub fn new(d: &DatasetDescriptor) -> Self {
        Self {
            sub_classes: d.sub_classes.clone(),
        }
    }
}

impl FilterScorer for KeepAllScorer {
    fn similarity(&self, record: &AugmentationRecord, texts: &[String]) -> Result<ScoreVector> {
        let favored = texts
            .iter()
            .position(|t| *t == record.sub_class)
            .unwrap_or(0);
        let scores = (0..texts.len())
            .map(|i| if i == favored { 0.9 } else { 0.1 })
            .collect();
        ScoreVector::new(ScoreKind::TextImageSimilarity, texts.to_vec(), scores)
    }

    fn softmax(&self, record: &AugmentationRecord) -> Result<ScoreVector> {
        let n = self.sub_classes.len();
        let favored = self
            .sub_classes
            .iter()
            .position(|c| *c == record.sub_class)
            .ok_or_else(|| Error::UnknownClass {
                class: record.sub_class.clone(),
            })?;
        let rest = if n == 1 { 0.0 } else { 0.2 / (n - 1) as f64 };
        let scores = (0..n)
            .map(|i| if i == favored { 0.8 + if n == 1 { 0.2 } else { 0.0 } } else { rest })
            .collect();
        ScoreVector::new(ScoreKind::ClassifierSoftmax, self.sub_classes.clone(), scores)
    }
}

/// Scripted scorer for tests and dry runs: explicit score rows per aug_id,
/// optional scripted failures, keep-all behavior otherwise.
#[derive(Default)]
pub struct TableScorer {
    /// aug_id → similarity scores; applied when the length matches the
    /// requested text set.
    pub similarity: HashMap<String, Vec<f64>>,
    /// aug_id → softmax scores over the sub-classes.
    pub softmax: HashMap<String, Vec<f64>>,
    /// aug_ids whose scoring fails outright.
    pub failures: HashSet<String>,
    pub sub_classes: Vec<String>,
}

impl TableScorer {
    pub fn new(d: &DatasetDescriptor) -> Self {
        Self {
            sub_classes: d.sub_classes.clone(),
            ..Self::default()
        }
    }
}

impl FilterScorer for TableScorer {
    fn similarity(&self, record: &AugmentationRecord, texts: &[String]) -> Result<ScoreVector> {
        if self.failures.contains(&record.aug_id) {
            return Err(Error::Validation("scripted scorer failure".into()));
        }
        match self.similarity.get(&record.aug_id) {
            Some(scores) if scores.len() == texts.len() => {
                ScoreVector::new(ScoreKind::TextImageSimilarity, texts.to_vec(), scores.clone())
            }
            _ => KeepAllScorer { sub_classes: self.sub_classes.clone() }.similarity(record, texts),
        }
    }

    fn softmax(&self, record: &AugmentationRecord) -> Result<ScoreVector> {
        if self.failures.contains(&record.aug_id) {
            return Err(Error::Validation("scripted scorer failure".into()));
        }
        match self.softmax.get(&record.aug_id) {
            Some(scores) => ScoreVector::new(
                ScoreKind::ClassifierSoftmax,
                self.sub_classes.clone(),
                scores.clone(),
            ),
            None => KeepAllScorer { sub_classes: self.sub_classes.clone() }.softmax(record),
        }
    }
}

/// Deterministic pseudo-random scorer: scores derive from a hash of the
/// aug_id and the text set, so reruns agree and drop fractions are
/// non-trivial without any model.
pub struct HashScorer {
    sub_classes: Vec<String>,
    seed: u64,
}

impl HashScorer {
    pub fn new(d: &DatasetDescriptor, seed: u64) -> Self {
        Self {
            sub_classes: d.sub_classes.clone(),
            seed,
        }
    }

    fn rng(&self, aug_id: &str, salt: &str) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(aug_id.as_bytes());
        hasher.update([0]);
        hasher.update(salt.as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }
}

impl FilterScorer for HashScorer {
    fn similarity(&self, record: &AugmentationRecord, texts: &[String]) -> Result<ScoreVector> {
        use rand::Rng;
        let mut rng = self.rng(&record.aug_id, &texts.join("\x1f"));
        // bias toward the first text so most records survive semantic checks
        let scores = (0..texts.len())
            .map(|i| {
                let base: f64 = rng.random_range(0.0..1.0);
                if i == 0 { base + 0.5 } else { base }
            })
            .collect();
        ScoreVector::new(ScoreKind::TextImageSimilarity, texts.to_vec(), scores)
    }

    fn softmax(&self, record: &AugmentationRecord) -> Result<ScoreVector> {
        use rand::Rng;
        let mut rng = self.rng(&record.aug_id, "softmax");
        let mut scores: Vec<f64> = (0..self.sub_classes.len())
            .map(|_| rng.random_range(0.0_f64..1.0))
            .collect();
        if let Some(i) = self.sub_classes.iter().position(|c| *c == record.sub_class) {
            scores[i] += 1.0;
        }
        let sum: f64 = scores.iter().sum();
        for s in &mut scores {
            *s /= sum;
        }
        ScoreVector::new(ScoreKind::ClassifierSoftmax, self.sub_classes.clone(), scores)
    }
}
