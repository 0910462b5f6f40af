//! Deterministic job planning: M augmentations per train image.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::prompts::{instantiate_prompt, PromptPool};
use crate::util::mix_seed;

use super::{GenerationJob, GenerationParams, Method};

/// Augmentations per real image.
pub const DEFAULT_M: usize = 2;

/// Sampling behavior knobs; the defaults match the documented plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOptions {
    /// Draw an image's M prompts independently, allowing repeats.
    pub prompt_with_replacement: bool,
    /// Draw references independently instead of cycling a per-image shuffle
    /// that avoids repeats until the eligible set is exhausted.
    pub reference_with_replacement: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            prompt_with_replacement: true,
            reference_with_replacement: false,
        }
    }
}

/// Plan edge-guided jobs with subject conditioning (or without, for the
/// no-subject ablation).
pub fn plan_saspa_jobs(
    d: &DatasetDescriptor,
    pool: &PromptPool,
    m: usize,
    seed: u64,
    use_subject: bool,
) -> Result<Vec<GenerationJob>> {
    plan_saspa_jobs_with(d, pool, m, seed, use_subject, &PlanOptions::default())
}

pub fn plan_saspa_jobs_with(
    d: &DatasetDescriptor,
    pool: &PromptPool,
    m: usize,
    seed: u64,
    use_subject: bool,
    options: &PlanOptions,
) -> Result<Vec<GenerationJob>> {
    let method = if use_subject {
        Method::Saspa
    } else {
        Method::SaspaNoSubject
    };
    plan_jobs(d, pool, m, seed, method, None, options)
}

/// Plan text2img / img2img / edge_plus_img2img baseline jobs.
pub fn plan_baseline_jobs(
    d: &DatasetDescriptor,
    pool: &PromptPool,
    m: usize,
    seed: u64,
    method: Method,
    strength: Option<f64>,
) -> Result<Vec<GenerationJob>> {
    match method {
        Method::Text2img => {
            if strength.is_some() {
                return Err(Error::Precondition("text2img takes no strength".into()));
            }
        }
        Method::Img2img | Method::EdgePlusImg2img => {
            if strength.is_none() {
                return Err(Error::Precondition(format!(
                    "method `{method}` requires a strength"
                )));
            }
        }
        Method::Saspa | Method::SaspaNoSubject => {
            return Err(Error::Precondition(format!(
                "`{method}` is not a baseline method; use plan_saspa_jobs"
            )));
        }
    }
    plan_jobs(d, pool, m, seed, method, strength, &PlanOptions::default())
}

fn plan_jobs(
    d: &DatasetDescriptor,
    pool: &PromptPool,
    m: usize,
    seed: u64,
    method: Method,
    strength: Option<f64>,
    options: &PlanOptions,
) -> Result<Vec<GenerationJob>> {
    if m == 0 {
        return Err(Error::Precondition("M must be >= 1".into()));
    }
    let train = d.train_ids()?;
    if train.is_empty() {
        return Err(Error::Precondition("train split is empty".into()));
    }
    pool.validate()?;
    if !pool.meta_class.eq_ignore_ascii_case(&d.meta_class) {
        return Err(Error::Validation(format!(
            "pool meta-class `{}` does not match dataset meta-class `{}`",
            pool.meta_class, d.meta_class
        )));
    }
    let mut params = GenerationParams::for_method(method);
    params.strength = strength;
    params.validate()?;

    let index = d.image_index();
    let groups = d.train_ids_by_class()?;
    let caption = pool.is_caption_pool();
    // independent streams: one for sampling choices, one for backend seeds
    let sample_seed = mix_seed(seed, 1);
    let job_seed_base = mix_seed(seed, 2);

    let mut jobs = Vec::with_capacity(train.len() * m);
    for (i, id) in train.iter().enumerate() {
        let record = index.get(id.as_str()).ok_or_else(|| Error::DanglingSplitId {
            split: crate::dataset::TRAIN.into(),
            id: id.clone(),
        })?;
        let class_name = &d.sub_classes[record.sub_class];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(sample_seed, i as u64));

        // draw order is fixed: prompts first, then references
        let prompt_indices: Vec<usize> = if caption {
            let position = pool
                .templates
                .iter()
                .position(|t| t.image_id.as_deref() == Some(id.as_str()))
                .ok_or_else(|| {
                    Error::Precondition(format!("caption pool has no template for image `{id}`"))
                })?;
            vec![position; m]
        } else if options.prompt_with_replacement {
            (0..m).map(|_| rng.random_range(0..pool.len())).collect()
        } else {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng);
            (0..m).map(|j| order[j % order.len()]).collect()
        };

        let references: Vec<Option<&str>> = if method.needs_reference() {
            let eligible: Vec<&str> = groups[record.sub_class]
                .iter()
                .copied()
                .filter(|other| *other != id.as_str())
                .collect();
            if eligible.is_empty() {
                // singleton sub-class: the only usable subject is the source
                vec![Some(id.as_str()); m]
            } else if options.reference_with_replacement {
                (0..m)
                    .map(|_| Some(eligible[rng.random_range(0..eligible.len())]))
                    .collect()
            } else {
                let mut order = eligible.clone();
                order.shuffle(&mut rng);
                (0..m).map(|j| Some(order[j % order.len()])).collect()
            }
        } else {
            vec![None; m]
        };

        for j in 0..m {
            let counter = (i * m + j) as u64;
            jobs.push(GenerationJob {
                job_id: counter,
                method,
                source_image_id: id.clone(),
                reference_image_id: references[j].map(String::from),
                prompt_text: instantiate_prompt(&pool.templates[prompt_indices[j]], class_name)?,
                sub_class: class_name.clone(),
                seed: mix_seed(job_seed_base, counter),
                params: params.clone(),
                subject_texts: (method == Method::Saspa)
                    .then(|| (d.meta_class.clone(), d.meta_class.clone())),
            });
        }
    }
    Ok(jobs)
}
