//! The α-replacement sampler and per-dataset training policy defaults.
//!
//! Augmentations never grow the epoch: each real sample is independently
//! replaced by one of its kept augmentations with probability α, keeping
//! every epoch exactly |train| samples long.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetDescriptor;
use crate::error::{Error, Result};
use crate::manifest::AugmentationManifest;
use crate::util::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPolicy {
    /// Per-epoch probability that a train sample is replaced.
    pub alpha: f64,
    /// Augmentations generated per real image; informational for sampling.
    pub m: usize,
    pub seed: u64,
}

impl ReplacementPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::Validation(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSource {
    Real,
    Synthetic,
}

/// One training slot: a real image id or a kept augmentation's aug_id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSlot {
    pub slot_index: usize,
    pub source: SlotSource,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch: usize,
    pub slots: Vec<EpochSlot>,
}

impl EpochPlan {
    pub fn synthetic_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.source == SlotSource::Synthetic)
            .count()
    }

    pub fn synthetic_fraction(&self) -> f64 {
        if self.slots.is_empty() {
            0.0
        } else {
            self.synthetic_count() as f64 / self.slots.len() as f64
        }
    }
}

/// Build one epoch's slots. Per train image, an independent Bernoulli(α)
/// decides replacement; a replaced image contributes one of its kept
/// augmentations uniformly. Images with no kept augmentation stay real.
/// Fully determined by (policy.seed, epoch).
pub fn sample_epoch(
    d: &DatasetDescriptor,
    manifest: &AugmentationManifest,
    policy: &ReplacementPolicy,
    epoch: usize,
) -> Result<EpochPlan> {
    policy.validate()?;
    let train = d.train_ids()?;
    let mut kept_by_source: HashMap<&str, Vec<&str>> = HashMap::new();
    for record in manifest.kept() {
        kept_by_source
            .entry(record.source_image_id.as_str())
            .or_default()
            .push(record.aug_id.as_str());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(policy.seed, epoch as u64));
    let mut slots = Vec::with_capacity(train.len());
    for (slot_index, id) in train.iter().enumerate() {
        let replace = rng.random_range(0.0..1.0) < policy.alpha;
        let augs = kept_by_source.get(id.as_str());
        let slot = match augs {
            Some(augs) if replace && !augs.is_empty() => EpochSlot {
                slot_index,
                source: SlotSource::Synthetic,
                image_ref: augs[rng.random_range(0..augs.len())].to_string(),
            },
            _ => EpochSlot {
                slot_index,
                source: SlotSource::Real,
                image_ref: id.clone(),
            },
        };
        slots.push(slot);
    }
    debug_assert_eq!(slots.len(), train.len());
    Ok(EpochPlan { epoch, slots })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRegime {
    Full,
    FewShot,
    High,
}

impl std::str::FromStr for AlphaRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "few_shot" => Ok(Self::FewShot),
            "high" => Ok(Self::High),
            other => Err(Error::Validation(format!("unknown alpha regime `{other}`"))),
        }
    }
}

/// Default augmentation ratio per dataset and regime.
pub fn resolve_alpha(dataset_name: &str, regime: AlphaRegime) -> Result<f64> {
    let base = match registry_key(dataset_name) {
        Some("CUB") => 0.1,
        Some(_) => 0.4,
        None => {
            return Err(Error::UnknownDataset {
                name: dataset_name.to_string(),
            })
        }
    };
    Ok(match regime {
        AlphaRegime::Full => base,
        AlphaRegime::FewShot => 0.6,
        // +0.2 in exact tenths, so 0.4 maps to 0.6 rather than 0.6000...01
        AlphaRegime::High => (base * 10.0 + 2.0).round() / 10.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub optimizer: String,
    pub momentum: f64,
}

fn hp(batch_size: usize) -> Hyperparameters {
    Hyperparameters {
        learning_rate: 0.001,
        batch_size,
        weight_decay: 1e-5,
        epochs: 140,
        optimizer: "SGD".into(),
        momentum: 0.9,
    }
}

/// Tuned per-dataset training settings, in registry order.
pub fn hyperparameter_registry() -> Vec<(&'static str, Hyperparameters)> {
    vec![
        ("Aircraft", hp(4)),
        ("CompCars", hp(8)),
        ("Cars", hp(8)),
        ("CUB", hp(16)),
        ("DTD", hp(16)),
        ("Airbus vs. Boeing", hp(4)),
    ]
}

fn registry_key(dataset_name: &str) -> Option<&'static str> {
    hyperparameter_registry()
        .into_iter()
        .map(|(name, _)| name)
        .find(|name| name.eq_ignore_ascii_case(dataset_name))
}

pub fn default_hyperparameters(dataset_name: &str) -> Result<Hyperparameters> {
    hyperparameter_registry()
        .into_iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(dataset_name))
        .map(|(_, hp)| hp)
        .ok_or_else(|| Error::UnknownDataset {
            name: dataset_name.to_string(),
        })
}

/// Consumes one plan per epoch. The stop hook exists for experiments that
/// cut augmentation short; the default never stops.
pub trait TrainerCallback {
    fn name(&self) -> &str;

    /// Returned metrics, if any, land in the run log verbatim.
    fn train_epoch(&mut self, plan: &EpochPlan) -> Result<Option<serde_json::Value>>;

    /// Consulted after each epoch.
    fn should_stop(&self, _epoch: usize) -> bool {
        false
    }
}

/// Trainer that accepts every plan and reports nothing.
#[derive(Debug, Default)]
pub struct NullTrainer;

impl TrainerCallback for NullTrainer {
    fn name(&self) -> &str {
        "null"
    }

    fn train_epoch(&mut self, _plan: &EpochPlan) -> Result<Option<serde_json::Value>> {
        Ok(None)
    }
}

/// Trainer that tallies what it was given; useful in tests and dry runs.
#[derive(Debug, Default)]
pub struct CountingTrainer {
    pub epochs: usize,
    pub slots: usize,
    pub synthetic_slots: usize,
}

impl TrainerCallback for CountingTrainer {
    fn name(&self) -> &str {
        "counting"
    }

    fn train_epoch(&mut self, plan: &EpochPlan) -> Result<Option<serde_json::Value>> {
        self.epochs += 1;
        self.slots += plan.slots.len();
        self.synthetic_slots += plan.synthetic_count();
        Ok(Some(serde_json::json!({ "slots": plan.slots.len() })))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub epoch: usize,
    pub synthetic_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer_metrics: Option<serde_json::Value>,
}

/// Drive the trainer for `epochs` epochs (0-based), streaming one JSON line
/// per completed epoch to `sink`. A trainer failure aborts the run but the
/// lines already written stand, so partial runs remain inspectable.
pub fn run_training(
    d: &DatasetDescriptor,
    manifest: &AugmentationManifest,
    policy: &ReplacementPolicy,
    trainer: &mut dyn TrainerCallback,
    epochs: usize,
    sink: &mut dyn Write,
) -> Result<Vec<RunLogEntry>> {
    policy.validate()?;
    if manifest.dataset_name != d.name {
        return Err(Error::Validation(format!(
            "manifest belongs to `{}`, dataset is `{}`",
            manifest.dataset_name, d.name
        )));
    }
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let plan = sample_epoch(d, manifest, policy, epoch)?;
        let metrics = trainer.train_epoch(&plan).map_err(|e| Error::TrainerFailed {
            trainer: trainer.name().to_string(),
            epoch,
            message: e.to_string(),
        })?;
        let entry = RunLogEntry {
            epoch,
            synthetic_fraction: plan.synthetic_fraction(),
            trainer_metrics: metrics,
        };
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        sink.write_all(line.as_bytes())
            .and_then(|_| sink.write_all(b"\n"))
            .map_err(|e| Error::Validation(format!("failed to write run log: {e}")))?;
        log.push(entry);
        if trainer.should_stop(epoch) {
            break;
        }
    }
    Ok(log)
}
