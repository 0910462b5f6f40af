//! Generation planning and execution: jobs, backends, and the wire protocol.

mod backend;
mod executor;
mod params;
mod planner;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backend::{BackendInfo, FlakyBackend, GenerationBackend, GenerationRequest, MockBackend};
pub use executor::{execute_jobs, ExecutionReport, FsJobPreparer, JobFailure, JobPreparer};
pub use params::{strength, GenerationParams, ResolutionRule};
pub use planner::{plan_baseline_jobs, plan_saspa_jobs, plan_saspa_jobs_with, PlanOptions, DEFAULT_M};

/// Augmentation method a job asks a backend to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Saspa,
    SaspaNoSubject,
    Text2img,
    Img2img,
    EdgePlusImg2img,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Saspa,
        Method::SaspaNoSubject,
        Method::Text2img,
        Method::Img2img,
        Method::EdgePlusImg2img,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Saspa => "saspa",
            Method::SaspaNoSubject => "saspa_no_subject",
            Method::Text2img => "text2img",
            Method::Img2img => "img2img",
            Method::EdgePlusImg2img => "edge_plus_img2img",
        }
    }

    pub fn needs_edges(self) -> bool {
        matches!(
            self,
            Method::Saspa | Method::SaspaNoSubject | Method::EdgePlusImg2img
        )
    }

    pub fn needs_init_image(self) -> bool {
        matches!(self, Method::Img2img | Method::EdgePlusImg2img)
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, Method::Saspa)
    }

    pub fn needs_strength(self) -> bool {
        self.needs_init_image()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| crate::Error::Validation(format!("unknown method `{s}`")))
    }
}

/// One planned generation call. `source_image_id` is always the train image
/// the augmentation belongs to; whether the backend actually sees that image
/// (as edges or init) depends on the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: u64,
    pub method: Method,
    pub source_image_id: String,
    pub reference_image_id: Option<String>,
    pub prompt_text: String,
    pub sub_class: String,
    pub seed: u64,
    pub params: GenerationParams,
    /// (source subject, target subject); both equal the meta-class for saspa.
    pub subject_texts: Option<(String, String)>,
}

impl GenerationJob {
    /// Stable digest identifying this augmentation across runs; resuming an
    /// execution skips jobs whose aug_id already sits in the manifest.
    pub fn aug_id(&self) -> String {
        let key = serde_json::to_vec(&(
            &self.source_image_id,
            self.method.name(),
            &self.prompt_text,
            &self.reference_image_id,
            self.seed,
            self.params.digest(),
        ))
        .expect("aug key serializes");
        crate::util::short_digest(&key)
    }

    /// Image file name for this augmentation, relative to the output dir.
    pub fn output_name(&self) -> String {
        format!("{}.{}.png", self.source_image_id, self.aug_id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for method in Method::ALL {
            assert_eq!(method.name().parse::<Method>().unwrap(), method);
            let json = serde_json::to_string(&method).unwrap();
            assert_eq!(json, format!("\"{}\"", method.name()));
        }
        assert!("sdxl".parse::<Method>().is_err());
    }

    #[test]
    fn aug_id_distinguishes_every_field() {
        let base = GenerationJob {
            job_id: 0,
            method: Method::Saspa,
            source_image_id: "a".into(),
            reference_image_id: Some("b".into()),
            prompt_text: "p".into(),
            sub_class: "c".into(),
            seed: 1,
            params: GenerationParams::default(),
            subject_texts: None,
        };
        let mut ids = vec![base.aug_id()];
        for job in [
            GenerationJob { source_image_id: "a2".into(), ..base.clone() },
            GenerationJob { method: Method::SaspaNoSubject, ..base.clone() },
            GenerationJob { prompt_text: "q".into(), ..base.clone() },
            GenerationJob { reference_image_id: None, ..base.clone() },
            GenerationJob { seed: 2, ..base.clone() },
        ] {
            ids.push(job.aug_id());
        }
        let unique: std::collections::HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), ids.len());
        assert_eq!(base.aug_id(), base.aug_id());
        assert_eq!(base.aug_id().len(), 16);
    }
}
