//! The augmentation manifest: a line-delimited ledger shared by every stage.
//!
//! One header line `{version, dataset_name, stage_log}` followed by one
//! record object per line. The manifest is append-only: stages add records
//! or flip `pending` verdicts and push a stage-log entry, they never rewrite
//! history silently.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::Method;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pending,
    Kept,
    Dropped,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pending => "pending",
            Verdict::Kept => "kept",
            Verdict::Dropped => "dropped",
        })
    }
}

/// One completed stage: what ran, with which parameters, when.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLogEntry {
    pub stage: String,
    pub params_digest: String,
    pub timestamp: String,
}

/// One generated augmentation. `output_path` is relative to the image
/// output directory so manifests stay byte-identical across machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub aug_id: String,
    pub source_image_id: String,
    pub sub_class: String,
    pub prompt_text: String,
    pub reference_image_id: Option<String>,
    pub method: Method,
    pub params_digest: String,
    pub seed: u64,
    pub output_path: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    dataset_name: String,
    #[serde(default)]
    stage_log: Vec<StageLogEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationManifest {
    pub version: u32,
    pub dataset_name: String,
    pub stage_log: Vec<StageLogEntry>,
    pub records: Vec<AugmentationRecord>,
}

impl AugmentationManifest {
    pub fn new(dataset_name: impl Into<String>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            dataset_name: dataset_name.into(),
            stage_log: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn push_stage(
        &mut self,
        stage: impl Into<String>,
        params_digest: impl Into<String>,
        timestamp: impl Into<String>,
    ) {
        self.stage_log.push(StageLogEntry {
            stage: stage.into(),
            params_digest: params_digest.into(),
            timestamp: timestamp.into(),
        });
    }

    pub fn contains(&self, aug_id: &str) -> bool {
        self.records.iter().any(|r| r.aug_id == aug_id)
    }

    pub fn record(&self, aug_id: &str) -> Option<&AugmentationRecord> {
        self.records.iter().find(|r| r.aug_id == aug_id)
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.records.iter().filter(|r| r.verdict == verdict).count()
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stage_log.iter().any(|e| e.stage == stage)
    }

    pub fn kept(&self) -> impl Iterator<Item = &AugmentationRecord> {
        self.records.iter().filter(|r| r.verdict == Verdict::Kept)
    }

    pub fn pending(&self) -> impl Iterator<Item = &AugmentationRecord> {
        self.records.iter().filter(|r| r.verdict == Verdict::Pending)
    }

    /// Duplicate aug_ids break resumability; reject them early.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::ManifestVersion {
                expected: MANIFEST_VERSION,
                found: self.version,
            });
        }
        let mut seen = HashSet::new();
        for record in &self.records {
            if !seen.insert(record.aug_id.as_str()) {
                return Err(Error::Schema {
                    field: "records".into(),
                    message: format!("duplicate aug_id `{}`", record.aug_id),
                });
            }
            if record.verdict == Verdict::Dropped && record.drop_reason.is_none() {
                return Err(Error::Schema {
                    field: format!("records[{}].drop_reason", record.aug_id),
                    message: "dropped records must carry a reason".into(),
                });
            }
        }
        Ok(())
    }
}

/// Write header + records, one JSON object per line.
pub fn write_manifest(m: &AugmentationManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    m.validate()?;
    let header = Header {
        version: m.version,
        dataset_name: m.dataset_name.clone(),
        stage_log: m.stage_log.clone(),
    };
    let mut out = Vec::new();
    let mut line = serde_json::to_vec(&header).expect("header serializes");
    out.append(&mut line);
    out.push(b'\n');
    for record in &m.records {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        out.append(&mut line);
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a manifest, reporting parse failures with their 1-based line number.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<AugmentationManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header_line) = lines.next().ok_or(Error::ManifestParse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let header: Header = serde_json::from_str(header_line).map_err(|e| Error::ManifestParse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.version != MANIFEST_VERSION {
        return Err(Error::ManifestVersion {
            expected: MANIFEST_VERSION,
            found: header.version,
        });
    }

    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (index, line) in lines {
        let record: AugmentationRecord =
            serde_json::from_str(line).map_err(|e| Error::ManifestParse {
                line: index + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(record.aug_id.clone()) {
            return Err(Error::ManifestParse {
                line: index + 1,
                message: format!("duplicate aug_id `{}`", record.aug_id),
            });
        }
        records.push(record);
    }
    Ok(AugmentationManifest {
        version: header.version,
        dataset_name: header.dataset_name,
        stage_log: header.stage_log,
        records,
    })
}
