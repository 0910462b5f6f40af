//! Sampler parameters and the resolution rules backends must honor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Translation strengths the evaluated methods run at.
pub mod strength {
    /// Real Guidance: stay close to the source image.
    pub const REAL_GUIDANCE: f64 = 0.15;
    /// SDEdit-style editing at medium strength.
    pub const SDEDIT: f64 = 0.5;
    /// Plain img2img as an alternative to edge guidance.
    pub const IMG2IMG: f64 = 0.5;
    /// img2img combined with edge guidance tolerates a higher strength.
    pub const EDGE_PLUS_IMG2IMG: f64 = 0.85;
}

/// How the output resolution follows from the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionRule {
    /// Scale so the shortest side is 512, preserving aspect ratio.
    ShortestSide512,
    /// Always 512x512; used by text2img, which has no source to scale from.
    Fixed512Square,
}

impl ResolutionRule {
    /// Output dimensions for a source of the given size.
    pub fn resolve(self, width: u32, height: u32) -> (u32, u32) {
        match self {
            ResolutionRule::ShortestSide512 => crate::edges::scaled_dimensions(width, height, 512),
            ResolutionRule::Fixed512Square => (512, 512),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub inference_steps: u32,
    pub guidance_scale: f64,
    pub conditioning_scale: f64,
    /// img2img-family only: how far generation departs from the init image.
    pub strength: Option<f64>,
    pub resolution_rule: ResolutionRule,
    pub sampler: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            inference_steps: 30,
            guidance_scale: 7.5,
            conditioning_scale: 0.75,
            strength: None,
            resolution_rule: ResolutionRule::ShortestSide512,
            sampler: "ddim".into(),
        }
    }
}

impl GenerationParams {
    /// Defaults adjusted for a method: text2img generates fixed squares.
    pub fn for_method(method: super::Method) -> Self {
        let mut params = Self::default();
        if method == super::Method::Text2img {
            params.resolution_rule = ResolutionRule::Fixed512Square;
        }
        params
    }

    pub fn validate(&self) -> Result<()> {
        if self.inference_steps == 0 {
            return Err(Error::Validation("inference_steps must be >= 1".into()));
        }
        for (name, value) in [
            ("guidance_scale", self.guidance_scale),
            ("conditioning_scale", self.conditioning_scale),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Validation(format!(
                    "{name} must be a finite non-negative number, got {value}"
                )));
            }
        }
        if let Some(s) = self.strength {
            if !(s.is_finite() && s > 0.0 && s <= 1.0) {
                return Err(Error::Validation(format!(
                    "strength must lie in (0, 1], got {s}"
                )));
            }
        }
        if self.sampler.is_empty() {
            return Err(Error::Validation("sampler must be non-empty".into()));
        }
        Ok(())
    }

    /// Short stable digest of every field, recorded in manifest records.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("params serialize");
        crate::util::short_digest(&bytes)
    }
}
