//! Generative data augmentation pipeline for fine-grained visual
//! classification.
//!
//! The crate plans conditioned image-generation jobs from a labeled dataset,
//! executes them against pluggable diffusion backends, filters the results
//! for meta-class and sub-class fidelity, and feeds the survivors into
//! training through a probabilistic replacement sampler. Diversity and
//! fidelity metrics round out the evaluation side.
//!
//! The stages compose in this order:
//!
//! ```text
//! prompts -> edges -> plan -> generate -> filter -> train -> metrics
//! ```
//!
//! Each stage is usable on its own; [`pipeline::run_pipeline`] wires them into
//! a resumable end-to-end run driven by a single config file. The
//! `examples/` directory contains one runnable program per stage, and the
//! `saspa` binary exposes the same stages as subcommands.
//!
//! No diffusion model, CLIP, or classifier ships with the crate: generation
//! backends, similarity/softmax scorers, feature extractors, and perceptual
//! distances are all injected interfaces with deterministic offline
//! implementations for development and testing.

pub mod dataset;
pub mod edges;
pub mod error;
pub mod filters;
pub mod fixtures;
pub mod generation;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod training;

pub use dataset::{DatasetDescriptor, ImageRecord};
pub use error::{Error, Result};
pub use manifest::{AugmentationManifest, AugmentationRecord, Verdict};

pub(crate) mod util {
    /// One step of the splitmix64 sequence; used to derive independent
    /// sub-seeds from a root seed plus a counter.
    pub fn mix_seed(seed: u64, counter: u64) -> u64 {
        let mut z = seed
            .wrapping_add(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Hex digest of `bytes`, truncated to 16 characters. Stable across runs
    /// and platforms; used for record ids and parameter digests.
    pub fn short_digest(bytes: &[u8]) -> String {
        use sha2::{Digest, Sha256};
        let full = Sha256::digest(bytes);
        hex::encode(&full[..8])
    }

}
