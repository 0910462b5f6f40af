//! Prompt pools: LLM instruction building, ingestion, styling, instantiation.
//!
//! A pool holds templates with a single `{}` subject slot. Ingestion rewrites
//! the meta-class term of each raw prompt into that slot so every
//! instantiated prompt names both the sub-class and the meta-class
//! ("An {} airplane ..." -> "An Boeing 767-200 airplane ..."). Grammatical
//! artifacts are intentionally left alone; generation is robust to them and
//! no quality control is applied over raw prompts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetDescriptor;
use crate::error::{Error, Result};

/// Subject slot marker inside template text.
pub const SLOT: &str = "{}";

/// Suffix prefix every artistic style shares.
pub const PAINTING_PREFIX: &str = ", a painting of ";

/// Artists drawn from when styling a pool.
pub const DEFAULT_ARTISTS: [&str; 3] = ["van Gogh", "Monet", "Picasso"];

/// Target pool size the instruction asks for.
pub const DEFAULT_POOL_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrigin {
    LlmPool,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Text containing exactly one [`SLOT`].
    pub raw_text: String,
    /// When present, begins with [`PAINTING_PREFIX`] and is appended after
    /// instantiation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artistic_suffix: Option<String>,
    pub origin: PromptOrigin,
    /// Caption templates belong to one image; the planner pairs them up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    pub meta_class: String,
    pub templates: Vec<PromptTemplate>,
    /// Fraction of templates carrying an artistic suffix.
    pub artistic_fraction: f64,
}

/// A raw prompt the ingester refused, with its input position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub index: usize,
    pub text: String,
    pub reason: String,
}

impl PromptPool {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn styled_count(&self) -> usize {
        self.templates
            .iter()
            .filter(|t| t.artistic_suffix.is_some())
            .count()
    }

    /// True when every template is an image caption.
    pub fn is_caption_pool(&self) -> bool {
        !self.templates.is_empty()
            && self
                .templates
                .iter()
                .all(|t| t.origin == PromptOrigin::Caption)
    }

    pub fn template_for_image(&self, image_id: &str) -> Option<&PromptTemplate> {
        self.templates
            .iter()
            .find(|t| t.image_id.as_deref() == Some(image_id))
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::EmptyPromptPool {
                meta_class: self.meta_class.clone(),
            });
        }
        for t in &self.templates {
            if t.raw_text.matches(SLOT).count() != 1 {
                return Err(Error::Validation(format!(
                    "template `{}` must contain exactly one `{SLOT}` slot",
                    t.raw_text
                )));
            }
            if let Some(suffix) = &t.artistic_suffix {
                if !suffix.starts_with(PAINTING_PREFIX) {
                    return Err(Error::Validation(format!(
                        "artistic suffix `{suffix}` must start with `{PAINTING_PREFIX}`"
                    )));
                }
            }
        }
        if self.artistic_fraction == 0.5 && self.styled_count() != self.templates.len() / 2 {
            return Err(Error::Validation(format!(
                "{} of {} templates styled, expected floor(n/2)",
                self.styled_count(),
                self.templates.len()
            )));
        }
        Ok(())
    }
}

/// The instruction sent to the prompt-writing LLM; byte-stable per input.
pub fn build_prompt_instruction(meta_class: &str) -> Result<String> {
    if meta_class.is_empty() {
        return Err(Error::Precondition("meta_class must be non-empty".into()));
    }
    Ok(format!(
        "Generate 100 prompts for the class {meta_class} to use in a text-to-image model. \
         Each prompt should:\n\
         - Include the word {meta_class} to ensure the image focuses on this object.\n\
         - Ensure diversity in each prompt by varying environmental settings, such as weather \
         and time of day. You can include subtle enhancements like vegetation or small objects \
         to add depth to the scene, ensuring these elements do not narrowly define the \
         {meta_class} beyond its broad classification.\n\
         - The prompts should meet the specified quantity requirement.\n"
    ))
}

/// Find the first case-insensitive occurrence of `needle` (byte range).
/// ASCII folding only: meta-class names are ASCII identifiers.
fn find_term(haystack: &str, needle: &str) -> Option<(usize, usize)> {
    let hay = haystack.to_ascii_lowercase();
    let needle = needle.to_ascii_lowercase();
    hay.find(&needle).map(|start| (start, start + needle.len()))
}

/// Build a pool from raw prompt lines. Each accepted prompt has its first
/// meta-class occurrence rewritten to `{} <meta-class-lowercase>`; prompts
/// that never mention the term are rejected and reported.
pub fn ingest_prompt_pool(
    raw_prompts: &[String],
    meta_class: &str,
) -> Result<(PromptPool, Vec<Rejection>)> {
    if raw_prompts.is_empty() {
        return Err(Error::Precondition("raw_prompts must be non-empty".into()));
    }
    if meta_class.is_empty() {
        return Err(Error::Precondition("meta_class must be non-empty".into()));
    }
    let lower = meta_class.to_ascii_lowercase();
    let mut templates = Vec::new();
    let mut rejections = Vec::new();
    for (index, raw) in raw_prompts.iter().enumerate() {
        match find_term(raw, meta_class) {
            Some((start, end)) => {
                let raw_text = format!("{}{SLOT} {lower}{}", &raw[..start], &raw[end..]);
                templates.push(PromptTemplate {
                    raw_text,
                    artistic_suffix: None,
                    origin: PromptOrigin::LlmPool,
                    image_id: None,
                });
            }
            None => rejections.push(Rejection {
                index,
                text: raw.clone(),
                reason: format!("does not contain the meta-class term `{meta_class}`"),
            }),
        }
    }
    if templates.is_empty() {
        return Err(Error::EmptyPromptPool {
            meta_class: meta_class.to_string(),
        });
    }
    Ok((
        PromptPool {
            meta_class: meta_class.to_string(),
            templates,
            artistic_fraction: 0.0,
        },
        rejections,
    ))
}

/// Give exactly floor(n/2) templates, chosen uniformly without replacement,
/// a ", a painting of <artist>" suffix. Deterministic under `seed`.
pub fn append_artistic_styles(
    pool: &PromptPool,
    artists: &[String],
    seed: u64,
) -> Result<PromptPool> {
    if artists.is_empty() {
        return Err(Error::Precondition("artists must be non-empty".into()));
    }
    if pool.styled_count() > 0 {
        return Err(Error::PoolAlreadyStyled);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pool.templates.len();
    let mut chosen = rand::seq::index::sample(&mut rng, n, n / 2).into_vec();
    chosen.sort_unstable();

    let mut out = pool.clone();
    for index in chosen {
        let artist = &artists[rng.random_range(0..artists.len())];
        out.templates[index].artistic_suffix = Some(format!("{PAINTING_PREFIX}{artist}"));
    }
    out.artistic_fraction = 0.5;
    Ok(out)
}

/// Substitute the sub-class into the slot; the artistic suffix, when
/// present, lands at the very end.
pub fn instantiate_prompt(t: &PromptTemplate, sub_class: &str) -> Result<String> {
    if sub_class.is_empty() {
        return Err(Error::Precondition("sub_class must be non-empty".into()));
    }
    let mut text = t.raw_text.replacen(SLOT, sub_class, 1);
    if let Some(suffix) = &t.artistic_suffix {
        text.push_str(suffix);
    }
    Ok(text)
}

/// One caption template per train image, keyed by image id so the planner
/// consumes exactly one prompt per real image.
pub fn caption_pool(d: &DatasetDescriptor) -> Result<PromptPool> {
    let index = d.image_index();
    let mut templates = Vec::new();
    for id in d.train_ids()? {
        let record = index.get(id.as_str()).ok_or_else(|| Error::DanglingSplitId {
            split: crate::dataset::TRAIN.into(),
            id: id.clone(),
        })?;
        let caption = record
            .caption
            .as_ref()
            .ok_or_else(|| Error::MissingCaption { id: id.clone() })?;
        templates.push(PromptTemplate {
            raw_text: format!("{SLOT}, {caption}"),
            artistic_suffix: None,
            origin: PromptOrigin::Caption,
            image_id: Some(id.clone()),
        });
    }
    if templates.is_empty() {
        return Err(Error::EmptyPromptPool {
            meta_class: d.meta_class.clone(),
        });
    }
    Ok(PromptPool {
        meta_class: d.meta_class.clone(),
        templates,
        artistic_fraction: 0.0,
    })
}

/// Read raw prompts from a line-delimited file, skipping blank lines.
pub fn load_prompt_lines(path: impl AsRef<std::path::Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn instruction_contains_the_three_bullets() {
        let text = build_prompt_instruction("Airplane").unwrap();
        assert!(text.contains("Generate 100 prompts for the class Airplane"));
        assert!(text.contains("Include the word Airplane"));
        assert_eq!(text.matches("\n- ").count() + usize::from(text.starts_with("- ")), 3);
        assert_eq!(text, build_prompt_instruction("Airplane").unwrap());
        assert!(build_prompt_instruction("").is_err());
    }

    #[test]
    fn ingest_rewrites_first_meta_occurrence() {
        let (pool, rejections) =
            ingest_prompt_pool(&strings(&["An airplane parked at dusk"]), "Airplane").unwrap();
        assert!(rejections.is_empty());
        assert_eq!(pool.templates[0].raw_text, "An {} airplane parked at dusk");
    }

    #[test]
    fn ingest_rejects_prompts_missing_the_term() {
        let (pool, rejections) =
            ingest_prompt_pool(&strings(&["A bird on a branch", "A cat"]), "Bird").unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(rejections.len(), 1);
        assert_eq!(rejections[0].index, 1);
        assert_eq!(rejections[0].text, "A cat");
    }

    #[test]
    fn ingest_preserves_input_order() {
        let raw = strings(&["car one", "A CAR two", "the car three"]);
        let (pool, _) = ingest_prompt_pool(&raw, "Car").unwrap();
        assert_eq!(pool.templates[0].raw_text, "{} car one");
        assert_eq!(pool.templates[1].raw_text, "A {} car two");
        assert_eq!(pool.templates[2].raw_text, "the {} car three");
    }

    #[test]
    fn ingest_error_cases() {
        assert!(matches!(
            ingest_prompt_pool(&[], "Car"),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            ingest_prompt_pool(&strings(&["no term here"]), "Car"),
            Err(Error::EmptyPromptPool { .. })
        ));
    }

    #[test]
    fn styling_marks_exactly_half_rounded_down() {
        let (pool, _) = ingest_prompt_pool(
            &strings(&["car a", "car b", "car c", "car d", "car e"]),
            "Car",
        )
        .unwrap();
        let artists = strings(&DEFAULT_ARTISTS);
        let styled = append_artistic_styles(&pool, &artists, 1).unwrap();
        assert_eq!(styled.styled_count(), 2);
        styled.validate().unwrap();
        for t in &styled.templates {
            if let Some(suffix) = &t.artistic_suffix {
                assert!(suffix.starts_with(PAINTING_PREFIX));
                let artist = &suffix[PAINTING_PREFIX.len()..];
                assert!(DEFAULT_ARTISTS.contains(&artist), "unexpected artist {artist}");
            }
        }
    }

    #[test]
    fn styling_single_template_pool_styles_none() {
        let (pool, _) = ingest_prompt_pool(&strings(&["car a"]), "Car").unwrap();
        let styled = append_artistic_styles(&pool, &strings(&DEFAULT_ARTISTS), 3).unwrap();
        assert_eq!(styled.styled_count(), 0);
    }

    #[test]
    fn styling_is_deterministic_and_rejects_double_styling() {
        let (pool, _) = ingest_prompt_pool(
            &strings(&["car a", "car b", "car c", "car d"]),
            "Car",
        )
        .unwrap();
        let artists = strings(&DEFAULT_ARTISTS);
        let a = append_artistic_styles(&pool, &artists, 7).unwrap();
        let b = append_artistic_styles(&pool, &artists, 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            append_artistic_styles(&a, &artists, 7),
            Err(Error::PoolAlreadyStyled)
        ));
        assert!(matches!(
            append_artistic_styles(&pool, &[], 7),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn instantiation_substitutes_and_appends_suffix_last() {
        let t = PromptTemplate {
            raw_text: "An {} airplane parked at dusk".into(),
            artistic_suffix: None,
            origin: PromptOrigin::LlmPool,
            image_id: None,
        };
        assert_eq!(
            instantiate_prompt(&t, "Boeing 767-200").unwrap(),
            "An Boeing 767-200 airplane parked at dusk"
        );

        let styled = PromptTemplate {
            artistic_suffix: Some(", a painting of Monet".into()),
            ..t.clone()
        };
        let text = instantiate_prompt(&styled, "Boeing 767-200").unwrap();
        assert!(text.ends_with(", a painting of Monet"));
        assert!(text.starts_with("An Boeing 767-200 airplane"));

        assert!(instantiate_prompt(&t, "").is_err());
    }

    #[test]
    fn instantiated_prompts_contain_subclass_exactly_once() {
        let raw = strings(&["airplane over water", "a red airplane", "AIRPLANE hangar shot"]);
        let (pool, _) = ingest_prompt_pool(&raw, "Airplane").unwrap();
        for t in &pool.templates {
            let text = instantiate_prompt(t, "Cessna 172").unwrap();
            assert_eq!(text.matches("Cessna 172").count(), 1, "{text}");
        }
    }

    #[test]
    fn caption_pool_is_keyed_per_image() {
        let mut d = crate::fixtures::toy_descriptor(2, 2);
        for img in &mut d.images {
            img.caption = Some(format!("a photo of {}", img.id));
        }
        let pool = caption_pool(&d).unwrap();
        assert_eq!(pool.len(), 4);
        assert!(pool.is_caption_pool());
        let t = pool.template_for_image("img_1_0").unwrap();
        assert_eq!(t.raw_text, "{}, a photo of img_1_0");
        assert_eq!(
            instantiate_prompt(t, "class-1").unwrap(),
            "class-1, a photo of img_1_0"
        );
    }

    #[test]
    fn caption_pool_missing_caption_names_the_image() {
        let mut d = crate::fixtures::toy_descriptor(1, 2);
        d.images[0].caption = Some("ok".into());
        match caption_pool(&d) {
            Err(Error::MissingCaption { id }) => assert_eq!(id, d.images[1].id),
            other => panic!("expected missing-caption error, got {other:?}"),
        }
    }

    #[test]
    fn prompt_lines_load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.txt");
        std::fs::write(&path, "first car\n\nsecond car\n").unwrap();
        assert_eq!(
            load_prompt_lines(&path).unwrap(),
            strings(&["first car", "second car"])
        );
    }
}
