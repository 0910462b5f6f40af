//! Deterministic toy datasets and canned prompt pools for offline runs.
//!
//! Nothing here touches the network. The prompt pools are checked-in
//! stand-ins for LLM output; the toy datasets are procedurally drawn PNGs
//! with enough structure that edge extraction finds something.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::dataset::{save_dataset, DatasetDescriptor, ImageRecord, TRAIN};
use crate::error::{Error, Result};
use crate::prompts::{ingest_prompt_pool, PromptPool};

const AIRPLANE_PROMPTS: &str = include_str!("../fixtures/prompts/airplane.txt");
const CAR_PROMPTS: &str = include_str!("../fixtures/prompts/car.txt");
const BIRD_PROMPTS: &str = include_str!("../fixtures/prompts/bird.txt");

/// Raw prompt lines for a built-in meta-class, if we ship one.
pub fn builtin_prompt_lines(meta_class: &str) -> Option<&'static str> {
    match meta_class.to_ascii_lowercase().as_str() {
        "airplane" => Some(AIRPLANE_PROMPTS),
        "car" => Some(CAR_PROMPTS),
        "bird" => Some(BIRD_PROMPTS),
        _ => None,
    }
}

/// Ingest the built-in 100-prompt pool for a meta-class.
pub fn builtin_pool(meta_class: &str) -> Result<PromptPool> {
    let lines = builtin_prompt_lines(meta_class).ok_or_else(|| Error::UnknownDataset {
        name: meta_class.to_string(),
    })?;
    let raw: Vec<String> = lines
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect();
    let (pool, rejections) = ingest_prompt_pool(&raw, meta_class)?;
    debug_assert!(rejections.is_empty(), "built-in pools always contain the term");
    Ok(pool)
}

/// Small canned pool for unit tests: `n` templates mentioning `meta_class`.
pub fn toy_pool(meta_class: &str, n: usize) -> PromptPool {
    let lower = meta_class.to_ascii_lowercase();
    let raw: Vec<String> = (0..n)
        .map(|k| format!("A {lower} in test setting {k}"))
        .collect();
    let (pool, _) = ingest_prompt_pool(&raw, meta_class).expect("toy prompts contain the term");
    pool
}

/// In-memory descriptor: `classes` sub-classes x `per_class` train images.
pub fn toy_descriptor(classes: usize, per_class: usize) -> DatasetDescriptor {
    let sub_classes: Vec<String> = (0..classes).map(|c| format!("class-{c}")).collect();
    let mut images = Vec::new();
    let mut train = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            let id = format!("img_{c}_{i}");
            train.push(id.clone());
            images.push(ImageRecord {
                path: format!("images/{id}.png"),
                id,
                sub_class: c,
                background_tag: None,
                caption: None,
            });
        }
    }
    DatasetDescriptor {
        name: "toy".into(),
        meta_class: "Airplane".into(),
        sub_classes,
        background_tags: None,
        images,
        splits: BTreeMap::from([(TRAIN.to_string(), train)]),
    }
}

/// The contextually biased two-class pool: tag counts chosen so restricting
/// Airbus to {sky, road} and Boeing to {sky, grass} leaves 409 train images.
pub fn biased_planes_descriptor() -> DatasetDescriptor {
    let counts = [
        ("Airbus", "sky", 98),
        ("Airbus", "grass", 33),
        ("Airbus", "road", 70),
        ("Boeing", "sky", 129),
        ("Boeing", "grass", 112),
        ("Boeing", "road", 57),
    ];
    let sub_classes = vec!["Airbus".to_string(), "Boeing".to_string()];
    let mut images = Vec::new();
    let mut train = Vec::new();
    for (class, tag, n) in counts {
        let sub_class = sub_classes.iter().position(|c| c == class).unwrap();
        for i in 0..n {
            let id = format!("{}_{tag}_{i}", class.to_lowercase());
            train.push(id.clone());
            images.push(ImageRecord {
                path: format!("images/{id}.png"),
                id,
                sub_class,
                background_tag: Some(tag.to_string()),
                caption: None,
            });
        }
    }
    DatasetDescriptor {
        name: "biased-planes".into(),
        meta_class: "Airplane".into(),
        sub_classes,
        background_tags: Some(vec!["sky".into(), "grass".into(), "road".into()]),
        images,
        splits: BTreeMap::from([(TRAIN.to_string(), train)]),
    }
}

#[derive(Debug, Clone)]
pub struct ToyDatasetOptions {
    pub classes: usize,
    pub per_class: usize,
    pub width: u32,
    pub height: u32,
    pub captioned: bool,
}

impl Default for ToyDatasetOptions {
    fn default() -> Self {
        Self {
            classes: 2,
            per_class: 5,
            width: 96,
            height: 72,
            captioned: false,
        }
    }
}

/// Deterministic test image: dark ground with a bright rounded box whose
/// position and size depend on (class, index), so every image has edges and
/// images differ across the dataset.
fn draw_toy_image(width: u32, height: u32, class: usize, index: usize) -> RgbImage {
    let ground = 30u8;
    let mut img = RgbImage::from_pixel(width, height, Rgb([ground, ground, ground]));
    let x0 = (10 + 7 * index as u32) % (width / 2);
    let y0 = (6 + 5 * class as u32) % (height / 2);
    let x1 = x0 + width / 3;
    let y1 = y0 + height / 3;
    let tone = 160 + ((class * 31 + index * 17) % 90) as u8;
    for y in y0..=y1.min(height - 1) {
        for x in x0..=x1.min(width - 1) {
            img.put_pixel(x, y, Rgb([tone, tone.wrapping_sub(20), ground + 90]));
        }
    }
    img
}

/// Write a descriptor plus its PNG images under `dir`; returns the
/// descriptor path. Layout: `dir/descriptor.json`, `dir/images/<id>.png`.
pub fn write_toy_dataset(dir: impl AsRef<Path>, options: &ToyDatasetOptions) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut descriptor = toy_descriptor(options.classes, options.per_class);
    if options.captioned {
        for img in &mut descriptor.images {
            img.caption = Some(format!("a studio photo of {}", img.id));
        }
    }
    for (position, record) in descriptor.images.iter().enumerate() {
        let class = record.sub_class;
        let index = position % options.per_class.max(1);
        let png = draw_toy_image(options.width, options.height, class, index);
        let path = dir.join(&record.path);
        png.save(&path)
            .map_err(|e| Error::parse(&path, format!("failed to encode: {e}")))?;
    }
    let descriptor_path = dir.join("descriptor.json");
    save_dataset(&descriptor, &descriptor_path)?;
    Ok(descriptor_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_pools_hold_one_hundred_templates() {
        for meta in ["Airplane", "Car", "Bird"] {
            let pool = builtin_pool(meta).unwrap();
            assert_eq!(pool.len(), 100, "{meta}");
            pool.validate().unwrap();
        }
        assert!(builtin_pool("Texture").is_err());
    }

    #[test]
    fn builtin_prompt_lines_are_unique() {
        for meta in ["airplane", "car", "bird"] {
            let lines: Vec<&str> = builtin_prompt_lines(meta)
                .unwrap()
                .lines()
                .filter(|l| !l.trim().is_empty())
                .collect();
            let unique: std::collections::HashSet<_> = lines.iter().collect();
            assert_eq!(unique.len(), lines.len(), "{meta} pool repeats a line");
        }
    }

    #[test]
    fn toy_dataset_writes_valid_descriptor_and_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_toy_dataset(dir.path(), &ToyDatasetOptions::default()).unwrap();
        let d = crate::dataset::load_dataset(&path).unwrap();
        assert_eq!(d.split(TRAIN).len(), 10);
        for record in &d.images {
            let img = image::open(dir.path().join(&record.path)).unwrap();
            assert_eq!((img.width(), img.height()), (96, 72));
        }
    }

    #[test]
    fn toy_images_are_deterministic_and_distinct() {
        let a = draw_toy_image(96, 72, 0, 1);
        let b = draw_toy_image(96, 72, 0, 1);
        assert_eq!(a.as_raw(), b.as_raw());
        let c = draw_toy_image(96, 72, 1, 1);
        assert_ne!(a.as_raw(), c.as_raw());
    }

    #[test]
    fn biased_planes_pool_has_the_documented_tag_counts() {
        let d = biased_planes_descriptor();
        d.validate().unwrap();
        assert_eq!(d.split(TRAIN).len(), 98 + 33 + 70 + 129 + 112 + 57);
    }
}
