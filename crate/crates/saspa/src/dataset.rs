//! Dataset descriptors, split surgery, and their persistence.
//!
//! A [`DatasetDescriptor`] is the unit the rest of the pipeline consumes: a
//! labeled image collection with one meta-class, an ordered list of
//! sub-classes, and named splits. Split operations (validation carve,
//! few-shot subset, contextual-bias restriction) are pure functions of the
//! descriptor plus a seed and return new descriptors.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRAIN: &str = "train";
pub const VAL: &str = "val";
pub const TEST: &str = "test";

/// One labeled image. `sub_class` indexes into the owning descriptor's
/// `sub_classes` list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// Image file location, relative to the descriptor file's directory.
    pub path: String,
    pub sub_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

/// A labeled image collection with meta-class, sub-classes, and named splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    /// Category encompassing every sub-class, e.g. "Airplane".
    pub meta_class: String,
    pub sub_classes: Vec<String>,
    /// Declared background-tag vocabulary (e.g. sky/grass/road). Images may
    /// carry a `background_tag` only when this is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_tags: Option<Vec<String>>,
    pub images: Vec<ImageRecord>,
    /// Split name -> image ids. `train`/`val`/`test` must be disjoint.
    pub splits: BTreeMap<String, Vec<String>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

impl DatasetDescriptor {
    /// Check every descriptor invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema {
                field: "name".into(),
                message: "must be non-empty".into(),
            });
        }
        if self.meta_class.is_empty() {
            return Err(Error::Schema {
                field: "meta_class".into(),
                message: "must be non-empty".into(),
            });
        }
        if self.sub_classes.is_empty() {
            return Err(Error::Schema {
                field: "sub_classes".into(),
                message: "must be non-empty".into(),
            });
        }
        let mut seen_classes = HashSet::new();
        for class in &self.sub_classes {
            if !seen_classes.insert(class.as_str()) {
                return Err(Error::Schema {
                    field: "sub_classes".into(),
                    message: format!("duplicate class `{class}`"),
                });
            }
        }

        let mut ids = HashSet::new();
        for image in &self.images {
            if !valid_id(&image.id) {
                return Err(Error::Schema {
                    field: format!("images[{}].id", image.id),
                    message: "ids must be non-empty and use [A-Za-z0-9._-] only".into(),
                });
            }
            if !ids.insert(image.id.as_str()) {
                return Err(Error::Schema {
                    field: "images".into(),
                    message: format!("duplicate image id `{}`", image.id),
                });
            }
            if image.sub_class >= self.sub_classes.len() {
                return Err(Error::Schema {
                    field: format!("images[{}].sub_class", image.id),
                    message: format!(
                        "index {} out of range for {} sub-classes",
                        image.sub_class,
                        self.sub_classes.len()
                    ),
                });
            }
            if let Some(tag) = &image.background_tag {
                match &self.background_tags {
                    None => {
                        return Err(Error::Schema {
                            field: format!("images[{}].background_tag", image.id),
                            message: "dataset declares no background_tags vocabulary".into(),
                        });
                    }
                    Some(vocab) if !vocab.contains(tag) => {
                        return Err(Error::Schema {
                            field: format!("images[{}].background_tag", image.id),
                            message: format!("tag `{tag}` not in declared vocabulary"),
                        });
                    }
                    Some(_) => {}
                }
            }
        }

        for (split, members) in &self.splits {
            for id in members {
                if !ids.contains(id.as_str()) {
                    return Err(Error::DanglingSplitId {
                        split: split.clone(),
                        id: id.clone(),
                    });
                }
            }
        }
        for (a, b) in [(TRAIN, VAL), (TRAIN, TEST), (VAL, TEST)] {
            let (sa, sb) = (self.split(a), self.split(b));
            let sa: HashSet<_> = sa.iter().map(String::as_str).collect();
            if let Some(id) = sb.iter().find(|id| sa.contains(id.as_str())) {
                return Err(Error::Schema {
                    field: format!("splits.{b}"),
                    message: format!("id `{id}` also appears in `{a}`"),
                });
            }
        }
        Ok(())
    }

    /// Members of a named split; missing splits read as empty.
    pub fn split(&self, name: &str) -> &[String] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn train_ids(&self) -> Result<&[String]> {
        match self.splits.get(TRAIN) {
            Some(ids) => Ok(ids),
            None => Err(Error::MissingSplit(TRAIN.into())),
        }
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|img| img.id == id)
    }

    /// id -> record map for repeated lookups.
    pub fn image_index(&self) -> HashMap<&str, &ImageRecord> {
        self.images.iter().map(|img| (img.id.as_str(), img)).collect()
    }

    pub fn sub_class_name(&self, index: usize) -> Result<&str> {
        self.sub_classes
            .get(index)
            .map(String::as_str)
            .ok_or(Error::LabelOutOfRange {
                index,
                len: self.sub_classes.len(),
            })
    }

    pub fn sub_class_index(&self, name: &str) -> Option<usize> {
        self.sub_classes.iter().position(|c| c == name)
    }

    /// Train ids grouped per sub-class, preserving train-split order.
    pub fn train_ids_by_class(&self) -> Result<Vec<Vec<&str>>> {
        let index = self.image_index();
        let mut groups: Vec<Vec<&str>> = vec![Vec::new(); self.sub_classes.len()];
        for id in self.train_ids()? {
            let record = index.get(id.as_str()).ok_or_else(|| Error::DanglingSplitId {
                split: TRAIN.into(),
                id: id.clone(),
            })?;
            groups[record.sub_class].push(record.id.as_str());
        }
        Ok(groups)
    }
}

/// Load a descriptor from a JSON file and validate every invariant.
pub fn load_dataset(descriptor_path: impl AsRef<Path>) -> Result<DatasetDescriptor> {
    let path = descriptor_path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let descriptor: DatasetDescriptor =
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e))?;
    descriptor.validate()?;
    Ok(descriptor)
}

/// Write a descriptor as pretty-printed JSON.
pub fn save_dataset(d: &DatasetDescriptor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(d).expect("descriptor serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Move `floor(fraction * n)` train images per sub-class into a new `val`
/// split. Deterministic under `seed`; the remainder stays in train.
pub fn carve_validation_split(
    d: &DatasetDescriptor,
    fraction: f64,
    seed: u64,
) -> Result<DatasetDescriptor> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "carve fraction must be in (0, 1), got {fraction}"
        )));
    }
    if !d.split(VAL).is_empty() {
        return Err(Error::ValSplitExists);
    }
    let groups = d.train_ids_by_class()?;
    for (class_index, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::ClassTooSmall {
                class: d.sub_classes[class_index].clone(),
                have: 0,
                need: 1,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moved: HashSet<&str> = HashSet::new();
    for group in &groups {
        let take = (fraction * group.len() as f64).floor() as usize;
        for chosen in rand::seq::index::sample(&mut rng, group.len(), take) {
            moved.insert(group[chosen]);
        }
    }

    let mut out = d.clone();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for id in d.train_ids()? {
        if moved.contains(id.as_str()) {
            val.push(id.clone());
        } else {
            train.push(id.clone());
        }
    }
    out.splits.insert(TRAIN.into(), train);
    out.splits.insert(VAL.into(), val);
    Ok(out)
}

/// Restrict the train split to exactly `shots` images per sub-class, sampled
/// without replacement. Deterministic under `seed`.
pub fn make_few_shot_subset(
    d: &DatasetDescriptor,
    shots: usize,
    seed: u64,
) -> Result<DatasetDescriptor> {
    if shots == 0 {
        return Err(Error::Precondition("shots must be >= 1".into()));
    }
    let groups = d.train_ids_by_class()?;
    for (class_index, group) in groups.iter().enumerate() {
        if group.len() < shots {
            return Err(Error::ClassTooSmall {
                class: d.sub_classes[class_index].clone(),
                have: group.len(),
                need: shots,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: HashSet<&str> = HashSet::new();
    for group in &groups {
        for chosen in rand::seq::index::sample(&mut rng, group.len(), shots) {
            keep.insert(group[chosen]);
        }
    }

    let mut out = d.clone();
    let train = d
        .train_ids()?
        .iter()
        .filter(|id| keep.contains(id.as_str()))
        .cloned()
        .collect();
    out.splits.insert(TRAIN.into(), train);
    Ok(out)
}

/// Restrict the train split to images whose background tag is allowed for
/// their class. Classes absent from `rules` keep all their images; val and
/// test splits are untouched. Returns the new descriptor plus one warning per
/// class left with zero train images.
pub fn make_contextual_bias_split(
    d: &DatasetDescriptor,
    rules: &BTreeMap<String, BTreeSet<String>>,
) -> Result<(DatasetDescriptor, Vec<String>)> {
    for class in rules.keys() {
        if d.sub_class_index(class).is_none() {
            return Err(Error::UnknownClass {
                class: class.clone(),
            });
        }
    }
    let index = d.image_index();
    let mut train = Vec::new();
    let mut kept_per_class = vec![0usize; d.sub_classes.len()];
    for id in d.train_ids()? {
        let record = index.get(id.as_str()).ok_or_else(|| Error::DanglingSplitId {
            split: TRAIN.into(),
            id: id.clone(),
        })?;
        let tag = record
            .background_tag
            .as_ref()
            .ok_or_else(|| Error::UntaggedImage { id: id.clone() })?;
        let class_name = &d.sub_classes[record.sub_class];
        let allowed = match rules.get(class_name) {
            Some(tags) => tags.contains(tag),
            None => true,
        };
        if allowed {
            kept_per_class[record.sub_class] += 1;
            train.push(id.clone());
        }
    }

    let mut warnings = Vec::new();
    for (class_index, kept) in kept_per_class.iter().enumerate() {
        let class_name = &d.sub_classes[class_index];
        if *kept == 0 && rules.contains_key(class_name) {
            warnings.push(format!("class `{class_name}` has zero train images left"));
        }
    }

    let mut out = d.clone();
    out.splits.insert(TRAIN.into(), train);
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_classes: usize, per_class: usize) -> DatasetDescriptor {
        let sub_classes: Vec<String> = (0..n_classes).map(|c| format!("class-{c}")).collect();
        let mut images = Vec::new();
        let mut train = Vec::new();
        for c in 0..n_classes {
            for i in 0..per_class {
                let id = format!("img_{c}_{i}");
                train.push(id.clone());
                images.push(ImageRecord {
                    id,
                    path: format!("images/img_{c}_{i}.png"),
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

    #[test]
    fn minimal_descriptor_is_valid() {
        let d = toy(1, 1);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn load_rejects_dangling_split_id() {
        let mut d = toy(1, 2);
        d.splits.get_mut(TRAIN).unwrap().push("x9".into());
        match d.validate() {
            Err(Error::DanglingSplitId { id, .. }) => assert_eq!(id, "x9"),
            other => panic!("expected dangling-id error, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_duplicate_classes_and_ids() {
        let mut d = toy(2, 1);
        d.sub_classes[1] = d.sub_classes[0].clone();
        assert!(matches!(d.validate(), Err(Error::Schema { field, .. }) if field == "sub_classes"));

        let mut d = toy(1, 2);
        let dup = d.images[0].clone();
        d.images.push(dup);
        assert!(matches!(d.validate(), Err(Error::Schema { .. })));
    }

    #[test]
    fn validate_rejects_overlapping_core_splits() {
        let mut d = toy(1, 2);
        d.splits.insert(TEST.into(), vec!["img_0_0".into()]);
        assert!(matches!(d.validate(), Err(Error::Schema { .. })));
    }

    #[test]
    fn validate_rejects_undeclared_background_tag() {
        let mut d = toy(1, 1);
        d.images[0].background_tag = Some("sky".into());
        assert!(matches!(d.validate(), Err(Error::Schema { .. })));
        d.background_tags = Some(vec!["sky".into()]);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn load_reports_missing_file_and_bad_schema() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.json");
        assert!(matches!(load_dataset(&missing), Err(Error::Io { .. })));

        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, r#"{"name": "x"}"#).unwrap();
        match load_dataset(&bad) {
            Err(Error::Parse { message, .. }) => {
                assert!(message.contains("meta_class"), "should name the field: {message}")
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_round_trips_through_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("descriptor.json");
        let d = toy(3, 4);
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d);
    }

    #[test]
    fn aircraft_sized_splits_load_intact() {
        // 3,334 / 3,333 / 3,333 split sizes survive a save/load cycle.
        let mut d = toy(1, 10_000);
        let ids: Vec<String> = d.images.iter().map(|i| i.id.clone()).collect();
        d.splits.insert(TRAIN.into(), ids[..3334].to_vec());
        d.splits.insert(VAL.into(), ids[3334..6667].to_vec());
        d.splits.insert(TEST.into(), ids[6667..10_000].to_vec());
        d.validate().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aircraft.json");
        save_dataset(&d, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.split(TRAIN).len(), 3334);
        assert_eq!(loaded.split(VAL).len(), 3333);
        assert_eq!(loaded.split(TEST).len(), 3333);
    }

    #[test]
    fn carve_moves_floor_fraction_per_class() {
        let d = toy(1, 100);
        let carved = carve_validation_split(&d, 0.33, 7).unwrap();
        assert_eq!(carved.split(TRAIN).len(), 67);
        assert_eq!(carved.split(VAL).len(), 33);
        let train: HashSet<_> = carved.split(TRAIN).iter().collect();
        assert!(carved.split(VAL).iter().all(|id| !train.contains(id)));
    }

    #[test]
    fn carve_floor_edge_keeps_tiny_classes_in_train() {
        let d = toy(1, 2);
        let carved = carve_validation_split(&d, 0.33, 1).unwrap();
        assert_eq!(carved.split(TRAIN).len(), 2);
        assert_eq!(carved.split(VAL).len(), 0);
    }

    #[test]
    fn carve_is_deterministic_and_stratified() {
        let d = toy(4, 10);
        let a = carve_validation_split(&d, 0.33, 99).unwrap();
        let b = carve_validation_split(&d, 0.33, 99).unwrap();
        assert_eq!(a, b);
        // floor(0.33 * 10) = 3 from every class
        let groups = a.train_ids_by_class().unwrap();
        assert!(groups.iter().all(|g| g.len() == 7));
        assert_ne!(a, carve_validation_split(&d, 0.33, 100).unwrap());
    }

    #[test]
    fn carve_rejects_existing_val_and_bad_fraction() {
        let mut d = toy(1, 10);
        d.splits.insert(VAL.into(), vec!["img_0_0".into()]);
        d.splits
            .insert(TRAIN.into(), d.split(TRAIN)[1..].to_vec());
        assert!(matches!(
            carve_validation_split(&d, 0.33, 0),
            Err(Error::ValSplitExists)
        ));
        let d = toy(1, 10);
        assert!(matches!(
            carve_validation_split(&d, 1.0, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn few_shot_takes_exactly_shots_per_class() {
        let d = toy(10, 12);
        let subset = make_few_shot_subset(&d, 4, 3).unwrap();
        assert_eq!(subset.split(TRAIN).len(), 40);
        let groups = subset.train_ids_by_class().unwrap();
        assert!(groups.iter().all(|g| g.len() == 4));
    }

    #[test]
    fn few_shot_with_full_class_size_is_identity_as_a_set() {
        let d = toy(2, 5);
        let subset = make_few_shot_subset(&d, 5, 11).unwrap();
        let before: HashSet<_> = d.split(TRAIN).iter().collect();
        let after: HashSet<_> = subset.split(TRAIN).iter().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn few_shot_insufficient_images_names_the_class() {
        let d = toy(2, 3);
        match make_few_shot_subset(&d, 5, 0) {
            Err(Error::ClassTooSmall { class, have, need }) => {
                assert_eq!(class, "class-0");
                assert_eq!((have, need), (3, 5));
            }
            other => panic!("expected class-too-small, got {other:?}"),
        }
    }

    #[test]
    fn few_shot_is_deterministic() {
        let d = toy(6, 9);
        assert_eq!(
            make_few_shot_subset(&d, 4, 21).unwrap(),
            make_few_shot_subset(&d, 4, 21).unwrap()
        );
    }

    fn tagged_planes() -> DatasetDescriptor {
        // Full tagged pool; the bias rules should cut it down to the
        // 98/0/70 + 129/112/0 train table (409 total).
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
            let class_index = sub_classes.iter().position(|c| c == class).unwrap();
            for i in 0..n {
                let id = format!("{}_{tag}_{i}", class.to_lowercase());
                train.push(id.clone());
                images.push(ImageRecord {
                    id,
                    path: "unused.png".into(),
                    sub_class: class_index,
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

    fn rules(pairs: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        pairs
            .iter()
            .map(|(class, tags)| {
                (
                    class.to_string(),
                    tags.iter().map(|t| t.to_string()).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn bias_split_reproduces_airbus_boeing_counts() {
        let d = tagged_planes();
        let rules = rules(&[("Airbus", &["sky", "road"]), ("Boeing", &["sky", "grass"])]);
        let (biased, warnings) = make_contextual_bias_split(&d, &rules).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(biased.split(TRAIN).len(), 409);

        let index = biased.image_index();
        let count = |class: &str, tag: &str| {
            biased
                .split(TRAIN)
                .iter()
                .filter(|id| {
                    let img = index[id.as_str()];
                    biased.sub_classes[img.sub_class] == class
                        && img.background_tag.as_deref() == Some(tag)
                })
                .count()
        };
        assert_eq!(count("Airbus", "sky"), 98);
        assert_eq!(count("Airbus", "road"), 70);
        assert_eq!(count("Airbus", "grass"), 0);
        assert_eq!(count("Boeing", "sky"), 129);
        assert_eq!(count("Boeing", "grass"), 112);
        assert_eq!(count("Boeing", "road"), 0);
    }

    #[test]
    fn bias_split_allowing_all_tags_is_identity() {
        let d = tagged_planes();
        let rules = rules(&[
            ("Airbus", &["sky", "grass", "road"]),
            ("Boeing", &["sky", "grass", "road"]),
        ]);
        let (biased, warnings) = make_contextual_bias_split(&d, &rules).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(biased.split(TRAIN), d.split(TRAIN));
    }

    #[test]
    fn bias_split_empty_allowed_set_warns() {
        let d = tagged_planes();
        let rules = rules(&[("Airbus", &[])]);
        let (biased, warnings) = make_contextual_bias_split(&d, &rules).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("Airbus"));
        // Boeing has no rule, so its images all survive.
        assert_eq!(biased.split(TRAIN).len(), 129 + 112 + 57);
    }

    #[test]
    fn bias_split_errors() {
        let d = tagged_planes();
        assert!(matches!(
            make_contextual_bias_split(&d, &rules(&[("Cessna", &["sky"])])),
            Err(Error::UnknownClass { .. })
        ));

        let mut untagged = d.clone();
        untagged.images[0].background_tag = None;
        match make_contextual_bias_split(&untagged, &rules(&[("Airbus", &["sky"])])) {
            Err(Error::UntaggedImage { id }) => assert_eq!(id, untagged.images[0].id),
            other => panic!("expected untagged-image error, got {other:?}"),
        }
    }

    #[test]
    fn bias_split_never_touches_other_splits_or_images() {
        let mut d = tagged_planes();
        let moved: Vec<String> = d.split(TRAIN)[..10].to_vec();
        let rest: Vec<String> = d.split(TRAIN)[10..].to_vec();
        d.splits.insert(TRAIN.into(), rest);
        d.splits.insert(VAL.into(), moved);
        let rules = rules(&[("Airbus", &["sky"]), ("Boeing", &["sky"])]);
        let (biased, _) = make_contextual_bias_split(&d, &rules).unwrap();
        assert_eq!(biased.split(VAL), d.split(VAL));
        assert_eq!(biased.images, d.images);
    }
}
