//! Build the contextually biased planes split from background tags.

use std::collections::{BTreeMap, BTreeSet};

use saspa::dataset::{make_contextual_bias_split, TRAIN};
use saspa::fixtures::biased_planes_descriptor;

fn main() -> saspa::Result<()> {
    let full = biased_planes_descriptor();
    println!(
        "full pool: {} train images, tags {:?}",
        full.split(TRAIN).len(),
        full.background_tags.as_deref().unwrap_or_default()
    );

    // keep Airbus only on sky/road and Boeing only on sky/grass
    let rules: BTreeMap<String, BTreeSet<String>> = BTreeMap::from([
        (
            "Airbus".into(),
            BTreeSet::from(["sky".into(), "road".into()]),
        ),
        (
            "Boeing".into(),
            BTreeSet::from(["sky".into(), "grass".into()]),
        ),
    ]);
    let (biased, warnings) = make_contextual_bias_split(&full, &rules)?;
    assert!(warnings.is_empty());
    println!("biased split: {} train images", biased.split(TRAIN).len());

    let index = biased.image_index();
    for class in &biased.sub_classes {
        for tag in ["sky", "grass", "road"] {
            let n = biased
                .split(TRAIN)
                .iter()
                .filter(|id| {
                    let img = index[id.as_str()];
                    &biased.sub_classes[img.sub_class] == class
                        && img.background_tag.as_deref() == Some(tag)
                })
                .count();
            println!("  {class:<7} {tag:<6} {n:>4}");
        }
    }
    Ok(())
}
