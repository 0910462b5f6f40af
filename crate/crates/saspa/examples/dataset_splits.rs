//! Carve validation and few-shot splits out of a dataset descriptor.

use saspa::dataset::{carve_validation_split, make_few_shot_subset, TRAIN, VAL};
use saspa::fixtures::toy_descriptor;

fn main() -> saspa::Result<()> {
    let d = toy_descriptor(4, 25);
    println!(
        "{}: {} sub-classes, {} train images",
        d.name,
        d.sub_classes.len(),
        d.split(TRAIN).len()
    );

    let with_val = carve_validation_split(&d, 0.2, 7)?;
    println!(
        "after carving 20%: train {} / val {}",
        with_val.split(TRAIN).len(),
        with_val.split(VAL).len()
    );

    for shots in [4, 8, 16] {
        let few = make_few_shot_subset(&d, shots, 7)?;
        println!(
            "{shots}-shot subset: {} train images ({} per class)",
            few.split(TRAIN).len(),
            shots
        );
    }

    // the same seed always carves the same split
    let again = carve_validation_split(&d, 0.2, 7)?;
    assert_eq!(again.split(VAL), with_val.split(VAL));
    println!("validation carve is deterministic under the seed");
    Ok(())
}
