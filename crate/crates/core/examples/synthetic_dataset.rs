//! Writes a small synthetic-shapes split and reads it back.
//!
//! Usage: `cargo run --example synthetic_dataset -- [OUT_DIR]`

use std::path::PathBuf;

use ban::data::{generate_dataset, Dataset, SyntheticSpec};

fn main() -> ban::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ban-shapes"), PathBuf::from);
    let spec = SyntheticSpec {
        num_images: 20,
        ..SyntheticSpec::default()
    };
    let manifest = generate_dataset(&spec, &out)?;
    println!(
        "{} images, {} objects in {}",
        manifest.image_ids.len(),
        manifest.num_objects,
        out.display()
    );
    let ds = Dataset::load(&out)?;
    let mut per_class = vec![0; ds.num_classes()];
    for o in ds.samples.iter().flat_map(|s| &s.objects) {
        per_class[o.class_id - 1] += 1;
    }
    for (name, n) in ds.class_names.iter().zip(per_class) {
        println!("{name:>9}: {n}");
    }
    Ok(())
}
