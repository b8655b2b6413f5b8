//! Renders per-context local activation maps of one proposal as PPM heat maps.
//!
//! Usage: `cargo run --release --example local_activation -- [OUT_DIR]`

use std::path::PathBuf;

use ban::commands::{render_heatmap, train_detector};
use ban::config::{RunConfig, Split};
use ban::data::generate_samples;
use ban::head::local_activation_map;
use ban::tensor::Real;

fn main() -> ban::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ban-heatmaps"), PathBuf::from);
    std::fs::create_dir_all(&out)?;
    let mut cfg = RunConfig::default();
    cfg.set("iterations", "150")?;
    cfg.set("num_train_images", "100")?;
    let train = generate_samples(&cfg.synthetic(Split::Train)?)?;
    let test = generate_samples(&cfg.synthetic(Split::Test)?)?;
    let detector = train_detector(&cfg, &train)?;

    let sample = &test.samples[0];
    let object = sample.objects[0];
    let features = detector.features(&sample.tensor())?;
    let mut maps = Vec::new();
    for kind in detector.head.subnets() {
        let m = local_activation_map(
            &detector.params,
            &features,
            &object.bbox,
            kind,
            object.class_id,
            &detector.head,
            detector.spatial_scale(),
        )?;
        maps.push((kind, m));
    }
    let max_abs = maps.iter().flat_map(|(_, m)| m.data().iter().map(|v| v.abs())).fold(0.0, Real::max);
    for (kind, m) in &maps {
        let path = out.join(format!("{}.ppm", kind.slug()));
        render_heatmap(m, max_abs, 16)?.save(&path)?;
        println!("{:>5} mean {:+.4} -> {}", kind.table_name(), m.sum() / m.numel() as Real, path.display());
    }
    Ok(())
}
