//! Trains one detector per context set and prints mAP next to the reference
//! values.
//!
//! Usage: `cargo run --release --example ablation -- [ITERATIONS] [TRAIN_IMAGES]`

use ban::commands::{ablation_csv, run_ablation};
use ban::config::{RunConfig, Split};
use ban::data::generate_samples;
use ban::head::ContextSet;

fn main() -> ban::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().unwrap_or_else(|| "150".into());
    let images = args.next().unwrap_or_else(|| "100".into());
    let mut cfg = RunConfig::default();
    cfg.set("iterations", &iterations)?;
    cfg.set("num_train_images", &images)?;
    cfg.set("num_test_images", "30")?;
    cfg.validate()?;
    let train = generate_samples(&cfg.synthetic(Split::Train)?)?;
    let test = generate_samples(&cfg.synthetic(Split::Test)?)?;
    let rows = run_ablation(&cfg, &train, &test, &ContextSet::ablation_grid())?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
