//! Trains briefly, then tabulates how much each sub-network contributes to
//! classification and localization.
//!
//! Usage: `cargo run --release --example contributions -- [ITERATIONS]`

use ban::commands::{contribution_report, train_detector};
use ban::config::{RunConfig, Split};
use ban::data::generate_samples;

fn main() -> ban::Result<()> {
    let iterations = std::env::args().nth(1).unwrap_or_else(|| "200".into());
    let mut cfg = RunConfig::default();
    cfg.set("iterations", &iterations)?;
    cfg.set("num_train_images", "100")?;
    cfg.set("analysis_images", "20")?;
    let train = generate_samples(&cfg.synthetic(Split::Train)?)?;
    let test = generate_samples(&cfg.synthetic(Split::Test)?)?;
    let detector = train_detector(&cfg, &train)?;
    let report = contribution_report(&cfg, &detector, &test)?;
    println!("classification\n{}", report.classification_csv());
    println!("localization\n{}", report.localization_csv());
    Ok(())
}
