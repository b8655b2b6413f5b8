//! Trains the full context-ensemble detector on synthetic shapes and reports
//! test mAP.
//!
//! Usage: `cargo run --release --example train_detector -- [ITERATIONS] [TRAIN_IMAGES]`
//!
//! Defaults run a short schedule. `2000 500` matches the desk-scale setup.

use std::time::Instant;

use ban::config::{RunConfig, Split};
use ban::data::generate_samples;
use ban::commands::evaluate;
use ban::model::Detector;
use ban::training::{smoothed_losses, train_with};

fn main() -> ban::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map_or(Ok(300), |s| s.parse()).expect("iterations");
    let images: usize = args.next().map_or(Ok(100), |s| s.parse()).expect("image count");

    let mut cfg = RunConfig::default();
    cfg.set("iterations", &iterations.to_string())?;
    cfg.set("num_train_images", &images.to_string())?;
    cfg.set("lr_schedule", &format!("{}:0.001", iterations * 7 / 10))?;
    cfg.validate()?;

    let train = generate_samples(&cfg.synthetic(Split::Train)?)?;
    let test = generate_samples(&cfg.synthetic(Split::Test)?)?;
    let detector = Detector::build(cfg.backbone()?, cfg.ban()?, cfg.seed()?)?;
    println!("{} parameters, {} sub-networks", detector.params.numel(), detector.head.num_subnets());

    let start = Instant::now();
    let outcome = train_with(&train, detector, &cfg.sgd()?, &cfg.proposals()?, cfg.seed()?, |r| {
        if (r.iteration + 1) % 50 == 0 {
            println!("iter {:>5}  loss {:.4}  lr {}", r.iteration + 1, r.loss_total, r.lr);
        }
    })?;
    let smooth = smoothed_losses(&outcome.log, 50.min(outcome.log.len()));
    println!(
        "trained in {:.1}s, smoothed loss {:.4} -> {:.4}",
        start.elapsed().as_secs_f64(),
        smooth.first().copied().unwrap_or(f64::NAN),
        smooth.last().copied().unwrap_or(f64::NAN)
    );
    let (summary, _) = evaluate(&cfg, &outcome.detector, &test)?;
    print!("{}", summary.text(&test.class_names));
    Ok(())
}
