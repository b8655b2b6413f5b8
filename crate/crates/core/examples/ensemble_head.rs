//! The ensemble head sums sub-network outputs, so each sub-network's voted
//! score receives exactly the gradient of the aggregate.

use ban::geometry::BBox;
use ban::head::{backward_sharing_check, build_head, forward, BanConfig, ContextSet};
use ban::tensor::params::gaussian_tensor;

fn main() -> ban::Result<()> {
    let cfg = BanConfig {
        contexts: ContextSet::ALL,
        k: 3,
        num_classes: 3,
        trunk_channels: 8,
        ..BanConfig::default()
    };
    let params = build_head(&cfg, 4, 1)?;
    let features = gaussian_tensor(&[1, 4, 12, 12], 1.0, 2);
    let roi = BBox::new(40.0, 44.0, 24.0, 30.0)?;
    let out = forward(&params, &features, &[roi], &cfg, 0.125)?.remove(0);
    for (kind, s) in cfg.subnets().iter().zip(&out.per_context_scores) {
        println!("{:>5} {:?}", kind.table_name(), s.iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>());
    }
    println!("  sum {:?}", out.class_scores.iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>());

    let upstream = [0.5, -1.0, 0.25, 2.0];
    let grads = backward_sharing_check(&params, &features, &roi, &cfg, 0.125, &upstream)?;
    let identical = grads.per_subnet.iter().all(|(_, g)| g.data() == grads.aggregate.data());
    println!("sub-network gradients identical to aggregate: {identical}");
    Ok(())
}
