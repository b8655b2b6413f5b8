//! Central finite-difference check of the full context-ensemble head.

use ban::geometry::BBox;
use ban::head::{build_head, forward_graph, BanConfig, ContextSet};
use ban::tensor::gradcheck::grad_check;
use ban::tensor::graph::Graph;
use ban::tensor::params::gaussian_tensor;
use ban::tensor::{Real, Tensor};

fn main() -> ban::Result<()> {
    let cfg = BanConfig {
        contexts: ContextSet::ALL,
        k: 3,
        num_classes: 2,
        trunk_channels: 4,
        ..BanConfig::default()
    };
    let params = build_head(&cfg, 3, 7)?;
    let features = gaussian_tensor(&[1, 3, 10, 10], 1.0, 11);
    let rois = [
        BBox::new(20.0, 22.0, 16.0, 12.0)?,
        BBox::new(40.0, 35.0, 30.0, 40.0)?,
    ];
    // loss = sum of all scores weighted by a fixed pattern
    let err = grad_check(
        |x: &Tensor| {
            let mut g = Graph::new();
            let f = g.input_with_grad(x.clone())?;
            let vars = forward_graph(&mut g, &params, &cfg, f, &rois, 0.25)?;
            let s = g.value(vars.scores).clone();
            let w = Tensor::from_fn(s.shape(), |i| ((i % 5) as Real - 2.0) * 0.3);
            let loss = s.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
            g.backward(vec![(vars.scores, w)])?;
            Ok((loss, g.grad(f).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()))))
        },
        &features,
        1e-5,
    )?;
    println!("max relative error w.r.t. features: {err:.3e}");
    Ok(())
}
