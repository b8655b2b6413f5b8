//! RoI max pooling and position-sensitive pooling on a toy feature map.

use ban::geometry::BBox;
use ban::pooling::{psroi_pool, roi_pool, vote, PoolMode, PoolSpec};
use ban::tensor::{Real, Tensor};

fn main() -> ban::Result<()> {
    let k = 2;
    // one channel of 8x8 ramps for RoI pooling
    let features = Tensor::from_fn(&[1, 8, 8], |i| (i % 8 + i / 8) as Real);
    let roi = BBox::from_corners(8.0, 8.0, 40.0, 40.0)?;
    let spec = PoolSpec::new(k, 0.125, PoolMode::Roi)?;
    let (pooled, _) = roi_pool(&features, &[roi], &spec)?;
    println!("roi max pool {:?}: {:?}", pooled.shape(), pooled.data());

    // two groups of k*k position-sensitive channels; channel g*k*k + b is constant b
    let score_map = Tensor::from_fn(&[2 * k * k, 8, 8], |i| ((i / 64) % (k * k)) as Real);
    let spec = PoolSpec::new(k, 0.125, PoolMode::PsRoi)?;
    let (pooled, _) = psroi_pool(&score_map, &[roi], &spec)?;
    println!("psroi pool {:?}: {:?}", pooled.shape(), pooled.data());
    println!("voted scores: {:?}", vote(&pooled)?.data());
    Ok(())
}
