//! RoI max pooling and position-sensitive RoI average pooling over a single
//! feature map, batched over regions, with exact backward passes.
//!
//! A region is mapped to feature coordinates by `spatial_scale` without
//! rounding. Bin `(i, j)` of a `k x k` grid covers rows
//! `floor(y1 + i*bh) .. ceil(y1 + (i+1)*bh)` (likewise for columns), clamped to
//! the feature extent. Bins left empty by clamping output 0.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Roi,
    PsRoi,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolSpec {
    pub k: usize,
    /// Feature-map cells per image pixel.
    pub spatial_scale: f64,
    pub mode: PoolMode,
}

impl PoolSpec {
    pub fn new(k: usize, spatial_scale: f64, mode: PoolMode) -> Result<Self> {
        if !(1..=7).contains(&k) {
            return Err(Error::Config(format!("pooling resolution k must be in 1..=7, got {k}")));
        }
        if !(spatial_scale > 0.0 && spatial_scale.is_finite()) {
            return Err(Error::Config(format!("spatial_scale must be positive, got {spatial_scale}")));
        }
        Ok(Self {
            k,
            spatial_scale,
            mode,
        })
    }

    fn expect_mode(&self, mode: PoolMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::Config(format!("pool spec is {:?}, expected {mode:?}", self.mode)))
        }
    }
}

/// Half-open cell range `[start, end)` on each axis. Empty when start >= end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinRange {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl BinRange {
    pub fn is_empty(&self) -> bool {
        self.y0 >= self.y1 || self.x0 >= self.x1
    }

    pub fn count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.y1 - self.y0) * (self.x1 - self.x0)
        }
    }
}

/// The `k*k` bins of `roi`, row-major, on a feature map of `height x width`.
pub fn bin_ranges(roi: &BBox, spec: &PoolSpec, height: usize, width: usize) -> Result<Vec<BinRange>> {
    let [x1, y1, x2, y2] = roi.corners();
    let s = spec.spatial_scale;
    let (fx1, fy1, fx2, fy2) = (x1 * s, y1 * s, x2 * s, y2 * s);
    if !(fx2 > fx1 && fy2 > fy1) {
        return Err(Error::Geometry(format!("region {roi} has no extent on the feature map")));
    }
    let k = spec.k;
    let bw = (fx2 - fx1) / k as f64;
    let bh = (fy2 - fy1) / k as f64;
    let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min(hi as f64) as usize };
    let mut bins = Vec::with_capacity(k * k);
    for i in 0..k {
        let ys = clamp((fy1 + i as f64 * bh).floor(), height);
        let ye = clamp((fy1 + (i + 1) as f64 * bh).ceil(), height);
        for j in 0..k {
            let xs = clamp((fx1 + j as f64 * bw).floor(), width);
            let xe = clamp((fx1 + (j + 1) as f64 * bw).ceil(), width);
            bins.push(BinRange {
                y0: ys,
                y1: ye,
                x0: xs,
                x1: xe,
            });
        }
    }
    Ok(bins)
}

/// Interprets `[C,H,W]` or `[1,C,H,W]` as `(C, H, W)`.
fn feature_dims(features: &Tensor) -> Result<(usize, usize, usize)> {
    match *features.shape() {
        [c, h, w] | [1, c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Dimension(format!(
            "pooling expects a single feature map [C,H,W], got {s:?}"
        ))),
    }
}

/// Saved forward state of [`roi_pool`]: the flat feature index each output
/// bin read its maximum from (`None` for empty bins).
#[derive(Clone, Debug)]
pub struct RoiPoolCache {
    pub argmax: Vec<Option<usize>>,
}

/// Max pooling of each region into `k x k` bins. Output `[R, C, k, k]`.
pub fn roi_pool(features: &Tensor, rois: &[BBox], spec: &PoolSpec) -> Result<(Tensor, RoiPoolCache)> {
    spec.expect_mode(PoolMode::Roi)?;
    let (c, h, w) = feature_dims(features)?;
    if rois.is_empty() {
        return Err(Error::Dimension("roi_pool needs at least one region".into()));
    }
    let k = spec.k;
    let data = features.data();
    let mut out = Vec::with_capacity(rois.len() * c * k * k);
    let mut argmax = Vec::with_capacity(out.capacity());
    for roi in rois {
        let bins = bin_ranges(roi, spec, h, w)?;
        for ch in 0..c {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            for bin in &bins {
                let mut best: Option<(usize, Real)> = None;
                if !bin.is_empty() {
                    for y in bin.y0..bin.y1 {
                        for x in bin.x0..bin.x1 {
                            let v = plane[y * w + x];
                            if best.is_none_or(|(_, b)| v > b) {
                                best = Some((y * w + x, v));
                            }
                        }
                    }
                }
                match best {
                    Some((idx, v)) => {
                        out.push(v);
                        argmax.push(Some(ch * h * w + idx));
                    }
                    None => {
                        out.push(0.0);
                        argmax.push(None);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&[rois.len(), c, k, k], out)?, RoiPoolCache { argmax }))
}

/// Routes each bin's gradient to the cell that won its maximum.
pub fn roi_pool_backward(
    features_shape: &[usize],
    cache: &RoiPoolCache,
    grad_out: &Tensor,
) -> Result<Tensor> {
    if grad_out.numel() != cache.argmax.len() {
        return Err(Error::Dimension("roi_pool backward: gradient does not match forward".into()));
    }
    let mut grad = vec![0.0; features_shape.iter().product()];
    for (g, idx) in grad_out.data().iter().zip(&cache.argmax) {
        if let Some(i) = idx {
            grad[*i] += *g;
        }
    }
    Tensor::new(features_shape, grad)
}

/// Saved forward state of [`psroi_pool`]: bins of every region.
#[derive(Clone, Debug)]
pub struct PsRoiPoolCache {
    pub bins: Vec<Vec<BinRange>>,
    pub groups: usize,
}

/// Position-sensitive average pooling. Bin `(i, j)` of group `g` averages
/// channel `g*k*k + i*k + j`. Input `[G*k*k, H, W]`, output `[R, G, k, k]`.
pub fn psroi_pool(
    score_map: &Tensor,
    rois: &[BBox],
    spec: &PoolSpec,
) -> Result<(Tensor, PsRoiPoolCache)> {
    spec.expect_mode(PoolMode::PsRoi)?;
    let (c, h, w) = feature_dims(score_map)?;
    let kk = spec.k * spec.k;
    if c % kk != 0 {
        return Err(Error::Dimension(format!(
            "psroi_pool: {c} channels not divisible by k*k = {kk}"
        )));
    }
    if rois.is_empty() {
        return Err(Error::Dimension("psroi_pool needs at least one region".into()));
    }
    let groups = c / kk;
    let data = score_map.data();
    let mut out = Vec::with_capacity(rois.len() * c);
    let mut all_bins = Vec::with_capacity(rois.len());
    for roi in rois {
        let bins = bin_ranges(roi, spec, h, w)?;
        for g in 0..groups {
            for (b, bin) in bins.iter().enumerate() {
                let n = bin.count();
                if n == 0 {
                    out.push(0.0);
                    continue;
                }
                let plane = &data[(g * kk + b) * h * w..][..h * w];
                let mut acc: Real = 0.0;
                for y in bin.y0..bin.y1 {
                    acc += plane[y * w + bin.x0..y * w + bin.x1].iter().sum::<Real>();
                }
                out.push(acc / n as Real);
            }
        }
        all_bins.push(bins);
    }
    Ok((
        Tensor::new(&[rois.len(), groups, spec.k, spec.k], out)?,
        PsRoiPoolCache {
            bins: all_bins,
            groups,
        },
    ))
}

/// Spreads each bin's gradient uniformly over the cells it averaged.
pub fn psroi_pool_backward(
    score_map_shape: &[usize],
    cache: &PsRoiPoolCache,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (h, w) = match *score_map_shape {
        [_, h, w] | [1, _, h, w] => (h, w),
        ref s => return Err(Error::Dimension(format!("psroi backward: bad map shape {s:?}"))),
    };
    let kk = cache.bins.first().map_or(1, Vec::len);
    if grad_out.numel() != cache.bins.len() * cache.groups * kk {
        return Err(Error::Dimension("psroi backward: gradient does not match forward".into()));
    }
    let mut grad = vec![0.0; score_map_shape.iter().product()];
    let g_out = grad_out.data();
    for (r, bins) in cache.bins.iter().enumerate() {
        for g in 0..cache.groups {
            for (b, bin) in bins.iter().enumerate() {
                let n = bin.count();
                if n == 0 {
                    continue;
                }
                let share = g_out[(r * cache.groups + g) * kk + b] / n as Real;
                let plane = &mut grad[(g * kk + b) * h * w..][..h * w];
                for y in bin.y0..bin.y1 {
                    for v in &mut plane[y * w + bin.x0..y * w + bin.x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Tensor::new(score_map_shape, grad)
}

/// Mean over the `k x k` bins of each group: `[R, G, k, k] -> [R, G]`.
/// A rank-3 `[G, k, k]` input yields `[G]`.
pub fn vote(pooled: &Tensor) -> Result<Tensor> {
    let (lead, kk) = vote_dims(pooled)?;
    let data = pooled
        .data()
        .chunks(kk)
        .map(|bins| bins.iter().sum::<Real>() / kk as Real)
        .collect();
    Tensor::new(&lead, data)
}

/// Each bin receives `upstream / (k*k)`.
pub fn vote_backward(pooled_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let kk: usize = pooled_shape[pooled_shape.len().saturating_sub(2)..].iter().product();
    if grad_out.numel() * kk != pooled_shape.iter().product::<usize>() {
        return Err(Error::Dimension("vote backward: gradient does not match forward".into()));
    }
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / kk as Real, kk))
        .collect();
    Tensor::new(pooled_shape, data)
}

fn vote_dims(pooled: &Tensor) -> Result<(Vec<usize>, usize)> {
    match *pooled.shape() {
        [r, g, kh, kw] => Ok((vec![r, g], kh * kw)),
        [g, kh, kw] => Ok((vec![g], kh * kw)),
        ref s => Err(Error::Dimension(format!("vote expects [R,G,k,k] or [G,k,k], got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, mode: PoolMode) -> PoolSpec {
        PoolSpec::new(k, 1.0, mode).unwrap()
    }

    fn corners(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::from_corners(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn roi_pool_single_bin_takes_max() {
        let mut f = Tensor::zeros(&[1, 4, 4]);
        for (i, (y, x)) in [(1, 1), (1, 2), (2, 1), (2, 2)].into_iter().enumerate() {
            f.set(&[0, y, x], (i + 1) as Real);
        }
        let (out, cache) = roi_pool(&f, &[corners(1.0, 1.0, 3.0, 3.0)], &spec(1, PoolMode::Roi)).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(cache.argmax, vec![Some(2 * 4 + 2)]);
    }

    #[test]
    fn roi_outside_map_pools_zero() {
        let f = Tensor::full(&[2, 4, 4], 3.0);
        let (out, _) = roi_pool(&f, &[corners(10.0, 10.0, 14.0, 14.0)], &spec(2, PoolMode::Roi)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let (out, _) =
            psroi_pool(&Tensor::full(&[4, 4, 4], 3.0), &[corners(-9.0, 0.0, -5.0, 2.0)], &spec(2, PoolMode::PsRoi))
                .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn roi_pool_backward_hits_argmax() {
        let f = Tensor::from_fn(&[1, 3, 3], |i| ((i * 5) % 9) as Real);
        let (out, cache) = roi_pool(&f, &[corners(0.0, 0.0, 3.0, 3.0)], &spec(1, PoolMode::Roi)).unwrap();
        let g = roi_pool_backward(f.shape(), &cache, &Tensor::full(out.shape(), 1.0)).unwrap();
        let argmax = f.data().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        for (i, &v) in g.data().iter().enumerate() {
            assert_eq!(v, if i == argmax { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn psroi_single_bin_average() {
        // k = 1, two groups; group 0 holds {1,2,3,4} inside the region
        let mut f = Tensor::zeros(&[2, 4, 4]);
        for (i, (y, x)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            f.set(&[0, y, x], (i + 1) as Real);
            f.set(&[1, y, x], 10.0);
        }
        let (out, _) = psroi_pool(&f, &[corners(0.0, 0.0, 2.0, 2.0)], &spec(1, PoolMode::PsRoi)).unwrap();
        assert_eq!(out.shape(), &[1, 2, 1, 1]);
        assert_eq!(out.data(), &[2.5, 10.0]);
    }

    #[test]
    fn psroi_reads_position_sensitive_channels() {
        // k = 2, one group: channel b is constant b, so bin b must read b
        let f = Tensor::from_fn(&[4, 6, 6], |i| (i / 36) as Real);
        let (out, _) = psroi_pool(&f, &[corners(1.0, 1.0, 5.0, 5.0)], &spec(2, PoolMode::PsRoi)).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn psroi_rejects_bad_channel_count() {
        let f = Tensor::zeros(&[10, 4, 4]);
        assert!(matches!(
            psroi_pool(&f, &[corners(0.0, 0.0, 2.0, 2.0)], &spec(3, PoolMode::PsRoi)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn pooling_modes_are_checked() {
        let f = Tensor::zeros(&[4, 4, 4]);
        assert!(roi_pool(&f, &[corners(0.0, 0.0, 2.0, 2.0)], &spec(2, PoolMode::PsRoi)).is_err());
        assert!(psroi_pool(&f, &[corners(0.0, 0.0, 2.0, 2.0)], &spec(2, PoolMode::Roi)).is_err());
        assert!(PoolSpec::new(0, 1.0, PoolMode::Roi).is_err());
        assert!(PoolSpec::new(8, 1.0, PoolMode::Roi).is_err());
        assert!(PoolSpec::new(3, 0.0, PoolMode::Roi).is_err());
    }

    #[test]
    fn bins_cover_region_with_floor_ceil() {
        let s = PoolSpec::new(2, 0.5, PoolMode::Roi).unwrap();
        let bins = bin_ranges(&corners(2.0, 2.0, 9.0, 9.0), &s, 8, 8).unwrap();
        // feature span [1, 4.5): bins [1,2.75) -> 1..3 and [2.75,4.5) -> 2..5
        assert_eq!(bins[0], BinRange { y0: 1, y1: 3, x0: 1, x1: 3 });
        assert_eq!(bins[3], BinRange { y0: 2, y1: 5, x0: 2, x1: 5 });
    }

    #[test]
    fn vote_examples() {
        let p = Tensor::new(&[1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(vote(&p).unwrap().data(), &[3.0]);
        let p1 = Tensor::new(&[2, 3, 1, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(vote(&p1).unwrap().data(), p1.data());
        let g = vote_backward(&[1, 1, 2, 2], &Tensor::new(&[1, 1], vec![8.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[2.0; 4]);
    }
}
