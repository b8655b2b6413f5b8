use crate::geometry::{clip_box, iou, BBox};
use crate::rng::{self, uniform, uniform_int};

/// Stand-in for a region proposal network: jittered copies of each ground
/// truth plus mutually non-overlapping random boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalConfig {
    /// Jittered copies generated per ground-truth box.
    pub per_gt: usize,
    /// Center offset bound as a fraction of width/height.
    pub center_jitter: f64,
    /// Bound on the log of the width/height scale factor.
    pub scale_jitter: f64,
    /// Random boxes are kept only if their IoU with every kept random box is at most this.
    pub nms_thresh: f64,
    /// Smallest side of a random box, pixels.
    pub min_size: u32,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            per_gt: 32,
            center_jitter: 0.25,
            scale_jitter: 0.3,
            nms_thresh: 0.3,
            min_size: 8,
        }
    }
}

const FILL_ATTEMPTS_PER_BOX: usize = 20;

/// `n` proposals inside a `width` x `height` image. Jittered ground-truth
/// copies come first, in ground-truth order; random fill boxes follow.
pub fn propose(gts: &[BBox], width: u32, height: u32, n: usize, cfg: &ProposalConfig, seed: u64) -> Vec<BBox> {
    let mut r = rng::rng(seed);
    let mut out = Vec::with_capacity(n);
    'jitter: for g in gts {
        for _ in 0..cfg.per_gt {
            if out.len() == n {
                break 'jitter;
            }
            let dx = uniform(&mut r, -1.0, 1.0) * cfg.center_jitter * g.w;
            let dy = uniform(&mut r, -1.0, 1.0) * cfg.center_jitter * g.h;
            let sw = (uniform(&mut r, -1.0, 1.0) * cfg.scale_jitter).exp();
            let sh = (uniform(&mut r, -1.0, 1.0) * cfg.scale_jitter).exp();
            let Ok(b) = BBox::new(g.cx + dx, g.cy + dy, g.w * sw, g.h * sh) else {
                continue;
            };
            if let Ok(c) = clip_box(&b, width, height) {
                out.push(c);
            }
        }
    }
    let mut fill: Vec<BBox> = Vec::new();
    let needed = n - out.len();
    let min = i64::from(cfg.min_size.min(width).min(height).max(1));
    let mut attempts = 0;
    while fill.len() < needed {
        let w = uniform_int(&mut r, min, i64::from(width));
        let h = uniform_int(&mut r, min, i64::from(height));
        let x1 = uniform_int(&mut r, 0, i64::from(width) - w);
        let y1 = uniform_int(&mut r, 0, i64::from(height) - h);
        let b = BBox::from_corners(x1 as f64, y1 as f64, (x1 + w) as f64, (y1 + h) as f64)
            .expect("positive extents");
        attempts += 1;
        let saturated = attempts > FILL_ATTEMPTS_PER_BOX * needed;
        if saturated || fill.iter().all(|f| iou(f, &b) <= cfg.nms_thresh) {
            fill.push(b);
        }
    }
    out.extend(fill);
    out
}
