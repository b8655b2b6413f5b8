//! Independent oracles and generators shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use ban::geometry::BBox;
use ban::head::{build_head, forward_graph, BanConfig, ContextSet, HeadMode};
use ban::pooling::{PoolMode, PoolSpec};
use ban::tensor::gradcheck::{grad_check, grad_check_coords};
use ban::tensor::graph::{Graph, Var};
use ban::tensor::ops::ConvGeometry;
use ban::tensor::params::gaussian_tensor;
use ban::tensor::{Real, Tensor};
use ban::training::loss::{cross_entropy, smooth_l1_with_grad};
use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;

pub fn rng(seed: u64) -> XorShiftRng {
    XorShiftRng::seed_from_u64(seed ^ 0x5eed)
}

// ---------------------------------------------------------------- geometry

/// IoU from corner coordinates, written independently of the library.
pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = [a.cx - a.w / 2.0, a.cy - a.h / 2.0, a.cx + a.w / 2.0, a.cy + a.h / 2.0];
    let [bx1, by1, bx2, by2] = [b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0];
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Greedy NMS keeps the unique subset `K` in which a box is kept exactly when
/// no kept box ranked above it overlaps it by more than `thresh`. Enumerates
/// every subset and returns all that satisfy that fixed point, in ascending
/// rank order.
pub fn nms_fixed_points(boxes: &[BBox], scores: &[f64], thresh: f64) -> Vec<Vec<usize>> {
    let n = boxes.len();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let kept = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|pos| {
            let i = rank[pos];
            let suppressed = rank[..pos].iter().any(|&j| kept(j) && iou_oracle(&boxes[i], &boxes[j]) > thresh);
            kept(i) == !suppressed
        });
        if consistent {
            found.push(rank.iter().copied().filter(|&i| kept(i)).collect());
        }
    }
    found
}

pub fn random_box(r: &mut XorShiftRng, extent: f64) -> BBox {
    let w = r.random_range(1.0..extent / 2.0);
    let h = r.random_range(1.0..extent / 2.0);
    BBox::new(r.random_range(0.0..extent), r.random_range(0.0..extent), w, h).unwrap()
}

/// Boxes on a coarse integer grid, so equal IoUs and exact threshold hits occur.
pub fn grid_box(r: &mut XorShiftRng) -> BBox {
    let x1 = r.random_range(0..4) as f64 * 2.0;
    let y1 = r.random_range(0..4) as f64 * 2.0;
    let w = r.random_range(1..5) as f64 * 2.0;
    let h = r.random_range(1..5) as f64 * 2.0;
    BBox::from_corners(x1, y1, x1 + w, y1 + h).unwrap()
}

// ---------------------------------------------------------------- average precision

/// Exact rational `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: i128,
    pub den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    pub fn new(num: i128, den: i128) -> Self {
        let g = gcd(num, den).max(1);
        Self { num: num / g, den: den / g }
    }
    pub fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }
    pub fn mul(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.num, self.den * o.den)
    }
    pub fn sub(self, o: Ratio) -> Ratio {
        self.add(Ratio::new(-o.num, o.den))
    }
    pub fn ge(self, o: Ratio) -> bool {
        self.num * o.den >= o.num * self.den
    }
    pub fn max(self, o: Ratio) -> Ratio {
        if self.ge(o) {
            self
        } else {
            o
        }
    }
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Every `(precision, recall)` point of the ranking, as exact ratios.
pub fn pr_points(flags: &[bool], npos: usize) -> Vec<(Ratio, Ratio)> {
    (1..=flags.len())
        .map(|k| {
            let tp = flags[..k].iter().filter(|f| **f).count() as i128;
            (Ratio::new(tp, k as i128), Ratio::new(tp, npos as i128))
        })
        .collect()
}

fn best_precision_at(points: &[(Ratio, Ratio)], recall: Ratio) -> Ratio {
    points
        .iter()
        .filter(|(_, r)| r.ge(recall))
        .fold(Ratio::new(0, 1), |m, (p, _)| m.max(*p))
}

/// Area under `r -> max{ p_k : r_k >= r }` over `[0, 1]`, integrated exactly
/// between consecutive distinct recall values.
pub fn area_ap_oracle(flags: &[bool], npos: usize) -> Ratio {
    let points = pr_points(flags, npos);
    let mut levels: Vec<Ratio> = points.iter().map(|p| p.1).collect();
    levels.sort_by(|a, b| (a.num * b.den).cmp(&(b.num * a.den)));
    levels.dedup();
    let mut prev = Ratio::new(0, 1);
    let mut area = Ratio::new(0, 1);
    for r in levels {
        if r == prev {
            continue;
        }
        // on (prev, r] the envelope equals its value at r
        area = area.add(r.sub(prev).mul(best_precision_at(&points, r)));
        prev = r;
    }
    area
}

pub fn voc07_ap_oracle(flags: &[bool], npos: usize) -> Ratio {
    let points = pr_points(flags, npos);
    (0..=10)
        .map(|t| best_precision_at(&points, Ratio::new(t, 10)))
        .fold(Ratio::new(0, 1), Ratio::add)
        .mul(Ratio::new(1, 11))
}

/// Reference greedy matching: detections in descending score order (stable),
/// each taking the unmatched same-image ground truth of highest IoU when that
/// IoU reaches `thresh`.
pub fn match_oracle(dets: &[(usize, f64, BBox)], gts: &[(usize, BBox)], thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    order
        .iter()
        .map(|&d| {
            let (img, _, b) = dets[d];
            let mut best: Option<(usize, f64)> = None;
            for (g, (gimg, gb)) in gts.iter().enumerate() {
                if *gimg != img || used[g] {
                    continue;
                }
                let o = iou_oracle(&b, gb);
                if best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, o)) if o >= thresh => {
                    used[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

// ---------------------------------------------------------------- gradients

fn gaussian(shape: &[usize], r: &mut XorShiftRng) -> Tensor {
    gaussian_tensor(shape, 1.0, r.random())
}

/// Checks every input of a graph-built function against central differences
/// on `sum(w * out)` for a random `w`. Returns the worst relative error.
pub fn check_graph<F>(inputs: &[Tensor], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> ban::Result<Var>,
{
    let weights = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let out = build(&mut g, &vars).unwrap();
        gaussian_tensor(g.value(out).shape(), 1.0, seed ^ 0xabc)
    };
    let mut worst: f64 = 0.0;
    for target in 0..inputs.len() {
        let err = grad_check(
            |x: &Tensor| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if i == target {
                            g.input_with_grad(x.clone())
                        } else {
                            g.input(t.clone())
                        }
                    })
                    .collect::<ban::Result<_>>()?;
                let out = build(&mut g, &vars)?;
                let loss = g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
                g.backward(vec![(out, weights.clone())])?;
                let grad = g.grad(vars[target]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
                Ok((loss, grad))
            },
            &inputs[target],
            1e-6,
        )
        .unwrap();
        worst = worst.max(err as f64);
    }
    worst
}

fn random_rois(r: &mut XorShiftRng, n: usize, extent: f64) -> Vec<BBox> {
    (0..n)
        .map(|_| {
            let x1 = r.random_range(-4.0..extent * 0.7);
            let y1 = r.random_range(-4.0..extent * 0.7);
            let w = r.random_range(3.0..extent * 0.6);
            let h = r.random_range(3.0..extent * 0.6);
            BBox::from_corners(x1, y1, x1 + w, y1 + h).unwrap()
        })
        .collect()
}

/// Nudges values away from zero so no entry sits on the ReLU kink.
fn off_kink(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1 * v.signum().max(0.5);
        }
    }
    t
}

pub const GRADIENT_OPS: [&str; 11] = [
    "conv2d",
    "relu",
    "fully_connected",
    "concat",
    "roi_pool",
    "psroi_pool",
    "vote",
    "cross_entropy",
    "smooth_l1",
    "head_psroi",
    "head_roi",
];

/// Worst relative finite-difference error of one operation at one seed.
pub fn gradient_case(op: &str, seed: u64) -> f64 {
    let mut r = rng(seed);
    match op {
        "conv2d" => {
            let geom = ConvGeometry::new(r.random_range(1..3), r.random_range(0..3), r.random_range(1..3));
            let (cin, cout, kh) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
            let inputs = [
                gaussian(&[1, cin, 7, 6], &mut r),
                gaussian(&[cout, cin, kh, kh], &mut r),
                gaussian(&[cout], &mut r),
            ];
            check_graph(&inputs, seed, |g, v| g.conv2d(v[0], v[1], v[2], geom))
        }
        "relu" => {
            let x = off_kink(gaussian(&[2, 3, 4], &mut r));
            check_graph(&[x], seed, |g, v| g.relu(v[0]))
        }
        "fully_connected" => {
            let (n, d, m) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..5));
            let inputs = [gaussian(&[n, d], &mut r), gaussian(&[d, m], &mut r), gaussian(&[m], &mut r)];
            check_graph(&inputs, seed, |g, v| g.fully_connected(v[0], v[1], v[2]))
        }
        "concat" => {
            let inputs: Vec<Tensor> = (0..r.random_range(2..4))
                .map(|_| {
                    let c = r.random_range(1..4);
                    gaussian(&[2, c, 3], &mut r)
                })
                .collect();
            check_graph(&inputs, seed, |g, v| g.concat_channels(v))
        }
        "roi_pool" => {
            let k = r.random_range(1..4);
            let spec = PoolSpec::new(k, 0.5, PoolMode::Roi).unwrap();
            let rois = random_rois(&mut r, 3, 20.0);
            let f = gaussian(&[1, 2, 10, 10], &mut r);
            check_graph(&[f], seed, move |g, v| g.roi_pool(v[0], &rois, &spec))
        }
        "psroi_pool" => {
            let k = r.random_range(1..4);
            let groups = r.random_range(1..3);
            let spec = PoolSpec::new(k, 0.5, PoolMode::PsRoi).unwrap();
            let rois = random_rois(&mut r, 3, 20.0);
            let f = gaussian(&[1, groups * k * k, 10, 10], &mut r);
            check_graph(&[f], seed, move |g, v| g.psroi_pool(v[0], &rois, &spec))
        }
        "vote" => {
            let k = r.random_range(1..4);
            check_graph(&[gaussian(&[3, 2, k, k], &mut r)], seed, |g, v| g.vote(v[0]))
        }
        "cross_entropy" => {
            let n = r.random_range(2..6);
            let u = r.random_range(0..n);
            let x = gaussian(&[n], &mut r);
            grad_check(
                |s: &Tensor| {
                    let (l, g) = cross_entropy(s.data(), u);
                    Ok((l, Tensor::new(&[n], g)?))
                },
                &x,
                1e-6,
            )
            .unwrap() as f64
        }
        "smooth_l1" => {
            let target = gaussian(&[4], &mut r);
            let mut pred = gaussian(&[4], &mut r);
            for (p, t) in pred.data_mut().iter_mut().zip(target.data()) {
                if ((*p - t).abs() - 1.0).abs() < 0.05 {
                    *p += 0.2;
                }
            }
            grad_check(
                |p: &Tensor| {
                    let (l, g) = smooth_l1_with_grad(p.data(), target.data());
                    Ok((l, Tensor::new(&[4], g)?))
                },
                &pred,
                1e-6,
            )
            .unwrap() as f64
        }
        "head_psroi" | "head_roi" => head_case(op == "head_roi", seed),
        other => panic!("unknown op {other}"),
    }
}

/// Full head composite: gradient w.r.t. the feature map and a sample of
/// every parameter tensor.
fn head_case(roi_mode: bool, seed: u64) -> f64 {
    let mut r = rng(seed);
    let contexts = ContextSet::ablation_grid()[r.random_range(0..6)];
    let cfg = BanConfig {
        contexts,
        k: r.random_range(1..4),
        head_mode: if roi_mode { HeadMode::Roi } else { HeadMode::PsRoi },
        shared_features: r.random(),
        num_classes: r.random_range(1..4),
        regression_dims: 4,
        trunk_channels: 3,
        roi_feature_channels: 2,
    };
    let in_ch = 2;
    let mut params = build_head(&cfg, in_ch, seed).unwrap();
    // larger than the training init so the check is not dominated by tiny values
    for (i, (_, t)) in params.iter_mut().enumerate() {
        *t = gaussian_tensor(t.shape(), 0.5, seed + i as u64);
    }
    let features = gaussian(&[1, in_ch, 8, 8], &mut r);
    let rois = random_rois(&mut r, 2, 32.0);
    let w_scores = gaussian(&[rois.len(), cfg.score_dims()], &mut r);
    let w_deltas = gaussian(&[rois.len(), cfg.regression_dims], &mut r);
    let loss_of = |g: &Graph, s: Var, d: Var| -> Real {
        let dot = |t: &Tensor, w: &Tensor| t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<Real>();
        dot(g.value(s), &w_scores) + dot(g.value(d), &w_deltas)
    };
    let scale = 0.25;
    let mut worst = grad_check(
        |x: &Tensor| {
            let mut g = Graph::new();
            let f = g.input_with_grad(x.clone())?;
            let v = forward_graph(&mut g, &params, &cfg, f, &rois, scale)?;
            let loss = loss_of(&g, v.scores, v.deltas);
            g.backward(vec![(v.scores, w_scores.clone()), (v.deltas, w_deltas.clone())])?;
            Ok((loss, g.grad(f).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()))))
        },
        &features,
        1e-6,
    )
    .unwrap() as f64;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let original = params.get(&name).unwrap().clone();
        let coords: Vec<usize> = (0..original.numel().min(12)).map(|_| r.random_range(0..original.numel())).collect();
        let err = grad_check_coords(
            |p: &Tensor| {
                let mut store = params.clone();
                *store.get_mut(&name)? = p.clone();
                let mut g = Graph::new();
                let f = g.input(features.clone())?;
                let v = forward_graph(&mut g, &store, &cfg, f, &rois, scale)?;
                let loss = loss_of(&g, v.scores, v.deltas);
                g.backward(vec![(v.scores, w_scores.clone()), (v.deltas, w_deltas.clone())])?;
                g.accumulate_param_grads(&mut store)?;
                let grad = store.get(&name)?.grad().map(<[Real]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]);
                Ok((loss, Tensor::new(p.shape(), grad)?))
            },
            &original,
            1e-6,
            &coords,
        )
        .unwrap() as f64;
        worst = worst.max(err);
    }
    worst
}
