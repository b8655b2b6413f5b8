use crate::geometry::{encode_box, iou, BBox, RegressionTarget};

/// Minimum IoU with a ground-truth box for a proposal to be foreground.
pub const POSITIVE_IOU: f64 = 0.5;

/// A proposal with its training label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRoI {
    pub bbox: BBox,
    /// 0 is background, `1..=C` foreground classes.
    pub label: usize,
    /// Regression target, meaningful only when `label > 0`.
    pub target: RegressionTarget,
    /// Multi-task loss, filled in by the OHEM pass.
    pub loss: f64,
}

/// Labels each proposal with the class of its highest-IoU ground truth when
/// that IoU is at least [`POSITIVE_IOU`]; earlier ground truths win ties.
pub fn assign_labels(proposals: &[BBox], gts: &[(usize, BBox)]) -> Vec<LabeledRoI> {
    proposals
        .iter()
        .map(|p| {
            let best = gts
                .iter()
                .map(|(class, g)| (iou(p, g), *class, g))
                .fold(None::<(f64, usize, &BBox)>, |best, cand| match best {
                    Some(b) if b.0 >= cand.0 => Some(b),
                    _ => Some(cand),
                });
            match best {
                Some((overlap, class, g)) if overlap >= POSITIVE_IOU => LabeledRoI {
                    bbox: *p,
                    label: class,
                    target: encode_box(g, p),
                    loss: 0.0,
                },
                _ => LabeledRoI {
                    bbox: *p,
                    label: 0,
                    target: RegressionTarget::default(),
                    loss: 0.0,
                },
            }
        })
        .collect()
}

/// Indices of the `keep` largest losses in ascending index order. Equal
/// losses prefer lower indices.
pub fn ohem_select(rois: &[LabeledRoI], keep: usize) -> Vec<usize> {
    let losses: Vec<f64> = rois.iter().map(|r| r.loss).collect();
    top_k(&losses, keep)
}

pub fn top_k(values: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}
