//! Average precision with greedy matching, VOC07 11-point and all-point
//! (area) interpolation, and class/threshold means.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::geometry::{iou, BBox};

/// A scored detection on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    /// 1-based foreground class.
    pub class_id: usize,
    /// Softmax probability.
    pub score: f64,
    pub bbox: BBox,
}

/// A ground-truth object on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApProtocol {
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    Voc07,
    /// Area under the monotone precision envelope.
    Area,
}

/// Per-detection true/false positive flags in descending score order, and the
/// number of ground truths of the class. Equal scores keep input order.
pub fn match_detections(
    dets: &[DetectionRecord],
    gts: &[GroundTruth],
    class_id: usize,
    iou_thresh: f64,
) -> (Vec<bool>, usize) {
    let mut by_image: HashMap<&str, Vec<(BBox, bool)>> = HashMap::new();
    let mut npos = 0;
    for g in gts.iter().filter(|g| g.class_id == class_id) {
        by_image.entry(&g.image_id).or_default().push((g.bbox, false));
        npos += 1;
    }
    let mut ranked: Vec<&DetectionRecord> = dets.iter().filter(|d| d.class_id == class_id).collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let flags = ranked
        .iter()
        .map(|d| {
            let Some(cands) = by_image.get_mut(d.image_id.as_str()) else {
                return false;
            };
            let best = cands
                .iter()
                .enumerate()
                .filter(|(_, (_, used))| !used)
                .map(|(i, (b, _))| (i, iou(&d.bbox, b)))
                .fold(None::<(usize, f64)>, |acc, c| match acc {
                    Some(a) if a.1 >= c.1 => Some(a),
                    _ => Some(c),
                });
            match best {
                Some((i, o)) if o >= iou_thresh => {
                    cands[i].1 = true;
                    true
                }
                _ => false,
            }
        })
        .collect();
    (flags, npos)
}

/// Average precision from ranked TP flags. `None` when `npos` is 0.
pub fn ap_from_flags(flags: &[bool], npos: usize, protocol: ApProtocol) -> Option<f64> {
    if npos == 0 {
        return None;
    }
    let mut tp = 0usize;
    let (mut recall, mut precision) = (Vec::new(), Vec::new());
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        recall.push(tp as f64 / npos as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    Some(match protocol {
        ApProtocol::Voc07 => {
            (0..=10)
                .map(|t| {
                    let t = f64::from(t) / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        ApProtocol::Area => {
            let mut mpre: Vec<f64> = precision.clone();
            for i in (0..mpre.len().saturating_sub(1)).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            let mut prev = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&mpre) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
    })
}

pub fn average_precision(
    dets: &[DetectionRecord],
    gts: &[GroundTruth],
    class_id: usize,
    iou_thresh: f64,
    protocol: ApProtocol,
) -> Option<f64> {
    let (flags, npos) = match_detections(dets, gts, class_id, iou_thresh);
    ap_from_flags(&flags, npos, protocol)
}

/// Class-mean AP at one threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    pub map: f64,
    /// AP per class id `1..=num_classes`; `None` for classes without ground truth.
    pub per_class: Vec<Option<f64>>,
}

impl MapReport {
    /// Class ids left out of the mean.
    pub fn excluded(&self) -> Vec<usize> {
        (1..).zip(&self.per_class).filter(|(_, ap)| ap.is_none()).map(|(c, _)| c).collect()
    }
}

pub fn mean_ap(
    dets: &[DetectionRecord],
    gts: &[GroundTruth],
    num_classes: usize,
    iou_thresh: f64,
    protocol: ApProtocol,
) -> MapReport {
    let per_class: Vec<Option<f64>> = (1..=num_classes)
        .map(|c| average_precision(dets, gts, c, iou_thresh, protocol))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    MapReport { map, per_class }
}

/// VOC07 11-point mAP at one IoU threshold.
pub fn map_voc(dets: &[DetectionRecord], gts: &[GroundTruth], num_classes: usize, iou_thresh: f64) -> f64 {
    mean_ap(dets, gts, num_classes, iou_thresh, ApProtocol::Voc07).map
}

pub const COCO_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Mean over IoU 0.50:0.05:0.95 of the class-mean area AP.
pub fn map_coco_style(dets: &[DetectionRecord], gts: &[GroundTruth], num_classes: usize) -> f64 {
    COCO_THRESHOLDS
        .iter()
        .map(|&t| mean_ap(dets, gts, num_classes, t, ApProtocol::Area).map)
        .sum::<f64>()
        / COCO_THRESHOLDS.len() as f64
}

/// Metrics printed by the `eval` command.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub map50: MapReport,
    pub map70: MapReport,
    pub map50_area: MapReport,
    pub coco: f64,
}

pub fn summarize(dets: &[DetectionRecord], gts: &[GroundTruth], num_classes: usize) -> EvalSummary {
    EvalSummary {
        map50: mean_ap(dets, gts, num_classes, 0.5, ApProtocol::Voc07),
        map70: mean_ap(dets, gts, num_classes, 0.7, ApProtocol::Voc07),
        map50_area: mean_ap(dets, gts, num_classes, 0.5, ApProtocol::Area),
        coco: map_coco_style(dets, gts, num_classes),
    }
}

impl EvalSummary {
    pub fn text(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        writeln!(out, "mAP@0.5 (VOC07 11-point): {:.4}", self.map50.map).unwrap();
        writeln!(out, "mAP@0.7 (VOC07 11-point): {:.4}", self.map70.map).unwrap();
        writeln!(out, "mAP@0.5 (area):           {:.4}", self.map50_area.map).unwrap();
        writeln!(out, "mAP@[.5:.95] (COCO-style): {:.4}", self.coco).unwrap();
        for c in self.map50.excluded() {
            let name = class_names.get(c - 1).map_or("?", String::as_str);
            writeln!(out, "excluded class {c} ({name}): no ground truth").unwrap();
        }
        out
    }

    /// One row per class: `class_id,class_name,ap50,ap70,ap50_area`.
    pub fn per_class_csv(&self, class_names: &[String]) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("class_id,class_name,ap50,ap70,ap50_area\n");
        for (i, name) in class_names.iter().enumerate() {
            writeln!(
                out,
                "{},{name},{},{},{}",
                i + 1,
                fmt(self.map50.per_class[i]),
                fmt(self.map70.per_class[i]),
                fmt(self.map50_area.per_class[i])
            )
            .unwrap();
        }
        out
    }
}

pub const DETECTION_HEADER: &str = "image_id,class_id,score,x1,y1,x2,y2";

pub fn detections_csv(dets: &[DetectionRecord]) -> String {
    let mut out = format!("{DETECTION_HEADER}\n");
    for d in dets {
        let [x1, y1, x2, y2] = d.bbox.corners();
        writeln!(out, "{},{},{:.9},{x1:.4},{y1:.4},{x2:.4},{y2:.4}", d.image_id, d.class_id, d.score).unwrap();
    }
    out
}
