use super::{Dataset, Sample};
use crate::error::Result;
use crate::eval::{DetectionRecord, GroundTruth};
use crate::geometry::{clip_box, decode_box, nms, BBox, RegressionTarget};
use crate::model::Detector;
use crate::rng;
use crate::training::loss::softmax;
use crate::training::proposals::{propose, ProposalConfig};

const STREAM_EVAL: u64 = 0xe7a1;

/// Inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectConfig {
    pub rois_per_image: usize,
    pub nms_thresh: f64,
    pub max_detections: usize,
    pub proposals: ProposalConfig,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            rois_per_image: 300,
            nms_thresh: 0.3,
            max_detections: 100,
            proposals: ProposalConfig::default(),
            seed: 42,
        }
    }
}

/// Proposals used at inference for image `index` of a dataset.
pub fn inference_proposals(sample: &Sample, index: usize, cfg: &DetectConfig) -> Vec<BBox> {
    let seed = rng::substream(cfg.seed, STREAM_EVAL, index as u64);
    let (w, h) = (sample.image.width, sample.image.height);
    propose(&sample.gt_boxes(), w, h, cfg.rois_per_image, &cfg.proposals, seed)
}

/// Detections on one image: softmax scores, decoded and clipped boxes,
/// per-class NMS, then the best `max_detections` overall.
pub fn detect_image(det: &Detector, sample: &Sample, index: usize, cfg: &DetectConfig) -> Result<Vec<DetectionRecord>> {
    let (w, h) = (sample.image.width, sample.image.height);
    let proposals = inference_proposals(sample, index, cfg);
    let outputs = det.forward(&sample.tensor(), &proposals)?;
    let mut boxes: Vec<BBox> = Vec::new();
    let mut probs: Vec<Vec<f64>> = Vec::new();
    for (p, out) in proposals.iter().zip(&outputs) {
        let d = &out.box_deltas[out.box_deltas.len() - 4..];
        let t = RegressionTarget::from_array([0, 1, 2, 3].map(|i| f64::from(d[i])));
        if let Ok(b) = clip_box(&decode_box(&t, p), w, h) {
            boxes.push(b);
            probs.push(softmax(&out.class_scores).into_iter().map(f64::from).collect());
        }
    }
    let mut dets = Vec::new();
    for class_id in 1..=det.head.num_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[class_id]).collect();
        for i in nms(&boxes, &scores, cfg.nms_thresh) {
            dets.push(DetectionRecord {
                image_id: sample.id.clone(),
                class_id,
                score: scores[i],
                bbox: boxes[i],
            });
        }
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(cfg.max_detections);
    Ok(dets)
}

/// Detections over a dataset in image order.
pub fn run_detector(det: &Detector, dataset: &Dataset, cfg: &DetectConfig) -> Result<Vec<DetectionRecord>> {
    let mut all = Vec::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        all.extend(detect_image(det, s, i, cfg)?);
    }
    Ok(all)
}

pub fn ground_truths(dataset: &Dataset) -> Vec<GroundTruth> {
    dataset
        .samples
        .iter()
        .flat_map(|s| {
            s.objects.iter().map(|o| GroundTruth {
                image_id: s.id.clone(),
                class_id: o.class_id,
                bbox: o.bbox,
            })
        })
        .collect()
}
