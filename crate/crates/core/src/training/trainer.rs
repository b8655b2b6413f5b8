use super::labels::{assign_labels, ohem_select, LabeledRoI};
use super::loss::{cross_entropy, smooth_l1_with_grad};
use super::proposals::{propose, ProposalConfig};
use super::sgd::{sgd_step, SgdConfig, SgdState};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::head::HeadVars;
use crate::model::Detector;
use crate::rng;
use crate::tensor::graph::Graph;
use crate::tensor::{Real, Tensor};

const STREAM_ORDER: u64 = 0x0d3e;
const STREAM_PROPOSALS: u64 = 0x9a05;

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss_cls: f64,
    pub loss_reg: f64,
    pub loss_total: f64,
    pub lr: f64,
}

pub const LOSS_LOG_HEADER: &str = "iteration,loss_cls,loss_reg,loss_total,lr";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{}",
            self.iteration, self.loss_cls, self.loss_reg, self.loss_total, self.lr
        )
    }
}

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_LOG_HEADER}\n");
    for r in log {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Trailing moving average over `window` iterations of the total loss.
pub fn smoothed_losses(log: &[LossRecord], window: usize) -> Vec<f64> {
    log.windows(window.max(1))
        .map(|w| w.iter().map(|r| r.loss_total).sum::<f64>() / w.len() as f64)
        .collect()
}

/// One image of a mini-batch with its labeled proposals and OHEM selection.
#[derive(Clone, Debug)]
pub struct FrozenImage {
    pub image: Tensor,
    pub rois: Vec<LabeledRoI>,
    pub kept: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    pub cls: f64,
    pub reg: f64,
    pub kept: usize,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.cls + self.reg
    }
}

struct RoiLoss {
    cls: f64,
    reg: f64,
    d_scores: Vec<Real>,
    d_deltas: Vec<Real>,
}

struct Evaluated {
    graph: Graph,
    vars: HeadVars,
    losses: Vec<RoiLoss>,
}

/// Forward pass over one image plus the per-RoI multi-task loss. Regression
/// reads the trailing four outputs of each RoI and is skipped for background.
fn evaluate(det: &Detector, image: &Tensor, rois: &[LabeledRoI]) -> Result<Evaluated> {
    let boxes: Vec<_> = rois.iter().map(|r| r.bbox).collect();
    let mut graph = Graph::new();
    let vars = det.forward_graph(&mut graph, image, &boxes)?;
    let scores = graph.value(vars.scores);
    let deltas = graph.value(vars.deltas);
    let (cw, dw) = (scores.shape()[1], deltas.shape()[1]);
    let losses = rois
        .iter()
        .enumerate()
        .map(|(i, roi)| {
            let (cls, d_scores) = cross_entropy(&scores.data()[i * cw..(i + 1) * cw], roi.label);
            let mut d_deltas = vec![0.0; dw];
            let mut reg = 0.0;
            if roi.label > 0 {
                let pred = &deltas.data()[(i + 1) * dw - 4..(i + 1) * dw];
                let target = roi.target.as_array().map(|v| v as Real);
                let (l, g) = smooth_l1_with_grad(pred, &target);
                reg = f64::from(l);
                d_deltas[dw - 4..].copy_from_slice(&g);
            }
            RoiLoss {
                cls: f64::from(cls),
                reg,
                d_scores,
                d_deltas,
            }
        })
        .collect();
    Ok(Evaluated { graph, vars, losses })
}

/// Seeds the kept RoIs with `scale`-weighted loss gradients and backpropagates
/// into the detector's parameter gradient buffers.
fn backpropagate(det: &mut Detector, mut ev: Evaluated, kept: &[usize], scale: Real) -> Result<()> {
    let cw = ev.graph.value(ev.vars.scores).shape()[1];
    let dw = ev.graph.value(ev.vars.deltas).shape()[1];
    let mut gs = Tensor::zeros(ev.graph.value(ev.vars.scores).shape());
    let mut gd = Tensor::zeros(ev.graph.value(ev.vars.deltas).shape());
    for &i in kept {
        let l = &ev.losses[i];
        for (dst, src) in gs.data_mut()[i * cw..(i + 1) * cw].iter_mut().zip(&l.d_scores) {
            *dst = src * scale;
        }
        for (dst, src) in gd.data_mut()[i * dw..(i + 1) * dw].iter_mut().zip(&l.d_deltas) {
            *dst = src * scale;
        }
    }
    ev.graph.backward(vec![(ev.vars.scores, gs), (ev.vars.deltas, gd)])?;
    ev.graph.accumulate_param_grads(&mut det.params)
}

/// Mean loss over the kept RoIs of a batch with a fixed selection; parameter
/// gradients of that loss are added to `det.params`.
pub fn frozen_batch_loss(det: &mut Detector, batch: &[FrozenImage]) -> Result<BatchLoss> {
    let evaluated = batch
        .iter()
        .map(|b| evaluate(det, &b.image, &b.rois))
        .collect::<Result<Vec<_>>>()?;
    finish_batch(det, evaluated, batch.iter().map(|b| b.kept.clone()).collect())
}

fn finish_batch(det: &mut Detector, evaluated: Vec<Evaluated>, kept: Vec<Vec<usize>>) -> Result<BatchLoss> {
    let mut loss = BatchLoss::default();
    for (ev, k) in evaluated.iter().zip(&kept) {
        for &i in k {
            loss.cls += ev.losses[i].cls;
            loss.reg += ev.losses[i].reg;
        }
        loss.kept += k.len();
    }
    if loss.kept == 0 {
        return Err(Error::Data("batch keeps no RoIs".into()));
    }
    let n = loss.kept as f64;
    loss.cls /= n;
    loss.reg /= n;
    let scale = (1.0 / n) as Real;
    for (ev, k) in evaluated.into_iter().zip(&kept) {
        backpropagate(det, ev, k, scale)?;
    }
    Ok(loss)
}

/// Labels proposals, evaluates every RoI and keeps the hardest ones.
fn ohem_batch(det: &mut Detector, images: &[(Tensor, Vec<LabeledRoI>)], keep: usize) -> Result<BatchLoss> {
    let mut evaluated = Vec::with_capacity(images.len());
    let mut kept = Vec::with_capacity(images.len());
    for (image, rois) in images {
        let ev = evaluate(det, image, rois)?;
        let mut scored = rois.clone();
        for (r, l) in scored.iter_mut().zip(&ev.losses) {
            r.loss = l.cls + l.reg;
        }
        kept.push(ohem_select(&scored, keep.min(scored.len())));
        evaluated.push(ev);
    }
    finish_batch(det, evaluated, kept)
}

/// Proposals of image `index` at `iteration`, labeled against its ground truth.
pub fn training_rois(sample: &Sample, proposals: &ProposalConfig, n: usize, seed: u64) -> Vec<LabeledRoI> {
    let boxes = propose(
        &sample.gt_boxes(),
        sample.image.width,
        sample.image.height,
        n,
        proposals,
        seed,
    );
    assign_labels(&boxes, &sample.labeled_gts())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub detector: Detector,
    pub log: Vec<LossRecord>,
}

/// Stepwise training loop. Images are visited in a seeded random order that
/// is reshuffled every epoch.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    detector: Detector,
    sgd: SgdConfig,
    proposals: ProposalConfig,
    seed: u64,
    state: SgdState,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        dataset: &'a Dataset,
        detector: Detector,
        sgd: SgdConfig,
        proposals: ProposalConfig,
        seed: u64,
    ) -> Result<Self> {
        sgd.validate()?;
        if dataset.is_empty() {
            return Err(Error::Data("training needs a non-empty dataset".into()));
        }
        if dataset.num_classes() != detector.head.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the head expects {}",
                dataset.num_classes(),
                detector.head.num_classes
            )));
        }
        let state = SgdState::new(&detector.params);
        Ok(Self {
            dataset,
            detector,
            sgd,
            proposals,
            seed,
            state,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn into_detector(self) -> Detector {
        self.detector
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.dataset.len()).collect();
            let mut r = rng::rng(rng::substream(self.seed, STREAM_ORDER, self.epoch));
            rng::shuffle(&mut r, &mut self.order);
            self.epoch += 1;
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    /// Runs one SGD iteration.
    pub fn step(&mut self) -> Result<LossRecord> {
        let it = self.iteration;
        let diverged = |reason: String| Error::Divergence { iteration: it, reason };
        let mut images = Vec::with_capacity(self.sgd.images_per_batch);
        for j in 0..self.sgd.images_per_batch {
            let idx = self.next_index();
            let sample = &self.dataset.samples[idx];
            let stream = (it * self.sgd.images_per_batch + j) as u64;
            let seed = rng::substream(self.seed, STREAM_PROPOSALS, stream);
            let rois = training_rois(sample, &self.proposals, self.sgd.rois_per_image, seed);
            images.push((sample.tensor(), rois));
        }
        self.detector.params.zero_grads();
        let loss = ohem_batch(&mut self.detector, &images, self.sgd.ohem_keep).map_err(|e| match e {
            Error::NonFinite(m) => diverged(m),
            other => other,
        })?;
        if !loss.total().is_finite() {
            return Err(diverged(format!("loss is {}", loss.total())));
        }
        let lr = self.sgd.lr_at(it);
        sgd_step(&mut self.detector.params, &mut self.state, &self.sgd, lr).map_err(|e| diverged(e.to_string()))?;
        self.iteration += 1;
        Ok(LossRecord {
            iteration: it,
            loss_cls: loss.cls,
            loss_reg: loss.reg,
            loss_total: loss.total(),
            lr,
        })
    }
}

/// Trains for `sgd.iterations` steps; `observe` sees every log record.
pub fn train_with(
    dataset: &Dataset,
    detector: Detector,
    sgd: &SgdConfig,
    proposals: &ProposalConfig,
    seed: u64,
    mut observe: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, detector, sgd.clone(), proposals.clone(), seed)?;
    let mut log = Vec::with_capacity(sgd.iterations);
    for _ in 0..sgd.iterations {
        let rec = trainer.step()?;
        observe(&rec);
        log.push(rec);
    }
    Ok(TrainOutcome {
        detector: trainer.into_detector(),
        log,
    })
}

pub fn train(
    dataset: &Dataset,
    detector: Detector,
    sgd: &SgdConfig,
    proposals: &ProposalConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    train_with(dataset, detector, sgd, proposals, seed, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_samples, SyntheticSpec};
    use crate::head::{BanConfig, ContextSet};
    use crate::model::BackboneConfig;
    use crate::tensor::checkpoint;

    fn tiny() -> (Dataset, Detector) {
        let ds = generate_samples(&SyntheticSpec {
            num_images: 3,
            width: 32,
            height: 32,
            min_size: 8,
            max_size: 16,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let det = Detector::build(
            BackboneConfig {
                in_channels: 3,
                channels: vec![4, 6],
            },
            BanConfig {
                contexts: ContextSet::ALL,
                k: 3,
                num_classes: 3,
                trunk_channels: 6,
                ..BanConfig::default()
            },
            4,
        )
        .unwrap();
        (ds, det)
    }

    fn sgd(lr: f64, iterations: usize) -> SgdConfig {
        SgdConfig {
            lr,
            schedule: vec![],
            iterations,
            rois_per_image: 20,
            ohem_keep: 8,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (ds, det) = tiny();
        let out = train(&ds, det.clone(), &sgd(0.0, 2), &ProposalConfig::default(), 1).unwrap();
        assert_eq!(checkpoint::encode(&out.detector.params), checkpoint::encode(&det.params));
        assert_eq!(out.log.len(), 2);
        assert!(out.log.iter().all(|r| r.loss_total.is_finite() && r.loss_total > 0.0));
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let (ds, det) = tiny();
        let run = |seed| {
            let out = train(&ds, det.clone(), &sgd(0.01, 3), &ProposalConfig::default(), seed).unwrap();
            checkpoint::encode(&out.detector.params)
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let (mut ds, det) = tiny();
        ds.class_names.pop();
        assert!(Trainer::new(&ds, det, sgd(0.1, 1), ProposalConfig::default(), 0).is_err());
    }

    #[test]
    fn background_rois_have_no_regression_loss() {
        let (ds, mut det) = tiny();
        let rois: Vec<LabeledRoI> = training_rois(&ds.samples[0], &ProposalConfig::default(), 20, 3)
            .into_iter()
            .filter(|r| r.label == 0)
            .collect();
        assert!(!rois.is_empty());
        let kept = (0..rois.len()).collect();
        let frozen = FrozenImage {
            image: ds.samples[0].tensor(),
            rois,
            kept,
        };
        let loss = frozen_batch_loss(&mut det, &[frozen]).unwrap();
        assert_eq!(loss.reg, 0.0);
        assert!(loss.cls > 0.0);
    }
}
