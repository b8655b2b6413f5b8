//! The operations behind the `ban` binary. Each reads a resolved
//! [`RunConfig`] and writes its artifacts under the configured directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{RunConfig, Split};
use crate::data::{generate_dataset, ground_truths, inference_proposals, run_detector, Dataset, Manifest, RgbImage};
use crate::error::{Error, Result};
use crate::eval::{detections_csv, summarize, EvalSummary};
use crate::head::{contribution_analysis, local_activation_map, ContributionReport, ContributionSample};
use crate::head::{ContextSet, HeadMode};
use crate::model::Detector;
use crate::tensor::{checkpoint, Real, Tensor};
use crate::training::{assign_labels, loss_log_csv, train_with, LossRecord};

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let dir = cfg.data_dir().join(split.dir_name());
    let ds = Dataset::load(&dir)?;
    let expected = cfg.class_names()?;
    if ds.class_names != expected {
        return Err(Error::Config(format!(
            "dataset at {} has classes {:?}, config has {expected:?}",
            dir.display(),
            ds.class_names
        )));
    }
    Ok(ds)
}

/// Loads the configured checkpoint into a detector shaped by the config.
pub fn load_detector(cfg: &RunConfig) -> Result<Detector> {
    let params = checkpoint::load(&cfg.checkpoint_path())?;
    Detector::with_params(cfg.backbone()?, cfg.ban()?, params)
}

#[derive(Clone, Debug)]
pub struct GenDataReport {
    pub dir: PathBuf,
    pub train: Manifest,
    pub test: Manifest,
}

/// Writes `train/` and `test/` splits under `data_dir`.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenDataReport> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    prepare_dir(&dir)?;
    let train = generate_dataset(&cfg.synthetic(Split::Train)?, &dir.join("train"))?;
    let test = generate_dataset(&cfg.synthetic(Split::Test)?, &dir.join("test"))?;
    write(&dir, "config.txt", cfg.echo())?;
    Ok(GenDataReport { dir, train, test })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub log: Vec<LossRecord>,
}

/// Trains from the configured seed; the checkpoint and loss log depend only on
/// the config and the dataset.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let data = load_split(cfg, Split::Train)?;
    let out_dir = cfg.out_dir();
    prepare_dir(&out_dir)?;
    write(&out_dir, "config.txt", cfg.echo())?;
    let start = Instant::now();
    let mut timing = String::new();
    let detector = Detector::build(cfg.backbone()?, cfg.ban()?, cfg.seed()?)?;
    let outcome = train_with(&data, detector, &cfg.sgd()?, &cfg.proposals()?, cfg.seed()?, |r| {
        if (r.iteration + 1) % 100 == 0 {
            let _ = writeln!(
                timing,
                "iteration {} loss {:.4} elapsed {:.1}s",
                r.iteration + 1,
                r.loss_total,
                start.elapsed().as_secs_f64()
            );
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(timing, "aborted: {e}");
            write(&out_dir, "train.log", &timing)?;
            return Err(e);
        }
    };
    let _ = writeln!(timing, "finished in {:.1}s", start.elapsed().as_secs_f64());
    let checkpoint = out_dir.join("checkpoint.bin");
    checkpoint::save(&outcome.detector.params, &checkpoint)?;
    write(&out_dir, "loss.csv", loss_log_csv(&outcome.log))?;
    write(&out_dir, "train.log", &timing)?;
    Ok(TrainReport {
        checkpoint,
        log: outcome.log,
    })
}

/// Runs the detector over the test split and scores it.
pub fn evaluate(cfg: &RunConfig, detector: &Detector, test: &Dataset) -> Result<(EvalSummary, String)> {
    let dets = run_detector(detector, test, &cfg.detect()?)?;
    let summary = summarize(&dets, &ground_truths(test), test.num_classes());
    Ok((summary, detections_csv(&dets)))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    let test = load_split(cfg, Split::Test)?;
    let detector = load_detector(cfg)?;
    let out_dir = cfg.out_dir();
    prepare_dir(&out_dir)?;
    write(&out_dir, "eval_config.txt", cfg.echo())?;
    let (summary, dets) = evaluate(cfg, &detector, &test)?;
    write(&out_dir, "detections.csv", dets)?;
    write(&out_dir, "metrics.txt", summary.text(&test.class_names))?;
    write(
        &out_dir,
        "metrics.csv",
        format!(
            "map50,map70,map50_area,map_coco\n{:.6},{:.6},{:.6},{:.6}\n",
            summary.map50.map, summary.map70.map, summary.map50_area.map, summary.coco
        ),
    )?;
    write(&out_dir, "per_class.csv", summary.per_class_csv(&test.class_names))?;
    Ok(summary)
}

/// Head evaluations on inference proposals, labeled against the ground truth.
pub fn contribution_samples(cfg: &RunConfig, detector: &Detector, data: &Dataset, images: usize) -> Result<Vec<ContributionSample>> {
    let detect = cfg.detect()?;
    let mut samples = Vec::new();
    for (i, s) in data.samples.iter().take(images).enumerate() {
        let proposals = inference_proposals(s, i, &detect);
        let labels = assign_labels(&proposals, &s.labeled_gts());
        let outputs = detector.forward(&s.tensor(), &proposals)?;
        samples.extend(outputs.into_iter().zip(labels).map(|(output, l)| ContributionSample {
            output,
            label: l.label,
        }));
    }
    Ok(samples)
}

pub fn contribution_report(cfg: &RunConfig, detector: &Detector, data: &Dataset) -> Result<ContributionReport> {
    let samples = contribution_samples(cfg, detector, data, cfg.parse("analysis_images")?)?;
    let names: Vec<&str> = data.class_names.iter().map(String::as_str).collect();
    contribution_analysis(&samples, &detector.head, &names)
}

/// mAP of the context sets in the ablation grid at the reference scale, for
/// side-by-side printing: `(contexts, mAP@0.5, mAP@0.7)` in percent.
pub const REFERENCE_ABLATION: [(&str, f64, f64); 6] = [
    ("none", 79.54, 61.95),
    ("S", 80.23, 62.84),
    ("V", 80.01, 62.13),
    ("B", 79.80, 63.23),
    ("S,V", 80.39, 63.36),
    ("S,V,B", 80.75, 64.66),
];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub contexts: ContextSet,
    pub map50: f64,
    pub map70: f64,
}

/// Trains and evaluates one detector per context set with the config's seed.
pub fn run_ablation(cfg: &RunConfig, train: &Dataset, test: &Dataset, sets: &[ContextSet]) -> Result<Vec<AblationRow>> {
    sets.iter()
        .map(|&contexts| {
            let mut run = cfg.clone();
            run.set("contexts", &contexts.to_string())?;
            let detector = train_detector(&run, train)?;
            let (summary, _) = evaluate(&run, &detector, test)?;
            Ok(AblationRow {
                contexts,
                map50: summary.map50.map,
                map70: summary.map70.map,
            })
        })
        .collect()
}

/// Trains a fresh detector from the config without touching the filesystem.
pub fn train_detector(cfg: &RunConfig, train: &Dataset) -> Result<Detector> {
    let detector = Detector::build(cfg.backbone()?, cfg.ban()?, cfg.seed()?)?;
    Ok(train_with(train, detector, &cfg.sgd()?, &cfg.proposals()?, cfg.seed()?, |_| {})?.detector)
}

/// CSV of ablation results with the reference values and the change relative
/// to the context-free row.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let base = rows.iter().find(|r| r.contexts == ContextSet::NONE).cloned();
    let ref_base = REFERENCE_ABLATION[0];
    let mut out = String::from("contexts,map50,map70,delta50,delta70,reference_map50,reference_map70,reference_delta50,reference_delta70\n");
    for r in rows {
        let name = r.contexts.to_string();
        let (d50, d70) = base
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |b| (100.0 * (r.map50 - b.map50), 100.0 * (r.map70 - b.map70)));
        let reference = REFERENCE_ABLATION.iter().find(|(n, _, _)| *n == name);
        let (r50, r70, rd50, rd70) = reference.map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |&(_, a, b)| {
            (a, b, a - ref_base.1, b - ref_base.2)
        });
        let _ = writeln!(
            out,
            "\"{name}\",{:.2},{:.2},{d50:+.2},{d70:+.2},{r50:.2},{r70:.2},{rd50:+.2},{rd70:+.2}",
            100.0 * r.map50,
            100.0 * r.map70
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct AnalyzeReport {
    pub contributions: ContributionReport,
    pub ablation: Option<Vec<AblationRow>>,
}

/// Contribution tables for the configured checkpoint, plus the ablation grid
/// when `ablation_grid = true`.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeReport> {
    cfg.validate()?;
    let test = load_split(cfg, Split::Test)?;
    let detector = load_detector(cfg)?;
    let out_dir = cfg.out_dir();
    prepare_dir(&out_dir)?;
    write(&out_dir, "analyze_config.txt", cfg.echo())?;
    let contributions = contribution_report(cfg, &detector, &test)?;
    write(&out_dir, "contribution_classification.csv", contributions.classification_csv())?;
    write(&out_dir, "contribution_localization.csv", contributions.localization_csv())?;
    let ablation = if cfg.parse("ablation_grid")? {
        let train = load_split(cfg, Split::Train)?;
        let rows = run_ablation(cfg, &train, &test, &ContextSet::ablation_grid())?;
        write(&out_dir, "ablation.csv", ablation_csv(&rows))?;
        Some(rows)
    } else {
        None
    };
    Ok(AnalyzeReport { contributions, ablation })
}

/// Renders a `[k, k]` map as an image `scale` pixels per cell: white at zero,
/// red for positive and blue for negative values, saturating at `max_abs`.
pub fn render_heatmap(map: &Tensor, max_abs: Real, scale: u32) -> Result<RgbImage> {
    let [rows, cols] = *map.shape() else {
        return Err(Error::Dimension(format!("heat map must be 2-d, got {:?}", map.shape())));
    };
    let mut img = RgbImage::new(cols as u32 * scale, rows as u32 * scale);
    for r in 0..rows {
        for c in 0..cols {
            let t = if max_abs > 0.0 {
                f64::from((map.at(&[r, c]) / max_abs).clamp(-1.0, 1.0))
            } else {
                0.0
            };
            let fade = (255.0 * (1.0 - t.abs())).round() as u8;
            let rgb = if t >= 0.0 { [255, fade, fade] } else { [fade, fade, 255] };
            for y in 0..scale {
                for x in 0..scale {
                    img.put(c as u32 * scale + x, r as u32 * scale + y, rgb);
                }
            }
        }
    }
    Ok(img)
}

/// The proposal's ground-truth class, or its best-scoring foreground class
/// when it is background.
fn visualized_class(label: usize, scores: &[Real]) -> usize {
    if label > 0 {
        return label;
    }
    (1..scores.len())
        .fold(None::<usize>, |best, c| match best {
            Some(b) if scores[b] >= scores[c] => Some(b),
            _ => Some(c),
        })
        .unwrap_or(0)
}

#[derive(Clone, Debug)]
pub struct VisualizeReport {
    pub class_id: usize,
    pub files: Vec<PathBuf>,
}

/// Local activation heat maps of one proposal for every configured context,
/// plus its per-sub-network contribution bars.
pub fn cmd_visualize(cfg: &RunConfig) -> Result<VisualizeReport> {
    cfg.validate()?;
    let test = load_split(cfg, Split::Test)?;
    let detector = load_detector(cfg)?;
    if detector.head.head_mode != HeadMode::PsRoi {
        return Err(Error::Config("visualize requires head_mode = psroi".into()));
    }
    let image_id: String = cfg.parse("visualize_image")?;
    let (index, sample) = test
        .samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.id == image_id)
        .ok_or_else(|| Error::Data(format!("no test image with id {image_id:?}")))?;
    let proposals = inference_proposals(sample, index, &cfg.detect()?);
    let p: usize = cfg.parse("visualize_proposal")?;
    let proposal = *proposals
        .get(p)
        .ok_or_else(|| Error::Config(format!("visualize_proposal {p} out of range ({} proposals)", proposals.len())))?;
    let output = detector.forward(&sample.tensor(), &[proposal])?.remove(0);
    let label = assign_labels(&[proposal], &sample.labeled_gts())[0].label;
    let class_id = visualized_class(label, &output.class_scores);
    let features = detector.features(&sample.tensor())?;
    let maps = detector
        .head
        .subnets()
        .into_iter()
        .map(|kind| {
            let m = local_activation_map(
                &detector.params,
                &features,
                &proposal,
                kind,
                class_id,
                &detector.head,
                detector.spatial_scale(),
            )?;
            Ok((kind, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_abs = maps
        .iter()
        .flat_map(|(_, m)| m.data().iter().map(|v| v.abs()))
        .fold(0.0, Real::max);
    let out_dir = cfg.out_dir().join("visualize");
    prepare_dir(&out_dir)?;
    write(&out_dir, "visualize_config.txt", cfg.echo())?;
    let scale: u32 = cfg.parse("heatmap_scale")?;
    let mut files = Vec::new();
    for (kind, m) in &maps {
        let path = out_dir.join(format!("heatmap_{}.ppm", kind.slug()));
        render_heatmap(m, max_abs, scale)?.save(&path)?;
        files.push(path);
    }
    let names: Vec<&str> = test.class_names.iter().map(String::as_str).collect();
    let single = contribution_analysis(&[ContributionSample { output, label: class_id }], &detector.head, &names)?;
    let mut bars = String::from("subnet,classification,cx,cy,width,height\n");
    let cls = single.classification[class_id].clone().unwrap_or_default();
    for (i, kind) in single.subnets.iter().enumerate() {
        let _ = write!(bars, "{},{}", kind.table_name(), cls[i]);
        for row in &single.localization {
            match row {
                Some(r) => {
                    let _ = write!(bars, ",{}", r[i]);
                }
                None => bars.push_str(",nan"),
            }
        }
        bars.push('\n');
    }
    files.push(write(&out_dir, "contribution_bars.csv", bars)?);
    Ok(VisualizeReport { class_id, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_scaling_and_colors() {
        let m = Tensor::new(&[2, 2], vec![1.0, -1.0, 0.0, 0.5]).unwrap();
        let img = render_heatmap(&m, 1.0, 3).unwrap();
        assert_eq!((img.width, img.height), (6, 6));
        assert_eq!(img.get(0, 0), [255, 0, 0]);
        assert_eq!(img.get(5, 2), [0, 0, 255]);
        assert_eq!(img.get(1, 4), [255, 255, 255]);
        assert_eq!(img.get(4, 4), [255, 128, 128]);
        assert!(render_heatmap(&Tensor::zeros(&[4]), 1.0, 2).is_err());
    }

    #[test]
    fn ablation_csv_reports_deltas() {
        let rows = vec![
            AblationRow {
                contexts: ContextSet::NONE,
                map50: 0.5,
                map70: 0.25,
            },
            AblationRow {
                contexts: ContextSet::ALL,
                map50: 0.6,
                map70: 0.25,
            },
        ];
        let csv = ablation_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "\"none\",50.00,25.00,+0.00,+0.00,79.54,61.95,+0.00,+0.00");
        assert_eq!(lines[2], "\"S,V,B\",60.00,25.00,+10.00,+0.00,80.75,64.66,+1.21,+2.71");
    }
}
