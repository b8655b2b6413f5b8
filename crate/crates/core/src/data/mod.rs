//! Detection datasets on disk and the synthetic-shapes generator.
//!
//! A split directory holds `images/<id>.ppm`, `annotations.csv`
//! (`image_id,class_id,x1,y1,x2,y2`, corner pixels, class ids from 1),
//! `classes.txt` (one class name per line, id 1 first) and `manifest.txt`
//! (one image id per line).

pub mod ppm;
pub mod runner;
pub mod synthetic;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::{Real, Tensor};

pub use ppm::RgbImage;
pub use runner::{detect_image, ground_truths, inference_proposals, run_detector, DetectConfig};
pub use synthetic::{generate_dataset, generate_samples, Manifest, SyntheticSpec};

pub const ANNOTATION_HEADER: &str = "image_id,class_id,x1,y1,x2,y2";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtObject {
    /// 1-based foreground class.
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: RgbImage,
    pub objects: Vec<GtObject>,
}

impl Sample {
    /// `[1, 3, H, W]` planar tensor scaled to `[-1, 1]`.
    pub fn tensor(&self) -> Tensor {
        let (w, h) = (self.image.width as usize, self.image.height as usize);
        let plane = w * h;
        let px = &self.image.pixels;
        Tensor::from_fn(&[1, 3, h, w], |i| {
            let (c, p) = (i / plane, i % plane);
            (Real::from(px[p * 3 + c]) - 127.5) / 127.5
        })
    }

    pub fn gt_boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn labeled_gts(&self) -> Vec<(usize, BBox)> {
        self.objects.iter().map(|o| (o.class_id, o.bbox)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("images"))?;
        for s in &self.samples {
            s.image.save(&dir.join("images").join(format!("{}.ppm", s.id)))?;
        }
        std::fs::write(dir.join("annotations.csv"), annotations_csv(&self.samples))?;
        std::fs::write(dir.join("classes.txt"), lines(self.class_names.iter()))?;
        std::fs::write(dir.join("manifest.txt"), lines(self.samples.iter().map(|s| &s.id)))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::Data(format!("{}: {e}", dir.join(name).display())))
        };
        let class_names: Vec<String> = non_empty_lines(&read("classes.txt")?);
        let ids = non_empty_lines(&read("manifest.txt")?);
        let mut objects = parse_annotations(&read("annotations.csv")?, class_names.len())?;
        let samples = ids
            .into_iter()
            .map(|id| {
                let image = RgbImage::load(&dir.join("images").join(format!("{id}.ppm")))?;
                let objects = objects.remove(&id).unwrap_or_default();
                Ok(Sample { id, image, objects })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(orphan) = objects.keys().next() {
            return Err(Error::Data(format!("annotation for unknown image {orphan:?}")));
        }
        Ok(Self { class_names, samples })
    }
}

fn lines<S: AsRef<str>>(items: impl Iterator<Item = S>) -> String {
    items.fold(String::new(), |mut acc, s| {
        acc.push_str(s.as_ref());
        acc.push('\n');
        acc
    })
}

fn non_empty_lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

fn fmt_coord(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

pub fn annotations_csv(samples: &[Sample]) -> String {
    let mut out = format!("{ANNOTATION_HEADER}\n");
    for s in samples {
        for o in &s.objects {
            let [x1, y1, x2, y2] = o.bbox.corners().map(fmt_coord);
            writeln!(out, "{},{},{x1},{y1},{x2},{y2}", s.id, o.class_id).expect("string write");
        }
    }
    out
}

/// Annotations grouped by image id, in file order.
pub fn parse_annotations(text: &str, num_classes: usize) -> Result<HashMap<String, Vec<GtObject>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ANNOTATION_HEADER => {}
        _ => return Err(Error::Data(format!("annotation header must be {ANNOTATION_HEADER:?}"))),
    }
    let mut out: HashMap<String, Vec<GtObject>> = HashMap::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("annotations line {}: {what}", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let class_id: usize = f[1].parse().map_err(|_| bad("bad class_id"))?;
        if class_id == 0 || class_id > num_classes {
            return Err(bad("class_id out of range"));
        }
        let c: Vec<f64> = f[2..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad coordinate")))
            .collect::<Result<_>>()?;
        let bbox = BBox::from_corners(c[0], c[1], c[2], c[3]).map_err(|e| bad(&e.to_string()))?;
        out.entry(f[0].to_string()).or_default().push(GtObject { class_id, bbox });
    }
    Ok(out)
}
