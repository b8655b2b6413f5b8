//! Synthetic shapes: filled circles, squares and triangles on a noisy background.
//!
//! Placement and rasterization use integer arithmetic only, and every draw
//! comes from [`crate::rng`], so the bytes do not depend on the platform.

use std::path::Path;

use super::{Dataset, GtObject, RgbImage, Sample};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::rng::{self, uniform_int, Rng};

pub const DEFAULT_CLASSES: [&str; 3] = ["circle", "square", "triangle"];

const PLACEMENT_ATTEMPTS: usize = 100;
const STREAM_IMAGES: u64 = 0x1a6e;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_images: usize,
    pub width: u32,
    pub height: u32,
    /// Any non-empty prefix of [`DEFAULT_CLASSES`].
    pub classes: Vec<String>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object side length range in pixels, inclusive.
    pub min_size: u32,
    pub max_size: u32,
    /// Per-channel noise is uniform in `[-amp, amp]`.
    pub noise_amplitude: u8,
    /// Largest IoU allowed between two objects of one image.
    pub max_overlap: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_images: 500,
            width: 128,
            height: 128,
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            min_objects: 1,
            max_objects: 4,
            min_size: 16,
            max_size: 48,
            noise_amplitude: 20,
            max_overlap: 0.5,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.classes.is_empty() || self.classes.len() > DEFAULT_CLASSES.len() {
            return err(format!("between 1 and {} classes are supported", DEFAULT_CLASSES.len()));
        }
        if let Some((c, _)) = self.classes.iter().zip(DEFAULT_CLASSES).find(|(c, d)| c != d) {
            return err(format!("class {c:?} has no renderer; classes must follow {DEFAULT_CLASSES:?}"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return err(format!("bad object count range {}..={}", self.min_objects, self.max_objects));
        }
        if self.min_size < 2 || self.min_size > self.max_size || self.max_size > self.width.min(self.height) {
            return err(format!("bad object size range {}..={}", self.min_size, self.max_size));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return err(format!("max_overlap must be in [0, 1], got {}", self.max_overlap));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug)]
struct Placed {
    shape: Shape,
    class_id: usize,
    x1: u32,
    y1: u32,
    size: u32,
    color: [u8; 3],
}

impl Placed {
    fn bbox(&self) -> BBox {
        let (x1, y1, s) = (f64::from(self.x1), f64::from(self.y1), f64::from(self.size));
        BBox::from_corners(x1, y1, x1 + s, y1 + s).expect("positive size")
    }

    /// Pixel-center test in doubled integer coordinates.
    fn covers(&self, x: u32, y: u32) -> bool {
        if x < self.x1 || y < self.y1 || x >= self.x1 + self.size || y >= self.y1 + self.size {
            return false;
        }
        let s = i64::from(self.size);
        let u = 2 * i64::from(x - self.x1) + 1 - s;
        let v = 2 * i64::from(y - self.y1) + 1 - s;
        match self.shape {
            Shape::Square => true,
            Shape::Circle => u * u + v * v <= s * s,
            // apex at the top edge, base on the bottom edge
            Shape::Triangle => 2 * u.abs() <= v + s,
        }
    }
}

fn color(r: &mut Rng, lo: i64, hi: i64) -> [u8; 3] {
    [0; 3].map(|_| uniform_int(r, lo, hi) as u8)
}

fn generate_image(spec: &SyntheticSpec, index: usize) -> Sample {
    let mut r = rng::rng(rng::substream(spec.seed, STREAM_IMAGES, index as u64));
    let count = uniform_int(&mut r, spec.min_objects as i64, spec.max_objects as i64) as usize;
    let mut placed: Vec<Placed> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = uniform_int(&mut r, 0, spec.classes.len() as i64 - 1) as usize;
        let shape = [Shape::Circle, Shape::Square, Shape::Triangle][class];
        let color = color(&mut r, 150, 255);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let size = uniform_int(&mut r, i64::from(spec.min_size), i64::from(spec.max_size)) as u32;
            let x1 = uniform_int(&mut r, 0, i64::from(spec.width - size)) as u32;
            let y1 = uniform_int(&mut r, 0, i64::from(spec.height - size)) as u32;
            let cand = Placed {
                shape,
                class_id: class + 1,
                x1,
                y1,
                size,
                color,
            };
            if placed.iter().all(|p| iou(&p.bbox(), &cand.bbox()) <= spec.max_overlap) {
                placed.push(cand);
                break;
            }
        }
    }
    let background = color(&mut r, 0, 90);
    let amp = i64::from(spec.noise_amplitude);
    let mut image = RgbImage::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let base = placed
                .iter()
                .rev()
                .find(|p| p.covers(x, y))
                .map_or(background, |p| p.color);
            let px = base.map(|c| (i64::from(c) + uniform_int(&mut r, -amp, amp)).clamp(0, 255) as u8);
            image.put(x, y, px);
        }
    }
    Sample {
        id: format!("{index:05}"),
        image,
        objects: placed
            .iter()
            .map(|p| GtObject {
                class_id: p.class_id,
                bbox: p.bbox(),
            })
            .collect(),
    }
}

/// Generates the dataset in memory.
pub fn generate_samples(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    Ok(Dataset {
        class_names: spec.classes.clone(),
        samples: (0..spec.num_images).map(|i| generate_image(spec, i)).collect(),
    })
}

/// Summary of a written split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub image_ids: Vec<String>,
    pub num_objects: usize,
}

/// Writes a split to `out_dir`; the bytes depend only on `spec`.
pub fn generate_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    let ds = generate_samples(spec)?;
    ds.save(out_dir)?;
    Ok(Manifest {
        image_ids: ds.samples.iter().map(|s| s.id.clone()).collect(),
        num_objects: ds.samples.iter().map(|s| s.objects.len()).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_images: 6,
            width: 64,
            height: 48,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_samples(&small(1)).unwrap();
        assert_eq!(a, generate_samples(&small(1)).unwrap());
        assert_ne!(a, generate_samples(&small(2)).unwrap());
    }

    #[test]
    fn boxes_inside_and_overlap_bounded() {
        let ds = generate_samples(&small(5)).unwrap();
        for s in &ds.samples {
            assert!(!s.objects.is_empty() && s.objects.len() <= 4);
            for (i, o) in s.objects.iter().enumerate() {
                let [x1, y1, x2, y2] = o.bbox.corners();
                assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 64.0 && y2 <= 48.0);
                assert!((1..=3).contains(&o.class_id));
                for p in &s.objects[..i] {
                    assert!(iou(&p.bbox, &o.bbox) <= 0.5);
                }
            }
        }
    }

    #[test]
    fn one_object_per_image() {
        let spec = SyntheticSpec {
            min_objects: 1,
            max_objects: 1,
            ..small(3)
        };
        let ds = generate_samples(&spec).unwrap();
        assert_eq!(ds.samples.iter().map(|s| s.objects.len()).sum::<usize>(), 6);
    }

    #[test]
    fn shapes_rasterize_as_expected() {
        let mk = |shape| Placed {
            shape,
            class_id: 1,
            x1: 10,
            y1: 10,
            size: 10,
            color: [0; 3],
        };
        let count = |p: Placed| (0..40).flat_map(|y| (0..40).map(move |x| (x, y))).filter(|&(x, y)| p.covers(x, y)).count();
        assert_eq!(count(mk(Shape::Square)), 100);
        let circle = count(mk(Shape::Circle));
        assert!((70..=82).contains(&circle), "circle area {circle}");
        let tri = count(mk(Shape::Triangle));
        assert!((45..=55).contains(&tri), "triangle area {tri}");
        assert!(!mk(Shape::Triangle).covers(10, 10) && mk(Shape::Triangle).covers(14, 19));
    }

    #[test]
    fn rejects_unknown_class() {
        let spec = SyntheticSpec {
            classes: vec!["hexagon".into()],
            ..small(1)
        };
        assert!(spec.validate().is_err());
    }
}
