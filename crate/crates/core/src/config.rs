//! Flat `key = value` run configuration.
//!
//! Every key has a default. Files may contain blank lines and `#` comments;
//! unknown keys and malformed values are rejected. Later assignments override
//! earlier ones, so callers apply the file first and command-line overrides
//! after it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DetectConfig, SyntheticSpec};
use crate::error::{Error, Result};
use crate::head::{BanConfig, ContextSet, HeadMode};
use crate::model::BackboneConfig;
use crate::rng;
use crate::training::{ProposalConfig, SgdConfig};

/// `(key, default, description)` in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "42", "root of every random stream"),
    ("data_dir", "data", "dataset root holding train/ and test/"),
    ("out_dir", "runs/default", "directory for command outputs"),
    ("checkpoint", "", "checkpoint to read; empty means <out_dir>/checkpoint.bin"),
    ("threads", "1", "worker threads (training and evaluation run single-threaded)"),
    ("num_train_images", "500", "images in the training split"),
    ("num_test_images", "100", "images in the test split"),
    ("image_width", "128", "image width in pixels"),
    ("image_height", "128", "image height in pixels"),
    ("classes", "circle,square,triangle", "foreground classes"),
    ("min_objects", "1", "fewest objects per image"),
    ("max_objects", "4", "most objects per image"),
    ("min_object_size", "16", "smallest object side in pixels"),
    ("max_object_size", "48", "largest object side in pixels"),
    ("noise_amplitude", "20", "per-channel uniform noise bound"),
    ("max_object_overlap", "0.5", "largest IoU between objects of one image"),
    ("backbone_channels", "16,32,64,128", "conv block widths"),
    ("contexts", "S,V,B", "context families: none or a list of S, V, B"),
    ("k", "5", "pooling bins per axis"),
    ("head_mode", "psroi", "psroi or roi"),
    ("shared_features", "true", "one feature conv for all sub-networks"),
    ("trunk_channels", "64", "feature conv width in psroi mode"),
    ("roi_feature_channels", "32", "feature conv width in roi mode"),
    ("regression_dims", "4", "regression outputs per RoI"),
    ("lr", "0.01", "base learning rate"),
    ("lr_schedule", "1400:0.001", "iteration:lr steps separated by commas"),
    ("momentum", "0.9", "SGD momentum"),
    ("weight_decay", "0.0001", "L2 weight decay"),
    ("iterations", "2000", "training iterations"),
    ("images_per_batch", "2", "images per iteration"),
    ("rois_per_image", "300", "proposals per image for training and inference"),
    ("ohem_keep", "128", "hard RoIs kept per image"),
    ("proposals_per_gt", "32", "jittered proposals per ground-truth box"),
    ("proposal_center_jitter", "0.25", "center jitter as a fraction of box size"),
    ("proposal_scale_jitter", "0.3", "bound on log size jitter"),
    ("proposal_nms", "0.3", "IoU bound between random proposals"),
    ("proposal_min_size", "8", "smallest random proposal side"),
    ("nms_thresh", "0.3", "per-class NMS threshold at inference"),
    ("max_detections", "100", "detections kept per image"),
    ("analysis_images", "100", "test images used for contribution tables"),
    ("ablation_grid", "false", "analyze: also train and evaluate the six context sets"),
    ("visualize_image", "00000", "test image id for heat maps"),
    ("visualize_proposal", "0", "index of the proposal to visualize"),
    ("heatmap_scale", "16", "integer upscaling of k x k heat maps"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(_, d, _)| d.to_string()).collect(),
        }
    }
}

fn slot(key: &str) -> Result<usize> {
    KEYS.iter()
        .position(|(k, _, _)| *k == key)
        .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Result<&str> {
        Ok(&self.values[slot(key)?])
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = slot(key)?;
        self.values[i] = value.trim().to_string();
        Ok(())
    }

    /// Applies `key=value` assignments from config text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Parses every typed view so bad values surface before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.synthetic(Split::Train)?.validate()?;
        self.backbone()?.validate()?;
        self.ban()?.validate()?;
        self.sgd()?.validate()?;
        self.proposals()?;
        self.detect()?;
        self.parse::<usize>("analysis_images")?;
        self.parse::<bool>("ablation_grid")?;
        self.parse::<usize>("visualize_proposal")?;
        if self.parse::<u32>("heatmap_scale")? == 0 {
            return Err(Error::Config("heatmap_scale must be positive".into()));
        }
        if self.parse::<usize>("threads")? == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Resolved configuration, one `key = value` line per key.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for ((k, _, _), v) in KEYS.iter().zip(&self.values) {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key)?;
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(&self.values[slot("data_dir").expect("known key")])
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.values[slot("out_dir").expect("known key")])
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match self.get("checkpoint").expect("known key") {
            "" => self.out_dir().join("checkpoint.bin"),
            p => PathBuf::from(p),
        }
    }

    pub fn class_names(&self) -> Result<Vec<String>> {
        self.list("classes")
    }

    pub fn synthetic(&self, split: Split) -> Result<SyntheticSpec> {
        let seed = self.seed()?;
        let (num_images, seed) = match split {
            Split::Train => (self.parse("num_train_images")?, seed),
            Split::Test => (self.parse("num_test_images")?, rng::substream(seed, 0x7e57, 0)),
        };
        Ok(SyntheticSpec {
            num_images,
            width: self.parse("image_width")?,
            height: self.parse("image_height")?,
            classes: self.class_names()?,
            min_objects: self.parse("min_objects")?,
            max_objects: self.parse("max_objects")?,
            min_size: self.parse("min_object_size")?,
            max_size: self.parse("max_object_size")?,
            noise_amplitude: self.parse("noise_amplitude")?,
            max_overlap: self.parse("max_object_overlap")?,
            seed,
        })
    }

    pub fn backbone(&self) -> Result<BackboneConfig> {
        Ok(BackboneConfig {
            in_channels: 3,
            channels: self.list("backbone_channels")?,
        })
    }

    pub fn ban(&self) -> Result<BanConfig> {
        Ok(BanConfig {
            contexts: self.parse::<String>("contexts")?.parse::<ContextSet>()?,
            k: self.parse("k")?,
            head_mode: self.get("head_mode")?.parse::<HeadMode>()?,
            shared_features: self.parse("shared_features")?,
            num_classes: self.class_names()?.len(),
            regression_dims: self.parse("regression_dims")?,
            trunk_channels: self.parse("trunk_channels")?,
            roi_feature_channels: self.parse("roi_feature_channels")?,
        })
    }

    pub fn sgd(&self) -> Result<SgdConfig> {
        let schedule = self
            .list::<String>("lr_schedule")?
            .iter()
            .map(|step| {
                let bad = || Error::Config(format!("lr_schedule: bad step {step:?}, expected iteration:lr"));
                let (at, lr) = step.split_once(':').ok_or_else(bad)?;
                Ok((at.trim().parse().map_err(|_| bad())?, lr.trim().parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SgdConfig {
            lr: self.parse("lr")?,
            momentum: self.parse("momentum")?,
            weight_decay: self.parse("weight_decay")?,
            schedule,
            iterations: self.parse("iterations")?,
            images_per_batch: self.parse("images_per_batch")?,
            rois_per_image: self.parse("rois_per_image")?,
            ohem_keep: self.parse("ohem_keep")?,
        })
    }

    pub fn proposals(&self) -> Result<ProposalConfig> {
        Ok(ProposalConfig {
            per_gt: self.parse("proposals_per_gt")?,
            center_jitter: self.parse("proposal_center_jitter")?,
            scale_jitter: self.parse("proposal_scale_jitter")?,
            nms_thresh: self.parse("proposal_nms")?,
            min_size: self.parse("proposal_min_size")?,
        })
    }

    pub fn detect(&self) -> Result<DetectConfig> {
        Ok(DetectConfig {
            rois_per_image: self.parse("rois_per_image")?,
            nms_thresh: self.parse("nms_thresh")?,
            max_detections: self.parse("max_detections")?,
            proposals: self.proposals()?,
            seed: self.seed()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}
