use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ban::data::RgbImage;

const TINY: &str = "\
num_train_images = 6
num_test_images = 3
image_width = 40
image_height = 40
min_object_size = 10
max_object_size = 16
backbone_channels = 3,4
trunk_channels = 4
roi_feature_channels = 2
k = 3
iterations = 3
rois_per_image = 24
ohem_keep = 8
proposals_per_gt = 6
analysis_images = 3
lr_schedule =
";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("tiny.cfg"), TINY).unwrap();
        ws
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ban"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn with_data(&self) -> &Self {
        self.ok(&["gen-data", "--config", "tiny.cfg", "--out", "data"]);
        self
    }
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn lines(path: PathBuf) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn gen_data_is_byte_deterministic() {
    let ws = Workspace::new();
    ws.ok(&["gen-data", "--config", "tiny.cfg", "--out", "a"]);
    let first = tree_bytes(&ws.path("a"));
    ws.ok(&["gen-data", "--config", "tiny.cfg", "--out", "a"]);
    assert_eq!(first, tree_bytes(&ws.path("a")));
    ws.ok(&["gen-data", "--config", "tiny.cfg", "--out", "b"]);
    assert_eq!(tree_bytes(&ws.path("a/train")), tree_bytes(&ws.path("b/train")));
    ws.ok(&["gen-data", "--config", "tiny.cfg", "--out", "c", "--seed", "7"]);
    assert_ne!(tree_bytes(&ws.path("a/train")), tree_bytes(&ws.path("c/train")));
    assert_eq!(lines(ws.path("a/train/manifest.txt")).len(), 6);
    assert_eq!(lines(ws.path("a/test/manifest.txt")).len(), 3);
    assert_eq!(lines(ws.path("a/train/annotations.csv"))[0], "image_id,class_id,x1,y1,x2,y2");
}

#[test]
fn errors_are_one_machine_parsable_line() {
    let ws = Workspace::new();
    fs::write(ws.path("blocker"), "").unwrap();
    let out = ws.run(&["gen-data", "--config", "tiny.cfg", "--out", "blocker/sub"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: io: "), "{err}");

    fs::write(ws.path("bad.cfg"), "no_such_key = 1\n").unwrap();
    let out = ws.run(&["train", "--config", "bad.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: config: "));

    let out = ws.run(&["eval", "--config", "tiny.cfg", "--checkpoint", "missing.bin"]);
    assert!(!out.status.success());
}

#[test]
fn train_is_reproducible_and_logs_every_iteration() {
    let ws = Workspace::new();
    ws.with_data();
    ws.ok(&["train", "--config", "tiny.cfg", "--out", "r1"]);
    ws.ok(&["train", "--config", "tiny.cfg", "--out", "r2"]);
    let ckpt = fs::read(ws.path("r1/checkpoint.bin")).unwrap();
    assert_eq!(ckpt, fs::read(ws.path("r2/checkpoint.bin")).unwrap());
    assert_eq!(fs::read(ws.path("r1/loss.csv")).unwrap(), fs::read(ws.path("r2/loss.csv")).unwrap());
    let log = lines(ws.path("r1/loss.csv"));
    assert_eq!(log[0], "iteration,loss_cls,loss_reg,loss_total,lr");
    assert_eq!(log.len(), 1 + 3);
    let echoed = fs::read_to_string(ws.path("r1/config.txt")).unwrap();
    assert!(echoed.contains("iterations = 3\n") && echoed.contains("seed = 42\n"));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let ws = Workspace::new();
    ws.with_data();
    ws.ok(&["train", "--config", "tiny.cfg", "--out", "init", "--set", "iterations=0"]);
    ws.ok(&["train", "--config", "tiny.cfg", "--out", "zero", "--set", "lr=0"]);
    assert_eq!(
        fs::read(ws.path("init/checkpoint.bin")).unwrap(),
        fs::read(ws.path("zero/checkpoint.bin")).unwrap()
    );
}

#[test]
fn eval_analyze_visualize_outputs() {
    let ws = Workspace::new();
    ws.with_data();
    ws.ok(&["train", "--config", "tiny.cfg", "--out", "run"]);
    let text = ws.ok(&["eval", "--config", "tiny.cfg", "--out", "run"]);
    assert!(text.contains("mAP@0.5"));
    let per_class = lines(ws.path("run/per_class.csv"));
    assert_eq!(per_class.len(), 1 + 3);
    assert_eq!(lines(ws.path("run/metrics.csv"))[0], "map50,map70,map50_area,map_coco");

    ws.ok(&["analyze", "--config", "tiny.cfg", "--out", "run", "--set", "ablation_grid=true"]);
    for table in ["contribution_classification.csv", "contribution_localization.csv"] {
        let rows = lines(ws.path(&format!("run/{table}")));
        assert_eq!(rows[0], "row,Base,Up,Down,Left,Right,NW,SE,NE,SW,In,Out");
        for r in &rows[1..] {
            let sum: f64 = r.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
            assert!((sum - 1.0).abs() < 1e-9, "{table}: {r}");
        }
    }
    let ablation = lines(ws.path("run/ablation.csv"));
    assert_eq!(ablation.len(), 1 + 6);

    let listing = ws.ok(&["visualize", "--config", "tiny.cfg", "--out", "run", "--set", "heatmap_scale=5"]);
    assert_eq!(listing.lines().filter(|l| l.ends_with(".ppm")).count(), 11);
    let first = tree_bytes(&ws.path("run/visualize"));
    for (name, bytes) in &first {
        if name.extension().is_some_and(|e| e == "ppm") {
            let img = RgbImage::decode(bytes).unwrap();
            assert_eq!((img.width, img.height), (15, 15));
        }
    }
    ws.ok(&["visualize", "--config", "tiny.cfg", "--out", "run", "--set", "heatmap_scale=5"]);
    assert_eq!(first, tree_bytes(&ws.path("run/visualize")));
    let bars = lines(ws.path("run/visualize/contribution_bars.csv"));
    assert_eq!(bars.len(), 1 + 11);
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let ws = Workspace::new();
    ws.with_data();
    ws.ok(&["train", "--config", "tiny.cfg", "--out", "run", "--set", "iterations=0"]);
    let out = ws.run(&["eval", "--config", "tiny.cfg", "--out", "run", "--set", "contexts=S"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: checkpoint: "));
}
