//! How much each sub-network contributes to the ensemble's decisions.
//!
//! The classification contribution of sub-network `c` to class `j` is the mean,
//! over regions labeled `j`, of `|s_cj| / sum_c' |s_c'j|` where `s_cj` is the
//! sub-network's voted class-`j` score. Localization contributions use the four
//! voted regression outputs over foreground regions. Rows sum to one.

use std::fmt::Write as _;

use super::{as_batch, BanConfig, HeadMode, HeadOutput};
use crate::error::{Error, Result};
use crate::geometry::{generate_context, BBox, ContextKind};
use crate::pooling::{psroi_pool, PoolMode, PoolSpec};
use crate::tensor::ops::{self, ConvGeometry};
use crate::tensor::params::ParamStore;
use crate::tensor::{Real, Tensor};

pub const LOCALIZATION_ROWS: [&str; 4] = ["cx", "cy", "width", "height"];

/// A head evaluation together with the label of its region.
#[derive(Clone, Debug)]
pub struct ContributionSample {
    pub output: HeadOutput,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContributionReport {
    pub subnets: Vec<ContextKind>,
    /// Row labels of the classification table, background first.
    pub class_names: Vec<String>,
    /// Indexed by class id; `None` when no region carried that label.
    pub classification: Vec<Option<Vec<f64>>>,
    /// Rows cx, cy, width, height; `None` when there were no foreground regions.
    pub localization: Vec<Option<Vec<f64>>>,
    /// Rows left out for lack of regions.
    pub omitted: Vec<String>,
}

fn normalized(values: impl Iterator<Item = Real>, n: usize) -> Vec<f64> {
    let abs: Vec<f64> = values.map(|v| f64::from(v).abs()).collect();
    let total: f64 = abs.iter().sum();
    if total > 0.0 {
        abs.iter().map(|a| a / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = rows.first()?;
    let mut acc = vec![0.0; first.len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    Some(acc.into_iter().map(|a| a / rows.len() as f64).collect())
}

/// Builds both contribution tables from labeled PSRoI head evaluations.
/// `class_names` lists the foreground classes.
pub fn contribution_analysis(
    samples: &[ContributionSample],
    cfg: &BanConfig,
    class_names: &[&str],
) -> Result<ContributionReport> {
    if cfg.head_mode != HeadMode::PsRoi {
        return Err(Error::Config("contribution analysis requires PSRoI mode".into()));
    }
    if class_names.len() != cfg.num_classes {
        return Err(Error::Config(format!(
            "{} class names for {} classes",
            class_names.len(),
            cfg.num_classes
        )));
    }
    let subnets = cfg.subnets();
    let s = subnets.len();
    let mut per_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); cfg.score_dims()];
    let mut per_coord: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
    let coord_offset = cfg.regression_dims - 4;
    for sample in samples {
        let out = &sample.output;
        if out.per_context_scores.len() != s {
            return Err(Error::Dimension(format!(
                "sample has {} sub-network outputs, config has {s}",
                out.per_context_scores.len()
            )));
        }
        let j = sample.label;
        if j > cfg.num_classes {
            return Err(Error::Data(format!("label {j} out of range")));
        }
        per_class[j].push(normalized(out.per_context_scores.iter().map(|c| c[j]), s));
        if j > 0 {
            for (i, rows) in per_coord.iter_mut().enumerate() {
                rows.push(normalized(out.per_context_deltas.iter().map(|c| c[coord_offset + i]), s));
            }
        }
    }
    let mut names = vec!["bkgd".to_string()];
    names.extend(class_names.iter().map(|n| n.to_string()));
    let classification: Vec<Option<Vec<f64>>> = per_class.iter().map(|r| mean_rows(r)).collect();
    let localization: Vec<Option<Vec<f64>>> = per_coord.iter().map(|r| mean_rows(r)).collect();
    let mut omitted: Vec<String> = classification
        .iter()
        .zip(&names)
        .filter(|(r, _)| r.is_none())
        .map(|(_, n)| n.clone())
        .collect();
    if localization[0].is_none() {
        omitted.extend(LOCALIZATION_ROWS.iter().map(|s| s.to_string()));
    }
    Ok(ContributionReport {
        subnets,
        class_names: names,
        classification,
        localization,
        omitted,
    })
}

impl ContributionReport {
    fn header(&self) -> String {
        let mut h = String::from("row");
        for k in &self.subnets {
            h.push(',');
            h.push_str(k.table_name());
        }
        h.push('\n');
        h
    }

    fn table<'a>(&self, rows: impl Iterator<Item = (&'a str, &'a Option<Vec<f64>>)>) -> String {
        let mut out = self.header();
        for (name, row) in rows {
            if let Some(values) = row {
                out.push_str(name);
                for v in values {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn classification_csv(&self) -> String {
        self.table(self.class_names.iter().map(String::as_str).zip(&self.classification))
    }

    pub fn localization_csv(&self) -> String {
        self.table(LOCALIZATION_ROWS.iter().copied().zip(&self.localization))
    }
}

/// Position-sensitive class-`class_id` responses of sub-network `context` over
/// its region of `proposal`, as a `[k, k]` grid. The grid mean is the
/// sub-network's voted score for that class.
pub fn local_activation_map(
    params: &ParamStore,
    features: &Tensor,
    proposal: &BBox,
    context: ContextKind,
    class_id: usize,
    cfg: &BanConfig,
    spatial_scale: f64,
) -> Result<Tensor> {
    if cfg.head_mode != HeadMode::PsRoi {
        return Err(Error::Config("local activation maps require PSRoI mode".into()));
    }
    if !cfg.contexts.contains(context) {
        return Err(Error::Config(format!("context {context:?} is not configured")));
    }
    if class_id > cfg.num_classes {
        return Err(Error::Config(format!("class {class_id} out of range")));
    }
    let features = as_batch(features)?;
    let conv = |name: &str, input: &Tensor| -> Result<Tensor> {
        ops::conv2d(
            input,
            params.get(&format!("{name}.weight"))?,
            params.get(&format!("{name}.bias"))?,
            ConvGeometry::default(),
        )
    };
    let trunk_name = if cfg.shared_features {
        "head.trunk".to_string()
    } else {
        format!("head.{}.trunk", context.slug())
    };
    let trunk = ops::relu(&conv(&trunk_name, &features)?);
    let score_map = conv(&format!("head.{}.cls", context.slug()), &trunk)?;
    let spec = PoolSpec::new(cfg.k, spatial_scale, PoolMode::PsRoi)?;
    let region = generate_context(proposal, context);
    let (pooled, _) = psroi_pool(&score_map, &[region], &spec)?;
    let kk = cfg.k * cfg.k;
    let grid = pooled.data()[class_id * kk..(class_id + 1) * kk].to_vec();
    Tensor::new(&[cfg.k, cfg.k], grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{build_head, ContextSet};
    use crate::tensor::graph::Graph;

    /// Per-sub-network voted scores as computed on the tape.
    fn graph_scores(params: &ParamStore, features: &Tensor, proposal: &BBox, cfg: &BanConfig, scale: f64) -> Result<Vec<Vec<Real>>> {
        let mut g = Graph::new();
        let f = g.input(as_batch(features)?)?;
        let vars = crate::head::forward_graph(&mut g, params, cfg, f, std::slice::from_ref(proposal), scale)?;
        Ok(vars
            .per_context
            .iter()
            .map(|s| g.value(s.scores).data().to_vec())
            .collect())
    }

    fn output(per_context: Vec<Vec<Real>>) -> HeadOutput {
        HeadOutput {
            class_scores: vec![],
            box_deltas: vec![],
            per_context_deltas: per_context.iter().map(|_| vec![1.0, -1.0, 0.5, 2.0]).collect(),
            per_context_scores: per_context,
        }
    }

    fn cfg(contexts: ContextSet) -> BanConfig {
        BanConfig {
            contexts,
            k: 2,
            num_classes: 2,
            trunk_channels: 3,
            ..BanConfig::default()
        }
    }

    #[test]
    fn single_subnet_gets_everything() {
        let c = cfg(ContextSet::NONE);
        let samples = vec![ContributionSample {
            output: output(vec![vec![0.2, -3.0, 1.0]]),
            label: 1,
        }];
        let r = contribution_analysis(&samples, &c, &["a", "b"]).unwrap();
        assert_eq!(r.classification[1], Some(vec![1.0]));
        assert_eq!(r.localization[0], Some(vec![1.0]));
        assert!(r.classification[0].is_none() && r.classification[2].is_none());
        assert_eq!(r.omitted, vec!["bkgd", "b"]);
    }

    #[test]
    fn equal_magnitudes_split_evenly() {
        let c = cfg(ContextSet { boundary: false, ..ContextSet::NONE });
        let two = BanConfig {
            contexts: ContextSet { boundary: true, ..ContextSet::NONE },
            ..c
        };
        let samples: Vec<_> = (0..3)
            .map(|i| ContributionSample {
                output: output(vec![vec![1.0, 2.0, -0.5], vec![-1.0, -2.0, 0.5], vec![0.0, 0.0, 0.0]]),
                label: i,
            })
            .collect();
        // boundary family has two contexts plus base: three sub-networks
        let r = contribution_analysis(&samples, &two, &["a", "b"]).unwrap();
        assert_eq!(r.classification[0].as_ref().unwrap(), &vec![0.5, 0.5, 0.0]);
        assert_eq!(r.subnets.len(), 3);
    }

    #[test]
    fn csv_headers_follow_table_names() {
        let c = cfg(ContextSet::ALL);
        let samples = vec![ContributionSample {
            output: output((0..11).map(|i| vec![i as Real, 1.0, 1.0]).collect()),
            label: 2,
        }];
        let r = contribution_analysis(&samples, &c, &["a", "b"]).unwrap();
        let csv = r.classification_csv();
        assert_eq!(csv.lines().next().unwrap(), "row,Base,Up,Down,Left,Right,NW,SE,NE,SW,In,Out");
        assert_eq!(csv.lines().count(), 2);
        let loc = r.localization_csv();
        assert_eq!(loc.lines().count(), 5);
        let sum: f64 = loc.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn activation_map_mean_is_voted_score() {
        let c = BanConfig {
            k: 3,
            ..cfg(ContextSet::ALL)
        };
        let params = build_head(&c, 4, 2).unwrap();
        let features = Tensor::from_fn(&[1, 4, 10, 10], |i| ((i * 13) % 11) as Real / 5.0 - 1.0);
        let proposal = BBox::from_corners(12.0, 16.0, 48.0, 56.0).unwrap();
        let scores = graph_scores(&params, &features, &proposal, &c, 0.125).unwrap();
        for (s, kind) in c.subnets().into_iter().enumerate() {
            for class in 0..3 {
                let map = local_activation_map(&params, &features, &proposal, kind, class, &c, 0.125).unwrap();
                assert_eq!(map.shape(), &[3, 3]);
                let mean = map.sum() / 9.0;
                assert!((mean - scores[s][class]).abs() < 1e-9);
            }
        }
        let base_only = cfg(ContextSet::NONE);
        let p = build_head(&base_only, 4, 2).unwrap();
        assert!(local_activation_map(&p, &features, &proposal, ContextKind::InBoundary, 0, &base_only, 0.125).is_err());
    }

    #[test]
    fn constant_map_gives_constant_heat_map() {
        let c = BanConfig {
            k: 2,
            contexts: ContextSet::NONE,
            ..cfg(ContextSet::NONE)
        };
        let mut params = build_head(&c, 2, 1).unwrap();
        for (name, t) in params.iter_mut() {
            if name.ends_with("cls.weight") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            if name.ends_with("cls.bias") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.7);
            }
        }
        let features = Tensor::from_fn(&[2, 6, 6], |i| i as Real * 0.1);
        let proposal = BBox::from_corners(4.0, 4.0, 40.0, 40.0).unwrap();
        let map = local_activation_map(&params, &features, &proposal, ContextKind::Base, 1, &c, 0.125).unwrap();
        assert!(map.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }
}
