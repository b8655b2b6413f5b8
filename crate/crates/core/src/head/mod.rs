//! The context-ensemble detection head.
//!
//! For a proposal `R` the head evaluates one sub-network on `R` itself and one
//! on each active boundary-context region `g(R|c)`:
//!
//! - **PSRoI mode.** Each sub-network is a complete position-sensitive head
//!   (class score map and regression map on top of a 1x1 feature conv). Its
//!   voted outputs are summed, `f = f_0 + sum_c f_c`, so the gradient reaching
//!   every sub-network's score equals the gradient of the aggregate.
//! - **RoI mode.** Each sub-network RoI-pools its own 1x1 feature conv; the
//!   pooled features are concatenated and read by one FC classifier and one FC
//!   regressor.

mod analysis;
mod config;

pub use analysis::{
    contribution_analysis, local_activation_map, ContributionReport, ContributionSample,
    LOCALIZATION_ROWS,
};
pub use config::{BanConfig, ContextSet, HeadMode};

use crate::error::{Error, Result};
use crate::geometry::{generate_context, BBox, ContextKind};
use crate::pooling::{PoolMode, PoolSpec};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::ops::ConvGeometry;
use crate::tensor::params::{gaussian_tensor, param_seed, ParamStore};
use crate::tensor::{Real, Tensor};

/// Standard deviation of the head's Gaussian weight init.
pub const INIT_STD: f64 = 0.01;

fn pointwise_weight(store: &mut ParamStore, name: &str, cin: usize, cout: usize, seed: u64) -> Result<()> {
    let w = format!("{name}.weight");
    let tensor = gaussian_tensor(&[cout, cin, 1, 1], INIT_STD, param_seed(seed, &w));
    store.insert(w, tensor)?;
    store.insert(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
    Ok(())
}

fn trunk_name(cfg: &BanConfig, kind: ContextKind) -> String {
    let stem = match cfg.head_mode {
        HeadMode::PsRoi => "trunk",
        HeadMode::Roi => "features",
    };
    if cfg.shared_features {
        format!("head.{stem}")
    } else {
        format!("head.{}.{stem}", kind.slug())
    }
}

/// Adds the head parameters for a backbone of `in_channels` output channels.
///
/// Each tensor is seeded from `seed` and its own name, so a head built
/// without some context shares every remaining tensor bit-for-bit with the
/// full head.
pub fn build_head_into(store: &mut ParamStore, cfg: &BanConfig, in_channels: usize, seed: u64) -> Result<()> {
    cfg.validate()?;
    let kk = cfg.k * cfg.k;
    let subnets = cfg.subnets();
    let feature_width = match cfg.head_mode {
        HeadMode::PsRoi => cfg.trunk_channels,
        HeadMode::Roi => cfg.roi_feature_channels,
    };
    if cfg.shared_features {
        pointwise_weight(store, &trunk_name(cfg, ContextKind::Base), in_channels, feature_width, seed)?;
    }
    for &kind in &subnets {
        if !cfg.shared_features {
            pointwise_weight(store, &trunk_name(cfg, kind), in_channels, feature_width, seed)?;
        }
        if cfg.head_mode == HeadMode::PsRoi {
            let prefix = format!("head.{}", kind.slug());
            pointwise_weight(store, &format!("{prefix}.cls"), feature_width, cfg.score_dims() * kk, seed)?;
            pointwise_weight(store, &format!("{prefix}.reg"), feature_width, cfg.regression_dims * kk, seed)?;
        }
    }
    if cfg.head_mode == HeadMode::Roi {
        let d = subnets.len() * feature_width * kk;
        for (name, m) in [("head.fc_cls", cfg.score_dims()), ("head.fc_reg", cfg.regression_dims)] {
            let w = format!("{name}.weight");
            store.insert(w.clone(), gaussian_tensor(&[d, m], INIT_STD, param_seed(seed, &w)))?;
            store.insert(format!("{name}.bias"), Tensor::zeros(&[m]))?;
        }
    }
    Ok(())
}

pub fn build_head(cfg: &BanConfig, in_channels: usize, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    build_head_into(&mut store, cfg, in_channels, seed)?;
    Ok(store)
}

/// Graph handles of a head evaluation over `R` proposals.
#[derive(Clone, Debug)]
pub struct HeadVars {
    /// `[R, C+1]` pre-softmax scores.
    pub scores: Var,
    /// `[R, regression_dims]`.
    pub deltas: Var,
    /// PSRoI mode only: voted `[R, C+1]` scores and `[R, regression_dims]`
    /// deltas of each sub-network.
    pub per_context: Vec<SubnetVars>,
}

#[derive(Clone, Copy, Debug)]
pub struct SubnetVars {
    pub kind: ContextKind,
    pub scores: Var,
    pub deltas: Var,
}

fn pointwise_conv(g: &mut Graph, params: &ParamStore, name: &str, input: Var) -> Result<Var> {
    let w = g.param(params, &format!("{name}.weight"))?;
    let b = g.param(params, &format!("{name}.bias"))?;
    g.conv2d(input, w, b, ConvGeometry::default())
}

fn feature_conv(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &BanConfig,
    kind: ContextKind,
    features: Var,
    shared: &mut Option<Var>,
) -> Result<Var> {
    if let (true, Some(v)) = (cfg.shared_features, *shared) {
        return Ok(v);
    }
    let conv = pointwise_conv(g, params, &trunk_name(cfg, kind), features)?;
    let v = g.relu(conv)?;
    if cfg.shared_features {
        *shared = Some(v);
    }
    Ok(v)
}

/// Records the head on `g`. `features` is the `[1, C, H, W]` backbone map.
pub fn forward_graph(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &BanConfig,
    features: Var,
    proposals: &[BBox],
    spatial_scale: f64,
) -> Result<HeadVars> {
    cfg.validate()?;
    if proposals.is_empty() {
        return Err(Error::Dimension("head forward needs at least one proposal".into()));
    }
    let mut shared = None;
    match cfg.head_mode {
        HeadMode::PsRoi => {
            let spec = PoolSpec::new(cfg.k, spatial_scale, PoolMode::PsRoi)?;
            let mut per_context = Vec::new();
            for kind in cfg.subnets() {
                let trunk = feature_conv(g, params, cfg, kind, features, &mut shared)?;
                let regions: Vec<BBox> = proposals.iter().map(|r| generate_context(r, kind)).collect();
                let prefix = format!("head.{}", kind.slug());
                let cls_map = pointwise_conv(g, params, &format!("{prefix}.cls"), trunk)?;
                let cls_pooled = g.psroi_pool(cls_map, &regions, &spec)?;
                let scores = g.vote(cls_pooled)?;
                let reg_map = pointwise_conv(g, params, &format!("{prefix}.reg"), trunk)?;
                let reg_pooled = g.psroi_pool(reg_map, &regions, &spec)?;
                let deltas = g.vote(reg_pooled)?;
                per_context.push(SubnetVars { kind, scores, deltas });
            }
            let scores = g.sum(&per_context.iter().map(|s| s.scores).collect::<Vec<_>>())?;
            let deltas = g.sum(&per_context.iter().map(|s| s.deltas).collect::<Vec<_>>())?;
            Ok(HeadVars {
                scores,
                deltas,
                per_context,
            })
        }
        HeadMode::Roi => {
            let spec = PoolSpec::new(cfg.k, spatial_scale, PoolMode::Roi)?;
            let mut pooled = Vec::new();
            for kind in cfg.subnets() {
                let feats = feature_conv(g, params, cfg, kind, features, &mut shared)?;
                let regions: Vec<BBox> = proposals.iter().map(|r| generate_context(r, kind)).collect();
                pooled.push(g.roi_pool(feats, &regions, &spec)?);
            }
            let stacked = g.concat_channels(&pooled)?;
            let width = g.value(stacked).numel() / proposals.len();
            let flat = g.reshape(stacked, &[proposals.len(), width])?;
            let mut fc = |name: &str| -> Result<Var> {
                let w = g.param(params, &format!("{name}.weight"))?;
                let b = g.param(params, &format!("{name}.bias"))?;
                g.fully_connected(flat, w, b)
            };
            let scores = fc("head.fc_cls")?;
            let deltas = fc("head.fc_reg")?;
            Ok(HeadVars {
                scores,
                deltas,
                per_context: Vec::new(),
            })
        }
    }
}

/// Head outputs for one proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    /// Pre-softmax, length `C+1`, background first.
    pub class_scores: Vec<Real>,
    pub box_deltas: Vec<Real>,
    /// PSRoI mode: voted scores of each sub-network, in sub-network order.
    pub per_context_scores: Vec<Vec<Real>>,
    /// PSRoI mode: voted deltas of each sub-network.
    pub per_context_deltas: Vec<Vec<Real>>,
}

fn rows(t: &Tensor) -> Vec<Vec<Real>> {
    let width = t.shape()[1];
    t.data().chunks(width).map(<[Real]>::to_vec).collect()
}

/// Splits evaluated head vars into per-proposal outputs.
pub fn collect_outputs(g: &Graph, vars: &HeadVars) -> Vec<HeadOutput> {
    let scores = rows(g.value(vars.scores));
    let deltas = rows(g.value(vars.deltas));
    let ctx_scores: Vec<Vec<Vec<Real>>> = vars.per_context.iter().map(|s| rows(g.value(s.scores))).collect();
    let ctx_deltas: Vec<Vec<Vec<Real>>> = vars.per_context.iter().map(|s| rows(g.value(s.deltas))).collect();
    scores
        .into_iter()
        .zip(deltas)
        .enumerate()
        .map(|(r, (class_scores, box_deltas))| HeadOutput {
            class_scores,
            box_deltas,
            per_context_scores: ctx_scores.iter().map(|c| c[r].clone()).collect(),
            per_context_deltas: ctx_deltas.iter().map(|c| c[r].clone()).collect(),
        })
        .collect()
}

/// Evaluates the head on a `[1, C, H, W]` (or `[C, H, W]`) feature map.
pub fn forward(
    params: &ParamStore,
    features: &Tensor,
    proposals: &[BBox],
    cfg: &BanConfig,
    spatial_scale: f64,
) -> Result<Vec<HeadOutput>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    let features = as_batch(features)?;
    let mut g = Graph::new();
    let f = g.input(features)?;
    let vars = forward_graph(&mut g, params, cfg, f, proposals, spatial_scale)?;
    Ok(collect_outputs(&g, &vars))
}

pub(crate) fn as_batch(features: &Tensor) -> Result<Tensor> {
    match *features.shape() {
        [1, _, _, _] => Ok(features.clone()),
        [c, h, w] => features.clone().reshape(&[1, c, h, w]),
        ref s => Err(Error::Dimension(format!("expected a single feature map, got {s:?}"))),
    }
}

/// Gradients observed when a scalar loss is applied to the aggregate score.
#[derive(Clone, Debug)]
pub struct SharingGrads {
    pub aggregate: Tensor,
    pub per_subnet: Vec<(ContextKind, Tensor)>,
}

/// Back-propagates `upstream` (the loss gradient w.r.t. the `C+1` aggregate
/// scores of `proposal`) and reports the gradient arriving at the aggregate
/// and at each sub-network's voted score.
pub fn backward_sharing_check(
    params: &ParamStore,
    features: &Tensor,
    proposal: &BBox,
    cfg: &BanConfig,
    spatial_scale: f64,
    upstream: &[Real],
) -> Result<SharingGrads> {
    if cfg.head_mode != HeadMode::PsRoi {
        return Err(Error::Config("sharing check requires PSRoI mode".into()));
    }
    let mut g = Graph::new();
    let f = g.input(as_batch(features)?)?;
    let vars = forward_graph(&mut g, params, cfg, f, std::slice::from_ref(proposal), spatial_scale)?;
    let seed = Tensor::new(&[1, cfg.score_dims()], upstream.to_vec())?;
    g.backward(vec![(vars.scores, seed)])?;
    let grad_of = |v: Var| {
        g.grad(v)
            .cloned()
            .ok_or_else(|| Error::Graph("no gradient reached a sub-network score".into()))
    };
    Ok(SharingGrads {
        aggregate: grad_of(vars.scores)?,
        per_subnet: vars
            .per_context
            .iter()
            .map(|s| Ok((s.kind, grad_of(s.scores)?)))
            .collect::<Result<_>>()?,
    })
}
