//! Small convolutional trunk plus the context-ensemble head.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::head::{self, collect_outputs, BanConfig, HeadOutput, HeadVars};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::ops::ConvGeometry;
use crate::tensor::params::{gaussian_tensor, param_seed, ParamStore};
use crate::tensor::Tensor;

/// 3x3 conv + ReLU blocks. Every block but the last halves the resolution;
/// the last keeps it and uses dilation 2 instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub channels: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            channels: vec![16, 32, 64, 128],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config(format!("invalid backbone channels {:?}", self.channels)));
        }
        Ok(())
    }

    /// Image pixels per feature cell.
    pub fn stride(&self) -> usize {
        1 << (self.channels.len() - 1)
    }

    pub fn spatial_scale(&self) -> f64 {
        1.0 / self.stride() as f64
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    pub fn block_geometry(&self, block: usize) -> ConvGeometry {
        if block + 1 == self.channels.len() {
            ConvGeometry::new(1, 2, 2)
        } else {
            ConvGeometry::new(2, 1, 1)
        }
    }

    fn block_inputs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        std::iter::once(self.in_channels)
            .chain(self.channels.iter().copied())
            .zip(self.channels.iter().copied())
            .enumerate()
            .map(|(i, (cin, cout))| (i, cin, cout))
    }

    pub fn param_count(&self) -> usize {
        self.block_inputs().map(|(_, cin, cout)| cout * cin * 9 + cout).sum()
    }
}

/// He-initialized trunk weights, zero biases.
pub fn build_backbone_into(store: &mut ParamStore, cfg: &BackboneConfig, seed: u64) -> Result<()> {
    cfg.validate()?;
    for (i, cin, cout) in cfg.block_inputs() {
        let name = format!("backbone.block{i}.weight");
        let std = (2.0 / (cin * 9) as f64).sqrt();
        store.insert(name.clone(), gaussian_tensor(&[cout, cin, 3, 3], std, param_seed(seed, &name)))?;
        store.insert(format!("backbone.block{i}.bias"), Tensor::zeros(&[cout]))?;
    }
    Ok(())
}

/// Backbone and head configurations with their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub backbone: BackboneConfig,
    pub head: BanConfig,
    pub params: ParamStore,
}

impl Detector {
    pub fn build(backbone: BackboneConfig, head: BanConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        build_backbone_into(&mut params, &backbone, seed)?;
        head::build_head_into(&mut params, &head, backbone.out_channels(), seed)?;
        Ok(Self {
            backbone,
            head,
            params,
        })
    }

    /// Wraps loaded parameters after checking them against the configuration.
    pub fn with_params(backbone: BackboneConfig, head: BanConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::build(backbone, head, 0)?;
        reference.params.check_compatible(&params)?;
        Ok(Self { params, ..reference })
    }

    pub fn spatial_scale(&self) -> f64 {
        self.backbone.spatial_scale()
    }

    /// Records the trunk on `g` for a `[1, 3, H, W]` image.
    pub fn backbone_graph(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let mut x = image;
        for i in 0..self.backbone.channels.len() {
            let w = g.param(&self.params, &format!("backbone.block{i}.weight"))?;
            let b = g.param(&self.params, &format!("backbone.block{i}.bias"))?;
            let conv = g.conv2d(x, w, b, self.backbone.block_geometry(i))?;
            x = g.relu(conv)?;
        }
        Ok(x)
    }

    pub fn forward_graph(&self, g: &mut Graph, image: &Tensor, proposals: &[BBox]) -> Result<HeadVars> {
        let x = g.input(image.clone())?;
        let features = self.backbone_graph(g, x)?;
        head::forward_graph(g, &self.params, &self.head, features, proposals, self.spatial_scale())
    }

    /// Trunk feature map of an image, `[1, C, H/stride, W/stride]`.
    pub fn features(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(image.clone())?;
        let f = self.backbone_graph(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    pub fn forward(&self, image: &Tensor, proposals: &[BBox]) -> Result<Vec<HeadOutput>> {
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, image, proposals)?;
        Ok(collect_outputs(&g, &vars))
    }
}
