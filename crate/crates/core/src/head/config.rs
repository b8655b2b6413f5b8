use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{ContextFamily, ContextKind};

/// How sub-network outputs are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// Every sub-network is a full PSRoI detection head; scores and deltas are summed.
    PsRoi,
    /// Sub-networks extract RoI-pooled features; one FC head reads their concatenation.
    Roi,
}

impl FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psroi" => Ok(HeadMode::PsRoi),
            "roi" => Ok(HeadMode::Roi),
            _ => Err(Error::Config(format!("head_mode must be psroi or roi, got {s:?}"))),
        }
    }
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadMode::PsRoi => "psroi",
            HeadMode::Roi => "roi",
        })
    }
}

/// Which boundary-context families are active. The proposal sub-network is always on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ContextSet {
    pub sides: bool,
    pub vertices: bool,
    pub boundary: bool,
}

impl ContextSet {
    pub const NONE: ContextSet = ContextSet {
        sides: false,
        vertices: false,
        boundary: false,
    };
    pub const ALL: ContextSet = ContextSet {
        sides: true,
        vertices: true,
        boundary: true,
    };

    /// The context combinations of the ablation grid, in report order.
    pub fn ablation_grid() -> [ContextSet; 6] {
        let s = |sides, vertices, boundary| ContextSet {
            sides,
            vertices,
            boundary,
        };
        [
            s(false, false, false),
            s(true, false, false),
            s(false, true, false),
            s(false, false, true),
            s(true, true, false),
            s(true, true, true),
        ]
    }

    pub fn contains(&self, kind: ContextKind) -> bool {
        match kind.family() {
            None => true,
            Some(ContextFamily::Sides) => self.sides,
            Some(ContextFamily::Vertices) => self.vertices,
            Some(ContextFamily::Boundary) => self.boundary,
        }
    }

    /// Active sub-networks, proposal first.
    pub fn kinds(&self) -> Vec<ContextKind> {
        ContextKind::ALL.into_iter().filter(|k| self.contains(*k)).collect()
    }
}

impl FromStr for ContextSet {
    type Err = Error;

    /// Accepts `none` or a comma list of `S`, `V`, `B`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut set = ContextSet::NONE;
        if s.eq_ignore_ascii_case("none") || s.is_empty() {
            return Ok(set);
        }
        for part in s.split(',') {
            match part.trim().to_ascii_uppercase().as_str() {
                "S" => set.sides = true,
                "V" => set.vertices = true,
                "B" => set.boundary = true,
                other => {
                    return Err(Error::Config(format!(
                        "unknown context family {other:?} (expected S, V, B or none)"
                    )))
                }
            }
        }
        Ok(set)
    }
}

impl fmt::Display for ContextSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.sides, "S"), (self.vertices, "V"), (self.boundary, "B")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// Shape of the context-ensemble head.
#[derive(Clone, Debug, PartialEq)]
pub struct BanConfig {
    pub contexts: ContextSet,
    /// Pooling bins per axis.
    pub k: usize,
    pub head_mode: HeadMode,
    /// One feature conv for all sub-networks instead of one each.
    pub shared_features: bool,
    /// Foreground classes; scores have `num_classes + 1` entries.
    pub num_classes: usize,
    pub regression_dims: usize,
    /// Width of the 1x1 feature conv in PSRoI mode.
    pub trunk_channels: usize,
    /// Width of the per-sub-network feature conv in RoI mode.
    pub roi_feature_channels: usize,
}

impl Default for BanConfig {
    fn default() -> Self {
        Self {
            contexts: ContextSet::ALL,
            k: 5,
            head_mode: HeadMode::PsRoi,
            shared_features: true,
            num_classes: 20,
            regression_dims: 4,
            trunk_channels: 1024,
            roi_feature_channels: 256,
        }
    }
}

impl BanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=7).contains(&self.k) {
            return Err(Error::Config(format!("k must be in 1..=7, got {}", self.k)));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.regression_dims == 0 || self.regression_dims % 4 != 0 {
            return Err(Error::Config(format!(
                "regression_dims must be a positive multiple of 4, got {}",
                self.regression_dims
            )));
        }
        if self.trunk_channels == 0 || self.roi_feature_channels == 0 {
            return Err(Error::Config("feature channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn subnets(&self) -> Vec<ContextKind> {
        self.contexts.kinds()
    }

    pub fn num_subnets(&self) -> usize {
        1 + 4 * usize::from(self.contexts.sides)
            + 4 * usize::from(self.contexts.vertices)
            + 2 * usize::from(self.contexts.boundary)
    }

    /// Score vector length, background included.
    pub fn score_dims(&self) -> usize {
        self.num_classes + 1
    }

    /// Closed-form number of scalar parameters for a head reading `in_channels` features.
    pub fn param_count(&self, in_channels: usize) -> usize {
        let s = self.num_subnets();
        let kk = self.k * self.k;
        let pointwise = |cin: usize, cout: usize| cin * cout + cout;
        match self.head_mode {
            HeadMode::PsRoi => {
                let trunk = pointwise(in_channels, self.trunk_channels);
                let trunks = if self.shared_features { trunk } else { s * trunk };
                let outputs = pointwise(self.trunk_channels, self.score_dims() * kk)
                    + pointwise(self.trunk_channels, self.regression_dims * kk);
                trunks + s * outputs
            }
            HeadMode::Roi => {
                let feat = pointwise(in_channels, self.roi_feature_channels);
                let feats = if self.shared_features { feat } else { s * feat };
                let d = s * self.roi_feature_channels * kk;
                feats + pointwise(d, self.score_dims()) + pointwise(d, self.regression_dims)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subnet_count_matches_families() {
        for set in ContextSet::ablation_grid() {
            let cfg = BanConfig {
                contexts: set,
                ..BanConfig::default()
            };
            assert_eq!(cfg.subnets().len(), cfg.num_subnets());
            assert_eq!(cfg.subnets()[0], ContextKind::Base);
        }
        assert_eq!(BanConfig::default().num_subnets(), 11);
    }

    #[test]
    fn context_set_parsing() {
        assert_eq!("none".parse::<ContextSet>().unwrap(), ContextSet::NONE);
        assert_eq!("S,V,B".parse::<ContextSet>().unwrap(), ContextSet::ALL);
        let sv: ContextSet = "s, v".parse().unwrap();
        assert!(sv.sides && sv.vertices && !sv.boundary);
        assert_eq!(sv.to_string(), "S,V");
        assert!("X".parse::<ContextSet>().is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = BanConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.k = 8;
        assert!(cfg.validate().is_err());
        cfg.k = 5;
        cfg.regression_dims = 6;
        assert!(cfg.validate().is_err());
    }
}
