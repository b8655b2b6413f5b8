use crate::error::{Error, Result};
use crate::tensor::params::ParamStore;
use crate::tensor::Real;

/// Optimizer and mini-batch settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(iteration, lr)` steps; from that iteration on, `lr` applies.
    pub schedule: Vec<(usize, f64)>,
    pub iterations: usize,
    pub images_per_batch: usize,
    pub rois_per_image: usize,
    pub ohem_keep: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: vec![(1400, 1e-3)],
            iterations: 2000,
            images_per_batch: 2,
            rois_per_image: 300,
            ohem_keep: 128,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ohem_keep > self.rois_per_image {
            return Err(Error::Config(format!(
                "ohem_keep ({}) exceeds rois_per_image ({})",
                self.ohem_keep, self.rois_per_image
            )));
        }
        if self.ohem_keep == 0 || self.images_per_batch == 0 {
            return Err(Error::Config("ohem_keep and images_per_batch must be positive".into()));
        }
        let rates = std::iter::once(self.lr).chain(self.schedule.iter().map(|s| s.1));
        for v in rates.chain([self.momentum, self.weight_decay]) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("optimizer value {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Learning rate in effect at `iteration` (0-based).
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(at, _)| *at <= iteration)
            .max_by_key(|(at, _)| *at)
            .map_or(self.lr, |s| s.1)
    }
}

/// Momentum buffers, one per parameter in store order.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Vec<Real>>,
}

impl SgdState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            velocity: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
        }
    }

    pub fn velocity(&self, index: usize) -> &[Real] {
        &self.velocity[index]
    }
}

/// `v <- momentum*v + grad + wd*p; p <- p - lr*v`, reading each parameter's
/// gradient buffer. Parameters without a gradient buffer see a zero gradient.
/// Nothing is modified when any gradient is non-finite.
pub fn sgd_step(params: &mut ParamStore, state: &mut SgdState, cfg: &SgdConfig, lr: f64) -> Result<()> {
    if state.velocity.len() != params.len() {
        return Err(Error::Dimension(format!(
            "optimizer state has {} buffers for {} parameters",
            state.velocity.len(),
            params.len()
        )));
    }
    for (name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name} at element {pos}")));
            }
        }
    }
    let (momentum, wd, lr) = (cfg.momentum as Real, cfg.weight_decay as Real, lr as Real);
    for (i, (_, t)) in params.iter_mut().enumerate() {
        let v = &mut state.velocity[i];
        if v.len() != t.numel() {
            return Err(Error::Dimension("optimizer buffer does not match parameter".into()));
        }
        let grad = t.take_grad();
        let data = t.data_mut();
        for (j, (p, vj)) in data.iter_mut().zip(v.iter_mut()).enumerate() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            *vj = momentum * *vj + g + wd * *p;
            *p -= lr * *vj;
        }
    }
    Ok(())
}
