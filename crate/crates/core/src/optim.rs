//! SGD with heavy-ball momentum and per-group learning rates.

use crate::error::{invalid, Result};
use crate::model::{Gradients, ModelBundle};

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    /// Learning rate per parameter; `None` marks a frozen parameter.
    lrs: Vec<Option<f64>>,
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    /// Pretrained (encoder) parameters get `base_lr`, freshly initialized
    /// heads get `base_lr * fresh_multiplier`.
    pub fn for_bundle(
        bundle: &ModelBundle,
        base_lr: f64,
        fresh_multiplier: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {base_lr}"));
        }
        if !(fresh_multiplier > 0.0 && fresh_multiplier.is_finite()) {
            return invalid("learning-rate multiplier must be positive");
        }
        if !(0.0..1.0).contains(&momentum) {
            return invalid(format!("SGD momentum must lie in [0, 1), got {momentum}"));
        }
        if weight_decay < 0.0 {
            return invalid("weight decay must be non-negative");
        }
        let params = bundle.params();
        let groups = bundle.parameter_groups();
        let mut lrs = vec![None; params.len()];
        for &i in &groups.pretrained.indices {
            lrs[i] = Some(base_lr);
        }
        for &i in &groups.fresh.indices {
            lrs[i] = Some(base_lr * fresh_multiplier);
        }
        Ok(Self {
            lrs,
            momentum,
            weight_decay,
            velocity: params.iter().map(|t| vec![0.0; t.len()]).collect(),
        })
    }

    pub fn lr_of(&self, param_index: usize) -> Option<f64> {
        self.lrs.get(param_index).copied().flatten()
    }

    pub fn step(&mut self, bundle: &mut ModelBundle, grads: &Gradients) {
        for (((p, g), v), lr) in bundle
            .params_mut()
            .into_iter()
            .zip(&grads.0)
            .zip(&mut self.velocity)
            .zip(&self.lrs)
        {
            let Some(lr) = *lr else { continue };
            for ((w, gw), vw) in p.data.iter_mut().zip(&g.data).zip(v.iter_mut()) {
                let d = gw + self.weight_decay * *w;
                *vw = self.momentum * *vw + d;
                *w -= lr * *vw;
            }
        }
    }
}
