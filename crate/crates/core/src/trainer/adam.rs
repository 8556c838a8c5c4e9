use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::field::FieldParams;
use crate::math::to_f32_grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    /// Learning rate for hash tables.
    pub lr_table: f64,
    /// Learning rate for everything else.
    pub lr_mlp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_table: 1e-2,
            lr_mlp: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr_table >= 0.0
            && self.lr_mlp >= 0.0
            && self.lr_table.is_finite()
            && self.lr_mlp.is_finite())
        {
            return Err("learning rates must be finite and non-negative".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err("Adam betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return Err("Adam eps must be positive".into());
        }
        Ok(())
    }

    pub fn lr_for(&self, name: &str) -> f64 {
        if name.starts_with("hash.") {
            self.lr_table
        } else {
            self.lr_mlp
        }
    }
}

/// One bias-corrected Adam update on a slice. `step` is 1-based. Entries with
/// `mask[i] == false` are left untouched, moments included. Parameters and
/// moments are rounded to single precision afterwards.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
    mask: Option<&[bool]>,
) {
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    for i in 0..p.len() {
        if mask.is_some_and(|mk| !mk[i]) {
            continue;
        }
        let gi = g[i];
        let mi = to_f32_grid(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
        let vi = to_f32_grid(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
        m[i] = mi;
        v[i] = vi;
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        p[i] = to_f32_grid(p[i] - lr * mhat / (vhat.sqrt() + cfg.eps));
    }
}

/// First and second moments per named tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, name: &str, len: usize) -> Result<&mut (Vec<f64>, Vec<f64>), TrainError> {
        let e = self
            .moments
            .entry(name.to_owned())
            .or_insert_with(|| (vec![0.0; len], vec![0.0; len]));
        if e.0.len() != len || e.1.len() != len {
            return Err(TrainError::StateMismatch(format!(
                "moments for `{name}` have {} entries, tensor has {len}",
                e.0.len()
            )));
        }
        Ok(e)
    }

    /// Updates every trainable tensor of `params` from `grads`.
    pub fn step_field(
        &mut self,
        params: &mut FieldParams,
        grads: &FieldParams,
        cfg: &AdamConfig,
    ) -> Result<(), TrainError> {
        let gs = grads.tensors();
        for g in &gs {
            if !g.data.iter().all(|v| v.is_finite()) {
                return Err(TrainError::NonFiniteGradient(g.name.clone()));
            }
        }
        self.step += 1;
        let step = self.step;
        let trainable: Vec<bool> = params
            .tensors()
            .iter()
            .map(|t| params.is_trainable(&t.name))
            .collect();
        for ((t, g), train) in params.tensors_mut().into_iter().zip(gs).zip(trainable) {
            if !train {
                continue;
            }
            let (m, v) = self.slot(&t.name, t.data.len())?;
            adam_update(t.data, g.data, m, v, step, cfg.lr_for(&t.name), cfg, None);
        }
        Ok(())
    }

    /// Updates one named tensor, optionally masked.
    #[allow(clippy::too_many_arguments)]
    pub fn step_tensor(
        &mut self,
        name: &str,
        p: &mut [f64],
        g: &[f64],
        lr: f64,
        cfg: &AdamConfig,
        mask: Option<&[bool]>,
    ) -> Result<(), TrainError> {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(name.to_owned()));
        }
        self.step += 1;
        let step = self.step;
        let (m, v) = self.slot(name, p.len())?;
        adam_update(p, g, m, v, step, lr, cfg, mask);
        Ok(())
    }
}
