use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter, in parameter storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(params: &ModelParams<f32>) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, p)| vec![0.0; p.value.len()])
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update using the gradients stored on the parameter tensors,
/// which are consumed. Group `g` uses learning rate `g.lr_mult * lr_scale`;
/// frozen groups are left untouched.
pub fn adamw_step(
    params: &mut ModelParams<f32>,
    state: &mut OptimState,
    weight_decay: f64,
    lr_scale: f64,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    let mut slot = 0;
    for group in params.groups_mut() {
        let lr = group.lr_mult * lr_scale;
        for p in &mut group.params {
            let (m, v) = (&mut state.m[slot], &mut state.v[slot]);
            slot += 1;
            if group.frozen {
                p.value.take_grad();
                continue;
            }
            let grad = p.value.take_grad().ok_or_else(|| {
                Error::Graph(format!(
                    "missing gradient for trainable parameter {}",
                    p.name
                ))
            })?;
            if m.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "optimizer state for {} has the wrong size",
                    p.name
                )));
            }
            for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i] as f64;
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let mut x = *theta as f64;
                x -= lr * weight_decay * x;
                x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                *theta = x as f32;
            }
        }
    }
    Ok(())
}

/// Cosine annealing from `lr_max` at epoch 0 to `lr_min` at `total`.
pub fn cosine_lr(epoch: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || epoch > total {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside schedule of {total} epochs"
        )));
    }
    // the endpoints are returned verbatim so stage boundaries are exact
    Ok(match epoch {
        0 => lr_max,
        e if e == total => lr_min,
        e => lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * e as f64 / total as f64).cos()),
    })
}
