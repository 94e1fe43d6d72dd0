use crate::error::{Error, Result};
use crate::network::{Gradients, ModelParams};
use crate::numeric::{Real, Tensor};

use super::TrainConfig;

/// Momentum buffers mirroring [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub weights: Vec<Tensor<F>>,
    pub betas: Vec<F>,
    pub norm_scale: Vec<Tensor<F>>,
    pub norm_shift: Vec<Tensor<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn zeros_like(params: &ModelParams<F>) -> Self {
        let zeros = |ts: &[Tensor<F>]| ts.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            weights: zeros(&params.weights),
            betas: vec![F::zero(); params.betas.len()],
            norm_scale: zeros(&params.norm_scale),
            norm_shift: zeros(&params.norm_shift),
        }
    }
}

/// `lr0 * 0.1^floor(epoch / lr_decay_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = (epoch / cfg.lr_decay_every) as i32;
    cfg.lr0 * 0.1f64.powi(decays)
}

fn update<F: Real>(theta: &mut F, g: F, v: &mut F, lr: F, momentum: F, wd: F) {
    let g = g + wd * *theta;
    *v = momentum * *v + g;
    *theta = *theta - lr * *v;
}

fn update_tensors<F: Real>(
    params: &mut [Tensor<F>],
    grads: &[Tensor<F>],
    vel: &mut [Tensor<F>],
    lr: F,
    momentum: F,
    wd: F,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != vel.len() {
        return Err(Error::Consistency(format!(
            "{} parameters, {} gradients, {} momentum buffers",
            params.len(),
            grads.len(),
            vel.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(vel.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Consistency(format!(
                "parameter {:?}, gradient {:?}, buffer {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((t, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            update(t, gi, vi, lr, momentum, wd);
        }
    }
    Ok(())
}

/// Momentum SGD: `g' = g + wd * theta; v = momentum * v + g'; theta -= lr * v`.
/// Weight decay applies to weights only.
pub fn sgd_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &Gradients<F>,
    opt: &mut OptimizerState<F>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let (lr, m, wd) = (F::lit(lr), F::lit(momentum), F::lit(weight_decay));
    update_tensors(&mut params.weights, &grads.weights, &mut opt.weights, lr, m, wd)?;
    update_tensors(&mut params.norm_scale, &grads.norm_scale, &mut opt.norm_scale, lr, m, F::zero())?;
    update_tensors(&mut params.norm_shift, &grads.norm_shift, &mut opt.norm_shift, lr, m, F::zero())?;
    if params.betas.len() != grads.betas.len() || params.betas.len() != opt.betas.len() {
        return Err(Error::Consistency("smoothing parameter count mismatch".into()));
    }
    for ((b, &g), v) in params.betas.iter_mut().zip(&grads.betas).zip(opt.betas.iter_mut()) {
        update(b, g, v, lr, m, F::zero());
    }
    Ok(())
}
