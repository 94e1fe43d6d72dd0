use crate::data::SpikeDataset;
use crate::error::{Error, Result};
use crate::network::{backward_bptt, forward_unroll, ModelParams, ModelSpec};
use crate::numeric::Real;
use crate::objective::ce_ensemble_with_grad;

use super::{epoch_batches, lr_at, prepare, sgd_step, streams, OptimizerState, TrainConfig};

/// Plain SNN training on the ensemble cross-entropy alone: no smoothing, no
/// guidance, no drop stream. Shares data split, initialisation and batch
/// order with [`super::train`] so the two can be compared bit for bit.
pub fn train_vanilla_reference<F: Real>(
    spec: &ModelSpec,
    data: &SpikeDataset,
    cfg: &TrainConfig,
) -> Result<ModelParams<F>> {
    if spec.smoothing_enabled {
        return Err(Error::param(
            "smoothing_enabled",
            "the vanilla reference trains without smoothing",
        ));
    }
    let prepared = prepare::<F>(spec, data, cfg)?;
    let (train, root, mut params) = (prepared.train, prepared.root, prepared.params);
    let mut opt = OptimizerState::zeros_like(&params);
    let mut membrane_rng = root.split(streams::MEMBRANE);
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        for (b, idx) in epoch_batches(train.len(), cfg.batch_size, &root, epoch).iter().enumerate() {
            let x = train.batch_input::<F>(idx);
            let trace = forward_unroll(spec, &params, &x, &mut membrane_rng)?;
            let (ce, grad) = ce_ensemble_with_grad(&trace.logits, &train.batch_labels(idx))?;
            if !ce.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    ce: ce.as_f64(),
                    guidance: 0.0,
                });
            }
            let grads = backward_bptt(spec, &params, &trace, &grad)?;
            sgd_step(&mut params, &grads, &mut opt, lr, cfg.momentum, cfg.weight_decay)?;
        }
    }
    Ok(params)
}
