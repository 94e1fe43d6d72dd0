//! The guided training loop: forward unroll, adjacent-output guidance with
//! random dropping, ensemble cross-entropy, BPTT, and momentum SGD with a
//! step-decayed learning rate.

mod metrics;
mod optim;
mod reference;

use serde::{Deserialize, Serialize};

use crate::data::SpikeDataset;
use crate::error::{Error, Result};
use crate::network::{
    backward_bptt, count_spikes, forward_unroll, run_inference, ModelParams, ModelSpec,
};
use crate::numeric::{Real, RngState, Tensor};
use crate::objective::{
    ce_ensemble_with_grad, drop_combine, ensemble_average, kl_guidance_with_grad,
    mse_guidance_with_grad, total_loss, GuidanceConfig, GuidanceMode, PairLoss,
};

pub use metrics::{metrics_csv, EpochMetrics};
pub use optim::{lr_at, sgd_step, OptimizerState};
pub use reference::train_vanilla_reference;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub timesteps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs between tenfold learning-rate decays.
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    /// Fraction of the training pool held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            timesteps: 5,
            epochs: 30,
            batch_size: 32,
            lr0: 0.1,
            lr_decay_every: 30,
            weight_decay: 1e-3,
            momentum: 0.9,
            guidance: GuidanceConfig::default(),
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::param("timesteps", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be >= 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::param("lr0", format!("must be > 0, got {}", self.lr0)));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::param("lr_decay_every", "must be >= 1"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::param("weight_decay", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", format!("out of [0,1): {}", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::param(
                "val_fraction",
                format!("out of [0,1): {}", self.val_fraction),
            ));
        }
        self.guidance.validate()
    }
}

/// Named child streams of the run seed.
pub(crate) mod streams {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const MEMBRANE: u64 = 4;
    pub const DROP: u64 = 5;
    pub const VALIDATION: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub params: ModelParams<F>,
    pub history: Vec<EpochMetrics>,
}

/// Everything [`train`] needs from a dataset split, fixed up front.
pub(crate) struct Prepared<F> {
    pub train: SpikeDataset,
    pub val: SpikeDataset,
    pub params: ModelParams<F>,
    pub root: RngState,
}

pub(crate) fn prepare<F: Real>(
    spec: &ModelSpec,
    data: &SpikeDataset,
    cfg: &TrainConfig,
) -> Result<Prepared<F>> {
    spec.validate()?;
    cfg.validate()?;
    if data.timesteps() != cfg.timesteps {
        return Err(Error::Consistency(format!(
            "dataset has {} timesteps, config asks for {}",
            data.timesteps(),
            cfg.timesteps
        )));
    }
    if data.channels() != spec.inputs() || data.classes() != spec.classes() {
        return Err(Error::Consistency(format!(
            "dataset is {} channels / {} classes, model is {} inputs / {} outputs",
            data.channels(),
            data.classes(),
            spec.inputs(),
            spec.classes()
        )));
    }
    let root = RngState::new(cfg.seed);
    let (train, val) = data.split(1.0 - cfg.val_fraction, &mut root.split(streams::SPLIT));
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let params = ModelParams::init(spec, &mut root.split(streams::INIT))?;
    Ok(Prepared {
        train,
        val,
        params,
        root,
    })
}

pub(crate) fn epoch_batches(n: usize, batch_size: usize, root: &RngState, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    root.split(streams::SHUFFLE).split(epoch as u64).shuffle(&mut order);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Losses of one batch and the gradient of the total loss w.r.t. every `O_t`.
#[derive(Debug, Clone)]
pub struct BatchObjective<F> {
    pub ce: F,
    /// Combined guidance loss after dropping; zero when `T = 1`.
    pub guidance: F,
    pub total: F,
    /// Guidance weights from the drop rule, one per adjacent pair.
    pub weights: Vec<F>,
    pub grad_logits: Tensor<F>,
}

/// Evaluates the training objective on `[T x batch x C]` logits.
///
/// Drop weights are constants for differentiation. With `gamma = 0` the
/// guidance terms are reported but contribute nothing to the gradient.
pub fn batch_objective<F: Real>(
    logits: &Tensor<F>,
    labels: &[usize],
    guidance: &GuidanceConfig,
    drop_rng: &mut RngState,
) -> Result<BatchObjective<F>> {
    let (ce, mut grad) = ce_ensemble_with_grad(logits, labels)?;
    let steps = logits.shape()[0];
    let at = |t: usize| {
        Tensor::from_parts(vec![logits.shape()[1], logits.shape()[2]], logits.outer(t).to_vec())
    };
    let gamma = F::lit(guidance.gamma);
    let (mut combined, mut weights) = (F::zero(), Vec::new());
    if steps > 1 {
        let temperature = F::lit(guidance.temperature);
        let pairs: Vec<PairLoss<F>> = (0..steps - 1)
            .map(|t| match guidance.mode {
                GuidanceMode::Kl => {
                    kl_guidance_with_grad(&at(t), &at(t + 1), temperature, guidance.symmetric)
                }
                GuidanceMode::Mse => mse_guidance_with_grad(&at(t), &at(t + 1), guidance.symmetric),
            })
            .collect::<Result<_>>()?;
        let losses: Vec<F> = pairs.iter().map(|p| p.value).collect();
        let dc = drop_combine(&losses, guidance.drop_probability, drop_rng)?;
        combined = dc.combined;
        if guidance.gamma > 0.0 {
            for (t, (pair, &w)) in pairs.iter().zip(&dc.weights).enumerate() {
                if w == F::zero() {
                    continue;
                }
                let scale = gamma * w;
                for (g, &d) in grad.outer_mut(t).iter_mut().zip(pair.grad_student.data()) {
                    *g = *g + scale * d;
                }
                if guidance.symmetric {
                    for (g, &d) in grad.outer_mut(t + 1).iter_mut().zip(pair.grad_teacher.data()) {
                        *g = *g + scale * d;
                    }
                }
            }
        }
        weights = dc.weights;
    }
    Ok(BatchObjective {
        ce,
        guidance: combined,
        total: total_loss(combined, ce, gamma),
        weights,
        grad_logits: grad,
    })
}

fn correct_count<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<usize> {
    let avg = ensemble_average(logits)?;
    let c = avg.shape()[1];
    Ok(labels
        .iter()
        .enumerate()
        .filter(|&(b, &y)| crate::network::argmax(&avg.data()[b * c..(b + 1) * c]) == y)
        .count())
}

/// Trains `spec` on `data` (90/10 train/validation split by default).
/// Fully determined by `cfg.seed`.
pub fn train<F: Real>(
    spec: &ModelSpec,
    data: &SpikeDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    train_with_threads(spec, data, cfg, 1)
}

/// As [`train`]; `threads` parallelises validation only.
pub fn train_with_threads<F: Real>(
    spec: &ModelSpec,
    data: &SpikeDataset,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<TrainOutcome<F>> {
    let Prepared {
        train,
        val,
        mut params,
        root,
    } = prepare::<F>(spec, data, cfg)?;
    let mut opt = OptimizerState::zeros_like(&params);
    let mut membrane_rng = root.split(streams::MEMBRANE);
    let mut drop_rng = root.split(streams::DROP);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let (mut loss_sum, mut guidance_sum, mut ce_sum) = (0.0, 0.0, 0.0);
        let (mut correct, mut seen, mut spikes) = (0usize, 0usize, 0u64);
        let batches = epoch_batches(train.len(), cfg.batch_size, &root, epoch);
        for (b, idx) in batches.iter().enumerate() {
            let x = train.batch_input::<F>(idx);
            let y = train.batch_labels(idx);
            let trace = forward_unroll(spec, &params, &x, &mut membrane_rng)?;
            let obj = batch_objective(&trace.logits, &y, &cfg.guidance, &mut drop_rng)?;
            if !obj.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    ce: obj.ce.as_f64(),
                    guidance: obj.guidance.as_f64(),
                });
            }
            let grads = backward_bptt(spec, &params, &trace, &obj.grad_logits)?;
            sgd_step(&mut params, &grads, &mut opt, lr, cfg.momentum, cfg.weight_decay)?;

            loss_sum += obj.total.as_f64();
            guidance_sum += obj.guidance.as_f64();
            ce_sum += obj.ce.as_f64();
            correct += correct_count(&trace.logits, &y)?;
            seen += idx.len();
            spikes += count_spikes(&trace).total();
        }
        let nb = batches.len() as f64;
        let val_acc = if val.is_empty() {
            f64::NAN
        } else {
            let val_rng = root.split(streams::VALIDATION).split(epoch as u64);
            run_inference(spec, &params, &val, cfg.batch_size, threads, &val_rng)?
                .accuracy(val.labels())
        };
        history.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / nb,
            guidance_loss: guidance_sum / nb,
            train_ce: ce_sum / nb,
            train_acc: correct as f64 / seen as f64,
            val_acc,
            alphas: params.alphas().iter().map(|a| a.as_f64()).collect(),
            total_spikes: spikes,
        });
    }
    Ok(TrainOutcome { params, history })
}
