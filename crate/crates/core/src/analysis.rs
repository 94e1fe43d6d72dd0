//! Diagnostics over trained networks: membrane-potential distributions and
//! their drift across timesteps, prefix-ensemble accuracy, the closed-form
//! temporal gradient sensitivity, and logit export.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::data::SpikeDataset;
use crate::error::{Error, Result};
use crate::network::{run_inference, ForwardTrace, Inference, ModelParams, ModelSpec};
use crate::numeric::{fmt_sig9, Real, RngState};

pub const DEFAULT_BINS: usize = 64;

/// Histogram range shared by every timestep of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeMode {
    /// Min/max over all timesteps.
    Pooled,
    /// `[-2, 2] * threshold`; values outside land in the edge bins.
    Fixed { threshold: f64 },
}

/// Pre-fire membrane potential statistics of one layer, per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    /// `histograms[t][bin]`; every row sums to batch x neurons.
    pub histograms: Vec<Vec<u64>>,
    pub range: (f64, f64),
}

impl DistributionStats {
    pub fn timesteps(&self) -> usize {
        self.mean.len()
    }

    pub fn bins(&self) -> usize {
        self.histograms.first().map_or(0, Vec::len)
    }
}

pub fn mp_stats<F: Real>(
    trace: &ForwardTrace<F>,
    layer: usize,
    bins: usize,
    range_mode: RangeMode,
) -> Result<DistributionStats> {
    if bins == 0 {
        return Err(Error::param("bins", "must be >= 1"));
    }
    let layers = trace.states.first().map_or(0, Vec::len);
    if trace.states.is_empty() {
        return Err(Error::Data("trace has no timesteps".into()));
    }
    if layer >= layers {
        return Err(Error::param(
            "layer",
            format!("index {layer} but the trace has {layers} spiking layers"),
        ));
    }
    let values: Vec<Vec<f64>> = trace
        .states
        .iter()
        .map(|step| step[layer].h_pre.data().iter().map(|v| v.as_f64()).collect())
        .collect();
    if values[0].is_empty() {
        return Err(Error::Data("trace layer holds no membrane values".into()));
    }

    let (mut lo, mut hi) = match range_mode {
        RangeMode::Pooled => values.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        }),
        RangeMode::Fixed { threshold } => (-2.0 * threshold, 2.0 * threshold),
    };
    if !(hi > lo) {
        // Degenerate range: centre a unit-wide window on the single value.
        let c = lo;
        lo = c - 0.5;
        hi = c + 0.5;
    }
    let width = (hi - lo) / bins as f64;

    let mut mean = Vec::with_capacity(values.len());
    let mut std = Vec::with_capacity(values.len());
    let mut histograms = Vec::with_capacity(values.len());
    for step in &values {
        let n = step.len() as f64;
        // Shifted by the first value so constant data gives exactly sigma = 0.
        let shift = step[0];
        let m = shift + step.iter().map(|v| v - shift).sum::<f64>() / n;
        let var = step.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let mut hist = vec![0u64; bins];
        for &v in step {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(bins - 1) };
            hist[b] += 1;
        }
        mean.push(m);
        std.push(var.sqrt());
        histograms.push(hist);
    }
    Ok(DistributionStats {
        layer,
        mean,
        std,
        histograms,
        range: (lo, hi),
    })
}

/// Cosine similarity of histograms `t` and `t + 1`, for `t` in `0..T-1`.
/// A zero histogram has similarity 0 with anything.
pub fn adjacent_cosine(stats: &DistributionStats) -> Vec<f64> {
    stats
        .histograms
        .windows(2)
        .map(|w| cosine(&w[0], &w[1]))
        .collect()
}

fn cosine(a: &[u64], b: &[u64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).min(1.0)
    }
}

/// Mean of [`adjacent_cosine`] over every spiking layer except the output
/// layer of a spiking readout; NaN with fewer than two timesteps.
pub fn mean_hidden_cosine<F: Real>(
    spec: &ModelSpec,
    trace: &ForwardTrace<F>,
    bins: usize,
    range_mode: RangeMode,
) -> Result<f64> {
    let hidden = spec.depth() - 1;
    let mut sims = Vec::new();
    for l in 0..hidden {
        sims.extend(adjacent_cosine(&mp_stats(trace, l, bins, range_mode)?));
    }
    Ok(if sims.is_empty() {
        f64::NAN
    } else {
        sims.iter().sum::<f64>() / sims.len() as f64
    })
}

/// `acc[k - 1]` is the accuracy of averaging the first `k` outputs.
pub fn prefix_accuracies<F: Real>(inference: &Inference<F>, labels: &[u32]) -> Vec<f64> {
    let steps = inference.logits.shape()[1];
    (1..=steps).map(|k| inference.prefix_accuracy(labels, k)).collect()
}

pub fn prefix_ensemble_eval<F: Real>(
    spec: &ModelSpec,
    params: &ModelParams<F>,
    data: &SpikeDataset,
    batch_size: usize,
    threads: usize,
    rng: &RngState,
) -> Result<Vec<f64>> {
    let inference = run_inference(spec, params, data, batch_size, threads, rng)?;
    Ok(prefix_accuracies(&inference, data.labels()))
}

/// Inputs of the temporal gradient sensitivity formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityQuery {
    pub tau: f64,
    pub alpha: f64,
    pub delta_t: u32,
    /// Effective diagonal factor; `1 - 1/tau` when absent.
    pub epsilon: Option<f64>,
}

impl SensitivityQuery {
    pub fn new(tau: f64, alpha: f64, delta_t: u32) -> Self {
        Self {
            tau,
            alpha,
            delta_t,
            epsilon: None,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(1.0 - 1.0 / self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) {
            return Err(Error::param("tau", format!("must be >= 1, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", format!("out of [0,1): {}", self.alpha)));
        }
        if self.delta_t == 0 {
            return Err(Error::param("delta_t", "must be >= 1"));
        }
        let eps = self.epsilon();
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::param("epsilon", format!("out of [0,1): {eps}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub vanilla: f64,
    pub smoothed: f64,
}

impl Sensitivity {
    pub fn ratio(&self) -> f64 {
        self.smoothed / self.vanilla
    }
}

/// Gradient reaching `t - delta_t` per unit gradient at `t` through the
/// membrane path alone: `eps^dt` for the plain neuron and
/// `(1 - a) eps (a + (1 - a) eps)^(dt - 1)` with smoothing.
pub fn temporal_sensitivity(q: &SensitivityQuery) -> Result<Sensitivity> {
    q.validate()?;
    let (a, eps, dt) = (q.alpha, q.epsilon(), q.delta_t as i32);
    Ok(Sensitivity {
        vanilla: eps.powi(dt),
        smoothed: (1.0 - a) * eps * (a + (1.0 - a) * eps).powi(dt - 1),
    })
}

/// Every combination of the three axes, in `tau`, `alpha`, `delta_t` order.
pub fn sensitivity_grid(taus: &[f64], alphas: &[f64], delta_ts: &[u32]) -> Result<Vec<(SensitivityQuery, Sensitivity)>> {
    let mut rows = Vec::with_capacity(taus.len() * alphas.len() * delta_ts.len());
    for &tau in taus {
        for &alpha in alphas {
            for &dt in delta_ts {
                let q = SensitivityQuery::new(tau, alpha, dt);
                rows.push((q, temporal_sensitivity(&q)?));
            }
        }
    }
    Ok(rows)
}

pub fn sensitivity_csv(rows: &[(SensitivityQuery, Sensitivity)]) -> String {
    let mut out = String::from("tau,alpha,delta_t,epsilon,vanilla,smoothed,ratio\n");
    for (q, s) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_sig9(q.tau),
            fmt_sig9(q.alpha),
            q.delta_t,
            fmt_sig9(q.epsilon()),
            fmt_sig9(s.vanilla),
            fmt_sig9(s.smoothed),
            fmt_sig9(s.ratio())
        );
    }
    out
}

/// `layer,timestep,mean,std`, timesteps counted from 1.
pub fn stats_csv(stats: &[DistributionStats]) -> String {
    let mut out = String::from("layer,timestep,mean,std\n");
    for s in stats {
        for t in 0..s.timesteps() {
            let _ = writeln!(out, "{},{},{},{}", s.layer + 1, t + 1, fmt_sig9(s.mean[t]), fmt_sig9(s.std[t]));
        }
    }
    out
}

/// `layer,timestep,bin,bin_low,bin_high,count`.
pub fn histogram_csv(stats: &[DistributionStats]) -> String {
    let mut out = String::from("layer,timestep,bin,bin_low,bin_high,count\n");
    for s in stats {
        let (lo, hi) = s.range;
        let width = (hi - lo) / s.bins() as f64;
        for (t, hist) in s.histograms.iter().enumerate() {
            for (b, &c) in hist.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{c}",
                    s.layer + 1,
                    t + 1,
                    b,
                    fmt_sig9(lo + b as f64 * width),
                    fmt_sig9(lo + (b + 1) as f64 * width)
                );
            }
        }
    }
    out
}

/// `layer,t_from,t_to,cosine`.
pub fn similarity_csv(stats: &[DistributionStats]) -> String {
    let mut out = String::from("layer,t_from,t_to,cosine\n");
    for s in stats {
        for (t, c) in adjacent_cosine(s).into_iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", s.layer + 1, t + 1, t + 2, fmt_sig9(c));
        }
    }
    out
}

/// `k,accuracy`.
pub fn prefix_csv(acc: &[f64]) -> String {
    let mut out = String::from("k,accuracy\n");
    for (k, a) in acc.iter().enumerate() {
        let _ = writeln!(out, "{},{}", k + 1, fmt_sig9(*a));
    }
    out
}

/// `sample_id,timestep,class,logit`, in that lexicographic order; timesteps
/// counted from 1.
pub fn logits_csv<F: Real>(inference: &Inference<F>) -> String {
    let (samples, steps, classes) = match *inference.logits.shape() {
        [s, t, c] => (s, t, c),
        _ => unreachable!("inference logits are rank 3"),
    };
    let data = inference.logits.data();
    let mut out = String::with_capacity(32 * data.len() + 32);
    out.push_str("sample_id,timestep,class,logit\n");
    for s in 0..samples {
        for t in 0..steps {
            for c in 0..classes {
                let v = data[(s * steps + t) * classes + c].as_f64();
                let _ = writeln!(out, "{s},{},{c},{}", t + 1, fmt_sig9(v));
            }
        }
    }
    out
}

pub fn export_logits<F: Real>(
    spec: &ModelSpec,
    params: &ModelParams<F>,
    data: &SpikeDataset,
    batch_size: usize,
    threads: usize,
    rng: &RngState,
) -> Result<String> {
    Ok(logits_csv(&run_inference(spec, params, data, batch_size, threads, rng)?))
}
