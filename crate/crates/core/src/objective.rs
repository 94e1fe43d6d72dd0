//! Training losses: ensemble cross-entropy, temporally adjacent guidance
//! (temperature-softened KL or MSE), the max-keep random drop rule, the total
//! loss, and ensemble decomposition metrics.
//!
//! Every scalar loss is a mean over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{softmax_rows, Real, RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    /// `T_KL^2 * KL(p(t+1) || p(t))` on temperature-softened outputs.
    #[default]
    Kl,
    /// Mean squared difference of raw outputs, for regression heads.
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub temperature: f64,
    pub drop_probability: f64,
    pub gamma: f64,
    pub mode: GuidanceMode,
    /// Let guidance gradients reach the later (teacher) output as well.
    pub symmetric: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            drop_probability: 0.5,
            gamma: 1.0,
            mode: GuidanceMode::Kl,
            symmetric: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::param(
                "temperature",
                format!("must be > 0, got {}", self.temperature),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::param(
                "drop_probability",
                format!("out of [0,1]: {}", self.drop_probability),
            ));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::param("gamma", format!("must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// A loss value with its gradients w.r.t. the earlier (student) and later
/// (teacher) outputs. The teacher gradient is zero when detached.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss<F> {
    pub value: F,
    pub grad_student: Tensor<F>,
    pub grad_teacher: Tensor<F>,
}

fn rows<F: Real>(x: &Tensor<F>, context: &'static str) -> Result<(usize, usize)> {
    match *x.shape() {
        [b, c] => Ok((b, c)),
        _ => Err(Error::dims(context, x.shape(), &[0, 0])),
    }
}

fn log_softmax_row<F: Real>(row: &[F], temperature: F) -> Vec<F> {
    let max = row
        .iter()
        .fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
    let scaled: Vec<F> = row.iter().map(|&v| (v - max) / temperature).collect();
    let lse = scaled.iter().map(|&z| z.exp()).sum::<F>().ln();
    scaled.into_iter().map(|z| z - lse).collect()
}

/// Guidance between adjacent outputs `o_t` (student) and `o_next` (teacher).
pub fn kl_guidance<F: Real>(o_t: &Tensor<F>, o_next: &Tensor<F>, temperature: F) -> Result<F> {
    Ok(kl_guidance_with_grad(o_t, o_next, temperature, false)?.value)
}

pub fn kl_guidance_with_grad<F: Real>(
    o_t: &Tensor<F>,
    o_next: &Tensor<F>,
    temperature: F,
    symmetric: bool,
) -> Result<PairLoss<F>> {
    if !(temperature > F::zero()) {
        return Err(Error::param(
            "temperature",
            format!("must be positive, got {temperature}"),
        ));
    }
    o_t.check_same_shape(o_next, "kl_guidance student vs teacher")?;
    let (batch, c) = rows(o_t, "kl_guidance")?;
    let inv_b = F::one() / F::lit(batch as f64);
    let t2 = temperature * temperature;
    let mut total = F::zero();
    let mut g_student = Vec::with_capacity(batch * c);
    let mut g_teacher = vec![F::zero(); batch * c];
    for b in 0..batch {
        let lp = log_softmax_row(&o_t.data()[b * c..(b + 1) * c], temperature);
        let lq = log_softmax_row(&o_next.data()[b * c..(b + 1) * c], temperature);
        let mut kl = F::zero();
        for j in 0..c {
            let q = lq[j].exp();
            if q > F::zero() {
                kl = kl + q * (lq[j] - lp[j]);
            }
        }
        // KL is nonnegative; clamp rounding noise.
        let kl = kl.max(F::zero());
        total = total + kl;
        for j in 0..c {
            let (p, q) = (lp[j].exp(), lq[j].exp());
            g_student.push(temperature * (p - q) * inv_b);
            if symmetric && q > F::zero() {
                g_teacher[b * c + j] = temperature * q * (lq[j] - lp[j] - kl) * inv_b;
            }
        }
    }
    Ok(PairLoss {
        value: t2 * total * inv_b,
        grad_student: Tensor::from_parts(vec![batch, c], g_student),
        grad_teacher: Tensor::from_parts(vec![batch, c], g_teacher),
    })
}

/// Mean over all elements of `(o_t - o_next)^2`.
pub fn mse_guidance<F: Real>(o_t: &Tensor<F>, o_next: &Tensor<F>) -> Result<F> {
    Ok(mse_guidance_with_grad(o_t, o_next, false)?.value)
}

pub fn mse_guidance_with_grad<F: Real>(
    o_t: &Tensor<F>,
    o_next: &Tensor<F>,
    symmetric: bool,
) -> Result<PairLoss<F>> {
    o_t.check_same_shape(o_next, "mse_guidance student vs teacher")?;
    let n = F::lit(o_t.len().max(1) as f64);
    let diff = o_t.zip_with(o_next, |a, b| a - b)?;
    let value = diff.data().iter().map(|&d| d * d).sum::<F>() / n;
    let two = F::lit(2.0);
    let grad_student = diff.map(|d| two * d / n);
    let grad_teacher = if symmetric {
        grad_student.map(|g| -g)
    } else {
        Tensor::zeros(o_t.shape())
    };
    Ok(PairLoss {
        value,
        grad_student,
        grad_teacher,
    })
}

/// Output of [`drop_combine`].
#[derive(Debug, Clone, PartialEq)]
pub struct DropCombine<F> {
    pub weights: Vec<F>,
    pub combined: F,
}

/// Keeps the largest loss (lowest index on ties), keeps every other loss
/// independently with probability `1 - p`, then normalises the kept weights
/// to sum to one.
pub fn drop_combine<F: Real>(losses: &[F], p: f64, rng: &mut RngState) -> Result<DropCombine<F>> {
    if losses.is_empty() {
        return Err(Error::param("losses", "need at least one guidance loss"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param("drop_probability", format!("out of [0,1]: {p}")));
    }
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l > losses[best] {
            best = i;
        }
    }
    let mut keep = vec![F::one(); losses.len()];
    for (i, w) in keep.iter_mut().enumerate() {
        if i != best && rng.uniform_scalar::<f64>() < p {
            *w = F::zero();
        }
    }
    let sum: F = keep.iter().copied().sum();
    let weights: Vec<F> = keep.into_iter().map(|w| w / sum).collect();
    let combined = weights
        .iter()
        .zip(losses)
        .fold(F::zero(), |acc, (&w, &l)| acc + w * l);
    Ok(DropCombine { weights, combined })
}

/// `gamma * guidance + ce`.
pub fn total_loss<F: Real>(guidance: F, ce: F, gamma: F) -> F {
    gamma * guidance + ce
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::dims("labels vs batch", &[labels.len()], &[batch]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Cross-entropy of `softmax(logits)` against `labels`, with `dL/dlogits`.
pub fn cross_entropy_with_grad<F: Real>(
    logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(F, Tensor<F>)> {
    let (batch, c) = rows(logits, "cross_entropy")?;
    check_labels(labels, batch, c)?;
    let inv_b = F::one() / F::lit(batch as f64);
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(batch * c);
    for (b, &y) in labels.iter().enumerate() {
        let lp = log_softmax_row(&logits.data()[b * c..(b + 1) * c], F::one());
        loss = loss - lp[y];
        for (j, &l) in lp.iter().enumerate() {
            let onehot = if j == y { F::one() } else { F::zero() };
            grad.push((l.exp() - onehot) * inv_b);
        }
    }
    Ok((loss * inv_b, Tensor::from_parts(vec![batch, c], grad)))
}

/// Mean over time of `[T x batch x C]` logits.
pub fn ensemble_average<F: Real>(trace_logits: &Tensor<F>) -> Result<Tensor<F>> {
    let (steps, batch, c) = match *trace_logits.shape() {
        [t, b, c] if t > 0 => (t, b, c),
        _ => return Err(Error::dims("ensemble logits [T, batch, C]", trace_logits.shape(), &[0, 0, 0])),
    };
    let mut avg = vec![F::zero(); batch * c];
    for t in 0..steps {
        for (a, &o) in avg.iter_mut().zip(trace_logits.outer(t)) {
            *a = *a + o;
        }
    }
    let inv_t = F::one() / F::lit(steps as f64);
    avg.iter_mut().for_each(|a| *a = *a * inv_t);
    Ok(Tensor::from_parts(vec![batch, c], avg))
}

/// Cross-entropy of the time-averaged output.
pub fn ce_ensemble<F: Real>(trace_logits: &Tensor<F>, labels: &[usize]) -> Result<F> {
    Ok(ce_ensemble_with_grad(trace_logits, labels)?.0)
}

/// As [`ce_ensemble`], plus `dL/dO_t` for every timestep.
pub fn ce_ensemble_with_grad<F: Real>(
    trace_logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(F, Tensor<F>)> {
    let avg = ensemble_average(trace_logits)?;
    let (loss, g_avg) = cross_entropy_with_grad(&avg, labels)?;
    let steps = trace_logits.shape()[0];
    let inv_t = F::one() / F::lit(steps as f64);
    let mut grad = Tensor::zeros(trace_logits.shape());
    for t in 0..steps {
        for (g, &ga) in grad.outer_mut(t).iter_mut().zip(g_avg.data()) {
            *g = ga * inv_t;
        }
    }
    Ok((loss, grad))
}

/// Ensemble decomposition of a set of member outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMetrics {
    /// Mean member cross-entropy.
    pub l_s: f64,
    /// Diversity.
    pub l_d: f64,
    /// Cross-entropy of the weighted member combination.
    pub l_a: f64,
    /// `l_s + l_a - alpha_div * l_d`.
    pub l_ensemble: f64,
    pub alpha_div: f64,
    pub gamma_weights: Vec<f64>,
    pub members: usize,
}

/// `member_logits` is `[N x batch x C]`.
///
/// Diversity follows the written normalisation: the ordered-pair sum of
/// probability inner products is divided by `N`, not `N (N - 1)`.
pub fn ensemble_metrics<F: Real>(
    member_logits: &Tensor<F>,
    labels: &[usize],
    alpha_div: f64,
    gamma_weights: &[f64],
) -> Result<EnsembleMetrics> {
    let (n, batch, c) = match *member_logits.shape() {
        [n, b, c] if n > 0 => (n, b, c),
        _ => return Err(Error::dims("member logits [N, batch, C]", member_logits.shape(), &[0, 0, 0])),
    };
    if gamma_weights.len() != n {
        return Err(Error::dims("gamma weights vs members", &[gamma_weights.len()], &[n]));
    }
    let wsum: f64 = gamma_weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-6 {
        return Err(Error::param("gamma_weights", format!("must sum to 1, got {wsum}")));
    }
    check_labels(labels, batch, c)?;

    let logits = member_logits.cast::<f64>();
    let member = |i: usize| Tensor::from_parts(vec![batch, c], logits.outer(i).to_vec());

    let mut l_s = 0.0;
    let mut probs = Vec::with_capacity(n);
    for i in 0..n {
        let m = member(i);
        l_s += cross_entropy_with_grad(&m, labels)?.0;
        probs.push(softmax_rows(&m, 1.0)?);
    }
    l_s /= n as f64;

    let mut l_d = 0.0;
    for b in 0..batch {
        let mut pair_sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (pi, pj) = (&probs[i].data()[b * c..(b + 1) * c], &probs[j].data()[b * c..(b + 1) * c]);
                pair_sum += pi.iter().zip(pj).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        l_d += 1.0 - pair_sum / n as f64;
    }
    l_d /= batch.max(1) as f64;

    let mut combined = vec![0.0; batch * c];
    for (i, &g) in gamma_weights.iter().enumerate() {
        for (acc, &o) in combined.iter_mut().zip(logits.outer(i)) {
            *acc += g * o;
        }
    }
    let l_a = cross_entropy_with_grad(&Tensor::from_parts(vec![batch, c], combined), labels)?.0;

    Ok(EnsembleMetrics {
        l_s,
        l_d,
        l_a,
        l_ensemble: l_s + l_a - alpha_div * l_d,
        alpha_div,
        gamma_weights: gamma_weights.to_vec(),
        members: n,
    })
}
