use crate::error::{Error, Result};
use crate::neuron::{dalpha_dbeta, LayerState, NeuronConfig};
use crate::numeric::{matmul, matmul_tn, Real, Tensor};

use super::forward::{ForwardTrace, NormCache, NORM_EPS};
use super::{ModelParams, ModelSpec};

/// Parameter gradients, laid out like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub weights: Vec<Tensor<F>>,
    pub betas: Vec<F>,
    pub norm_scale: Vec<Tensor<F>>,
    pub norm_shift: Vec<Tensor<F>>,
}

/// Result of sweeping one spiking layer backwards in time.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAdjoint<F> {
    /// `dL/dI(t)` for every timestep, where `I` is the current entering the
    /// neuron (after standardisation, if any).
    pub grad_current: Vec<Tensor<F>>,
    /// `dL/dalpha`; zero without smoothing.
    pub grad_alpha: F,
}

/// Reverse-time sweep of a single spiking layer.
///
/// `grad_spikes[t]` is the spatial gradient `dL/dS(t)` arriving from the layer
/// above. `smoothing` is `Some((alpha, full_chain))` for the smoothed neuron.
///
/// Per timestep, with `g_h` the adjoint of `H(t)` carried back from `U(t+1)`
/// and `g_hs` the adjoint of `Hs(t)` carried back from `Hs(t+1)`:
///
/// ```text
/// g_s   = dL/dS(t) - threshold * g_h
/// g_hp  = g_h + g_s * surrogate(Hp(t))
/// g_hs  = g_hp + alpha * g_hs(t+1)
/// g_u   = (1 - alpha) * g_hs          (g_hp without smoothing)
/// g_h(t-1) = decay * g_u
/// ```
///
/// The truncated alpha gradient sums `g_s * surrogate * (Hs(t-1) - U(t))`;
/// the full chain sums `g_hs * (Hs(t-1) - U(t))`.
pub fn backward_spiking_layer<F: Real>(
    cfg: &NeuronConfig,
    smoothing: Option<(F, bool)>,
    initial: &LayerState<F>,
    states: &[&LayerState<F>],
    grad_spikes: &[Tensor<F>],
) -> Result<LayerAdjoint<F>> {
    if states.len() != grad_spikes.len() {
        return Err(Error::Consistency(format!(
            "{} states but {} spike gradients",
            states.len(),
            grad_spikes.len()
        )));
    }
    let shape = initial.h.shape().to_vec();
    let n = initial.h.len();
    let decay = cfg.decay::<F>();
    let threshold = F::lit(cfg.threshold);
    let mut g_h = vec![F::zero(); n];
    let mut g_hs_carry = vec![F::zero(); n];
    let mut grad_alpha = F::zero();
    let mut grad_current = vec![Tensor::zeros(&shape); states.len()];

    for t in (0..states.len()).rev() {
        let st = states[t];
        let prev_hs = if t == 0 {
            &initial.h_smooth
        } else {
            &states[t - 1].h_smooth
        };
        grad_spikes[t].check_same_shape(&st.h, "spike gradient vs layer state")?;
        let (hp, u, phs) = (st.h_pre.data(), st.u.data(), prev_hs.data());
        let gs_in = grad_spikes[t].data();
        let gi = grad_current[t].data_mut();
        for k in 0..n {
            let g_s = gs_in[k] - threshold * g_h[k];
            let through_spike = g_s * cfg.surrogate(hp[k]);
            let g_hp = g_h[k] + through_spike;
            gi[k] = g_hp;
            let g_u = match smoothing {
                Some((alpha, full_chain)) => {
                    let g_hs = g_hp + g_hs_carry[k];
                    let local = phs[k] - u[k];
                    let contrib = if full_chain { g_hs } else { through_spike };
                    grad_alpha = grad_alpha + contrib * local;
                    g_hs_carry[k] = alpha * g_hs;
                    (F::one() - alpha) * g_hs
                }
                None => g_hp,
            };
            g_h[k] = decay * g_u;
        }
    }
    Ok(LayerAdjoint {
        grad_current,
        grad_alpha,
    })
}

/// Backpropagation through time for one recorded forward pass.
///
/// `grad_logits` is `dL/dO_t`, shaped like `trace.logits`.
pub fn backward_bptt<F: Real>(
    spec: &ModelSpec,
    params: &ModelParams<F>,
    trace: &ForwardTrace<F>,
    grad_logits: &Tensor<F>,
) -> Result<Gradients<F>> {
    params.check(spec)?;
    check_trace(spec, trace)?;
    grad_logits.check_same_shape(&trace.logits, "grad_logits vs trace logits")?;

    let steps = trace.timesteps();
    let depth = spec.depth();
    let batch = trace.batch();
    let cfg = &spec.neuron;
    let decay = cfg.decay::<F>();

    let mut grads = Gradients {
        weights: params.weights.iter().map(|w| Tensor::zeros(w.shape())).collect(),
        betas: vec![F::zero(); params.betas.len()],
        norm_scale: params.norm_scale.iter().map(|g| Tensor::zeros(g.shape())).collect(),
        norm_shift: params.norm_shift.iter().map(|b| Tensor::zeros(b.shape())).collect(),
    };

    // dL/d(output of layer l) per timestep, starting from the logits.
    let mut grad_out: Vec<Tensor<F>> = (0..steps)
        .map(|t| Tensor::from_parts(vec![batch, spec.classes()], grad_logits.outer(t).to_vec()))
        .collect();

    for l in (0..depth).rev() {
        let grad_current: Vec<Tensor<F>> = if spec.is_spiking(l) {
            let smoothing = spec
                .smoothing_enabled
                .then(|| (trace.alphas[l], spec.full_alpha_chain));
            let states: Vec<&LayerState<F>> = trace.states.iter().map(|s| &s[l]).collect();
            let adj =
                backward_spiking_layer(cfg, smoothing, &trace.initial[l], &states, &grad_out)?;
            if spec.smoothing_enabled {
                grads.betas[l] = adj.grad_alpha * dalpha_dbeta(trace.alphas[l]);
            }
            if spec.normalize {
                let mut raw = Vec::with_capacity(steps);
                for (t, g) in adj.grad_current.iter().enumerate() {
                    raw.push(standardize_backward(
                        g,
                        &trace.norm[t][l],
                        &params.norm_scale[l],
                        &mut grads.norm_scale[l],
                        &mut grads.norm_shift[l],
                    ));
                }
                raw
            } else {
                adj.grad_current
            }
        } else {
            // Readout V(t) = decay * V(t-1) + I(t).
            let mut carry = Tensor::zeros(grad_out[0].shape());
            let mut out = vec![Tensor::zeros(grad_out[0].shape()); steps];
            for t in (0..steps).rev() {
                carry = grad_out[t].zip_with(&carry, |g, c| g + decay * c)?;
                out[t] = carry.clone();
            }
            out
        };

        for t in (0..steps).rev() {
            let x = trace.layer_input(t, l);
            let dw = matmul_tn(&grad_current[t], &x)?;
            grads.weights[l] = grads.weights[l].zip_with(&dw, |a, b| a + b)?;
        }
        if l > 0 {
            grad_out = grad_current
                .iter()
                .map(|g| matmul(g, &params.weights[l]))
                .collect::<Result<_>>()?;
        }
    }
    Ok(grads)
}

fn check_trace<F: Real>(spec: &ModelSpec, trace: &ForwardTrace<F>) -> Result<()> {
    let spiking = spec.spiking_layers();
    let steps = trace.timesteps();
    let consistent = trace.initial.len() == spiking
        && trace.states.iter().all(|s| s.len() == spiking)
        && trace.logits.shape().len() == 3
        && trace.logits.shape()[0] == steps
        && trace.logits.shape()[2] == spec.classes()
        && trace.input.shape().len() == 3
        && trace.input.shape()[2] == spec.inputs()
        && (!spec.smoothing_enabled || trace.alphas.len() == spiking)
        && (!spec.normalize || trace.norm.len() == steps);
    if !consistent {
        return Err(Error::Consistency(
            "forward trace was not produced by this model spec".into(),
        ));
    }
    Ok(())
}

/// Backward of `y = scale * (x - mean) / (std + eps) + shift`.
fn standardize_backward<F: Real>(
    grad_y: &Tensor<F>,
    cache: &NormCache<F>,
    scale: &Tensor<F>,
    grad_scale: &mut Tensor<F>,
    grad_shift: &mut Tensor<F>,
) -> Tensor<F> {
    let (batch, n) = (grad_y.shape()[0], grad_y.shape()[1]);
    let bf = F::lit(batch as f64);
    let eps = F::lit(NORM_EPS);
    let gy = grad_y.data();
    let xh = cache.x_hat.data();
    let mut gx = vec![F::zero(); batch * n];
    for j in 0..n {
        let g = scale.data()[j];
        let sd = cache.std[j];
        let d = sd + eps;
        let mut sum_gy = F::zero();
        let mut sum_gy_xh = F::zero();
        let mut sum_gxh = F::zero();
        let mut sum_gxh_c = F::zero();
        for b in 0..batch {
            let k = b * n + j;
            sum_gy = sum_gy + gy[k];
            sum_gy_xh = sum_gy_xh + gy[k] * xh[k];
            let gxh = gy[k] * g;
            sum_gxh = sum_gxh + gxh;
            // centred input c = x_hat * d
            sum_gxh_c = sum_gxh_c + gxh * xh[k] * d;
        }
        grad_scale.data_mut()[j] = grad_scale.data()[j] + sum_gy_xh;
        grad_shift.data_mut()[j] = grad_shift.data()[j] + sum_gy;
        let mean_gxh = sum_gxh / bf;
        for b in 0..batch {
            let k = b * n + j;
            let gxh = gy[k] * g;
            let mut v = (gxh - mean_gxh) / d;
            if sd > F::zero() {
                let c = xh[k] * d;
                v = v - c * sum_gxh_c / (bf * sd * d * d);
            }
            gx[k] = v;
        }
    }
    Tensor::from_parts(vec![batch, n], gx)
}
