use crate::error::{Error, Result};
use crate::neuron::{lif_step, smoothed_lif_step, LayerState};
use crate::numeric::{matmul_nt, Real, RngState, Tensor};

use super::{ModelParams, ModelSpec, Readout};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Intermediate values of one current standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache<F> {
    /// Standardised current, `[batch x neurons]`.
    pub x_hat: Tensor<F>,
    /// Population standard deviation over the batch, per neuron.
    pub std: Vec<F>,
}

/// Everything recorded by [`forward_unroll`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<F> {
    /// Input spikes `[T x batch x in]`.
    pub input: Tensor<F>,
    /// `H(0) = Hs(0)` of every spiking layer.
    pub initial: Vec<LayerState<F>>,
    /// `states[t][l]` for every spiking layer `l`.
    pub states: Vec<Vec<LayerState<F>>>,
    /// `norm[t][l]`, empty without normalisation.
    pub norm: Vec<Vec<NormCache<F>>>,
    /// Smoothing coefficients used, one per spiking layer.
    pub alphas: Vec<F>,
    /// Logits `O_t`, `[T x batch x classes]`.
    pub logits: Tensor<F>,
}

impl<F: Real> ForwardTrace<F> {
    pub fn timesteps(&self) -> usize {
        self.states.len()
    }

    pub fn batch(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.logits.shape()[2]
    }

    /// `O_t` as a `[batch x classes]` tensor (`t` is 0-based).
    pub fn logits_at(&self, t: usize) -> Tensor<F> {
        Tensor::from_parts(
            vec![self.batch(), self.classes()],
            self.logits.outer(t).to_vec(),
        )
    }

    /// Spike input of weight layer `l` at timestep `t`.
    pub(crate) fn layer_input(&self, t: usize, l: usize) -> Tensor<F> {
        if l == 0 {
            let (b, n) = (self.input.shape()[1], self.input.shape()[2]);
            Tensor::from_parts(vec![b, n], self.input.outer(t).to_vec())
        } else {
            self.states[t][l - 1].s.clone()
        }
    }
}

/// Runs the network for every timestep of `input` (`[T x batch x in]`).
///
/// `rng` is only consumed when the membrane initialisation is random.
pub fn forward_unroll<F: Real>(
    spec: &ModelSpec,
    params: &ModelParams<F>,
    input: &Tensor<F>,
    rng: &mut RngState,
) -> Result<ForwardTrace<F>> {
    params.check(spec)?;
    let (steps, batch) = match *input.shape() {
        [t, b, n] if n == spec.inputs() => (t, b),
        _ => {
            return Err(Error::dims(
                "forward input [T, batch, inputs]",
                input.shape(),
                &[0, 0, spec.inputs()],
            ))
        }
    };
    if steps == 0 || batch == 0 {
        return Err(Error::Data("input needs at least one timestep and one sample".into()));
    }
    if !input.all_finite() {
        return Err(Error::Data("non-finite value in input spikes".into()));
    }

    let cfg = &spec.neuron;
    let alphas = if spec.smoothing_enabled {
        params.alphas()
    } else {
        Vec::new()
    };
    let spiking = spec.spiking_layers();
    let initial: Vec<LayerState<F>> = (0..spiking)
        .map(|l| {
            let n = spec.layer_sizes[l + 1];
            LayerState::initial(cfg.initial_potential(&[batch, n], rng))
        })
        .collect();

    let classes = spec.classes();
    let decay = cfg.decay::<F>();
    let mut logits = Tensor::zeros(&[steps, batch, classes]);
    let mut readout = Tensor::<F>::zeros(&[batch, classes]);
    let mut states: Vec<Vec<LayerState<F>>> = Vec::with_capacity(steps);
    let mut norm = Vec::with_capacity(if spec.normalize { steps } else { 0 });

    for t in 0..steps {
        let mut x = Tensor::from_parts(vec![batch, spec.inputs()], input.outer(t).to_vec());
        let mut step_states = Vec::with_capacity(spiking);
        let mut step_norm = Vec::new();
        for (l, w) in params.weights.iter().enumerate() {
            let current = matmul_nt(&x, w)?;
            if spec.is_spiking(l) {
                let current = if spec.normalize {
                    let (out, cache) =
                        standardize(&current, &params.norm_scale[l], &params.norm_shift[l]);
                    step_norm.push(cache);
                    out
                } else {
                    current
                };
                let prev = if t == 0 { &initial[l] } else { &states[t - 1][l] };
                let state = if spec.smoothing_enabled {
                    smoothed_lif_step(&prev.h, &prev.h_smooth, &current, cfg, alphas[l])?
                } else {
                    lif_step(&prev.h, &current, cfg)?
                };
                x = state.s.clone();
                step_states.push(state);
            } else {
                // Leaky integrator readout: V(t) = decay * V(t-1) + I(t).
                readout = readout.zip_with(&current, |v, i| decay * v + i)?;
                x = readout.clone();
            }
        }
        logits.outer_mut(t).copy_from_slice(x.data());
        states.push(step_states);
        if spec.normalize {
            norm.push(step_norm);
        }
    }

    debug_assert!(spec.readout == Readout::SpikingOutput || spiking + 1 == spec.depth());
    Ok(ForwardTrace {
        input: input.clone(),
        initial,
        states,
        norm,
        alphas,
        logits,
    })
}

/// `scale * (x - mean) / (std + eps) + shift`, statistics over the batch axis.
pub(crate) fn standardize<F: Real>(
    x: &Tensor<F>,
    scale: &Tensor<F>,
    shift: &Tensor<F>,
) -> (Tensor<F>, NormCache<F>) {
    let (batch, n) = (x.shape()[0], x.shape()[1]);
    let inv_b = F::one() / F::lit(batch as f64);
    let eps = F::lit(NORM_EPS);
    let xd = x.data();
    let mut x_hat = vec![F::zero(); batch * n];
    let mut out = vec![F::zero(); batch * n];
    let mut std = vec![F::zero(); n];
    for j in 0..n {
        let mut mean = F::zero();
        for b in 0..batch {
            mean = mean + xd[b * n + j];
        }
        mean = mean * inv_b;
        let mut var = F::zero();
        for b in 0..batch {
            let c = xd[b * n + j] - mean;
            var = var + c * c;
        }
        let sd = (var * inv_b).sqrt();
        std[j] = sd;
        let (g, beta) = (scale.data()[j], shift.data()[j]);
        for b in 0..batch {
            let xh = (xd[b * n + j] - mean) / (sd + eps);
            x_hat[b * n + j] = xh;
            out[b * n + j] = g * xh + beta;
        }
    }
    (
        Tensor::from_parts(vec![batch, n], out),
        NormCache {
            x_hat: Tensor::from_parts(vec![batch, n], x_hat),
            std,
        },
    )
}
