//! Fully connected spiking network unrolled over `T` timesteps, with a
//! hand-written backward pass through time.

mod backward;
mod checkpoint;
mod forward;
mod infer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{alpha_from_beta, LayerState, NeuronConfig};
use crate::numeric::{Real, RngState, Tensor};

pub use backward::{backward_bptt, backward_spiking_layer, Gradients, LayerAdjoint};
pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry};
pub use forward::{forward_unroll, ForwardTrace, NormCache};
pub use infer::{argmax, run_inference, Inference};

/// How the final layer turns into logits `O_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Non-spiking leaky integrator; `O_t` is its membrane potential.
    #[default]
    MembraneReadout,
    /// The final layer spikes like the others and `O_t` is its spike vector.
    SpikingOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Input, hidden..., output widths.
    pub layer_sizes: Vec<usize>,
    pub neuron: NeuronConfig,
    pub smoothing_enabled: bool,
    pub readout: Readout,
    /// Standardise currents over the batch (per timestep) before each spiking
    /// layer, followed by a learnable per-neuron scale and shift.
    pub normalize: bool,
    /// Propagate the smoothing-coefficient gradient through the full temporal
    /// recursion instead of only the spike emitted at each timestep.
    pub full_alpha_chain: bool,
    /// Initial `beta` for every smoothing coefficient.
    pub beta_init: f64,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            neuron: NeuronConfig::default(),
            smoothing_enabled: false,
            readout: Readout::MembraneReadout,
            normalize: false,
            full_alpha_chain: false,
            beta_init: 0.0,
        }
    }

    pub fn with_smoothing(mut self, enabled: bool) -> Self {
        self.smoothing_enabled = enabled;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::param(
                "layer_sizes",
                format!("need at least 2 sizes, got {}", self.layer_sizes.len()),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::param("layer_sizes", "every size must be >= 1"));
        }
        if !self.beta_init.is_finite() {
            return Err(Error::param("beta_init", "must be finite"));
        }
        self.neuron.validate()
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// Whether weight layer `l` (0-based) feeds spiking neurons.
    pub fn is_spiking(&self, l: usize) -> bool {
        l + 1 < self.depth() || self.readout == Readout::SpikingOutput
    }

    pub fn spiking_layers(&self) -> usize {
        (0..self.depth()).filter(|&l| self.is_spiking(l)).count()
    }
}

/// Learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    /// `W^l`, shape `[fan_out x fan_in]`.
    pub weights: Vec<Tensor<F>>,
    /// One smoothing parameter per spiking layer (empty without smoothing).
    pub betas: Vec<F>,
    /// Per-spiking-layer scale and shift of the current standardisation
    /// (empty without normalisation).
    pub norm_scale: Vec<Tensor<F>>,
    pub norm_shift: Vec<Tensor<F>>,
}

impl<F: Real> ModelParams<F> {
    /// Weights uniform in `+-sqrt(1/fan_in)`, `beta = beta_init`, unit scale,
    /// zero shift.
    pub fn init(spec: &ModelSpec, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let weights = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = F::lit((1.0 / fan_in as f64).sqrt());
                rng.uniform_range(&[fan_out, fan_in], -bound, bound)
            })
            .collect();
        let spiking_widths: Vec<usize> = (0..spec.depth())
            .filter(|&l| spec.is_spiking(l))
            .map(|l| spec.layer_sizes[l + 1])
            .collect();
        let betas = if spec.smoothing_enabled {
            vec![F::lit(spec.beta_init); spiking_widths.len()]
        } else {
            Vec::new()
        };
        let (norm_scale, norm_shift) = if spec.normalize {
            (
                spiking_widths.iter().map(|&n| Tensor::full(&[n], F::one())).collect(),
                spiking_widths.iter().map(|&n| Tensor::zeros(&[n])).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            weights,
            betas,
            norm_scale,
            norm_shift,
        })
    }

    /// Checks that parameter counts and shapes fit `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        spec.validate()?;
        if self.weights.len() != spec.depth() {
            return Err(Error::Consistency(format!(
                "{} weight tensors for {} layers",
                self.weights.len(),
                spec.depth()
            )));
        }
        for (l, w) in self.weights.iter().enumerate() {
            let expected = [spec.layer_sizes[l + 1], spec.layer_sizes[l]];
            if w.shape() != expected {
                return Err(Error::Consistency(format!(
                    "weight {} has shape {:?}, expected {:?}",
                    l + 1,
                    w.shape(),
                    expected
                )));
            }
        }
        let spiking = spec.spiking_layers();
        let want_betas = if spec.smoothing_enabled { spiking } else { 0 };
        if self.betas.len() != want_betas {
            return Err(Error::Consistency(format!(
                "{} smoothing parameters, expected {want_betas}",
                self.betas.len()
            )));
        }
        let want_norm = if spec.normalize { spiking } else { 0 };
        if self.norm_scale.len() != want_norm || self.norm_shift.len() != want_norm {
            return Err(Error::Consistency(format!(
                "{}/{} normalisation tensors, expected {want_norm}",
                self.norm_scale.len(),
                self.norm_shift.len()
            )));
        }
        Ok(())
    }

    /// Current smoothing coefficients `alpha^l = sigmoid(beta^l)`.
    pub fn alphas(&self) -> Vec<F> {
        self.betas.iter().map(|&b| alpha_from_beta(b)).collect()
    }

    /// Named, flattened view of every parameter in a fixed order.
    pub fn named(&self) -> Vec<(String, Vec<usize>, Vec<F>)> {
        let mut out = Vec::new();
        for (l, w) in self.weights.iter().enumerate() {
            out.push((format!("layer{}.weight", l + 1), w.shape().to_vec(), w.data().to_vec()));
        }
        for (k, b) in self.betas.iter().enumerate() {
            out.push((format!("smooth{}.beta", k + 1), vec![1], vec![*b]));
        }
        for (k, (g, b)) in self.norm_scale.iter().zip(&self.norm_shift).enumerate() {
            out.push((format!("norm{}.scale", k + 1), g.shape().to_vec(), g.data().to_vec()));
            out.push((format!("norm{}.shift", k + 1), b.shape().to_vec(), b.data().to_vec()));
        }
        out
    }
}

/// Spike counts per spiking layer and timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeCounts {
    /// `per_layer[l][t]`.
    pub per_layer: Vec<Vec<u64>>,
}

impl SpikeCounts {
    pub fn total(&self) -> u64 {
        self.per_layer.iter().flatten().sum()
    }

    pub fn layer_total(&self, layer: usize) -> u64 {
        self.per_layer[layer].iter().sum()
    }
}

/// Counts `S = 1` events in every spiking layer of `trace`. The total is the
/// energy proxy.
pub fn count_spikes<F: Real>(trace: &ForwardTrace<F>) -> SpikeCounts {
    let layers = trace.states.first().map_or(0, |s| s.len());
    let per_layer = (0..layers)
        .map(|l| {
            trace
                .states
                .iter()
                .map(|step| count_ones(&step[l]))
                .collect()
        })
        .collect();
    SpikeCounts { per_layer }
}

fn count_ones<F: Real>(state: &LayerState<F>) -> u64 {
    state.s.data().iter().filter(|&&s| s == F::one()).count() as u64
}
