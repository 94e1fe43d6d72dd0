//! Leaky integrate-and-fire dynamics, with and without membrane potential
//! smoothing, plus the rectangular surrogate derivative.
//!
//! One step of the smoothed neuron, in order:
//!
//! ```text
//! U(t)  = (1 - 1/tau) * H(t-1)                 leak
//! Hs(t) = alpha * Hs(t-1) + (1 - alpha) * U(t) smoothing
//! Hp(t) = Hs(t) + I(t)                         charge
//! S(t)  = 1 if Hp(t) >= threshold else 0       fire
//! H(t)  = Hp(t) - S(t) * threshold             soft reset
//! ```
//!
//! The vanilla neuron is the same sequence without the smoothing line
//! (`Hp = U + I`). Boundary: `H(0)` comes from [`MembraneInit`] and
//! `Hs(0) = H(0)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Real, RngState, Tensor};

/// Initial membrane potential `H(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MembraneInit {
    Zero,
    /// Independent uniform draws in `[low, high)` per neuron and sample.
    UniformRandom { low: f64, high: f64 },
}

/// Nonlinearity used to produce `S` in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeFunction {
    /// Binary firing, the real neuron.
    #[default]
    Heaviside,
    /// `clamp((h - threshold) / a + 1/2, 0, 1)`: the piecewise-linear function
    /// whose derivative is exactly the rectangular surrogate. Makes the forward
    /// pass differentiable so backward passes can be checked numerically.
    ClippedLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronConfig {
    pub tau: f64,
    pub threshold: f64,
    pub surrogate_width: f64,
    pub mp_init: MembraneInit,
    pub spike_fn: SpikeFunction,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            threshold: 1.0,
            surrogate_width: 1.0,
            mp_init: MembraneInit::Zero,
            spike_fn: SpikeFunction::Heaviside,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) || !self.tau.is_finite() {
            return Err(Error::param("tau", format!("must be > 1, got {}", self.tau)));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::param(
                "threshold",
                format!("must be > 0, got {}", self.threshold),
            ));
        }
        if !(self.surrogate_width > 0.0) || !self.surrogate_width.is_finite() {
            return Err(Error::param(
                "surrogate_width",
                format!("must be > 0, got {}", self.surrogate_width),
            ));
        }
        if let MembraneInit::UniformRandom { low, high } = self.mp_init {
            if !(low < high) || !low.is_finite() || !high.is_finite() {
                return Err(Error::param(
                    "mp_init",
                    format!("uniform range must satisfy low < high, got [{low}, {high})"),
                ));
            }
        }
        Ok(())
    }

    /// Random-MP initialisation over `[0, threshold)`.
    pub fn random_mp(threshold: f64) -> MembraneInit {
        MembraneInit::UniformRandom {
            low: 0.0,
            high: threshold,
        }
    }

    /// Leak factor `1 - 1/tau`.
    pub fn decay<F: Real>(&self) -> F {
        F::one() - F::one() / F::lit(self.tau)
    }

    pub(crate) fn initial_potential<F: Real>(
        &self,
        shape: &[usize],
        rng: &mut RngState,
    ) -> Tensor<F> {
        match self.mp_init {
            MembraneInit::Zero => Tensor::zeros(shape),
            MembraneInit::UniformRandom { low, high } => {
                rng.uniform_range(shape, F::lit(low), F::lit(high))
            }
        }
    }

    pub(crate) fn fire<F: Real>(&self, h_pre: F) -> F {
        let threshold = F::lit(self.threshold);
        match self.spike_fn {
            SpikeFunction::Heaviside => {
                if h_pre >= threshold {
                    F::one()
                } else {
                    F::zero()
                }
            }
            SpikeFunction::ClippedLinear => {
                let half = F::lit(0.5);
                let x = (h_pre - threshold) / F::lit(self.surrogate_width) + half;
                x.max(F::zero()).min(F::one())
            }
        }
    }

    /// `(1/a) * [|h - threshold| < a/2]`.
    pub(crate) fn surrogate<F: Real>(&self, h_pre: F) -> F {
        let a = F::lit(self.surrogate_width);
        if (h_pre - F::lit(self.threshold)).abs() < a / F::lit(2.0) {
            F::one() / a
        } else {
            F::zero()
        }
    }
}

/// Membrane state of one layer after one timestep. All tensors are
/// `[batch x neurons]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<F> {
    /// Post-reset potential `H(t)`.
    pub h: Tensor<F>,
    /// Smoothed potential `Hs(t)`. The vanilla neuron stores `h_pre` here.
    pub h_smooth: Tensor<F>,
    /// Leaked potential `U(t)`.
    pub u: Tensor<F>,
    /// Input current `I(t)`.
    pub i: Tensor<F>,
    pub s: Tensor<F>,
    /// Pre-fire potential `Hp(t)`.
    pub h_pre: Tensor<F>,
}

impl<F: Real> LayerState<F> {
    /// State at `t = 0`: `H(0) = Hs(0) = init`, everything else zero.
    pub fn initial(init: Tensor<F>) -> Self {
        let zeros = Tensor::zeros(init.shape());
        Self {
            h_smooth: init.clone(),
            h_pre: init.clone(),
            h: init,
            u: zeros.clone(),
            i: zeros.clone(),
            s: zeros,
        }
    }
}

pub fn lif_step<F: Real>(
    prev_h: &Tensor<F>,
    input: &Tensor<F>,
    cfg: &NeuronConfig,
) -> Result<LayerState<F>> {
    prev_h.check_same_shape(input, "lif_step prev_h vs input")?;
    let decay = cfg.decay::<F>();
    let threshold = F::lit(cfg.threshold);
    let u = prev_h.map(|h| decay * h);
    let h_pre = u.zip_with(input, |u, i| u + i)?;
    let s = h_pre.map(|h| cfg.fire(h));
    let h = h_pre.zip_with(&s, |hp, s| hp - s * threshold)?;
    Ok(LayerState {
        h,
        h_smooth: h_pre.clone(),
        u,
        i: input.clone(),
        s,
        h_pre,
    })
}

pub fn smoothed_lif_step<F: Real>(
    prev_h: &Tensor<F>,
    prev_h_smooth: &Tensor<F>,
    input: &Tensor<F>,
    cfg: &NeuronConfig,
    alpha: F,
) -> Result<LayerState<F>> {
    if !(alpha > F::zero() && alpha < F::one()) {
        return Err(Error::param("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    prev_h.check_same_shape(prev_h_smooth, "smoothed_lif_step prev_h vs prev_h_smooth")?;
    prev_h.check_same_shape(input, "smoothed_lif_step prev_h vs input")?;
    let decay = cfg.decay::<F>();
    let threshold = F::lit(cfg.threshold);
    let keep = F::one() - alpha;
    let u = prev_h.map(|h| decay * h);
    let h_smooth = prev_h_smooth.zip_with(&u, |hs, u| alpha * hs + keep * u)?;
    let h_pre = h_smooth.zip_with(input, |hs, i| hs + i)?;
    let s = h_pre.map(|h| cfg.fire(h));
    let h = h_pre.zip_with(&s, |hp, s| hp - s * threshold)?;
    Ok(LayerState {
        h,
        h_smooth,
        u,
        i: input.clone(),
        s,
        h_pre,
    })
}

/// Rectangular surrogate for `dS/dHp`, zero on the window edge.
pub fn surrogate_grad<F: Real>(h_pre: &Tensor<F>, cfg: &NeuronConfig) -> Tensor<F> {
    h_pre.map(|h| cfg.surrogate(h))
}

/// Local `dS(t)/dalpha = surrogate(Hp(t)) * (Hs(t-1) - U(t))`, treating
/// `Hs(t-1)` and `U(t)` as constants.
pub fn dspike_dalpha_local<F: Real>(
    h_pre: &Tensor<F>,
    prev_h_smooth: &Tensor<F>,
    u: &Tensor<F>,
    cfg: &NeuronConfig,
) -> Result<Tensor<F>> {
    h_pre.check_same_shape(prev_h_smooth, "dspike_dalpha_local h_pre vs prev_h_smooth")?;
    h_pre.check_same_shape(u, "dspike_dalpha_local h_pre vs u")?;
    let diff = prev_h_smooth.zip_with(u, |hs, u| hs - u)?;
    h_pre.zip_with(&diff, |h, d| cfg.surrogate(h) * d)
}

pub const ALPHA_EPS: f64 = 1e-6;

/// `sigmoid(beta)`, clamped to `[1e-6, 1 - 1e-6]`.
pub fn alpha_from_beta<F: Real>(beta: F) -> F {
    let one = F::one();
    let alpha = if beta >= F::zero() {
        one / (one + (-beta).exp())
    } else {
        let e = beta.exp();
        e / (one + e)
    };
    let eps = F::lit(ALPHA_EPS);
    alpha.max(eps).min(one - eps)
}

/// `d alpha / d beta = alpha (1 - alpha)`.
pub fn dalpha_dbeta<F: Real>(alpha: F) -> F {
    alpha * (F::one() - alpha)
}
