//! Scalar, one-neuron-at-a-time reference loops for the step functions.

use smoothsnn::neuron::{lif_step, smoothed_lif_step};
use smoothsnn::{NeuronConfig, Real, RngState, Tensor};

macro_rules! ensure_eq {
    ($a:expr, $b:expr) => {
        ensure_eq!($a, $b, "{}", stringify!($a))
    };
    ($a:expr, $b:expr, $($msg:tt)+) => {
        if $a != $b {
            return Err(format!("{:?} != {:?}: {}", $a, $b, format!($($msg)+)));
        }
    };
}

struct Step<F> {
    h: F,
    hs: F,
    hp: F,
    s: F,
}

fn oracle_lif<F: Real>(inputs: &[F], tau: F, theta: F) -> Vec<Step<F>> {
    let lambda = F::one() - F::one() / tau;
    let mut h = F::zero();
    let mut out = Vec::new();
    for &i in inputs {
        let hp = lambda * h + i;
        let fired = hp >= theta;
        h = if fired { hp - theta } else { hp };
        out.push(Step { h, hs: hp, hp, s: if fired { F::one() } else { F::zero() } });
    }
    out
}

fn oracle_smoothed<F: Real>(inputs: &[F], tau: F, theta: F, alpha: F) -> Vec<Step<F>> {
    let lambda = F::one() - F::one() / tau;
    let (mut h, mut hs) = (F::zero(), F::zero());
    let mut out = Vec::new();
    for &i in inputs {
        let u = lambda * h;
        hs = alpha * hs + (F::one() - alpha) * u;
        let hp = hs + i;
        let fired = hp >= theta;
        h = if fired { hp - theta } else { hp };
        out.push(Step { h, hs, hp, s: if fired { F::one() } else { F::zero() } });
    }
    out
}

/// 1,000 random sequences, batched as 1,000 independent neurons; the first
/// bit-level disagreement is reported.
pub fn compare<F: Real>(seed: u64) -> Result<(), String> {
    let mut rng = RngState::new(seed);
    let (neurons, steps) = (1000, 12);
    let tau = F::lit(1.5 + 6.0 * rng.uniform_scalar::<f64>());
    let theta = F::lit(0.5 + rng.uniform_scalar::<f64>());
    let alpha = F::lit(0.05 + 0.9 * rng.uniform_scalar::<f64>());
    let cfg = NeuronConfig { tau: tau.as_f64(), threshold: theta.as_f64(), ..NeuronConfig::default() };
    // Some sequences carry inputs exactly at threshold to exercise the >= edge.
    let inputs: Vec<Tensor<F>> = (0..steps)
        .map(|_| {
            let mut t = rng.uniform_range::<F>(&[1, neurons], F::lit(-0.5), F::lit(1.8));
            for k in (0..neurons).step_by(37) {
                t.data_mut()[k] = theta;
            }
            t
        })
        .collect();
    let seq = |k: usize| inputs.iter().map(|t| t.data()[k]).collect::<Vec<F>>();

    let (mut h, mut hv) = (Tensor::<F>::zeros(&[1, neurons]), Tensor::<F>::zeros(&[1, neurons]));
    let mut hs = Tensor::<F>::zeros(&[1, neurons]);
    let mut smooth_trace = Vec::new();
    let mut plain_trace = Vec::new();
    for x in &inputs {
        let st = smoothed_lif_step(&h, &hs, x, &cfg, alpha).unwrap();
        h = st.h.clone();
        hs = st.h_smooth.clone();
        smooth_trace.push(st);
        let pv = lif_step(&hv, x, &cfg).unwrap();
        hv = pv.h.clone();
        plain_trace.push(pv);
    }
    for k in 0..neurons {
        let want = oracle_smoothed(&seq(k), tau, theta, alpha);
        for (t, w) in want.iter().enumerate() {
            let got = &smooth_trace[t];
            ensure_eq!(got.h.data()[k].to_bits_u64(), w.h.to_bits_u64(), "smoothed H, neuron {k} t {t}");
            ensure_eq!(got.h_smooth.data()[k].to_bits_u64(), w.hs.to_bits_u64());
            ensure_eq!(got.h_pre.data()[k].to_bits_u64(), w.hp.to_bits_u64());
            ensure_eq!(got.s.data()[k], w.s);
        }
        let want = oracle_lif(&seq(k), tau, theta);
        for (t, w) in want.iter().enumerate() {
            let got = &plain_trace[t];
            ensure_eq!(got.h.data()[k].to_bits_u64(), w.h.to_bits_u64(), "plain H, neuron {k} t {t}");
            ensure_eq!(got.h_pre.data()[k].to_bits_u64(), w.hp.to_bits_u64());
            ensure_eq!(got.h_smooth.data()[k].to_bits_u64(), w.hs.to_bits_u64());
            ensure_eq!(got.s.data()[k], w.s);
        }
    }
    Ok(())
}

trait Bits {
    fn to_bits_u64(self) -> u64;
}

impl<F: Real> Bits for F {
    fn to_bits_u64(self) -> u64 {
        let mut buf = Vec::new();
        self.write_le(&mut buf);
        buf.iter().rev().fold(0u64, |acc, &b| (acc << 8) | b as u64)
    }
}

