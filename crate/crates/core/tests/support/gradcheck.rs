//! Independent float64 forward pass of the relaxed (clipped-linear spike)
//! model and a central finite-difference comparison against `backward_bptt`.

use smoothsnn::network::{backward_bptt, forward_unroll};
use smoothsnn::{ModelParams, ModelSpec, NeuronConfig, Readout, RngState, SpikeFunction};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
/// Spike arguments closer than this to a kink of the clipped-linear function
/// make finite differences meaningless; such draws are skipped.
const KINK_MARGIN: f64 = 2e-3;

#[derive(Clone, Copy, PartialEq)]
pub enum AlphaChain {
    Truncated,
    Full,
}

#[derive(Clone)]
struct Oracle {
    sizes: Vec<usize>,
    tau: f64,
    theta: f64,
    width: f64,
    smoothing: bool,
    normalize: bool,
    spiking_output: bool,
    w: Vec<Vec<f64>>,
    beta: Vec<f64>,
    scale: Vec<Vec<f64>>,
    shift: Vec<Vec<f64>>,
}

fn sigmoid(b: f64) -> f64 {
    (1.0 / (1.0 + (-b).exp())).clamp(1e-6, 1.0 - 1e-6)
}

impl Oracle {
    fn spiking(&self, l: usize) -> bool {
        l + 2 < self.sizes.len() || self.spiking_output
    }

    /// Returns `(sum(r * O), smallest distance of a spike argument to a kink,
    /// fraction of spike arguments inside the linear window)`.
    ///
    /// In truncated mode the dynamics run with `alpha0` and `alpha` enters
    /// only through the spike argument as `(alpha - alpha0) * (Hs(t-1) - U(t))`,
    /// so the derivative w.r.t. `alpha` is exactly the per-timestep local term.
    fn run(&self, x: &[f64], steps: usize, batch: usize, r: &[f64], chain: AlphaChain, alpha0: &[f64]) -> (f64, f64, f64) {
        let depth = self.sizes.len() - 1;
        let lambda = 1.0 - 1.0 / self.tau;
        let classes = self.sizes[depth];
        let mut h: Vec<Vec<f64>> = (0..depth).map(|l| vec![0.0; batch * self.sizes[l + 1]]).collect();
        let mut hs = h.clone();
        let mut v = vec![0.0; batch * classes];
        let (mut loss, mut margin, mut inside, mut total) = (0.0, f64::INFINITY, 0usize, 0usize);
        let mut spiking_index = 0;
        let mut layer_slot = vec![usize::MAX; depth];
        for l in 0..depth {
            if self.spiking(l) {
                layer_slot[l] = spiking_index;
                spiking_index += 1;
            }
        }
        for t in 0..steps {
            let n0 = self.sizes[0];
            let mut act: Vec<f64> = x[t * batch * n0..(t + 1) * batch * n0].to_vec();
            for l in 0..depth {
                let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
                let mut cur = vec![0.0; batch * nout];
                for b in 0..batch {
                    for j in 0..nout {
                        let mut acc = 0.0;
                        for k in 0..nin {
                            acc += act[b * nin + k] * self.w[l][j * nin + k];
                        }
                        cur[b * nout + j] = acc;
                    }
                }
                if !self.spiking(l) {
                    for (vi, ci) in v.iter_mut().zip(&cur) {
                        *vi = lambda * *vi + ci;
                    }
                    act = v.clone();
                    continue;
                }
                let k = layer_slot[l];
                if self.normalize {
                    for j in 0..nout {
                        let mean = (0..batch).map(|b| cur[b * nout + j]).sum::<f64>() / batch as f64;
                        let var = (0..batch).map(|b| (cur[b * nout + j] - mean).powi(2)).sum::<f64>() / batch as f64;
                        let sd = var.sqrt();
                        for b in 0..batch {
                            let xh = (cur[b * nout + j] - mean) / (sd + 1e-5);
                            cur[b * nout + j] = self.scale[k][j] * xh + self.shift[k][j];
                        }
                    }
                }
                let mut s_out = vec![0.0; batch * nout];
                for idx in 0..batch * nout {
                    let u = lambda * h[l][idx];
                    let (hp, arg) = if self.smoothing {
                        let alpha = sigmoid(self.beta[k]);
                        match chain {
                            AlphaChain::Full => {
                                let hs_new = alpha * hs[l][idx] + (1.0 - alpha) * u;
                                let hp = hs_new + cur[idx];
                                hs[l][idx] = hs_new;
                                (hp, hp)
                            }
                            AlphaChain::Truncated => {
                                let a0 = alpha0[k];
                                let local = hs[l][idx] - u;
                                let hs_new = a0 * hs[l][idx] + (1.0 - a0) * u;
                                let hp = hs_new + cur[idx];
                                hs[l][idx] = hs_new;
                                (hp, hp + (alpha - a0) * local)
                            }
                        }
                    } else {
                        let hp = u + cur[idx];
                        (hp, hp)
                    };
                    let lo = self.theta - self.width / 2.0;
                    let hi = self.theta + self.width / 2.0;
                    margin = margin.min((arg - lo).abs()).min((arg - hi).abs());
                    total += 1;
                    if arg > lo && arg < hi {
                        inside += 1;
                    }
                    let s = ((arg - self.theta) / self.width + 0.5).clamp(0.0, 1.0);
                    h[l][idx] = hp - s * self.theta;
                    s_out[idx] = s;
                }
                act = s_out;
            }
            for (i, o) in act.iter().enumerate() {
                loss += r[t * batch * classes + i] * o;
            }
        }
        (loss, margin, inside as f64 / total as f64)
    }
}

pub struct Case {
    pub steps: usize,
    pub chain: AlphaChain,
    pub normalize: bool,
    pub readout: Readout,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Builds a model whose relaxed forward stays clear of every kink, runs the
/// check, and returns the worst relative error.
pub fn check(case: &Case) -> f64 {
    let sizes = vec![4, 5, 5, 3];
    let batch = 3;
    for seed in 0..500u64 {
        let mut rng = RngState::new(1000 + seed);
        let mut spec = ModelSpec::new(sizes.clone()).with_smoothing(true);
        spec.neuron = NeuronConfig {
            spike_fn: SpikeFunction::ClippedLinear,
            ..NeuronConfig::default()
        };
        spec.normalize = case.normalize;
        spec.readout = case.readout;
        spec.full_alpha_chain = case.chain == AlphaChain::Full;
        let mut params = ModelParams::<f64>::init(&spec, &mut rng).unwrap();
        let gain = if case.normalize { 1.0 } else { 2.5 };
        for w in &mut params.weights {
            w.map_inplace(|v| v * gain);
        }
        for b in &mut params.betas {
            *b = rng.uniform_scalar::<f64>() * 2.0 - 1.0;
        }
        for s in params.norm_scale.iter_mut().chain(params.norm_shift.iter_mut()) {
            for v in s.data_mut() {
                *v = 0.6 + 0.4 * rng.uniform_scalar::<f64>();
            }
        }
        let x = rng
            .uniform::<f64>(&[case.steps, batch, sizes[0]])
            .map(|v| if v < 0.5 { 1.0 } else { 0.0 });
        let classes = *sizes.last().unwrap();
        let r = rng.uniform_range::<f64>(&[case.steps, batch, classes], -1.0, 1.0);

        let oracle = Oracle {
            sizes: sizes.clone(),
            tau: spec.neuron.tau,
            theta: spec.neuron.threshold,
            width: spec.neuron.surrogate_width,
            smoothing: true,
            normalize: case.normalize,
            spiking_output: case.readout == Readout::SpikingOutput,
            w: params.weights.iter().map(|w| w.data().to_vec()).collect(),
            beta: params.betas.clone(),
            scale: params.norm_scale.iter().map(|s| s.data().to_vec()).collect(),
            shift: params.norm_shift.iter().map(|s| s.data().to_vec()).collect(),
        };
        let alpha0 = params.alphas();
        let (base, margin, inside) = oracle.run(x.data(), case.steps, batch, r.data(), case.chain, &alpha0);
        if margin < KINK_MARGIN || inside < 0.15 {
            continue;
        }

        let trace = forward_unroll(&spec, &params, &x, &mut rng).unwrap();
        let crate_loss: f64 = trace.logits.data().iter().zip(r.data()).map(|(o, r)| o * r).sum();
        assert!((crate_loss - base).abs() < 1e-10 * base.abs().max(1.0), "forward mismatch");
        let grads = backward_bptt(&spec, &params, &trace, &r).unwrap();
        if grads.betas.iter().any(|g| g.abs() < 1e-6) {
            // A vanished beta gradient would make the comparison vacuous.
            continue;
        }

        let fd = |edit: &dyn Fn(&mut Oracle, f64)| {
            let mut p = oracle.clone();
            edit(&mut p, H);
            let mut m = oracle.clone();
            edit(&mut m, -H);
            let lp = p.run(x.data(), case.steps, batch, r.data(), case.chain, &alpha0).0;
            let lm = m.run(x.data(), case.steps, batch, r.data(), case.chain, &alpha0).0;
            (lp - lm) / (2.0 * H)
        };

        let mut worst: f64 = 0.0;
        let mut nonzero = 0;
        for (l, g) in grads.weights.iter().enumerate() {
            for (i, &analytic) in g.data().iter().enumerate() {
                let numeric = fd(&|o: &mut Oracle, d| o.w[l][i] += d);
                worst = worst.max(rel_err(analytic, numeric));
                nonzero += (analytic.abs() > 1e-9) as usize;
            }
        }
        for (k, &analytic) in grads.betas.iter().enumerate() {
            let numeric = fd(&|o: &mut Oracle, d| o.beta[k] += d);
            worst = worst.max(rel_err(analytic, numeric));
        }
        for (k, g) in grads.norm_scale.iter().enumerate() {
            for (j, &analytic) in g.data().iter().enumerate() {
                worst = worst.max(rel_err(analytic, fd(&|o: &mut Oracle, d| o.scale[k][j] += d)));
            }
        }
        for (k, g) in grads.norm_shift.iter().enumerate() {
            for (j, &analytic) in g.data().iter().enumerate() {
                worst = worst.max(rel_err(analytic, fd(&|o: &mut Oracle, d| o.shift[k][j] += d)));
            }
        }
        assert!(nonzero > 10, "too few non-zero weight gradients ({nonzero})");
        return worst;
    }
    panic!("no kink-free draw found");
}

/// Worst relative error for every `T in {2, 5, 8}` and both alpha-chain modes.
pub fn sweep(normalize: bool, readout: Readout) -> Vec<(usize, AlphaChain, f64)> {
    let mut out = Vec::new();
    for steps in [2, 5, 8] {
        for chain in [AlphaChain::Truncated, AlphaChain::Full] {
            out.push((steps, chain, check(&Case { steps, chain, normalize, readout })));
        }
    }
    out
}
