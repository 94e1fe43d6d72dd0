//! Backward pass against central finite differences of an independently
//! written float64 forward pass, on the relaxed (clipped-linear spike) model.

mod support;

use smoothsnn::network::{backward_bptt, forward_unroll};
use smoothsnn::{ModelParams, ModelSpec, NeuronConfig, Readout, RngState, SpikeFunction, Tensor};
use support::gradcheck::{rel_err, sweep, AlphaChain, H, TOL};

fn run_cases(normalize: bool, readout: Readout) {
    for (steps, chain, worst) in sweep(normalize, readout) {
        let mode = if chain == AlphaChain::Full { "full" } else { "truncated" };
        assert!(worst < TOL, "T={steps} {mode}: max relative error {worst:e}");
    }
}

#[test]
fn bptt_matches_finite_differences() {
    run_cases(false, Readout::MembraneReadout);
}

#[test]
fn bptt_matches_finite_differences_with_normalisation() {
    run_cases(true, Readout::MembraneReadout);
}

#[test]
fn bptt_matches_finite_differences_with_spiking_output() {
    run_cases(false, Readout::SpikingOutput);
}

#[test]
fn vanilla_network_gradients() {
    let spec = ModelSpec {
        neuron: NeuronConfig {
            spike_fn: SpikeFunction::ClippedLinear,
            ..NeuronConfig::default()
        },
        ..ModelSpec::new(vec![3, 4, 2])
    };
    let mut rng = RngState::new(77);
    let mut params = ModelParams::<f64>::init(&spec, &mut rng).unwrap();
    for w in &mut params.weights {
        w.map_inplace(|v| v * 2.5);
    }
    let x = Tensor::from_f64(&[4, 2, 3], &[1., 0., 1., 0., 1., 1., 1., 1., 0., 0., 0., 1., 1., 0., 0., 1., 1., 1., 0., 1., 0., 1., 0., 1.]).unwrap();
    let r = rng.uniform_range::<f64>(&[4, 2, 2], -1.0, 1.0);
    let loss = |p: &ModelParams<f64>| -> f64 {
        let trace = forward_unroll(&spec, p, &x, &mut RngState::new(0)).unwrap();
        trace.logits.data().iter().zip(r.data()).map(|(o, r)| o * r).sum()
    };
    let trace = forward_unroll(&spec, &params, &x, &mut RngState::new(0)).unwrap();
    let g = backward_bptt(&spec, &params, &trace, &r).unwrap();
    assert!(g.betas.is_empty());
    for l in 0..2 {
        for i in 0..params.weights[l].len() {
            let mut p = params.clone();
            p.weights[l].data_mut()[i] += H;
            let mut m = params.clone();
            m.weights[l].data_mut()[i] -= H;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * H);
            let analytic = g.weights[l].data()[i];
            assert!(rel_err(analytic, numeric) < TOL, "w{l}[{i}]: {analytic} vs {numeric}");
        }
    }
}
