use std::thread;

use crate::data::SpikeDataset;
use crate::error::{Error, Result};
use crate::numeric::{Real, RngState, Tensor};

use super::{count_spikes, forward_unroll, ModelParams, ModelSpec, SpikeCounts};

/// Reordered logits and spike counts of one batch.
type BatchOut<F> = Result<(Vec<F>, SpikeCounts)>;

/// Per-sample logits of a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<F> {
    /// `[samples x T x classes]`, samples in dataset order.
    pub logits: Tensor<F>,
    pub spikes: SpikeCounts,
}

impl<F: Real> Inference<F> {
    /// Class predicted from the mean of the first `k` outputs; ties go to
    /// the lowest class index.
    pub fn predict_prefix(&self, sample: usize, k: usize) -> usize {
        let (steps, classes) = (self.logits.shape()[1], self.logits.shape()[2]);
        assert!(k >= 1 && k <= steps, "prefix length {k} outside 1..={steps}");
        let row = self.logits.outer(sample);
        let mut sums = vec![F::zero(); classes];
        for t in 0..k {
            for (s, &o) in sums.iter_mut().zip(&row[t * classes..(t + 1) * classes]) {
                *s = *s + o;
            }
        }
        argmax(&sums)
    }

    /// Accuracy of the full-length ensemble.
    pub fn accuracy(&self, labels: &[u32]) -> f64 {
        self.prefix_accuracy(labels, self.logits.shape()[1])
    }

    pub fn prefix_accuracy(&self, labels: &[u32], k: usize) -> f64 {
        if labels.is_empty() {
            return f64::NAN;
        }
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(s, &y)| self.predict_prefix(s, k) == y as usize)
            .count();
        correct as f64 / labels.len() as f64
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the network over `data` in fixed-size batches.
///
/// Batch `i` draws any random membrane initialisation from `rng.split(i)`,
/// so results do not depend on `threads`. Spike counts are integers and
/// logits are written to fixed slots, so the reduction is order-free.
pub fn run_inference<F: Real>(
    spec: &ModelSpec,
    params: &ModelParams<F>,
    data: &SpikeDataset,
    batch_size: usize,
    threads: usize,
    rng: &RngState,
) -> Result<Inference<F>> {
    if batch_size == 0 {
        return Err(Error::param("batch_size", "must be >= 1"));
    }
    if data.channels() != spec.inputs() {
        return Err(Error::Consistency(format!(
            "dataset has {} channels, model expects {}",
            data.channels(),
            spec.inputs()
        )));
    }
    let (steps, classes) = (data.timesteps(), spec.classes());
    let batches: Vec<Vec<usize>> = (0..data.len())
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect();

    let run_batch = |i: usize| -> BatchOut<F> {
        let idx = &batches[i];
        let x = data.batch_input::<F>(idx);
        let trace = forward_unroll(spec, params, &x, &mut rng.split(i as u64))?;
        // Reorder [T x B x C] into [B x T x C].
        let mut out = vec![F::zero(); idx.len() * steps * classes];
        for t in 0..steps {
            let slab = trace.logits.outer(t);
            for b in 0..idx.len() {
                let dst = (b * steps + t) * classes;
                out[dst..dst + classes].copy_from_slice(&slab[b * classes..(b + 1) * classes]);
            }
        }
        Ok((out, count_spikes(&trace)))
    };

    let threads = threads.clamp(1, batches.len().max(1));
    let results: Vec<BatchOut<F>> = if threads == 1 {
        (0..batches.len()).map(run_batch).collect()
    } else {
        let mut slots: Vec<Option<BatchOut<F>>> =
            (0..batches.len()).map(|_| None).collect();
        thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let run_batch = &run_batch;
                    let n = batches.len();
                    scope.spawn(move || {
                        (w..n)
                            .step_by(threads)
                            .map(|i| (i, run_batch(i)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("inference worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every batch ran")).collect()
    };

    let layers = spec.spiking_layers();
    let mut spikes = SpikeCounts {
        per_layer: vec![vec![0; steps]; layers],
    };
    let mut logits = Vec::with_capacity(data.len() * steps * classes);
    for r in results {
        let (chunk, counts) = r?;
        logits.extend(chunk);
        for (acc, layer) in spikes.per_layer.iter_mut().zip(&counts.per_layer) {
            for (a, c) in acc.iter_mut().zip(layer) {
                *a += c;
            }
        }
    }
    Ok(Inference {
        logits: Tensor::new(vec![data.len(), steps, classes], logits)?,
        spikes,
    })
}
