use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use smoothsnn::analysis::{
    self, histogram_csv, logits_csv, mp_stats, prefix_accuracies, sensitivity_csv, similarity_csv,
    stats_csv, SensitivityQuery,
};
use smoothsnn::data::{gen_temporal_patterns, load_dataset};
use smoothsnn::io::write_atomic;
use smoothsnn::network::{forward_unroll, load_checkpoint, read_manifest, run_inference, save_checkpoint, Inference};
use smoothsnn::objective::ensemble_metrics;
use smoothsnn::training::{metrics_csv, train_with_threads};
use smoothsnn::{fmt_sig9, FloatMode, ModelParams, ModelSpec, Real, RngState, SpikeDataset, Tensor};

use crate::config::RunConfig;
use crate::error::CliError;

/// Child streams of the run seed used outside the trainer.
pub mod streams {
    pub const TEST_SPLIT: u64 = 99;
    pub const EVAL: u64 = 201;
    pub const TRACE: u64 = 202;
}

pub const THREADS_ENV: &str = "SMOOTHSNN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Analyze,
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Config file, `-` for stdin; `None` means `{}`.
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub float64: bool,
    /// `analyze` only: write the sensitivity table and nothing else.
    pub sensitivity: bool,
    /// Checkpoint directory for `eval`/`analyze`; defaults to `<out>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
}

impl Options {
    /// Loads the config and applies command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::parse("{}")?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.float64 |= self.float64;
        Ok(cfg)
    }
}

pub fn run(cmd: Command, opts: &Options) -> Result<(), CliError> {
    let cfg = opts.resolve()?;
    if cmd == Command::Analyze && opts.sensitivity {
        return write_sensitivity(&cfg, &[]);
    }
    let checkpoint = opts
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("checkpoint"));
    if cmd != Command::Train {
        let manifest = read_manifest(&checkpoint)?;
        if manifest.float_mode != float_mode(&cfg) {
            return Err(smoothsnn::Error::Consistency(format!(
                "checkpoint holds {} parameters but the run is configured for {}",
                manifest.float_mode.as_str(),
                float_mode(&cfg).as_str()
            ))
            .into());
        }
    }
    if cfg.float64 {
        run_typed::<f64>(cmd, &cfg, &checkpoint)
    } else {
        run_typed::<f32>(cmd, &cfg, &checkpoint)
    }
}

fn float_mode(cfg: &RunConfig) -> FloatMode {
    if cfg.float64 {
        FloatMode::F64
    } else {
        FloatMode::F32
    }
}

fn run_typed<F: Real>(cmd: Command, cfg: &RunConfig, checkpoint: &Path) -> Result<(), CliError> {
    let (pool, test) = load_data(cfg)?;
    let spec = cfg.model_spec(pool.channels(), pool.classes());
    let threads = threads()?;
    match cmd {
        Command::Train => {
            let outcome = train_with_threads::<F>(&spec, &pool, &cfg.train_config(), threads)?;
            let resolved = serde_json::to_string_pretty(cfg).expect("config serialises");
            write(&cfg.out_dir.join("config.json"), resolved + "\n")?;
            write(&cfg.out_dir.join("metrics.csv"), metrics_csv(&outcome.history))?;
            save_checkpoint(checkpoint, &spec, &outcome.params)?;
            let inference = evaluate(cfg, &spec, &outcome.params, &test, threads)?;
            println!(
                "trained {} epochs; test accuracy {:.4}",
                outcome.history.len(),
                inference.accuracy(test.labels())
            );
        }
        Command::Eval => {
            let params = load_matching::<F>(checkpoint, &spec)?;
            let inference = evaluate(cfg, &spec, &params, &test, threads)?;
            let acc = prefix_accuracies(&inference, test.labels());
            let dir = cfg.out_dir.join("analysis");
            write(&dir.join("prefix_accuracy.csv"), analysis::prefix_csv(&acc))?;
            write(&dir.join("spike_counts.csv"), spike_counts_csv(&inference))?;
            println!("test accuracy {:.4} (k=1: {:.4})", acc[acc.len() - 1], acc[0]);
        }
        Command::Analyze => {
            let params = load_matching::<F>(checkpoint, &spec)?;
            analyze(cfg, &spec, &params, &test, threads)?;
        }
    }
    Ok(())
}

/// Training pool and test set for `cfg`.
///
/// Synthetic data is generated from the run seed and split with its own
/// stream; an `SPK1` pool without `test_path` is split the same way.
pub fn load_data(cfg: &RunConfig) -> Result<(SpikeDataset, SpikeDataset), CliError> {
    let d = &cfg.data;
    let pool = match &d.path {
        Some(path) => load_dataset(path)?,
        None => gen_temporal_patterns(
            d.classes,
            d.channels,
            cfg.train.timesteps,
            d.samples_per_class,
            d.jitter,
            cfg.seed,
        )?,
    };
    if let Some(path) = &d.test_path {
        let test = load_dataset(path)?;
        if (test.timesteps(), test.channels(), test.classes())
            != (pool.timesteps(), pool.channels(), pool.classes())
        {
            return Err(smoothsnn::Error::Consistency(format!(
                "test set {} does not match the training pool's shape",
                path.display()
            ))
            .into());
        }
        return Ok((pool, test));
    }
    let mut rng = RngState::new(cfg.seed).split(streams::TEST_SPLIT);
    let (train, test) = pool.split(1.0 - d.test_fraction, &mut rng);
    if test.is_empty() {
        return Err(smoothsnn::Error::Data("test split is empty".into()).into());
    }
    Ok((train, test))
}

fn threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn write(path: &Path, text: String) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn load_matching<F: Real>(dir: &Path, spec: &ModelSpec) -> Result<ModelParams<F>, CliError> {
    let (saved, params) = load_checkpoint::<F>(dir)?;
    if &saved != spec {
        return Err(smoothsnn::Error::Consistency(format!(
            "checkpoint {} was trained with a different model (layers {:?}, config implies {:?})",
            dir.display(),
            saved.layer_sizes,
            spec.layer_sizes
        ))
        .into());
    }
    Ok(params)
}

fn evaluate<F: Real>(
    cfg: &RunConfig,
    spec: &ModelSpec,
    params: &ModelParams<F>,
    test: &SpikeDataset,
    threads: usize,
) -> Result<Inference<F>, CliError> {
    let rng = RngState::new(cfg.seed).split(streams::EVAL);
    Ok(run_inference(spec, params, test, cfg.train.batch_size, threads, &rng)?)
}

/// `layer,timestep,count`, layers and timesteps counted from 1.
fn spike_counts_csv<F: Real>(inference: &Inference<F>) -> String {
    let mut out = String::from("layer,timestep,count\n");
    for (l, per_t) in inference.spikes.per_layer.iter().enumerate() {
        for (t, c) in per_t.iter().enumerate() {
            let _ = writeln!(out, "{},{},{c}", l + 1, t + 1);
        }
    }
    out
}

#[derive(Serialize)]
struct EnsembleReport {
    samples: usize,
    #[serde(flatten)]
    metrics: smoothsnn::objective::EnsembleMetrics,
}

fn analyze<F: Real>(
    cfg: &RunConfig,
    spec: &ModelSpec,
    params: &ModelParams<F>,
    test: &SpikeDataset,
    threads: usize,
) -> Result<(), CliError> {
    let dir = cfg.out_dir.join("analysis");
    let a = &cfg.analysis;

    let all: Vec<usize> = (0..test.len()).collect();
    let x = test.batch_input::<F>(&all);
    let trace = forward_unroll(spec, params, &x, &mut RngState::new(cfg.seed).split(streams::TRACE))?;
    let stats = (0..trace.initial.len())
        .map(|l| mp_stats(&trace, l, a.bins, a.range))
        .collect::<smoothsnn::Result<Vec<_>>>()?;
    write(&dir.join("mp_stats.csv"), stats_csv(&stats))?;
    write(&dir.join("mp_histogram.csv"), histogram_csv(&stats))?;
    write(&dir.join("adjacent_cosine.csv"), similarity_csv(&stats))?;

    let inference = evaluate(cfg, spec, params, test, threads)?;
    write(&dir.join("logits.csv"), logits_csv(&inference))?;

    // Members are the T per-timestep outputs, equally weighted.
    let [n, steps, classes] = *inference.logits.shape() else {
        unreachable!("inference logits are rank 3")
    };
    let src = inference.logits.data();
    let mut members = Tensor::<F>::zeros(&[steps, n, classes]);
    for t in 0..steps {
        let slab = members.outer_mut(t);
        for s in 0..n {
            let from = (s * steps + t) * classes;
            slab[s * classes..(s + 1) * classes].copy_from_slice(&src[from..from + classes]);
        }
    }
    let labels: Vec<usize> = test.labels().iter().map(|&y| y as usize).collect();
    let metrics = ensemble_metrics(&members, &labels, a.alpha_div, &vec![1.0 / steps as f64; steps])?;
    let report = serde_json::to_string_pretty(&EnsembleReport { samples: n, metrics }).expect("metrics serialise");
    write(&dir.join("ensemble_metrics.json"), report + "\n")?;

    let learned: Vec<f64> = params.alphas().iter().map(|a| a.as_f64()).collect();
    write_sensitivity(cfg, &learned)?;
    println!(
        "analysis written to {} (test accuracy {})",
        dir.display(),
        fmt_sig9(inference.accuracy(test.labels()))
    );
    Ok(())
}

/// The configured `(tau, alpha, delta_t)` grid, extended with the learned
/// per-layer alphas at the model's tau.
fn write_sensitivity(cfg: &RunConfig, learned: &[f64]) -> Result<(), CliError> {
    let g = &cfg.analysis.sensitivity;
    let mut rows = analysis::sensitivity_grid(&g.taus, &g.alphas, &g.delta_ts)
        .map_err(|e| CliError::invalid("analysis.sensitivity", e.to_string()))?;
    for &alpha in learned {
        for &dt in &g.delta_ts {
            let q = SensitivityQuery::new(cfg.model.neuron.tau, alpha, dt);
            rows.push((q, analysis::temporal_sensitivity(&q)?));
        }
    }
    write(&cfg.out_dir.join("analysis").join("sensitivity.csv"), sensitivity_csv(&rows))
}
