//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit
//! if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use smoothsnn::analysis::{mean_hidden_cosine, prefix_accuracies, temporal_sensitivity, RangeMode, SensitivityQuery};
use smoothsnn::network::{forward_unroll, run_inference, save_checkpoint};
use smoothsnn::objective::{drop_combine, ensemble_metrics, kl_guidance};
use smoothsnn::training::train_vanilla_reference;
use smoothsnn::{train, GuidanceConfig, ModelSpec, Readout, RngState, Tensor, TrainConfig};
use smoothsnn_cli::{load_data, RunConfig};
use support::gradcheck::{sweep, AlphaChain, TOL};
use support::neuron_oracle::compare;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn sensitivity_exactness() -> Outcome {
    let at = |dt| temporal_sensitivity(&SensitivityQuery::new(2.0, 0.25, dt)).map_err(|e| e.to_string());
    let s3 = at(3)?;
    let s5 = at(5)?;
    // (1 - a) e (a + (1 - a) e)^(dt - 1) with e = 1/2, a = 1/4: 3/8 * (5/8)^(dt-1).
    let want5 = 0.375 * 0.625f64.powi(4);
    ensure((s3.vanilla - 0.125).abs() < 1e-9, format!("vanilla(3) = {}", s3.vanilla))?;
    ensure((s3.smoothed - 0.146484375).abs() < 1e-9, format!("smoothed(3) = {}", s3.smoothed))?;
    ensure((s5.vanilla - 0.03125).abs() < 1e-9, format!("vanilla(5) = {}", s5.vanilla))?;
    ensure((s5.smoothed - want5).abs() < 1e-9, format!("smoothed(5) = {}", s5.smoothed))?;
    ensure((s5.smoothed - 0.0572204589).abs() < 1e-9, format!("smoothed(5) = {}", s5.smoothed))?;
    ensure((s5.ratio() - 1.831).abs() <= 1e-3, format!("ratio(5) = {}", s5.ratio()))?;
    Ok(format!("dt=5: {} vs {}, ratio {:.4}", s5.vanilla, s5.smoothed, s5.ratio()))
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    for (steps, chain, err) in sweep(false, Readout::MembraneReadout) {
        let mode = if chain == AlphaChain::Full { "full" } else { "truncated" };
        ensure(err < TOL, format!("T={steps} {mode}: max relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("T in {{2,5,8}} x truncated/full, max relative error {worst:.2e}"))
}

fn neuron_oracle() -> Outcome {
    compare::<f32>(0)?;
    compare::<f64>(1)?;
    Ok("1000 sequences x 12 steps, f32 and f64, bit-exact".into())
}

fn drop_statistics() -> Outcome {
    let losses = [0.4f64, 0.9, 0.1, 0.6];
    let max = 1;
    let trials = 10_000;
    let mut rng = RngState::new(2024);
    let mut kept = [0usize; 4];
    for trial in 0..trials {
        let d = drop_combine(&losses, 0.5, &mut rng).map_err(|e| e.to_string())?;
        let sum: f64 = d.weights.iter().sum();
        ensure(sum == 1.0, format!("trial {trial}: weights sum to {sum:e}"))?;
        for (k, w) in d.weights.iter().enumerate() {
            kept[k] += usize::from(*w > 0.0);
        }
    }
    ensure(kept[max] == trials, format!("max loss kept {} / {trials}", kept[max]))?;
    let rates: Vec<f64> = kept.iter().map(|&k| k as f64 / trials as f64).collect();
    for (k, r) in rates.iter().enumerate().filter(|&(k, _)| k != max) {
        ensure((0.48..=0.52).contains(r), format!("loss {k} kept with rate {r}"))?;
    }
    Ok(format!("keep rates {rates:?}"))
}

/// `T^2 * KL(softmax(b / T) || softmax(a / T))`, written out directly.
fn kl_oracle(a: &[f64], b: &[f64], temp: f64) -> f64 {
    let soft = |x: &[f64]| {
        let m = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temp));
        let z: f64 = x.iter().map(|&v| (v / temp - m).exp()).sum();
        x.iter().map(|&v| (v / temp - m - z.ln()).exp()).collect::<Vec<_>>()
    };
    let (p, q) = (soft(a), soft(b));
    temp * temp * q.iter().zip(&p).map(|(qi, pi)| if *qi > 0.0 { qi * (qi / pi).ln() } else { 0.0 }).sum::<f64>()
}

fn guidance_exactness() -> Outcome {
    let row = |v: &[f64]| Tensor::<f64>::from_rows(&[v]).unwrap();
    let got = kl_guidance(&row(&[0.0, 0.0]), &row(&[2.0, 0.0]), 2.0).map_err(|e| e.to_string())?;
    let want = kl_oracle(&[0.0, 0.0], &[2.0, 0.0], 2.0);
    ensure((got - want).abs() < 1e-3 && (got - 0.4441).abs() < 1e-3, format!("kl = {got}, oracle {want}"))?;
    let mut rng = RngState::new(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = rng.uniform_range::<f64>(&[1, 6], -5.0, 5.0);
        worst = worst.max(kl_guidance(&x, &x, 2.0).map_err(|e| e.to_string())?.abs());
    }
    ensure(worst < 1e-9, format!("kl(x, x) up to {worst:e}"))?;
    Ok(format!("kl = {got:.6} (oracle {want:.6}), max |kl(x,x)| {worst:.1e}"))
}

/// Per-seed results of the four training configurations.
#[derive(Debug, Clone, Copy, Default)]
struct Run {
    accuracy: f64,
    k1: f64,
    cosine: f64,
}

const VARIANTS: [(&str, bool, f64); 4] =
    [("vanilla", false, 0.0), ("smooth", true, 0.0), ("guide", false, 1.0), ("both", true, 1.0)];
const SEEDS: u64 = 5;

/// Synthetic temporal-pattern task: 4 classes, 40 channels, T = 5, network
/// [40, 64, 4]. Jitter 0.2 and 400 samples per class keep the task from
/// saturating; 60 epochs let the step decay take effect.
fn experiment_config(seed: u64, smoothing: bool, gamma: f64) -> RunConfig {
    let mut cfg = RunConfig::parse(
        r#"{"data": {"jitter": 0.2, "samples_per_class": 400}, "train": {"epochs": 60}}"#,
    )
    .unwrap();
    cfg.seed = seed;
    cfg.model.smoothing_enabled = smoothing;
    cfg.guidance.gamma = gamma;
    cfg
}

fn experiment_run(seed: u64, smoothing: bool, gamma: f64) -> Result<Run, String> {
    let cfg = experiment_config(seed, smoothing, gamma);
    let (pool, test) = load_data(&cfg).map_err(|e| e.to_string())?;
    let spec = cfg.model_spec(pool.channels(), pool.classes());
    let out = train::<f32>(&spec, &pool, &cfg.train_config()).map_err(|e| e.to_string())?;
    let inference =
        run_inference(&spec, &out.params, &test, 64, 1, &RngState::new(seed)).map_err(|e| e.to_string())?;
    let acc = prefix_accuracies(&inference, test.labels());
    let all: Vec<usize> = (0..test.len()).collect();
    let trace = forward_unroll(&spec, &out.params, &test.batch_input::<f32>(&all), &mut RngState::new(seed))
        .map_err(|e| e.to_string())?;
    let cosine = mean_hidden_cosine(&spec, &trace, 64, RangeMode::Pooled).map_err(|e| e.to_string())?;
    Ok(Run {
        accuracy: acc[acc.len() - 1],
        k1: acc[0],
        cosine,
    })
}

/// `runs[variant][seed]`, seeds trained in parallel.
fn experiment() -> Result<(Vec<Vec<Run>>, f64), String> {
    let start = Instant::now();
    let jobs: Vec<(usize, u64)> = (0..VARIANTS.len()).flat_map(|v| (0..SEEDS).map(move |s| (v, s))).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let results: Vec<Result<Run, String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                scope.spawn(move || {
                    jobs.iter()
                        .enumerate()
                        .filter(|(i, _)| i % workers == w)
                        .map(|(i, &(v, s))| {
                            let (_, smoothing, gamma) = VARIANTS[v];
                            (i, experiment_run(s, smoothing, gamma))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut slots: Vec<Option<Result<Run, String>>> = jobs.iter().map(|_| None).collect();
        for h in handles {
            for (i, r) in h.join().expect("experiment worker panicked") {
                slots[i] = Some(r);
            }
        }
        slots.into_iter().map(Option::unwrap).collect()
    });
    let mut runs = vec![vec![Run::default(); SEEDS as usize]; VARIANTS.len()];
    for (&(v, s), r) in jobs.iter().zip(results) {
        runs[v][s as usize] = r?;
    }
    Ok((runs, start.elapsed().as_secs_f64()))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn direction_of_effect(runs: &[Vec<Run>], secs: f64) -> Outcome {
    let acc = |v: usize| mean(runs[v].iter().map(|r| r.accuracy));
    let k1 = |v: usize| mean(runs[v].iter().map(|r| r.k1));
    let wins = |v: usize| runs[v].iter().zip(&runs[0]).filter(|(a, b)| a.accuracy >= b.accuracy).count();
    let detail = format!(
        "acc vanilla {:.4} smooth {:.4} guide {:.4} both {:.4}; k=1 vanilla {:.3} both {:.3}; \
         seeds >= vanilla: smooth {}/5 guide {}/5; {secs:.0}s wall",
        acc(0), acc(1), acc(2), acc(3), k1(0), k1(3), wins(1), wins(2)
    );
    ensure(acc(3) >= acc(0), format!("(a) full method below vanilla: {detail}"))?;
    ensure(k1(3) - k1(0) >= 0.10, format!("(b) k=1 gain {:+.3}: {detail}", k1(3) - k1(0)))?;
    ensure(wins(1) >= 4 && wins(2) >= 4, format!("(c) {detail}"))?;
    Ok(detail)
}

fn distribution_consistency(runs: &[Vec<Run>]) -> Outcome {
    let higher = runs[1].iter().zip(&runs[0]).filter(|(s, v)| s.cosine > v.cosine).count();
    let detail = format!(
        "smoothed > vanilla in {higher}/5 seeds (mean cosine {:.4} vs {:.4})",
        mean(runs[1].iter().map(|r| r.cosine)),
        mean(runs[0].iter().map(|r| r.cosine))
    );
    ensure(higher >= 4, detail.clone())?;
    Ok(detail)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn ablation_identity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = smoothsnn::data::gen_temporal_patterns(4, 20, 5, 30, 0.1, 3).map_err(|e| e.to_string())?;
    let spec = ModelSpec::new(vec![20, 32, 4]);
    let cfg = TrainConfig {
        epochs: 4,
        seed: 17,
        guidance: GuidanceConfig {
            gamma: 0.0,
            ..GuidanceConfig::default()
        },
        ..TrainConfig::default()
    };
    let main = train::<f32>(&spec, &data, &cfg).map_err(|e| e.to_string())?;
    let reference = train_vanilla_reference::<f32>(&spec, &data, &cfg).map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("train"), tmp.path().join("reference"));
    save_checkpoint(&a, &spec, &main.params).map_err(|e| e.to_string())?;
    save_checkpoint(&b, &spec, &reference).map_err(|e| e.to_string())?;
    let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
    ensure(fa == fb, "checkpoint files differ")?;
    Ok(format!("{} checkpoint files byte-identical", fa.len()))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.json");
    std::fs::write(&config, r#"{"train": {"epochs": 4}, "data": {"samples_per_class": 40}}"#)
        .map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<std::path::PathBuf, String> {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_smoothsnn"))
            .args(["train", "--seed", "23", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), String::from_utf8_lossy(&status.stderr).into_owned())?;
        Ok(out)
    };
    let (a, b) = (run("a")?, run("b")?);
    let metrics = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    ensure(metrics(&a) == metrics(&b), "metrics.csv differs")?;
    let (ca, cb) = (dir_bytes(&a.join("checkpoint")), dir_bytes(&b.join("checkpoint")));
    ensure(ca == cb, "checkpoints differ")?;
    Ok(format!("metrics.csv and {} checkpoint files byte-identical", ca.len()))
}

fn ensemble_consistency() -> Outcome {
    let mut rng = RngState::new(8);
    let one = rng.uniform_range::<f64>(&[1, 6, 3], -2.0, 2.0);
    let labels = [0, 1, 2, 2, 1, 0];
    let m = ensemble_metrics(&one, &labels, 1.0, &[1.0]).map_err(|e| e.to_string())?;
    ensure((m.l_s - m.l_a).abs() < 1e-7, format!("N=1: L_s {} vs L_a {}", m.l_s, m.l_a))?;
    let row = Tensor::<f64>::from_f64(&[1, 1, 3], &[0.3, -1.0, 2.0]).unwrap();
    let mut pair = Tensor::<f64>::zeros(&[2, 1, 3]);
    pair.outer_mut(0).copy_from_slice(row.data());
    pair.outer_mut(1).copy_from_slice(row.data());
    let identical = ensemble_metrics(&pair, &[2], 1.0, &[0.5, 0.5]).map_err(|e| e.to_string())?;
    // Identical members: 1 - 2 * sum(p^2) / 2, oracle from the softmax.
    let z: f64 = row.data().iter().map(|v| v.exp()).sum();
    let want = 1.0 - row.data().iter().map(|v| (v.exp() / z).powi(2)).sum::<f64>();
    ensure((identical.l_d - want).abs() < 1e-12, format!("N=2 L_d {} vs {want}", identical.l_d))?;
    // q = [0.5, 0.5] for both members: 1 - (2 ordered pairs x 0.5) / 2 = 0.5.
    let flat = Tensor::<f64>::from_f64(&[2, 1, 2], &[0.7, 0.7, 0.7, 0.7]).unwrap();
    let h = ensemble_metrics(&flat, &[0], 1.0, &[0.5, 0.5]).map_err(|e| e.to_string())?;
    ensure((h.l_d - 0.5).abs() < 1e-12, format!("identical uniform N=2 L_d = {}", h.l_d))?;
    Ok(format!("N=1 |L_s - L_a| = {:.1e}; identical N=2 L_d = {}", (m.l_s - m.l_a).abs(), h.l_d))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("criterion {n:>2} FAIL  {name}: {why}");
        }
    };
    report(1, "sensitivity exactness", sensitivity_exactness());
    report(2, "gradient correctness", gradient_correctness());
    report(3, "neuron oracle equivalence", neuron_oracle());
    report(4, "drop-combine statistics", drop_statistics());
    report(5, "guidance loss exactness", guidance_exactness());
    match experiment() {
        Ok((runs, secs)) => {
            report(6, "direction of effect", direction_of_effect(&runs, secs));
            report(7, "distribution consistency", distribution_consistency(&runs));
        }
        Err(e) => {
            report(6, "direction of effect", Err(e.clone()));
            report(7, "distribution consistency", Err(e));
        }
    }
    report(8, "ablation identity", ablation_identity());
    report(9, "determinism", determinism());
    report(10, "ensemble metrics consistency", ensemble_consistency());
    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
