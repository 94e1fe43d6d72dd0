use std::fmt::Write;

use crate::numeric::fmt_sig9;

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean combined guidance loss (before `gamma`).
    pub guidance_loss: f64,
    pub train_ce: f64,
    /// Full-ensemble accuracy on the batches as they were trained.
    pub train_acc: f64,
    /// NaN when there is no validation split.
    pub val_acc: f64,
    /// `alpha` per spiking layer at the end of the epoch.
    pub alphas: Vec<f64>,
    pub total_spikes: u64,
}

/// One row per epoch: `epoch,lr,train_loss,guidance_loss,train_acc,val_acc,
/// alpha_l1..alpha_lk,total_spikes`.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let k = history.first().map_or(0, |m| m.alphas.len());
    let mut out = String::from("epoch,lr,train_loss,guidance_loss,train_acc,val_acc");
    for l in 1..=k {
        let _ = write!(out, ",alpha_l{l}");
    }
    out.push_str(",total_spikes\n");
    for m in history {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            m.epoch,
            fmt_sig9(m.lr),
            fmt_sig9(m.train_loss),
            fmt_sig9(m.guidance_loss),
            fmt_sig9(m.train_acc),
            fmt_sig9(m.val_acc)
        );
        for &a in &m.alphas {
            let _ = write!(out, ",{}", fmt_sig9(a));
        }
        let _ = writeln!(out, ",{}", m.total_spikes);
    }
    out
}
