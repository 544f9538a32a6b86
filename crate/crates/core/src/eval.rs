//! Split-level evaluation: accuracy under each decision rule, the `L_R`
//! shift statistic, mixture-weight and per-expert prediction profiles, and a
//! shift detector that decides whether to apply post-hoc control.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{self, DecisionRule};
use crate::error::{Error, Result};
use crate::model::{MixtureOutput, ModelParams};
use crate::nn::Tensor2;
use crate::penalty;
use crate::synth::Instance;

/// Default shift threshold, in ID batch-level standard deviations.
pub const DEFAULT_SHIFT_MULTIPLIER: f64 = 3.0;
const STD_FLOOR: f64 = 1e-12;

/// Inference outputs for every instance, in split order.
pub fn infer_all(model: &ModelParams, split: &[Instance]) -> Result<Vec<MixtureOutput>> {
    split.par_iter().map(|inst| model.infer(&inst.x)).collect()
}

fn require_nonempty(split: &[Instance]) -> Result<()> {
    if split.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty split".into()));
    }
    Ok(())
}

fn accuracy_of(outputs: &[MixtureOutput], split: &[Instance], rule: DecisionRule) -> Result<f64> {
    let mut correct = 0usize;
    for (out, inst) in outputs.iter().zip(split) {
        if control::aggregate(&out.expert_dists, &out.router_dist, rule)?.label == inst.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

pub fn accuracy(model: &ModelParams, split: &[Instance], rule: DecisionRule) -> Result<f64> {
    require_nonempty(split)?;
    accuracy_of(&infer_all(model, split)?, split, rule)
}

/// Mean and spread of the per-batch penalty over a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyStats {
    pub mean: f64,
    /// Sample standard deviation across batches (0 for a single batch).
    pub std: f64,
    pub batches: usize,
}

fn penalty_stats_of(outputs: &[MixtureOutput], batch_size: usize, ell: usize, seed: u64) -> Result<PenaltyStats> {
    if batch_size < 2 || outputs.len() < batch_size {
        return Err(Error::Usage(format!(
            "penalty statistic needs at least one full batch of size >= 2 ({} instances, batch {batch_size})",
            outputs.len()
        )));
    }
    let mut order: Vec<usize> = (0..outputs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let values = order
        .chunks_exact(batch_size)
        .map(|chunk| {
            let routers: Vec<&[f64]> = chunk.iter().map(|&i| outputs[i].router_dist.as_slice()).collect();
            Ok(penalty::penalty(&routers, ell)?.expect("batch of at least two").value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(PenaltyStats {
        mean,
        std,
        batches: values.len(),
    })
}

/// Shuffles the split once with `seed`, cuts it into full batches of
/// `batch_size` and reports the mean and spread of `L_R`. Labels are not
/// used, so this works on unlabelled deployment data too.
pub fn penalty_statistic(model: &ModelParams, split: &[Instance], batch_size: usize, ell: usize, seed: u64) -> Result<PenaltyStats> {
    if split.len() < batch_size {
        return Err(Error::Usage(format!(
            "split of {} instances is smaller than one batch of {batch_size}",
            split.len()
        )));
    }
    penalty_stats_of(&infer_all(model, split)?, batch_size, ell, seed)
}

fn mixture_profile_of(outputs: &[MixtureOutput]) -> Vec<f64> {
    let k = outputs[0].router_dist.len();
    let mut mean = vec![0.0; k];
    for out in outputs {
        for (m, v) in mean.iter_mut().zip(&out.router_dist) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= outputs.len() as f64);
    mean
}

/// Mean router distribution over the split.
pub fn mixture_profile(model: &ModelParams, split: &[Instance]) -> Result<Vec<f64>> {
    require_nonempty(split)?;
    Ok(mixture_profile_of(&infer_all(model, split)?))
}

fn expert_profile_of(outputs: &[MixtureOutput]) -> Tensor2 {
    let (k, y) = (outputs[0].expert_dists.rows(), outputs[0].expert_dists.cols());
    let mut mean = Tensor2::zeros(k, y);
    for out in outputs {
        for (m, v) in mean.data_mut().iter_mut().zip(out.expert_dists.data()) {
            *m += v;
        }
    }
    mean.data_mut().iter_mut().for_each(|m| *m /= outputs.len() as f64);
    mean
}

/// `K × |Y|` matrix whose row `k` is expert `k`'s mean prediction.
pub fn expert_prediction_profile(model: &ModelParams, split: &[Instance]) -> Result<Tensor2> {
    require_nonempty(split)?;
    Ok(expert_profile_of(&infer_all(model, split)?))
}

/// Largest L1 distance between two rows of an expert profile.
pub fn max_pairwise_l1(profile: &Tensor2) -> f64 {
    let mut best = 0.0f64;
    for a in 0..profile.rows() {
        for b in a + 1..profile.rows() {
            let d: f64 = profile.row(a).iter().zip(profile.row(b)).map(|(x, y)| (x - y).abs()).sum();
            best = best.max(d);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftVerdict {
    pub reference: PenaltyStats,
    pub target: PenaltyStats,
    /// `|target.mean − reference.mean| / reference.std`
    pub score: f64,
    pub shifted: bool,
    pub threshold: f64,
}

/// Flags a shift when the target's mean penalty is more than `multiplier`
/// reference standard deviations away from the reference mean, in either
/// direction.
pub fn detect_shift(reference: PenaltyStats, target: PenaltyStats, multiplier: f64) -> ShiftVerdict {
    let score = (target.mean - reference.mean).abs() / reference.std.max(STD_FLOOR);
    ShiftVerdict {
        reference,
        target,
        score,
        shifted: score > multiplier,
        threshold: multiplier,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub batch_size: usize,
    pub ell: usize,
    pub seed: u64,
    pub rules: Vec<DecisionRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub size: usize,
    pub accuracy: BTreeMap<DecisionRule, f64>,
    /// Absent when the split is smaller than one batch.
    pub penalty: Option<PenaltyStats>,
    pub mixture_weights: Vec<f64>,
    pub expert_predictions: Tensor2,
}

/// Every per-split quantity from a single inference pass.
pub fn evaluate_split(model: &ModelParams, name: &str, split: &[Instance], settings: &EvalSettings) -> Result<SplitReport> {
    require_nonempty(split)?;
    let outputs = infer_all(model, split)?;
    let accuracy = settings
        .rules
        .iter()
        .map(|&rule| Ok((rule, accuracy_of(&outputs, split, rule)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let penalty = if split.len() >= settings.batch_size {
        Some(penalty_stats_of(&outputs, settings.batch_size, settings.ell, settings.seed)?)
    } else {
        None
    };
    Ok(SplitReport {
        split: name.to_string(),
        size: split.len(),
        accuracy,
        penalty,
        mixture_weights: mixture_profile_of(&outputs),
        expert_predictions: expert_profile_of(&outputs),
    })
}

/// Accuracy when `gate_rule` is applied only to splits flagged as shifted and
/// the estimated rule otherwise.
pub fn gated_accuracy(model: &ModelParams, split: &[Instance], verdict: &ShiftVerdict, gate_rule: DecisionRule) -> Result<(DecisionRule, f64)> {
    let rule = if verdict.shifted { gate_rule } else { DecisionRule::Estimated };
    Ok((rule, accuracy(model, split, rule)?))
}

/// Flat table with one row per split and rule.
pub fn reports_csv(reports: &[SplitReport]) -> String {
    let mut out = String::from("split,rule,accuracy,penalty_mean,penalty_std,penalty_batches\n");
    for r in reports {
        for (rule, acc) in &r.accuracy {
            let (mean, std, batches) = match r.penalty {
                Some(p) => (format!("{:.17e}", p.mean), format!("{:.17e}", p.std), p.batches.to_string()),
                None => (String::new(), String::new(), "0".into()),
            };
            writeln!(out, "{},{rule},{acc:.17e},{mean},{std},{batches}", r.split).unwrap();
        }
    }
    out
}

/// Matrix as CSV with labelled rows and columns, for heatmap plotting.
pub fn matrix_csv(m: &Tensor2, row_prefix: &str, col_prefix: &str) -> String {
    let mut out = String::from("row");
    for c in 0..m.cols() {
        write!(out, ",{col_prefix}{c}").unwrap();
    }
    out.push('\n');
    for r in 0..m.rows() {
        write!(out, "{row_prefix}{r}").unwrap();
        for v in m.row(r) {
            write!(out, ",{v:.17e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Mixture profiles of several splits stacked as one CSV (`split × expert`).
pub fn mixture_profiles_csv(reports: &[SplitReport]) -> String {
    let k = reports.first().map_or(0, |r| r.mixture_weights.len());
    let mut out = String::from("split");
    for e in 0..k {
        write!(out, ",expert_{e}").unwrap();
    }
    out.push('\n');
    for r in reports {
        out.push_str(&r.split);
        for v in &r.mixture_weights {
            write!(out, ",{v:.17e}").unwrap();
        }
        out.push('\n');
    }
    out
}
