//! Mini-batch training under `L_C + λ·L_R`, best-epoch selection on the
//! in-distribution dev split, and the two-stage `(K, λ)` search.
//!
//! Nothing in this module accepts out-of-distribution data: training and
//! model selection see only a train split and an ID dev split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::DecisionRule;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{Example, LossWeights, ModelParams, MosConfig};
use crate::nn::{Adam, PROB_FLOOR};
use crate::penalty;
use crate::seed::derive_seed;
use crate::synth::Instance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the router-diversity penalty.
    pub lambda: f64,
    pub num_experts: usize,
    /// Row-wise dropout count. `None` picks the smallest power of two with
    /// `num_experts · ℓ ≥ batch_size`.
    pub ell: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub hidden_dim: usize,
    pub repr_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            num_experts: 5,
            ell: None,
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
            shuffle: true,
            hidden_dim: 32,
            repr_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn resolved_ell(&self) -> usize {
        self.ell
            .unwrap_or_else(|| penalty::set_ell(self.batch_size, self.num_experts.max(1)))
    }

    pub fn model_config(&self, input_dim: usize, num_labels: usize) -> MosConfig {
        MosConfig {
            num_experts: self.num_experts,
            num_labels,
            input_dim,
            hidden_dim: self.hidden_dim,
            repr_dim: self.repr_dim,
        }
    }
}

/// Mean losses of one pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub classification: f64,
    /// Mean over batches of at least two instances; `None` if there were none.
    pub penalty: Option<f64>,
}

impl LossSummary {
    pub fn total(&self) -> f64 {
        self.classification + self.penalty.unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: LossSummary,
    /// Estimated-rule accuracy, no post-hoc control.
    pub dev_accuracy: f64,
    pub dev: LossSummary,
    pub dev_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    pub ell: usize,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Index of the best score, earliest on ties.
pub fn select_best_epoch(scores: &[f64]) -> usize {
    crate::control::argmax(scores)
}

fn shuffled_indices(n: usize, seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// One pass over `data` in mini-batches, applying an optimizer step per batch.
pub fn train_epoch(
    model: &mut ModelParams,
    optimizer: &mut Adam,
    data: &[Instance],
    config: &TrainConfig,
    epoch: usize,
) -> Result<LossSummary> {
    if data.is_empty() {
        return Err(Error::Usage("cannot train on an empty split".into()));
    }
    let ell = config.resolved_ell();
    let order = shuffled_indices(data.len(), derive_seed(config.seed, &format!("epoch:{epoch}")), config.shuffle);
    let weights = LossWeights::joint(config.lambda);

    let mut classification = 0.0;
    let mut penalty_sum = 0.0;
    let mut penalty_batches = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<Example<'_>> = chunk.iter().map(|&i| data[i].example()).collect();
        let (loss, grads) = model.joint_loss(&batch, weights, ell)?;
        classification += loss.classification * batch.len() as f64;
        if let Some(v) = loss.penalty_value() {
            penalty_sum += v;
            penalty_batches += 1;
        }
        optimizer.step(model, &grads)?;
    }
    Ok(LossSummary {
        classification: classification / data.len() as f64,
        penalty: (penalty_batches > 0).then(|| penalty_sum / penalty_batches as f64),
    })
}

/// Mean `L_C` and `L_R` of a fixed model. The split is shuffled once with
/// `seed` before batching, since a sorted split would distort `L_R`; the
/// final short batch is kept with `ℓ` clamped.
pub fn eval_losses(model: &ModelParams, split: &[Instance], batch_size: usize, ell: usize, seed: u64) -> Result<LossSummary> {
    if split.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be positive".into()));
    }
    let outputs = eval::infer_all(model, split)?;
    let order = shuffled_indices(split.len(), seed, true);
    let mut classification = 0.0;
    let mut penalty_sum = 0.0;
    let mut penalty_batches = 0usize;
    for chunk in order.chunks(batch_size) {
        for &i in chunk {
            classification -= outputs[i].aggregate[split[i].y].max(PROB_FLOOR).ln();
        }
        let routers: Vec<&[f64]> = chunk.iter().map(|&i| outputs[i].router_dist.as_slice()).collect();
        if let Some(pc) = penalty::penalty(&routers, ell)? {
            penalty_sum += pc.value;
            penalty_batches += 1;
        }
    }
    Ok(LossSummary {
        classification: classification / split.len() as f64,
        penalty: (penalty_batches > 0).then(|| penalty_sum / penalty_batches as f64),
    })
}

/// Seed the model parameters of `fit` are initialised from.
pub fn init_seed(config: &TrainConfig) -> u64 {
    derive_seed(config.seed, "init")
}

/// Trains for `config.epochs` epochs and returns the parameters of the epoch
/// with the best ID-dev accuracy under the estimated rule.
pub fn fit(config: &TrainConfig, num_labels: usize, train: &[Instance], id_dev: &[Instance]) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train.is_empty() || id_dev.is_empty() {
        return Err(Error::Usage("fit needs non-empty train and id_dev splits".into()));
    }
    let model_config = config.model_config(train[0].x.len(), num_labels);
    let mut model = ModelParams::init(model_config, init_seed(config))?;
    let mut optimizer = Adam::new(config.learning_rate);
    let ell = config.resolved_ell();
    let dev_seed = derive_seed(config.seed, "dev-shuffle");

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams)> = None;
    for epoch in 0..config.epochs {
        let train_stats = train_epoch(&mut model, &mut optimizer, train, config, epoch)?;
        let dev_accuracy = eval::accuracy(&model, id_dev, DecisionRule::Estimated)?;
        let dev = eval_losses(&model, id_dev, config.batch_size, ell, dev_seed)?;
        if best.as_ref().is_none_or(|(acc, _)| dev_accuracy > *acc) {
            best = Some((dev_accuracy, model.clone()));
        }
        epochs.push(EpochStats {
            epoch,
            train: train_stats,
            dev_accuracy,
            dev,
            dev_total: dev.total(),
        });
    }
    let best_epoch = select_best_epoch(&epochs.iter().map(|e| e.dev_accuracy).collect::<Vec<_>>());
    let (_, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainHistory {
            config: config.clone(),
            ell,
            epochs,
            best_epoch,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub k_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    /// Training runs averaged per candidate.
    pub seeds: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            k_grid: vec![5, 10, 15],
            lambda_grid: vec![0.0, 0.5, 1.0],
            seeds: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCandidate {
    pub num_experts: usize,
    pub lambda: f64,
    pub classification: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `λ = 0`, varying `K`.
    pub stage1: Vec<SweepCandidate>,
    /// `K = K*`, varying `λ`.
    pub stage2: Vec<SweepCandidate>,
    pub best_num_experts: usize,
    pub best_lambda: f64,
}

fn pick(cands: &[SweepCandidate]) -> &SweepCandidate {
    let totals: Vec<f64> = cands.iter().map(|c| -c.total).collect();
    &cands[crate::control::argmax(&totals)]
}

/// Two-stage search driven by `score(K, λ) -> (L_C, L_R)` on ID dev: first
/// fix `λ = 0` and choose `K*`, then choose `λ*` under `K*`, each time
/// minimising `L_C + L_R` (ties to the earlier grid entry). Candidates are
/// scored in parallel on `workers` threads.
pub fn two_stage_search_with<F>(k_grid: &[usize], lambda_grid: &[f64], workers: usize, score: F) -> Result<SweepResult>
where
    F: Fn(usize, f64) -> Result<(f64, f64)> + Sync,
{
    if k_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::config("sweep grids must be non-empty"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    let evaluate = |pairs: Vec<(usize, f64)>| -> Result<Vec<SweepCandidate>> {
        pool.install(|| {
            pairs
                .into_par_iter()
                .map(|(k, lambda)| {
                    let (classification, penalty) = score(k, lambda)?;
                    Ok(SweepCandidate {
                        num_experts: k,
                        lambda,
                        classification,
                        penalty,
                        total: classification + penalty,
                    })
                })
                .collect()
        })
    };

    let stage1 = evaluate(k_grid.iter().map(|&k| (k, 0.0)).collect())?;
    let best_num_experts = pick(&stage1).num_experts;

    let reused = stage1.iter().find(|c| c.num_experts == best_num_experts).cloned();
    let todo: Vec<(usize, f64)> = lambda_grid
        .iter()
        .filter(|&&l| l != 0.0)
        .map(|&l| (best_num_experts, l))
        .collect();
    let mut fresh = evaluate(todo)?.into_iter();
    let stage2: Vec<SweepCandidate> = lambda_grid
        .iter()
        .map(|&l| {
            if l == 0.0 {
                reused.clone().expect("stage-1 candidate for K*")
            } else {
                fresh.next().expect("one result per lambda")
            }
        })
        .collect();
    let best_lambda = pick(&stage2).lambda;
    Ok(SweepResult {
        stage1,
        stage2,
        best_num_experts,
        best_lambda,
    })
}

/// Runs the search with real training: every candidate is fitted
/// `grid.seeds` times and scored on ID dev. `ℓ` is shared by all candidates
/// and sized for the smallest `K` unless `base.ell` fixes it.
pub fn two_stage_search(
    base: &TrainConfig,
    grid: &SweepGrid,
    num_labels: usize,
    train: &[Instance],
    id_dev: &[Instance],
    workers: usize,
) -> Result<SweepResult> {
    base.validate()?;
    if grid.seeds == 0 {
        return Err(Error::config("sweep needs at least one seed"));
    }
    let k_min = *grid.k_grid.iter().min().ok_or_else(|| Error::config("empty K grid"))?;
    let ell = base.ell.unwrap_or_else(|| penalty::set_ell(base.batch_size, k_min.max(1)));
    let runs: Vec<u64> = (0..grid.seeds).map(|r| derive_seed(base.seed, &format!("sweep-run:{r}"))).collect();
    let dev_seed = derive_seed(base.seed, "dev-shuffle");

    two_stage_search_with(&grid.k_grid, &grid.lambda_grid, workers, |k, lambda| {
        let mut lc = 0.0;
        let mut lr = 0.0;
        for &seed in &runs {
            let cfg = TrainConfig {
                num_experts: k,
                lambda,
                ell: Some(ell),
                seed,
                ..base.clone()
            };
            let (model, _) = fit(&cfg, num_labels, train, id_dev)?;
            let losses = eval_losses(&model, id_dev, cfg.batch_size, ell, dev_seed)?;
            lc += losses.classification;
            lr += losses.penalty.unwrap_or(0.0);
        }
        let n = runs.len() as f64;
        Ok((lc / n, lr / n))
    })
}
