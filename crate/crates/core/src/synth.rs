//! Synthetic classification data with planted shortcut features.
//!
//! Each instance concatenates a *core* block, a noisy copy of a per-label
//! prototype that is genuinely predictive but hard to separate, and `G`
//! *shortcut* blocks, each a nearly noiseless one-hot code of some label
//! `a_g`. A split's correlation strength `ρ` is the probability that a
//! shortcut encodes the true label; otherwise it encodes one of the other
//! labels uniformly. Training and in-distribution splits use a high `ρ`,
//! out-of-distribution splits a low one, so the shortcut flips from helpful
//! to misleading while the core block keeps its meaning.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::argmax;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Core noise giving a nearest-prototype accuracy of about 0.85 for three
/// labels in ten dimensions (averaged over prototype draws).
pub const DEFAULT_SIGMA_CORE: f64 = 0.52;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_labels: usize,
    pub num_shortcuts: usize,
    pub core_dim: usize,
    pub sigma_core: f64,
    pub sigma_shortcut: f64,
    pub seed: u64,
    /// Split name → probability that a shortcut block encodes the true label.
    pub correlation: BTreeMap<String, f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let correlation = [("train", 0.9), ("id_dev", 0.9), ("ood_test", 0.1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        GeneratorConfig {
            num_labels: 3,
            num_shortcuts: 3,
            core_dim: 10,
            sigma_core: DEFAULT_SIGMA_CORE,
            sigma_shortcut: 0.05,
            seed: 0,
            correlation,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(Error::config("generator needs at least two labels"));
        }
        if self.core_dim < self.num_labels {
            return Err(Error::config(format!(
                "core_dim ({}) must be at least num_labels ({})",
                self.core_dim, self.num_labels
            )));
        }
        if !(self.sigma_shortcut >= 0.0 && self.sigma_core >= self.sigma_shortcut && self.sigma_core.is_finite()) {
            return Err(Error::config(format!(
                "need sigma_core ({}) >= sigma_shortcut ({}) >= 0",
                self.sigma_core, self.sigma_shortcut
            )));
        }
        for (name, rho) in &self.correlation {
            check_rho(name, *rho)?;
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.core_dim + self.num_shortcuts * self.num_labels
    }
}

fn check_rho(name: &str, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("correlation for `{name}` must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub x: Vec<f64>,
    pub y: usize,
    /// Label planted in each shortcut block. Kept for analysis only; models
    /// see `x` and `y`.
    pub shortcuts: Vec<usize>,
}

impl Instance {
    pub fn example(&self) -> (&[f64], usize) {
        (&self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    pub size: usize,
    /// Per-shortcut correlation overriding the configured split value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
}

impl SplitSpec {
    pub fn new(name: impl Into<String>, size: usize) -> Self {
        SplitSpec {
            name: name.into(),
            size,
            rho: None,
        }
    }

    pub fn with_rho(mut self, rho: Vec<f64>) -> Self {
        self.rho = Some(rho);
        self
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    prototypes: Vec<Vec<f64>>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "prototypes"));
        let prototypes = (0..config.num_labels)
            .map(|_| loop {
                let v: Vec<f64> = (0..config.core_dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    break v.into_iter().map(|a| a / norm).collect();
                }
            })
            .collect();
        Ok(Generator { config, prototypes })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    /// Seed of the random stream used for the split called `name`.
    pub fn split_seed(&self, name: &str) -> u64 {
        derive_seed(self.config.seed, &format!("split:{name}"))
    }

    fn split_rho(&self, spec: &SplitSpec) -> Result<Vec<f64>> {
        let g = self.config.num_shortcuts;
        let rho = match &spec.rho {
            Some(r) if r.len() == g => r.clone(),
            Some(r) => {
                return Err(Error::config(format!(
                    "split `{}` overrides {} correlations for {g} shortcuts",
                    spec.name,
                    r.len()
                )))
            }
            None => {
                let r = self.config.correlation.get(&spec.name).ok_or_else(|| {
                    Error::config(format!("no correlation configured for split `{}`", spec.name))
                })?;
                vec![*r; g]
            }
        };
        for r in &rho {
            check_rho(&spec.name, *r)?;
        }
        Ok(rho)
    }

    pub fn sample_split(&self, spec: &SplitSpec) -> Result<Vec<Instance>> {
        if spec.size == 0 {
            return Err(Error::config(format!("split `{}` has size 0", spec.name)));
        }
        let rho = self.split_rho(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.split_seed(&spec.name));
        let core_noise = Normal::new(0.0, self.config.sigma_core).map_err(|e| Error::config(e.to_string()))?;
        let shortcut_noise = Normal::new(0.0, self.config.sigma_shortcut).map_err(|e| Error::config(e.to_string()))?;
        let labels = self.config.num_labels;

        let mut out = Vec::with_capacity(spec.size);
        for _ in 0..spec.size {
            let y = rng.random_range(0..labels);
            let mut x = Vec::with_capacity(self.config.feature_dim());
            x.extend(self.prototypes[y].iter().map(|m| m + core_noise.sample(&mut rng)));
            let mut shortcuts = Vec::with_capacity(rho.len());
            for &r in &rho {
                let a = if rng.random::<f64>() < r {
                    y
                } else {
                    // uniform over the other labels
                    let other = rng.random_range(0..labels - 1);
                    if other >= y {
                        other + 1
                    } else {
                        other
                    }
                };
                shortcuts.push(a);
                x.extend((0..labels).map(|c| if c == a { 1.0 } else { 0.0 } + shortcut_noise.sample(&mut rng)));
            }
            out.push(Instance { x, y, shortcuts });
        }
        Ok(out)
    }

    /// Nearest-prototype label of a core block.
    pub fn nearest_prototype(&self, core: &[f64]) -> usize {
        let dist: Vec<f64> = self
            .prototypes
            .iter()
            .map(|p| -p.iter().zip(core).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        argmax(&dist)
    }

    /// Monte-Carlo accuracy of the nearest-prototype rule on the core block,
    /// which is Bayes-optimal for equal priors and isotropic noise.
    pub fn bayes_core_accuracy(&self, n: usize, seed: u64) -> f64 {
        self.core_accuracy_at(self.config.sigma_core, n, seed)
    }

    fn core_accuracy_at(&self, sigma: f64, n: usize, seed: u64) -> f64 {
        assert!(n >= 1, "need at least one sample");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut correct = 0usize;
        for _ in 0..n {
            let y = rng.random_range(0..self.config.num_labels);
            let core: Vec<f64> = self.prototypes[y]
                .iter()
                .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if self.nearest_prototype(&core) == y {
                correct += 1;
            }
        }
        correct as f64 / n as f64
    }

    /// Core noise level whose nearest-prototype accuracy is closest to
    /// `target`, by bisection on a fixed Monte-Carlo sample.
    pub fn calibrate_sigma_core(&self, target: f64, n: usize, seed: u64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 8.0f64);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.core_accuracy_at(mid, n, seed) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Majority vote over the decoded shortcut blocks (ties to the lowest
    /// label).
    pub fn shortcut_vote(&self, x: &[f64]) -> usize {
        let labels = self.config.num_labels;
        let mut votes = vec![0.0; labels];
        for g in 0..self.config.num_shortcuts {
            let start = self.config.core_dim + g * labels;
            votes[argmax(&x[start..start + labels])] += 1.0;
        }
        argmax(&votes)
    }

    /// Accuracy of [`Generator::shortcut_vote`] on `n` fresh draws of `split`.
    pub fn shortcut_only_accuracy(&self, split: &SplitSpec, n: usize) -> Result<f64> {
        let spec = SplitSpec {
            size: n,
            ..split.clone()
        };
        let data = self.sample_split(&spec)?;
        let correct = data.iter().filter(|i| self.shortcut_vote(&i.x) == i.y).count();
        Ok(correct as f64 / n as f64)
    }
}
