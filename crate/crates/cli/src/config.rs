//! Experiment configuration: one versioned JSON document, optionally
//! patched from the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use posthoc_core::trainer::{SweepGrid, TrainConfig};
use posthoc_core::{derive_seed, set_ell, DecisionRule, GeneratorConfig, SplitSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA: &str = "posthoc-experiment";
pub const CONFIG_VERSION: u32 = 1;

pub const TRAIN_SPLIT: &str = "train";
pub const DEV_SPLIT: &str = "id_dev";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Splits reported by `eval` and checked by `detect`.
    pub splits: Vec<String>,
    pub rules: Vec<DecisionRule>,
    /// Split providing the in-distribution penalty statistics.
    pub reference_split: String,
    /// Shift flagged beyond this many reference standard deviations.
    pub shift_multiplier: f64,
    /// Rule applied to splits flagged as shifted.
    pub gate_rule: DecisionRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            splits: vec![DEV_SPLIT.into(), "ood_test".into()],
            rules: DecisionRule::ALL.to_vec(),
            reference_split: DEV_SPLIT.into(),
            shift_multiplier: posthoc_core::eval::DEFAULT_SHIFT_MULTIPLIER,
            gate_rule: DecisionRule::Argmin,
        }
    }
}

/// The `seed` fields of `generator` and `train` are ignored: every step
/// draws its seed from the global one (see [`ExperimentConfig::step_seed`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub splits: Vec<SplitSpec>,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: CONFIG_SCHEMA.into(),
            version: CONFIG_VERSION,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            generator: GeneratorConfig::default(),
            splits: vec![
                SplitSpec::new(TRAIN_SPLIT, 8000),
                SplitSpec::new(DEV_SPLIT, 2000),
                SplitSpec::new("ood_test", 2000),
            ],
            train: TrainConfig::default(),
            sweep: SweepGrid::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line adjustments applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => CliError::MissingInput {
                        path: p.into(),
                        hint: "config file not found".into(),
                    },
                    _ => CliError::Config(format!("{}: {e}", p.display())),
                })?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(ExperimentConfig::default()).expect("default config serializes"),
        };
        for assignment in &overrides.sets {
            apply_override(&mut value, assignment)?;
        }
        let mut config: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out_dir {
            config.out_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema != CONFIG_SCHEMA || self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config schema {} v{} (expected {CONFIG_SCHEMA} v{CONFIG_VERSION})",
                self.schema, self.version
            )));
        }
        self.generator.validate()?;
        self.train.validate()?;
        let mut names = Vec::new();
        for s in &self.splits {
            if s.size == 0 {
                return Err(CliError::Config(format!("split `{}` has size 0", s.name)));
            }
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(CliError::Config(format!("split name `{}` must be [A-Za-z0-9_-]+", s.name)));
            }
            if names.contains(&s.name.as_str()) {
                return Err(CliError::Config(format!("split `{}` listed twice", s.name)));
            }
            if s.rho.is_none() && !self.generator.correlation.contains_key(&s.name) {
                return Err(CliError::Config(format!("no correlation configured for split `{}`", s.name)));
            }
            names.push(&s.name);
        }
        let referenced = [TRAIN_SPLIT, DEV_SPLIT, self.eval.reference_split.as_str()]
            .into_iter()
            .chain(self.eval.splits.iter().map(String::as_str));
        for name in referenced {
            if !names.contains(&name) {
                return Err(CliError::Config(format!("split `{name}` is referenced but not defined")));
            }
        }
        if self.sweep.k_grid.is_empty() || self.sweep.lambda_grid.is_empty() || self.sweep.seeds == 0 {
            return Err(CliError::Config("sweep grids and seed count must be non-empty".into()));
        }
        if self.eval.rules.is_empty() {
            return Err(CliError::Config("eval.rules must name at least one rule".into()));
        }
        if !(self.eval.shift_multiplier > 0.0 && self.eval.shift_multiplier.is_finite()) {
            return Err(CliError::Config("eval.shift_multiplier must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Child seed of the named step.
    pub fn step_seed(&self, step: &str) -> u64 {
        derive_seed(self.seed, step)
    }

    /// Dropout count shared by training, sweeping and evaluation: the
    /// configured value, or sized for the smallest expert count in the sweep.
    pub fn ell(&self) -> usize {
        let k_min = self.sweep.k_grid.iter().copied().min().unwrap_or(self.train.num_experts);
        self.train.ell.unwrap_or_else(|| set_ell(self.train.batch_size, k_min.max(1)))
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.step_seed("generator"),
            ..self.generator.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.step_seed("train"),
            ell: Some(self.ell()),
            ..self.train.clone()
        }
    }

    pub fn sweep_base(&self) -> TrainConfig {
        TrainConfig {
            seed: self.step_seed("sweep"),
            ..self.train_config()
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.step_seed("eval")
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        [
            ("generator", self.generator_config().seed),
            ("train", self.train_config().seed),
            ("sweep", self.sweep_base().seed),
            ("eval", self.eval_seed()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn split(&self, name: &str) -> Option<&SplitSpec> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Sets `path.to.field` to `value`. The value is parsed as JSON when
/// possible and taken as a string otherwise. Only existing, non-object
/// fields can be set.
pub fn apply_override(config: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects path=value, got `{assignment}`")))?;
    let unknown = || CliError::Config(format!("--set: no field `{path}`"));
    let mut cur = config;
    for part in path.trim().split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part).ok_or_else(unknown)?,
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)).ok_or_else(unknown)?,
            _ => return Err(unknown()),
        };
    }
    if cur.is_object() {
        return Err(CliError::Config(format!("--set: `{path}` is a section, not a field")));
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(sets: &[&str]) -> CliResult<ExperimentConfig> {
        ExperimentConfig::load(
            None,
            &Overrides {
                sets: sets.iter().map(|s| s.to_string()).collect(),
                ..Overrides::default()
            },
        )
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = load(&["train.lambda=1.5", "splits.2.size=10", "eval.gate_rule=uniform", "train.ell=4"]).unwrap();
        assert_eq!(c.train.lambda, 1.5);
        assert_eq!(c.splits[2].size, 10);
        assert_eq!(c.eval.gate_rule, DecisionRule::Uniform);
        assert_eq!(c.ell(), 4);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for set in ["train.lamda=1", "train=3", "nonsense", "splits.9.size=1", "train.lambda=\"x\"", "train.lambda=-1"] {
            let e = load(&[set]).unwrap_err();
            assert_eq!(e.exit_code(), 3, "{set}: {e}");
        }
    }

    #[test]
    fn validation_catches_dangling_and_empty_splits() {
        assert!(load(&["splits.0.size=0"]).is_err());
        assert!(load(&["eval.reference_split=holdout"]).is_err());
        assert!(load(&["splits.1.name=dev"]).is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let base = load(&[]).unwrap();
        assert_eq!(base.hash(), load(&[]).unwrap().hash());
        for set in ["seed=1", "train.epochs=3", "generator.correlation.ood_test=0.2", "eval.rules=[\"argmin\"]", "out_dir=elsewhere"] {
            assert_ne!(base.hash(), load(&[set]).unwrap().hash(), "{set}");
        }
    }

    #[test]
    fn default_ell_matches_smallest_k() {
        let c = ExperimentConfig::default();
        assert_eq!(c.ell(), 8);
        let seeds = c.seeds();
        assert_eq!(seeds.len(), 4);
        let distinct: std::collections::BTreeSet<_> = seeds.values().collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn shipped_default_config_matches_builtin() {
        let text = include_str!("../../../configs/default.json");
        let from_file: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(from_file, ExperimentConfig::default());
    }
}
