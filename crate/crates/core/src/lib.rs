//! Mixture-of-softmax classification that stays robust to shortcut features.
//!
//! A small MLP encoder feeds `K` softmax experts and a softmax router. Training
//! adds a router-diversity penalty so that different inputs are routed to
//! different experts. At inference the router's weights can be swapped for a
//! pessimistic choice (uniform or maximin), and the same penalty computed on
//! unlabelled data serves as a distribution-shift alarm.

pub mod checkpoint;
pub mod control;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod penalty;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use control::{aggregate, minimax_oracle, worst_case_risk, Decision, DecisionRule};
pub use error::{Error, Result};
pub use eval::{detect_shift, evaluate_split, PenaltyStats, ShiftVerdict, SplitReport};
pub use model::{MixtureOutput, ModelParams, MosConfig};
pub use penalty::{penalty, set_ell, PenaltyComputation};
pub use seed::derive_seed;
pub use synth::{Generator, GeneratorConfig, Instance, SplitSpec};
pub use trainer::{fit, two_stage_search, SweepGrid, SweepResult, TrainConfig, TrainHistory};
