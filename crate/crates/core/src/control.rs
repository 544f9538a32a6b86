//! Inference-time aggregation of expert predictions.
//!
//! Given the `K × |Y|` matrix of expert distributions, a rule replaces the
//! router's weights before taking the argmax:
//!
//! * `Estimated` keeps the router output, `argmax_y Σ_k π_k p^k(y)`.
//! * `Uniform` uses `π = 1/K`, i.e. the mean expert prediction.
//! * `Argmin` scores every label by its least favourable expert,
//!   `argmax_y min_k p^k(y)`. This is the maximin rule: it minimises the
//!   worst-case 0-1 risk over all mixture weights on the simplex.
//!
//! Ties always resolve to the lowest label (and lowest expert) index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::mix;
use crate::nn::Tensor2;

/// Largest expert count the simplex-grid oracle accepts.
pub const ORACLE_MAX_EXPERTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionRule {
    Estimated,
    Uniform,
    Argmin,
}

impl DecisionRule {
    pub const ALL: [DecisionRule; 3] = [DecisionRule::Estimated, DecisionRule::Uniform, DecisionRule::Argmin];

    pub fn name(self) -> &'static str {
        match self {
            DecisionRule::Estimated => "estimated",
            DecisionRule::Uniform => "uniform",
            DecisionRule::Argmin => "argmin",
        }
    }
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "estimated" => Ok(DecisionRule::Estimated),
            "uniform" => Ok(DecisionRule::Uniform),
            "argmin" | "maximin" => Ok(DecisionRule::Argmin),
            other => Err(Error::config(format!(
                "unknown decision rule `{other}` (expected estimated, uniform or argmin)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: usize,
    pub rule: DecisionRule,
    /// Expert attaining the minimum for the chosen label (argmin rule only).
    pub expert: Option<usize>,
    pub scores: Vec<f64>,
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// First index of the minimum.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn column(p: &Tensor2, y: usize) -> impl Iterator<Item = f64> + '_ {
    (0..p.rows()).map(move |k| p.get(k, y))
}

fn check_matrix(p: &Tensor2) -> Result<()> {
    if p.rows() == 0 || p.cols() == 0 {
        return Err(Error::shape("expert matrix must be non-empty"));
    }
    Ok(())
}

/// Applies `rule` to the expert matrix `p` (`K × |Y|`). `pi` is only read by
/// the estimated rule.
pub fn aggregate(p: &Tensor2, pi: &[f64], rule: DecisionRule) -> Result<Decision> {
    check_matrix(p)?;
    let k = p.rows();
    let (scores, expert) = match rule {
        DecisionRule::Estimated => {
            if pi.len() != k {
                return Err(Error::shape(format!(
                    "router distribution has {} entries for {k} experts",
                    pi.len()
                )));
            }
            (mix(p, pi), None)
        }
        DecisionRule::Uniform => (mix(p, &vec![1.0 / k as f64; k]), None),
        DecisionRule::Argmin => {
            let scores: Vec<f64> = (0..p.cols())
                .map(|y| column(p, y).fold(f64::INFINITY, f64::min))
                .collect();
            let label = argmax(&scores);
            let worst: Vec<f64> = column(p, label).collect();
            let label_expert = argmin(&worst);
            return Ok(Decision {
                label,
                rule,
                expert: Some(label_expert),
                scores,
            });
        }
    };
    Ok(Decision {
        label: argmax(&scores),
        rule,
        expert,
        scores,
    })
}

/// `1 − min_k p^k(y)`: the largest single-instance 0-1 risk of predicting `y`
/// over every choice of mixture weights.
pub fn worst_case_risk(p: &Tensor2, y: usize) -> Result<f64> {
    check_matrix(p)?;
    if y >= p.cols() {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_labels: p.cols(),
        });
    }
    Ok(1.0 - column(p, y).fold(f64::INFINITY, f64::min))
}

/// Per-label worst-case risk found by brute-force search over a simplex grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEvaluation {
    /// `max_π (1 − Σ_k π_k p^k(y))` for each label `y`.
    pub worst_case_risk: Vec<f64>,
    pub loss: String,
    pub grid_step: f64,
    pub grid_points: usize,
}

/// Calls `visit` with every point of the simplex in `dim` dimensions whose
/// coordinates are multiples of `1/divisions`.
fn for_each_simplex_point(dim: usize, divisions: usize, visit: &mut impl FnMut(&[f64])) {
    fn recurse(pos: usize, remaining: usize, divisions: usize, counts: &mut [usize], point: &mut [f64], visit: &mut impl FnMut(&[f64])) {
        let last = counts.len() - 1;
        if pos == last {
            counts[last] = remaining;
            point[last] = remaining as f64 / divisions as f64;
            visit(point);
            return;
        }
        for c in 0..=remaining {
            counts[pos] = c;
            point[pos] = c as f64 / divisions as f64;
            recurse(pos + 1, remaining - c, divisions, counts, point, visit);
        }
    }
    let mut counts = vec![0; dim];
    let mut point = vec![0.0; dim];
    recurse(0, divisions, divisions, &mut counts, &mut point, visit);
}

/// Worst-case risk per label by enumerating mixture weights on a grid of
/// spacing `grid_step`, interior points included.
pub fn minimax_risks(p: &Tensor2, grid_step: f64) -> Result<RiskEvaluation> {
    check_matrix(p)?;
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::Usage(format!("grid step must lie in (0, 0.5], got {grid_step}")));
    }
    if p.rows() > ORACLE_MAX_EXPERTS {
        return Err(Error::Usage(format!(
            "simplex grid over {} experts is intractable (max {ORACLE_MAX_EXPERTS})",
            p.rows()
        )));
    }
    let divisions = (1.0 / grid_step).round().max(1.0) as usize;
    let mut risks = vec![f64::NEG_INFINITY; p.cols()];
    let mut points = 0;
    for_each_simplex_point(p.rows(), divisions, &mut |pi| {
        points += 1;
        for (y, r) in risks.iter_mut().enumerate() {
            let mass: f64 = pi.iter().enumerate().map(|(k, w)| w * p.get(k, y)).sum();
            *r = r.max(1.0 - mass);
        }
    });
    Ok(RiskEvaluation {
        worst_case_risk: risks,
        loss: "zero-one".into(),
        grid_step: 1.0 / divisions as f64,
        grid_points: points,
    })
}

/// Label minimising the grid-searched worst-case risk. Scores are
/// `1 − risk`, so they are directly comparable with the argmin rule's.
pub fn minimax_oracle(p: &Tensor2, grid_step: f64) -> Result<Decision> {
    let eval = minimax_risks(p, grid_step)?;
    let scores: Vec<f64> = eval.worst_case_risk.iter().map(|r| 1.0 - r).collect();
    Ok(Decision {
        label: argmax(&scores),
        rule: DecisionRule::Argmin,
        expert: None,
        scores,
    })
}
