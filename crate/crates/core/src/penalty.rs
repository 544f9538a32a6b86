//! Router-diversity penalty over a mini-batch.
//!
//! With `Π` the `K × M` matrix whose columns are the router distributions of
//! the batch, the penalty is
//!
//! ```text
//! L_R = ‖d_ℓ(ΠᵀΠ − I)‖_F / ‖d_ℓ(J − I)‖_F
//! ```
//!
//! where `d_ℓ` zeroes the `ℓ` largest entries of every row and `J` is the
//! all-ones matrix. The value lies in `[0, 1]`; it is `0` when each input is
//! routed one-hot and no expert receives more than `ℓ + 1` inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// Below this value the norm is treated as sitting at its kink and the
/// gradient is taken to be zero.
pub const GRAD_EPSILON: f64 = 1e-12;

/// Everything computed on the way to the penalty value, kept for the
/// backward pass and for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyComputation {
    /// `K × M`, column `m` is `π(x_m)`.
    pub pi: Tensor2,
    /// `ΠᵀΠ − I`
    pub gram: Tensor2,
    /// Row-major `M × M`; `true` where the entry survives the dropout.
    pub keep: Vec<bool>,
    pub numerator: f64,
    pub denominator: f64,
    pub value: f64,
    pub ell_effective: usize,
}

impl PenaltyComputation {
    pub fn batch_size(&self) -> usize {
        self.pi.cols()
    }

    pub fn num_experts(&self) -> usize {
        self.pi.rows()
    }
}

/// Stacks router distributions as columns of a `K × M` matrix.
pub fn assemble_pi<D: AsRef<[f64]>>(router_dists: &[D]) -> Result<Tensor2> {
    let k = router_dists.first().map_or(0, |d| d.as_ref().len());
    let m = router_dists.len();
    let mut pi = Tensor2::zeros(k, m);
    for (col, dist) in router_dists.iter().enumerate() {
        let dist = dist.as_ref();
        if dist.len() != k {
            return Err(Error::shape(format!(
                "router distribution {col} has {} experts, expected {k}",
                dist.len()
            )));
        }
        for (row, &v) in dist.iter().enumerate() {
            pi.set(row, col, v);
        }
    }
    Ok(pi)
}

/// Keep-mask of the row-wise top-`ell` dropout on a square matrix. Entries
/// are ranked by signed value, ties going to the lowest column index.
pub fn topl_keep_mask(a: &Tensor2, ell: usize) -> Vec<bool> {
    let n = a.cols();
    let mut keep = vec![true; a.rows() * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for r in 0..a.rows() {
        let row = a.row(r);
        order.clear();
        order.extend(0..n);
        // stable, so equal values keep ascending column order
        order.sort_by(|&i, &j| row[j].total_cmp(&row[i]));
        for &c in order.iter().take(ell) {
            keep[r * n + c] = false;
        }
    }
    keep
}

/// Zeroes the `ell` largest values of every row in place of their original
/// positions. `ell` at or beyond the row length clears the row.
pub fn topl_dropout(a: &Tensor2, ell: usize) -> Tensor2 {
    let keep = topl_keep_mask(a, ell);
    let mut out = a.clone();
    for (v, k) in out.data_mut().iter_mut().zip(keep) {
        if !k {
            *v = 0.0;
        }
    }
    out
}

/// `ℓ` actually applied to a batch of size `batch_size`, leaving at least one
/// off-diagonal entry per row so the normalizer stays positive.
pub fn effective_ell(ell: usize, batch_size: usize) -> usize {
    ell.min(batch_size.saturating_sub(2))
}

/// `‖d_ℓ(J − I)‖_F` in closed form: each row keeps `M − 1 − ℓ` ones.
fn normalizer(batch_size: usize, ell: usize) -> f64 {
    ((batch_size * (batch_size - 1 - ell)) as f64).sqrt()
}

/// Penalty for one batch of router distributions. Returns `Ok(None)` for
/// batches with fewer than two instances, where the penalty is undefined.
pub fn penalty<D: AsRef<[f64]>>(router_dists: &[D], ell: usize) -> Result<Option<PenaltyComputation>> {
    let pi = assemble_pi(router_dists)?;
    let m = pi.cols();
    if m < 2 {
        return Ok(None);
    }
    let ell_effective = effective_ell(ell, m);

    let mut gram = Tensor2::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v: f64 = (0..pi.rows()).map(|k| pi.get(k, i) * pi.get(k, j)).sum();
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
        gram.set(i, i, gram.get(i, i) - 1.0);
    }

    let keep = topl_keep_mask(&gram, ell_effective);
    let numerator = gram
        .data()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt();
    let denominator = normalizer(m, ell_effective);
    Ok(Some(PenaltyComputation {
        value: numerator / denominator,
        pi,
        gram,
        keep,
        numerator,
        denominator,
        ell_effective,
    }))
}

/// Gradient of the penalty value with respect to each router distribution,
/// one row per batch instance (`M × K`). The dropout mask is held fixed.
pub fn penalty_gradient(pc: &PenaltyComputation) -> Tensor2 {
    let m = pc.batch_size();
    let k = pc.num_experts();
    let mut grad = Tensor2::zeros(m, k);
    if pc.value <= GRAD_EPSILON {
        return grad;
    }
    // dN/dG_ij = keep_ij G_ij / N, then G_ij = Σ_k Π_ki Π_kj gives
    // dN/dΠ_ki = Σ_j (S_ij + S_ji) Π_kj with S the masked, scaled gram.
    let scale = 1.0 / (pc.numerator * pc.denominator);
    let s = |i: usize, j: usize| {
        if pc.keep[i * m + j] {
            pc.gram.get(i, j)
        } else {
            0.0
        }
    };
    for i in 0..m {
        let row = grad.row_mut(i);
        for j in 0..m {
            let w = (s(i, j) + s(j, i)) * scale;
            if w == 0.0 {
                continue;
            }
            for (e, g) in row.iter_mut().enumerate() {
                *g += w * pc.pi.get(e, j);
            }
        }
    }
    grad
}

/// Smallest power of two `ℓ` with `k_min · ℓ ≥ batch_size`.
pub fn set_ell(batch_size: usize, k_min: usize) -> usize {
    assert!(batch_size >= 1 && k_min >= 1, "set_ell needs positive sizes");
    let mut ell = 1usize;
    while k_min * ell < batch_size {
        ell *= 2;
    }
    ell
}
