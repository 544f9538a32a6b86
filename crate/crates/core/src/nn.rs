//! Dense numeric building blocks with hand-written backward passes.
//!
//! Everything here works on `f64` and plain row-major storage. The model in
//! [`crate::model`] is a fixed graph, so every layer exposes an explicit
//! forward and backward instead of going through an autodiff tape.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} tensor needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Builds a tensor from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor2 {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`
    pub fn transpose_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::shape(format!(
                "transpose_matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
        Ok(out)
    }

    /// Adds the outer product `scale · a bᵀ` in place.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s == 0.0 {
                continue;
            }
            for (w, &bc) in self.row_mut(r).iter_mut().zip(b) {
                *w += s * bc;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Anything that owns a fixed list of trainable tensors.
///
/// The order of [`Parameters::tensors`] and [`Parameters::tensors_mut`] must
/// agree, since gradients and optimizer state are matched up positionally.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape(format!(
                "expected {n} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    /// `out × in`
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        LinearLayer {
            weight: Tensor2::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for both weight and bias.
    pub fn init_uniform<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut layer = LinearLayer::zeros(input, output);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-bound..=bound);
        }
        for b in &mut layer.bias {
            *b = rng.random_range(-bound..=bound);
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `x`.
    pub fn backward_into(&self, x: &[f64], upstream: &[f64], grad: &mut LinearLayer) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() || upstream.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "linear backward: layer {}->{}, x {}, upstream {}",
                self.input_dim(),
                self.output_dim(),
                x.len(),
                upstream.len()
            )));
        }
        grad.weight.add_outer(upstream, x, 1.0);
        for (g, u) in grad.bias.iter_mut().zip(upstream) {
            *g += u;
        }
        self.weight.transpose_matvec(upstream)
    }

    /// Returns `(grad_weight_and_bias, grad_x)`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(LinearLayer, Vec<f64>)> {
        let mut grad = LinearLayer::zeros(self.input_dim(), self.output_dim());
        let gx = self.backward_into(x, upstream, &mut grad)?;
        Ok((grad, gx))
    }
}

impl Parameters for LinearLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias]
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient passes where the input was strictly positive.
pub fn relu_backward(x: &[f64], upstream: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(upstream)
        .map(|(&v, &u)| if v > 0.0 { u } else { 0.0 })
        .collect()
}

pub fn relu_forward_backward(x: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (relu(x), relu_backward(x, upstream))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub epsilon: f64,
}

/// Values kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Vec<f64>,
    inv_std: f64,
}

impl LayerNormParams {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        LayerNormParams {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, LayerNormCache)> {
        let n = self.dim();
        if x.len() != n || n == 0 {
            return Err(Error::shape(format!(
                "layer norm over {n} features given {}",
                x.len()
            )));
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var + self.epsilon).sqrt();
        let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let y = normalized
            .iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(xh, (g, b))| g * xh + b)
            .collect();
        Ok((y, LayerNormCache { normalized, inv_std }))
    }

    /// Exact gradient through the mean and the variance.
    pub fn backward_into(&self, cache: &LayerNormCache, upstream: &[f64], grad: &mut LayerNormParams) -> Vec<f64> {
        let n = self.dim() as f64;
        let mut d_norm = Vec::with_capacity(upstream.len());
        for (i, &u) in upstream.iter().enumerate() {
            grad.gain[i] += u * cache.normalized[i];
            grad.bias[i] += u;
            d_norm.push(u * self.gain[i]);
        }
        let sum_d: f64 = d_norm.iter().sum();
        let sum_d_xhat = dot(&d_norm, &cache.normalized);
        d_norm
            .iter()
            .zip(&cache.normalized)
            .map(|(d, xh)| cache.inv_std / n * (n * d - sum_d - xh * sum_d_xhat))
            .collect()
    }

    /// Returns `(y, grad_params, grad_x)`.
    pub fn forward_backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, LayerNormParams, Vec<f64>)> {
        let (y, cache) = self.forward(x)?;
        if upstream.len() != self.dim() {
            return Err(Error::shape("layer norm upstream length"));
        }
        let mut grad = self.zeros_like();
        let gx = self.backward_into(&cache, upstream, &mut grad);
        Ok((y, grad, gx))
    }

    pub fn zeros_like(&self) -> Self {
        LayerNormParams {
            gain: vec![0.0; self.dim()],
            bias: vec![0.0; self.dim()],
            epsilon: self.epsilon,
        }
    }
}

impl Parameters for LayerNormParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.gain, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.gain, &mut self.bias]
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Given `p = softmax(z)` and `dL/dp`, returns `dL/dz`.
pub fn softmax_backward(p: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner = dot(p, upstream);
    p.iter().zip(upstream).map(|(pi, ui)| pi * (ui - inner)).collect()
}

/// `-log p[label]` with the probability clamped at [`PROB_FLOOR`], and the
/// logit gradient `p - onehot(label)` that holds when `p` is a plain softmax.
pub fn cross_entropy_with_grad(p: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= p.len() {
        return Err(Error::LabelOutOfRange {
            label,
            num_labels: p.len(),
        });
    }
    let loss = -p[label].max(PROB_FLOOR).ln();
    let mut grad = p.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() || grads.iter().zip(&params).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::shape("optimizer: gradient layout differs from parameters"));
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self.first_moment.iter().zip(&params).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::shape("optimizer: state layout differs from parameters"));
        }

        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, (w, &g)) in p.iter_mut().zip(grads[i]).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub probed: usize,
    /// Coordinates rejected because perturbing them changed the active regime.
    pub skipped: usize,
}

/// Central-difference gradient checker over randomly chosen coordinates.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            probes: 50,
            seed: 0,
        }
    }
}

/// Relative error with a small absolute floor so that vanishing gradients do
/// not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

impl GradCheck {
    pub fn run<F>(&self, params: &[f64], analytic: &[f64], loss: F) -> GradCheckReport
    where
        F: FnMut(&[f64]) -> f64,
    {
        self.run_with_regime(params, analytic, loss, |_| ())
    }

    /// Like [`GradCheck::run`], but skips coordinates whose `±step`
    /// perturbation changes `regime` (a ReLU pattern, a dropout mask, ...),
    /// where the loss is not differentiable.
    pub fn run_with_regime<F, R, S>(&self, params: &[f64], analytic: &[f64], mut loss: F, mut regime: R) -> GradCheckReport
    where
        F: FnMut(&[f64]) -> f64,
        R: FnMut(&[f64]) -> S,
        S: PartialEq,
    {
        assert_eq!(params.len(), analytic.len(), "gradient length");
        let mut order: Vec<usize> = (0..params.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));

        let base_regime = regime(params);
        let mut probe = params.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            probed: 0,
            skipped: 0,
        };
        for idx in order {
            if report.probed == self.probes {
                break;
            }
            let original = probe[idx];
            probe[idx] = original + self.step;
            let plus_regime = regime(&probe);
            let plus = loss(&probe);
            probe[idx] = original - self.step;
            let minus_regime = regime(&probe);
            let minus = loss(&probe);
            probe[idx] = original;
            if plus_regime != base_regime || minus_regime != base_regime {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * self.step);
            let err = relative_error(analytic[idx], numeric);
            report.probed += 1;
            if err > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_index = Some(idx);
            }
        }
        report
    }
}

/// Convenience wrapper returning only the worst relative error.
pub fn grad_check<F>(loss: F, params: &[f64], analytic: &[f64], probes: usize, step: f64, seed: u64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    GradCheck { step, probes, seed }.run(params, analytic, loss).max_rel_error
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_forward_examples() {
        let mut id = LinearLayer::zeros(2, 2);
        id.weight = Tensor2::identity(2);
        assert_eq!(id.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        let layer = LinearLayer {
            weight: Tensor2::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
            bias: vec![0.5],
        };
        assert_eq!(layer.forward(&[1.0, 2.0]).unwrap(), vec![3.5]);

        let zero = LinearLayer {
            weight: Tensor2::zeros(1, 3),
            bias: vec![-0.25],
        };
        assert_eq!(zero.forward(&[4.0, 5.0, 6.0]).unwrap(), vec![-0.25]);
        assert!(matches!(zero.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_backward_scalar_and_zero() {
        let layer = LinearLayer {
            weight: Tensor2::from_vec(1, 1, vec![2.0]).unwrap(),
            bias: vec![0.0],
        };
        let (g, gx) = layer.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.weight.data(), &[3.0]);
        assert_eq!(g.bias, vec![1.0]);
        assert_eq!(gx, vec![2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = LinearLayer::init_uniform(4, 3, &mut rng);
        let (g, gx) = layer.backward(&[1.0, 2.0, 3.0, 4.0], &[0.0; 3]).unwrap();
        assert!(g.to_flat().iter().chain(&gx).all(|&v| v == 0.0));
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(i, o) in &[(1, 1), (3, 5), (8, 2), (32, 16)] {
            let layer = LinearLayer::init_uniform(i, o, &mut rng);
            let x = random_vec(&mut rng, i);
            let r = random_vec(&mut rng, o);
            // loss = r · (Wx + b), so upstream = r
            let (g, gx) = layer.backward(&x, &r).unwrap();
            let loss_params = |flat: &[f64]| {
                let mut l = layer.clone();
                l.set_flat(flat).unwrap();
                dot(&r, &l.forward(&x).unwrap())
            };
            let err = grad_check(loss_params, &layer.to_flat(), &g.to_flat(), 64, 1e-5, 3);
            assert!(err < 1e-6, "params {i}x{o}: {err}");
            let loss_x = |xs: &[f64]| dot(&r, &layer.forward(xs).unwrap());
            let err = grad_check(loss_x, &x, &gx, 64, 1e-5, 3);
            assert!(err < 1e-6, "input {i}x{o}: {err}");
        }
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        let (_, g) = relu_forward_backward(&[-1.0, 2.0], &[5.0, 5.0]);
        assert_eq!(g, vec![0.0, 5.0]);
    }

    #[test]
    fn relu_matches_finite_differences_away_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = random_vec(&mut rng, 20)
            .into_iter()
            .map(|v| if v.abs() < 1e-3 { 0.5 } else { v })
            .collect();
        let r = random_vec(&mut rng, 20);
        let g = relu_backward(&x, &r);
        let err = grad_check(|xs| dot(&r, &relu(xs)), &x, &g, 20, 1e-6, 0);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn layernorm_examples() {
        let ln = LayerNormParams::new(2);
        let (y, _) = ln.forward(&[1.0, 3.0]).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-5 && (y[1] - 1.0).abs() < 1e-5, "{y:?}");

        let mut ln = LayerNormParams::new(3);
        ln.bias = vec![0.1, -0.2, 0.3];
        let (y, _) = ln.forward(&[4.0, 4.0, 4.0]).unwrap();
        for (a, b) in y.iter().zip(&ln.bias) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2, 8, 32] {
            let mut ln = LayerNormParams::new(dim);
            ln.gain = random_vec(&mut rng, dim);
            ln.bias = random_vec(&mut rng, dim);
            let x = random_vec(&mut rng, dim);
            let r = random_vec(&mut rng, dim);
            let (_, g, gx) = ln.forward_backward(&x, &r).unwrap();
            let err = grad_check(|xs| dot(&r, &ln.forward(xs).unwrap().0), &x, &gx, dim, 1e-5, 1);
            assert!(err < 1e-5, "dim {dim} input: {err}");
            let loss_p = |flat: &[f64]| {
                let mut l = ln.clone();
                l.set_flat(flat).unwrap();
                dot(&r, &l.forward(&x).unwrap().0)
            };
            let err = grad_check(loss_p, &ln.to_flat(), &g.to_flat(), 2 * dim, 1e-5, 1);
            assert!(err < 1e-5, "dim {dim} params: {err}");
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        // exp(-1000) / (1 + exp(-1000)) is ~5e-435, below the smallest f64.
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_vec(&mut rng, 6);
        let r = random_vec(&mut rng, 6);
        let g = softmax_backward(&softmax(&z), &r);
        let err = grad_check(|zs| dot(&r, &softmax(zs)), &z, &g, 6, 1e-5, 0);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = cross_entropy_with_grad(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
        let (l, _) = cross_entropy_with_grad(&[1.0 / 3.0; 3], 2).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);
        let (l, _) = cross_entropy_with_grad(&[0.5, 0.25, 0.25], 0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let (l, _) = cross_entropy_with_grad(&[1.0, 0.0], 1).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(matches!(
            cross_entropy_with_grad(&[0.5, 0.5], 2),
            Err(Error::LabelOutOfRange { label: 2, num_labels: 2 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let z = [0.3, -1.2, 0.8, 0.1];
        let (_, g) = cross_entropy_with_grad(&softmax(&z), 2).unwrap();
        let err = grad_check(|zs| -softmax(zs)[2].ln(), &z, &g, 4, 1e-5, 0);
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = LinearLayer::init_uniform(3, 2, &mut rng);
        let before = layer.clone();
        let mut opt = Adam::new(1e-3);
        opt.step(&mut layer, &LinearLayer::zeros(3, 2)).unwrap();
        assert_eq!(layer, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+eps).
        for g in [0.37, -2.5, 1e-3] {
            let mut p = LayerNormParams {
                gain: vec![1.0],
                bias: vec![0.0],
                epsilon: 1e-5,
            };
            let grads = LayerNormParams {
                gain: vec![g],
                bias: vec![0.0],
                epsilon: 1e-5,
            };
            let mut opt = Adam::new(1e-3);
            opt.step(&mut p, &grads).unwrap();
            let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((p.gain[0] - expected).abs() < 1e-15);
            assert!(((1.0 - p.gain[0]).abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_is_deterministic_and_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = LinearLayer::init_uniform(4, 3, &mut rng);
        let grads = LinearLayer::init_uniform(4, 3, &mut rng);
        let mut a = base.clone();
        let mut b = base.clone();
        let mut oa = Adam::new(1e-2);
        let mut ob = Adam::new(1e-2);
        for _ in 0..3 {
            oa.step(&mut a, &grads).unwrap();
            ob.step(&mut b, &grads).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert!(oa.step(&mut a, &LinearLayer::zeros(3, 3)).is_err());
    }

    #[test]
    fn grad_check_quadratic_and_fault_detection() {
        let err = grad_check(|p| p[0] * p[0], &[3.0], &[6.0], 1, 1e-5, 0);
        assert!(err < 1e-9, "{err}");
        let err = grad_check(|p| p[0] * p[0], &[3.0], &[12.0], 1, 1e-5, 0);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_skips_regime_changes() {
        let report = GradCheck {
            step: 1e-3,
            probes: 2,
            seed: 0,
        }
        .run_with_regime(
            &[1e-4, 2.0],
            &[1.0, 1.0],
            |p| relu(p).iter().sum(),
            |p| p.iter().map(|&v| v > 0.0).collect::<Vec<_>>(),
        );
        assert_eq!(report.skipped, 1);
        assert_eq!(report.probed, 1);
        assert!(report.max_rel_error < 1e-9);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_normalized_and_shift_invariant(
                z in prop::collection::vec(-30.0f64..30.0, 1..12),
                c in -50.0f64..50.0,
            ) {
                let p = softmax(&z);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|&v| v > 0.0));
                let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
                for (a, b) in p.iter().zip(softmax(&shifted)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
