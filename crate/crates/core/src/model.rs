//! Mixture-of-softmax classifier.
//!
//! An MLP encoder maps `x` to `h`. Each of the `K` experts and the router
//! applies its own `LayerNorm ∘ ReLU ∘ Linear` transform to `h`; experts then
//! emit a softmax over labels (with bias) and the router a softmax over
//! experts (no bias). The prediction is `p(y|x) = Σ_k π_k(x) p^k(y|x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{self, Decision, DecisionRule};
use crate::error::{Error, Result};
use crate::nn::{self, LayerNormCache, LayerNormParams, LinearLayer, Parameters, Tensor2, PROB_FLOOR};
use crate::penalty::{self, PenaltyComputation};

pub const MAX_EXPERTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MosConfig {
    pub num_experts: usize,
    pub num_labels: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Dimension of the encoder output `h`.
    pub repr_dim: usize,
}

impl MosConfig {
    /// A single expert is accepted so the plain-softmax baseline shares the
    /// same code path.
    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 || self.num_experts > MAX_EXPERTS {
            return Err(Error::config(format!(
                "expert count must be in 1..={MAX_EXPERTS}, got {}",
                self.num_experts
            )));
        }
        if self.num_labels < 2 {
            return Err(Error::config("need at least two labels"));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.repr_dim == 0 {
            return Err(Error::config("all layer dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub input: LinearLayer,
    pub output: LinearLayer,
}

/// `LayerNorm ∘ ReLU ∘ Linear`, mapping `h` back to the same dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTransform {
    pub linear: LinearLayer,
    pub norm: LayerNormParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertHead {
    pub transform: HeadTransform,
    /// `|Y| × d` weights with a per-label bias.
    pub classifier: LinearLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouterHead {
    pub transform: HeadTransform,
    /// `K × d`, no bias.
    pub weights: Tensor2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: MosConfig,
    pub encoder: Encoder,
    pub experts: Vec<ExpertHead>,
    pub router: RouterHead,
}

#[derive(Clone, Debug)]
struct TransformCache {
    pre: Vec<f64>,
    norm: LayerNormCache,
    out: Vec<f64>,
}

#[derive(Clone, Debug)]
struct ForwardCache {
    x: Vec<f64>,
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    h: Vec<f64>,
    experts: Vec<TransformCache>,
    router: TransformCache,
}

/// Per-instance output of the mixture.
#[derive(Clone, Debug)]
pub struct MixtureOutput {
    /// `K × |Y|`, row `k` is `p^k(·|x)`.
    pub expert_dists: Tensor2,
    pub router_dist: Vec<f64>,
    pub aggregate: Vec<f64>,
    cache: Option<ForwardCache>,
}

impl MixtureOutput {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// ReLU activity of every hidden unit, used to recognise kinks.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let Some(c) = &self.cache else { return Vec::new() };
        let mut out: Vec<bool> = c.pre_hidden.iter().map(|&v| v > 0.0).collect();
        for t in c.experts.iter().chain(std::iter::once(&c.router)) {
            out.extend(t.pre.iter().map(|&v| v > 0.0));
        }
        out
    }
}

/// `Σ_k π_k P_k`
pub fn mix(expert_dists: &Tensor2, router_dist: &[f64]) -> Vec<f64> {
    let mut agg = vec![0.0; expert_dists.cols()];
    for (k, &w) in router_dist.iter().enumerate() {
        for (a, &p) in agg.iter_mut().zip(expert_dists.row(k)) {
            *a += w * p;
        }
    }
    agg
}

impl HeadTransform {
    fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        HeadTransform {
            linear: LinearLayer::init_uniform(dim, dim, rng),
            norm: LayerNormParams::new(dim),
        }
    }

    fn forward(&self, h: &[f64]) -> Result<TransformCache> {
        let pre = self.linear.forward(h)?;
        let (out, norm) = self.norm.forward(&nn::relu(&pre))?;
        Ok(TransformCache { pre, norm, out })
    }

    fn backward_into(&self, h: &[f64], cache: &TransformCache, d_out: &[f64], grad: &mut HeadTransform) -> Result<Vec<f64>> {
        let d_act = self.norm.backward_into(&cache.norm, d_out, &mut grad.norm);
        let d_pre = nn::relu_backward(&cache.pre, &d_act);
        self.linear.backward_into(h, &d_pre, &mut grad.linear)
    }
}

impl Parameters for HeadTransform {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.linear.tensors();
        t.extend(self.norm.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.linear.tensors_mut();
        t.extend(self.norm.tensors_mut());
        t
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.input.tensors();
        t.extend(self.encoder.output.tensors());
        for e in &self.experts {
            t.extend(e.transform.tensors());
            t.extend(e.classifier.tensors());
        }
        t.extend(self.router.transform.tensors());
        t.push(self.router.weights.data());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.input.tensors_mut();
        t.extend(self.encoder.output.tensors_mut());
        for e in &mut self.experts {
            t.extend(e.transform.tensors_mut());
            t.extend(e.classifier.tensors_mut());
        }
        t.extend(self.router.transform.tensors_mut());
        t.push(self.router.weights.data_mut());
        t
    }
}

/// Weights on the two loss terms: `classification · L_C + penalty · L_R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub classification: f64,
    pub penalty: f64,
}

impl LossWeights {
    pub fn joint(lambda: f64) -> Self {
        LossWeights {
            classification: 1.0,
            penalty: lambda,
        }
    }
}

/// Loss values of one mini-batch.
#[derive(Clone, Debug)]
pub struct JointLoss {
    pub classification: f64,
    pub penalty: Option<PenaltyComputation>,
    pub total: f64,
}

impl JointLoss {
    pub fn penalty_value(&self) -> Option<f64> {
        self.penalty.as_ref().map(|p| p.value)
    }
}

/// One labelled input as the model sees it.
pub type Example<'a> = (&'a [f64], usize);

impl ModelParams {
    /// All-zero parameters with the right shapes (LayerNorm gains included).
    pub fn zeros(config: MosConfig) -> Result<Self> {
        config.validate()?;
        let d = config.repr_dim;
        let transform = || HeadTransform {
            linear: LinearLayer::zeros(d, d),
            norm: LayerNormParams {
                gain: vec![0.0; d],
                bias: vec![0.0; d],
                epsilon: LayerNormParams::DEFAULT_EPSILON,
            },
        };
        Ok(ModelParams {
            config,
            encoder: Encoder {
                input: LinearLayer::zeros(config.input_dim, config.hidden_dim),
                output: LinearLayer::zeros(config.hidden_dim, d),
            },
            experts: (0..config.num_experts)
                .map(|_| ExpertHead {
                    transform: transform(),
                    classifier: LinearLayer::zeros(d, config.num_labels),
                })
                .collect(),
            router: RouterHead {
                transform: transform(),
                weights: Tensor2::zeros(config.num_experts, d),
            },
        })
    }

    /// Fan-in uniform initialisation; every head draws its own parameters.
    pub fn init(config: MosConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.repr_dim;
        let encoder = Encoder {
            input: LinearLayer::init_uniform(config.input_dim, config.hidden_dim, &mut rng),
            output: LinearLayer::init_uniform(config.hidden_dim, d, &mut rng),
        };
        let experts = (0..config.num_experts)
            .map(|_| ExpertHead {
                transform: HeadTransform::init(d, &mut rng),
                classifier: LinearLayer::init_uniform(d, config.num_labels, &mut rng),
            })
            .collect();
        let transform = HeadTransform::init(d, &mut rng);
        let weights = LinearLayer::init_uniform(d, config.num_experts, &mut rng).weight;
        Ok(ModelParams {
            config,
            encoder,
            experts,
            router: RouterHead { transform, weights },
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pre = self.encoder.input.forward(x)?;
        self.encoder.output.forward(&nn::relu(&pre))
    }

    fn run(&self, x: &[f64], keep_cache: bool) -> Result<MixtureOutput> {
        if x.len() != self.config.input_dim {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        let pre_hidden = self.encoder.input.forward(x)?;
        let hidden = nn::relu(&pre_hidden);
        let h = self.encoder.output.forward(&hidden)?;

        let mut expert_dists = Tensor2::zeros(self.config.num_experts, self.config.num_labels);
        let mut expert_caches = Vec::with_capacity(self.config.num_experts);
        for (k, head) in self.experts.iter().enumerate() {
            let tc = head.transform.forward(&h)?;
            let logits = head.classifier.forward(&tc.out)?;
            expert_dists.row_mut(k).copy_from_slice(&nn::softmax(&logits));
            expert_caches.push(tc);
        }
        let router_cache = self.router.transform.forward(&h)?;
        let router_dist = nn::softmax(&self.router.weights.matvec(&router_cache.out)?);
        let aggregate = mix(&expert_dists, &router_dist);

        let cache = keep_cache.then(|| ForwardCache {
            x: x.to_vec(),
            pre_hidden,
            hidden,
            h,
            experts: expert_caches,
            router: router_cache,
        });
        Ok(MixtureOutput {
            expert_dists,
            router_dist,
            aggregate,
            cache,
        })
    }

    /// Forward pass keeping the intermediates needed by the backward pass.
    pub fn forward(&self, x: &[f64]) -> Result<MixtureOutput> {
        self.run(x, true)
    }

    /// Forward pass without backprop caches.
    pub fn infer(&self, x: &[f64]) -> Result<MixtureOutput> {
        self.run(x, false)
    }

    /// Backpropagates logit-space gradients of one instance into `grads`.
    pub fn backward_instance(
        &self,
        out: &MixtureOutput,
        d_expert_logits: &Tensor2,
        d_router_logits: &[f64],
        grads: &mut ModelParams,
    ) -> Result<()> {
        let cache = out
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("backward called on an output produced without caches".into()))?;
        let k_count = self.config.num_experts;
        if d_expert_logits.rows() != k_count
            || d_expert_logits.cols() != self.config.num_labels
            || d_router_logits.len() != k_count
        {
            return Err(Error::shape("upstream gradient does not match the model"));
        }

        let mut d_h = vec![0.0; self.config.repr_dim];
        for (k, head) in self.experts.iter().enumerate() {
            let upstream = d_expert_logits.row(k);
            if upstream.iter().all(|&v| v == 0.0) {
                continue;
            }
            let tc = &cache.experts[k];
            let g = &mut grads.experts[k];
            let d_feat = head.classifier.backward_into(&tc.out, upstream, &mut g.classifier)?;
            let d = head.transform.backward_into(&cache.h, tc, &d_feat, &mut g.transform)?;
            add_assign(&mut d_h, &d);
        }

        if d_router_logits.iter().any(|&v| v != 0.0) {
            let rc = &cache.router;
            grads.router.weights.add_outer(d_router_logits, &rc.out, 1.0);
            let d_feat = self.router.weights.transpose_matvec(d_router_logits)?;
            let d = self
                .router
                .transform
                .backward_into(&cache.h, rc, &d_feat, &mut grads.router.transform)?;
            add_assign(&mut d_h, &d);
        }

        let d_hidden = self
            .encoder
            .output
            .backward_into(&cache.hidden, &d_h, &mut grads.encoder.output)?;
        let d_pre = nn::relu_backward(&cache.pre_hidden, &d_hidden);
        self.encoder.input.backward_into(&cache.x, &d_pre, &mut grads.encoder.input)?;
        Ok(())
    }

    /// `weights.classification · L_C + weights.penalty · L_R` over a batch,
    /// with the exact gradient for every parameter. The router receives
    /// gradient both through the mixture probability and through the penalty.
    pub fn joint_loss(&self, batch: &[Example<'_>], weights: LossWeights, ell: usize) -> Result<(JointLoss, ModelParams)> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let m = batch.len() as f64;
        let outputs = batch
            .iter()
            .map(|(x, y)| {
                if *y >= self.config.num_labels {
                    return Err(Error::LabelOutOfRange {
                        label: *y,
                        num_labels: self.config.num_labels,
                    });
                }
                self.forward(x)
            })
            .collect::<Result<Vec<_>>>()?;

        let routers: Vec<&[f64]> = outputs.iter().map(|o| o.router_dist.as_slice()).collect();
        let pen = penalty::penalty(&routers, ell)?;
        let pen_grad = match (&pen, weights.penalty != 0.0) {
            (Some(pc), true) => Some(penalty::penalty_gradient(pc)),
            _ => None,
        };

        let mut grads = self.zeros_like();
        let mut classification = 0.0;
        let coef = weights.classification / m;
        for (i, (out, &(_, y))) in outputs.iter().zip(batch).enumerate() {
            let p_y = out.aggregate[y];
            classification -= p_y.max(PROB_FLOOR).ln();

            let mut d_expert = Tensor2::zeros(self.config.num_experts, self.config.num_labels);
            let mut d_router = vec![0.0; self.config.num_experts];
            if coef != 0.0 && p_y > PROB_FLOOR {
                for k in 0..self.config.num_experts {
                    let pk = out.expert_dists.row(k);
                    // posterior responsibility of expert k for the true label
                    let resp = out.router_dist[k] * pk[y] / p_y;
                    for (j, d) in d_expert.row_mut(k).iter_mut().enumerate() {
                        let target = if j == y { 1.0 } else { 0.0 };
                        *d = coef * resp * (pk[j] - target);
                    }
                    d_router[k] = -coef * pk[y] / p_y;
                }
            }
            if let Some(pg) = &pen_grad {
                for (d, g) in d_router.iter_mut().zip(pg.row(i)) {
                    *d += weights.penalty * g;
                }
            }
            let d_router_logits = nn::softmax_backward(&out.router_dist, &d_router);
            self.backward_instance(out, &d_expert, &d_router_logits, &mut grads)?;
        }
        classification /= m;

        let total = weights.classification * classification + weights.penalty * pen.as_ref().map_or(0.0, |p| p.value);
        Ok((
            JointLoss {
                classification,
                penalty: pen,
                total,
            },
            grads,
        ))
    }

    /// Everything that makes the joint loss piecewise: ReLU activity, the
    /// penalty dropout mask and the probability clamp. The loss is smooth
    /// wherever this stays constant.
    pub fn loss_regime(&self, batch: &[Example<'_>], ell: usize) -> Result<Vec<bool>> {
        let mut regime = Vec::new();
        let mut routers = Vec::with_capacity(batch.len());
        for (x, y) in batch {
            let out = self.forward(x)?;
            regime.extend(out.activation_pattern());
            regime.push(out.aggregate[*y] > PROB_FLOOR);
            routers.push(out.router_dist);
        }
        if let Some(pc) = penalty::penalty(&routers, ell)? {
            regime.extend(pc.keep);
            regime.push(pc.value > penalty::GRAD_EPSILON);
        }
        Ok(regime)
    }

    pub fn predict(&self, x: &[f64], rule: DecisionRule) -> Result<Decision> {
        let out = self.infer(x)?;
        control::aggregate(&out.expert_dists, &out.router_dist, rule)
    }
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::GradCheck;
    use rand::Rng;

    fn config(k: usize, labels: usize, input: usize, d: usize) -> MosConfig {
        MosConfig {
            num_experts: k,
            num_labels: labels,
            input_dim: input,
            hidden_dim: 2 * d,
            repr_dim: d,
        }
    }

    fn identity_encoder() -> ModelParams {
        let mut p = ModelParams::zeros(config(2, 2, 1, 1)).unwrap();
        p.encoder.input.weight.set(0, 0, 1.0);
        p.encoder.output.weight.set(0, 0, 1.0);
        p
    }

    #[test]
    fn encode_examples() {
        let zero = ModelParams::zeros(config(2, 3, 4, 3)).unwrap();
        assert_eq!(zero.encode(&[1.0, -2.0, 3.0, 4.0]).unwrap(), vec![0.0; 3]);
        let p = identity_encoder();
        assert_eq!(p.encode(&[2.0]).unwrap(), vec![2.0]);
        assert_eq!(p.encode(&[-5.0]).unwrap(), vec![0.0]);
        assert!(matches!(p.encode(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        assert!(config(0, 3, 2, 2).validate().is_err());
        assert!(config(33, 3, 2, 2).validate().is_err());
        assert!(config(2, 1, 2, 2).validate().is_err());
        assert!(config(1, 2, 2, 2).validate().is_ok());
    }

    #[test]
    fn mix_examples() {
        let p = Tensor2::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(mix(&p, &[0.3, 0.7]), vec![0.3, 0.7]);
        let same = Tensor2::from_rows(&[[0.2, 0.5, 0.3], [0.2, 0.5, 0.3]]).unwrap();
        let agg = mix(&same, &[0.9, 0.1]);
        for (a, b) in agg.iter().zip([0.2, 0.5, 0.3]) {
            assert!((a - b).abs() < 1e-15);
        }
        let p = Tensor2::from_rows(&[[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]]).unwrap();
        let agg = mix(&p, &[0.5, 0.5]);
        for (a, b) in agg.iter().zip([0.4, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_outputs_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in [1, 2, 5] {
            let p = ModelParams::init(config(k, 3, 6, 8), k as u64).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
                let out = p.forward(&x).unwrap();
                for r in 0..k {
                    assert!((out.expert_dists.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                assert!((out.router_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let agg = mix(&out.expert_dists, &out.router_dist);
                for (a, b) in agg.iter().zip(&out.aggregate) {
                    assert!((a - b).abs() < 1e-12);
                }
                if k == 1 {
                    assert_eq!(out.aggregate, out.expert_dists.row(0));
                }
            }
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, m: usize, input: usize, labels: usize) -> Vec<(Vec<f64>, usize)> {
        (0..m)
            .map(|_| {
                (
                    (0..input).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    rng.random_range(0..labels),
                )
            })
            .collect()
    }

    fn check_joint_gradient(cfg: MosConfig, m: usize, weights: LossWeights, ell: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(cfg, seed).unwrap();
        let data = random_batch(&mut rng, m, cfg.input_dim, cfg.num_labels);
        let batch: Vec<Example<'_>> = data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let (_, grads) = params.joint_loss(&batch, weights, ell).unwrap();
        let with = |flat: &[f64]| {
            let mut p = params.clone();
            p.set_flat(flat).unwrap();
            p
        };
        let report = GradCheck {
            step: 1e-5,
            probes: 60,
            seed,
        }
        .run_with_regime(
            &params.to_flat(),
            &grads.to_flat(),
            |f| with(f).joint_loss(&batch, weights, ell).unwrap().0.total,
            |f| with(f).loss_regime(&batch, ell).unwrap(),
        );
        assert!(report.probed >= 50, "{report:?}");
        report.max_rel_error
    }

    #[test]
    fn classification_gradient_single_instance() {
        let err = check_joint_gradient(config(3, 3, 5, 6), 1, LossWeights::joint(0.0), 0, 1);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn penalty_only_gradient() {
        let weights = LossWeights {
            classification: 0.0,
            penalty: 1.0,
        };
        let err = check_joint_gradient(config(3, 3, 5, 6), 6, weights, 1, 2);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn joint_gradient_on_larger_configs() {
        for (i, lambda) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            let err = check_joint_gradient(config(5, 3, 7, 16), 8, LossWeights::joint(lambda), 2, 10 + i as u64);
            assert!(err < 1e-4, "lambda {lambda}: {err}");
        }
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(config(3, 3, 4, 5), 4).unwrap();
        let data = random_batch(&mut rng, 4, 4, 3);
        let batch: Vec<Example<'_>> = data.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
        let weights = LossWeights {
            classification: 0.0,
            penalty: 0.0,
        };
        let (_, grads) = params.joint_loss(&batch, weights, 1).unwrap();
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_requires_cache() {
        let params = ModelParams::init(config(2, 2, 3, 4), 0).unwrap();
        let out = params.infer(&[0.1, 0.2, 0.3]).unwrap();
        let mut grads = params.zeros_like();
        let err = params
            .backward_instance(&out, &Tensor2::zeros(2, 2), &[0.0, 0.0], &mut grads)
            .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn predict_is_deterministic() {
        let params = ModelParams::init(config(4, 3, 5, 6), 8).unwrap();
        let x = [0.3, -0.1, 1.2, 0.0, -2.0];
        for rule in [DecisionRule::Estimated, DecisionRule::Uniform, DecisionRule::Argmin] {
            assert_eq!(params.predict(&x, rule).unwrap(), params.predict(&x, rule).unwrap());
        }
    }

    #[test]
    fn flat_round_trip() {
        let params = ModelParams::init(config(3, 3, 4, 5), 3).unwrap();
        let mut other = ModelParams::zeros(params.config).unwrap();
        other.set_flat(&params.to_flat()).unwrap();
        assert_eq!(other, params);
    }
}
