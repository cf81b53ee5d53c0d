//! Adam pretraining of the encoder on base classes.

use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::connectivity::ViewProvider;
use crate::contrast::{
    contrastive_loss_on, cross_entropy_on, temperature, BalancedSampler, BatchPlan, LinearHead,
    LossKind, Positives, UniformSampler,
};
use crate::encoder::{embed_batch, Checkpoint, EncoderParams, EncoderVars, RngState};
use crate::error::{Error, Result};
use crate::graph::{ClassSplit, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Overrides the epoch-derived step budget when set.
    pub max_steps: Option<usize>,
    /// Temperature scale; the loss uses `beta / sqrt(average degree)`.
    pub beta: f64,
    pub alpha: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub balanced_sampling: bool,
    /// Epochs without relative improvement above `plateau_tol` before stopping.
    pub patience: usize,
    pub plateau_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch: 500,
            epochs: 100,
            max_steps: None,
            beta: 1.0,
            alpha: 19,
            embed_dim: 64,
            seed: 0,
            loss: LossKind::Gsupcon,
            balanced_sampling: true,
            patience: 10,
            plateau_tol: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::invalid("adam eps must be positive and weight decay non-negative"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        if self.alpha == 0 {
            return Err(Error::invalid("alpha must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * theta`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> Self {
        Self {
            first: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with L2 weight decay folded into the gradient.
///
/// Nothing is modified if any gradient entry is non-finite.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                detail: format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: "adam_step",
                node: i,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, (theta, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let grad = gk + cfg.weight_decay * *theta;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
enum Sampler {
    Balanced(BalancedSampler),
    Uniform(UniformSampler),
}

impl Sampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> BatchPlan {
        match self {
            Sampler::Balanced(s) => s.sample(rng),
            Sampler::Uniform(s) => s.sample(rng),
        }
    }

    fn effective_batch(&self) -> usize {
        match self {
            Sampler::Balanced(s) => s.effective_batch(),
            Sampler::Uniform(s) => s.effective_batch(),
        }
    }
}

/// Stateful pretraining loop. Parameter initialization and batch sampling
/// draw from separate RNG streams of the configured seed.
pub struct Trainer<'a> {
    graph: &'a Graph,
    split: &'a ClassSplit,
    provider: &'a dyn ViewProvider,
    config: TrainConfig,
    params: EncoderParams,
    head: Option<LinearHead>,
    adam: AdamState,
    sample_rng: ChaCha8Rng,
    sampler: Sampler,
    tau: f64,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        graph: &'a Graph,
        split: &'a ClassSplit,
        provider: &'a dyn ViewProvider,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        split.validate(graph)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_rng.set_stream(0);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample_rng.set_stream(1);

        let params = EncoderParams::init(graph.feature_dim(), config.embed_dim, &mut init_rng)?;
        let head = match config.loss {
            LossKind::Ce => Some(LinearHead::init(
                config.embed_dim,
                split.base_classes.len(),
                &mut init_rng,
            )?),
            _ => None,
        };
        let sampler = if config.balanced_sampling {
            Sampler::Balanced(BalancedSampler::new(graph, split, config.batch)?)
        } else {
            Sampler::Uniform(UniformSampler::new(graph, split, config.batch)?)
        };
        let tau = temperature(config.beta, graph)?;
        let mut trainer = Self {
            graph,
            split,
            provider,
            config,
            params,
            head,
            adam: AdamState {
                first: vec![],
                second: vec![],
                step: 0,
            },
            sample_rng,
            sampler,
            tau,
            step: 0,
        };
        trainer.adam = AdamState::for_params(&trainer.param_tensors().iter().collect::<Vec<_>>());
        Ok(trainer)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        graph: &'a Graph,
        split: &'a ClassSplit,
        provider: &'a dyn ViewProvider,
        config: TrainConfig,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let mut t = Self::new(graph, split, provider, config)?;
        t.params = ckpt.params()?;
        if let (Some(w), Some(b)) = (&ckpt.head_weight, &ckpt.head_bias) {
            let classes = t.split.base_classes.len();
            t.head = Some(LinearHead {
                weight: Tensor::new(t.params.embed_dim(), classes, w.clone())?,
                bias: Tensor::new(1, classes, b.clone())?,
            });
        }
        let shapes: Vec<(usize, usize)> = t.param_tensors().iter().map(Tensor::shape).collect();
        if ckpt.first_moments.len() == shapes.len() {
            let rebuild = |moments: &[Vec<f64>]| -> Result<Vec<Tensor>> {
                moments
                    .iter()
                    .zip(&shapes)
                    .map(|(m, &(r, c))| Tensor::new(r, c, m.clone()))
                    .collect()
            };
            t.adam = AdamState {
                first: rebuild(&ckpt.first_moments)?,
                second: rebuild(&ckpt.second_moments)?,
                step: ckpt.step,
            };
        }
        if let Some(rng) = &ckpt.rng {
            t.sample_rng = rng.restore();
        }
        t.step = ckpt.step as usize;
        Ok(t)
    }

    fn param_tensors(&self) -> Vec<Tensor> {
        let mut out = vec![self.params.weight.clone(), Tensor::scalar(self.params.prelu_slope)];
        if let Some(h) = &self.head {
            out.push(h.weight.clone());
            out.push(h.bias.clone());
        }
        out
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn effective_batch(&self) -> usize {
        self.sampler.effective_batch()
    }

    /// Steps in one pass over the base-class nodes.
    pub fn steps_per_epoch(&self) -> usize {
        let base_nodes = self
            .graph
            .labels()
            .iter()
            .filter(|&&l| self.split.is_base(l))
            .count();
        base_nodes.div_ceil(self.effective_batch()).max(1)
    }

    /// Loss of the current parameters on one batch, without updating.
    pub fn batch_loss(&self, plan: &BatchPlan) -> Result<f64> {
        let (tape, loss, _) = self.forward(plan)?;
        Ok(tape.value(loss).item())
    }

    fn forward(&self, plan: &BatchPlan) -> Result<(Tape, crate::autodiff::Var, Vec<crate::autodiff::Var>)> {
        let alpha = self.config.alpha;
        let views = plan
            .centric
            .par_iter()
            .map(|&j| self.provider.view(self.graph, j, alpha))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<u32> = plan.centric.iter().map(|&j| self.graph.label(j)).collect();

        let mut tape = Tape::new();
        let vars = EncoderVars::register(&mut tape, &self.params);
        let mut param_vars = vec![vars.weight, vars.slope];
        let emb = embed_batch(&mut tape, vars, &views)?;
        let loss = match self.config.loss {
            LossKind::Gsupcon | LossKind::Simclr => {
                let h = tape.concat_rows(&[emb.subgraphs, emb.nodes])?;
                let mut duo = labels.clone();
                duo.extend_from_slice(&labels);
                let positives = if self.config.loss == LossKind::Gsupcon {
                    Positives::SameLabel
                } else {
                    Positives::PartnerOnly
                };
                contrastive_loss_on(&mut tape, h, &duo, self.tau, positives)?
            }
            LossKind::Ce => {
                let head = self.head.as_ref().expect("ce trainer has a head");
                let w = tape.param(head.weight.clone());
                let b = tape.param(head.bias.clone());
                param_vars.push(w);
                param_vars.push(b);
                let targets = labels
                    .iter()
                    .map(|&l| self.split.base_index(l).ok_or_else(|| Error::invalid(format!("label {l} is not a base class"))))
                    .collect::<Result<Vec<_>>>()?;
                cross_entropy_on(&mut tape, emb.nodes, w, b, &targets)?
            }
        };
        Ok((tape, loss, param_vars))
    }

    /// Samples a batch, takes one optimizer step, and returns its record.
    pub fn step(&mut self) -> Result<StepRecord> {
        let started = Instant::now();
        let plan = self.sampler.sample(&mut self.sample_rng);
        let (tape, loss, param_vars) = self.forward(&plan)?;
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = param_vars.iter().map(|&v| grads.wrt(v)).collect();

        let mut tensors = self.param_tensors();
        {
            let mut refs: Vec<&mut Tensor> = tensors.iter_mut().collect();
            adam_step(&mut refs, &grads, &mut self.adam, &self.config.adam())?;
        }
        let mut it = tensors.into_iter();
        self.params.weight = it.next().unwrap();
        self.params.prelu_slope = it.next().unwrap().item();
        if let Some(head) = &mut self.head {
            head.weight = it.next().unwrap();
            head.bias = it.next().unwrap();
        }

        let record = StepRecord {
            step: self.step,
            loss: tape.value(loss).item(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.step += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.step = self.step as u64;
        ck.rng = Some(RngState::capture(&self.sample_rng));
        ck.first_moments = self.adam.first.iter().map(|t| t.data().to_vec()).collect();
        ck.second_moments = self.adam.second.iter().map(|t| t.data().to_vec()).collect();
        if let Some(h) = &self.head {
            ck.head_weight = Some(h.weight.data().to_vec());
            ck.head_bias = Some(h.bias.data().to_vec());
        }
        ck
    }

    /// Runs the configured budget with plateau-based early stopping.
    pub fn run(&mut self) -> Result<PretrainOutcome> {
        let per_epoch = self.steps_per_epoch();
        let budget = self
            .config
            .max_steps
            .unwrap_or(self.config.epochs * per_epoch);
        let mut trace = Vec::with_capacity(budget);
        let mut best = f64::INFINITY;
        let mut stale = 0;
        let mut epoch_sum = 0.0;
        let mut epoch_len = 0;
        let mut stopped_early = false;
        while self.step < budget {
            let rec = self.step()?;
            epoch_sum += rec.loss;
            epoch_len += 1;
            trace.push(rec);
            if epoch_len == per_epoch {
                let mean = epoch_sum / epoch_len as f64;
                epoch_sum = 0.0;
                epoch_len = 0;
                if mean < best - self.config.plateau_tol * best.abs() {
                    best = mean;
                    stale = 0;
                } else {
                    stale += 1;
                    if self.config.max_steps.is_none() && stale >= self.config.patience {
                        info!("loss plateaued after {} steps", self.step);
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
            let window = per_epoch.min(trace.len());
            let head: f64 = trace[..window].iter().map(|r| r.loss).sum::<f64>() / window as f64;
            let tail: f64 = trace[trace.len() - window..].iter().map(|r| r.loss).sum::<f64>() / window as f64;
            if trace.len() >= 2 * window && tail >= head {
                warn!(
                    "training loss did not decrease (first {:.4}, last {:.4})",
                    first.loss, last.loss
                );
            }
        }
        Ok(PretrainOutcome {
            params: self.params.clone(),
            trace,
            stopped_early,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    pub trace: Vec<StepRecord>,
    pub stopped_early: bool,
}

/// Pretrains a fresh encoder. The encoder is returned frozen; any
/// cross-entropy head is discarded.
pub fn pretrain(
    g: &Graph,
    split: &ClassSplit,
    provider: &dyn ViewProvider,
    config: &TrainConfig,
) -> Result<PretrainOutcome> {
    Trainer::new(g, split, provider, config.clone())?.run()
}

/// Loss trace as CSV with header `step,loss,wall_ms`.
pub fn trace_csv(trace: &[StepRecord]) -> String {
    let mut out = String::from("step,loss,wall_ms\n");
    for r in trace {
        out.push_str(&format!("{},{},{:.3}\n", r.step, r.loss, r.wall_ms));
    }
    out
}
