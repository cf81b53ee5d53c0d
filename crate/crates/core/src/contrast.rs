//! Batch sampling and the pretraining losses.
//!
//! A duo-view batch stacks the `B` subgraph readouts on top of the `B`
//! centric-node embeddings, giving `2B` rows where row `b` and row `b + B`
//! come from the same centric node.

use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{average_degree, ClassSplit, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Gsupcon,
    Simclr,
    Ce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Gsupcon => "gsupcon",
            LossKind::Simclr => "simclr",
            LossKind::Ce => "ce",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsupcon" => Ok(LossKind::Gsupcon),
            "simclr" => Ok(LossKind::Simclr),
            "ce" => Ok(LossKind::Ce),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

/// Centric nodes for one training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub centric: Vec<usize>,
    /// Nodes drawn per base class; 0 when sampling was not class-balanced.
    pub per_class: usize,
}

/// Draws class-balanced batches from the base classes.
///
/// `B / |C_base|` is rounded down, so the effective batch may be smaller than
/// requested. Within a batch a class is sampled without replacement unless it
/// has fewer nodes than its quota.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    pools: Vec<Vec<usize>>,
    per_class: usize,
}

impl BalancedSampler {
    pub fn new(g: &Graph, split: &ClassSplit, batch: usize) -> Result<Self> {
        if split.base_classes.is_empty() {
            return Err(Error::invalid("no base classes"));
        }
        let by_class = g.nodes_by_class();
        let mut pools = Vec::with_capacity(split.base_classes.len());
        for &c in &split.base_classes {
            let pool = by_class
                .get(c as usize)
                .cloned()
                .unwrap_or_default();
            if pool.is_empty() {
                return Err(Error::invalid(format!("base class {c} has no nodes")));
            }
            pools.push(pool);
        }
        let per_class = batch / pools.len();
        if per_class == 0 {
            return Err(Error::invalid(format!(
                "batch {batch} is smaller than the {} base classes",
                pools.len()
            )));
        }
        for (pool, c) in pools.iter().zip(&split.base_classes) {
            if pool.len() < per_class {
                warn!(
                    "base class {c} has {} nodes for a quota of {per_class}; sampling with replacement",
                    pool.len()
                );
            }
        }
        Ok(Self { pools, per_class })
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn effective_batch(&self) -> usize {
        self.per_class * self.pools.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> BatchPlan {
        let mut centric = Vec::with_capacity(self.effective_batch());
        for pool in &self.pools {
            if pool.len() >= self.per_class {
                centric.extend(pool.choose_multiple(rng, self.per_class).copied());
            } else {
                centric.extend((0..self.per_class).map(|_| pool[rng.gen_range(0..pool.len())]));
            }
        }
        BatchPlan {
            centric,
            per_class: self.per_class,
        }
    }
}

pub fn balanced_sample(g: &Graph, split: &ClassSplit, batch: usize, seed: u64) -> Result<BatchPlan> {
    let sampler = BalancedSampler::new(g, split, batch)?;
    Ok(sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Draws batches uniformly from all base-class nodes, ignoring class.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    pool: Vec<usize>,
    batch: usize,
}

impl UniformSampler {
    pub fn new(g: &Graph, split: &ClassSplit, batch: usize) -> Result<Self> {
        let pool: Vec<usize> = (0..g.num_nodes())
            .filter(|&i| split.is_base(g.label(i)))
            .collect();
        if pool.is_empty() {
            return Err(Error::invalid("no base-class nodes"));
        }
        if batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        Ok(Self {
            batch: batch.min(pool.len()),
            pool,
        })
    }

    pub fn effective_batch(&self) -> usize {
        self.batch
    }

    pub fn sample(&self, rng: &mut impl Rng) -> BatchPlan {
        BatchPlan {
            centric: self.pool.choose_multiple(rng, self.batch).copied().collect(),
            per_class: 0,
        }
    }
}

/// `beta / sqrt(average degree)`.
pub fn temperature(beta: f64, g: &Graph) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let deg = average_degree(g);
    if deg <= 0.0 {
        return Err(Error::invalid("graph has zero average degree"));
    }
    Ok(beta / deg.sqrt())
}

/// `2B x F` representations with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DuoBatch {
    pub h: Tensor,
    pub labels: Vec<u32>,
    pub tau: f64,
}

impl DuoBatch {
    /// Stacks `[subgraphs; nodes]` and duplicates the labels.
    pub fn from_views(subgraphs: &Tensor, nodes: &Tensor, labels: &[u32], tau: f64) -> Result<Self> {
        if subgraphs.shape() != nodes.shape() || subgraphs.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "duo_batch",
                detail: format!(
                    "subgraphs {:?}, nodes {:?}, {} labels",
                    subgraphs.shape(),
                    nodes.shape(),
                    labels.len()
                ),
            });
        }
        let mut data = subgraphs.data().to_vec();
        data.extend_from_slice(nodes.data());
        let mut all = labels.to_vec();
        all.extend_from_slice(labels);
        Ok(Self {
            h: Tensor::new(2 * labels.len(), nodes.cols(), data)?,
            labels: all,
            tau,
        })
    }
}

/// Which rows count as positives for an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positives {
    /// Every other row sharing the anchor's label.
    SameLabel,
    /// Only the anchor's paired view.
    PartnerOnly,
}

/// Records the contrastive loss
/// `sum_b -1/|P(b)| sum_{p in P(b)} log( exp(h_b.h_p/tau) / sum_{a != b} exp(h_b.h_a/tau) )`
/// over all `2B` anchors. Anchors without positives contribute nothing.
pub fn contrastive_loss_on(
    tape: &mut Tape,
    h: Var,
    labels: &[u32],
    tau: f64,
    positives: Positives,
) -> Result<Var> {
    let n = tape.value(h).rows();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "contrastive_loss",
            detail: format!("{} labels for {n} rows", labels.len()),
        });
    }
    if n % 2 != 0 && positives == Positives::PartnerOnly {
        return Err(Error::invalid("paired positives need an even number of rows"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let half = n / 2;
    let mut coeffs = Tensor::zeros(n, n);
    let mut anchors = Tensor::zeros(n, 1);
    for b in 0..n {
        let pos: Vec<usize> = match positives {
            Positives::SameLabel => (0..n).filter(|&p| p != b && labels[p] == labels[b]).collect(),
            Positives::PartnerOnly => vec![(b + half) % n],
        };
        if pos.is_empty() {
            continue;
        }
        anchors.set(b, 0, 1.0);
        let w = 1.0 / pos.len() as f64;
        for p in pos {
            coeffs.set(b, p, w);
        }
    }
    let mut mask = vec![true; n * n];
    for b in 0..n {
        mask[b * n + b] = false;
    }

    let gram = tape.dot_products_matrix(h)?;
    let logits = tape.scale(gram, 1.0 / tau)?;
    let lse = tape.log_sum_exp_rows(logits, Arc::new(mask))?;
    let denom = tape.weighted_sum(lse, Arc::new(anchors))?;
    let numer = tape.weighted_sum(logits, Arc::new(coeffs))?;
    tape.sub(denom, numer)
}

fn eval_contrastive(batch: &DuoBatch, positives: Positives) -> Result<f64> {
    let mut tape = Tape::new();
    let h = tape.constant(batch.h.clone());
    let loss = contrastive_loss_on(&mut tape, h, &batch.labels, batch.tau, positives)?;
    Ok(tape.value(loss).item())
}

/// Supervised contrastive loss: every same-label row is a positive.
pub fn gsupcon_loss(batch: &DuoBatch) -> Result<f64> {
    eval_contrastive(batch, Positives::SameLabel)
}

/// Instance contrastive loss: only the paired view is a positive.
pub fn simclr_loss(batch: &DuoBatch) -> Result<f64> {
    eval_contrastive(batch, Positives::PartnerOnly)
}

/// Linear classifier head over base classes, `logits = z W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `F x C`
    pub weight: Tensor,
    /// `1 x C`
    pub bias: Tensor,
}

impl LinearHead {
    pub fn zeros(embed_dim: usize, classes: usize) -> Self {
        Self {
            weight: Tensor::zeros(embed_dim, classes),
            bias: Tensor::zeros(1, classes),
        }
    }

    pub fn init(embed_dim: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = (6.0 / (embed_dim + classes) as f64).sqrt();
        let data = (0..embed_dim * classes).map(|_| rng.gen_range(-bound..bound)).collect();
        Ok(Self {
            weight: Tensor::new(embed_dim, classes, data)?,
            bias: Tensor::zeros(1, classes),
        })
    }

    pub fn classes(&self) -> usize {
        self.weight.cols()
    }
}

/// Records summed softmax cross-entropy of `z W + b` against class indices.
pub fn cross_entropy_on(tape: &mut Tape, z: Var, weight: Var, bias: Var, targets: &[usize]) -> Result<Var> {
    let logits = tape.matmul(z, weight)?;
    let logits = tape.add_row_bias(logits, bias)?;
    let (n, c) = tape.value(logits).shape();
    if targets.len() != n {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            detail: format!("{} targets for {n} rows", targets.len()),
        });
    }
    let mut picked = Tensor::zeros(n, c);
    for (i, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::invalid(format!("target {t} outside {c} classes")));
        }
        picked.set(i, t, 1.0);
    }
    let lse = tape.log_sum_exp_rows(logits, Arc::new(vec![true; n * c]))?;
    let total = tape.sum(lse)?;
    let chosen = tape.weighted_sum(logits, Arc::new(picked))?;
    tape.sub(total, chosen)
}

/// Cross-entropy of a base-class head on centric embeddings `z`.
pub fn ce_pretrain_loss(z: &Tensor, labels: &[u32], head: &LinearHead, split: &ClassSplit) -> Result<f64> {
    let targets = labels
        .iter()
        .map(|&l| {
            split
                .base_index(l)
                .ok_or_else(|| Error::invalid(format!("label {l} is not a base class")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let w = tape.constant(head.weight.clone());
    let b = tape.constant(head.bias.clone());
    let loss = cross_entropy_on(&mut tape, zv, w, b, &targets)?;
    Ok(tape.value(loss).item())
}
