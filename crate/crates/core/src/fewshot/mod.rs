//! Episodic N-way K-shot evaluation on novel classes.

mod cluster;

pub use cluster::{adjusted_rand_index, cluster_metrics, kmeans, normalized_mutual_info, ClusterMetrics, KMeansFit};

use std::collections::HashMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::connectivity::ViewProvider;
use crate::encoder::{embed_nodes, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{ClassSplit, Graph};

/// One few-shot task. Labels are episode-local indices into `classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub classes: Vec<u32>,
    pub support: Vec<usize>,
    pub support_labels: Vec<usize>,
    pub query: Vec<usize>,
    pub query_labels: Vec<usize>,
}

impl Episode {
    pub fn nway(&self) -> usize {
        self.classes.len()
    }
}

pub fn sample_episodes(
    g: &Graph,
    split: &ClassSplit,
    nway: usize,
    kshot: usize,
    qsize: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if nway < 2 || kshot == 0 || qsize == 0 {
        return Err(Error::invalid("need nway >= 2, kshot >= 1, qsize >= 1"));
    }
    if split.novel_classes.len() < nway {
        return Err(Error::invalid(format!(
            "{nway}-way episodes need {nway} novel classes, split has {}",
            split.novel_classes.len()
        )));
    }
    let by_class = g.nodes_by_class();
    for &c in &split.novel_classes {
        let have = by_class.get(c as usize).map_or(0, Vec::len);
        if have < kshot + qsize {
            return Err(Error::invalid(format!(
                "novel class {c} has {have} nodes, episodes need {}",
                kshot + qsize
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let classes: Vec<u32> = split
            .novel_classes
            .choose_multiple(&mut rng, nway)
            .copied()
            .collect();
        let mut ep = Episode {
            classes: classes.clone(),
            support: Vec::with_capacity(nway * kshot),
            support_labels: Vec::with_capacity(nway * kshot),
            query: Vec::with_capacity(nway * qsize),
            query_labels: Vec::with_capacity(nway * qsize),
        };
        for (local, &c) in classes.iter().enumerate() {
            let picked: Vec<usize> = by_class[c as usize]
                .choose_multiple(&mut rng, kshot + qsize)
                .copied()
                .collect();
            ep.support.extend_from_slice(&picked[..kshot]);
            ep.support_labels.extend(std::iter::repeat(local).take(kshot));
            ep.query.extend_from_slice(&picked[kshot..]);
            ep.query_labels.extend(std::iter::repeat(local).take(qsize));
        }
        out.push(ep);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Objective is `sum_i CE_i + l2 / 2 * ||W||^2`; the bias is not penalized.
    pub l2: f64,
    pub max_iterations: usize,
    /// Stop once the largest gradient entry falls below this.
    pub tolerance: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iterations: 500,
            tolerance: 1e-6,
        }
    }
}

/// Multinomial logistic regression, `weight` is `classes x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
}

impl LinearClassifier {
    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = x.matmul_t(&self.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Arg-max class per row; ties go to the lower index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok((0..z.rows())
            .map(|r| {
                let row = z.row(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != labels.len() || pred.is_empty() {
            return Err(Error::invalid("one label per row required"));
        }
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    fn objective_gradient(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Vec<f64>)> {
        let mut p = self.logits(x)?;
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = p.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + s.ln();
            loss += lse - row[y];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            row[y] -= 1.0;
        }
        // p now holds softmax - onehot
        let mut gw = p.t_matmul(x)?;
        for (g, w) in gw.data_mut().iter_mut().zip(self.weight.data()) {
            *g += self.l2 * w;
        }
        let gb = (0..p.cols())
            .map(|c| (0..p.rows()).map(|r| p.get(r, c)).sum())
            .collect();
        loss += 0.5 * self.l2 * self.weight.data().iter().map(|w| w * w).sum::<f64>();
        Ok((loss, gw, gb))
    }

    /// Regularized objective on `(x, labels)`.
    pub fn objective(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        Ok(self.objective_gradient(x, labels)?.0)
    }
}

/// Fits a classifier by full-batch gradient descent with step `1/L`, where
/// `L = ||[X 1]||_F^2 / 2 + l2` bounds the objective's curvature.
pub fn finetune_with_report(
    x: &Tensor,
    labels: &[usize],
    classes: usize,
    cfg: &FinetuneConfig,
) -> Result<(LinearClassifier, FitReport)> {
    if labels.len() != x.rows() || x.rows() == 0 {
        return Err(Error::invalid("one label per support row required"));
    }
    if classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let mut seen = vec![false; classes];
    for &y in labels {
        *seen
            .get_mut(y)
            .ok_or_else(|| Error::invalid(format!("label {y} out of range")))? = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::invalid("every class needs at least one support sample"));
    }
    if !(cfg.l2 >= 0.0) {
        return Err(Error::invalid("l2 must be non-negative"));
    }
    let frob: f64 = x.data().iter().map(|v| v * v).sum::<f64>() + x.rows() as f64;
    let step = 1.0 / (0.5 * frob + cfg.l2);

    let mut clf = LinearClassifier {
        weight: Tensor::zeros(classes, x.cols()),
        bias: vec![0.0; classes],
        l2: cfg.l2,
    };
    let mut report = FitReport {
        iterations: cfg.max_iterations,
        converged: false,
    };
    for it in 0..cfg.max_iterations {
        let (_, gw, gb) = clf.objective_gradient(x, labels)?;
        let gmax = gw.max_abs().max(gb.iter().fold(0.0, |m, v| f64::max(m, v.abs())));
        if gmax < cfg.tolerance {
            report = FitReport {
                iterations: it,
                converged: true,
            };
            break;
        }
        for (w, g) in clf.weight.data_mut().iter_mut().zip(gw.data()) {
            *w -= step * g;
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= step * g;
        }
    }
    if !clf.weight.is_finite() || clf.bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite {
            op: "finetune",
            node: 0,
        });
    }
    Ok((clf, report))
}

/// [`finetune_with_report`] that logs a warning when the iteration cap is hit.
pub fn finetune(x: &Tensor, labels: &[usize], classes: usize, cfg: &FinetuneConfig) -> Result<LinearClassifier> {
    let (clf, report) = finetune_with_report(x, labels, classes, cfg)?;
    if !report.converged {
        warn!(
            "logistic regression did not reach tolerance {} in {} iterations",
            cfg.tolerance, cfg.max_iterations
        );
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub nway: usize,
    pub kshot: usize,
    pub qsize: usize,
    pub episodes: usize,
    pub seeds: usize,
    /// Seeds used are `base_seed, base_seed + 1, ...`.
    pub base_seed: u64,
    pub alpha: usize,
    pub finetune: FinetuneConfig,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            nway: 5,
            kshot: 5,
            qsize: 10,
            episodes: 50,
            seeds: 10,
            base_seed: 0,
            alpha: 19,
            finetune: FinetuneConfig::default(),
        }
    }
}

impl EvalProtocol {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|s| self.base_seed + s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: usize,
    pub classes: Vec<u32>,
    pub accuracy: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub setting: String,
    pub protocol: EvalProtocol,
    /// How episodes and seeds are aggregated.
    pub aggregation: String,
    pub mean: f64,
    /// Sample standard deviation of the per-seed means.
    pub std: f64,
    /// Half-width of the normal-approximation 95% interval over seeds.
    pub ci95: f64,
    /// Sample standard deviation over all episodes.
    pub episode_std: f64,
    pub per_seed: Vec<SeedSummary>,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalResults {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per episode: `seed,episode,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,episode,accuracy\n");
        for r in &self.episodes {
            out.push_str(&format!("{},{},{}\n", r.seed, r.episode, r.accuracy));
        }
        out
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Accuracy of one episode given a lookup from node id to embedding row.
pub fn run_episode(
    ep: &Episode,
    embeddings: &Tensor,
    row_of: &HashMap<usize, usize>,
    cfg: &FinetuneConfig,
) -> Result<(f64, FitReport)> {
    let gather = |nodes: &[usize]| -> Result<Tensor> {
        let f = embeddings.cols();
        let mut data = Vec::with_capacity(nodes.len() * f);
        for n in nodes {
            let r = row_of
                .get(n)
                .ok_or_else(|| Error::invalid(format!("node {n} has no embedding")))?;
            data.extend_from_slice(embeddings.row(*r));
        }
        Tensor::new(nodes.len(), f, data)
    };
    let xs = gather(&ep.support)?;
    let xq = gather(&ep.query)?;
    let (clf, report) = finetune_with_report(&xs, &ep.support_labels, ep.nway(), cfg)?;
    Ok((clf.accuracy(&xq, &ep.query_labels)?, report))
}

/// Evaluates precomputed embeddings (`rows` maps node id to row).
pub fn evaluate_embeddings(
    g: &Graph,
    split: &ClassSplit,
    embeddings: &Tensor,
    row_of: &HashMap<usize, usize>,
    protocol: &EvalProtocol,
) -> Result<EvalResults> {
    let mut records = Vec::new();
    for seed in protocol.seed_list() {
        let eps = sample_episodes(
            g,
            split,
            protocol.nway,
            protocol.kshot,
            protocol.qsize,
            protocol.episodes,
            seed,
        )?;
        let accs = eps
            .par_iter()
            .map(|ep| run_episode(ep, embeddings, row_of, &protocol.finetune))
            .collect::<Result<Vec<_>>>()?;
        for (i, (ep, (acc, rep))) in eps.iter().zip(accs).enumerate() {
            records.push(EpisodeRecord {
                seed,
                episode: i,
                classes: ep.classes.clone(),
                accuracy: acc,
                converged: rep.converged,
            });
        }
    }
    let unconverged = records.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        warn!(
            "{unconverged} of {} episode classifiers hit the iteration cap",
            records.len()
        );
    }
    Ok(aggregate(protocol, records))
}

fn aggregate(protocol: &EvalProtocol, records: Vec<EpisodeRecord>) -> EvalResults {
    let per_seed: Vec<SeedSummary> = protocol
        .seed_list()
        .into_iter()
        .map(|seed| {
            let accs: Vec<f64> = records
                .iter()
                .filter(|r| r.seed == seed)
                .map(|r| r.accuracy)
                .collect();
            SeedSummary {
                seed,
                mean: mean_std(&accs).0,
            }
        })
        .collect();
    let seed_means: Vec<f64> = per_seed.iter().map(|s| s.mean).collect();
    let (mean, std) = mean_std(&seed_means);
    let all: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    EvalResults {
        setting: format!("{}-way {}-shot", protocol.nway, protocol.kshot),
        protocol: protocol.clone(),
        aggregation: format!(
            "mean over {} episodes per seed, then mean/std over {} seeds; ci95 = 1.96 * std / sqrt(seeds)",
            protocol.episodes, protocol.seeds
        ),
        mean,
        std,
        ci95: 1.96 * std / (seed_means.len() as f64).sqrt(),
        episode_std: mean_std(&all).1,
        per_seed,
        episodes: records,
    }
}

/// Frozen-encoder evaluation. Every novel-class node is embedded once; the
/// encoder parameters are only read.
pub fn evaluate(
    g: &Graph,
    split: &ClassSplit,
    params: &EncoderParams,
    provider: &dyn ViewProvider,
    protocol: &EvalProtocol,
) -> Result<EvalResults> {
    let nodes = novel_nodes(g, split);
    let emb = embed_nodes(g, params, provider, &nodes, protocol.alpha)?;
    let row_of: HashMap<usize, usize> = nodes.iter().enumerate().map(|(r, &n)| (n, r)).collect();
    evaluate_embeddings(g, split, &emb, &row_of, protocol)
}

pub fn novel_nodes(g: &Graph, split: &ClassSplit) -> Vec<usize> {
    (0..g.num_nodes())
        .filter(|&i| split.is_novel(g.label(i)))
        .collect()
}

/// NMI/ARI of k-means over the embeddings of all novel-class nodes, with
/// `k` = number of novel classes.
pub fn cluster_novel(
    g: &Graph,
    split: &ClassSplit,
    params: &EncoderParams,
    provider: &dyn ViewProvider,
    alpha: usize,
    seed: u64,
) -> Result<ClusterMetrics> {
    let nodes = novel_nodes(g, split);
    let emb = embed_nodes(g, params, provider, &nodes, alpha)?;
    let labels: Vec<u32> = nodes.iter().map(|&n| g.label(n)).collect();
    cluster_metrics(&emb, &labels, split.novel_classes.len(), seed)
}
