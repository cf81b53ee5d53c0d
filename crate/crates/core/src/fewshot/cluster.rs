use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centers: Tensor,
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub nmi: f64,
    pub ari: f64,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_centers(x: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = x.rows();
    let mut centers = Tensor::zeros(k, x.cols());
    centers.row_mut(0).copy_from_slice(x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centers.row(c)));
        }
    }
    centers
}

fn lloyd(x: &Tensor, mut centers: Tensor) -> KMeansFit {
    let (n, f, k) = (x.rows(), x.cols(), centers.rows());
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let row = x.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(row, centers.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Tensor::zeros(k, f);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // empty cluster takes the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(x.row(a), centers.row(assignment[a]))
                            .total_cmp(&sq_dist(x.row(b), centers.row(assignment[b])))
                    })
                    .unwrap();
                centers.row_mut(c).copy_from_slice(x.row(far));
            } else {
                for (ctr, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *ctr = s / counts[c] as f64;
                }
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(x.row(i), centers.row(assignment[i]))).sum();
    KMeansFit {
        assignment,
        centers,
        inertia,
    }
}

/// k-means++ seeding plus Lloyd iterations, best inertia over restarts.
pub fn kmeans(x: &Tensor, k: usize, restarts: usize, seed: u64) -> Result<KMeansFit> {
    if k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    if x.rows() < k {
        return Err(Error::invalid(format!("{} points cannot form {k} clusters", x.rows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(x, seed_centers(x, k, &mut rng));
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

struct Contingency {
    n: f64,
    cells: Vec<f64>,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

fn contingency<A, B>(a: &[A], b: &[B]) -> Contingency
where
    A: std::hash::Hash + Eq + Copy,
    B: std::hash::Hash + Eq + Copy,
{
    let mut ia = HashMap::new();
    let mut ib = HashMap::new();
    for &v in a {
        let next = ia.len();
        ia.entry(v).or_insert(next);
    }
    for &v in b {
        let next = ib.len();
        ib.entry(v).or_insert(next);
    }
    let (r, c) = (ia.len(), ib.len());
    let mut cells = vec![0.0; r * c];
    for (x, y) in a.iter().zip(b) {
        cells[ia[x] * c + ib[y]] += 1.0;
    }
    let rows = (0..r).map(|i| cells[i * c..(i + 1) * c].iter().sum()).collect();
    let cols = (0..c).map(|j| (0..r).map(|i| cells[i * c + j]).sum()).collect();
    Contingency {
        n: a.len() as f64,
        cells,
        rows,
        cols,
    }
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).ln())
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies.
/// Two single-cluster labelings score 1.
pub fn normalized_mutual_info<A, B>(a: &[A], b: &[B]) -> f64
where
    A: std::hash::Hash + Eq + Copy,
    B: std::hash::Hash + Eq + Copy,
{
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let t = contingency(a, b);
    if t.rows.len() == 1 && t.cols.len() == 1 || t.n == 0.0 {
        return 1.0;
    }
    let c = t.cols.len();
    let mut mi = 0.0;
    for (i, &ri) in t.rows.iter().enumerate() {
        for (j, &cj) in t.cols.iter().enumerate() {
            let nij = t.cells[i * c + j];
            if nij > 0.0 {
                let p = nij / t.n;
                mi += p * (p.ln() - (ri / t.n).ln() - (cj / t.n).ln());
            }
        }
    }
    let denom = 0.5 * (entropy(&t.rows, t.n) + entropy(&t.cols, t.n));
    if denom <= 0.0 {
        return 1.0;
    }
    (mi / denom).clamp(0.0, 1.0)
}

pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> f64
where
    A: std::hash::Hash + Eq + Copy,
    B: std::hash::Hash + Eq + Copy,
{
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let t = contingency(a, b);
    let pairs = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = t.cells.iter().map(|&v| pairs(v)).sum();
    let sum_a: f64 = t.rows.iter().map(|&v| pairs(v)).sum();
    let sum_b: f64 = t.cols.iter().map(|&v| pairs(v)).sum();
    let total = pairs(t.n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        return 1.0;
    }
    (index - expected) / (max_index - expected)
}

/// k-means over `embeddings` scored against `labels`.
pub fn cluster_metrics(embeddings: &Tensor, labels: &[u32], k: usize, seed: u64) -> Result<ClusterMetrics> {
    if labels.len() != embeddings.rows() {
        return Err(Error::invalid("one label per embedding row required"));
    }
    let fit = kmeans(embeddings, k, KMEANS_RESTARTS, seed)?;
    Ok(ClusterMetrics {
        nmi: normalized_mutual_info(labels, &fit.assignment),
        ari: adjusted_rand_index(labels, &fit.assignment),
        inertia: fit.inertia,
    })
}
