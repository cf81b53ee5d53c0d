#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subcon::autodiff::{Tape, Tensor, Var};
use subcon::connectivity::SubgraphView;
use subcon::contrast::{contrastive_loss_on, Positives};
use subcon::encoder::{embed_batch, EncoderParams, EncoderVars};
use subcon::graph::Graph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random spanning tree plus `extra` random edges; no isolated nodes when m > 1.
pub fn connected_graph(rng: &mut ChaCha8Rng, m: usize, extra: usize, d: usize, classes: usize) -> Graph {
    let mut edges = Vec::new();
    for v in 1..m {
        edges.push((rng.gen_range(0..v), v));
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..m);
        let b = rng.gen_range(0..m);
        if a != b {
            edges.push((a, b));
        }
    }
    let feats = (0..m * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let labels = (0..m).map(|i| (i % classes) as u32).collect();
    Graph::from_edges(m, &edges, feats, d, labels, classes).unwrap()
}

/// Solves `(I - (1 - phi) A D^-1) s = phi e_j` by Gaussian elimination with partial pivoting.
pub fn dense_ppr(g: &Graph, j: usize, phi: f64) -> Vec<f64> {
    let m = g.num_nodes();
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for k in 0..m {
        let deg = g.degree(k);
        for &i in g.neighbors(k) {
            a[i][k] -= (1.0 - phi) / deg as f64;
        }
    }
    a[j][m] = phi;
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=m {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    (0..m).map(|i| a[i][m] / a[i][i]).collect()
}

/// `||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-6)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-6f64, |m, v| m.max(v.abs()));
    diff / scale
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|k| {
            let orig = probe.data()[k];
            probe.data_mut()[k] = orig + h;
            let up = f(&probe);
            probe.data_mut()[k] = orig - h;
            let down = f(&probe);
            probe.data_mut()[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Subgraph views, encoder, readout and G-SupCon on one tape.
/// Returns the loss and gradients for the weight matrix and the PReLU slope.
pub fn pipeline_loss(params: &EncoderParams, views: &[SubgraphView], labels: &[u32], tau: f64) -> (f64, Tensor, f64) {
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, params);
    let emb = embed_batch(&mut tape, vars, views).unwrap();
    let h = tape.concat_rows(&[emb.subgraphs, emb.nodes]).unwrap();
    let mut duo = labels.to_vec();
    duo.extend_from_slice(labels);
    let loss = contrastive_loss_on(&mut tape, h, &duo, tau, Positives::SameLabel).unwrap();
    let grads = tape.backward(loss).unwrap();
    (tape.value(loss).item(), grads.wrt(vars.weight), grads.wrt(vars.slope).item())
}

pub fn pipeline_value(params: &EncoderParams, views: &[SubgraphView], labels: &[u32], tau: f64) -> f64 {
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, params);
    let emb = embed_batch(&mut tape, vars, views).unwrap();
    let h = tape.concat_rows(&[emb.subgraphs, emb.nodes]).unwrap();
    let mut duo = labels.to_vec();
    duo.extend_from_slice(labels);
    let loss: Var = contrastive_loss_on(&mut tape, h, &duo, tau, Positives::SameLabel).unwrap();
    tape.value(loss).item()
}

/// Direct evaluation of the supervised contrastive sum, one pair at a time.
pub fn scalar_supcon(h: &[Vec<f64>], labels: &[u32], tau: f64, partner_only: bool) -> f64 {
    let n = h.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for b in 0..n {
        let pos: Vec<usize> = if partner_only {
            vec![(b + n / 2) % n]
        } else {
            (0..n).filter(|&p| p != b && labels[p] == labels[b]).collect()
        };
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..n)
            .filter(|&a| a != b)
            .map(|a| (dot(&h[b], &h[a]) / tau).exp())
            .sum();
        let mut s = 0.0;
        for &p in &pos {
            s += ((dot(&h[b], &h[p]) / tau).exp() / denom).ln();
        }
        total += -s / pos.len() as f64;
    }
    total
}

pub fn arc<T>(v: T) -> Arc<T> {
    Arc::new(v)
}
