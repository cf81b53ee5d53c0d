//! Stochastic block model generator for desk-scale experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassSplit, Graph};
use crate::error::{Error, Result};

fn default_mean_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Node count per class; block `c` becomes class `c`.
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-coordinate Gaussian feature noise.
    pub noise: f64,
    /// Norm of each class mean feature vector.
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
    /// Class means live in the first `signal_dim` coordinates; the rest is
    /// pure noise. Defaults to all of `feature_dim`.
    #[serde(default)]
    pub signal_dim: Option<usize>,
    /// Number of leading classes used for pretraining. Defaults to 60% rounded up.
    #[serde(default)]
    pub base_classes: Option<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|&n| n == 0) {
            return Err(Error::invalid("every block needs at least one node"));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=self.p_in).contains(&self.p_out) {
            return Err(Error::invalid(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be finite and non-negative"));
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite()) {
            return Err(Error::invalid("mean_scale must be finite and non-negative"));
        }
        if self.signal_dim.is_some_and(|k| k == 0 || k > self.feature_dim) {
            return Err(Error::invalid("signal_dim must lie in [1, feature_dim]"));
        }
        if let Some(b) = self.base_classes {
            if b > self.blocks.len() {
                return Err(Error::invalid("more base classes than blocks"));
            }
        }
        Ok(())
    }

    pub fn split(&self) -> Result<ClassSplit> {
        let c = self.blocks.len();
        let base = self.base_classes.unwrap_or((c * 3).div_ceil(5));
        ClassSplit::leading(c, base)
    }
}

/// Visits the indices in `0..total` that survive independent Bernoulli(p)
/// trials, by geometric skipping. Cost is proportional to the number of hits.
fn bernoulli_hits(total: u64, p: f64, rng: &mut ChaCha8Rng, mut hit: impl FnMut(u64)) {
    if total == 0 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..total).for_each(hit);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut idx: i128 = -1;
    loop {
        let r: f64 = rng.gen();
        let skip = ((1.0 - r).ln() / log_q).floor();
        idx += 1 + skip as i128;
        if idx >= total as i128 || !skip.is_finite() {
            return;
        }
        hit(idx as u64);
    }
}

/// Maps a linear index over the strict upper triangle of an `n x n` matrix to `(row, col)`.
fn triangle_pair(k: u64, n: u64) -> (u64, u64) {
    // Row r owns n-1-r entries, starting at r*n - r*(r+1)/2.
    let start = |r: u64| r * n - r * (r + 1) / 2;
    let nf = n as f64;
    let kf = k as f64;
    let mut r = ((2.0 * nf - 1.0 - ((2.0 * nf - 1.0).powi(2) - 8.0 * kf).max(0.0).sqrt()) / 2.0)
        .floor()
        .max(0.0) as u64;
    while r > 0 && start(r) > k {
        r -= 1;
    }
    while start(r + 1) <= k {
        r += 1;
    }
    (r, r + 1 + (k - start(r)))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Samples a stochastic block model graph with Gaussian class-conditional features.
///
/// Node ids are randomly permuted so that ids carry no class information.
pub fn generate_sbm(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m: usize = spec.blocks.iter().sum();

    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng);

    let mut starts = Vec::with_capacity(spec.blocks.len());
    let mut acc = 0;
    for &n in &spec.blocks {
        starts.push(acc);
        acc += n;
    }

    let mut edges = Vec::new();
    for (a, &na) in spec.blocks.iter().enumerate() {
        let sa = starts[a];
        let n = na as u64;
        bernoulli_hits(n * n.saturating_sub(1) / 2, spec.p_in, &mut rng, |k| {
            let (u, v) = triangle_pair(k, n);
            edges.push((perm[sa + u as usize], perm[sa + v as usize]));
        });
        for (b, &nb) in spec.blocks.iter().enumerate().skip(a + 1) {
            let sb = starts[b];
            bernoulli_hits(na as u64 * nb as u64, spec.p_out, &mut rng, |k| {
                let u = (k / nb as u64) as usize;
                let v = (k % nb as u64) as usize;
                edges.push((perm[sa + u], perm[sb + v]));
            });
        }
    }

    let d = spec.feature_dim;
    let signal = spec.signal_dim.unwrap_or(d);
    let means: Vec<Vec<f64>> = spec
        .blocks
        .iter()
        .map(|_| {
            let mut v: Vec<f64> = (0..signal).map(|_| gaussian(&mut rng)).collect();
            v.resize(d, 0.0);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * spec.mean_scale / norm).collect()
        })
        .collect();

    let mut labels = vec![0u32; m];
    let mut features = vec![0f32; m * d];
    for (c, &n) in spec.blocks.iter().enumerate() {
        for local in 0..n {
            let node = perm[starts[c] + local];
            labels[node] = c as u32;
            for (k, mu) in means[c].iter().enumerate() {
                features[node * d + k] = (mu + spec.noise * gaussian(&mut rng)) as f32;
            }
        }
    }

    Graph::from_edges(m, &edges, features, d, labels, spec.blocks.len())
}
