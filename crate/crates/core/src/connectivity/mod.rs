//! Attribute-free connectivity scores and the subgraph augmentation built on them.
//!
//! A score column `s_j` rates how strongly every node is tied to node `j`.
//! Columns are produced one at a time and never stored as a dense `M x M`
//! matrix; [`ScoreCache`] keeps only each node's top entries.
//!
//! Every finalized column has `s_j(j) = gamma` and off-diagonal entries
//! rescaled to sum to `1 - gamma`.

mod cache;
mod subgraph;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub use cache::ScoreCache;
pub use subgraph::{build_subgraph, SubgraphView, ViewProvider};

pub const DEFAULT_GAMMA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Nad,
    Ppr,
}

impl ScoreMethod {
    pub fn tag(self) -> u64 {
        match self {
            ScoreMethod::Nad => 0,
            ScoreMethod::Ppr => 1,
        }
    }

    pub fn from_tag(tag: u64) -> Option<Self> {
        match tag {
            0 => Some(ScoreMethod::Nad),
            1 => Some(ScoreMethod::Ppr),
            _ => None,
        }
    }
}

/// What to do with a node that has no neighbors during relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsolatedPolicy {
    Error,
    /// Leave the node's value untouched.
    #[default]
    Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NadParams {
    /// Relaxation weight of the neighbor average.
    pub eta: f64,
    pub iterations: usize,
    /// Independent random initializations; their absolute differences are averaged.
    pub vectors: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub isolated: IsolatedPolicy,
}

impl Default for NadParams {
    fn default() -> Self {
        Self {
            eta: 0.5,
            iterations: 50,
            vectors: 5,
            epsilon: 0.01,
            seed: 0,
            isolated: IsolatedPolicy::Keep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PprParams {
    /// Teleport probability back to the seed node.
    pub teleport: f64,
    /// L1 change between successive iterates at which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PprParams {
    fn default() -> Self {
        Self {
            teleport: 0.15,
            tolerance: 1e-10,
            max_iterations: 1000,
        }
    }
}

/// Relaxes `values` in place: each step replaces every node's value by a
/// blend of itself and its neighbors' mean, `u <- (1 - eta) u + eta * mean_nbr(u)`.
pub fn nad_relax(
    g: &Graph,
    values: &mut [f64],
    eta: f64,
    iterations: usize,
    isolated: IsolatedPolicy,
) -> Result<()> {
    if values.len() != g.num_nodes() {
        return Err(Error::invalid(format!(
            "{} values for {} nodes",
            values.len(),
            g.num_nodes()
        )));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    if isolated == IsolatedPolicy::Error {
        if let Some(i) = (0..g.num_nodes()).find(|&i| g.degree(i) == 0) {
            return Err(Error::invalid(format!(
                "node {i} is isolated and no fallback policy is configured"
            )));
        }
    }
    let mut next = vec![0.0; values.len()];
    for _ in 0..iterations {
        for (i, slot) in next.iter_mut().enumerate() {
            let nbrs = g.neighbors(i);
            *slot = if nbrs.is_empty() {
                values[i]
            } else {
                let mean = nbrs.iter().map(|&j| values[j]).sum::<f64>() / nbrs.len() as f64;
                (1.0 - eta) * values[i] + eta * mean
            };
        }
        values.copy_from_slice(&next);
    }
    Ok(())
}

/// One relaxed value vector from a uniform `(0, 1)` start drawn from `seed`.
pub fn nad_iterate(
    g: &Graph,
    eta: f64,
    iterations: usize,
    seed: u64,
    isolated: IsolatedPolicy,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..g.num_nodes())
        .map(|_| loop {
            let v: f64 = rng.gen();
            if v > 0.0 {
                break v;
            }
        })
        .collect();
    nad_relax(g, &mut u, eta, iterations, isolated)?;
    Ok(u)
}

/// Raw algebraic-distance column for node `j`: `1 / (mean_k |u_k[i] - u_k[j]| + epsilon)`.
pub fn nad_raw_column(values: &[Vec<f64>], j: usize, epsilon: f64) -> Vec<f64> {
    let m = values.first().map_or(0, Vec::len);
    let k = values.len() as f64;
    (0..m)
        .map(|i| {
            let dist: f64 = values.iter().map(|u| (u[i] - u[j]).abs()).sum::<f64>() / k;
            1.0 / (dist + epsilon)
        })
        .collect()
}

/// Personalized PageRank column of `j`: the fixed point of
/// `s = teleport * e_j + (1 - teleport) * A D^-1 s`, by power iteration.
///
/// An isolated `j` gets `teleport * e_j`, the exact fixed point.
pub fn ppr_column(g: &Graph, j: usize, params: &PprParams) -> Result<Vec<f64>> {
    let m = g.num_nodes();
    if j >= m {
        return Err(Error::invalid(format!("node {j} out of range")));
    }
    let phi = params.teleport;
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::invalid(format!("teleport must lie in (0, 1), got {phi}")));
    }
    let mut s = vec![0.0; m];
    if g.degree(j) == 0 {
        s[j] = phi;
        return Ok(s);
    }
    s[j] = 1.0;
    let mut next = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for _ in 0..params.max_iterations {
        next.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..m {
            if s[k] == 0.0 {
                continue;
            }
            let nbrs = g.neighbors(k);
            let share = (1.0 - phi) * s[k] / nbrs.len() as f64;
            for &i in nbrs {
                next[i] += share;
            }
        }
        next[j] += phi;
        residual = next.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut s, &mut next);
        if residual < params.tolerance {
            return Ok(s);
        }
    }
    Err(Error::NonConvergence {
        iterations: params.max_iterations,
        residual,
    })
}

/// Column `j` of `teleport * (I - (1 - teleport) A D^-1)` with no inverse taken.
///
/// Kept for comparison only; its off-diagonal entries are non-positive and
/// cannot rank neighbors.
pub fn ppr_uninverted_column(g: &Graph, j: usize, teleport: f64) -> Vec<f64> {
    let mut s = vec![0.0; g.num_nodes()];
    s[j] = teleport;
    let deg = g.degree(j);
    if deg > 0 {
        for &i in g.neighbors(j) {
            s[i] -= teleport * (1.0 - teleport) / deg as f64;
        }
    }
    s
}

/// Sets `s[j] = gamma` and rescales the other entries to sum to `1 - gamma`.
///
/// A column with no off-diagonal mass keeps zeros there.
pub fn finalize_column(raw: &mut [f64], j: usize, gamma: f64) {
    let off: f64 = raw
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(_, v)| v)
        .sum();
    let scale = if off > 0.0 { (1.0 - gamma) / off } else { 0.0 };
    for (i, v) in raw.iter_mut().enumerate() {
        *v = if i == j { gamma } else { *v * scale };
    }
}

/// The `alpha` ids other than `exclude` with the highest scores, in descending
/// order with ties broken by ascending id.
pub fn top_rank(scores: &[f64], alpha: usize, exclude: usize) -> Result<Vec<usize>> {
    if alpha == 0 {
        return Err(Error::invalid("alpha must be at least 1"));
    }
    if alpha >= scores.len() {
        return Err(Error::invalid(format!(
            "alpha {alpha} needs more than {} nodes",
            scores.len()
        )));
    }
    let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut ids: Vec<usize> = (0..scores.len()).filter(|&i| i != exclude).collect();
    if alpha < ids.len() {
        ids.select_nth_unstable_by(alpha - 1, order);
        ids.truncate(alpha);
    }
    ids.sort_unstable_by(order);
    Ok(ids)
}

#[derive(Debug, Clone)]
enum SourceKind {
    Nad {
        values: Vec<Vec<f64>>,
        epsilon: f64,
    },
    Ppr(PprParams),
}

/// Produces finalized score columns on demand.
#[derive(Debug, Clone)]
pub struct ScoreSource {
    gamma: f64,
    kind: SourceKind,
    params_digest: u64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma must lie in (0, 1], got {gamma}")))
    }
}

fn digest<T: Serialize>(v: &T) -> u64 {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(v).expect("params serialize");
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl ScoreSource {
    /// Runs the relaxation for every random start up front.
    pub fn nad(g: &Graph, params: &NadParams, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if params.vectors == 0 {
            return Err(Error::invalid("need at least one value vector"));
        }
        if params.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        let values = (0..params.vectors as u64)
            .map(|k| {
                nad_iterate(
                    g,
                    params.eta,
                    params.iterations,
                    params.seed.wrapping_add(k),
                    params.isolated,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            gamma,
            kind: SourceKind::Nad {
                values,
                epsilon: params.epsilon,
            },
            params_digest: digest(params),
        })
    }

    /// Builds a source from already relaxed value vectors.
    pub fn nad_from_values(values: Vec<Vec<f64>>, epsilon: f64, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let m = values.first().map_or(0, Vec::len);
        if values.is_empty() || values.iter().any(|u| u.len() != m) {
            return Err(Error::invalid("value vectors must be non-empty and equally long"));
        }
        let params_digest = digest(&(epsilon, &values));
        Ok(Self {
            gamma,
            kind: SourceKind::Nad { values, epsilon },
            params_digest,
        })
    }

    pub fn ppr(params: PprParams, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let params_digest = digest(&params);
        Ok(Self {
            gamma,
            kind: SourceKind::Ppr(params),
            params_digest,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn method(&self) -> ScoreMethod {
        match self.kind {
            SourceKind::Nad { .. } => ScoreMethod::Nad,
            SourceKind::Ppr(_) => ScoreMethod::Ppr,
        }
    }

    pub fn params_digest(&self) -> u64 {
        self.params_digest
    }

    /// Unnormalized column for `j`.
    pub fn raw_column(&self, g: &Graph, j: usize) -> Result<Vec<f64>> {
        match &self.kind {
            SourceKind::Nad { values, epsilon } => {
                if values[0].len() != g.num_nodes() {
                    return Err(Error::invalid("score source was built for a different graph"));
                }
                if j >= g.num_nodes() {
                    return Err(Error::invalid(format!("node {j} out of range")));
                }
                Ok(nad_raw_column(values, j, *epsilon))
            }
            SourceKind::Ppr(params) => ppr_column(g, j, params),
        }
    }

    /// Finalized column for `j`.
    pub fn column(&self, g: &Graph, j: usize) -> Result<Vec<f64>> {
        let mut s = self.raw_column(g, j)?;
        finalize_column(&mut s, j, self.gamma);
        Ok(s)
    }
}
