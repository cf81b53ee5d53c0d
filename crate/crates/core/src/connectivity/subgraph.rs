use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

use super::{top_rank, ScoreSource};

/// A centric node together with its strongest partners.
///
/// `members[0]` is the centric node. `adjacency` is the induced adjacency with
/// self-loops added and symmetric degree normalization applied. `weights` are
/// the members' finalized scores (centric scored `gamma`) normalized to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphView {
    pub centric: usize,
    pub members: Vec<usize>,
    pub adjacency: Tensor,
    pub features: Tensor,
    pub weights: Vec<f64>,
}

impl SubgraphView {
    /// Assembles a view from ranked partners and their finalized scores.
    pub fn assemble(
        g: &Graph,
        centric: usize,
        partners: &[usize],
        partner_scores: &[f64],
        gamma: f64,
    ) -> Result<Self> {
        if partners.len() != partner_scores.len() {
            return Err(Error::invalid("one score per partner required"));
        }
        let mut members = Vec::with_capacity(partners.len() + 1);
        members.push(centric);
        members.extend_from_slice(partners);
        {
            let mut sorted = members.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid("subgraph members must be distinct"));
            }
            if sorted.last().is_some_and(|&m| m >= g.num_nodes()) {
                return Err(Error::invalid("subgraph member out of range"));
            }
        }

        let n = members.len();
        let mut adj = Tensor::identity(n);
        for a in 0..n {
            for b in a + 1..n {
                if g.has_edge(members[a], members[b]) {
                    adj.set(a, b, 1.0);
                    adj.set(b, a, 1.0);
                }
            }
        }
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|r| 1.0 / adj.row(r).iter().sum::<f64>().sqrt())
            .collect();
        for r in 0..n {
            for c in 0..n {
                let v = adj.get(r, c);
                if v != 0.0 {
                    adj.set(r, c, v * inv_sqrt[r] * inv_sqrt[c]);
                }
            }
        }

        let d = g.feature_dim();
        let mut feats = Vec::with_capacity(n * d);
        for &m in &members {
            feats.extend(g.feature_row(m).iter().map(|&x| x as f64));
        }
        let features = Tensor::new(n, d, feats)?;

        let mut weights = Vec::with_capacity(n);
        weights.push(gamma);
        weights.extend(partner_scores.iter().map(|&s| s.max(0.0)));
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        Ok(Self {
            centric,
            members,
            adjacency: adj,
            features,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Anything that can rank a node's partners: a live [`ScoreSource`] or a [`super::ScoreCache`].
pub trait ViewProvider: Sync {
    fn gamma(&self) -> f64;

    /// Top-`alpha` partners of `node` and their finalized scores.
    fn ranked(&self, g: &Graph, node: usize, alpha: usize) -> Result<(Vec<usize>, Vec<f64>)>;

    /// Subgraph of `node` with `min(alpha, M - 1)` partners.
    fn view(&self, g: &Graph, node: usize, alpha: usize) -> Result<SubgraphView> {
        let alpha = alpha.min(g.num_nodes().saturating_sub(1));
        let (ids, scores) = if alpha == 0 {
            (Vec::new(), Vec::new())
        } else {
            self.ranked(g, node, alpha)?
        };
        SubgraphView::assemble(g, node, &ids, &scores, self.gamma())
    }
}

impl ViewProvider for ScoreSource {
    fn gamma(&self) -> f64 {
        ScoreSource::gamma(self)
    }

    fn ranked(&self, g: &Graph, node: usize, alpha: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let col = self.column(g, node)?;
        let ids = top_rank(&col, alpha, node)?;
        let scores = ids.iter().map(|&i| col[i]).collect();
        Ok((ids, scores))
    }
}

/// The augmented view of `j`: `j` plus its `alpha` highest-scoring partners.
pub fn build_subgraph(g: &Graph, source: &ScoreSource, j: usize, alpha: usize) -> Result<SubgraphView> {
    source.view(g, j, alpha)
}
