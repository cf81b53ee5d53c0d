//! Precomputed top-ranked partners per node.
//!
//! File layout (little-endian):
//!
//! ```text
//! "SCC1"
//! graph hash u64, method tag u64, gamma f64, params digest u64,
//! alpha_max u64, record count u64
//! per record, ascending node id:
//!     node id u64, alpha_max x u64 partner ids, alpha_max x f32 scores
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::{top_rank, ScoreMethod, ScoreSource, ViewProvider};
use crate::error::{Error, Result};
use crate::graph::Graph;

const MAGIC: &[u8; 4] = b"SCC1";

#[derive(Debug, Clone, PartialEq)]
struct Record {
    ids: Vec<usize>,
    scores: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCache {
    graph_hash: u64,
    method: ScoreMethod,
    gamma: f64,
    params_digest: u64,
    alpha_max: usize,
    records: BTreeMap<usize, Record>,
}

impl ScoreCache {
    pub fn new(g: &Graph, source: &ScoreSource, alpha_max: usize) -> Result<Self> {
        if alpha_max == 0 || alpha_max >= g.num_nodes() {
            return Err(Error::invalid(format!(
                "alpha_max must lie in [1, {}), got {alpha_max}",
                g.num_nodes()
            )));
        }
        Ok(Self {
            graph_hash: g.content_hash(),
            method: source.method(),
            gamma: source.gamma(),
            params_digest: source.params_digest(),
            alpha_max,
            records: BTreeMap::new(),
        })
    }

    /// Cache holding every node of `g`.
    pub fn build(g: &Graph, source: &ScoreSource, alpha_max: usize) -> Result<Self> {
        let mut cache = Self::new(g, source, alpha_max)?;
        let all: Vec<usize> = (0..g.num_nodes()).collect();
        cache.ensure(g, source, &all)?;
        Ok(cache)
    }

    /// Computes records for any of `nodes` not yet cached. Columns are
    /// evaluated in parallel; insertion happens on the calling thread.
    pub fn ensure(&mut self, g: &Graph, source: &ScoreSource, nodes: &[usize]) -> Result<()> {
        if source.method() != self.method
            || source.params_digest() != self.params_digest
            || source.gamma() != self.gamma
        {
            return Err(Error::invalid("score source does not match this cache"));
        }
        let mut missing: Vec<usize> = nodes
            .iter()
            .copied()
            .filter(|n| !self.records.contains_key(n))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let alpha = self.alpha_max;
        let computed: Vec<(usize, Record)> = missing
            .par_iter()
            .map(|&j| {
                let col = source.column(g, j)?;
                let ids = top_rank(&col, alpha, j)?;
                let scores = ids.iter().map(|&i| col[i] as f32).collect();
                Ok((j, Record { ids, scores }))
            })
            .collect::<Result<_>>()?;
        self.records.extend(computed);
        Ok(())
    }

    pub fn alpha_max(&self) -> usize {
        self.alpha_max
    }

    pub fn method(&self) -> ScoreMethod {
        self.method
    }

    pub fn graph_hash(&self) -> u64 {
        self.graph_hash
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.records.contains_key(&node)
    }

    /// Fails unless this cache was computed for exactly `g`.
    pub fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.content_hash() != self.graph_hash {
            return Err(Error::invalid("score cache was computed for a different graph"));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let a = self.alpha_max;
        let mut out = Vec::with_capacity(52 + self.records.len() * (8 + a * 12));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.graph_hash.to_le_bytes());
        out.extend_from_slice(&self.method.tag().to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&self.params_digest.to_le_bytes());
        out.extend_from_slice(&(a as u64).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (&node, rec) in &self.records {
            out.extend_from_slice(&(node as u64).to_le_bytes());
            for &i in &rec.ids {
                out.extend_from_slice(&(i as u64).to_le_bytes());
            }
            for &s in &rec.scores {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let word = |at: usize| -> Result<[u8; 8]> {
            buf.get(at..at + 8)
                .map(|s| s.try_into().unwrap())
                .ok_or_else(|| Error::format(at as u64, "truncated score cache"))
        };
        if buf.get(..4) != Some(MAGIC) {
            return Err(Error::format(0, "bad magic, expected SCC1"));
        }
        let graph_hash = u64::from_le_bytes(word(4)?);
        let tag = u64::from_le_bytes(word(12)?);
        let method = ScoreMethod::from_tag(tag)
            .ok_or_else(|| Error::format(12, format!("unknown method tag {tag}")))?;
        let gamma = f64::from_le_bytes(word(20)?);
        let params_digest = u64::from_le_bytes(word(28)?);
        let alpha_max = u64::from_le_bytes(word(36)?) as usize;
        let count = u64::from_le_bytes(word(44)?) as usize;
        let rec_len = 8 + alpha_max.checked_mul(12).ok_or_else(|| Error::format(36, "alpha_max too large"))?;
        let expected = count
            .checked_mul(rec_len)
            .and_then(|b| b.checked_add(52))
            .ok_or_else(|| Error::format(44, "record count too large"))?;
        if buf.len() != expected {
            return Err(Error::format(
                52,
                format!("expected {expected} bytes for {count} records, found {}", buf.len()),
            ));
        }
        let mut records = BTreeMap::new();
        let mut at = 52;
        for _ in 0..count {
            let node = u64::from_le_bytes(word(at)?) as usize;
            at += 8;
            let mut ids = Vec::with_capacity(alpha_max);
            for _ in 0..alpha_max {
                ids.push(u64::from_le_bytes(word(at)?) as usize);
                at += 8;
            }
            let mut scores = Vec::with_capacity(alpha_max);
            for _ in 0..alpha_max {
                let s = f32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
                if !s.is_finite() {
                    return Err(Error::format(at as u64, "non-finite score"));
                }
                scores.push(s);
                at += 4;
            }
            records.insert(node, Record { ids, scores });
        }
        Ok(Self {
            graph_hash,
            method,
            gamma,
            params_digest,
            alpha_max,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

impl ViewProvider for ScoreCache {
    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn ranked(&self, _g: &Graph, node: usize, alpha: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        if alpha > self.alpha_max {
            return Err(Error::invalid(format!(
                "alpha {alpha} exceeds cached alpha_max {}",
                self.alpha_max
            )));
        }
        let rec = self
            .records
            .get(&node)
            .ok_or_else(|| Error::invalid(format!("node {node} is not in the score cache")))?;
        Ok((
            rec.ids[..alpha].to_vec(),
            rec.scores[..alpha].iter().map(|&s| s as f64).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::PprParams;

    fn ring(m: usize) -> Graph {
        let edges: Vec<_> = (0..m).map(|i| (i, (i + 1) % m)).collect();
        Graph::from_edges(m, &edges, vec![1.0; m], 1, vec![0; m], 1).unwrap()
    }

    #[test]
    fn cached_view_matches_live_view() {
        let g = ring(9);
        let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
        let cache = ScoreCache::build(&g, &src, 4).unwrap();
        for j in 0..9 {
            let live = src.view(&g, j, 3).unwrap();
            let cached = cache.view(&g, j, 3).unwrap();
            assert_eq!(live.members, cached.members);
            for (a, b) in live.weights.iter().zip(&cached.weights) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(cache.view(&g, 0, 5).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let g = ring(7);
        let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
        let mut cache = ScoreCache::new(&g, &src, 3).unwrap();
        cache.ensure(&g, &src, &[5, 1, 5]).unwrap();
        assert_eq!(cache.len(), 2);
        let bytes = cache.encode();
        let back = ScoreCache::decode(&bytes).unwrap();
        assert_eq!(back, cache);
        assert_eq!(back.encode(), bytes);
        back.check_graph(&g).unwrap();
        assert!(back.check_graph(&ring(8)).is_err());
        assert!(ScoreCache::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rejects_mismatched_source() {
        let g = ring(5);
        let src = ScoreSource::ppr(PprParams::default(), 0.3).unwrap();
        let other = ScoreSource::ppr(PprParams { teleport: 0.2, ..Default::default() }, 0.3).unwrap();
        let mut cache = ScoreCache::new(&g, &src, 2).unwrap();
        assert!(cache.ensure(&g, &other, &[0]).is_err());
    }
}
