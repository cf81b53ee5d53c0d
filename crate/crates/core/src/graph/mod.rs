//! In-memory attributed graph, class splits, and the GFB1 on-disk format.
//!
//! A [`Graph`] is undirected, unweighted, and immutable once built. Adjacency
//! is stored as compressed sparse rows with sorted, de-duplicated neighbor
//! lists and no self-loops; every stored `(i, j)` has a matching `(j, i)`.

mod io;
mod synth;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{decode_gfb1, encode_gfb1, load_graph, save_graph};
pub use synth::{generate_sbm, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Vec<f32>,
    feature_dim: usize,
    labels: Vec<u32>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph from an edge list. Self-loops are dropped, each edge is
    /// stored in both directions, and duplicates collapse to one edge.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Vec<f32>,
        feature_dim: usize,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.len() != num_nodes * feature_dim {
            return Err(Error::invalid(format!(
                "feature buffer has {} values, expected {} x {}",
                features.len(),
                num_nodes,
                feature_dim
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::invalid(format!(
                "{} labels for {} nodes",
                labels.len(),
                num_nodes
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::invalid(format!(
                "node {i} has label {l} but only {num_classes} classes"
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at node {}, column {}",
                pos / feature_dim.max(1),
                pos % feature_dim.max(1)
            )));
        }

        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u != v {
                directed.push((u, v));
                directed.push((v, u));
            }
        }
        directed.sort_unstable();
        directed.dedup();

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &directed {
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let targets = directed.into_iter().map(|(_, v)| v).collect();

        Ok(Self {
            offsets,
            targets,
            features,
            feature_dim,
            labels,
            num_classes,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::invalid(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn num_directed_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn column_indices(&self) -> &[usize] {
        &self.targets
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature_row(&self, node: usize) -> &[f32] {
        &self.features[node * self.feature_dim..(node + 1) * self.feature_dim]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> u32 {
        self.labels[node]
    }

    /// Node ids grouped by class, each list ascending.
    pub fn nodes_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// Classes that label at least one node.
    pub fn present_classes(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    /// Stable 64-bit digest of the canonical GFB1 encoding.
    pub fn content_hash(&self) -> u64 {
        let bytes = encode_gfb1(self);
        let digest = Sha256::digest(&bytes);
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head)
    }
}

/// Mean degree `2|E| / M`.
pub fn average_degree(g: &Graph) -> f64 {
    if g.num_nodes() == 0 {
        return 0.0;
    }
    g.num_directed_edges() as f64 / g.num_nodes() as f64
}

/// Partition of the label space into pretraining (base) and evaluation (novel) classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSplit {
    pub base_classes: Vec<u32>,
    pub novel_classes: Vec<u32>,
}

impl ClassSplit {
    pub fn new(mut base_classes: Vec<u32>, mut novel_classes: Vec<u32>) -> Result<Self> {
        base_classes.sort_unstable();
        base_classes.dedup();
        novel_classes.sort_unstable();
        novel_classes.dedup();
        if let Some(c) = base_classes
            .iter()
            .find(|c| novel_classes.binary_search(c).is_ok())
        {
            return Err(Error::invalid(format!(
                "class {c} is both base and novel"
            )));
        }
        Ok(Self {
            base_classes,
            novel_classes,
        })
    }

    /// First `num_base` class ids are base, the remainder novel.
    pub fn leading(num_classes: usize, num_base: usize) -> Result<Self> {
        if num_base > num_classes {
            return Err(Error::invalid(format!(
                "{num_base} base classes requested out of {num_classes}"
            )));
        }
        let base = (0..num_base as u32).collect();
        let novel = (num_base as u32..num_classes as u32).collect();
        Self::new(base, novel)
    }

    /// Checks that the split is disjoint and covers every class present in `g`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let again = Self::new(self.base_classes.clone(), self.novel_classes.clone())?;
        for c in again.base_classes.iter().chain(&again.novel_classes) {
            if *c as usize >= g.num_classes() {
                return Err(Error::invalid(format!(
                    "split references class {c}, graph has {}",
                    g.num_classes()
                )));
            }
        }
        for c in g.present_classes() {
            if !self.is_base(c) && !self.is_novel(c) {
                return Err(Error::invalid(format!(
                    "class {c} is present in the graph but absent from the split"
                )));
            }
        }
        Ok(())
    }

    pub fn is_base(&self, c: u32) -> bool {
        self.base_classes.contains(&c)
    }

    pub fn is_novel(&self, c: u32) -> bool {
        self.novel_classes.contains(&c)
    }

    /// Position of `c` among the base classes, used as a classifier target index.
    pub fn base_index(&self, c: u32) -> Option<usize> {
        self.base_classes.iter().position(|&b| b == c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: ClassSplit = serde_json::from_str(&text)?;
        Self::new(raw.base_classes, raw.novel_classes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Conventional sidecar location for a graph's split file.
pub fn split_sidecar_path(graph_path: &Path) -> std::path::PathBuf {
    let mut name = graph_path.as_os_str().to_owned();
    name.push(".split.json");
    name.into()
}
