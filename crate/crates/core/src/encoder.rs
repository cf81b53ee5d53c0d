//! Subgraph encoder: one graph-convolution layer, PReLU, row L2 normalization,
//! and a score-weighted sigmoid readout.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{SparseMatrix, Tape, Tensor, Var};
use crate::connectivity::{SubgraphView, ViewProvider};
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_PRELU_SLOPE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `d x F` projection.
    pub weight: Tensor,
    pub prelu_slope: f64,
}

impl EncoderParams {
    /// Uniform init in `+-sqrt(6 / (d + F))`, slope 0.25.
    pub fn init(feature_dim: usize, embed_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if embed_dim < 2 {
            return Err(Error::invalid("embedding size must be at least 2"));
        }
        let bound = (6.0 / (feature_dim + embed_dim) as f64).sqrt();
        let data = (0..feature_dim * embed_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(Self {
            weight: Tensor::new(feature_dim, embed_dim, data)?,
            prelu_slope: DEFAULT_PRELU_SLOPE,
        })
    }

    pub fn seeded(feature_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        Self::init(feature_dim, embed_dim, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Digest over the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h = Sha256::new();
        for v in self.weight.data() {
            h.update(v.to_le_bytes());
        }
        h.update(self.prelu_slope.to_le_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}

/// Parameters registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub weight: Var,
    pub slope: Var,
}

impl EncoderVars {
    pub fn register(tape: &mut Tape, params: &EncoderParams) -> Self {
        Self {
            weight: tape.param(params.weight.clone()),
            slope: tape.param(Tensor::scalar(params.prelu_slope)),
        }
    }
}

/// Records `Z' = normalize_rows(PReLU(A X W))` for one view.
pub fn encode_on(tape: &mut Tape, vars: EncoderVars, view: &SubgraphView) -> Result<Var> {
    let adj = tape.constant(view.adjacency.clone());
    let x = tape.constant(view.features.clone());
    let xw = tape.matmul(x, vars.weight)?;
    let h = tape.matmul(adj, xw)?;
    let act = tape.prelu(h, vars.slope)?;
    tape.l2_normalize_rows(act)
}

/// Records `sigmoid(weights^T Z')`.
pub fn readout_on(tape: &mut Tape, z: Var, weights: &[f64]) -> Result<Var> {
    let pooled = tape.row_weighted_sum(Arc::new(weights.to_vec()), z)?;
    tape.sigmoid(pooled)
}

/// Row-normalized embeddings of every member of `view`, `(alpha + 1) x F`.
pub fn encode(params: &EncoderParams, view: &SubgraphView) -> Result<Tensor> {
    if view.features.cols() != params.feature_dim() {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: format!(
                "view has {} feature columns, encoder expects {}",
                view.features.cols(),
                params.feature_dim()
            ),
        });
    }
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, params);
    let z = encode_on(&mut tape, vars, view)?;
    Ok(tape.value(z).clone())
}

/// Subgraph summary `sigmoid(weights^T Z')` as a length-F vector.
pub fn readout(z: &Tensor, weights: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let out = readout_on(&mut tape, zv, weights)?;
    Ok(tape.value(out).data().to_vec())
}

/// Node view and subgraph view of one centric node.
#[derive(Debug, Clone, PartialEq)]
pub struct DuoEmbedding {
    /// Centric row of `Z'`; unit norm.
    pub node: Vec<f64>,
    /// Readout of the whole subgraph.
    pub subgraph: Vec<f64>,
    pub label: u32,
}

pub fn embed_duo(g: &Graph, params: &EncoderParams, view: &SubgraphView) -> Result<DuoEmbedding> {
    let z = encode(params, view)?;
    Ok(DuoEmbedding {
        node: z.row(0).to_vec(),
        subgraph: readout(&z, &view.weights)?,
        label: g.label(view.centric),
    })
}

/// Tape handles for a batch of views: centric embeddings and readouts, each `B x F`.
#[derive(Debug, Clone, Copy)]
pub struct BatchEmbedding {
    pub nodes: Var,
    pub subgraphs: Var,
}

/// Encodes many views at once by stacking them into one block-diagonal
/// propagation. Equivalent to calling [`encode_on`] per view.
pub fn embed_batch(tape: &mut Tape, vars: EncoderVars, views: &[SubgraphView]) -> Result<BatchEmbedding> {
    if views.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let d = views[0].features.cols();
    let total: usize = views.iter().map(SubgraphView::len).sum();
    let mut feats = Vec::with_capacity(total * d);
    let mut blocks = Vec::with_capacity(views.len());
    let mut pool = Vec::with_capacity(total);
    let mut centric_rows = Vec::with_capacity(views.len());
    let mut start = 0;
    for (b, v) in views.iter().enumerate() {
        if v.features.cols() != d {
            return Err(Error::ShapeMismatch {
                op: "embed_batch",
                detail: "views disagree on feature width".into(),
            });
        }
        feats.extend_from_slice(v.features.data());
        blocks.push(&v.adjacency);
        for (k, &w) in v.weights.iter().enumerate() {
            pool.push((b, start + k, w));
        }
        centric_rows.push(start);
        start += v.len();
    }
    let adj = Arc::new(SparseMatrix::block_diagonal(&blocks)?);
    let pool = Arc::new(SparseMatrix::from_triplets(views.len(), total, pool)?);

    let x = tape.constant(Tensor::new(total, d, feats)?);
    let xw = tape.matmul(x, vars.weight)?;
    let h = tape.spmm(adj, xw)?;
    let act = tape.prelu(h, vars.slope)?;
    let z = tape.l2_normalize_rows(act)?;
    let pooled = tape.spmm(pool, z)?;
    let subgraphs = tape.sigmoid(pooled)?;
    let nodes = tape.gather_rows(z, centric_rows)?;
    Ok(BatchEmbedding { nodes, subgraphs })
}

/// Frozen-encoder centric embeddings for `nodes`, one row each.
pub fn embed_nodes(
    g: &Graph,
    params: &EncoderParams,
    provider: &dyn ViewProvider,
    nodes: &[usize],
    alpha: usize,
) -> Result<Tensor> {
    const CHUNK: usize = 512;
    let f = params.embed_dim();
    let mut out = Vec::with_capacity(nodes.len() * f);
    for chunk in nodes.chunks(CHUNK) {
        let views = chunk
            .iter()
            .map(|&j| provider.view(g, j, alpha))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let vars = EncoderVars::register(&mut tape, params);
        let emb = embed_batch(&mut tape, vars, &views)?;
        out.extend_from_slice(tape.value(emb.nodes).data());
    }
    Tensor::new(nodes.len(), f, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        rng
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized encoder plus what is needed to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub feature_dim: usize,
    pub embed_dim: usize,
    /// Row-major `feature_dim x embed_dim`.
    pub weight: Vec<f64>,
    pub prelu_slope: f64,
    pub step: u64,
    #[serde(default)]
    pub rng: Option<RngState>,
    /// Adam first/second moments per parameter, in registration order.
    #[serde(default)]
    pub first_moments: Vec<Vec<f64>>,
    #[serde(default)]
    pub second_moments: Vec<Vec<f64>>,
    /// Cross-entropy pretraining head, when one was trained.
    #[serde(default)]
    pub head_weight: Option<Vec<f64>>,
    #[serde(default)]
    pub head_bias: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_params(params: &EncoderParams) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            feature_dim: params.feature_dim(),
            embed_dim: params.embed_dim(),
            weight: params.weight.data().to_vec(),
            prelu_slope: params.prelu_slope,
            step: 0,
            rng: None,
            first_moments: Vec::new(),
            second_moments: Vec::new(),
            head_weight: None,
            head_bias: None,
        }
    }

    pub fn params(&self) -> Result<EncoderParams> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        Ok(EncoderParams {
            weight: Tensor::new(self.feature_dim, self.embed_dim, self.weight.clone())?,
            prelu_slope: self.prelu_slope,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
