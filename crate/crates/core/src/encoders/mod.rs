//! Input encoders: ID vocabularies, text embeddings, preference summaries
//! and the JD encoder (gated cross layer plus history attention).

mod summary;
mod text;
mod vocab;

pub use summary::{ConcatSummary, FileSummaries, SummaryProvider, TemplateSummary};
pub use text::{FileEmbedder, HashEmbedder, TextEmbedder, TextFileError};
pub use vocab::{EntityKind, Vocabulary};

use rand::Rng;

use crate::autodiff::{Graph, ModelParams, NodeId, Real, TensorError};
use crate::nn::Linear;

/// One gated cross layer over the joint text embedding `c0`:
/// `c = c0 ⊙ (c0·W_c + b) ⊙ σ(c0·W_g) + c0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedCross {
    pub w_cross: String,
    pub w_gate: String,
    pub bias: String,
    pub dim: usize,
}

impl GatedCross {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            w_cross: format!("{prefix}.w_c"),
            w_gate: format!("{prefix}.w_g"),
            bias: format!("{prefix}.b"),
            dim,
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        params.init_uniform(self.w_cross.as_str(), self.dim, self.dim, rng)?;
        params.init_uniform(self.w_gate.as_str(), self.dim, self.dim, rng)?;
        params.init_zeros(self.bias.as_str(), 1, self.dim)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, c0: NodeId) -> Result<NodeId, TensorError> {
        let wc = g.param(&self.w_cross)?;
        let wg = g.param(&self.w_gate)?;
        let b = g.param(&self.bias)?;
        let cross = g.matmul(c0, wc)?;
        let cross = g.add_row(cross, b)?;
        let gate = g.matmul(c0, wg)?;
        let gate = g.sigmoid(gate)?;
        let h = g.mul(c0, cross)?;
        let h = g.mul(h, gate)?;
        g.add(h, c0)
    }
}

/// Single-head attention from the current talent embedding over the
/// embeddings of talents the recruiter engaged with earlier.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryAttention {
    pub w_q: String,
    pub w_k: String,
    pub w_v: String,
    pub dim: usize,
}

impl HistoryAttention {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            w_q: format!("{prefix}.w_q"),
            w_k: format!("{prefix}.w_k"),
            w_v: format!("{prefix}.w_v"),
            dim,
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        for name in [&self.w_q, &self.w_k, &self.w_v] {
            params.init_uniform(name.as_str(), self.dim, self.dim, rng)?;
        }
        Ok(())
    }

    /// `current` is `B×dim`; `history` stacks every row's history
    /// embeddings, with row `b` owning `offsets[b]..offsets[b + 1]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        current: NodeId,
        history: NodeId,
        offsets: &[usize],
    ) -> Result<NodeId, TensorError> {
        let wq = g.param(&self.w_q)?;
        let wk = g.param(&self.w_k)?;
        let wv = g.param(&self.w_v)?;
        let q = g.matmul(current, wq)?;
        let k = g.matmul(history, wk)?;
        let v = g.matmul(history, wv)?;
        g.segment_attention(q, k, v, offsets)
    }
}

/// Builds `e_j = [proj(cross(c0)); attention(e_t, history)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JdEncoder {
    pub cross: GatedCross,
    pub projection: Linear,
    pub attention: HistoryAttention,
}

impl JdEncoder {
    pub fn new(text_dim: usize, jd_dim: usize, id_dim: usize) -> Self {
        let c0 = 2 * text_dim;
        Self {
            cross: GatedCross::new("gcn", c0),
            projection: Linear::new("jd_proj", c0, jd_dim - id_dim),
            attention: HistoryAttention::new("attn", id_dim),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.projection.fan_out + self.attention.dim
    }

    pub fn init<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ModelParams<T>,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        self.cross.init(params, rng)?;
        self.projection.init(params, rng)?;
        self.attention.init(params, rng)
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        c0: NodeId,
        talent: NodeId,
        history: NodeId,
        offsets: &[usize],
    ) -> Result<NodeId, TensorError> {
        let c = self.cross.forward(g, c0)?;
        let p = self.projection.forward(g, c)?;
        let a = self.attention.forward(g, talent, history, offsets)?;
        g.concat_cols(&[p, a])
    }
}
