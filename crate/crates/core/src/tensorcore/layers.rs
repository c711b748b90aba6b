//! Neural building blocks. Each layer owns [`ParamId`]s registered in a
//! [`ParamStore`] at construction and runs its forward pass on a [`Graph`].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{AttentionMask, Graph, Shape, Tensor};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Linear {
            weight: store.xavier(&format!("{name}.weight"), in_dim, out_dim, rng)?,
            bias: store.filled(&format!("{name}.bias"), 1, out_dim, 0.0)?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Tensor) -> Result<Tensor> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.filled(&format!("{name}.gamma"), 1, dim, 1.0)?,
            beta: store.filled(&format!("{name}.beta"), 1, dim, 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Tensor) -> Result<Tensor> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Embedding {
            table: store.xavier(&format!("{name}.table"), vocab, dim, rng)?,
            vocab,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Tensor> {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }
}

/// Sinusoidal absolute position table, `len × dim`, row-major.
pub fn positional_encoding(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            out[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

pub fn add_positional(g: &mut Graph, x: Tensor) -> Result<Tensor> {
    let pe = g.input(x.shape(), positional_encoding(x.rows(), x.cols()))?;
    g.add(x, pe)
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dm: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dm: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dm % heads != 0 {
            return Err(Error::Config(format!(
                "model dimension {dm} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), dm, dm, rng)?,
            key: Linear::new(store, &format!("{name}.k"), dm, dm, rng)?,
            value: Linear::new(store, &format!("{name}.v"), dm, dm, rng)?,
            output: Linear::new(store, &format!("{name}.o"), dm, dm, rng)?,
            heads,
            dm,
        })
    }

    /// Scaled dot-product attention of `query` rows over `key`/`value` rows.
    /// Masked keys get zero weight; a fully masked row attends uniformly.
    pub fn forward(
        &self,
        g: &mut Graph,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        mask: Option<&AttentionMask>,
    ) -> Result<Tensor> {
        if key.rows() != value.rows() {
            return Err(Error::Dimension(format!(
                "attention keys {} and values {} differ in length",
                key.shape(),
                value.shape()
            )));
        }
        if let Some(m) = mask {
            if m.shape() != Shape::new(query.rows(), key.rows()) {
                return Err(Error::Dimension(format!(
                    "mask {} for {} queries over {} keys",
                    m.shape(),
                    query.rows(),
                    key.rows()
                )));
            }
        }
        let q = self.query.forward(g, query)?;
        let k = self.key.forward(g, key)?;
        let v = self.value.forward(g, value)?;
        let dh = self.dm / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let weights = g.masked_softmax(scores, mask)?;
            heads.push(g.matmul(weights, vh)?);
        }
        let ctx = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        self.output.forward(g, ctx)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dm: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{name}.w1"), dm, hidden, rng)?,
            outer: Linear::new(store, &format!("{name}.w2"), hidden, dm, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Tensor, dropout: f64) -> Result<Tensor> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, dropout);
        self.outer.forward(g, h)
    }
}

/// Shape of a transformer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub layers: usize,
    pub dm: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dm == 0 || self.heads == 0 || self.dm % self.heads != 0 {
            return Err(Error::Config(format!(
                "model dimension {} is not divisible by {} heads",
                self.dm, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Pre-norm transformer block: self-attention, optional cross-attention to a
/// memory sequence, position-wise feed-forward; each sublayer residual.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross: Option<(LayerNorm, MultiHeadAttention)>,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &BlockConfig,
        with_cross: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let cross = if with_cross {
            Some((
                LayerNorm::new(store, &format!("{name}.cross_norm"), cfg.dm)?,
                MultiHeadAttention::new(store, &format!("{name}.cross_attn"), cfg.dm, cfg.heads, rng)?,
            ))
        } else {
            None
        };
        Ok(TransformerBlock {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), cfg.dm)?,
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), cfg.dm, cfg.heads, rng)?,
            cross,
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), cfg.dm)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), cfg.dm, cfg.ff_dim, rng)?,
            dropout: cfg.dropout,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: Tensor,
        self_mask: Option<&AttentionMask>,
        memory: Option<Tensor>,
    ) -> Result<Tensor> {
        let h = self.self_norm.forward(g, x)?;
        let a = self.self_attn.forward(g, h, h, h, self_mask)?;
        let a = g.dropout(a, self.dropout);
        let mut x = g.add(x, a)?;
        if let Some((norm, attn)) = &self.cross {
            let mem = memory.ok_or_else(|| {
                Error::Config("cross-attention block called without a memory sequence".into())
            })?;
            let h = norm.forward(g, x)?;
            let a = attn.forward(g, h, mem, mem, None)?;
            let a = g.dropout(a, self.dropout);
            x = g.add(x, a)?;
        }
        let h = self.ff_norm.forward(g, x)?;
        let f = self.ff.forward(g, h, self.dropout)?;
        let f = g.dropout(f, self.dropout);
        g.add(x, f)
    }
}

/// A stack of [`TransformerBlock`]s followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
}

impl TransformerStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &BlockConfig,
        with_cross: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::new(store, &format!("{name}.{i}"), cfg, with_cross, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerStack {
            blocks,
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), cfg.dm)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        mut x: Tensor,
        self_mask: Option<&AttentionMask>,
        memory: Option<Tensor>,
    ) -> Result<Tensor> {
        for b in &self.blocks {
            x = b.forward(g, x, self_mask, memory)?;
        }
        self.final_norm.forward(g, x)
    }
}
