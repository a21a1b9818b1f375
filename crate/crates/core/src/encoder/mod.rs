//! Transformer encoder over packed token sequences.

mod graph;
mod layers;

pub use graph::Graph;
pub use layers::{scaled_dot_attention, truncated_normal, LayerNorm, Linear, TransformerLayer, INIT_STD};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sequence of {len} tokens exceeds {max} positions")]
    Length { len: usize, max: usize },
    #[error("token id {id} outside a vocabulary of {size}")]
    Vocab { id: usize, size: usize },
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("layer {layer} out of range for {layers} layers")]
    Layer { layer: usize, layers: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            hidden_dim: 32,
            ff_dim: 64,
            vocab_size: 1000,
            max_positions: 512,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |m: String| Err(EncoderError::Config(m));
        if self.num_heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.ff_dim == 0 || self.vocab_size == 0 || self.max_positions == 0 {
            return fail("ff_dim, vocab_size and max_positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Per layer, per head `[T×T]` attention weights of one input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionTrace {
    pub layers: Vec<Vec<Tensor>>,
}

impl AttentionTrace {
    /// Elementwise maximum over the heads of `layer`.
    pub fn max_over_heads(&self, layer: usize) -> Result<Tensor, EncoderError> {
        let heads = self.layers.get(layer).ok_or(EncoderError::Layer {
            layer,
            layers: self.layers.len(),
        })?;
        let mut out = heads[0].clone();
        for h in &heads[1..] {
            for (o, &x) in out.data_mut().iter_mut().zip(h.data()) {
                *o = o.max(x);
            }
        }
        Ok(out)
    }
}

/// Token and position embeddings, embedding layer norm, and a stack of
/// post-norm Transformer layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub embedding_norm: LayerNorm,
    pub layers: Vec<TransformerLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        config: &EncoderConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let h = config.hidden_dim;
        let token_embedding = store.insert(
            "encoder.embed.tokens",
            truncated_normal(rng, &[config.vocab_size, h]),
        )?;
        let position_embedding = store.insert(
            "encoder.embed.positions",
            truncated_normal(rng, &[config.max_positions, h]),
        )?;
        let embedding_norm = LayerNorm::new(store, "encoder.embed.norm", h)?;
        let layers = (0..config.num_layers)
            .map(|i| {
                TransformerLayer::new(
                    store,
                    rng,
                    &format!("encoder.layer{i}"),
                    h,
                    config.ff_dim,
                    config.num_heads,
                    config.dropout,
                )
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            embedding_norm,
            layers,
        })
    }

    /// Contextualized `[T×hidden]` encodings of `token_ids`. Keys whose
    /// `attention_mask` entry is false receive no attention.
    pub fn encode(
        &self,
        g: &mut Graph,
        token_ids: &[usize],
        attention_mask: &[bool],
        trace: bool,
    ) -> Result<(Var, Option<AttentionTrace>), EncoderError> {
        let t = token_ids.len();
        if t > self.config.max_positions {
            return Err(EncoderError::Length {
                len: t,
                max: self.config.max_positions,
            });
        }
        if let Some(&id) = token_ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(EncoderError::Vocab {
                id,
                size: self.config.vocab_size,
            });
        }
        if attention_mask.len() != t {
            return Err(TensorError::Shape {
                op: "encode",
                lhs: vec![t],
                rhs: vec![attention_mask.len()],
            }
            .into());
        }
        let tok = g.param(self.token_embedding);
        let pos = g.param(self.position_embedding);
        let tok = g.tape.gather_rows(tok, token_ids)?;
        let positions: Vec<usize> = (0..t).collect();
        let pos = g.tape.gather_rows(pos, &positions)?;
        let x = g.tape.add(tok, pos)?;
        let x = self.embedding_norm.forward(g, x)?;
        let mut x = g.dropout(x, self.config.dropout)?;

        let mut record = trace.then(AttentionTrace::default);
        for layer in &self.layers {
            let mut heads = Vec::new();
            x = layer.forward(g, x, attention_mask, record.as_ref().map(|_| &mut heads))?;
            if let Some(r) = record.as_mut() {
                r.layers.push(heads);
            }
        }
        Ok((x, record))
    }
}
