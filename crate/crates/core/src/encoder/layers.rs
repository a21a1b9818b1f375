use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Graph;
use crate::tensor::{ParamId, ParamStore, Result, Tensor, TensorError, Var};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Normal(0, 0.02) samples, redrawn until within two standard deviations.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * INIT_STD {
                break x;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `x W + b` with `W[in×out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let weight = store.insert(format!("{name}.weight"), truncated_normal(rng, &[in_dim, out_dim]))?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.tape.matmul(x, w)?;
        g.tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.insert(format!("{name}.gain"), Tensor::filled(&[dim], 1.0))?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.tape.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// `softmax(q kᵀ * scale)` over the kept key columns, applied to `v`.
/// Returns the attended values and the attention weights before dropout.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    keep: &[bool],
    scale: f64,
    dropout: f64,
) -> Result<(Var, Var)> {
    let kt = g.tape.transpose(k)?;
    let scores = g.tape.matmul(q, kt)?;
    let scores = g.tape.scale(scores, scale)?;
    let weights = g.tape.masked_softmax(scores, keep)?;
    let dropped = g.dropout(weights, dropout)?;
    let out = g.tape.matmul(dropped, v)?;
    Ok((out, weights))
}

/// Post-norm Transformer block: self-attention and a GELU feedforward,
/// each followed by dropout, a residual connection and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNorm,
    pub num_heads: usize,
    pub dropout: f64,
}

impl TransformerLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        hidden: usize,
        ff: usize,
        num_heads: usize,
        dropout: f64,
    ) -> Result<Self> {
        if num_heads == 0 || !hidden.is_multiple_of(num_heads) {
            return Err(TensorError::Invalid {
                op: "transformer",
                msg: format!("hidden size {hidden} not divisible by {num_heads} heads"),
            });
        }
        Ok(Self {
            query: Linear::new(store, rng, &format!("{name}.attn.query"), hidden, hidden)?,
            key: Linear::new(store, rng, &format!("{name}.attn.key"), hidden, hidden)?,
            value: Linear::new(store, rng, &format!("{name}.attn.value"), hidden, hidden)?,
            output: Linear::new(store, rng, &format!("{name}.attn.output"), hidden, hidden)?,
            attn_norm: LayerNorm::new(store, &format!("{name}.attn.norm"), hidden)?,
            ff_in: Linear::new(store, rng, &format!("{name}.ff.in"), hidden, ff)?,
            ff_out: Linear::new(store, rng, &format!("{name}.ff.out"), ff, hidden)?,
            ff_norm: LayerNorm::new(store, &format!("{name}.ff.norm"), hidden)?,
            num_heads,
            dropout,
        })
    }

    /// `x[T×H]` to `[T×H]`. Keys where `keep` is false get zero weight.
    /// Per-head weights are pushed to `trace` when given.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        keep: &[bool],
        mut trace: Option<&mut Vec<Tensor>>,
    ) -> Result<Var> {
        let hidden = self.query.out_dim;
        let d = hidden / self.num_heads;
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let scale = 1.0 / (d as f64).sqrt();
        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let (qh, kh, vh) = if self.num_heads == 1 {
                (q, k, v)
            } else {
                (
                    g.tape.narrow_cols(q, h * d, d)?,
                    g.tape.narrow_cols(k, h * d, d)?,
                    g.tape.narrow_cols(v, h * d, d)?,
                )
            };
            let (out, weights) = scaled_dot_attention(g, qh, kh, vh, keep, scale, self.dropout)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(g.tape.tensor(weights));
            }
            heads.push(out);
        }
        let ctx = if heads.len() == 1 {
            heads[0]
        } else {
            g.tape.concat_cols(&heads)?
        };
        let attn = self.output.forward(g, ctx)?;
        let attn = g.dropout(attn, self.dropout)?;
        let res = g.tape.add(x, attn)?;
        let x = self.attn_norm.forward(g, res)?;

        let h = self.ff_in.forward(g, x)?;
        let h = g.tape.gelu(h)?;
        let h = self.ff_out.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        let res = g.tape.add(x, h)?;
        self.ff_norm.forward(g, res)
    }
}
