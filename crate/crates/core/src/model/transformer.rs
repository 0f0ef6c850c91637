//! Encoder layers for the sequence transformers.
//!
//! The RGB stream runs ordinary multi-head self-attention. The flow stream
//! attends with weights computed from the RGB stream (queries and keys are
//! projections of the RGB representations) and aggregates projected flow
//! values, so its attention pattern is a function of position information
//! only.

use rand_chacha::ChaCha8Rng;

use super::layers::{Builder, Linear, Norm};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Sinusoidal position table `[len×dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[len, dim], |i| {
        let (t, j) = ((i / dim) as f64, i % dim);
        let freq = 10000f64.powf(-((j - j % 2) as f64) / dim as f64);
        if j % 2 == 0 {
            (t * freq).sin()
        } else {
            (t * freq).cos()
        }
    })
}

#[derive(Clone, Debug)]
struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.inner.forward(g, p, x)?;
        let h = g.relu(h);
        self.outer.forward(g, p, h)
    }
}

/// Attention + residual/norm + feedforward + residual/norm for one stream.
#[derive(Clone, Debug)]
struct Branch {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: Norm,
    ff: FeedForward,
    norm2: Norm,
}

impl Branch {
    fn new(b: &mut Builder, name: &str, dim: usize, ff_dim: usize) -> Self {
        Branch {
            query: b.linear(&format!("{name}.q"), dim, dim),
            key: b.linear(&format!("{name}.k"), dim, dim),
            value: b.linear(&format!("{name}.v"), dim, dim),
            out: b.linear(&format!("{name}.o"), dim, dim),
            norm1: b.norm(&format!("{name}.norm1"), dim),
            ff: FeedForward {
                inner: b.linear(&format!("{name}.ff1"), dim, ff_dim),
                outer: b.linear(&format!("{name}.ff2"), ff_dim, dim),
            },
            norm2: b.norm(&format!("{name}.norm2"), dim),
        }
    }

    /// `attend_from` supplies Q and K, `stream` supplies V and the residual.
    /// Both are `[B·L×D]`. Returns the new stream and the attention weight
    /// nodes indexed `[head][sample]`, each `[L×L]`.
    fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        attend_from: Var,
        stream: Var,
        seq_len: usize,
        heads: usize,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let rows = g.shape(stream)[0];
        let dim = g.shape(stream)[1];
        let head_dim = dim / heads;
        let batch = rows / seq_len;
        let q = self.query.forward(g, p, attend_from)?;
        let k = self.key.forward(g, p, attend_from)?;
        let v = self.value.forward(g, p, stream)?;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let mut weights = vec![Vec::with_capacity(batch); heads];
        let mut per_sample = Vec::with_capacity(batch);
        for s in 0..batch {
            let qs = g.slice_rows(q, s * seq_len, seq_len)?;
            let ks = g.slice_rows(k, s * seq_len, seq_len)?;
            let vs = g.slice_rows(v, s * seq_len, seq_len)?;
            let mut head_out = Vec::with_capacity(heads);
            for (h, w_h) in weights.iter_mut().enumerate() {
                let qh = g.slice_cols(qs, h * head_dim, head_dim)?;
                let kh = g.slice_cols(ks, h * head_dim, head_dim)?;
                let vh = g.slice_cols(vs, h * head_dim, head_dim)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale);
                let attn = g.softmax(scores);
                w_h.push(attn);
                head_out.push(g.matmul(attn, vh)?);
            }
            per_sample.push(g.concat_cols(&head_out)?);
        }
        let merged = if per_sample.len() == 1 {
            per_sample[0]
        } else {
            g.concat_rows(&per_sample)?
        };
        let attended = self.out.forward(g, p, merged)?;
        let x = g.add(stream, attended)?;
        let x = self.norm1.forward(g, p, x)?;
        let f = self.ff.forward(g, p, x)?;
        let x = g.add(x, f)?;
        let x = self.norm2.forward(g, p, x)?;
        Ok((x, weights))
    }
}

/// Attention weights produced by one encoder layer, `[head][sample] -> [L×L]`.
pub struct LayerAttention {
    pub rgb: Vec<Vec<Var>>,
    pub flow: Option<Vec<Vec<Var>>>,
}

/// Encoder layer with an RGB self-attention branch and, optionally, a flow
/// branch whose attention weights come from RGB.
#[derive(Clone, Debug)]
pub struct CrossModalEncoderLayer {
    rgb: Branch,
    flow: Option<Branch>,
    heads: usize,
}

impl CrossModalEncoderLayer {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        dim: usize,
        ff_dim: usize,
        heads: usize,
        with_flow: bool,
    ) -> Self {
        let rgb = Branch::new(b, &format!("{name}.rgb"), dim, ff_dim);
        let flow = with_flow.then(|| Branch::new(b, &format!("{name}.flow"), dim, ff_dim));
        CrossModalEncoderLayer { rgb, flow, heads }
    }

    pub fn with_store(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        ff_dim: usize,
        heads: usize,
        with_flow: bool,
    ) -> Self {
        Self::new(
            &mut Builder { store, rng },
            name,
            dim,
            ff_dim,
            heads,
            with_flow,
        )
    }

    /// `rgb`, `flow`: `[B·L×D]`. Returns updated streams and attention.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        rgb: Var,
        flow: Option<Var>,
        seq_len: usize,
    ) -> Result<(Var, Option<Var>, LayerAttention)> {
        let s = g.shape(rgb).to_vec();
        if s.len() != 2 || seq_len == 0 || !s[0].is_multiple_of(seq_len) {
            return Err(Error::dim(format!(
                "encoder expects [B·{seq_len}×D] rows, got {s:?}"
            )));
        }
        let (rgb_out, rgb_w) = self.rgb.forward(g, p, rgb, rgb, seq_len, self.heads)?;
        let (flow_out, flow_w) = match (&self.flow, flow) {
            (Some(branch), Some(f)) => {
                if g.shape(f) != s.as_slice() {
                    return Err(Error::dim(format!(
                        "flow stream {:?} does not match rgb stream {s:?}",
                        g.shape(f)
                    )));
                }
                let (o, w) = branch.forward(g, p, rgb, f, seq_len, self.heads)?;
                (Some(o), Some(w))
            }
            (None, None) => (None, None),
            (Some(_), None) => {
                return Err(Error::contract("cross-modal layer needs a flow stream"))
            }
            (None, Some(_)) => return Err(Error::contract("layer has no flow branch")),
        };
        Ok((
            rgb_out,
            flow_out,
            LayerAttention {
                rgb: rgb_w,
                flow: flow_w,
            },
        ))
    }
}
