use rand_chacha::ChaCha8Rng;

use super::params::{kaiming_uniform, uniform_fan_in, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Builder { store, rng }
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self.store.add(
            format!("{name}.w"),
            kaiming_uniform(&[fan_in, fan_out], fan_in, self.rng),
        );
        let b = self
            .store
            .add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Linear { w, b }
    }

    pub fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Conv {
        let fan_in = c_in * k * k;
        let w = self.store.add(
            format!("{name}.w"),
            kaiming_uniform(&[c_out, c_in, k, k], fan_in, self.rng),
        );
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Conv { w, b, stride, pad }
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let gain = self
            .store
            .add(format!("{name}.gain"), Tensor::full(&[dim], 1.0));
        let shift = self
            .store
            .add(format!("{name}.shift"), Tensor::zeros(&[dim]));
        Norm { gain, shift }
    }

    pub fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> LstmWeights {
        let w_ih = self.store.add(
            format!("{name}.w_ih"),
            uniform_fan_in(&[input, 4 * hidden], hidden, self.rng),
        );
        let w_hh = self.store.add(
            format!("{name}.w_hh"),
            uniform_fan_in(&[hidden, 4 * hidden], hidden, self.rng),
        );
        let b = self.store.add(
            format!("{name}.b"),
            uniform_fan_in(&[4 * hidden], hidden, self.rng),
        );
        LstmWeights {
            w_ih,
            w_hh,
            b,
            hidden,
        }
    }
}

/// `y = x·W + b` with `W: [in×out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w.0])?;
        g.add_bias(y, p[self.b.0])
    }
}

/// Convolution with explicit symmetric zero padding applied beforehand.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let x = if self.pad > 0 {
            g.pad2d(x, self.pad)?
        } else {
            x
        };
        g.conv2d(x, p[self.w.0], p[self.b.0], self.stride)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl Norm {
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gain.0], p[self.shift.0], LAYER_NORM_EPS)
    }
}

/// Gate order along the `4·hidden` axis: input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// One LSTM step over a batch of rows: `x: [B×in]`, `h, c: [B×hidden]`.
pub fn lstm_cell(
    g: &mut Graph,
    p: &[Var],
    w: &LstmWeights,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let n = w.hidden;
    let xi = g.matmul(x, p[w.w_ih.0])?;
    let hh = g.matmul(h, p[w.w_hh.0])?;
    let pre = g.add(xi, hh)?;
    let pre = g.add_bias(pre, p[w.b.0])?;
    let i = g.slice_cols(pre, 0, n)?;
    let f = g.slice_cols(pre, n, n)?;
    let gg = g.slice_cols(pre, 2 * n, n)?;
    let o = g.slice_cols(pre, 3 * n, n)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let gg = g.tanh(gg);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, gg)?;
    let c_next = g.add(keep, write)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}
