//! NVIDIA DAVE-2: normalisation, five valid convolutions, three hidden FC
//! layers and a scalar output.

use super::layers::{Builder, Conv, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// (filters, kernel, stride) of the five convolutions.
pub const DAVE2_CONVS: [(usize, usize, usize); 5] =
    [(24, 5, 2), (36, 5, 2), (48, 5, 2), (64, 3, 1), (64, 3, 1)];
pub const DAVE2_FC: [usize; 3] = [100, 50, 10];

/// `[C, H, W]` after each convolution for a `3×h×w` input.
pub fn dave2_conv_shapes(h: usize, w: usize) -> Result<Vec<[usize; 3]>> {
    let (mut h, mut w) = (h, w);
    let mut out = Vec::new();
    for (c, k, s) in DAVE2_CONVS {
        if h < k || w < k {
            return Err(Error::dim(format!(
                "DAVE2 input too small: {h}x{w} before a {k}x{k} conv"
            )));
        }
        h = (h - k) / s + 1;
        w = (w - k) / s + 1;
        out.push([c, h, w]);
    }
    Ok(out)
}

pub fn dave2_flatten_len(h: usize, w: usize) -> Result<usize> {
    let last = *dave2_conv_shapes(h, w)?.last().expect("five layers");
    Ok(last.iter().product())
}

#[derive(Clone, Debug)]
pub struct Dave2 {
    convs: Vec<Conv>,
    fcs: Vec<Linear>,
    out: Linear,
    input: (usize, usize),
}

impl Dave2 {
    pub(crate) fn new(b: &mut Builder, h: usize, w: usize) -> Result<Self> {
        let mut c_in = 3;
        let mut convs = Vec::new();
        for (i, (c, k, s)) in DAVE2_CONVS.into_iter().enumerate() {
            convs.push(b.conv(&format!("dave2.conv{i}"), c_in, c, k, s, 0));
            c_in = c;
        }
        let mut fan_in = dave2_flatten_len(h, w)?;
        let mut fcs = Vec::new();
        for (i, n) in DAVE2_FC.into_iter().enumerate() {
            fcs.push(b.linear(&format!("dave2.fc{i}"), fan_in, n));
            fan_in = n;
        }
        let out = b.linear("head_angle", fan_in, 1);
        Ok(Dave2 {
            convs,
            fcs,
            out,
            input: (h, w),
        })
    }

    /// `images: [B×3×H×W] -> [B×1]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != 3 || (s[2], s[3]) != self.input {
            return Err(Error::dim(format!(
                "DAVE2 expects [B×3×{}×{}], got {s:?}",
                self.input.0, self.input.1
            )));
        }
        let batch = s[0];
        let x = g.scale(images, 2.0);
        let minus_one = g.constant(Tensor::full(&s, -1.0));
        let mut x = g.add(x, minus_one)?;
        for conv in &self.convs {
            x = conv.forward(g, p, x)?;
            x = g.relu(x);
        }
        let flat = g.value(x).len() / batch;
        let mut x = g.reshape(x, &[batch, flat])?;
        for fc in &self.fcs {
            x = fc.forward(g, p, x)?;
            x = g.relu(x);
        }
        self.out.forward(g, p, x)
    }
}
