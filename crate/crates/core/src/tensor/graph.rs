use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
        batch: usize,
        out_channels: usize,
    },
    Pad2d(Var, usize),
    GlobalAvgPool(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    SmoothL1 {
        pred: Var,
        target: Var,
        beta: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent accumulator, only used for leaves.
    grad: Option<Tensor>,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the tape is topologically sorted by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn inner_extent(shape: &[usize]) -> usize {
    *shape.last().expect("tensor rank >= 1")
}

fn rows_of(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k), &[a])
    }

    /// `x + bias` with `bias` broadcast along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = inner_extent(self.shape(x));
        if self.value(bias).len() != n {
            return Err(Error::dim(format!(
                "bias of shape {:?} cannot broadcast over {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(n) {
            for (y, bb) in row.iter_mut().zip(&b) {
                *y += bb;
            }
        }
        Ok(self.push(v, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul of {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::dim(format!("transpose needs rank 2, got {s:?}")));
        }
        let v = transpose_data(self.value(a).data(), s[0], s[1]);
        let t = Tensor::new(&[s[1], s[0]], v)?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// Softmax along the last axis, max-shifted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = inner_extent(self.shape(a));
        let mut v = self.value(a).clone();
        for row in v.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Normalizes the last axis to zero mean / unit variance (`eps` added to
    /// the variance), then applies `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let n = inner_extent(self.shape(x));
        if n < 2 {
            return Err(Error::dim("layer_norm needs a last axis of length >= 2"));
        }
        if self.value(gain).len() != n || self.value(shift).len() != n {
            return Err(Error::dim(format!(
                "layer_norm gain/shift must have {n} entries"
            )));
        }
        let g = self.value(gain).data().to_vec();
        let s = self.value(shift).data().to_vec();
        let xs = self.value(x);
        let rows = rows_of(xs.shape());
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for (r, row) in xs.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + s[j];
            }
        }
        let v = Tensor::new(xs.shape(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            },
            &[x, gain, shift],
        ))
    }

    /// Valid-padding cross-correlation. `input` is `[C×H×W]` or `[N×C×H×W]`,
    /// `kernel` is `[O×C×kh×kw]`, `bias` has `O` entries.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be positive"));
        }
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (batch, c, h, w, batched) = match si.as_slice() {
            [c, h, w] => (1, *c, *h, *w, false),
            [n, c, h, w] => (*n, *c, *h, *w, true),
            _ => {
                return Err(Error::dim(format!(
                    "conv2d input must be rank 3 or 4, got {si:?}"
                )))
            }
        };
        let [o, kc, kh, kw] = sk.as_slice() else {
            return Err(Error::dim(format!(
                "conv2d kernel must be rank 4, got {sk:?}"
            )));
        };
        if *kc != c {
            return Err(Error::dim(format!(
                "conv2d kernel {sk:?} does not match input channels of {si:?}"
            )));
        }
        if *kh > h || *kw > w {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        if self.value(bias).len() != *o {
            return Err(Error::dim(format!(
                "conv2d bias has {} entries, expected {o}",
                self.value(bias).len()
            )));
        }
        let geom = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel_h: *kh,
            kernel_w: *kw,
            stride,
        };
        let out = kernels::conv2d_forward(
            &geom,
            batch,
            *o,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let shape = if batched {
            vec![batch, *o, geom.out_h(), geom.out_w()]
        } else {
            vec![*o, geom.out_h(), geom.out_w()]
        };
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                out_channels: *o,
            },
            &[input, kernel, bias],
        ))
    }

    /// Explicit zero padding of the two trailing (spatial) axes.
    pub fn pad2d(&mut self, x: Var, pad: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::dim(format!("pad2d needs rank >= 2, got {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let planes: usize = s[..s.len() - 2].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; planes * ph * pw];
        for p in 0..planes {
            for y in 0..h {
                let d = p * ph * pw + (y + pad) * pw + pad;
                out[d..d + w].copy_from_slice(&src[p * h * w + y * w..p * h * w + (y + 1) * w]);
            }
        }
        let mut shape = s.clone();
        let r = shape.len();
        shape[r - 2] = ph;
        shape[r - 1] = pw;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Pad2d(x, pad), &[x]))
    }

    /// `[N×C×H×W] -> [N×C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [n, c, h, w] = s.as_slice() else {
            return Err(Error::dim(format!(
                "global_avg_pool needs rank 4, got {s:?}"
            )));
        };
        let hw = h * w;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let v = Tensor::new(&[*n, *c], out)?;
        Ok(self.push(v, Op::GlobalAvgPool(x), &[x]))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || len == 0 || start + len > s[1] {
            return Err(Error::dim(format!(
                "slice_cols {start}..{} of {s:?}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(s[0] * len);
        for row in self.value(x).data().chunks(s[1]) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let v = Tensor::new(&[s[0], len], out)?;
        Ok(self.push(v, Op::SliceCols(x, start), &[x]))
    }

    /// Leading-axis slice `start..start+len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_outer(start, len)?;
        Ok(self.push(v, Op::SliceRows(x, start), &[x]))
    }

    /// Gathers leading-axis entries by index (repeats allowed).
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if indices.is_empty() {
            return Err(Error::dim("select_rows with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::dim(format!(
                "select_rows index {bad} out of {}",
                s[0]
            )));
        }
        let inner: usize = s[1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut shape = s.clone();
        shape[0] = indices.len();
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::SelectRows(x, indices.to_vec()), &[x]))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of zero tensors"))?;
        let rows = self.shape(*first)[0];
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim(format!(
                    "concat_cols expects [{rows}×_] parts, got {s:?}"
                )));
            }
            total += s[1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let v = Tensor::new(&[rows, total], out)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Concatenates along the leading axis; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of zero tensors"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat_rows trailing extents {:?} vs {tail:?}",
                    &s[1..]
                )));
            }
            lead += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(v, Op::Mean(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x), &[x])
    }

    /// Elementwise square root; the derivative at exactly 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&a| a < 0.0) {
            return Err(Error::contract("sqrt of negative value"));
        }
        let v = self.value(x).map(f64::sqrt);
        Ok(self.push(v, Op::Sqrt(x), &[x]))
    }

    /// Mean Smooth-L1 (Huber with knee `beta`) between equally shaped tensors.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var> {
        if beta <= 0.0 {
            return Err(Error::contract(format!(
                "smooth_l1 beta must be > 0, got {beta}"
            )));
        }
        self.same_shape(pred, target, "smooth_l1")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let total: f64 = p
            .iter()
            .zip(t)
            .map(|(a, b)| smooth_l1_value(b - a, beta))
            .sum();
        let v = Tensor::scalar(total / p.len() as f64);
        Ok(self.push(v, Op::SmoothL1 { pred, target, beta }, &[pred, target]))
    }

    /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(&g) {
                            *a += d;
                        }
                    }
                    None => node.grad = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(slot);
            }
        };
        let val = |v: Var| nodes[v.0].value.data();

        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| {
                    for (x, y) in d.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(vb) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(va) {
                        *x += y * w;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |d| {
                for (x, y) in d.iter_mut().zip(g) {
                    *x += y * k;
                }
            }),
            Op::AddBias(x, b) => {
                acc(*x, &mut |d| add_into(d, g));
                let n = nodes[b.0].value.len();
                acc(*b, &mut |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    kernels::gemm(m, n, k, g, false, vb, true, 1.0, d)
                });
                acc(*b, &mut |d| {
                    kernels::gemm(k, m, n, va, true, g, false, 1.0, d)
                });
            }
            Op::Transpose(a) => {
                let s = out.shape();
                let t = transpose_data(g, s[0], s[1]);
                acc(*a, &mut |d| add_into(d, &t));
            }
            Op::Reshape(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |d| {
                    for ((x, y), &z) in d.iter_mut().zip(g).zip(va) {
                        if z > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |d| {
                for ((x, y), t) in d.iter_mut().zip(g).zip(out.data()) {
                    *x += y * (1.0 - t * t);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                for ((x, y), s) in d.iter_mut().zip(g).zip(out.data()) {
                    *x += y * s * (1.0 - s);
                }
            }),
            Op::Softmax(a) => {
                let n = inner_extent(out.shape());
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                rstd,
            } => {
                let n = inner_extent(out.shape());
                let gv = val(*gain);
                acc(*shift, &mut |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
                acc(*gain, &mut |d| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            d[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*x, &mut |d| {
                    let nf = n as f64;
                    let mut dh = vec![0.0; n];
                    for (r, ((dr, gr), hr)) in d
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        for j in 0..n {
                            dh[j] = gr[j] * gv[j];
                        }
                        let s1: f64 = dh.iter().sum();
                        let s2: f64 = dh.iter().zip(hr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            dr[j] += rstd[r] / nf * (nf * dh[j] - s1 - hr[j] * s2);
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                out_channels,
            } => {
                let len = |v: &Var| nodes[v.0].value.len();
                let mut dx = wants(*input).then(|| vec![0.0; len(input)]);
                let mut dk = wants(*kernel).then(|| vec![0.0; len(kernel)]);
                let mut db = wants(*bias).then(|| vec![0.0; len(bias)]);
                kernels::conv2d_backward(
                    geom,
                    *batch,
                    *out_channels,
                    val(*input),
                    val(*kernel),
                    g,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    acc(*input, &mut |d| add_into(d, &dx));
                }
                if let Some(dk) = dk {
                    acc(*kernel, &mut |d| add_into(d, &dk));
                }
                if let Some(db) = db {
                    acc(*bias, &mut |d| add_into(d, &db));
                }
            }
            Op::Pad2d(x, pad) => {
                let s = nodes[x.0].value.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                let planes: usize = s[..s.len() - 2].iter().product();
                acc(*x, &mut |d| {
                    for p in 0..planes {
                        for y in 0..h {
                            let src = p * ph * pw + (y + pad) * pw + pad;
                            add_into(
                                &mut d[p * h * w + y * w..p * h * w + (y + 1) * w],
                                &g[src..src + w],
                            );
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let s = nodes[x.0].value.shape();
                let hw = s[2] * s[3];
                acc(*x, &mut |d| {
                    for (plane, gv) in d.chunks_mut(hw).zip(g) {
                        let share = gv / hw as f64;
                        for v in plane {
                            *v += share;
                        }
                    }
                });
            }
            Op::SliceCols(x, start) => {
                let cols = nodes[x.0].value.shape()[1];
                let len = out.shape()[1];
                acc(*x, &mut |d| {
                    for (dr, gr) in d.chunks_mut(cols).zip(g.chunks(len)) {
                        add_into(&mut dr[*start..start + len], gr);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let inner: usize = out.shape()[1..].iter().product();
                acc(*x, &mut |d| {
                    add_into(&mut d[start * inner..start * inner + g.len()], g)
                });
            }
            Op::SelectRows(x, idx) => {
                let inner: usize = out.shape()[1..].iter().product();
                acc(*x, &mut |d| {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(
                            &mut d[r * inner..(r + 1) * inner],
                            &g[k * inner..(k + 1) * inner],
                        );
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.shape()[1];
                let mut off = 0;
                for p in parts {
                    let c = nodes[p.0].value.shape()[1];
                    acc(*p, &mut |d| {
                        for (dr, gr) in d.chunks_mut(c).zip(g.chunks(total)) {
                            add_into(dr, &gr[off..off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    acc(*p, &mut |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Sum(x) => acc(*x, &mut |d| {
                for v in d {
                    *v += g[0];
                }
            }),
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |d| {
                    for v in d {
                        *v += g[0] / n;
                    }
                });
            }
            Op::Square(x) => {
                let vx = val(*x);
                acc(*x, &mut |d| {
                    for ((v, y), a) in d.iter_mut().zip(g).zip(vx) {
                        *v += 2.0 * a * y;
                    }
                });
            }
            Op::Sqrt(x) => acc(*x, &mut |d| {
                for ((v, y), s) in d.iter_mut().zip(g).zip(out.data()) {
                    if *s > 0.0 {
                        *v += y * 0.5 / s;
                    }
                }
            }),
            Op::SmoothL1 { pred, target, beta } => {
                let (p, t) = (val(*pred), val(*target));
                let n = p.len() as f64;
                // slope w.r.t. the residual d = target - pred
                let slope: Vec<f64> = p
                    .iter()
                    .zip(t)
                    .map(|(a, b)| g[0] * smooth_l1_slope(b - a, *beta) / n)
                    .collect();
                acc(*pred, &mut |d| {
                    for (v, s) in d.iter_mut().zip(&slope) {
                        *v -= s;
                    }
                });
                acc(*target, &mut |d| add_into(d, &slope));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn transpose_data(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Per-element Smooth-L1 of a residual `d`.
pub fn smooth_l1_value(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        0.5 * d * d / beta
    } else {
        d.abs() - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1_value`] with respect to `d`.
pub fn smooth_l1_slope(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}
