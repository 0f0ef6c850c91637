//! Raw numeric kernels over flat slices. No shape checking beyond debug
//! asserts; callers in `graph` validate shapes first.

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the
    // strides above address them in bounds for either layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }
}

fn im2col(g: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let src_row = &plane[(oy * g.stride + ky) * g.width..];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        dst_row.copy_from_slice(&src_row[kx..kx + ow]);
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = src_row[ox * g.stride + kx];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im_add(g: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let base = (oy * g.stride + ky) * g.width + kx;
                    for ox in 0..ow {
                        plane[base + ox * g.stride] += src[oy * ow + ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid cross-correlation of `batch` images `[C×H×W]` with `[O×C×kh×kw]`
/// kernels plus per-channel bias. Output is `[batch×O×OH×OW]`.
pub fn conv2d_forward(
    g: &ConvGeometry,
    batch: usize,
    out_channels: usize,
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let in_len = g.channels * g.height * g.width;
    let p = g.out_h() * g.out_w();
    let q = g.patch_len();
    let mut out = vec![0.0; batch * out_channels * p];
    let mut cols = vec![0.0; q * p];
    for b in 0..batch {
        im2col(g, &input[b * in_len..(b + 1) * in_len], &mut cols);
        let dst = &mut out[b * out_channels * p..(b + 1) * out_channels * p];
        for (o, row) in dst.chunks_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        gemm(out_channels, q, p, kernel, false, &cols, false, 1.0, dst);
    }
    out
}

/// Gradients of [`conv2d_forward`]: accumulates into `d_input`, `d_kernel`
/// and `d_bias` when they are provided.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    g: &ConvGeometry,
    batch: usize,
    out_channels: usize,
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    mut d_input: Option<&mut [f64]>,
    mut d_kernel: Option<&mut [f64]>,
    mut d_bias: Option<&mut [f64]>,
) {
    let in_len = g.channels * g.height * g.width;
    let p = g.out_h() * g.out_w();
    let q = g.patch_len();
    let mut cols = vec![0.0; q * p];
    for b in 0..batch {
        let dy = &d_out[b * out_channels * p..(b + 1) * out_channels * p];
        if let Some(db) = d_bias.as_deref_mut() {
            for (o, row) in dy.chunks(p).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        if let Some(dk) = d_kernel.as_deref_mut() {
            im2col(g, &input[b * in_len..(b + 1) * in_len], &mut cols);
            gemm(out_channels, p, q, dy, false, &cols, true, 1.0, dk);
        }
        if let Some(dx) = d_input.as_deref_mut() {
            gemm(q, out_channels, p, kernel, true, dy, false, 0.0, &mut cols);
            col2im_add(g, &cols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
}
