// Low-level numeric kernels. All loops run in a fixed order so results are
// bit-reproducible for identical inputs.

/// `c = a·b (+ c when accumulate)`, with `a` m×k and `b` k×n in row-major
/// layout (or their transposes when the flags are set).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
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

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height - self.kh) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.width - self.kw) / self.stride + 1
    }
    pub fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    pub fn out_plane(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

fn im2col(g: &ConvGeometry, image: &[f32], cols: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let hw = oh * ow;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..oh {
                    let src = &plane[(oy * g.stride + i) * g.width..];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        out.copy_from_slice(&src[j..j + ow]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            *o = src[ox * g.stride + j];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeometry, cols: &[f32], image: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let hw = oh * ow;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..oh {
                    let base = (oy * g.stride + i) * g.width + j;
                    for ox in 0..ow {
                        plane[base + ox * g.stride] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Valid (unpadded) convolution. Returns the output and the unfolded input
/// patches, which the backward pass reuses.
pub(crate) fn conv2d_forward(
    g: &ConvGeometry,
    input: &[f32],
    kernel: &[f32],
    bias: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let patch = g.patch();
    let hw = g.out_plane();
    let in_plane = g.channels * g.height * g.width;
    let mut cols = vec![0.0; g.batch * patch * hw];
    let mut out = vec![0.0; g.batch * g.kernels * hw];
    for s in 0..g.batch {
        let c = &mut cols[s * patch * hw..(s + 1) * patch * hw];
        im2col(g, &input[s * in_plane..(s + 1) * in_plane], c);
        let o = &mut out[s * g.kernels * hw..(s + 1) * g.kernels * hw];
        for (k, row) in o.chunks_mut(hw).enumerate() {
            row.fill(bias[k]);
        }
        gemm(g.kernels, patch, hw, kernel, false, c, false, o, true);
    }
    (out, cols)
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    g: &ConvGeometry,
    grad_out: &[f32],
    kernel: &[f32],
    cols: &[f32],
    need: (bool, bool, bool),
) -> ConvGrads {
    let patch = g.patch();
    let hw = g.out_plane();
    let in_plane = g.channels * g.height * g.width;
    let mut d_input = need.0.then(|| vec![0.0; g.batch * in_plane]);
    let mut d_kernel = need.1.then(|| vec![0.0; g.kernels * patch]);
    let mut d_bias = need.2.then(|| vec![0.0; g.kernels]);
    let mut d_cols = vec![0.0; if need.0 { patch * hw } else { 0 }];
    for s in 0..g.batch {
        let go = &grad_out[s * g.kernels * hw..(s + 1) * g.kernels * hw];
        if let Some(dk) = d_kernel.as_mut() {
            let c = &cols[s * patch * hw..(s + 1) * patch * hw];
            gemm(g.kernels, hw, patch, go, false, c, true, dk, true);
        }
        if let Some(db) = d_bias.as_mut() {
            for (k, row) in go.chunks(hw).enumerate() {
                db[k] += row.iter().sum::<f32>();
            }
        }
        if let Some(di) = d_input.as_mut() {
            gemm(patch, g.kernels, hw, kernel, true, go, false, &mut d_cols, false);
            col2im_add(g, &d_cols, &mut di[s * in_plane..(s + 1) * in_plane]);
        }
    }
    ConvGrads { input: d_input, kernel: d_kernel, bias: d_bias }
}

/// 2×2 max pooling with stride 2 (trailing odd row/column dropped). Returns
/// output and the flat input index that produced each output element; the
/// first maximum in row-major window order wins ties.
pub(crate) fn maxpool2_forward(
    planes: usize,
    height: usize,
    width: usize,
    input: &[f32],
) -> (Vec<f32>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * height * width;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * width + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * width + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
