use super::kernels::{self, ConvGeometry};
use super::{shape_err, Result, Tensor, TensorError, LOG_EPS};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a per-row loss is reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl Reduction {
    fn factor(self, rows: usize) -> f32 {
        match self {
            Reduction::Mean => 1.0 / rows as f32,
            Reduction::Sum => 1.0,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp { input: Var, lo: f32, hi: f32 },
    Dense { input: Var, weight: Var, bias: Var },
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeometry, cols: Vec<f32> },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Softmax(Var),
    CrossEntropy { probs: Var, targets: Vec<f32>, scale: f32 },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<f32>, active: Vec<f32>, scale: f32 },
    BinaryCrossEntropy { probs: Var, targets: Vec<f32>, scale: f32 },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed operations. Operands always precede the
/// operations that consume them, so reverse order is a valid topological
/// order for the backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

fn rows_cols(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err(op, format!("expected rank-2 input, got {s:?}"))),
    }
}

fn acc(slot: &mut Option<Vec<f32>>, g: &[f32]) {
    match slot {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn acc_owned(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(&g) {
                *e += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients
    /// flow into it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        self.unary(x, |v| v * factor, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum::<f32>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f32>() / d.len().max(1) as f32;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Collapses all but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let rows = *shape.first().ok_or_else(|| shape_err("flatten", "rank-0 input"))?;
        let cols = shape[1..].iter().product();
        self.reshape(x, vec![rows, cols])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Natural logarithm with the argument clamped below at [`LOG_EPS`].
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(LOG_EPS).ln(), Op::Log(x))
    }

    /// Elementwise clamp; the gradient passes through where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { input: x, lo, hi })
    }

    /// Affine map `input[N,F] · weight[F,G] + bias[G]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, f) = rows_cols("dense", self.value(input))?;
        let (wf, g) = rows_cols("dense", self.value(weight))?;
        if wf != f {
            return Err(shape_err("dense", format!("input has {f} features, weight expects {wf}")));
        }
        if self.shape(bias) != [g] {
            return Err(shape_err("dense", format!("bias shape {:?}, expected [{g}]", self.shape(bias))));
        }
        let mut out = vec![0.0; n * g];
        let b = self.data(bias);
        for row in out.chunks_mut(g) {
            row.copy_from_slice(b);
        }
        kernels::gemm(n, f, g, self.data(input), false, self.data(weight), false, &mut out, true);
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![n, g], out)?, Op::Dense { input, weight, bias }, rg))
    }

    /// Valid convolution of `input[N,C,H,W]` with `kernel[K,C,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let (n, c, h, w) = match self.shape(input) {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(shape_err("conv2d", format!("input must be [N,C,H,W], got {s:?}"))),
        };
        let (k, kc, kh, kw) = match self.shape(kernel) {
            [k, kc, kh, kw] => (*k, *kc, *kh, *kw),
            s => return Err(shape_err("conv2d", format!("kernel must be [K,C,kh,kw], got {s:?}"))),
        };
        if kc != c {
            return Err(shape_err("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} does not fit input {h}x{w}")));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        if self.shape(bias) != [k] {
            return Err(shape_err("conv2d", format!("bias shape {:?}, expected [{k}]", self.shape(bias))));
        }
        let geom = ConvGeometry { batch: n, channels: c, height: h, width: w, kernels: k, kh, kw, stride };
        let (out, cols) = kernels::conv2d_forward(&geom, self.data(input), self.data(kernel), self.data(bias));
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        let cols = if self.rg(kernel) { cols } else { Vec::new() };
        let t = Tensor::new(vec![n, k, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(t, Op::Conv2d { input, kernel, bias, geom, cols }, rg))
    }

    /// 2×2 max pooling, stride 2, over the last two axes of a rank-4 tensor.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = match self.shape(input) {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(shape_err("maxpool2", format!("input must be [N,C,H,W], got {s:?}"))),
        };
        if h < 2 || w < 2 {
            return Err(shape_err("maxpool2", format!("spatial size {h}x{w} below 2x2")));
        }
        let (out, argmax) = kernels::maxpool2_forward(n * c, h, w, self.data(input));
        let rg = self.rg(input);
        let t = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        Ok(self.push(t, Op::MaxPool2 { input, argmax }, rg))
    }

    /// Row-wise softmax over the last axis of `[N,C]`, shifted by the row max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (n, c) = rows_cols("softmax", self.value(x))?;
        let probs = softmax_rows(self.data(x), c);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c], probs)?, Op::Softmax(x), rg))
    }

    /// Categorical cross-entropy of probabilities `[N,C]` against dense target
    /// weights `[N,C]` (one-hot rows for hard labels).
    pub fn cross_entropy(&mut self, probs: Var, targets: Vec<f32>, reduction: Reduction) -> Result<Var> {
        let (n, c) = rows_cols("cross_entropy", self.value(probs))?;
        if targets.len() != n * c {
            return Err(shape_err("cross_entropy", format!("targets hold {}, expected {}", targets.len(), n * c)));
        }
        let scale = reduction.factor(n);
        let loss: f32 = self
            .data(probs)
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| if t != 0.0 { -t * p.max(LOG_EPS).ln() } else { 0.0 })
            .sum::<f32>()
            * scale;
        let rg = self.rg(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, targets, scale }, rg))
    }

    pub fn cross_entropy_index(&mut self, probs: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
        let (_, c) = rows_cols("cross_entropy", self.value(probs))?;
        let targets = one_hot(labels, c)?;
        self.cross_entropy(probs, targets, reduction)
    }

    /// Cross-entropy computed directly from logits through a stable
    /// log-softmax. Log-probabilities are clamped at `ln(LOG_EPS)`; clamped
    /// entries contribute no gradient.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<f32>, reduction: Reduction) -> Result<Var> {
        let (n, c) = rows_cols("softmax_cross_entropy", self.value(logits))?;
        if targets.len() != n * c {
            return Err(shape_err(
                "softmax_cross_entropy",
                format!("targets hold {}, expected {}", targets.len(), n * c),
            ));
        }
        let floor = LOG_EPS.ln();
        let z = self.data(logits);
        let mut probs = vec![0.0; n * c];
        let mut active = vec![0.0; n * c];
        let mut loss = 0.0f32;
        for r in 0..n {
            let row = &z[r * c..(r + 1) * c];
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f32>().ln();
            for j in 0..c {
                let lp = row[j] - lse;
                probs[r * c + j] = lp.exp();
                let t = targets[r * c + j];
                if t != 0.0 {
                    if lp > floor {
                        loss -= t * lp;
                        active[r * c + j] = t;
                    } else {
                        loss -= t * floor;
                    }
                }
            }
        }
        let scale = reduction.factor(n);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss * scale),
            Op::SoftmaxCrossEntropy { logits, probs, active, scale },
            rg,
        ))
    }

    /// Binary cross-entropy of probabilities against 0/1 (or soft) targets.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: Vec<f32>, reduction: Reduction) -> Result<Var> {
        let p = self.data(probs);
        if targets.len() != p.len() {
            return Err(shape_err("binary_cross_entropy", format!("targets hold {}, expected {}", targets.len(), p.len())));
        }
        let rows = self.shape(probs).first().copied().unwrap_or(1).max(1);
        let scale = reduction.factor(rows);
        let loss: f32 = p
            .iter()
            .zip(&targets)
            .map(|(&p, &y)| -(y * p.max(LOG_EPS).ln() + (1.0 - y) * (1.0 - p).max(LOG_EPS).ln()))
            .sum::<f32>()
            * scale;
        let rg = self.rg(probs);
        Ok(self.push(Tensor::scalar(loss), Op::BinaryCrossEntropy { probs, targets, scale }, rg))
    }

    /// Columns `start..end` of a `[N,C]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = rows_cols("slice_cols", self.value(x))?;
        if start >= end || end > c {
            return Err(shape_err("slice_cols", format!("range {start}..{end} outside {c} columns")));
        }
        let w = end - start;
        let d = self.data(x);
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&d[r * c + start..r * c + end]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, w], out)?, Op::SliceCols { input: x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_cols", "no inputs"))?;
        let (n, _) = rows_cols("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc) = rows_cols("concat_cols", self.value(p))?;
            if pn != n {
                return Err(shape_err("concat_cols", format!("row counts {n} vs {pn}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![n, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate additively
    /// across every use of a tensor; requires-grad leaves also receive a copy
    /// in their `grad` field.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        if !lt.item().is_finite() {
            return Err(TensorError::NonFinite("loss"));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                if let Some(g) = g {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(TensorError::NonFinite("backward"));
                    }
                }
                node.value.set_grad(g.clone())?;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    acc(&mut grads[a.0], g);
                }
                if self.rg(*b) {
                    acc(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    acc(&mut grads[a.0], g);
                }
                if self.rg(*b) {
                    acc_owned(&mut grads[b.0], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    acc_owned(&mut grads[a.0], g.iter().zip(db).map(|(g, y)| g * y).collect());
                }
                if self.rg(*b) {
                    acc_owned(&mut grads[b.0], g.iter().zip(da).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(x, f) => acc_owned(&mut grads[x.0], g.iter().map(|v| v * f).collect()),
            Op::Sum(x) => acc_owned(&mut grads[x.0], vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc_owned(&mut grads[x.0], vec![g[0] / n as f32; n]);
            }
            Op::Reshape(x) => acc(&mut grads[x.0], g),
            Op::Relu(x) => {
                let d = self.data(*x);
                acc_owned(&mut grads[x.0], g.iter().zip(d).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Tanh(x) => acc_owned(&mut grads[x.0], g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Sigmoid(x) => acc_owned(&mut grads[x.0], g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect()),
            Op::Log(x) => {
                let d = self.data(*x);
                acc_owned(
                    &mut grads[x.0],
                    g.iter().zip(d).map(|(g, &v)| if v > LOG_EPS { g / v } else { 0.0 }).collect(),
                );
            }
            Op::Clamp { input, lo, hi } => {
                let d = self.data(*input);
                acc_owned(
                    &mut grads[input.0],
                    g.iter().zip(d).map(|(g, &v)| if v >= *lo && v <= *hi { *g } else { 0.0 }).collect(),
                );
            }
            Op::Dense { input, weight, bias } => {
                let (n, f) = (self.shape(*input)[0], self.shape(*input)[1]);
                let gdim = self.shape(*weight)[1];
                if self.rg(*input) {
                    let mut dx = vec![0.0; n * f];
                    kernels::gemm(n, gdim, f, g, false, self.data(*weight), true, &mut dx, false);
                    acc_owned(&mut grads[input.0], dx);
                }
                if self.rg(*weight) {
                    let mut dw = vec![0.0; f * gdim];
                    kernels::gemm(f, n, gdim, self.data(*input), true, g, false, &mut dw, false);
                    acc_owned(&mut grads[weight.0], dw);
                }
                if self.rg(*bias) {
                    let mut db = vec![0.0; gdim];
                    for row in g.chunks(gdim) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc_owned(&mut grads[bias.0], db);
                }
            }
            Op::Conv2d { input, kernel, bias, geom, cols } => {
                let need = (self.rg(*input), self.rg(*kernel), self.rg(*bias));
                let r = kernels::conv2d_backward(geom, g, self.data(*kernel), cols, need);
                if let Some(d) = r.input {
                    acc_owned(&mut grads[input.0], d);
                }
                if let Some(d) = r.kernel {
                    acc_owned(&mut grads[kernel.0], d);
                }
                if let Some(d) = r.bias {
                    acc_owned(&mut grads[bias.0], d);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut d = vec![0.0; self.value(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    d[src] += gv;
                }
                acc_owned(&mut grads[input.0], d);
            }
            Op::Softmax(x) => {
                let c = node.value.shape()[1];
                let mut d = vec![0.0; out.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(out.chunks(c)).zip(g.chunks(c)) {
                    let dot: f32 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc_owned(&mut grads[x.0], d);
            }
            Op::CrossEntropy { probs, targets, scale } => {
                let p = self.data(*probs);
                let s = g[0] * scale;
                acc_owned(
                    &mut grads[probs.0],
                    p.iter().zip(targets).map(|(&p, &t)| if t != 0.0 { -s * t / p.max(LOG_EPS) } else { 0.0 }).collect(),
                );
            }
            Op::SoftmaxCrossEntropy { logits, probs, active, scale } => {
                let c = self.shape(*logits)[1];
                let s = g[0] * scale;
                let mut d = vec![0.0; probs.len()];
                for ((dr, pr), ar) in d.chunks_mut(c).zip(probs.chunks(c)).zip(active.chunks(c)) {
                    let mass: f32 = ar.iter().sum();
                    if mass == 0.0 {
                        continue;
                    }
                    for j in 0..c {
                        dr[j] = s * (mass * pr[j] - ar[j]);
                    }
                }
                acc_owned(&mut grads[logits.0], d);
            }
            Op::BinaryCrossEntropy { probs, targets, scale } => {
                let p = self.data(*probs);
                let s = g[0] * scale;
                acc_owned(
                    &mut grads[probs.0],
                    p.iter()
                        .zip(targets)
                        .map(|(&p, &y)| s * (-(y / p.max(LOG_EPS)) + (1.0 - y) / (1.0 - p).max(LOG_EPS)))
                        .collect(),
                );
            }
            Op::SliceCols { input, start } => {
                let (n, c) = (self.shape(*input)[0], self.shape(*input)[1]);
                let w = node.value.shape()[1];
                let mut d = vec![0.0; n * c];
                for r in 0..n {
                    d[r * c + start..r * c + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                acc_owned(&mut grads[input.0], d);
            }
            Op::ConcatCols(parts) => {
                let n = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc_owned(&mut grads[p.0], d);
                    }
                    offset += w;
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(z: &[f32], c: usize) -> Vec<f32> {
    let mut out = vec![0.0; z.len()];
    for (o, row) in out.chunks_mut(c).zip(z.chunks(c)) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0;
        for (oj, &v) in o.iter_mut().zip(row) {
            *oj = (v - m).exp();
            total += *oj;
        }
        for oj in o.iter_mut() {
            *oj /= total;
        }
    }
    out
}

/// Dense one-hot rows; rejects labels outside `0..classes`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Vec<f32>> {
    let mut t = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(TensorError::TargetOutOfRange { index: l, classes });
        }
        t[r * classes + l] = 1.0;
    }
    Ok(t)
}
