// Whole-network gradient checks: tape gradients of the f32 models against
// central differences of an f64 re-implementation built from the same
// parameter values. Needs `reference` mounted next to this module.
//
// A central difference straddling a ReLU kink or a max-pool switch measures
// a blend of two slopes, not the derivative. Each probe therefore records
// the activation pattern at x-h, x and x+h, and a coordinate whose pattern
// changes is replaced by a fresh draw.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use advforge::oversample::{train_tabular_gan, GanConfig};
use advforge::tabular::{synth_fraud, SynthFraudConfig};
use advforge::tensor::{one_hot, Reduction, Tape, Tensor};
use advforge::vision::{synth_faces, CnnArch, CnnModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::reference as r;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Below this magnitude errors are judged absolutely.
pub const FLOOR: f64 = 1e-3;

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Draws replaced because the difference interval crossed a kink.
    pub kinked: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl GradCheck {
    fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        let e = r::rel_err(analytic, numeric, FLOOR);
        self.checked += 1;
        self.worst = self.worst.max(e);
        if !(e <= TOLERANCE) {
            self.failures.push(format!("{what}: tape {analytic:e} vs fd {numeric:e} (rel {e:.2e})"));
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.kinked += other.kinked;
        self.worst = self.worst.max(other.worst);
        self.failures.extend(other.failures);
    }
}

/// Central difference of `eval(offset) -> (loss, pattern)`, or None when the
/// pattern differs anywhere on [-h, h].
fn smooth_diff(mut eval: impl FnMut(f64) -> (f64, u64)) -> Option<f64> {
    let (_, p0) = eval(0.0);
    let (up, pu) = eval(STEP);
    let (down, pd) = eval(-STEP);
    (pu == p0 && pd == p0).then(|| (up - down) / (2.0 * STEP))
}

/// Draws up to `want` accepted coordinates; `probe(i)` returns the tape
/// gradient and the smooth difference for coordinate `i`.
fn sample(
    out: &mut GradCheck,
    rng: &mut ChaCha8Rng,
    what: &str,
    len: usize,
    want: usize,
    mut probe: impl FnMut(usize) -> (f64, Option<f64>),
) {
    let mut got = 0;
    for _ in 0..want * 20 {
        if got == want {
            break;
        }
        let i = rng.random_range(0..len);
        match probe(i) {
            (analytic, Some(fd)) => {
                out.record(format!("{what}[{i}]"), analytic, fd);
                got += 1;
            }
            (_, None) => out.kinked += 1,
        }
    }
    if got < want {
        out.failures.push(format!("{what}: only {got} of {want} kink-free coordinates"));
    }
}

fn hash_signs(h: &mut DefaultHasher, v: &[f64]) {
    for chunk in v.chunks(64) {
        let mut bits = 0u64;
        for (k, &x) in chunk.iter().enumerate() {
            bits |= u64::from(x > 0.0) << k;
        }
        bits.hash(h);
    }
}

/// 2x2 max-pool of relu(x) over `c` planes of `h`x`w` (odd edges dropped),
/// with the winning offset of each window as the pattern (none when the
/// whole window is clipped to zero).
fn relu_pool(x: &[f64], c: usize, h: usize, w: usize, pat: &mut DefaultHasher) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (0.0, 4u8);
                for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = x[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                    if v > best.0 {
                        best = (v, k as u8);
                    }
                }
                out[(ch * oh + y) * ow + xx] = best.0;
                best.1.hash(pat);
            }
        }
    }
    out
}

/// One-row dense layer, input-major so the weight matrix streams in order.
fn dense_row(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let g = b.len();
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            for (o, &wv) in out.iter_mut().zip(&w[i * g..(i + 1) * g]) {
                *o += xi * wv;
            }
        }
    }
    out
}

// ---- CNN: conv32-relu-pool-conv64-relu-pool-dense128-relu-dense(classes)

struct Cnn {
    side: usize,
    classes: usize,
    label: usize,
    w: Vec<Vec<f64>>,
    k1: usize,
    k2: usize,
}

/// Activations of one pass; `c1` and `c2` are pre-ReLU convolution outputs.
#[derive(Clone)]
struct Acts {
    c1: Vec<f64>,
    p1: Vec<f64>,
    c2: Vec<f64>,
}

impl Cnn {
    fn s1(&self) -> usize {
        self.side - 2
    }
    fn q1(&self) -> usize {
        self.s1() / 2
    }
    fn s2(&self) -> usize {
        self.q1() - 2
    }

    fn conv1(&self, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        r::conv2d(x, [1, 1, self.side, self.side], w, [b.len(), 1, 3, 3], b, 1).0
    }

    fn conv2(&self, p1: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let q = self.q1();
        r::conv2d(p1, [1, p1.len() / (q * q), q, q], w, [b.len(), p1.len() / (q * q), 3, 3], b, 1).0
    }

    fn full(&self, x: &[f64], w: &[Vec<f64>]) -> Acts {
        let c1 = self.conv1(x, &w[0], &w[1]);
        let p1 = relu_pool(&c1, self.k1, self.s1(), self.s1(), &mut DefaultHasher::new());
        let c2 = self.conv2(&p1, &w[2], &w[3]);
        Acts { c1, p1, c2 }
    }

    /// Loss and activation pattern from the convolution outputs onward.
    fn finish(&self, a: &Acts, w: &[Vec<f64>]) -> (f64, u64) {
        let mut pat = DefaultHasher::new();
        hash_signs(&mut pat, &a.c1);
        relu_pool(&a.c1, self.k1, self.s1(), self.s1(), &mut pat);
        hash_signs(&mut pat, &a.c2);
        let p2 = relu_pool(&a.c2, self.k2, self.s2(), self.s2(), &mut pat);
        let d1 = dense_row(&p2, &w[4], &w[5]);
        hash_signs(&mut pat, &d1);
        let z = dense_row(&r::relu(&d1), &w[6], &w[7]);
        let loss = r::cross_entropy(&r::softmax(&z, self.classes), self.classes, &[self.label]);
        (loss, pat.finish())
    }

    /// First-layer parameter change confined to output channel `o`: redo
    /// that channel and add its effect on the second convolution.
    fn with_conv1_channel(&self, base: &Acts, x: &[f64], w: &[Vec<f64>], o: usize) -> Acts {
        let plane = self.s1() * self.s1();
        let c1o = self.conv1(x, &w[0][o * 9..o * 9 + 9], &w[1][o..o + 1]);
        let p1o = relu_pool(&c1o, 1, self.s1(), self.s1(), &mut DefaultHasher::new());
        let q = self.q1() * self.q1();
        let diff: Vec<f64> = p1o.iter().zip(&base.p1[o * q..(o + 1) * q]).map(|(a, b)| a - b).collect();
        let mut w2o = Vec::with_capacity(self.k2 * 9);
        for k in 0..self.k2 {
            let at = (k * self.k1 + o) * 9;
            w2o.extend_from_slice(&w[2][at..at + 9]);
        }
        let dc2 = self.conv2(&diff, &w2o, &vec![0.0; self.k2]);
        let mut a = base.clone();
        a.c1[o * plane..(o + 1) * plane].copy_from_slice(&c1o);
        a.p1[o * q..(o + 1) * q].copy_from_slice(&p1o);
        for (c, d) in a.c2.iter_mut().zip(dc2) {
            *c += d;
        }
        a
    }

    /// Input pixel `i` moved by `e`: the first convolution changes in a 3x3
    /// patch, which reaches the second only through the pooled cells it
    /// touches.
    fn with_input(&self, base: &Acts, i: usize, e: f64) -> Acts {
        let (py, px) = (i / self.side, i % self.side);
        let s1 = self.s1();
        let mut a = base.clone();
        for k in 0..self.k1 {
            for dy in 0..3 {
                for dx in 0..3 {
                    if py >= dy && px >= dx && py - dy < s1 && px - dx < s1 {
                        a.c1[(k * s1 + py - dy) * s1 + px - dx] += e * self.w[0][k * 9 + dy * 3 + dx];
                    }
                }
            }
        }
        a.p1 = relu_pool(&a.c1, self.k1, s1, s1, &mut DefaultHasher::new());
        let (q, s2) = (self.q1(), self.s2());
        for (j, (&new, &old)) in a.p1.iter().zip(&base.p1).enumerate() {
            let d = new - old;
            if d == 0.0 {
                continue;
            }
            let (ch, qy, qx) = (j / (q * q), j / q % q, j % q);
            for k in 0..self.k2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        if qy >= ky && qx >= kx && qy - ky < s2 && qx - kx < s2 {
                            a.c2[(k * s2 + qy - ky) * s2 + qx - kx] += d * self.w[2][((k * self.k1 + ch) * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
        }
        a
    }

    /// Second-layer parameter change confined to output channel `o`.
    fn with_conv2_channel(&self, base: &Acts, w: &[Vec<f64>], o: usize) -> Acts {
        let per = self.k1 * 9;
        let c2o = self.conv2(&base.p1, &w[2][o * per..(o + 1) * per], &w[3][o..o + 1]);
        let plane = self.s2() * self.s2();
        let mut a = base.clone();
        a.c2[o * plane..(o + 1) * plane].copy_from_slice(&c2o);
        a
    }
}

/// Standard 64x64, 40-class network from `seed` on one synthetic face,
/// cross-entropy against a seeded label; `per_group` accepted coordinates
/// in the input and in each of the four weight layers (a fifth of them
/// biases).
pub fn check_cnn(seed: u64, per_group: usize) -> GradCheck {
    let (side, classes) = (64, 40);
    let model = CnnModel::new(CnnArch::standard(side, classes), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let faces = synth_faces(seed);
    let pick = rng.random_range(0..faces.len());
    let x32 = faces.image(pick).to_vec();
    let label = rng.random_range(0..classes);

    let mut tape = Tape::new();
    let b = model.params.bind(&mut tape, true);
    let xv = model.input_leaf(&mut tape, &x32, true).unwrap();
    let f = model.forward(&mut tape, &b, xv).unwrap();
    let loss = tape.softmax_cross_entropy(f.logits, one_hot(&[label], classes).unwrap(), Reduction::Mean).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f32>> = (0..8).map(|i| tape.grad(b.get(i)).unwrap().to_vec()).collect();
    let gx = tape.grad(xv).unwrap().to_vec();
    let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();

    let w: Vec<Vec<f64>> = model.params.iter().map(|p| r::widen(p.value.data())).collect();
    let net = Cnn { side, classes, label, k1: w[1].len(), k2: w[3].len(), w };
    let x = r::widen(&x32);
    let base = net.full(&x, &net.w);
    let mut out = GradCheck::default();

    sample(&mut out, &mut rng, &format!("seed {seed} input"), x.len(), per_group, |i| {
        let fd = smooth_diff(|e| net.finish(&net.with_input(&base, i, e), &net.w));
        (gx[i] as f64, fd)
    });
    let nb = per_group / 5;
    let mut work = net.w.clone();
    for slot in 0..8 {
        let want = if slot % 2 == 1 { nb } else { per_group - nb };
        let what = format!("seed {seed} {}", names[slot]);
        sample(&mut out, &mut rng, &what, net.w[slot].len(), want, |i| {
            let fd = smooth_diff(|e| {
                work[slot][i] = net.w[slot][i] + e;
                let acts = match slot {
                    0 => net.with_conv1_channel(&base, &x, &work, i / 9),
                    1 => net.with_conv1_channel(&base, &x, &work, i),
                    2 => net.with_conv2_channel(&base, &work, i / (net.k1 * 9)),
                    3 => net.with_conv2_channel(&base, &work, i),
                    _ => base.clone(),
                };
                let res = net.finish(&acts, &work);
                work[slot][i] = net.w[slot][i];
                res
            });
            (grads[slot][i] as f64, fd)
        });
    }
    out
}

// ---- GAN discriminator: dense stack with leaky ReLU, sigmoid output

/// Discriminator of a briefly trained GAN (default hidden sizes), scored
/// with binary cross-entropy on a batch of random inputs.
pub fn check_discriminator(seed: u64, per_group: usize) -> GradCheck {
    let table = synth_fraud(&SynthFraudConfig { n: 120, n_continuous: 4, n_categorical: 2, fraud_rate: 0.4, seed }).unwrap();
    let cfg = GanConfig { epochs: 1, batch: 40, seed, ..Default::default() };
    let gan = train_tabular_gan(&table, &cfg).unwrap();
    let width = gan.meta.row_width() + gan.meta.cond_width();
    let n = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
    let x32: Vec<f32> = (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y32: Vec<f32> = (0..n).map(|i| (i % 2) as f32).collect();

    let mut tape = Tape::new();
    let b = gan.discriminator.bind(&mut tape, true);
    let xv = tape.leaf(Tensor::new(vec![n, width], x32.clone()).unwrap().with_grad());
    let p = gan.discriminator_forward(&mut tape, &b, xv).unwrap();
    let loss = tape.binary_cross_entropy(p, y32.clone(), Reduction::Mean).unwrap();
    tape.backward(loss).unwrap();
    let slots = gan.discriminator.len();
    let grads: Vec<Vec<f32>> = (0..slots).map(|i| tape.grad(b.get(i)).unwrap().to_vec()).collect();
    let gx = tape.grad(xv).unwrap().to_vec();

    let names: Vec<String> = gan.discriminator.iter().map(|p| p.name.clone()).collect();
    let w0: Vec<Vec<f64>> = gan.discriminator.iter().map(|p| r::widen(p.value.data())).collect();
    let shapes: Vec<Vec<usize>> = gan.discriminator.iter().map(|p| p.value.shape().to_vec()).collect();
    let layers = slots / 2;
    let y = r::widen(&y32);
    let eval = |w: &[Vec<f64>], x: &[f64]| -> (f64, u64) {
        let mut pat = DefaultHasher::new();
        let mut h = x.to_vec();
        for l in 0..layers {
            let (f, g) = (shapes[2 * l][0], shapes[2 * l][1]);
            h = r::dense(&h, n, f, &w[2 * l], g, &w[2 * l + 1]);
            if l + 1 < layers {
                hash_signs(&mut pat, &h);
                h = h.iter().map(|&v| if v > 0.0 { v } else { 0.2 * v }).collect();
            }
        }
        (r::binary_cross_entropy(&r::sigmoid(&h), &y), pat.finish())
    };
    let x = r::widen(&x32);
    let mut out = GradCheck::default();

    sample(&mut out, &mut rng, &format!("seed {seed} input"), x.len(), per_group, |i| {
        let fd = smooth_diff(|e| {
            let mut xe = x.clone();
            xe[i] += e;
            eval(&w0, &xe)
        });
        (gx[i] as f64, fd)
    });
    let nb = per_group / 5;
    for slot in 0..slots {
        let want = if slot % 2 == 1 { nb } else { per_group - nb };
        sample(&mut out, &mut rng, &format!("seed {seed} {}", names[slot]), w0[slot].len(), want, |i| {
            let fd = smooth_diff(|e| {
                let mut w = w0.clone();
                w[slot][i] += e;
                eval(&w, &x)
            });
            (grads[slot][i] as f64, fd)
        });
    }
    out
}
