// Naive f64 reference implementations used as finite-difference oracles.
// Written independently of the tape kernels: plain nested loops, no im2col,
// no shared helpers with the library.
#![allow(dead_code)]

pub const LOG_EPS: f64 = 1e-12;

pub fn conv2d(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 4], b: &[f64], stride: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let [kn, kc, kh, kw] = ks;
    assert_eq!(c, kc);
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![0.0; n * kn * oh * ow];
    for s in 0..n {
        for o in 0..kn {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let xi = ((s * c + ci) * h + y * stride + i) * w + xx * stride + j;
                                let ki = ((o * c + ci) * kh + i) * kw + j;
                                acc += x[xi] * k[ki];
                            }
                        }
                    }
                    out[((s * kn + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, [n, kn, oh, ow])
}

pub fn maxpool2(x: &[f64], xs: [usize; 4]) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[(p * h + 2 * y + dy) * w + 2 * xx + dx]);
                    }
                }
                out[(p * oh + y) * ow + xx] = m;
            }
        }
    }
    (out, [n, c, oh, ow])
}

pub fn dense(x: &[f64], n: usize, f: usize, wt: &[f64], g: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * g];
    for r in 0..n {
        for j in 0..g {
            let mut acc = b[j];
            for i in 0..f {
                acc += x[r * f + i] * wt[i * g + j];
            }
            out[r * g + j] = acc;
        }
    }
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

pub fn softmax(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Mean categorical cross-entropy of probabilities against index labels.
pub fn cross_entropy(p: &[f64], c: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    labels.iter().enumerate().map(|(r, &l)| -(p[r * c + l].max(LOG_EPS)).ln()).sum::<f64>() / n as f64
}

pub fn binary_cross_entropy(p: &[f64], y: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| -(y * p.max(LOG_EPS).ln() + (1.0 - y) * (1.0 - p).max(LOG_EPS).ln()))
        .sum::<f64>()
        / p.len() as f64
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error with an absolute floor: `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}
