use serde::{Deserialize, Serialize};

use super::{CnnModel, Result, VisionError};
use crate::tensor::{Tape, Tensor};

/// Class localization map at input resolution, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub side: usize,
    pub class_id: usize,
    pub values: Vec<f32>,
}

/// 0/1 image-sized mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub side: usize,
    pub values: Vec<u8>,
}

impl BinaryMask {
    pub fn ones(side: usize) -> Self {
        Self { side, values: vec![1; side * side] }
    }

    pub fn zeros(side: usize) -> Self {
        Self { side, values: vec![0; side * side] }
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Half-pixel-centred bilinear resize of an `h`×`w` map to `out`×`out`,
/// clamping at the borders.
pub fn upsample_bilinear(map: &[f32], h: usize, w: usize, out: usize) -> Vec<f32> {
    let coord = |i: usize, n: usize| -> (usize, usize, f32) {
        let s = ((i as f32 + 0.5) * n as f32 / out as f32 - 0.5).clamp(0.0, (n - 1) as f32);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f32)
    };
    let mut res = Vec::with_capacity(out * out);
    for oy in 0..out {
        let (y0, y1, fy) = coord(oy, h);
        for ox in 0..out {
            let (x0, x1, fx) = coord(ox, w);
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bot = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            res.push(top * (1.0 - fy) + bot * fy);
        }
    }
    res
}

fn normalize(v: &mut [f32]) {
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if hi <= 0.0 {
        v.fill(0.0);
    } else if hi > lo {
        for x in v.iter_mut() {
            *x = (*x - lo) / (hi - lo);
        }
    } else {
        v.fill(1.0);
    }
}

/// GradCAM for one image; see [`gradcam_batch`].
pub fn gradcam(model: &CnnModel, image: &[f32], class_id: usize) -> Result<Heatmap> {
    Ok(gradcam_batch(model, image, &[class_id])?.remove(0))
}

/// Channel weights are the spatial mean of the class logit's gradient over
/// each last-convolution channel; the map is the ReLU of the weighted
/// channel sum, bilinearly resized to the input and min-max normalized.
/// A map that is zero everywhere stays zero.
pub fn gradcam_batch(model: &CnnModel, images: &[f32], classes: &[usize]) -> Result<Vec<Heatmap>> {
    let p = model.pixels();
    if images.len() != classes.len() * p {
        return Err(VisionError::InvalidParam(format!("{} classes for {} pixel values", classes.len(), images.len())));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= model.classes) {
        return Err(VisionError::InvalidParam(format!("class {c} outside 0..{}", model.classes)));
    }
    let mut out = Vec::with_capacity(classes.len());
    for (chunk, cls) in images.chunks(64 * p).zip(classes.chunks(64)) {
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape, false);
        let x = model.input_leaf(&mut tape, chunk, true)?;
        let f = model.forward(&mut tape, &b, x)?;
        let a = f.features.ok_or_else(|| VisionError::InvalidModel("GradCAM needs a convolutional layer".into()))?;
        // Summing the selected logits keeps each image's gradient separate.
        let n = cls.len();
        let mut sel = vec![0.0; n * model.classes];
        for (i, &c) in cls.iter().enumerate() {
            sel[i * model.classes + c] = 1.0;
        }
        let sel = tape.leaf(Tensor::new(vec![n, model.classes], sel)?);
        let picked = tape.mul(f.logits, sel)?;
        let score = tape.sum(picked);
        tape.backward(score)?;
        let (k, h, w) = match tape.shape(a) {
            [_, k, h, w] => (*k, *h, *w),
            s => return Err(VisionError::InvalidModel(format!("feature map shape {s:?}"))),
        };
        let acts = tape.data(a);
        let zeros = vec![0.0; acts.len()];
        let grads = tape.grad(a).unwrap_or(&zeros);
        let plane = h * w;
        for (i, &c) in cls.iter().enumerate() {
            let mut raw = vec![0.0f32; plane];
            for ch in 0..k {
                let base = (i * k + ch) * plane;
                let g = &grads[base..base + plane];
                let alpha = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
                for (r, &av) in raw.iter_mut().zip(&acts[base..base + plane]) {
                    *r += (alpha * av as f64) as f32;
                }
            }
            for r in raw.iter_mut() {
                *r = r.max(0.0);
            }
            let mut values = upsample_bilinear(&raw, h, w, model.arch.side);
            normalize(&mut values);
            out.push(Heatmap { side: model.arch.side, class_id: c, values });
        }
    }
    Ok(out)
}

/// 1 where the heatmap is at least `t`, else 0.
pub fn threshold_mask(h: &Heatmap, t: f32) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(VisionError::InvalidParam(format!("threshold {t} outside [0, 1]")));
    }
    Ok(BinaryMask { side: h.side, values: h.values.iter().map(|&v| u8::from(v >= t)).collect() })
}
