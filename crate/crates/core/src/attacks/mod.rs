//! Image-space attacks on a [`CnnModel`]: fast gradient sign, the
//! GradCAM-masked targeted descent, and Carlini-Wagner, plus the paired
//! clean/attacked evaluation.
//!
//! Every attack works on a batch of images at once. Each image contributes
//! its own term to a summed loss, so its input gradient is the same as if it
//! were attacked alone.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{evaluate_multiclass, report_timestamp, AttackReport, Phase};
use crate::tensor::{Tape, Tensor};
use crate::vision::{gradcam_batch, io_err, threshold_mask, BinaryMask, CnnModel, FaceDataset, Result, VisionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Targeted,
    Cw,
}

impl AttackMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Targeted => "targeted",
            AttackMethod::Cw => "cw",
        }
    }
}

/// How targeted attacks choose the class to steer towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum TargetRule {
    /// `(true + 1) mod classes`.
    #[default]
    NextClass,
    /// Always `class`; images of that class fall back to the next class.
    Fixed { class: usize },
    /// Uniform over the other classes, seeded.
    RandomSeeded { seed: u64 },
}

impl TargetRule {
    pub fn targets(&self, labels: &[usize], classes: usize) -> Result<Vec<usize>> {
        let next = |l: usize| (l + 1) % classes;
        Ok(match *self {
            TargetRule::NextClass => labels.iter().map(|&l| next(l)).collect(),
            TargetRule::Fixed { class } => {
                if class >= classes {
                    return Err(VisionError::InvalidParam(format!("target class {class} outside 0..{classes}")));
                }
                labels.iter().map(|&l| if l == class { next(l) } else { class }).collect()
            }
            TargetRule::RandomSeeded { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                labels
                    .iter()
                    .map(|&l| {
                        let k = rng.random_range(0..classes - 1);
                        if k >= l {
                            k + 1
                        } else {
                            k
                        }
                    })
                    .collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackParams {
    /// FGSM strength.
    pub epsilon: f32,
    /// Targeted-attack iterations and step size.
    pub steps: usize,
    pub step_size: f32,
    /// Weight on the original-class cross-entropy in the targeted loss.
    pub lambda_orig: f32,
    /// Heatmap threshold for the targeted-attack mask.
    pub threshold: f32,
    /// CW trade-off constant, confidence margin, penalty norm and solver.
    pub c: f32,
    pub kappa: f32,
    pub norm: Norm,
    pub cw_steps: usize,
    pub cw_step_size: f32,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            steps: 500,
            step_size: 2e-2,
            lambda_orig: 1.0,
            threshold: 0.4,
            c: 1.0,
            kappa: 0.0,
            norm: Norm::L2,
            cw_steps: 1000,
            cw_step_size: 1e-2,
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VisionError::InvalidParam(m.into()));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a finite non-negative number");
        }
        if self.steps == 0 || self.cw_steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.step_size > 0.0 && self.cw_step_size > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.c > 0.0) || !(self.kappa >= 0.0) || !(self.lambda_orig >= 0.0) {
            return bad("c must be positive, kappa and lambda_orig non-negative");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialResult {
    pub true_label: usize,
    pub target: Option<usize>,
    pub original: Vec<f32>,
    /// `perturbed == clamp(original + delta, 0, 1)`.
    pub delta: Vec<f32>,
    pub perturbed: Vec<f32>,
    pub before: usize,
    pub after: usize,
    /// Targeted: `after == target`. Untargeted: `after != true_label`.
    pub success: bool,
    /// Loss before each update of an iterative attack.
    pub loss_trace: Vec<f32>,
    /// Norms of the applied change `perturbed - original`.
    pub l2: f64,
    pub linf: f64,
}

fn clamp01(x: &[f32], delta: &[f32]) -> Vec<f32> {
    x.iter().zip(delta).map(|(&a, &d)| (a + d).clamp(0.0, 1.0)).collect()
}

fn norms(a: &[f32], b: &[f32]) -> (f64, f64) {
    let (mut s, mut m) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let d = (x as f64 - y as f64).abs();
        s += d * d;
        m = m.max(d);
    }
    (s.sqrt(), m)
}

/// Logits and the input gradient of `sum(logits * G)`, where the callback
/// supplies `G`, the loss gradient with respect to the logits of a chunk
/// (`None` for no gradient). Chunked by 64 images.
///
/// Losses use exact log-softmax gradients computed in f64 from the logits
/// rather than the tape's floored cross-entropy: a confident model puts the
/// target's log-probability far below any floor, which would zero the very
/// gradient the attack needs.
fn logits_and_grad(
    model: &CnnModel,
    inputs: &[f32],
    mut logit_grad: impl FnMut(&[f32], usize) -> Option<Vec<f32>>,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let p = model.pixels();
    let mut logits = Vec::with_capacity(inputs.len() / p * model.classes);
    let mut grad = Vec::with_capacity(inputs.len());
    for (ci, chunk) in inputs.chunks(64 * p).enumerate() {
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape, false);
        let x = model.input_leaf(&mut tape, chunk, true)?;
        let f = model.forward(&mut tape, &b, x)?;
        let z = tape.data(f.logits).to_vec();
        match logit_grad(&z, ci * 64) {
            Some(g) => {
                let g = tape.leaf(Tensor::new(tape.shape(f.logits).to_vec(), g)?);
                let s = tape.mul(f.logits, g)?;
                let s = tape.sum(s);
                tape.backward(s)?;
                match tape.grad(x) {
                    Some(g) => grad.extend_from_slice(g),
                    None => grad.extend(std::iter::repeat_n(0.0, chunk.len())),
                }
            }
            None => grad.extend(std::iter::repeat_n(0.0, chunk.len())),
        }
        logits.extend(z);
    }
    Ok((logits, grad))
}

fn argmax64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax in f64.
fn softmax_rows64(z: &[f32], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(c) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn check_batch(model: &CnnModel, images: &[f32], labels: &[usize]) -> Result<()> {
    if labels.is_empty() || images.len() != labels.len() * model.pixels() {
        return Err(VisionError::InvalidParam(format!("{} labels for {} pixel values", labels.len(), images.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= model.classes) {
        return Err(VisionError::InvalidParam(format!("class {l} outside 0..{}", model.classes)));
    }
    Ok(())
}

fn finish(
    model: &CnnModel,
    images: &[f32],
    labels: &[usize],
    targets: Option<&[usize]>,
    deltas: Vec<f32>,
    traces: Vec<Vec<f32>>,
) -> Result<Vec<AdversarialResult>> {
    let p = model.pixels();
    let perturbed = clamp01(images, &deltas);
    let before = model.predict(images)?;
    let after = model.predict(&perturbed)?;
    Ok((0..labels.len())
        .zip(traces)
        .map(|(i, loss_trace)| {
            let r = i * p..(i + 1) * p;
            let (l2, linf) = norms(&perturbed[r.clone()], &images[r.clone()]);
            let target = targets.map(|t| t[i]);
            AdversarialResult {
                true_label: labels[i],
                target,
                original: images[r.clone()].to_vec(),
                delta: deltas[r.clone()].to_vec(),
                perturbed: perturbed[r].to_vec(),
                before: before[i],
                after: after[i],
                success: match target {
                    Some(t) => after[i] == t,
                    None => after[i] != labels[i],
                },
                loss_trace,
                l2,
                linf,
            }
        })
        .collect())
}

/// `eta = epsilon * sign(grad_x CCE(model(x), y))` with `sign(0) = 0`, from
/// one gradient evaluation.
pub fn fgsm(model: &CnnModel, images: &[f32], labels: &[usize], epsilon: f32) -> Result<Vec<AdversarialResult>> {
    check_batch(model, images, labels)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(VisionError::InvalidParam("epsilon must be a finite non-negative number".into()));
    }
    let c = model.classes;
    // d CCE / d z = softmax(z) - onehot(y)
    let (_, grad) = logits_and_grad(model, images, |z, offset| {
        let mut g = softmax_rows64(z, c);
        for (r, row) in g.chunks_mut(c).enumerate() {
            row[labels[offset + r]] -= 1.0;
        }
        Some(g.into_iter().map(|v| v as f32).collect())
    })?;
    let eta: Vec<f32> = grad
        .iter()
        .map(|&g| {
            if g > 0.0 {
                epsilon
            } else if g < 0.0 {
                -epsilon
            } else {
                0.0
            }
        })
        .collect();
    finish(model, images, labels, None, eta, vec![Vec::new(); labels.len()])
}

/// Per-row `logsumexp(z) - z[c]`, in f64.
fn row_cce(z: &[f32], c: usize) -> f64 {
    let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = m + z.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
    lse - z[c] as f64
}

/// Gradient descent on a masked perturbation, starting from zero:
/// `loss = CCE(target) - lambda_orig * CCE(original)` evaluated at
/// `clamp(x + delta * mask, 0, 1)`, for exactly `params.steps` updates of
/// size `params.step_size`, each followed by projection of `x + delta` onto
/// [0, 1]. The delta is zero outside the mask throughout.
pub fn targeted_masked_attack(
    model: &CnnModel,
    images: &[f32],
    masks: &[BinaryMask],
    original: &[usize],
    targets: &[usize],
    params: &AttackParams,
) -> Result<Vec<AdversarialResult>> {
    check_batch(model, images, original)?;
    check_batch(model, images, targets)?;
    params.validate()?;
    let p = model.pixels();
    if masks.len() != original.len() || masks.iter().any(|m| m.values.len() != p) {
        return Err(VisionError::InvalidParam("need one image-sized mask per image".into()));
    }
    if let Some(i) = (0..original.len()).find(|&i| original[i] == targets[i]) {
        return Err(VisionError::InvalidParam(format!("image {i}: target equals the original class")));
    }
    for (i, m) in masks.iter().enumerate() {
        if m.count() == 0 {
            log::warn!("image {i}: empty mask, the perturbation stays zero");
        }
    }
    let mask: Vec<f32> = masks.iter().flat_map(|m| m.as_f32()).collect();
    let n = original.len();
    let c = model.classes;
    let mut delta = vec![0.0f32; images.len()];
    let mut traces = vec![Vec::with_capacity(params.steps); n];
    let lambda = params.lambda_orig;
    for _ in 0..params.steps {
        let applied: Vec<f32> = delta.iter().zip(&mask).map(|(&d, &m)| d * m).collect();
        let x = clamp01(images, &applied);
        // d/dz [CCE_t - lambda CCE_o] = softmax(z) - onehot(t) - lambda (softmax(z) - onehot(o)).
        // The original-class term pushes only while the model still
        // predicts the original class; after that the target term alone
        // decides which class takes over.
        let (z, g) = logits_and_grad(model, &x, |z, offset| {
            let mut g = softmax_rows64(z, c);
            for (r, row) in g.chunks_mut(c).enumerate() {
                let (t, o) = (targets[offset + r], original[offset + r]);
                let w = if argmax64(row) == o { lambda as f64 } else { 0.0 };
                for v in row.iter_mut() {
                    *v *= 1.0 - w;
                }
                row[t] -= 1.0;
                row[o] += w;
            }
            Some(g.into_iter().map(|v| v as f32).collect())
        })?;
        for (i, trace) in traces.iter_mut().enumerate() {
            let zi = &z[i * c..(i + 1) * c];
            let loss = row_cce(zi, targets[i]) - lambda as f64 * row_cce(zi, original[i]);
            trace.push(loss as f32);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(crate::tensor::TensorError::NonFinite("targeted attack gradient").into());
        }
        for j in 0..delta.len() {
            if mask[j] != 0.0 {
                // Projecting back into the box leaves the forward value
                // unchanged and keeps boundary pixels movable.
                let d = delta[j] - params.step_size * g[j];
                delta[j] = (images[j] + d).clamp(0.0, 1.0) - images[j];
            }
        }
    }
    let applied: Vec<f32> = delta.iter().zip(&mask).map(|(&d, &m)| d * m).collect();
    finish(model, images, original, Some(targets), applied, traces)
}

/// Margin `max_{i != t} Z_i - Z_t` and the runner-up index.
fn margin(z: &[f32], t: usize) -> (f32, usize) {
    let mut best = if t == 0 { 1 } else { 0 };
    for (i, &v) in z.iter().enumerate() {
        if i != t && v > z[best] {
            best = i;
        }
    }
    (z[best] - z[t], best)
}

/// Minimizes `||delta||_2^2 + c * max(max_{i != t} Z_i - Z_t, -kappa)` (or
/// `||delta||_inf` in place of the squared L2 term) by gradient descent,
/// clamping `x + delta` into [0, 1] after every step. Returns the
/// smallest-norm iterate whose margin reached `-kappa` with the target on
/// top, or the final iterate when none did.
pub fn cw_attack(
    model: &CnnModel,
    images: &[f32],
    labels: &[usize],
    targets: &[usize],
    params: &AttackParams,
) -> Result<Vec<AdversarialResult>> {
    check_batch(model, images, labels)?;
    check_batch(model, images, targets)?;
    params.validate()?;
    let p = model.pixels();
    let c = model.classes;
    let n = labels.len();
    let mut delta = vec![0.0f32; images.len()];
    let mut best: Vec<Option<(f64, Vec<f32>)>> = vec![None; n];
    let mut traces = vec![Vec::with_capacity(params.cw_steps); n];
    let weight = params.c;
    let kappa = params.kappa;
    for step in 0..=params.cw_steps {
        let x = clamp01(images, &delta);
        let mut active = vec![false; n];
        let last = step == params.cw_steps;
        let (z, g) = logits_and_grad(model, &x, |z, offset| {
            let rows = z.len() / c;
            let mut sel = vec![0.0f32; rows * c];
            let mut any = false;
            for r in 0..rows {
                let i = offset + r;
                let (m, j) = margin(&z[r * c..(r + 1) * c], targets[i]);
                if m > -kappa {
                    active[i] = true;
                    any = true;
                    sel[r * c + j] = weight;
                    sel[r * c + targets[i]] = -weight;
                }
            }
            (any && !last).then_some(sel)
        })?;
        for i in 0..n {
            let zi = &z[i * c..(i + 1) * c];
            let (m, _) = margin(zi, targets[i]);
            let d = &delta[i * p..(i + 1) * p];
            let penalty = match params.norm {
                Norm::L2 => d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>(),
                Norm::Linf => d.iter().fold(0.0f64, |a, &v| a.max((v as f64).abs())),
            };
            if step < params.cw_steps {
                traces[i].push((penalty + weight as f64 * (m.max(-kappa)) as f64) as f32);
            }
            let on_top = crate::vision::cnn_argmax(zi) == targets[i];
            if m <= -kappa && on_top {
                let (l2, _) = norms(&x[i * p..(i + 1) * p], &images[i * p..(i + 1) * p]);
                if best[i].as_ref().is_none_or(|(b, _)| l2 < *b) {
                    best[i] = Some((l2, d.to_vec()));
                }
            }
        }
        if step == params.cw_steps {
            break;
        }
        let lr = params.cw_step_size;
        for i in 0..n {
            let r = i * p..(i + 1) * p;
            let d = &mut delta[r.clone()];
            let gi = if active[i] { &g[r.clone()] } else { &[][..] };
            match params.norm {
                Norm::L2 => {
                    for (j, v) in d.iter_mut().enumerate() {
                        *v -= lr * (2.0 * *v + gi.get(j).copied().unwrap_or(0.0));
                    }
                }
                Norm::Linf => {
                    let top = d.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
                    let ties = d.iter().filter(|v| top > 0.0 && v.abs() == top).count().max(1) as f32;
                    for (j, v) in d.iter_mut().enumerate() {
                        let pen = if top > 0.0 && v.abs() == top { v.signum() / ties } else { 0.0 };
                        *v -= lr * (pen + gi.get(j).copied().unwrap_or(0.0));
                    }
                }
            }
            for (v, &xi) in d.iter_mut().zip(&images[r]) {
                *v = (xi + *v).clamp(0.0, 1.0) - xi;
            }
        }
    }
    for (i, b) in best.into_iter().enumerate() {
        if let Some((_, d)) = b {
            delta[i * p..(i + 1) * p].copy_from_slice(&d);
        }
    }
    finish(model, images, labels, Some(targets), delta, traces)
}

/// Clean and attacked evaluation of `model` on `test`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionAttackOutcome {
    pub report: AttackReport,
    pub results: Vec<AdversarialResult>,
}

/// One JSON line per attacked image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    #[serde(rename = "true")]
    pub true_label: usize,
    pub target: Option<usize>,
    pub before: usize,
    pub after: usize,
    pub success: bool,
    pub l2: f64,
    pub linf: f64,
}

pub fn write_image_records(results: &[AdversarialResult], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for (index, r) in results.iter().enumerate() {
        let rec = ImageRecord {
            index,
            true_label: r.true_label,
            target: r.target,
            before: r.before,
            after: r.after,
            success: r.success,
            l2: r.l2,
            linf: r.linf,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(io_err(path))
}

/// Runs `method` over the whole test set. Targeted attacks use the mask
/// from the true class's heatmap at `params.threshold`. The report's
/// accuracy is the fraction still predicted as the true label. Its extras
/// hold the misclassification rate, mean perturbation norms and, for
/// targeted methods, the target success rate.
pub fn evaluate_vision_attack(
    model: &CnnModel,
    test: &FaceDataset,
    method: AttackMethod,
    params: &AttackParams,
    rule: TargetRule,
) -> Result<VisionAttackOutcome> {
    if test.is_empty() {
        return Err(VisionError::InvalidParam("empty test set".into()));
    }
    params.validate()?;
    let labels = test.labels();
    let classes = model.classes;
    let targets = rule.targets(labels, classes)?;
    let results = match method {
        AttackMethod::Fgsm => fgsm(model, test.images(), labels, params.epsilon)?,
        AttackMethod::Targeted => {
            let heatmaps = gradcam_batch(model, test.images(), labels)?;
            let masks = heatmaps.iter().map(|h| threshold_mask(h, params.threshold)).collect::<Result<Vec<_>>>()?;
            targeted_masked_attack(model, test.images(), &masks, labels, &targets, params)?
        }
        AttackMethod::Cw => cw_attack(model, test.images(), labels, &targets, params)?,
    };
    let clean_probs = model.predict_proba(test.images())?;
    let perturbed: Vec<f32> = results.iter().flat_map(|r| r.perturbed.iter().copied()).collect();
    let adv_probs = model.predict_proba(&perturbed)?;
    let before_pred: Vec<usize> = results.iter().map(|r| r.before).collect();
    let after_pred: Vec<usize> = results.iter().map(|r| r.after).collect();
    let before = evaluate_multiclass(&before_pred, labels, Some(&clean_probs), classes)?.with_phase(Phase::Before);
    let after = evaluate_multiclass(&after_pred, labels, Some(&adv_probs), classes)?.with_phase(Phase::After);

    let n = results.len() as f64;
    let mut extra = BTreeMap::new();
    extra.insert("misclassification_rate".into(), results.iter().filter(|r| r.after != r.true_label).count() as f64 / n);
    extra.insert("mean_l2".into(), results.iter().map(|r| r.l2).sum::<f64>() / n);
    extra.insert("mean_linf".into(), results.iter().map(|r| r.linf).sum::<f64>() / n);
    if method != AttackMethod::Fgsm {
        extra.insert("targeted_success_rate".into(), results.iter().filter(|r| r.success).count() as f64 / n);
    }
    // Through text, so f32 fields keep their short form (0.4, not 0.4000000059604645).
    let params: serde_json::Value =
        serde_json::from_str(&serde_json::to_string(params).expect("params serialize")).expect("params parse");
    let attack = serde_json::json!({
        "method": method.as_str(),
        "params": params,
        "target_rule": rule,
    });
    log::info!("{} attack: accuracy {:.4} -> {:.4}", method.as_str(), before.accuracy, after.accuracy);
    Ok(VisionAttackOutcome {
        report: AttackReport { model: "cnn".into(), before, after, attack, timestamp: report_timestamp(), extra },
        results,
    })
}
