use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, FaceDataset, Result, VisionError};
use crate::tensor::{glorot_uniform, one_hot, read_params, write_params, Bindings, Optimizer, ParameterSet, Reduction, Tape, Tensor, Var};

/// One stage of the network. Convolutions are valid (no padding), stride 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv { kernels: usize, size: usize },
    Relu,
    MaxPool2,
    Flatten,
    Dense { units: usize },
}

/// Layer stack over single-channel `side`×`side` inputs. The output of the
/// final dense layer is the logit vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    pub side: usize,
    pub layers: Vec<Layer>,
}

impl CnnArch {
    /// conv32 3×3, relu, pool, conv64 3×3, relu, pool, dense128, relu,
    /// dense(classes).
    pub fn standard(side: usize, classes: usize) -> Self {
        use Layer::*;
        Self {
            side,
            layers: vec![
                Conv { kernels: 32, size: 3 },
                Relu,
                MaxPool2,
                Conv { kernels: 64, size: 3 },
                Relu,
                MaxPool2,
                Flatten,
                Dense { units: 128 },
                Relu,
                Dense { units: classes },
            ],
        }
    }

    /// Walks the stack, returning the parameter shapes of every layer (empty
    /// for parameter-free layers) and the class count.
    fn shapes(&self) -> Result<(Vec<Vec<Vec<usize>>>, usize)> {
        let bad = |m: String| VisionError::InvalidModel(m);
        // spatial [C,H,W] until flattened, then [F]
        let mut cur = vec![1, self.side, self.side];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push(match (l, cur.len()) {
                (Layer::Conv { kernels, size }, 3) => {
                    if *size == 0 || *size > cur[1] || *size > cur[2] || *kernels == 0 {
                        return Err(bad(format!("layer {i}: {size}x{size} kernel on {:?}", cur)));
                    }
                    let shapes = vec![vec![*kernels, cur[0], *size, *size], vec![*kernels]];
                    cur = vec![*kernels, cur[1] - size + 1, cur[2] - size + 1];
                    shapes
                }
                (Layer::MaxPool2, 3) => {
                    if cur[1] < 2 || cur[2] < 2 {
                        return Err(bad(format!("layer {i}: pooling a {}x{} map", cur[1], cur[2])));
                    }
                    cur = vec![cur[0], cur[1] / 2, cur[2] / 2];
                    vec![]
                }
                (Layer::Flatten, 3) => {
                    cur = vec![cur.iter().product()];
                    vec![]
                }
                (Layer::Dense { units }, 1) => {
                    let shapes = vec![vec![cur[0], *units], vec![*units]];
                    cur = vec![*units];
                    shapes
                }
                (Layer::Relu, _) => vec![],
                (l, _) => return Err(bad(format!("layer {i}: {l:?} cannot follow shape {cur:?}"))),
            });
        }
        match (self.layers.last(), cur.as_slice()) {
            (Some(Layer::Dense { .. }), &[c]) if c >= 2 => Ok((out, c)),
            _ => Err(bad("the stack must end in a dense layer with at least two units".into())),
        }
    }

    /// Index of the stage whose output GradCAM reads: the activation right
    /// after the last convolution, or the convolution itself.
    fn feature_stage(&self) -> Option<usize> {
        let last = self.layers.iter().rposition(|l| matches!(l, Layer::Conv { .. }))?;
        Some(if matches!(self.layers.get(last + 1), Some(Layer::Relu)) { last + 1 } else { last })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Sidecar record next to the parameter container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CnnMeta {
    arch: CnnArch,
    classes: usize,
    log: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: CnnArch,
    pub classes: usize,
    pub params: ParameterSet,
    pub log: Vec<EpochStats>,
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    /// Last convolutional activation, `[N,K,h,w]`.
    pub features: Option<Var>,
}

fn param_name(layer: usize, j: usize) -> String {
    format!("l{layer}.{}", if j == 0 { "weight" } else { "bias" })
}

impl CnnModel {
    /// Glorot-uniform weights and zero biases.
    pub fn new(arch: CnnArch, seed: u64) -> Result<Self> {
        Self::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn init(arch: CnnArch, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (shapes, classes) = arch.shapes()?;
        let mut params = ParameterSet::new();
        for (i, layer) in shapes.iter().enumerate() {
            if let [w, b] = layer.as_slice() {
                let (fan_in, fan_out) = match w.as_slice() {
                    [k, c, kh, kw] => (c * kh * kw, k * kh * kw),
                    [f, g] => (*f, *g),
                    _ => unreachable!("weights are rank 2 or 4"),
                };
                params.insert(param_name(i, 0), glorot_uniform(rng, w.clone(), fan_in, fan_out))?;
                params.insert(param_name(i, 1), Tensor::zeros(b.clone()))?;
            }
        }
        Ok(Self { arch, classes, params, log: Vec::new() })
    }

    pub fn pixels(&self) -> usize {
        self.arch.side * self.arch.side
    }

    /// Records the network on `tape` for `input` of shape `[N,1,side,side]`.
    pub fn forward(&self, tape: &mut Tape, b: &Bindings, input: Var) -> Result<Forward> {
        let feature_stage = self.arch.feature_stage();
        let mut h = input;
        let mut features = None;
        let mut slot = 0;
        for (i, l) in self.arch.layers.iter().enumerate() {
            h = match l {
                Layer::Conv { .. } => {
                    let v = tape.conv2d(h, b.get(slot), b.get(slot + 1), 1)?;
                    slot += 2;
                    v
                }
                Layer::Dense { .. } => {
                    let v = tape.dense(h, b.get(slot), b.get(slot + 1))?;
                    slot += 2;
                    v
                }
                Layer::Relu => tape.relu(h),
                Layer::MaxPool2 => tape.maxpool2(h)?,
                Layer::Flatten => tape.flatten(h)?,
            };
            if Some(i) == feature_stage {
                features = Some(h);
            }
        }
        Ok(Forward { logits: h, features })
    }

    /// Records `images` (flat, `side`² values each) as an input leaf.
    pub fn input_leaf(&self, tape: &mut Tape, images: &[f32], requires_grad: bool) -> Result<Var> {
        let p = self.pixels();
        if images.is_empty() || !images.len().is_multiple_of(p) {
            return Err(VisionError::InvalidParam(format!("{} values are not whole {p}-pixel images", images.len())));
        }
        let mut t = Tensor::new(vec![images.len() / p, 1, self.arch.side, self.arch.side], images.to_vec())?;
        t.set_requires_grad(requires_grad);
        Ok(tape.leaf(t))
    }

    /// Logits `[N, classes]`, evaluated in chunks of 64 images.
    pub fn logits(&self, images: &[f32]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(images.len() / self.pixels() * self.classes);
        for chunk in images.chunks(64 * self.pixels()) {
            let mut tape = Tape::new();
            let b = self.params.bind(&mut tape, false);
            let x = self.input_leaf(&mut tape, chunk, false)?;
            let f = self.forward(&mut tape, &b, x)?;
            out.extend_from_slice(tape.data(f.logits));
        }
        Ok(out)
    }

    /// Softmax probabilities, computed in f64 from the logits so each row
    /// sums to one within rounding of the stored f32 values.
    pub fn predict_proba(&self, images: &[f32]) -> Result<Vec<f32>> {
        let z = self.logits(images)?;
        Ok(softmax64(&z, self.classes))
    }

    pub fn predict(&self, images: &[f32]) -> Result<Vec<usize>> {
        Ok(self.logits(images)?.chunks(self.classes).map(argmax).collect())
    }

    pub fn accuracy(&self, ds: &FaceDataset) -> Result<f64> {
        let pred = self.predict(ds.images())?;
        Ok(pred.iter().zip(ds.labels()).filter(|(p, l)| p == l).count() as f64 / ds.len().max(1) as f64)
    }

    /// Parameters to `path`, architecture and training log to the `.json`
    /// sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_params(path, &self.params)?;
        let meta = CnnMeta { arch: self.arch.clone(), classes: self.classes, log: self.log.clone() };
        let json = path.with_extension("json");
        std::fs::write(&json, serde_json::to_string_pretty(&meta)?).map_err(io_err(&json))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = path.with_extension("json");
        let meta: CnnMeta = serde_json::from_str(&std::fs::read_to_string(&json).map_err(io_err(&json))?)?;
        let params = read_params(path)?;
        let (shapes, classes) = meta.arch.shapes()?;
        if classes != meta.classes {
            return Err(VisionError::InvalidModel(format!("{classes} outputs for {} classes", meta.classes)));
        }
        let expected: Vec<(String, &Vec<usize>)> = shapes
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().enumerate().map(move |(j, s)| (param_name(i, j), s)))
            .collect();
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        if names.len() != expected.len()
            || expected.iter().any(|(n, s)| params.get(n).map(|t| t.shape() != s.as_slice()).unwrap_or(true))
        {
            return Err(VisionError::InvalidModel("parameters disagree with the architecture".into()));
        }
        Ok(Self { arch: meta.arch, classes, params, log: meta.log })
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax64(z: &[f32], c: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(c) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| (v / s) as f32));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    /// Layer stack; `None` uses [`CnnArch::standard`] for the data.
    pub layers: Option<Vec<Layer>>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { epochs: 40, batch: 32, lr: 1e-3, seed: 0, layers: None }
    }
}

/// Adam on mean categorical cross-entropy with a seeded shuffle each epoch.
pub fn train_cnn(train: &FaceDataset, cfg: &CnnConfig) -> Result<CnnModel> {
    let distinct = {
        let mut l = train.labels().to_vec();
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    if distinct < 2 {
        return Err(VisionError::InvalidParam("training needs at least two classes".into()));
    }
    if cfg.epochs == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(VisionError::InvalidParam("epochs, batch and lr must be positive".into()));
    }
    let arch = match &cfg.layers {
        Some(layers) => CnnArch { side: train.side, layers: layers.clone() },
        None => CnnArch::standard(train.side, train.classes),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CnnModel::init(arch, &mut rng)?;
    if model.classes < train.classes {
        return Err(VisionError::InvalidModel(format!("{} outputs for {} classes", model.classes, train.classes)));
    }
    let p = train.pixels();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch_images = Vec::with_capacity(cfg.batch * p);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for idx in order.chunks(cfg.batch) {
            batch_images.clear();
            for &i in idx {
                batch_images.extend_from_slice(train.image(i));
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
            let mut tape = Tape::new();
            let b = model.params.bind(&mut tape, true);
            let x = model.input_leaf(&mut tape, &batch_images, false)?;
            let f = model.forward(&mut tape, &b, x)?;
            let loss = tape.softmax_cross_entropy(f.logits, one_hot(&labels, model.classes)?, Reduction::Mean)?;
            loss_sum += tape.value(loss).item() as f64 * idx.len() as f64;
            correct += tape
                .data(f.logits)
                .chunks(model.classes)
                .zip(&labels)
                .filter(|(z, &l)| argmax(z) == l)
                .count();
            tape.backward(loss)?;
            model.params.absorb_grads(&tape, &b)?;
            model.params.step(Optimizer::Adam, cfg.lr)?;
        }
        let stats = EpochStats { loss: loss_sum / train.len() as f64, accuracy: correct as f64 / train.len() as f64 };
        log::info!("cnn epoch {}: loss {:.4}, train accuracy {:.4}", epoch + 1, stats.loss, stats.accuracy);
        model.log.push(stats);
    }
    Ok(model)
}
