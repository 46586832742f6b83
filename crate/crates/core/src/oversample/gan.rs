//! Simplified conditional tabular GAN.
//!
//! Continuous columns are min-max scaled to [-1, 1] and generated through
//! tanh heads; categorical columns, the label included, get softmax heads
//! (Gumbel-softmax while training, argmax when sampling). A one-hot
//! condition on one categorical value is appended to the generator noise and
//! to the discriminator input, and real rows are drawn to match it
//! (training-by-sampling).

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{OversampleError, Result};
use crate::tabular::{ColumnKind, EncoderMap, Schema, Table};
use crate::tensor::{
    glorot_uniform, read_params, write_params, Bindings, Optimizer, ParameterSet, Reduction, Tape, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub epochs: usize,
    pub batch: usize,
    pub gen_dims: Vec<usize>,
    pub disc_dims: Vec<usize>,
    pub noise_dim: usize,
    pub lr: f32,
    /// Adam moment decay rates.
    pub betas: (f32, f32),
    /// Discriminator dropout rate while training.
    pub dropout: f32,
    /// Gumbel-softmax temperature of categorical heads during training.
    pub tau: f32,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self { epochs: 100, batch: 500, gen_dims: vec![256, 256], disc_dims: vec![256, 256], noise_dim: 128, lr: 2e-4, betas: (0.5, 0.9), dropout: 0.5, tau: 0.2, seed: 0 }
    }
}

/// Negative slope of the discriminator's leaky ReLU.
const DISC_LEAK: f32 = 0.2;

/// Per-column transform; one entry per feature column, then the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    Continuous { min: f32, max: f32 },
    Categorical { cardinality: usize },
}

impl ColumnTransform {
    fn width(&self) -> usize {
        match self {
            ColumnTransform::Continuous { .. } => 1,
            ColumnTransform::Categorical { cardinality } => *cardinality,
        }
    }
}

/// A categorical column available for conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondColumn {
    /// Index into the transform list.
    pub column: usize,
    /// First slot in the condition vector.
    pub offset: usize,
    /// Observed frequency of each value at fit time.
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub generator: f64,
    pub discriminator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanMeta {
    pub schema: Schema,
    pub encoder: Option<EncoderMap>,
    pub cardinalities: Vec<Option<usize>>,
    pub transforms: Vec<ColumnTransform>,
    pub cond: Vec<CondColumn>,
    pub noise_dim: usize,
    pub gen_dims: Vec<usize>,
    pub disc_dims: Vec<usize>,
    pub config: GanConfig,
    pub log: Vec<EpochLoss>,
}

impl GanMeta {
    /// Width of a transformed row.
    pub fn row_width(&self) -> usize {
        self.transforms.iter().map(ColumnTransform::width).sum()
    }

    pub fn cond_width(&self) -> usize {
        self.cond.iter().map(|c| c.counts.len()).sum()
    }

    fn slots(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.transforms
            .iter()
            .map(|t| {
                let s = (at, at + t.width());
                at = s.1;
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub meta: GanMeta,
    pub generator: ParameterSet,
    pub discriminator: ParameterSet,
}

fn mlp(rng: &mut ChaCha8Rng, prefix: &str, dims: &[usize]) -> Result<ParameterSet> {
    let mut set = ParameterSet::new();
    for (l, pair) in dims.windows(2).enumerate() {
        set.insert(format!("{prefix}{l}.weight"), glorot_uniform(rng, vec![pair[0], pair[1]], pair[0], pair[1]))?;
        set.insert(format!("{prefix}{l}.bias"), Tensor::zeros(vec![pair[1]]))?;
    }
    Ok(set)
}

/// Dense layers with ReLU between them and none after the last.
/// Inverted dropout applied after each hidden activation.
struct Dropout<'a> {
    rng: &'a mut ChaCha8Rng,
    rate: f32,
}

fn mlp_forward(
    tape: &mut Tape,
    b: &Bindings,
    layers: usize,
    input: Var,
    leak: f32,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var> {
    let mut h = input;
    for l in 0..layers {
        h = tape.dense(h, b.get(2 * l), b.get(2 * l + 1))?;
        if l + 1 < layers {
            if leak > 0.0 {
                // leaky(x) = relu(x) - leak * relu(-x)
                let pos = tape.relu(h);
                let neg = tape.scale(h, -1.0);
                let neg = tape.relu(neg);
                let neg = tape.scale(neg, leak);
                h = tape.sub(pos, neg)?;
            } else {
                h = tape.relu(h);
            }
            if let Some(d) = dropout.as_mut() {
                let keep = 1.0 - d.rate;
                let n = tape.value(h).numel();
                let mask: Vec<f32> = (0..n).map(|_| if d.rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect();
                let m = tape.constant(tape.shape(h).to_vec(), mask)?;
                h = tape.mul(h, m)?;
            }
        }
    }
    Ok(h)
}

fn fit_transforms(data: &Table) -> Vec<ColumnTransform> {
    let w = data.width();
    let mut out: Vec<ColumnTransform> = (0..w)
        .map(|c| match data.schema().kind(c) {
            ColumnKind::Categorical => ColumnTransform::Categorical { cardinality: data.cardinality(c).unwrap_or(1) },
            ColumnKind::Continuous => {
                let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                for r in data.rows() {
                    lo = lo.min(r[c]);
                    hi = hi.max(r[c]);
                }
                ColumnTransform::Continuous { min: lo, max: hi }
            }
        })
        .collect();
    out.push(ColumnTransform::Categorical { cardinality: 2 });
    out
}

/// Maps a continuous value into [-1, 1].
pub fn scale_continuous(x: f32, min: f32, max: f32) -> f32 {
    if max > min {
        (2.0 * (x as f64 - min as f64) / (max as f64 - min as f64) - 1.0) as f32
    } else {
        0.0
    }
}

/// Inverse of [`scale_continuous`], clamped to `[min, max]`.
pub fn unscale_continuous(t: f32, min: f32, max: f32) -> f32 {
    if max > min {
        let v = min as f64 + (t as f64 + 1.0) / 2.0 * (max as f64 - min as f64);
        (v as f32).clamp(min, max)
    } else {
        min
    }
}

impl GanModel {
    /// Transformed row `i` of `data`: scaled continuous values and one-hot
    /// categorical blocks, the label last.
    pub fn transform_row(&self, data: &Table, i: usize, out: &mut Vec<f32>) {
        let row = data.row(i);
        for (c, t) in self.meta.transforms.iter().enumerate() {
            let v = if c < row.len() { row[c] } else { data.label(i) as f32 };
            match *t {
                ColumnTransform::Continuous { min, max } => out.push(scale_continuous(v, min, max)),
                ColumnTransform::Categorical { cardinality } => {
                    let code = v as usize;
                    out.extend((0..cardinality).map(|k| if k == code { 1.0 } else { 0.0 }));
                }
            }
        }
    }

    /// Decodes generator head outputs (tanh values and categorical scores)
    /// back to encoded features and a label.
    pub fn inverse_row(&self, row: &[f32], features: &mut Vec<f32>) -> u8 {
        let slots = self.meta.slots();
        let last = self.meta.transforms.len() - 1;
        let mut label = 0;
        for (c, (t, &(a, b))) in self.meta.transforms.iter().zip(&slots).enumerate() {
            let v = match *t {
                ColumnTransform::Continuous { min, max } => unscale_continuous(row[a].clamp(-1.0, 1.0), min, max),
                ColumnTransform::Categorical { .. } => argmax(&row[a..b]) as f32,
            };
            if c == last {
                label = v as u8;
            } else {
                features.push(v);
            }
        }
        label
    }

    /// Discriminator probability for `[N, row_width + cond_width]` inputs.
    pub fn discriminator_forward(&self, tape: &mut Tape, b: &Bindings, input: Var) -> Result<Var> {
        self.discriminator_train(tape, b, input, None)
    }

    fn discriminator_train(&self, tape: &mut Tape, b: &Bindings, input: Var, dropout: Option<Dropout<'_>>) -> Result<Var> {
        let leak = DISC_LEAK;
        let logit = mlp_forward(tape, b, self.meta.disc_dims.len() + 1, input, leak, dropout)?;
        Ok(tape.sigmoid(logit))
    }

    /// Generator pass on `[N, noise_dim + cond_width]` inputs. Returns the raw
    /// head outputs and the activated row: tanh for continuous slots,
    /// softmax of `(logits + gumbel) / tau` for categorical ones when
    /// `gumbel` is given, plain softmax otherwise.
    pub fn generator_forward(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        input: Var,
        gumbel: Option<(&[f32], f32)>,
    ) -> Result<(Var, Var)> {
        let raw = mlp_forward(tape, b, self.meta.gen_dims.len() + 1, input, 0.0, None)?;
        let n = tape.shape(raw)[0];
        let width = self.meta.row_width();
        let mut parts = Vec::with_capacity(self.meta.transforms.len());
        for (t, (a, bnd)) in self.meta.transforms.iter().zip(self.meta.slots()) {
            let s = tape.slice_cols(raw, a, bnd)?;
            let act = match t {
                ColumnTransform::Continuous { .. } => tape.tanh(s),
                ColumnTransform::Categorical { .. } => match gumbel {
                    Some((g, tau)) => {
                        let w = bnd - a;
                        let mut noise = Vec::with_capacity(n * w);
                        for r in 0..n {
                            noise.extend_from_slice(&g[r * width + a..r * width + bnd]);
                        }
                        let gv = tape.constant(vec![n, w], noise)?;
                        let z = tape.add(s, gv)?;
                        let z = tape.scale(z, 1.0 / tau);
                        tape.softmax(z)?
                    }
                    None => tape.softmax(s)?,
                },
            };
            parts.push(act);
        }
        let row = tape.concat_cols(&parts)?;
        Ok((raw, row))
    }

    pub fn log(&self) -> &[EpochLoss] {
        &self.meta.log
    }

    /// Writes both networks to one parameter container at `path` and the
    /// transform record to the `.json` sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut all = ParameterSet::new();
        for (prefix, set) in [("generator.", &self.generator), ("discriminator.", &self.discriminator)] {
            for p in set.iter() {
                all.insert(format!("{prefix}{}", p.name), p.value.clone())?;
            }
        }
        write_params(path, &all)?;
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: GanMeta = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        let all = read_params(path)?;
        let (mut generator, mut discriminator) = (ParameterSet::new(), ParameterSet::new());
        for p in all.iter() {
            if let Some(name) = p.name.strip_prefix("generator.") {
                generator.insert(name, p.value.clone())?;
            } else if let Some(name) = p.name.strip_prefix("discriminator.") {
                discriminator.insert(name, p.value.clone())?;
            } else {
                return Err(OversampleError::InvalidModel(format!("unexpected parameter `{}`", p.name)));
            }
        }
        let model = GanModel { meta, generator, discriminator };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let m = &self.meta;
        let gen_in = m.noise_dim + m.cond_width();
        let out_dim = |set: &ParameterSet, name: String| set.get(&name).map(|t| t.shape()[0]);
        let g_first = self.generator.get("g0.weight").map(|t| t.shape()[0]);
        let d_first = self.discriminator.get("d0.weight").map(|t| t.shape()[0]);
        if g_first != Some(gen_in)
            || d_first != Some(m.row_width() + m.cond_width())
            || out_dim(&self.generator, format!("g{}.bias", m.gen_dims.len())) != Some(m.row_width())
            || out_dim(&self.discriminator, format!("d{}.bias", m.disc_dims.len())) != Some(1)
        {
            return Err(OversampleError::InvalidModel("network shapes disagree with the transform record".into()));
        }
        Ok(())
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn gumbel_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let u: f32 = rng.random_range(f32::EPSILON..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Condition sampler: a uniformly chosen conditioning column, then one of
/// its values by `weights`.
struct CondSampler {
    columns: Vec<(usize, usize, WeightedIndex<f64>)>,
    width: usize,
}

impl CondSampler {
    fn new(cond: &[CondColumn], log_frequency: bool) -> Self {
        let columns = cond
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let w: Vec<f64> =
                    c.counts.iter().map(|&n| if log_frequency { (n as f64 + 1.0).ln() * f64::from(n > 0) } else { n as f64 }).collect();
                WeightedIndex::new(&w).ok().map(|d| (i, c.offset, d))
            })
            .collect();
        Self { columns, width: cond.iter().map(|c| c.counts.len()).sum() }
    }

    /// Fills `out` (n x width) and returns the chosen (cond column, value)
    /// per row.
    fn draw(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f32>) -> Vec<(usize, usize)> {
        out.clear();
        out.resize(n * self.width, 0.0);
        if self.columns.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|r| {
                let (ci, off, d) = &self.columns[rng.random_range(0..self.columns.len())];
                let v = d.sample(rng);
                out[r * self.width + off + v] = 1.0;
                (*ci, v)
            })
            .collect()
    }
}

/// Trains the conditional GAN. Each batch takes one discriminator step on
/// real-vs-generated binary cross-entropy, then one generator step on the
/// non-saturating loss plus cross-entropy between the conditioned head and
/// its condition. Both use Adam.
pub fn train_tabular_gan(data: &Table, cfg: &GanConfig) -> Result<GanModel> {
    if data.is_empty() {
        return Err(OversampleError::Empty("GAN training data".into()));
    }
    if cfg.epochs == 0 || cfg.batch == 0 || cfg.noise_dim == 0 || !(cfg.lr > 0.0) || !(cfg.tau > 0.0) {
        return Err(OversampleError::InvalidConfig("epochs, batch, noise_dim, lr and tau must be positive".into()));
    }
    let n = data.len();
    let batch = if cfg.batch > n {
        log::info!("GAN batch {} exceeds {n} training rows; using {n}", cfg.batch);
        n
    } else {
        cfg.batch
    };
    let transforms = fit_transforms(data);
    let mut cond = Vec::new();
    let mut offset = 0;
    for (c, t) in transforms.iter().enumerate() {
        if let ColumnTransform::Categorical { cardinality } = *t {
            let mut counts = vec![0u64; cardinality];
            for i in 0..n {
                let v = if c < data.width() { data.row(i)[c] as usize } else { data.label(i) as usize };
                counts[v] += 1;
            }
            cond.push(CondColumn { column: c, offset, counts });
            offset += cardinality;
        }
    }
    if cond.is_empty() {
        log::info!("no categorical columns; training an unconditional GAN");
    }
    let meta = GanMeta {
        schema: data.schema().clone(),
        encoder: data.encoder().cloned(),
        cardinalities: data.cardinalities().to_vec(),
        transforms,
        cond,
        noise_dim: cfg.noise_dim,
        gen_dims: cfg.gen_dims.clone(),
        disc_dims: cfg.disc_dims.clone(),
        config: cfg.clone(),
        log: Vec::new(),
    };
    let (row_w, cond_w) = (meta.row_width(), meta.cond_width());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gdims = vec![cfg.noise_dim + cond_w];
    gdims.extend(&cfg.gen_dims);
    gdims.push(row_w);
    let mut ddims = vec![row_w + cond_w];
    ddims.extend(&cfg.disc_dims);
    ddims.push(1);
    let generator = mlp(&mut rng, "g", &gdims)?;
    let discriminator = mlp(&mut rng, "d", &ddims)?;
    let mut model = GanModel { meta, generator, discriminator };

    let mut real_rows = Vec::with_capacity(n * row_w);
    for i in 0..n {
        model.transform_row(data, i, &mut real_rows);
    }
    // Rows holding each (cond column, value), for training-by-sampling.
    let by_value: Vec<Vec<Vec<usize>>> = model
        .meta
        .cond
        .iter()
        .map(|c| {
            let mut lists = vec![Vec::new(); c.counts.len()];
            for i in 0..n {
                let v = if c.column < data.width() { data.row(i)[c.column] as usize } else { data.label(i) as usize };
                lists[v].push(i);
            }
            lists
        })
        .collect();
    let sampler = CondSampler::new(&model.meta.cond, true);
    let slots = model.meta.slots();
    let steps = (n / batch).max(1);
    let mut cond_buf = Vec::new();

    for epoch in 0..cfg.epochs {
        let (mut g_sum, mut d_sum) = (0.0f64, 0.0f64);
        for _ in 0..steps {
            // Discriminator step.
            let picks = sampler.draw(&mut rng, batch, &mut cond_buf);
            let mut real = Vec::with_capacity(batch * (row_w + cond_w));
            for r in 0..batch {
                let i = match picks.get(r) {
                    Some(&(ci, v)) => {
                        let list = &by_value[ci][v];
                        list[rng.random_range(0..list.len())]
                    }
                    None => rng.random_range(0..n),
                };
                real.extend_from_slice(&real_rows[i * row_w..(i + 1) * row_w]);
                real.extend_from_slice(&cond_buf[r * cond_w..(r + 1) * cond_w]);
            }
            let noise = gen_input(&mut rng, batch, cfg.noise_dim, &cond_buf, cond_w);
            let gumbel = gumbel_vec(&mut rng, batch * row_w);
            let mut tape = Tape::new();
            let gb = model.generator.bind(&mut tape, false);
            let zin = tape.constant(vec![batch, cfg.noise_dim + cond_w], noise)?;
            let (_, fake) = model.generator_forward(&mut tape, &gb, zin, Some((&gumbel, cfg.tau)))?;
            let mut fake_in = Vec::with_capacity(batch * (row_w + cond_w));
            for (r, row) in tape.data(fake).chunks(row_w).enumerate() {
                fake_in.extend_from_slice(row);
                fake_in.extend_from_slice(&cond_buf[r * cond_w..(r + 1) * cond_w]);
            }
            let db = model.discriminator.bind(&mut tape, true);
            let rv = tape.constant(vec![batch, row_w + cond_w], real)?;
            let fv = tape.constant(vec![batch, row_w + cond_w], fake_in)?;
            let pr = model.discriminator_train(&mut tape, &db, rv, Some(Dropout { rng: &mut rng, rate: cfg.dropout }))?;
            let pf = model.discriminator_train(&mut tape, &db, fv, Some(Dropout { rng: &mut rng, rate: cfg.dropout }))?;
            let lr_ = tape.binary_cross_entropy(pr, vec![1.0; batch], Reduction::Mean)?;
            let lf = tape.binary_cross_entropy(pf, vec![0.0; batch], Reduction::Mean)?;
            let d_loss = tape.add(lr_, lf)?;
            d_sum += tape.value(d_loss).item() as f64;
            tape.backward(d_loss)?;
            model.discriminator.absorb_grads(&tape, &db)?;
            model.discriminator.step_with_betas(Optimizer::Adam, cfg.lr, cfg.betas)?;

            // Generator step with fresh conditions and noise.
            let picks = sampler.draw(&mut rng, batch, &mut cond_buf);
            let noise = gen_input(&mut rng, batch, cfg.noise_dim, &cond_buf, cond_w);
            let gumbel = gumbel_vec(&mut rng, batch * row_w);
            let mut tape = Tape::new();
            let gb = model.generator.bind(&mut tape, true);
            let zin = tape.constant(vec![batch, cfg.noise_dim + cond_w], noise)?;
            let (raw, fake) = model.generator_forward(&mut tape, &gb, zin, Some((&gumbel, cfg.tau)))?;
            let cv = tape.constant(vec![batch, cond_w], cond_buf.clone())?;
            let fin = tape.concat_cols(&[fake, cv])?;
            let db = model.discriminator.bind(&mut tape, false);
            let pf = model.discriminator_train(&mut tape, &db, fin, Some(Dropout { rng: &mut rng, rate: cfg.dropout }))?;
            let mut g_loss = tape.binary_cross_entropy(pf, vec![1.0; batch], Reduction::Mean)?;
            if !picks.is_empty() {
                for c in &model.meta.cond {
                    let (a, b) = slots[c.column];
                    let w = b - a;
                    let mut targets = Vec::with_capacity(batch * w);
                    for r in 0..batch {
                        targets.extend_from_slice(&cond_buf[r * cond_w + c.offset..r * cond_w + c.offset + w]);
                    }
                    let logits = tape.slice_cols(raw, a, b)?;
                    let ce = tape.softmax_cross_entropy(logits, targets, Reduction::Sum)?;
                    let ce = tape.scale(ce, 1.0 / batch as f32);
                    g_loss = tape.add(g_loss, ce)?;
                }
            }
            g_sum += tape.value(g_loss).item() as f64;
            tape.backward(g_loss)?;
            model.generator.absorb_grads(&tape, &gb)?;
            model.generator.step_with_betas(Optimizer::Adam, cfg.lr, cfg.betas)?;
        }
        let entry = EpochLoss { generator: g_sum / steps as f64, discriminator: d_sum / steps as f64 };
        if !(entry.generator.is_finite() && entry.discriminator.is_finite()) {
            return Err(OversampleError::NonFinite { epoch });
        }
        log::debug!("gan epoch {epoch}: G {:.4} D {:.4}", entry.generator, entry.discriminator);
        model.meta.log.push(entry);
    }
    Ok(model)
}

fn gen_input(rng: &mut ChaCha8Rng, n: usize, noise_dim: usize, cond: &[f32], cond_w: usize) -> Vec<f32> {
    let z = normal_vec(rng, n * noise_dim);
    let mut out = Vec::with_capacity(n * (noise_dim + cond_w));
    for r in 0..n {
        out.extend_from_slice(&z[r * noise_dim..(r + 1) * noise_dim]);
        out.extend_from_slice(&cond[r * cond_w..(r + 1) * cond_w]);
    }
    out
}

/// Draws `n` rows with fresh noise and conditions picked by fit-time value
/// frequencies, decoded to the training table's scales and codes.
pub fn sample_gan(gan: &GanModel, n: usize, seed: u64) -> Result<Table> {
    let meta = &gan.meta;
    let mut features = Vec::with_capacity(n * meta.schema.width());
    let mut labels = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = CondSampler::new(&meta.cond, false);
    let cond_w = meta.cond_width();
    let mut cond_buf = Vec::new();
    const CHUNK: usize = 1024;
    let mut done = 0;
    while done < n {
        let m = CHUNK.min(n - done);
        sampler.draw(&mut rng, m, &mut cond_buf);
        let input = gen_input(&mut rng, m, meta.noise_dim, &cond_buf, cond_w);
        let mut tape = Tape::new();
        let gb = gan.generator.bind(&mut tape, false);
        let zin = tape.constant(vec![m, meta.noise_dim + cond_w], input)?;
        let (_, rows) = gan.generator_forward(&mut tape, &gb, zin, None)?;
        for row in tape.data(rows).chunks(meta.row_width()) {
            labels.push(gan.inverse_row(row, &mut features));
        }
        done += m;
    }
    Ok(Table::new(meta.schema.clone(), features, labels, meta.encoder.clone())?.with_cardinalities(&meta.cardinalities)?)
}
