use std::collections::BTreeMap;

use rand::Rng;

use super::{Result, Tape, Tensor, TensorError, Var};

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// A named trainable tensor with its optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    first_moment: Vec<f32>,
    second_moment: Vec<f32>,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let n = value.numel();
        Self { name, value, first_moment: vec![0.0; n], second_moment: vec![0.0; n] }
    }
}

/// Ordered, uniquely named collection of parameters plus the shared step
/// counter used for Adam bias correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
    step: u64,
}

/// Tape handles for every parameter of a set, in set order.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateName(name));
        }
        let i = self.params.len();
        self.index.insert(name.clone(), i);
        self.params.push(Parameter::new(name, value));
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.params[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let mut t = Tensor::new(p.value.shape().to_vec(), p.value.data().to_vec()).expect("valid parameter");
                t.set_requires_grad(trainable);
                tape.leaf(t)
            })
            .collect();
        Bindings { vars }
    }

    /// Copies gradients from a finished backward pass into the parameters.
    pub fn absorb_grads(&mut self, tape: &Tape, bindings: &Bindings) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bindings.vars) {
            let g = tape.grad(v).map(|g| g.to_vec());
            p.value.set_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.value.take_grad();
        }
    }

    /// Applies one optimizer update to every parameter, then clears the
    /// gradients. Fails before touching anything if any gradient is missing.
    pub fn step(&mut self, optimizer: Optimizer, lr: f32) -> Result<()> {
        self.step_with_betas(optimizer, lr, (ADAM_BETA1, ADAM_BETA2))
    }

    /// [`step`](Self::step) with explicit Adam moment decay rates.
    pub fn step_with_betas(&mut self, optimizer: Optimizer, lr: f32, (beta1, beta2): (f32, f32)) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.value.grad().is_none()) {
            return Err(TensorError::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in &mut self.params {
            let g = p.value.take_grad().expect("checked above");
            let data = p.value.data_mut();
            match optimizer {
                Optimizer::Sgd => {
                    for (w, g) in data.iter_mut().zip(&g) {
                        *w -= lr * g;
                    }
                }
                Optimizer::Adam => {
                    for (i, (w, &g)) in data.iter_mut().zip(&g).enumerate() {
                        let m = &mut p.first_moment[i];
                        let v = &mut p.second_moment[i];
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Glorot/Xavier uniform initialisation over `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}
