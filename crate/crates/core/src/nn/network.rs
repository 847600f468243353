//! Three-layer scalar-input classifier and its Adam training loop.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const HIDDEN_1: usize = 100;
pub const HIDDEN_2: usize = 50;

/// One affine map `x W + b`, `W` stored `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn uniform(inputs: usize, outputs: usize, r: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Layer {
            weights: Array2::from_shape_fn((inputs, outputs), |_| r.random_range(-bound..bound)),
            bias: Array1::from_shape_fn(outputs, |_| r.random_range(-bound..bound)),
        }
    }

    fn zeros_like(other: &Layer) -> Self {
        Layer { weights: Array2::zeros(other.weights.raw_dim()), bias: Array1::zeros(other.bias.len()) }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Sigmoid, rectifier, softmax: `1 -> 100 -> 50 -> Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct NnParams {
    pub layers: [Layer; 3],
}

/// Activations kept for the backward pass.
struct Trace {
    input: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    log_probs: Array2<f64>,
}

impl NnParams {
    /// Fan-in scaled uniform initialization.
    pub fn init(num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 1 {
            return Err(Error::param("classifier needs at least one class"));
        }
        let mut r = rng::stream(seed, &[rng::purpose::TRAINING, 0]);
        Ok(NnParams {
            layers: [
                Layer::uniform(1, HIDDEN_1, &mut r),
                Layer::uniform(HIDDEN_1, HIDDEN_2, &mut r),
                Layer::uniform(HIDDEN_2, num_classes, &mut r),
            ],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.layers[2].bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    fn forward(&self, ys: &[f64]) -> Trace {
        let input = Array2::from_shape_vec((ys.len(), 1), ys.to_vec()).expect("column shape");
        let a1 = self.layers[0].apply(&input).mapv(sigmoid);
        let z2 = self.layers[1].apply(&a1);
        let a2 = z2.mapv(|v| v.max(0.0));
        let mut log_probs = self.layers[2].apply(&a2);
        for mut row in log_probs.rows_mut() {
            let lse = log_sum_exp(row.view());
            row.mapv_inplace(|v| v - lse);
        }
        Trace { input, a1, z2, a2, log_probs }
    }

    /// Log class posteriors `ln p(s | y)`, one row per input.
    pub fn log_posteriors(&self, ys: &[f64]) -> Array2<f64> {
        self.forward(ys).log_probs
    }

    pub fn posteriors(&self, ys: &[f64]) -> Array2<f64> {
        self.log_posteriors(ys).mapv(f64::exp)
    }

    /// Mean cross-entropy of `labels` given `ys`.
    pub fn loss(&self, ys: &[f64], labels: &[usize]) -> f64 {
        let lp = self.log_posteriors(ys);
        -labels.iter().enumerate().map(|(i, &c)| lp[[i, c]]).sum::<f64>() / ys.len() as f64
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, ys: &[f64], labels: &[usize]) -> (f64, NnParams) {
        let b = ys.len() as f64;
        let tr = self.forward(ys);
        let loss = -labels.iter().enumerate().map(|(i, &c)| tr.log_probs[[i, c]]).sum::<f64>() / b;

        let mut d3 = tr.log_probs.mapv(f64::exp);
        for (i, &c) in labels.iter().enumerate() {
            d3[[i, c]] -= 1.0;
        }
        d3 /= b;
        let g3 = Layer { weights: tr.a2.t().dot(&d3), bias: d3.sum_axis(Axis(0)) };

        let mut d2 = d3.dot(&self.layers[2].weights.t());
        Zip::from(&mut d2).and(&tr.z2).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let g2 = Layer { weights: tr.a1.t().dot(&d2), bias: d2.sum_axis(Axis(0)) };

        let mut d1 = d2.dot(&self.layers[1].weights.t());
        Zip::from(&mut d1).and(&tr.a1).for_each(|d, &a| *d *= a * (1.0 - a));
        let g1 = Layer { weights: tr.input.t().dot(&d1), bias: d1.sum_axis(Axis(0)) };

        (loss, NnParams { layers: [g1, g2, g3] })
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of the final iterations whose iterates are averaged into the
    /// returned parameters; 0 returns the last iterate.
    pub average_tail: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            batch_size: 256,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            average_tail: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::param("iterations and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::param("learning rate and epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("moment decay constants must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.average_tail) {
            return Err(Error::param("average_tail must lie in [0, 1]"));
        }
        Ok(())
    }
}

struct Adam {
    m: [Layer; 3],
    v: [Layer; 3],
    step: i32,
}

impl Adam {
    fn new(p: &NnParams) -> Self {
        let z = |k: usize| Layer::zeros_like(&p.layers[k]);
        Adam { m: [z(0), z(1), z(2)], v: [z(0), z(1), z(2)], step: 0 }
    }

    fn update(&mut self, params: &mut NnParams, grad: &NnParams, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
        let rule = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for k in 0..3 {
            Zip::from(&mut params.layers[k].weights)
                .and(&mut self.m[k].weights)
                .and(&mut self.v[k].weights)
                .and(&grad.layers[k].weights)
                .for_each(rule);
            Zip::from(&mut params.layers[k].bias)
                .and(&mut self.m[k].bias)
                .and(&mut self.v[k].bias)
                .and(&grad.layers[k].bias)
                .for_each(rule);
        }
    }
}

/// Minimizes the mean cross-entropy of `labels` given `ys` with Adam over
/// minibatches drawn uniformly with replacement. Returns the trained
/// parameters and the minibatch loss of every iteration.
///
/// Inputs are standardized during training and the affine map is folded into
/// the first layer afterwards, so the returned network takes raw samples.
pub fn train(
    ys: &[f64],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(NnParams, Vec<f64>)> {
    cfg.validate()?;
    if ys.is_empty() || ys.len() != labels.len() {
        return Err(Error::input("training data must be nonempty with one label per sample"));
    }
    if let Some(t) = ys.iter().position(|y| !y.is_finite()) {
        return Err(Error::input(format!("training sample {t} is not finite")));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(Error::input(format!("label {c} outside [0, {num_classes})")));
    }
    // train on standardized inputs, folded back into the first layer at the end
    let n = ys.len() as f64;
    let shift = ys.iter().sum::<f64>() / n;
    let spread = (ys.iter().map(|y| (y - shift).powi(2)).sum::<f64>() / n).sqrt();
    let spread = if spread > 0.0 { spread } else { 1.0 };
    let mut params = NnParams::init(num_classes, seed)?;
    let mut adam = Adam::new(&params);
    let mut r = rng::stream(seed, &[rng::purpose::TRAINING, 1]);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut batch_y = vec![0.0; cfg.batch_size];
    let mut batch_c = vec![0; cfg.batch_size];
    let tail = (cfg.average_tail * cfg.iterations as f64).round() as usize;
    let mut sum: Option<NnParams> = None;
    for iteration in 0..cfg.iterations {
        for (y, c) in batch_y.iter_mut().zip(batch_c.iter_mut()) {
            let i = r.random_range(0..ys.len());
            *y = (ys[i] - shift) / spread;
            *c = labels[i];
        }
        let (loss, grad) = params.loss_and_grad(&batch_y, &batch_c);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration, loss });
        }
        history.push(loss);
        adam.update(&mut params, &grad, cfg);
        if !params.is_finite() {
            return Err(Error::Divergence { iteration, loss: f64::NAN });
        }
        if iteration + tail >= cfg.iterations {
            match sum.as_mut() {
                None => sum = Some(params.clone()),
                Some(acc) => {
                    for (a, p) in acc.layers.iter_mut().zip(&params.layers) {
                        a.weights += &p.weights;
                        a.bias += &p.bias;
                    }
                }
            }
        }
    }
    if let Some(mut acc) = sum.filter(|_| tail > 1) {
        let n = tail as f64;
        for a in acc.layers.iter_mut() {
            a.weights /= n;
            a.bias /= n;
        }
        params = acc;
    }
    let first = &mut params.layers[0];
    first.weights /= spread;
    let w = first.weights.row(0).to_owned();
    first.bias.scaled_add(-shift, &w);
    Ok((params, history))
}

/// Serialized form of one layer, weights row-major `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&Layer> for LayerRecord {
    fn from(l: &Layer) -> Self {
        LayerRecord {
            inputs: l.weights.nrows(),
            outputs: l.weights.ncols(),
            weights: l.weights.iter().cloned().collect(),
            bias: l.bias.to_vec(),
        }
    }
}

impl TryFrom<&LayerRecord> for Layer {
    type Error = Error;

    fn try_from(r: &LayerRecord) -> Result<Self> {
        if r.bias.len() != r.outputs {
            return Err(Error::input(format!("bias has {} entries, expected {}", r.bias.len(), r.outputs)));
        }
        let weights = Array2::from_shape_vec((r.inputs, r.outputs), r.weights.clone())
            .map_err(|e| Error::input(format!("weight matrix: {e}")))?;
        Ok(Layer { weights, bias: Array1::from(r.bias.clone()) })
    }
}

impl NnParams {
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.layers.iter().map(LayerRecord::from).collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        let [a, b, c] = records else {
            return Err(Error::input(format!("expected 3 layers, found {}", records.len())));
        };
        if a.inputs != 1 || a.outputs != HIDDEN_1 || b.inputs != HIDDEN_1 || b.outputs != HIDDEN_2 || c.inputs != HIDDEN_2 {
            return Err(Error::input("layer shapes do not match 1 -> 100 -> 50 -> Q"));
        }
        let p = NnParams { layers: [a.try_into()?, b.try_into()?, c.try_into()?] };
        if !p.is_finite() {
            return Err(Error::input("network parameters must be finite"));
        }
        Ok(p)
    }
}
