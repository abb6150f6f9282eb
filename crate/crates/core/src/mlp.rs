//! Fully connected classifier: hidden blocks of Dense → BatchNorm → tanh
//! → Dropout, a two-unit softmax output, categorical cross-entropy with
//! L2 on hidden weights, and plain minibatch SGD with analytic gradients.
//!
//! The network is generic over the float type. `f64` is used wherever
//! gradients are checked numerically; `f32` roughly halves the cost of
//! the matrix products during cross-validation.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::domain::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Float types the network can be instantiated with.
pub trait Scalar: NdFloat + Serialize + DeserializeOwned {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Single,
    Double,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f32" | "single" => Ok(Precision::Single),
            "f64" | "double" => Ok(Precision::Double),
            other => Err(Error::InvalidConfig(format!("unknown precision {other:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

/// Where batch normalization sits inside a hidden block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    /// Dense → BatchNorm → tanh → Dropout
    NormThenActivate,
    /// Dense → tanh → BatchNorm → Dropout
    ActivateThenNorm,
}

impl FromStr for BlockOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "norm_then_activate" | "dense_bn_tanh_dropout" => Ok(BlockOrder::NormThenActivate),
            "activate_then_norm" | "dense_tanh_bn_dropout" => Ok(BlockOrder::ActivateThenNorm),
            other => Err(Error::InvalidConfig(format!("unknown block order {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    /// Seeds epoch shuffles and dropout masks.
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    /// Weights start uniform in [-init_range, init_range].
    pub init_range: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub block_order: BlockOrder,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 100,
            epochs: 60,
            dropout_rate: 0.3,
            l2_lambda: 1e-4,
            seed: 0,
            hidden_sizes: vec![400, 400],
            init_range: 0.05,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            block_order: BlockOrder::NormThenActivate,
            precision: Precision::Single,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.l2_lambda >= 0.0) {
            return bad("learning_rate and l2_lambda must be non-negative".into());
        }
        if !(self.init_range > 0.0) || !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("init_range and bn_epsilon must be positive, bn_momentum in [0, 1]".into());
        }
        Ok(())
    }

    /// Applies `mlp.*` keys.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read_into("mlp.learning_rate", &mut self.learning_rate)?;
        kv.read_into("mlp.batch_size", &mut self.batch_size)?;
        kv.read_into("mlp.epochs", &mut self.epochs)?;
        kv.read_into("mlp.dropout_rate", &mut self.dropout_rate)?;
        kv.read_into("mlp.l2_lambda", &mut self.l2_lambda)?;
        kv.read_into("mlp.init_range", &mut self.init_range)?;
        kv.read_into("mlp.bn_epsilon", &mut self.bn_epsilon)?;
        kv.read_into("mlp.bn_momentum", &mut self.bn_momentum)?;
        kv.read_into("mlp.block_order", &mut self.block_order)?;
        kv.read_into("mlp.precision", &mut self.precision)?;
        if let Some(sizes) = kv.get_list("mlp.hidden_sizes") {
            self.hidden_sizes = sizes
                .iter()
                .map(|s| s.parse().map_err(|_| Error::InvalidConfig(format!("mlp.hidden_sizes: {s:?}"))))
                .collect::<Result<_>>()?;
        }
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct DenseLayer<F> {
    /// in × out, applied as `x · W + b`.
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> DenseLayer<F> {
    fn uniform(inputs: usize, outputs: usize, range: f64, rng: &mut ChaCha8Rng) -> Self {
        let weights = Array2::from_shape_simple_fn((inputs, outputs), || F::of(rng.gen_range(-range..=range)));
        DenseLayer {
            weights,
            bias: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        x.dot(&self.weights) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct BatchNormLayer<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub epsilon: F,
    pub momentum: F,
}

impl<F: Scalar> BatchNormLayer<F> {
    fn new(units: usize, epsilon: f64, momentum: f64) -> Self {
        BatchNormLayer {
            gamma: Array1::ones(units),
            beta: Array1::zeros(units),
            running_mean: Array1::zeros(units),
            running_var: Array1::ones(units),
            epsilon: F::of(epsilon),
            momentum: F::of(momentum),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
#[serde(rename_all = "snake_case")]
pub enum Layer<F> {
    Dense(DenseLayer<F>),
    BatchNorm(BatchNormLayer<F>),
    Tanh,
    Dropout { rate: F },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct MlpModel<F> {
    pub input_dim: usize,
    pub layers: Vec<Layer<F>>,
    pub output: DenseLayer<F>,
    pub config: TrainConfig,
    /// Seed the weights were drawn from.
    pub init_seed: u64,
}

/// Per-layer values saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache<F> {
    Dense { input: Array2<F> },
    BatchNorm { xhat: Array2<F>, inv_std: Array1<F> },
    Tanh { output: Array2<F> },
    Dropout { mask: Option<Array2<F>> },
}

#[derive(Debug, Clone)]
pub struct Tape<F> {
    pub(crate) caches: Vec<Cache<F>>,
    hidden: Array2<F>,
    /// b × 2 softmax probabilities.
    pub probs: Array2<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad<F> {
    Dense { weights: Array2<F>, bias: Array1<F> },
    BatchNorm { gamma: Array1<F>, beta: Array1<F> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGrad<F>>,
    pub output_weights: Array2<F>,
    pub output_bias: Array1<F>,
}

impl<F: Scalar> Gradients<F> {
    /// Same order as [`MlpModel::flat_params`].
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Dense { weights, bias } => {
                    out.extend(weights.iter().copied());
                    out.extend(bias.iter().copied());
                }
                LayerGrad::BatchNorm { gamma, beta } => {
                    out.extend(gamma.iter().copied());
                    out.extend(beta.iter().copied());
                }
                LayerGrad::None => {}
            }
        }
        out.extend(self.output_weights.iter().copied());
        out.extend(self.output_bias.iter().copied());
        out
    }

    fn first_non_finite(&self) -> Option<String> {
        fn bad<'a, F: Scalar>(mut a: impl Iterator<Item = &'a F>) -> bool {
            a.any(|v: &F| !v.is_finite())
        }
        for (i, g) in self.layers.iter().enumerate() {
            let hit = match g {
                LayerGrad::Dense { weights, bias } => bad(weights.iter()) || bad(bias.iter()),
                LayerGrad::BatchNorm { gamma, beta } => bad(gamma.iter()) || bad(beta.iter()),
                LayerGrad::None => false,
            };
            if hit {
                return Some(format!("layer {i}"));
            }
        }
        if bad(self.output_weights.iter()) || bad(self.output_bias.iter()) {
            return Some("output layer".into());
        }
        None
    }
}

/// Builds the network with weights uniform in ±init_range and zero biases.
pub fn init_model<F: Scalar>(input_dim: usize, cfg: &TrainConfig, seed: u64) -> Result<MlpModel<F>> {
    if input_dim == 0 {
        return Err(Error::InvalidConfig("input_dim must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = seeded(seed);
    let mut layers = Vec::new();
    let mut width = input_dim;
    for &units in &cfg.hidden_sizes {
        layers.push(Layer::Dense(DenseLayer::uniform(width, units, cfg.init_range, &mut rng)));
        let bn = Layer::BatchNorm(BatchNormLayer::new(units, cfg.bn_epsilon, cfg.bn_momentum));
        match cfg.block_order {
            BlockOrder::NormThenActivate => {
                layers.push(bn);
                layers.push(Layer::Tanh);
            }
            BlockOrder::ActivateThenNorm => {
                layers.push(Layer::Tanh);
                layers.push(bn);
            }
        }
        layers.push(Layer::Dropout {
            rate: F::of(cfg.dropout_rate),
        });
        width = units;
    }
    let output = DenseLayer::uniform(width, 2, cfg.init_range, &mut rng);
    Ok(MlpModel {
        input_dim,
        layers,
        output,
        config: cfg.clone(),
        init_seed: seed,
    })
}

fn softmax_rows<F: Scalar>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn one_hot<F: Scalar>(labels: &[bool]) -> Array2<F> {
    Array2::from_shape_fn((labels.len(), 2), |(i, c)| {
        if (c == 1) == labels[i] {
            F::one()
        } else {
            F::zero()
        }
    })
}

impl<F: Scalar> MlpModel<F> {
    pub fn parameter_count(&self) -> usize {
        let dense = |d: &DenseLayer<F>| d.weights.len() + d.bias.len();
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => dense(d),
                Layer::BatchNorm(b) => b.gamma.len() + b.beta.len(),
                _ => 0,
            })
            .sum::<usize>()
            + dense(&self.output)
    }

    /// Trainable parameters: dense weights (row-major) and biases, batch
    /// norm gamma and beta, then the output layer.
    pub fn flat_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            match l {
                Layer::Dense(d) => {
                    out.extend(d.weights.iter().copied());
                    out.extend(d.bias.iter().copied());
                }
                Layer::BatchNorm(b) => {
                    out.extend(b.gamma.iter().copied());
                    out.extend(b.beta.iter().copied());
                }
                _ => {}
            }
        }
        out.extend(self.output.weights.iter().copied());
        out.extend(self.output.bias.iter().copied());
        out
    }

    pub fn set_flat_params(&mut self, params: &[F]) {
        assert_eq!(params.len(), self.parameter_count(), "parameter vector length");
        let mut it = params.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut F>| {
            for v in dst {
                *v = it.next().expect("length checked");
            }
        };
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    fill(&mut d.weights.iter_mut());
                    fill(&mut d.bias.iter_mut());
                }
                Layer::BatchNorm(b) => {
                    fill(&mut b.gamma.iter_mut());
                    fill(&mut b.beta.iter_mut());
                }
                _ => {}
            }
        }
        fill(&mut self.output.weights.iter_mut());
        fill(&mut self.output.bias.iter_mut());
    }

    /// Σ‖W‖² over hidden dense layers (output layer and all biases excluded).
    pub fn hidden_weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.weights.iter().map(|w| w.as_f64() * w.as_f64()).sum(),
                _ => 0.0,
            })
            .sum()
    }

    /// Inference forward pass: running batch-norm statistics, no dropout.
    pub fn forward_infer(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut h = x.to_owned();
        for l in &self.layers {
            h = match l {
                Layer::Dense(d) => d.forward(&h.view()),
                Layer::BatchNorm(b) => {
                    let scale = Zip::from(&b.gamma)
                        .and(&b.running_var)
                        .map_collect(|&g, &v| g / (v + b.epsilon).sqrt());
                    let shift = &b.beta - &(&b.running_mean * &scale);
                    h * &scale + &shift
                }
                Layer::Tanh => h.mapv_into(F::tanh),
                Layer::Dropout { .. } => h,
            };
        }
        let mut logits = self.output.forward(&h.view());
        softmax_rows(&mut logits);
        logits
    }

    /// Training forward pass. Batch norm uses batch statistics and
    /// updates its running averages; dropout masks are drawn from `rng`.
    pub fn forward_train(&mut self, x: &ArrayView2<F>, rng: &mut ChaCha8Rng) -> Result<Tape<F>> {
        let b = x.nrows();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let n = F::of(b as f64);
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    let out = d.forward(&h.view());
                    caches.push(Cache::Dense { input: h });
                    h = out;
                }
                Layer::BatchNorm(bn) => {
                    let mean = h.sum_axis(Axis(0)) / n;
                    let centered = &h - &mean;
                    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                    let inv_std = var.mapv(|v| F::one() / (v + bn.epsilon).sqrt());
                    let xhat = centered * &inv_std;
                    h = &xhat * &bn.gamma + &bn.beta;
                    let m = bn.momentum;
                    let one_minus = F::one() - m;
                    Zip::from(&mut bn.running_mean)
                        .and(&mean)
                        .for_each(|r, &v| *r = m * *r + one_minus * v);
                    Zip::from(&mut bn.running_var)
                        .and(&var)
                        .for_each(|r, &v| *r = m * *r + one_minus * v);
                    caches.push(Cache::BatchNorm { xhat, inv_std });
                }
                Layer::Tanh => {
                    h.mapv_inplace(F::tanh);
                    caches.push(Cache::Tanh { output: h.clone() });
                }
                Layer::Dropout { rate } => {
                    if *rate > F::zero() {
                        let p = rate.as_f64();
                        let keep_scale = F::one() / (F::one() - *rate);
                        let mask = Array2::from_shape_simple_fn(h.dim(), || {
                            if rng.gen::<f64>() < p {
                                F::zero()
                            } else {
                                keep_scale
                            }
                        });
                        h = h * &mask;
                        caches.push(Cache::Dropout { mask: Some(mask) });
                    } else {
                        caches.push(Cache::Dropout { mask: None });
                    }
                }
            }
        }
        let mut probs = self.output.forward(&h.view());
        softmax_rows(&mut probs);
        Ok(Tape {
            caches,
            hidden: h,
            probs,
        })
    }

    /// Backpropagates mean cross-entropy plus (λ/2)·Σ‖W_hidden‖².
    pub fn backward(&self, tape: &Tape<F>, labels: &[bool]) -> Gradients<F> {
        let b = labels.len();
        let n = F::of(b as f64);
        let lambda = F::of(self.config.l2_lambda);
        let mut dy = (&tape.probs - &one_hot::<F>(labels)) / n;
        let output_weights = tape.hidden.t().dot(&dy);
        let output_bias = dy.sum_axis(Axis(0));
        dy = dy.dot(&self.output.weights.t());

        let mut grads = vec![LayerGrad::None; self.layers.len()];
        for (idx, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Dense(d), Cache::Dense { input }) => {
                    let mut dw = input.t().dot(&dy);
                    if lambda > F::zero() {
                        dw.scaled_add(lambda, &d.weights);
                    }
                    let db = dy.sum_axis(Axis(0));
                    if idx > 0 {
                        dy = dy.dot(&d.weights.t());
                    }
                    grads[idx] = LayerGrad::Dense { weights: dw, bias: db };
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std }) => {
                    let dgamma = (&dy * xhat).sum_axis(Axis(0));
                    let dbeta = dy.sum_axis(Axis(0));
                    let dxhat = &dy * &bn.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                    let mut dx = dxhat * n - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                    dx *= &(inv_std / n);
                    dy = dx;
                    grads[idx] = LayerGrad::BatchNorm {
                        gamma: dgamma,
                        beta: dbeta,
                    };
                }
                (Layer::Tanh, Cache::Tanh { output }) => {
                    Zip::from(&mut dy)
                        .and(output)
                        .for_each(|g, &y| *g = *g * (F::one() - y * y));
                }
                (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        dy *= mask;
                    }
                }
                _ => unreachable!("tape does not match layer stack"),
            }
        }
        Gradients {
            layers: grads,
            output_weights,
            output_bias,
        }
    }

    /// θ ← θ − lr·g for every trainable parameter.
    pub fn apply_gradients(&mut self, grads: &Gradients<F>, learning_rate: f64) {
        let lr = F::of(learning_rate);
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (l, g) {
                (Layer::Dense(d), LayerGrad::Dense { weights, bias }) => {
                    d.weights.scaled_add(-lr, weights);
                    d.bias.scaled_add(-lr, bias);
                }
                (Layer::BatchNorm(b), LayerGrad::BatchNorm { gamma, beta }) => {
                    b.gamma.scaled_add(-lr, gamma);
                    b.beta.scaled_add(-lr, beta);
                }
                _ => {}
            }
        }
        self.output.weights.scaled_add(-lr, &grads.output_weights);
        self.output.bias.scaled_add(-lr, &grads.output_bias);
    }

    /// One SGD step on a batch; returns the batch loss before the update.
    pub fn backward_and_step(
        &mut self,
        batch: &ArrayView2<F>,
        labels: &[bool],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let tape = self.forward_train(batch, rng)?;
        let batch_loss = loss(&tape.probs.view(), labels, self.hidden_weight_sq_norm(), self.config.l2_lambda);
        let grads = self.backward(&tape, labels);
        if let Some(location) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(format!(
                "{location} (batch of {}, loss {batch_loss})",
                labels.len()
            )));
        }
        self.apply_gradients(&grads, self.config.learning_rate);
        Ok(batch_loss)
    }
}

/// Mean cross-entropy of the true class (probabilities clamped at 1e-12)
/// plus (λ/2)·`hidden_sq_norm`.
pub fn loss<F: Scalar>(probs: &ArrayView2<F>, labels: &[bool], hidden_sq_norm: f64, l2_lambda: f64) -> f64 {
    let ce: f64 = probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -row[usize::from(y)].as_f64().max(1e-12).ln())
        .sum();
    ce / labels.len() as f64 + 0.5 * l2_lambda * hidden_sq_norm
}

/// Trains for `cfg.epochs` epochs of shuffled minibatches; returns the
/// mean batch loss of each epoch. Batches smaller than two rows are
/// skipped.
pub fn train<F: Scalar>(model: &mut MlpModel<F>, dataset: &LabeledDataset) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
    }
    if dataset.features.ncols() != model.input_dim {
        return Err(Error::InvalidMatrix(format!(
            "dataset has {} features, model expects {}",
            dataset.features.ncols(),
            model.input_dim
        )));
    }
    let cfg = model.config.clone();
    let x: Array2<F> = dataset.features.values.mapv(F::of);
    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = x.select(Axis(0), chunk);
            let labels: Vec<bool> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            total += model.backward_and_step(&batch.view(), &labels, &mut rng)?;
            batches += 1;
        }
        trace.push(if batches > 0 { total / batches as f64 } else { f64::NAN });
    }
    Ok(trace)
}

/// Positive-class probability per row (inference mode).
pub fn predict_proba<F: Scalar>(model: &MlpModel<F>, rows: &Array2<f64>) -> Vec<f64> {
    const CHUNK: usize = 1024;
    let mut out = Vec::with_capacity(rows.nrows());
    let mut start = 0;
    while start < rows.nrows() {
        let end = (start + CHUNK).min(rows.nrows());
        let x = rows.slice(s![start..end, ..]).mapv(F::of);
        let probs = model.forward_infer(&x.view());
        out.extend(probs.column(1).iter().map(|p| p.as_f64()));
        start = end;
    }
    out
}

/// Either precision of trained network, for code that picks the float
/// type at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "precision", content = "model", rename_all = "snake_case")]
pub enum AnyMlp {
    Single(MlpModel<f32>),
    Double(MlpModel<f64>),
}

impl AnyMlp {
    pub fn init(input_dim: usize, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        Ok(match cfg.precision {
            Precision::Single => AnyMlp::Single(init_model(input_dim, cfg, seed)?),
            Precision::Double => AnyMlp::Double(init_model(input_dim, cfg, seed)?),
        })
    }

    pub fn train(&mut self, dataset: &LabeledDataset) -> Result<Vec<f64>> {
        match self {
            AnyMlp::Single(m) => train(m, dataset),
            AnyMlp::Double(m) => train(m, dataset),
        }
    }

    pub fn predict_proba(&self, rows: &Array2<f64>) -> Vec<f64> {
        match self {
            AnyMlp::Single(m) => predict_proba(m, rows),
            AnyMlp::Double(m) => predict_proba(m, rows),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            AnyMlp::Single(m) => &m.config,
            AnyMlp::Double(m) => &m.config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FeatureGroup, FeatureMatrix};
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn cfg(hidden: Vec<usize>, dropout: f64, l2: f64) -> TrainConfig {
        TrainConfig {
            hidden_sizes: hidden,
            dropout_rate: dropout,
            l2_lambda: l2,
            precision: Precision::Double,
            ..TrainConfig::default()
        }
    }

    fn normal_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
    }

    fn dataset(x: Array2<f64>, labels: Vec<bool>) -> LabeledDataset {
        let d = x.ncols();
        let names = (0..d).map(|j| format!("f{j}")).collect();
        let m = FeatureMatrix::dense(x, names, vec![FeatureGroup::LabChart; d]).unwrap();
        LabeledDataset::new(m, labels).unwrap()
    }

    #[test]
    fn default_parameter_count_closed_form() {
        let m: MlpModel<f32> = init_model(279, &TrainConfig::default(), 1).unwrap();
        let expected = (279 * 400 + 400) + 2 * 400 + (400 * 400 + 400) + 2 * 400 + (400 * 2 + 2);
        assert_eq!(expected, 274_802);
        assert_eq!(m.parameter_count(), expected);
        assert_eq!(m.flat_params().len(), expected);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = cfg(vec![8, 8], 0.3, 1e-4);
        let a: MlpModel<f64> = init_model(5, &c, 42).unwrap();
        let b: MlpModel<f64> = init_model(5, &c, 42).unwrap();
        assert_eq!(a, b);
        let other: MlpModel<f64> = init_model(5, &c, 43).unwrap();
        assert_ne!(a, other);
        for l in &a.layers {
            if let Layer::Dense(d) = l {
                assert!(d.weights.iter().all(|w| w.abs() <= 0.05));
                assert!(d.bias.iter().all(|&v| v == 0.0));
            }
            if let Layer::BatchNorm(bn) = l {
                assert!(bn.gamma.iter().all(|&g| g == 1.0));
                assert!(bn.beta.iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn empty_hidden_is_softmax_regression() {
        let m: MlpModel<f64> = init_model(3, &cfg(vec![], 0.3, 0.0), 1).unwrap();
        assert!(m.layers.is_empty());
        assert_eq!(m.parameter_count(), 3 * 2 + 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(init_model::<f64>(3, &cfg(vec![0], 0.0, 0.0), 1).is_err());
        assert!(init_model::<f64>(3, &cfg(vec![2], 1.0, 0.0), 1).is_err());
        assert!(init_model::<f64>(0, &cfg(vec![2], 0.0, 0.0), 1).is_err());
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let mut m: MlpModel<f64> = init_model(4, &cfg(vec![6], 0.3, 0.0), 3).unwrap();
        m.output.weights.fill(0.0);
        let x = normal_matrix(5, 4, 1.0, 1);
        let p = m.forward_infer(&x.view());
        assert!(p.iter().all(|&v| v == 0.5));
        let mut rng = seeded(0);
        let t = m.forward_train(&x.view(), &mut rng).unwrap();
        assert!(t.probs.iter().all(|&v| v == 0.5));
        assert!(predict_proba(&m, &x).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn inference_is_repeatable_and_rows_sum_to_one() {
        let m: MlpModel<f64> = init_model(4, &cfg(vec![6, 5], 0.3, 0.0), 3).unwrap();
        let x = normal_matrix(7, 4, 1.0, 2);
        let a = m.forward_infer(&x.view());
        let b = m.forward_infer(&x.view());
        assert_eq!(a, b);
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn train_mode_needs_two_rows() {
        let mut m: MlpModel<f64> = init_model(4, &cfg(vec![6], 0.0, 0.0), 3).unwrap();
        let x = normal_matrix(1, 4, 1.0, 2);
        assert!(matches!(
            m.forward_train(&x.view(), &mut seeded(0)),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn batch_norm_standardizes_pre_activations() {
        let mut m: MlpModel<f64> = init_model(6, &cfg(vec![16], 0.0, 0.0), 5).unwrap();
        let x = normal_matrix(64, 6, 50.0, 4);
        let tape = m.forward_train(&x.view(), &mut seeded(0)).unwrap();
        let Cache::BatchNorm { xhat, .. } = &tape.caches[1] else {
            panic!("second layer is batch norm")
        };
        // direct statistics over the batch
        for col in xhat.columns() {
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn running_statistics_update_with_momentum() {
        let mut m: MlpModel<f64> = init_model(2, &cfg(vec![2], 0.0, 0.0), 5).unwrap();
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]];
        let Layer::Dense(d) = &m.layers[0] else { panic!() };
        let z = x.dot(&d.weights);
        m.forward_train(&x.view(), &mut seeded(0)).unwrap();
        let Layer::BatchNorm(bn) = &m.layers[1] else { panic!() };
        for j in 0..2 {
            let col = z.column(j);
            let mean = col.sum() / 3.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!((bn.running_mean[j] - 0.1 * mean).abs() < 1e-15);
            assert!((bn.running_var[j] - (0.9 + 0.1 * var)).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        let perfect = array![[1.0, 0.0]];
        assert_eq!(loss(&perfect.view(), &[false], 0.0, 0.0), 0.0);
        let even = array![[0.5, 0.5]];
        assert!((loss(&even.view(), &[true], 0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss(&even.view(), &[true], 0.0, 10.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss(&even.view(), &[true], 2.0, 0.1) - (std::f64::consts::LN_2 + 0.1)).abs() < 1e-15);
        let zero = array![[1.0, 0.0]];
        assert!((loss(&zero.view(), &[true], 0.0, 0.0) - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut a: Array2<f64> = array![[0.3, -1.2], [5.0, 4.0]];
        let mut b = &a + 17.25;
        softmax_rows(&mut a);
        softmax_rows(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_score_rises_with_positive_logit() {
        let mut m: MlpModel<f64> = init_model(2, &cfg(vec![], 0.0, 0.0), 1).unwrap();
        let x = array![[0.2, 0.7]];
        let before = predict_proba(&m, &x)[0];
        m.output.bias[1] += 0.5;
        let after = predict_proba(&m, &x)[0];
        assert!(after > before);
        let p = m.forward_infer(&x.view());
        assert!((p[[0, 0]] + p[[0, 1]] - 1.0).abs() < 1e-9);
    }

    /// Hand-rolled 2-2-2 network on fixed weights, no batch statistics.
    #[test]
    fn frozen_network_matches_hand_computation() {
        let mut m: MlpModel<f64> = init_model(2, &cfg(vec![2], 0.0, 0.0), 1).unwrap();
        let w1 = array![[0.5, -0.25], [0.75, 1.0]];
        let b1 = array![0.1, -0.2];
        let w2 = array![[1.5, -0.5], [-1.0, 2.0]];
        let b2 = array![0.05, -0.05];
        if let Layer::Dense(d) = &mut m.layers[0] {
            d.weights = w1.clone();
            d.bias = b1.clone();
        }
        m.output.weights = w2.clone();
        m.output.bias = b2.clone();
        let x = array![[1.0, 2.0], [-0.5, 0.25]];
        let got = m.forward_infer(&x.view());

        let eps: f64 = 1e-5;
        for i in 0..2 {
            let mut h = [0.0; 2];
            for (j, hj) in h.iter_mut().enumerate() {
                let z = x[[i, 0]] * w1[[0, j]] + x[[i, 1]] * w1[[1, j]] + b1[j];
                *hj = (z / (1.0 + eps).sqrt()).tanh();
            }
            let l0 = h[0] * w2[[0, 0]] + h[1] * w2[[1, 0]] + b2[0];
            let l1 = h[0] * w2[[0, 1]] + h[1] * w2[[1, 1]] + b2[1];
            let p1 = 1.0 / (1.0 + (l0 - l1).exp());
            assert!((got[[i, 1]] - p1).abs() < 1e-12);
            assert!((got[[i, 0]] - (1.0 - p1)).abs() < 1e-12);
        }
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut m: MlpModel<f64> = init_model(3, &cfg(vec![4], 0.3, 0.0), 2).unwrap();
        // isolate the dropout layer on a fixed activation matrix
        m.layers = vec![Layer::Dropout { rate: 0.3 }];
        m.output.weights = Array2::zeros((3, 2));
        let x = array![[0.5, -0.2, 0.9], [0.1, 0.4, -0.7]];
        let mut rng = seeded(11);
        let mut sum = Array2::<f64>::zeros(x.dim());
        let trials = 20_000;
        for _ in 0..trials {
            let tape = m.forward_train(&x.view(), &mut rng).unwrap();
            sum += &tape.hidden;
        }
        let mean = sum / trials as f64;
        for (got, want) in mean.iter().zip(&x) {
            assert!((got - want).abs() <= 0.02 * want.abs(), "{got} vs {want}");
        }
    }

    fn full_loss(m: &MlpModel<f64>, x: &Array2<f64>, y: &[bool]) -> f64 {
        let mut probe = m.clone();
        let tape = probe.forward_train(&x.view(), &mut seeded(0)).unwrap();
        loss(&tape.probs.view(), y, m.hidden_weight_sq_norm(), m.config.l2_lambda)
    }

    fn max_gradient_error(m: &MlpModel<f64>, x: &Array2<f64>, y: &[bool]) -> f64 {
        let mut probe = m.clone();
        let tape = probe.forward_train(&x.view(), &mut seeded(0)).unwrap();
        let analytic = m.backward(&tape, y).flatten();
        let base = m.flat_params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] = base[k] + h;
            let mut plus = m.clone();
            plus.set_flat_params(&p);
            p[k] = base[k] - h;
            let mut minus = m.clone();
            minus.set_flat_params(&p);
            let numeric = (full_loss(&plus, x, y) - full_loss(&minus, x, y)) / (2.0 * h);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[k] - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = normal_matrix(4, 6, 1.0, 21);
        let y = [true, false, false, true];
        for order in [BlockOrder::NormThenActivate, BlockOrder::ActivateThenNorm] {
            let mut c = cfg(vec![5, 4], 0.0, 0.01);
            c.block_order = order;
            let m: MlpModel<f64> = init_model(6, &c, 9).unwrap();
            let mut m = m;
            // larger weights so every term contributes visibly
            let scaled: Vec<f64> = m.flat_params().iter().map(|v| v * 10.0).collect();
            m.set_flat_params(&scaled);
            let err = max_gradient_error(&m, &x, &y);
            assert!(err < 1e-4, "{order:?}: {err}");
        }
    }

    #[test]
    fn each_layer_type_checks_in_isolation() {
        let x = normal_matrix(4, 3, 1.0, 5);
        let y = [false, true, true, false];
        let base: MlpModel<f64> = init_model(3, &cfg(vec![3], 0.0, 0.05), 8).unwrap();
        let stacks: Vec<Vec<Layer<f64>>> = vec![
            vec![base.layers[0].clone()],
            vec![base.layers[1].clone()],
            vec![Layer::Tanh],
            vec![Layer::Dropout { rate: 0.0 }],
            vec![],
        ];
        for layers in stacks {
            let mut m = base.clone();
            let width = match layers.first() {
                Some(Layer::Dense(d)) => d.weights.ncols(),
                _ => 3,
            };
            m.layers = layers;
            m.output.weights = normal_matrix(width, 2, 0.5, 3);
            let err = max_gradient_error(&m, &x, &y);
            assert!(err < 1e-4, "{:?}: {err}", m.layers);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing_but_running_stats() {
        let mut c = cfg(vec![4], 0.3, 1e-3);
        c.learning_rate = 0.0;
        let mut m: MlpModel<f64> = init_model(3, &c, 1).unwrap();
        let before = m.flat_params();
        let x = normal_matrix(6, 3, 1.0, 1);
        m.backward_and_step(&x.view(), &[true, false, true, false, true, false], &mut seeded(1))
            .unwrap();
        assert_eq!(m.flat_params(), before);
    }

    #[test]
    fn single_step_reduces_loss_on_separable_pair() {
        let mut c = cfg(vec![4], 0.0, 0.0);
        c.learning_rate = 0.1;
        let mut m: MlpModel<f64> = init_model(1, &c, 4).unwrap();
        let x = array![[0.0], [1.0]];
        let y = [false, true];
        let before = full_loss(&m, &x, &y);
        m.backward_and_step(&x.view(), &y, &mut seeded(0)).unwrap();
        assert!(full_loss(&m, &x, &y) < before);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut m: MlpModel<f64> = init_model(2, &cfg(vec![2], 0.0, 0.0), 4).unwrap();
        m.output.weights[[0, 0]] = f64::NAN;
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        let before = m.clone();
        let err = m.backward_and_step(&x.view(), &[false, true], &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!(m.flat_params().len(), before.flat_params().len());
    }

    fn planted(n: usize, seed: u64) -> LabeledDataset {
        let x = normal_matrix(n, 5, 1.0, seed);
        let labels = x.rows().into_iter().map(|r| r[0] * r[1] + 0.5 * r[2] > 0.0).collect();
        dataset(x, labels)
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let data = planted(1000, 3);
        let mut c = cfg(vec![32, 32], 0.3, 1e-4);
        c.seed = 77;
        c.learning_rate = 0.01;
        let mut a: MlpModel<f64> = init_model(5, &c, 1).unwrap();
        let mut b = a.clone();
        let trace_a = train(&mut a, &data).unwrap();
        let trace_b = train(&mut b, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(trace_a, trace_b);
        assert_eq!(trace_a.len(), 60);
        assert!(trace_a.last().unwrap() < trace_a.first().unwrap());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let data = planted(20, 1);
        let mut c = cfg(vec![4], 0.3, 1e-4);
        c.epochs = 0;
        let mut m: MlpModel<f32> = init_model(5, &c, 1).unwrap();
        let before = m.clone();
        assert!(train(&mut m, &data).unwrap().is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn trailing_singleton_batch_is_skipped() {
        let data = planted(201, 2);
        let mut c = cfg(vec![4], 0.0, 0.0);
        c.epochs = 1;
        let mut m: MlpModel<f64> = init_model(5, &c, 1).unwrap();
        // 201 rows in batches of 100: the final 1-row batch must not error
        train(&mut m, &data).unwrap();
    }

    #[test]
    fn single_precision_trains_too() {
        let data = planted(300, 8);
        let mut c = TrainConfig {
            hidden_sizes: vec![16],
            epochs: 10,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        c.seed = 3;
        let mut m = AnyMlp::init(5, &c, 2).unwrap();
        assert!(matches!(m, AnyMlp::Single(_)));
        let trace = m.train(&data).unwrap();
        assert!(trace.last().unwrap() < trace.first().unwrap());
        let scores = m.predict_proba(&data.features.values);
        assert!(scores.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn config_from_kv() {
        let mut c = TrainConfig::default();
        let kv = KvConfig::parse("mlp.hidden_sizes = 16, 8\nmlp.precision = f64\nmlp.epochs = 3").unwrap();
        c.apply_kv(&kv).unwrap();
        assert_eq!(c.hidden_sizes, vec![16, 8]);
        assert_eq!(c.precision, Precision::Double);
        assert_eq!(c.epochs, 3);
        let bad = KvConfig::parse("mlp.dropout_rate = 1.0").unwrap();
        assert!(TrainConfig::default().apply_kv(&bad).is_err());
    }
}
