//! L2-regularized logistic regression fitted by full-batch gradient
//! descent from a zero start. It is the linear comparator for the MLP.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::domain::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the Euclidean norm of the full gradient drops below this.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2_lambda: 1e-4,
            learning_rate: 0.1,
            max_iters: 5000,
            tolerance: 1e-6,
        }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0 && self.learning_rate >= 0.0 && self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig(
                "logistic l2_lambda, learning_rate and tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Applies `logistic.*` keys.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.read_into("logistic.l2_lambda", &mut self.l2_lambda)?;
        kv.read_into("logistic.learning_rate", &mut self.learning_rate)?;
        kv.read_into("logistic.max_iters", &mut self.max_iters)?;
        kv.read_into("logistic.tolerance", &mut self.tolerance)?;
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    /// Gradient steps actually taken.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LogisticModel,
    /// Objective before each step, plus the final value.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Evaluation {
    loss: f64,
    grad_w: Array1<f64>,
    grad_b: f64,
}

/// One pass over the rows accumulates the loss and both gradients.
fn evaluate(x: &Array2<f64>, y: &Array1<f64>, w: &Array1<f64>, b: f64, lambda: f64) -> Evaluation {
    let n = x.nrows() as f64;
    let mut grad_w = Array1::zeros(w.len());
    let mut grad_b = 0.0;
    let mut ce = 0.0;
    for (row, &yi) in x.rows().into_iter().zip(y) {
        let z = row.dot(w) + b;
        ce += softplus(z) - yi * z;
        let r = sigmoid(z) - yi;
        grad_b += r;
        grad_w.scaled_add(r, &row);
    }
    grad_w /= n;
    grad_w.scaled_add(lambda, w);
    Evaluation {
        loss: ce / n + 0.5 * lambda * w.dot(w),
        grad_w,
        grad_b: grad_b / n,
    }
}

/// Mean binary cross-entropy plus (λ/2)‖w‖².
pub fn objective(model: &LogisticModel, dataset: &LabeledDataset) -> f64 {
    let (x, y) = design(dataset);
    evaluate(&x, &y, &Array1::from(model.weights.clone()), model.bias, model.l2_lambda).loss
}

/// Analytic gradient of [`objective`] as (∂w, ∂b).
pub fn gradient(model: &LogisticModel, dataset: &LabeledDataset) -> (Vec<f64>, f64) {
    let (x, y) = design(dataset);
    let e = evaluate(&x, &y, &Array1::from(model.weights.clone()), model.bias, model.l2_lambda);
    (e.grad_w.to_vec(), e.grad_b)
}

fn design(dataset: &LabeledDataset) -> (Array2<f64>, Array1<f64>) {
    let y = dataset.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    (dataset.features.values.as_standard_layout().into_owned(), y)
}

pub fn fit_logistic(dataset: &LabeledDataset, cfg: &LogisticConfig) -> Result<LogisticModel> {
    fit_logistic_traced(dataset, cfg).map(|f| f.model)
}

pub fn fit_logistic_traced(dataset: &LabeledDataset, cfg: &LogisticConfig) -> Result<LogisticFit> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("cannot fit on an empty dataset".into()));
    }
    let (x, y) = design(dataset);
    let d = x.ncols();
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let e = evaluate(&x, &y, &w, b, cfg.l2_lambda);
        trace.push(e.loss);
        let norm = (e.grad_w.dot(&e.grad_w) + e.grad_b * e.grad_b).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteGradient(format!("logistic iteration {iterations}")));
        }
        if norm < cfg.tolerance {
            converged = true;
            break;
        }
        if iterations == cfg.max_iters {
            break;
        }
        w.scaled_add(-cfg.learning_rate, &e.grad_w);
        b -= cfg.learning_rate * e.grad_b;
        iterations += 1;
    }
    Ok(LogisticFit {
        model: LogisticModel {
            weights: w.to_vec(),
            bias: b,
            l2_lambda: cfg.l2_lambda,
            learning_rate: cfg.learning_rate,
            max_iters: cfg.max_iters,
            tolerance: cfg.tolerance,
            iterations,
        },
        loss_trace: trace,
        converged,
    })
}

/// σ(w·x + b) per row.
pub fn predict_logistic(model: &LogisticModel, rows: &Array2<f64>) -> Result<Vec<f64>> {
    if rows.ncols() != model.weights.len() {
        return Err(Error::InvalidMatrix(format!(
            "rows have {} features, model expects {}",
            rows.ncols(),
            model.weights.len()
        )));
    }
    let w = ArrayView1::from(&model.weights);
    Ok(rows
        .axis_iter(Axis(0))
        .map(|r| sigmoid(r.dot(&w) + model.bias))
        .collect())
}
