//! Multinomial logistic regression with an L2 penalty on the weights.
//!
//! The objective follows the usual C-parameterized convention:
//!
//! ```text
//! L(W, b) = ||W||_F^2 / (2C) + sum_i -log softmax(W x_i + b)[y_i]
//! ```
//!
//! with the bias left unpenalized. Training is full-batch gradient descent
//! from zero, with a Barzilai-Borwein trial step and Armijo backtracking, so
//! the objective never increases between iterations.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, TOP_K};
use crate::features::{FeatureError, MinMaxScaler};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Armijo compares against the worst of this many recent objective values,
/// which lets Barzilai-Borwein steps through without constant backtracking.
const NONMONOTONE_WINDOW: usize = 10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    Empty,
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label index {index} out of range for {k} classes")]
    LabelOutOfRange { index: usize, k: usize },
    #[error("feature vector has {actual} entries, model expects {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub c_grid: Vec<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c_grid: vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0],
            max_iter: 1000,
            grad_tol: 1e-6,
            folds: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.c_grid.is_empty() {
            return Err(ModelError::InvalidConfig("C grid is empty".into()));
        }
        if let Some(c) = self.c_grid.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(ModelError::InvalidConfig(format!("C must be positive, got {c}")));
        }
        if self.folds < 2 {
            return Err(ModelError::InvalidConfig(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(ModelError::InvalidConfig("gradient tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Trained weights (`K x D`), biases (`K`) and the C they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    weights: Array2<f64>,
    bias: Array1<f64>,
    c: f64,
}

impl LogRegModel {
    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>, c: f64) -> Result<Self, ModelError> {
        if weights.nrows() != bias.len() {
            return Err(ModelError::DimMismatch {
                expected: weights.nrows(),
                actual: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidConfig("non-finite model parameter".into()));
        }
        Ok(LogRegModel { weights, bias, c })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let logits = self.weights.dot(&ArrayView1::from(x)) + &self.bias;
        Ok(softmax(logits.as_slice().expect("contiguous")))
    }

    /// Row-wise class probabilities for a feature matrix.
    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        if x.ncols() != self.dim() {
            return Err(ModelError::DimMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        let mut z = x.dot(&self.weights.t()) + &self.bias;
        for mut row in z.axis_iter_mut(Axis(0)) {
            softmax_in_place(row.as_slice_mut().expect("row-major"));
        }
        Ok(z)
    }

    /// Top-3 label indices for every row of `x`.
    pub fn rank_matrix(&self, x: &Array2<f64>) -> Result<Vec<Vec<usize>>, ModelError> {
        let p = self.predict_proba_matrix(x)?;
        Ok(p.axis_iter(Axis(0))
            .map(|row| rank_labels(row.as_slice().expect("row-major")))
            .collect())
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Indices of the (at most) three most probable labels, most likely first.
/// Equal probabilities keep label order.
pub fn rank_labels(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(TOP_K);
    order
}

/// Objective value and gradients at `(w, b)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub grad_w: Array2<f64>,
    pub grad_b: Array1<f64>,
}

impl Evaluation {
    pub fn grad_inf_norm(&self) -> f64 {
        self.grad_w
            .iter()
            .chain(self.grad_b.iter())
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Regularized negative log-likelihood only.
pub fn loss(x: &Array2<f64>, y: &[usize], w: &Array2<f64>, b: &Array1<f64>, c: f64) -> f64 {
    let z = x.dot(&w.t()) + b;
    let mut nll = 0.0;
    for (row, &yi) in z.axis_iter(Axis(0)).zip(y) {
        nll += log_sum_exp(row) - row[yi];
    }
    nll + w.iter().map(|v| v * v).sum::<f64>() / (2.0 * c)
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss and analytic gradient: `dL/dW_k = sum_i (p_ik - [y_i = k]) x_i + W_k / C`,
/// `dL/db_k = sum_i (p_ik - [y_i = k])`.
pub fn evaluate(x: &Array2<f64>, y: &[usize], w: &Array2<f64>, b: &Array1<f64>, c: f64) -> Evaluation {
    let mut z = x.dot(&w.t()) + b;
    let mut nll = 0.0;
    for (mut row, &yi) in z.axis_iter_mut(Axis(0)).zip(y) {
        let lse = log_sum_exp(row.view());
        nll += lse - row[yi];
        row.mapv_inplace(|v| (v - lse).exp());
        row[yi] -= 1.0;
    }
    let grad_w = z.t().dot(x) + &(w / c);
    let grad_b = z.sum_axis(Axis(0));
    Evaluation {
        loss: nll + w.iter().map(|v| v * v).sum::<f64>() / (2.0 * c),
        grad_w,
        grad_b,
    }
}

/// Per-iteration record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Objective at the start and after every accepted step.
    pub losses: Vec<f64>,
    pub grad_inf_norm: f64,
    pub converged: bool,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.losses.len() - 1
    }
}

fn validate_data(x: &Array2<f64>, y: &[usize], k: usize) -> Result<(), ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::Empty);
    }
    if x.nrows() != y.len() {
        return Err(ModelError::LengthMismatch {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if let Some(&index) = y.iter().find(|&&l| l >= k) {
        return Err(ModelError::LabelOutOfRange { index, k });
    }
    for ((row, col), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(ModelError::NonFinite { row, col });
        }
    }
    Ok(())
}

pub fn train(
    x: &Array2<f64>,
    y: &[usize],
    k: usize,
    c: f64,
    cfg: &TrainConfig,
) -> Result<LogRegModel, ModelError> {
    train_traced(x, y, k, c, cfg).map(|(m, _)| m)
}

/// Trains from `W = 0, b = 0` by gradient descent until
/// `||grad||_inf <= grad_tol`, `max_iter` steps, or a step that no amount of
/// backtracking makes acceptable. Trial steps are Barzilai-Borwein lengths,
/// halved until the Armijo condition holds against the largest of the last
/// few objective values.
pub fn train_traced(
    x: &Array2<f64>,
    y: &[usize],
    k: usize,
    c: f64,
    cfg: &TrainConfig,
) -> Result<(LogRegModel, TrainTrace), ModelError> {
    validate_data(x, y, k)?;
    if !(c.is_finite() && c > 0.0) {
        return Err(ModelError::InvalidConfig(format!("C must be positive, got {c}")));
    }
    let mut w = Array2::<f64>::zeros((k, x.ncols()));
    let mut b = Array1::<f64>::zeros(k);
    let mut current = evaluate(x, y, &w, &b, c);
    let mut losses = vec![current.loss];
    let mut step = 1.0 / current.grad_inf_norm().max(1.0);
    let mut converged = current.grad_inf_norm() <= cfg.grad_tol;

    for _ in 0..cfg.max_iter {
        if converged {
            break;
        }
        let g_sq: f64 = current
            .grad_w
            .iter()
            .chain(current.grad_b.iter())
            .map(|g| g * g)
            .sum();
        let reference = losses[losses.len().saturating_sub(NONMONOTONE_WINDOW)..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let w_try = &w - &(&current.grad_w * t);
            let b_try = &b - &(&current.grad_b * t);
            let trial = evaluate(x, y, &w_try, &b_try, c);
            if trial.loss.is_finite() && trial.loss <= reference - ARMIJO * t * g_sq {
                accepted = Some((w_try, b_try, trial));
                break;
            }
            t *= 0.5;
        }
        let Some((w_new, b_new, next)) = accepted else {
            break;
        };

        // Barzilai-Borwein trial step for the next iteration: <s,s>/<s,dg>
        let (mut ss, mut sy) = (0.0, 0.0);
        for ((wn, wo), (gn, go)) in w_new
            .iter()
            .zip(w.iter())
            .zip(next.grad_w.iter().zip(current.grad_w.iter()))
            .chain(
                b_new
                    .iter()
                    .zip(b.iter())
                    .zip(next.grad_b.iter().zip(current.grad_b.iter())),
            )
        {
            let s = wn - wo;
            ss += s * s;
            sy += s * (gn - go);
        }
        step = if sy > 0.0 && (ss / sy).is_finite() {
            ss / sy
        } else {
            t * 2.0
        };

        w = w_new;
        b = b_new;
        current = next;
        losses.push(current.loss);
        converged = current.grad_inf_norm() <= cfg.grad_tol;
    }

    let trace = TrainTrace {
        losses,
        grad_inf_norm: current.grad_inf_norm(),
        converged,
    };
    Ok((LogRegModel { weights: w, bias: b, c }, trace))
}

/// Averaged cross-validation metrics for one fold or one C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub mean_rank: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub c: f64,
    /// Means over folds.
    pub accuracy: f64,
    pub mean_rank: f64,
    pub macro_f1: f64,
    pub folds: Vec<FoldMetrics>,
}

/// Outcome of [`grid_search`].
#[derive(Debug, Clone)]
pub struct GridSearch {
    pub rows: Vec<GridRow>,
    pub best: usize,
    /// Out-of-fold top-3 predictions at the selected C, indexed like the input.
    pub oof_ranked: Vec<Vec<usize>>,
    /// Refit on all rows with the selected C.
    pub model: LogRegModel,
    pub scaler: MinMaxScaler,
}

impl GridSearch {
    pub fn best_c(&self) -> f64 {
        self.rows[self.best].c
    }

    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

fn take_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

struct FoldOutcome {
    metrics: FoldMetrics,
    test: Vec<usize>,
    ranked: Vec<Vec<usize>>,
}

/// Scales on the training part of the fold only, trains, and scores the
/// held-out part.
fn run_fold(
    x_raw: &Array2<f64>,
    y: &[usize],
    k: usize,
    c: f64,
    test: &[usize],
    cfg: &TrainConfig,
) -> Result<FoldOutcome, ModelError> {
    let mut is_test = vec![false; y.len()];
    for &i in test {
        is_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..y.len()).filter(|&i| !is_test[i]).collect();
    let scaler = MinMaxScaler::fit(&take_rows(x_raw, &train_idx))?;
    let x_train = scaler.transform(&take_rows(x_raw, &train_idx))?;
    let x_test = scaler.transform(&take_rows(x_raw, test))?;
    let y_train: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
    let y_test: Vec<usize> = test.iter().map(|&i| y[i]).collect();

    let model = train(&x_train, &y_train, k, c, cfg)?;
    let ranked = model.rank_matrix(&x_test)?;
    let top1: Vec<usize> = ranked.iter().map(|r| r[0]).collect();
    let metrics = FoldMetrics {
        accuracy: eval::accuracy(&top1, &y_test)?,
        mean_rank: eval::mean_rank(&ranked, &y_test)?,
        macro_f1: eval::macro_f1(&top1, &y_test, k)?.macro_f1,
    };
    Ok(FoldOutcome {
        metrics,
        test: test.to_vec(),
        ranked,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Stratified k-fold CV over the C grid on unscaled features `x_raw`.
/// Selects the C with the lowest mean rank, then the highest accuracy, then
/// the smallest C, and refits on all rows.
pub fn grid_search(
    x_raw: &Array2<f64>,
    y: &[usize],
    k: usize,
    cfg: &TrainConfig,
) -> Result<GridSearch, ModelError> {
    cfg.validate()?;
    validate_data(x_raw, y, k)?;
    let folds = eval::stratified_kfold(y, cfg.folds, cfg.seed)?;

    let cells: Vec<(usize, usize)> = (0..cfg.c_grid.len())
        .flat_map(|ci| (0..folds.len()).map(move |fi| (ci, fi)))
        .collect();
    let outcomes: Vec<FoldOutcome> = cells
        .par_iter()
        .map(|&(ci, fi)| run_fold(x_raw, y, k, cfg.c_grid[ci], &folds[fi], cfg))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(cfg.c_grid.len());
    for (ci, &c) in cfg.c_grid.iter().enumerate() {
        let cell = &outcomes[ci * folds.len()..(ci + 1) * folds.len()];
        let per_fold: Vec<FoldMetrics> = cell.iter().map(|o| o.metrics).collect();
        rows.push(GridRow {
            c,
            accuracy: mean(per_fold.iter().map(|m| m.accuracy)),
            mean_rank: mean(per_fold.iter().map(|m| m.mean_rank)),
            macro_f1: mean(per_fold.iter().map(|m| m.macro_f1)),
            folds: per_fold,
        });
    }

    let best = select_best(&rows);
    let mut oof_ranked = vec![Vec::new(); y.len()];
    for o in &outcomes[best * folds.len()..(best + 1) * folds.len()] {
        for (&i, r) in o.test.iter().zip(&o.ranked) {
            oof_ranked[i] = r.clone();
        }
    }

    let scaler = MinMaxScaler::fit(x_raw)?;
    let model = train(&scaler.transform(x_raw)?, y, k, rows[best].c, cfg)?;
    Ok(GridSearch {
        rows,
        best,
        oof_ranked,
        model,
        scaler,
    })
}

/// Index of the preferred grid row.
pub fn select_best(rows: &[GridRow]) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        let b = &rows[best];
        let better = r
            .mean_rank
            .total_cmp(&b.mean_rank)
            .reverse()
            .then(r.accuracy.total_cmp(&b.accuracy))
            .then(b.c.total_cmp(&r.c));
        if better.is_gt() {
            best = i;
        }
    }
    best
}
