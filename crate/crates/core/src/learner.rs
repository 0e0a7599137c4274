//! Regularized linear learning on real-mode embeddings.
//!
//! The objective is `(1/m) sum_i loss(V e_i, y_i) + lambda ||V||_F^2`, with
//! squared loss `0.5 ||V e - y||^2` or multinomial logistic loss. Squared
//! loss is solved in closed form from `(X^T X / m + 2 lambda I) V^T = X^T Y / m`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{synthesize, SynthKind};
use crate::embedding::{Embedder, InputRecord, Mode};
use crate::error::{Error, Result};
use crate::features::build_registry;
use crate::kernel_oracle::exact_kernel;
use crate::par::{self, Execution};
use crate::rng::{derive_seed, RandomStream};
use crate::skeleton::Skeleton;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Fixed(f64),
    /// `lambda = sqrt(2) rho C / (sqrt(m) B)`.
    Auto {
        b: f64,
        rho: f64,
        c: f64,
    },
}

impl Lambda {
    pub fn resolve(&self, m: usize) -> Result<f64> {
        let l = match *self {
            Lambda::Fixed(l) => l,
            Lambda::Auto { b, rho, c } => {
                if !(b > 0.0 && rho > 0.0 && c > 0.0) {
                    return Err(Error::Parameter(format!(
                        "auto lambda needs B, rho, C > 0 (got {b}, {rho}, {c})"
                    )));
                }
                2f64.sqrt() * rho * c / ((m as f64).sqrt() * b)
            }
        };
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be positive, got {l}")));
        }
        Ok(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lambda: Lambda,
    pub loss: LossKind,
    /// Iteration cap for logistic training.
    pub max_iters: usize,
    /// Gradient-norm stopping tolerance for logistic training.
    pub tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Fixed(1e-3),
            loss: LossKind::Squared,
            max_iters: 20_000,
            tol: 1e-8,
        }
    }
}

/// Training targets: real vectors, or class indices in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Regression(DMatrix<f64>),
    Classes { y: Vec<usize>, n_classes: usize },
}

impl Labels {
    pub fn scalar(y: &[f64]) -> Self {
        Labels::Regression(DMatrix::from_column_slice(y.len(), 1, y))
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Regression(y) => y.nrows(),
            Labels::Classes { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outputs(&self) -> usize {
        match self {
            Labels::Regression(y) => y.ncols(),
            Labels::Classes { n_classes, .. } => *n_classes,
        }
    }

    /// Regression targets as is; classes one-hot.
    pub fn target_matrix(&self) -> DMatrix<f64> {
        match self {
            Labels::Regression(y) => y.clone(),
            Labels::Classes { y, n_classes } => {
                DMatrix::from_fn(y.len(), *n_classes, |i, c| if y[i] == c { 1.0 } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `t x D`.
    pub v: DMatrix<f64>,
    pub lambda: f64,
    pub loss: LossKind,
}

impl LinearModel {
    /// Rows of `X V^T`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.v.ncols() {
            return Err(Error::Usage(format!(
                "embedding dimension {} does not match model dimension {}",
                x.ncols(),
                self.v.ncols()
            )));
        }
        Ok(x * self.v.transpose())
    }

    /// The regularized training objective at this model.
    pub fn objective(&self, x: &DMatrix<f64>, labels: &Labels) -> Result<f64> {
        Ok(self.mean_loss(x, labels)? + self.lambda * self.v.norm_squared())
    }

    fn mean_loss(&self, x: &DMatrix<f64>, labels: &Labels) -> Result<f64> {
        let scores = self.predict(x)?;
        Ok(mean_loss(self.loss, &scores, labels))
    }
}

fn mean_loss(loss: LossKind, scores: &DMatrix<f64>, labels: &Labels) -> f64 {
    let m = scores.nrows() as f64;
    match loss {
        LossKind::Squared => 0.5 * (scores - labels.target_matrix()).norm_squared() / m,
        LossKind::Logistic => {
            let Labels::Classes { y, .. } = labels else {
                unreachable!("logistic loss is checked to have class labels")
            };
            (0..scores.nrows())
                .map(|i| log_sum_exp(scores.row(i).iter()) - scores[(i, y[i])])
                .sum::<f64>()
                / m
        }
    }
}

fn log_sum_exp<'a>(xs: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn check_shapes(x: &DMatrix<f64>, labels: &Labels) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Parameter("need at least one training example".into()));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Usage(format!(
            "{} embedding rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if let Labels::Classes { y, n_classes } = labels {
        if let Some(bad) = y.iter().find(|&&c| c >= *n_classes) {
            return Err(Error::Usage(format!("class {bad} out of range 0..{n_classes}")));
        }
    }
    Ok(())
}

/// Minimizes the regularized objective over `V`.
pub fn train(x: &DMatrix<f64>, labels: &Labels, config: &TrainConfig) -> Result<LinearModel> {
    check_shapes(x, labels)?;
    let lambda = config.lambda.resolve(x.nrows())?;
    match config.loss {
        LossKind::Squared => Ok(LinearModel {
            v: ridge(x, &labels.target_matrix(), lambda)?,
            lambda,
            loss: LossKind::Squared,
        }),
        LossKind::Logistic => {
            if !matches!(labels, Labels::Classes { .. }) {
                return Err(Error::Usage("logistic loss needs class labels".into()));
            }
            logistic(x, labels, lambda, config)
        }
    }
}

/// Solves the normal equations, in the `m x m` dual form when `D > m`.
fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let (m, d) = x.shape();
    let mf = m as f64;
    let singular = || Error::Domain("normal equations are not positive definite".into());
    let vt = if d <= m {
        // an explicit transpose lets the product go through the blocked gemm kernel
        let xt = x.transpose();
        let mut a = &xt * x / mf;
        for i in 0..d {
            a[(i, i)] += 2.0 * lambda;
        }
        let rhs = &xt * y / mf;
        a.cholesky().ok_or_else(singular)?.solve(&rhs)
    } else {
        let mut g = x * x.transpose();
        for i in 0..m {
            g[(i, i)] += 2.0 * lambda * mf;
        }
        let alpha = g.cholesky().ok_or_else(singular)?.solve(y);
        x.tr_mul(&alpha)
    };
    Ok(vt.transpose())
}

fn softmax_gradient(x: &DMatrix<f64>, y: &[usize], v: &DMatrix<f64>, lambda: f64) -> (f64, DMatrix<f64>) {
    let m = x.nrows() as f64;
    let mut p = x * v.transpose();
    let mut loss = 0.0;
    for i in 0..p.nrows() {
        let lse = log_sum_exp(p.row(i).iter());
        loss += lse - p[(i, y[i])];
        for c in 0..p.ncols() {
            p[(i, c)] = (p[(i, c)] - lse).exp();
        }
        p[(i, y[i])] -= 1.0;
    }
    let grad = p.tr_mul(x) / m + v * (2.0 * lambda);
    (loss / m + lambda * v.norm_squared(), grad)
}

/// Gradient descent with Barzilai-Borwein steps and Armijo backtracking.
fn logistic(x: &DMatrix<f64>, labels: &Labels, lambda: f64, config: &TrainConfig) -> Result<LinearModel> {
    let Labels::Classes { y, n_classes } = labels else {
        unreachable!()
    };
    let mut v = DMatrix::zeros(*n_classes, x.ncols());
    let (mut f, mut g) = softmax_gradient(x, y, &v, lambda);
    let mut step = 1.0;
    for _ in 0..config.max_iters {
        let gn = g.norm();
        if gn <= config.tol {
            return Ok(LinearModel {
                v,
                lambda,
                loss: LossKind::Logistic,
            });
        }
        let (v_new, f_new, g_new) = loop {
            let cand = &v - &g * step;
            let (fc, gc) = softmax_gradient(x, y, &cand, lambda);
            if fc <= f - 1e-4 * step * gn * gn {
                break (cand, fc, gc);
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::Convergence {
                    iterations: config.max_iters,
                    grad_norm: gn,
                    objective: f,
                });
            }
        };
        let s = &v_new - &v;
        let dg = &g_new - &g;
        let sy = s.dot(&dg);
        step = if sy > 0.0 { s.norm_squared() / sy } else { 1.0 };
        v = v_new;
        f = f_new;
        g = g_new;
    }
    let grad_norm = g.norm();
    if grad_norm <= config.tol {
        return Ok(LinearModel {
            v,
            lambda,
            loss: LossKind::Logistic,
        });
    }
    Err(Error::Convergence {
        iterations: config.max_iters,
        grad_norm,
        objective: f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean loss over rows.
    pub loss: f64,
    /// Mean squared error per output coordinate (regression only).
    pub mse: Option<f64>,
    /// Fraction of rows whose argmax score is the label (classification only).
    pub accuracy: Option<f64>,
}

pub fn evaluate(model: &LinearModel, x: &DMatrix<f64>, labels: &Labels) -> Result<Metrics> {
    check_shapes(x, labels)?;
    if labels.outputs() != model.v.nrows() {
        return Err(Error::Usage(format!(
            "model has {} outputs, labels have {}",
            model.v.nrows(),
            labels.outputs()
        )));
    }
    if model.loss == LossKind::Logistic && !matches!(labels, Labels::Classes { .. }) {
        return Err(Error::Usage("logistic model needs class labels".into()));
    }
    let scores = model.predict(x)?;
    let loss = mean_loss(model.loss, &scores, labels);
    Ok(match labels {
        Labels::Regression(y) => Metrics {
            loss,
            mse: Some((&scores - y).norm_squared() / (y.nrows() * y.ncols()) as f64),
            accuracy: None,
        },
        Labels::Classes { y, .. } => {
            let hits = (0..scores.nrows()).filter(|&i| argmax(&scores, i) == y[i]).count();
            Metrics {
                loss,
                mse: None,
                accuracy: Some(hits as f64 / y.len() as f64),
            }
        }
    })
}

pub fn argmax(scores: &DMatrix<f64>, row: usize) -> usize {
    let mut best = 0;
    for c in 1..scores.ncols() {
        if scores[(row, c)] > scores[(row, best)] {
            best = c;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    loss: LossKind,
    lambda: f64,
    registry_hash: String,
    real_seed: u64,
    /// Original label values per output, for classifiers.
    classes: Option<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// A trained model together with what is needed to embed new inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: LinearModel,
    pub registry_hash: String,
    pub real_seed: u64,
    pub classes: Option<Vec<f64>>,
}

impl SavedModel {
    pub fn to_json(&self) -> String {
        let v = &self.model.v;
        let file = ModelFile {
            format: "comprf-model".into(),
            version: 1,
            loss: self.model.loss,
            lambda: self.model.lambda,
            registry_hash: self.registry_hash.clone(),
            real_seed: self.real_seed,
            classes: self.classes.clone(),
            v: (0..v.nrows()).map(|i| v.row(i).iter().copied().collect()).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        if f.format != "comprf-model" || f.version != 1 {
            return Err(Error::Parse(format!(
                "unsupported model format {} v{}",
                f.format, f.version
            )));
        }
        let t = f.v.len();
        let d = f.v.first().map_or(0, Vec::len);
        if t == 0 || f.v.iter().any(|r| r.len() != d) {
            return Err(Error::Parse("model matrix is empty or ragged".into()));
        }
        if let Some(c) = &f.classes {
            if c.len() != t {
                return Err(Error::Parse("class list does not match model outputs".into()));
            }
        }
        Ok(Self {
            model: LinearModel {
                v: DMatrix::from_fn(t, d, |i, j| f.v[i][j]),
                lambda: f.lambda,
                loss: f.loss,
            },
            registry_hash: f.registry_hash,
            real_seed: f.real_seed,
            classes: f.classes,
        })
    }
}

/// Maps label values to class indices in sorted order.
pub fn encode_classes(values: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut classes: Vec<f64> = values.to_vec();
    if classes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("class labels must be finite".into()));
    }
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let y = values.iter().map(|v| classes.partition_point(|c| c < v)).collect();
    Ok((y, classes))
}

/// Writes one row per input: scores, plus the predicted class when `classes` is given.
pub fn write_predictions_csv<W: Write>(out: W, scores: &DMatrix<f64>, classes: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string()];
    if scores.ncols() == 1 {
        header.push("prediction".into());
    } else {
        header.extend((1..=scores.ncols()).map(|c| format!("score_{c}")));
    }
    if classes.is_some() {
        header.push("class".into());
    }
    w.write_record(&header)?;
    for i in 0..scores.nrows() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(scores.row(i).iter().map(|v| v.to_string()));
        if let Some(c) = classes {
            row.push(c[argmax(scores, i)].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `f(x) = sum_j alpha_j k(x, x_j)`, a function in the kernel's RKHS.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub centers: Vec<InputRecord>,
    pub alphas: Vec<f64>,
}

impl Teacher {
    /// `j` synthetic centers with `alpha_j = +-1 / sqrt(j)`.
    pub fn random(skeleton: &Skeleton, j: usize, seed: u64) -> Result<Self> {
        let centers = synthesize(skeleton, j, SynthKind::Iid, 0.0, derive_seed(seed, 0))?;
        let mut rng = RandomStream::new(derive_seed(seed, 1));
        let s = 1.0 / (j as f64).sqrt();
        let alphas = (0..j).map(|_| if rng.coin() { s } else { -s }).collect();
        Ok(Self { centers, alphas })
    }

    pub fn eval(&self, skeleton: &Skeleton, x: &InputRecord) -> Result<f64> {
        self.centers
            .iter()
            .zip(&self.alphas)
            .map(|(c, a)| Ok(a * exact_kernel(skeleton, x, c)?))
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RateSettings {
    pub m_train: usize,
    pub m_test: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub q: usize,
    pub trial: usize,
    /// Mean `0.5 (f_hat - f)^2` on held-out points.
    pub test_loss: f64,
    /// Mean `|f_hat - f|` on held-out points.
    pub test_abs: f64,
    pub train_loss: f64,
}

/// Trains ridge predictors on teacher labels at each `q` and measures
/// held-out excess loss. Each trial draws new data and registries.
pub fn rate_experiment(
    skeleton: &Skeleton,
    teacher: &Teacher,
    settings: RateSettings,
    q_list: &[usize],
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<RateRow>> {
    let tasks = trials * q_list.len();
    let rows = par::map_range(exec, tasks, |t| -> Result<RateRow> {
        let (trial, qi) = (t / q_list.len(), t % q_list.len());
        let data_seed = derive_seed(seed, 2 * trial as u64);
        let n = settings.m_train + settings.m_test;
        let xs = synthesize(skeleton, n, SynthKind::Iid, 0.0, data_seed)?;
        let ys = xs
            .iter()
            .map(|x| teacher.eval(skeleton, x))
            .collect::<Result<Vec<f64>>>()?;
        let reg_seed = derive_seed(derive_seed(seed, 2 * trial as u64 + 1), qi as u64);
        let registry = build_registry(skeleton, q_list[qi], reg_seed, Execution::Sequential)?;
        let emb = Embedder::new(skeleton, &registry, Mode::Real { seed: reg_seed })?;
        let x = emb.real_matrix(&xs, Execution::Sequential)?;
        let m = settings.m_train;
        let x_train = x.rows(0, m).into_owned();
        let x_test = x.rows(m, settings.m_test).into_owned();
        let y_train = Labels::scalar(&ys[..m]);
        let model = train(
            &x_train,
            &y_train,
            &TrainConfig {
                lambda: Lambda::Fixed(settings.lambda),
                ..TrainConfig::default()
            },
        )?;
        let pred: DVector<f64> = &x_test * model.v.row(0).transpose();
        let diffs: Vec<f64> = pred.iter().zip(&ys[m..]).map(|(p, y)| p - y).collect();
        Ok(RateRow {
            q: q_list[qi],
            trial,
            test_loss: diffs.iter().map(|e| 0.5 * e * e).sum::<f64>() / diffs.len() as f64,
            test_abs: diffs.iter().map(|e| e.abs()).sum::<f64>() / diffs.len() as f64,
            train_loss: evaluate(&model, &x_train, &y_train)?.loss,
        })
    });
    rows.into_iter().collect()
}
