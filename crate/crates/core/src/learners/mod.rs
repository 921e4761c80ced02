//! Episodic learners over a shared linear embedding `h = W x`.
//!
//! Four adaptation rules are supported: nearest-prototype, closed-form ridge
//! regression, a multiclass linear SVM and first-order MAML. All of them
//! produce an [`AdaptedClassifier`] that scores query points; logits are the
//! raw scores multiplied by the embedding's `scale`.

mod grad;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::task::Example;

pub use grad::{batch_loss_grad, episode_loss_grad, frozen_loss_grad, query_loss};
pub use train::{meta_train, LrSchedule, Snapshot, SnapshotTrajectory, TrainingConfig};

/// Linear embedding plus logit multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile", into = "ParamsFile")]
pub struct EmbeddingParams {
    /// `d_out x d_in`.
    pub weights: DMatrix<f64>,
    pub scale: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    w: Vec<Vec<f64>>,
    scale: f64,
}

impl TryFrom<ParamsFile> for EmbeddingParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        let rows = f.w.len();
        let cols = f.w.first().map_or(0, Vec::len);
        if let Some(r) = f.w.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch(r.len(), cols));
        }
        let p = EmbeddingParams {
            weights: DMatrix::from_row_iterator(rows, cols, f.w.into_iter().flatten()),
            scale: f.scale,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<EmbeddingParams> for ParamsFile {
    fn from(p: EmbeddingParams) -> Self {
        ParamsFile {
            w: p.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
            scale: p.scale,
        }
    }
}

impl EmbeddingParams {
    pub fn new(weights: DMatrix<f64>, scale: f64) -> Result<Self> {
        let p = EmbeddingParams { weights, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(dim: usize, scale: f64) -> Result<Self> {
        EmbeddingParams::new(DMatrix::identity(dim, dim), scale)
    }

    /// Gaussian entries with variance `1 / d_in`.
    pub fn random(d_out: usize, d_in: usize, scale: f64, rng: &mut SimRng) -> Result<Self> {
        let sd = 1.0 / (d_in.max(1) as f64).sqrt();
        let w = DMatrix::from_fn(d_out, d_in, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        EmbeddingParams::new(w, scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.nrows() == 0 || self.weights.ncols() == 0 {
            return Err(Error::config("embedding matrix must be non-empty"));
        }
        if !self.weights.iter().all(|x| x.is_finite()) {
            return Err(Error::Numerical("embedding has non-finite entries".into()));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::config(format!("scale must be finite and non-negative, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.weights.ncols()
    }
}

fn default_svm_iters() -> usize {
    200
}

fn default_inner_train() -> usize {
    5
}

fn default_inner_eval() -> usize {
    20
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Proto,
    Ridge {
        lambda: f64,
    },
    Svm {
        c_reg: f64,
        #[serde(default = "default_svm_iters")]
        iters: usize,
    },
    Fomaml {
        inner_lr: f64,
        #[serde(default = "default_inner_train")]
        inner_steps_train: usize,
        #[serde(default = "default_inner_eval")]
        inner_steps_eval: usize,
        /// Adapt a copy of the embedding alongside the head.
        #[serde(default = "default_true")]
        adapt_embedding: bool,
    },
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Proto => "proto",
            LearnerKind::Ridge { .. } => "ridge",
            LearnerKind::Svm { .. } => "svm",
            LearnerKind::Fomaml { .. } => "fomaml",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be positive, got {x}")))
            }
        };
        match *self {
            LearnerKind::Proto => Ok(()),
            LearnerKind::Ridge { lambda } => positive(lambda, "ridge lambda"),
            LearnerKind::Svm { c_reg, .. } => positive(c_reg, "svm c_reg"),
            LearnerKind::Fomaml { inner_lr, .. } => positive(inner_lr, "fomaml inner_lr"),
        }
    }
}

/// FOMAML runs a different number of inner steps during meta-training and
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// `n x d_out`, row `a` is the prototype of label `a + 1`.
    Prototypes(DMatrix<f64>),
    /// Scores are `h^T weights + bias`; weights are `d_out x n`.
    Linear { weights: DMatrix<f64>, bias: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedClassifier {
    /// Embedding used to embed queries (a per-episode copy for FOMAML).
    pub embedding: DMatrix<f64>,
    pub head: Head,
}

impl AdaptedClassifier {
    pub fn n_way(&self) -> usize {
        match &self.head {
            Head::Prototypes(p) => p.nrows(),
            Head::Linear { weights, .. } => weights.ncols(),
        }
    }

    /// Raw scores (`m x n`) for embedded points `h` (`m x d_out`).
    pub(crate) fn scores_embedded(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.head {
            Head::Prototypes(p) => DMatrix::from_fn(h.nrows(), p.nrows(), |i, a| {
                -(h.row(i) - p.row(a)).norm_squared()
            }),
            Head::Linear { weights, bias } => {
                let mut s = h * weights;
                for mut row in s.row_iter_mut() {
                    row += bias.transpose();
                }
                s
            }
        }
    }

    /// Raw scores for input points `x` (`m x d_in`).
    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.scores_embedded(&(x * self.embedding.transpose()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    /// 1-based predicted labels.
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

/// Stack example features into an `m x d` matrix and 0-based labels.
pub(crate) fn stack(examples: &[Example], n_way: usize) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let d = examples.first().map_or(0, |e| e.features.len());
    let mut labels = Vec::with_capacity(examples.len());
    for e in examples {
        if e.features.len() != d {
            return Err(Error::LengthMismatch(e.features.len(), d));
        }
        if e.label == 0 || e.label > n_way {
            return Err(Error::config(format!("label {} outside 1..={n_way}", e.label)));
        }
        labels.push(e.label - 1);
    }
    let x = DMatrix::from_row_iterator(examples.len(), d, examples.iter().flat_map(|e| e.features.iter().copied()));
    Ok((x, labels))
}

fn check_input_dim(params: &EmbeddingParams, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != params.d_in() {
        return Err(Error::LengthMismatch(x.ncols(), params.d_in()));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mean softmax cross-entropy of `logits` and its derivative with respect to
/// the logits.
pub(crate) fn softmax_xent(logits: &DMatrix<f64>, labels: &[usize]) -> (f64, DMatrix<f64>) {
    let m = logits.nrows();
    let mut delta = DMatrix::zeros(m, logits.ncols());
    let mut loss = 0.0;
    for i in 0..m {
        let row = logits.row(i);
        let mx = row.max();
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        loss += mx + z.ln() - row[labels[i]];
        for a in 0..logits.ncols() {
            delta[(i, a)] = ((row[a] - mx).exp() / z - f64::from(a == labels[i])) / m as f64;
        }
    }
    (loss / m as f64, delta)
}

pub(crate) fn prototypes(g: &DMatrix<f64>, labels: &[usize], n_way: usize) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mut protos = DMatrix::zeros(n_way, g.ncols());
    let mut counts = vec![0usize; n_way];
    for (i, &y) in labels.iter().enumerate() {
        let mut row = protos.row_mut(y);
        row += g.row(i);
        counts[y] += 1;
    }
    if let Some(a) = counts.iter().position(|&c| c == 0) {
        return Err(Error::config(format!("support has no example with label {}", a + 1)));
    }
    for (a, &c) in counts.iter().enumerate() {
        let mut row = protos.row_mut(a);
        row /= c as f64;
    }
    Ok((protos, counts))
}

fn one_vs_all(labels: &[usize], n_way: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), n_way, |i, a| if labels[i] == a { 1.0 } else { -1.0 })
}

/// Ridge solution `(G^T G + lambda I)^{-1} G^T Y` together with the Cholesky
/// factor of the system matrix.
pub(crate) fn ridge_solve(
    g: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let d = g.ncols();
    let a = g.transpose() * g + DMatrix::identity(d, d) * lambda;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?;
    let w = chol.solve(&(g.transpose() * y));
    Ok((w, chol))
}

/// Primal Crammer-Singer objective:
/// `c/2 ||W||^2 + mean_j max(0, 1 + max_{a != y_j} s_ja - s_jy_j)`.
pub fn svm_objective(g: &DMatrix<f64>, labels: &[usize], weights: &DMatrix<f64>, bias: &DVector<f64>, c_reg: f64) -> f64 {
    let mut hinge = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        let s = g.row(j) * weights + bias.transpose();
        let rival = (0..s.ncols()).filter(|&a| a != y).map(|a| s[a]).fold(f64::NEG_INFINITY, f64::max);
        hinge += (1.0 + rival - s[y]).max(0.0);
    }
    0.5 * c_reg * weights.norm_squared() + hinge / labels.len() as f64
}

/// Full-batch subgradient descent with step `1 / (c_reg t)`. Returns the
/// iterate with the lowest objective, the zero initialisation included.
pub(crate) fn svm_solve(g: &DMatrix<f64>, labels: &[usize], n_way: usize, c_reg: f64, iters: usize) -> (DMatrix<f64>, DVector<f64>) {
    let d = g.ncols();
    let m = labels.len() as f64;
    let mut w = DMatrix::zeros(d, n_way);
    let mut b = DVector::zeros(n_way);
    let mut best = (svm_objective(g, labels, &w, &b, c_reg), w.clone(), b.clone());
    for t in 1..=iters {
        let mut gw = &w * c_reg;
        let mut gb = DVector::zeros(n_way);
        for (j, &y) in labels.iter().enumerate() {
            let s = g.row(j) * &w + b.transpose();
            let rival = argmax((0..n_way).map(|a| if a == y { f64::NEG_INFINITY } else { s[a] }));
            if 1.0 + s[rival] - s[y] > 0.0 {
                let gj = g.row(j).transpose() / m;
                let mut col = gw.column_mut(rival);
                col += &gj;
                let mut col = gw.column_mut(y);
                col -= &gj;
                gb[rival] += 1.0 / m;
                gb[y] -= 1.0 / m;
            }
        }
        let step = 1.0 / (c_reg * t as f64);
        w -= gw * step;
        b -= gb * step;
        let obj = svm_objective(g, labels, &w, &b, c_reg);
        if obj < best.0 {
            best = (obj, w.clone(), b.clone());
        }
    }
    (best.1, best.2)
}

/// Full-batch gradient descent on the support cross-entropy of a zero-initialised
/// linear head, optionally also moving a copy of the embedding.
fn fomaml_inner(
    params: &EmbeddingParams,
    xs: &DMatrix<f64>,
    labels: &[usize],
    n_way: usize,
    lr: f64,
    steps: usize,
    adapt_embedding: bool,
) -> AdaptedClassifier {
    let s = params.scale;
    let mut e = params.weights.clone();
    let mut w = DMatrix::zeros(params.d_out(), n_way);
    let mut b = DVector::zeros(n_way);
    for _ in 0..steps {
        let g = xs * e.transpose();
        let clf = AdaptedClassifier {
            embedding: e.clone(),
            head: Head::Linear { weights: w.clone(), bias: b.clone() },
        };
        let logits = clf.scores_embedded(&g) * s;
        let (_, delta) = softmax_xent(&logits, labels);
        let dw = g.transpose() * &delta * s;
        let db = delta.row_sum().transpose() * s;
        if adapt_embedding {
            let dg = &delta * w.transpose() * s;
            e -= dg.transpose() * xs * lr;
        }
        w -= dw * lr;
        b -= db * lr;
    }
    AdaptedClassifier {
        embedding: e,
        head: Head::Linear { weights: w, bias: b },
    }
}

/// Adapt to a support set (evaluation-time settings).
pub fn adapt(kind: &LearnerKind, params: &EmbeddingParams, support: &[Example], n_way: usize) -> Result<AdaptedClassifier> {
    adapt_in(kind, params, support, n_way, Phase::Eval)
}

pub fn adapt_in(
    kind: &LearnerKind,
    params: &EmbeddingParams,
    support: &[Example],
    n_way: usize,
    phase: Phase,
) -> Result<AdaptedClassifier> {
    if support.is_empty() {
        return Err(Error::config("support set is empty"));
    }
    let (xs, labels) = stack(support, n_way)?;
    check_input_dim(params, &xs)?;
    adapt_matrices(kind, params, &xs, &labels, n_way, phase)
}

pub(crate) fn adapt_matrices(
    kind: &LearnerKind,
    params: &EmbeddingParams,
    xs: &DMatrix<f64>,
    labels: &[usize],
    n_way: usize,
    phase: Phase,
) -> Result<AdaptedClassifier> {
    kind.validate()?;
    let g = xs * params.weights.transpose();
    let head = match *kind {
        LearnerKind::Proto => Head::Prototypes(prototypes(&g, labels, n_way)?.0),
        LearnerKind::Ridge { lambda } => {
            let (w, _) = ridge_solve(&g, &one_vs_all(labels, n_way), lambda)?;
            Head::Linear { weights: w, bias: DVector::zeros(n_way) }
        }
        LearnerKind::Svm { c_reg, iters } => {
            let (w, b) = svm_solve(&g, labels, n_way, c_reg, iters);
            Head::Linear { weights: w, bias: b }
        }
        LearnerKind::Fomaml {
            inner_lr,
            inner_steps_train,
            inner_steps_eval,
            adapt_embedding,
        } => {
            let steps = match phase {
                Phase::Train => inner_steps_train,
                Phase::Eval => inner_steps_eval,
            };
            return Ok(fomaml_inner(params, xs, labels, n_way, inner_lr, steps, adapt_embedding));
        }
    };
    Ok(AdaptedClassifier {
        embedding: params.weights.clone(),
        head,
    })
}

/// Predict query labels. With `scale == 0` every logit is equal and the
/// tie-break predicts label 1 everywhere; otherwise predictions are the argmax
/// of the raw scores, so they do not depend on the scale.
pub fn classify(classifier: &AdaptedClassifier, query: &[Example], scale: f64) -> Result<Classification> {
    if query.is_empty() {
        return Err(Error::config("query set is empty"));
    }
    let (xq, labels) = stack(query, classifier.n_way())?;
    if xq.ncols() != classifier.embedding.ncols() {
        return Err(Error::LengthMismatch(xq.ncols(), classifier.embedding.ncols()));
    }
    let predictions: Vec<usize> = if scale == 0.0 {
        vec![1; labels.len()]
    } else {
        let scores = classifier.scores(&xq);
        scores.row_iter().map(|r| argmax(r.iter().copied()) + 1).collect()
    };
    let correct = predictions.iter().zip(&labels).filter(|(p, y)| **p == **y + 1).count();
    Ok(Classification {
        accuracy: correct as f64 / labels.len() as f64,
        predictions,
    })
}
