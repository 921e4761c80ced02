//! Episodic query loss and its gradient with respect to the embedding.
//!
//! Proto and Ridge differentiate through their closed-form adaptation. SVM
//! and FOMAML are first-order: the adapted head (and FOMAML's adapted
//! embedding copy) is held fixed and the gradient is that of the query loss
//! with respect to the embedding the classifier uses.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{
    adapt_matrices, check_input_dim, one_vs_all, prototypes, ridge_solve, softmax_xent, stack,
    AdaptedClassifier, EmbeddingParams, Head, LearnerKind, Phase,
};
use crate::error::{Error, Result};
use crate::task::{Episode, Example};

fn finite(loss: f64, grad: DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if !loss.is_finite() || !grad.iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite episode loss {loss}")));
    }
    Ok((loss, grad))
}

/// `d loss / d H` for query embeddings `h` under a fixed head.
fn embedded_grad(head: &Head, h: &DMatrix<f64>, delta: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    match head {
        Head::Prototypes(c) => {
            let mut dh = DMatrix::zeros(h.nrows(), h.ncols());
            for i in 0..h.nrows() {
                for a in 0..c.nrows() {
                    let diff = h.row(i) - c.row(a);
                    let mut row = dh.row_mut(i);
                    row -= diff * (2.0 * scale * delta[(i, a)]);
                }
            }
            dh
        }
        Head::Linear { weights, .. } => delta * weights.transpose() * scale,
    }
}

/// Query loss of an already adapted classifier and its gradient with respect
/// to `classifier.embedding`, the head held fixed.
pub fn frozen_loss_grad(classifier: &AdaptedClassifier, query: &[Example], scale: f64) -> Result<(f64, DMatrix<f64>)> {
    let (xq, yq) = stack(query, classifier.n_way())?;
    frozen_matrices(classifier, &xq, &yq, scale)
}

fn frozen_matrices(
    classifier: &AdaptedClassifier,
    xq: &DMatrix<f64>,
    yq: &[usize],
    scale: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if yq.is_empty() {
        return Err(Error::config("query set is empty"));
    }
    let h = xq * classifier.embedding.transpose();
    let logits = classifier.scores_embedded(&h) * scale;
    let (loss, delta) = softmax_xent(&logits, yq);
    let dh = embedded_grad(&classifier.head, &h, &delta, scale);
    finite(loss, dh.transpose() * xq)
}

/// Mean query cross-entropy of an adapted classifier.
pub fn query_loss(classifier: &AdaptedClassifier, query: &[Example], scale: f64) -> Result<f64> {
    let (xq, yq) = stack(query, classifier.n_way())?;
    if yq.is_empty() {
        return Err(Error::config("query set is empty"));
    }
    let logits = classifier.scores(&xq) * scale;
    let (loss, _) = softmax_xent(&logits, &yq);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite query loss {loss}")));
    }
    Ok(loss)
}

/// Query loss and gradient with respect to `params.weights` for one episode,
/// using training-time adaptation settings.
pub fn episode_loss_grad(kind: &LearnerKind, params: &EmbeddingParams, episode: &Episode) -> Result<(f64, DMatrix<f64>)> {
    let n = episode.n_way;
    if episode.support.is_empty() || episode.query.is_empty() {
        return Err(Error::config("episode needs non-empty support and query sets"));
    }
    let (xs, ys) = stack(&episode.support, n)?;
    let (xq, yq) = stack(&episode.query, n)?;
    check_input_dim(params, &xs)?;
    check_input_dim(params, &xq)?;
    let s = params.scale;
    let w = &params.weights;
    match *kind {
        LearnerKind::Proto => {
            let g = &xs * w.transpose();
            let h = &xq * w.transpose();
            let (c, counts) = prototypes(&g, &ys, n)?;
            let clf = AdaptedClassifier { embedding: w.clone(), head: Head::Prototypes(c.clone()) };
            let logits = clf.scores_embedded(&h) * s;
            let (loss, delta) = softmax_xent(&logits, &yq);
            let dh = embedded_grad(&clf.head, &h, &delta, s);
            // Prototype gradient, spread evenly over the supports of each class.
            let mut dc = DMatrix::zeros(n, c.ncols());
            for i in 0..h.nrows() {
                for a in 0..n {
                    let diff = h.row(i) - c.row(a);
                    let mut row = dc.row_mut(a);
                    row += diff * (2.0 * s * delta[(i, a)]);
                }
            }
            let dg = DMatrix::from_fn(g.nrows(), g.ncols(), |j, k| dc[(ys[j], k)] / counts[ys[j]] as f64);
            finite(loss, dh.transpose() * &xq + dg.transpose() * &xs)
        }
        LearnerKind::Ridge { lambda } => {
            kind.validate()?;
            let g = &xs * w.transpose();
            let h = &xq * w.transpose();
            let y = one_vs_all(&ys, n);
            let (wr, chol) = ridge_solve(&g, &y, lambda)?;
            let logits = &h * &wr * s;
            let (loss, delta) = softmax_xent(&logits, &yq);
            let dh = &delta * wr.transpose() * s;
            // Back through W_r = A^{-1} G^T Y with A = G^T G + lambda I.
            let lam = chol.solve(&(h.transpose() * &delta * s));
            let dg = &y * lam.transpose() - &g * (&wr * lam.transpose() + &lam * wr.transpose());
            finite(loss, dh.transpose() * &xq + dg.transpose() * &xs)
        }
        LearnerKind::Svm { .. } | LearnerKind::Fomaml { .. } => {
            let clf = adapt_matrices(kind, params, &xs, &ys, n, Phase::Train)?;
            frozen_matrices(&clf, &xq, &yq, s)
        }
    }
}

/// Mean loss and gradient over a batch. Episodes are processed in parallel
/// and reduced in index order, so the result does not depend on scheduling.
pub fn batch_loss_grad(kind: &LearnerKind, params: &EmbeddingParams, episodes: &[Episode]) -> Result<(f64, DMatrix<f64>)> {
    if episodes.is_empty() {
        return Err(Error::config("empty episode batch"));
    }
    let parts: Vec<(f64, DMatrix<f64>)> = episodes
        .par_iter()
        .map(|e| episode_loss_grad(kind, params, e))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(params.d_out(), params.d_in());
    for (l, g) in parts {
        loss += l;
        grad += g;
    }
    let m = episodes.len() as f64;
    Ok((loss / m, grad / m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::task::TaskKey;
    use crate::task::{ClassTuple, Example};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_episode(rng: &mut crate::rng::SimRng, n: usize, k: usize, q: usize, d: usize) -> Episode {
        let mut draw = |label: usize| Example {
            features: (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) + label as f64 * 0.5).collect(),
            label,
            origin: label as u32,
        };
        let support = (1..=n).flat_map(|a| (0..k).map(move |_| a)).collect::<Vec<_>>().into_iter().map(&mut draw).collect();
        let query = (1..=n).flat_map(|a| (0..q).map(move |_| a)).collect::<Vec<_>>().into_iter().map(&mut draw).collect();
        Episode {
            n_way: n,
            support,
            query,
            task: TaskKey::Classes(ClassTuple::new((1..=n as u32).collect()).unwrap()),
        }
    }

    fn kinds() -> Vec<LearnerKind> {
        vec![
            LearnerKind::Proto,
            LearnerKind::Ridge { lambda: 0.5 },
            LearnerKind::Svm { c_reg: 0.5, iters: 40 },
            LearnerKind::Fomaml { inner_lr: 0.05, inner_steps_train: 3, inner_steps_eval: 3, adapt_embedding: true },
        ]
    }

    /// Central differences of the loss in `f` with step 1e-5.
    fn fd_grad(w: &DMatrix<f64>, f: impl Fn(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
        let h = 1e-5;
        DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| {
            let mut plus = w.clone();
            plus[(i, j)] += h;
            let mut minus = w.clone();
            minus[(i, j)] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(0, "grad", 0);
        for trial in 0..4 {
            let ep = random_episode(&mut rng, 3, 2, 3, 4);
            let params = EmbeddingParams::random(3, 4, 1.5, &mut rng).unwrap();
            for kind in kinds() {
                let (_, grad) = episode_loss_grad(&kind, &params, &ep).unwrap();
                let numeric = match kind {
                    LearnerKind::Proto | LearnerKind::Ridge { .. } => fd_grad(&params.weights, |w| {
                        let p = EmbeddingParams { weights: w.clone(), scale: params.scale };
                        episode_loss_grad(&kind, &p, &ep).unwrap().0
                    }),
                    _ => {
                        let clf = super::super::adapt_in(&kind, &params, &ep.support, 3, Phase::Train).unwrap();
                        fd_grad(&clf.embedding, |w| {
                            let frozen = AdaptedClassifier { embedding: w.clone(), head: clf.head.clone() };
                            query_loss(&frozen, &ep.query, params.scale).unwrap()
                        })
                    }
                };
                let rel = (&grad - &numeric).norm() / numeric.norm().max(1e-12);
                assert!(rel < 1e-4, "trial {trial} {kind:?}: rel err {rel}");
            }
        }
    }

    #[test]
    fn zero_scale_gives_log_n_and_zero_grad() {
        let mut rng = stream(1, "grad", 0);
        let ep = random_episode(&mut rng, 5, 1, 2, 3);
        let params = EmbeddingParams::random(3, 3, 0.0, &mut rng).unwrap();
        for kind in kinds() {
            let (loss, grad) = episode_loss_grad(&kind, &params, &ep).unwrap();
            assert!((loss - 5f64.ln()).abs() < 1e-12, "{kind:?}");
            assert!(grad.iter().all(|&x| x == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn duplicated_batch_equals_single() {
        let mut rng = stream(2, "grad", 0);
        let ep = random_episode(&mut rng, 3, 2, 2, 4);
        let params = EmbeddingParams::random(2, 4, 1.0, &mut rng).unwrap();
        for kind in kinds() {
            let single = episode_loss_grad(&kind, &params, &ep).unwrap();
            let batch = batch_loss_grad(&kind, &params, &[ep.clone(), ep.clone()]).unwrap();
            assert_eq!(single, batch);
        }
    }
}
