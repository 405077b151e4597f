//! MAP label prediction and evaluation metrics.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::assignment::{assignment_cost, min_cost_assignment};
use crate::baseline::item_posterior;
use crate::data::{ConfusionMatrix, LabelDataset, ModelEstimate};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub posterior: DVector<f64>,
}

/// Posterior `d(k) prod_m A_m(x_m, k)` (normalized) and its argmax for
/// every item, evaluated in the log domain with probabilities floored at
/// `delta`. Items nobody labeled get the prior and its argmax.
pub fn map_predict(model: &ModelEstimate, dataset: &LabelDataset, delta: f64) -> Result<Vec<Prediction>> {
    if model.k() != dataset.n_classes() || model.n_annotators() != dataset.n_annotators() {
        return Err(Error::DimensionMismatch(format!(
            "model is K={} M={}, dataset is K={} M={}",
            model.k(),
            model.n_annotators(),
            dataset.n_classes(),
            dataset.n_annotators()
        )));
    }
    let log_a: Vec<DMatrix<f64>> = model
        .confusions()
        .iter()
        .map(|a| a.matrix().map(|x| x.max(delta).ln()))
        .collect();
    let prior = model.prior().probs();
    let log_d = prior.map(|x| x.max(delta).ln());
    let prior_label = linalg::argmax(prior.iter().copied());
    let chunks = par::map_chunks(dataset.n_items(), 1024, |range| {
        range
            .map(|n| match item_posterior(dataset.item(n), &log_a, &log_d) {
                Some((post, lse)) if lse.is_finite() => Prediction {
                    label: linalg::argmax(post.iter().copied()),
                    posterior: post,
                },
                _ => Prediction { label: prior_label, posterior: prior.clone() },
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Permutation-matched squared error between one estimate and the truth:
/// `min_pi (1/K) sum_k ||A(:, pi(k)) - est(:, k)||^2`.
pub fn mse(estimated: &ConfusionMatrix, truth: &ConfusionMatrix) -> Result<f64> {
    if estimated.k() != truth.k() {
        return Err(Error::DimensionMismatch(format!("K = {} vs {}", estimated.k(), truth.k())));
    }
    let cost = column_costs(truth.matrix(), estimated.matrix());
    let perm = min_cost_assignment(&cost);
    Ok(assignment_cost(&cost, &perm) / truth.k() as f64)
}

/// C(i, j) = ||truth(:, i) - est(:, j)||^2
fn column_costs(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> DMatrix<f64> {
    let k = truth.ncols();
    DMatrix::from_fn(k, k, |i, j| (truth.column(i) - est.column(j)).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MseMode {
    /// One column permutation shared by every annotator.
    #[default]
    Shared,
    /// Each annotator matched independently.
    PerAnnotator,
}

fn check_models(estimated: &ModelEstimate, truth: &ModelEstimate) -> Result<()> {
    if estimated.k() != truth.k() || estimated.n_annotators() != truth.n_annotators() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is K={} M={}, truth is K={} M={}",
            estimated.k(),
            estimated.n_annotators(),
            truth.k(),
            truth.n_annotators()
        )));
    }
    Ok(())
}

fn shared_cost(estimated: &ModelEstimate, truth: &ModelEstimate) -> DMatrix<f64> {
    let k = truth.k();
    let mut cost = DMatrix::zeros(k, k);
    for (e, t) in estimated.confusions().iter().zip(truth.confusions()) {
        cost += column_costs(t.matrix(), e.matrix());
    }
    cost
}

/// The class relabeling used by shared-mode [`model_mse`]: estimated class
/// `perm[i]` plays the role of true class `i`.
pub fn shared_permutation(estimated: &ModelEstimate, truth: &ModelEstimate) -> Result<Vec<usize>> {
    check_models(estimated, truth)?;
    Ok(min_cost_assignment(&shared_cost(estimated, truth)))
}

/// Maps labels in the estimate's class order to the truth's order, given
/// a permutation from [`shared_permutation`].
pub fn relabel(labels: &[Option<usize>], perm: &[usize]) -> Vec<Option<usize>> {
    let mut inverse = vec![0; perm.len()];
    for (i, &j) in perm.iter().enumerate() {
        inverse[j] = i;
    }
    labels.iter().map(|l| l.map(|j| inverse[j])).collect()
}

/// Average per-annotator MSE. In [`MseMode::Shared`] the single permutation
/// minimizing the summed cost over annotators is used for all of them.
pub fn model_mse(estimated: &ModelEstimate, truth: &ModelEstimate, mode: MseMode) -> Result<f64> {
    check_models(estimated, truth)?;
    let k = truth.k();
    let m_total = truth.n_annotators();
    match mode {
        MseMode::PerAnnotator => {
            let mut total = 0.0;
            for (e, t) in estimated.confusions().iter().zip(truth.confusions()) {
                total += mse(e, t)?;
            }
            Ok(total / m_total as f64)
        }
        MseMode::Shared => {
            let cost = shared_cost(estimated, truth);
            let perm = min_cost_assignment(&cost);
            Ok(assignment_cost(&cost, &perm) / (k * m_total) as f64)
        }
    }
}

/// Percentage of evaluated items whose prediction differs from the truth.
/// Items predicted as `None` (unlabeled) count as errors.
pub fn classification_error(predicted: &[(usize, Option<usize>)], truth: &[(usize, usize)]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::Eval("no predictions to evaluate".into()));
    }
    let truth: HashMap<usize, usize> = truth.iter().copied().collect();
    let mut wrong = 0usize;
    for &(item, label) in predicted {
        let y = *truth.get(&item).ok_or(Error::MissingTruth(item + 1))?;
        if label != Some(y) {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / predicted.len() as f64)
}

/// [`classification_error`] for predictions indexed by item.
pub fn error_rate(predicted: &[Option<usize>], truth: &[usize]) -> Result<f64> {
    let pred: Vec<(usize, Option<usize>)> = predicted.iter().copied().enumerate().collect();
    let truth: Vec<(usize, usize)> = truth.iter().copied().enumerate().collect();
    classification_error(&pred, &truth)
}
