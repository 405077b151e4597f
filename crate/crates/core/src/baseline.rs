//! Baselines: majority voting and Dawid-Skene EM with majority-vote or
//! externally supplied initialization.

use nalgebra::{DMatrix, DVector};

use crate::data::{LabelDataset, ModelEstimate};
use crate::error::{Error, Result};
use crate::linalg::{self, floor_normalize, floor_normalize_columns};
use crate::par;

/// Modal response per item; ties go to the lowest class. `None` marks an
/// item nobody labeled.
pub fn majority_vote(dataset: &LabelDataset) -> Vec<Option<usize>> {
    let k = dataset.n_classes();
    (0..dataset.n_items())
        .map(|n| {
            let row = dataset.item(n);
            if row.is_empty() {
                return None;
            }
            let mut votes = vec![0usize; k];
            for &(_, label) in row {
                votes[label] += 1;
            }
            Some(linalg::argmax(votes.iter().map(|&v| v as f64)))
        })
        .collect()
}

/// Confusion matrices and prior estimated by treating majority-vote labels
/// as ground truth. Columns without mass become uniform; entries are then
/// floored at `delta` and renormalized.
pub fn mv_initialize(dataset: &LabelDataset, delta: f64) -> Result<ModelEstimate> {
    let (confusions, prior) = mv_counts(dataset)?;
    let mut confusions = confusions;
    let mut prior = prior;
    for a in &mut confusions {
        floor_normalize_columns(a, delta);
    }
    floor_normalize(&mut prior, delta);
    ModelEstimate::from_parts(confusions, prior)
}

/// Unfloored majority-vote frequencies.
pub fn mv_counts(dataset: &LabelDataset) -> Result<(Vec<DMatrix<f64>>, DVector<f64>)> {
    let k = dataset.n_classes();
    let votes = majority_vote(dataset);
    let mut counts = vec![DMatrix::<f64>::zeros(k, k); dataset.n_annotators()];
    let mut prior = DVector::<f64>::zeros(k);
    for (n, vote) in votes.iter().enumerate() {
        let Some(y) = *vote else { continue };
        prior[y] += 1.0;
        for &(m, x) in dataset.item(n) {
            counts[m][(x, y)] += 1.0;
        }
    }
    let labeled = prior.sum();
    if labeled == 0.0 {
        return Err(Error::InvalidDataset("no labeled items".into()));
    }
    prior /= labeled;
    for a in &mut counts {
        for mut col in a.column_iter_mut() {
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            } else {
                col.fill(1.0 / k as f64);
            }
        }
    }
    Ok((counts, prior))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub tol: f64,
    /// Floor applied to the initialization.
    pub delta: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-7, delta: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: ModelEstimate,
    /// Per-item posterior over classes under `model`; the prior for items
    /// without responses.
    pub posteriors: Vec<DVector<f64>>,
    /// Observed-data log-likelihood at each E-step.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

fn log_sum_exp(v: &DVector<f64>) -> f64 {
    let max = v.max();
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Posterior of one item from log-parameters; returns (posterior, log
/// marginal) or `None` for an item without responses.
pub(crate) fn item_posterior(
    row: &[(usize, usize)],
    log_a: &[DMatrix<f64>],
    log_d: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    if row.is_empty() {
        return None;
    }
    let mut lp = log_d.clone();
    for &(m, x) in row {
        lp += log_a[m].row(x).transpose();
    }
    let lse = log_sum_exp(&lp);
    if !lse.is_finite() {
        return Some((DVector::from_element(lp.len(), f64::NAN), lse));
    }
    Some((lp.map(|v| (v - lse).exp()), lse))
}

fn e_step(dataset: &LabelDataset, a: &[DMatrix<f64>], d: &DVector<f64>) -> (Vec<Option<DVector<f64>>>, f64) {
    let log_a: Vec<DMatrix<f64>> = a.iter().map(|m| m.map(f64::ln)).collect();
    let log_d = d.map(f64::ln);
    let chunks = par::map_chunks(dataset.n_items(), 1024, |range| {
        range
            .map(|n| item_posterior(dataset.item(n), &log_a, &log_d))
            .collect::<Vec<_>>()
    });
    let mut posts = Vec::with_capacity(dataset.n_items());
    let mut ll = 0.0;
    for r in chunks.into_iter().flatten() {
        match r {
            Some((p, lse)) => {
                ll += lse;
                posts.push(Some(p));
            }
            None => posts.push(None),
        }
    }
    (posts, ll)
}

fn m_step(
    dataset: &LabelDataset,
    by_annotator: &[Vec<(usize, usize)>],
    posts: &[Option<DVector<f64>>],
) -> (Vec<DMatrix<f64>>, DVector<f64>) {
    let k = dataset.n_classes();
    let confusions = par::map_slice(by_annotator, |rows| {
        let mut a = DMatrix::<f64>::zeros(k, k);
        for &(n, x) in rows {
            if let Some(g) = &posts[n] {
                let mut row = a.row_mut(x);
                row += g.transpose();
            }
        }
        for mut col in a.column_iter_mut() {
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            } else {
                col.fill(1.0 / k as f64);
            }
        }
        a
    });
    let mut d = DVector::<f64>::zeros(k);
    for g in posts.iter().flatten() {
        d += g;
    }
    let s = d.sum();
    d /= s;
    (confusions, d)
}

/// Dawid-Skene EM from `init` (floored at `config.delta` first).
pub fn em_fit(dataset: &LabelDataset, init: &ModelEstimate, config: &EmConfig) -> Result<EmFit> {
    if init.k() != dataset.n_classes() || init.n_annotators() != dataset.n_annotators() {
        return Err(Error::DimensionMismatch(format!(
            "init is K={} M={}, dataset is K={} M={}",
            init.k(),
            init.n_annotators(),
            dataset.n_classes(),
            dataset.n_annotators()
        )));
    }
    if dataset.n_responses() == 0 {
        return Err(Error::InvalidDataset("no labeled items".into()));
    }
    if !(config.delta > 0.0 && config.delta < 1.0 / init.k() as f64) || !(config.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("bad EM config {config:?}")));
    }
    let mut a: Vec<DMatrix<f64>> = init.confusions().iter().map(|c| c.matrix().clone()).collect();
    let mut d = init.prior().probs().clone();
    for am in &mut a {
        floor_normalize_columns(am, config.delta);
    }
    floor_normalize(&mut d, config.delta);

    let mut by_annotator = vec![Vec::new(); dataset.n_annotators()];
    for r in dataset.responses() {
        by_annotator[r.annotator].push((r.item, r.label));
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let posts = loop {
        let (posts, ll) = e_step(dataset, &a, &d);
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= config.tol * prev.abs());
        trace.push(ll);
        if converged || iterations >= config.max_iters {
            break posts;
        }
        let (new_a, new_d) = m_step(dataset, &by_annotator, &posts);
        a = new_a;
        d = new_d;
        iterations += 1;
    };
    let model = ModelEstimate::from_parts(a, d)?;
    let posteriors = posts
        .into_iter()
        .map(|p| p.unwrap_or_else(|| model.prior().probs().clone()))
        .collect();
    Ok(EmFit { model, posteriors, log_likelihood: trace, iterations })
}
