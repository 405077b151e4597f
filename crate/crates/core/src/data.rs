//! Core domain types: sparse label datasets, confusion matrices, priors and
//! fitted model bundles.
//!
//! Indices are 0-based throughout the library API. Files and the command
//! line use 1-based item, annotator and class numbers; the conversion lives
//! in [`crate::io`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on unit column / vector sums.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// One annotator response, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Response {
    pub item: usize,
    pub annotator: usize,
    pub label: usize,
}

impl Response {
    pub fn new(item: usize, annotator: usize, label: usize) -> Self {
        Self { item, annotator, label }
    }
}

/// Checks the dataset invariants, returning the first violation found in
/// input order.
pub fn validate_dataset(
    n_items: usize,
    n_annotators: usize,
    n_classes: usize,
    responses: &[Response],
) -> Result<()> {
    check_dims(n_items, n_annotators, n_classes)?;
    let mut seen = std::collections::HashSet::with_capacity(responses.len());
    for r in responses {
        check_response(r, n_items, n_annotators, n_classes)?;
        if !seen.insert((r.item, r.annotator)) {
            return Err(Error::DuplicateResponse {
                item: r.item + 1,
                annotator: r.annotator + 1,
            });
        }
    }
    Ok(())
}

fn check_dims(n_items: usize, n_annotators: usize, n_classes: usize) -> Result<()> {
    if n_items == 0 || n_annotators == 0 {
        return Err(Error::InvalidDataset(
            "item and annotator counts must be positive".into(),
        ));
    }
    if n_classes < 2 {
        return Err(Error::InvalidDataset(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    Ok(())
}

fn check_response(r: &Response, n: usize, m: usize, k: usize) -> Result<()> {
    if r.item >= n {
        return Err(Error::IndexOutOfRange { what: "item", index: r.item + 1, max: n });
    }
    if r.annotator >= m {
        return Err(Error::IndexOutOfRange {
            what: "annotator",
            index: r.annotator + 1,
            max: m,
        });
    }
    if r.label >= k {
        return Err(Error::LabelOutOfRange {
            item: r.item + 1,
            annotator: r.annotator + 1,
            label: r.label + 1,
            k,
        });
    }
    Ok(())
}

/// Sparse (item, annotator) -> class responses. A missing pair means the
/// annotator did not label the item.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDataset {
    n_items: usize,
    n_annotators: usize,
    n_classes: usize,
    // Per item, (annotator, label) sorted by annotator.
    by_item: Vec<Vec<(usize, usize)>>,
    n_responses: usize,
}

impl LabelDataset {
    pub fn new(
        n_items: usize,
        n_annotators: usize,
        n_classes: usize,
        responses: impl IntoIterator<Item = Response>,
    ) -> Result<Self> {
        let responses: Vec<Response> = responses.into_iter().collect();
        validate_dataset(n_items, n_annotators, n_classes, &responses)?;
        let mut by_item = vec![Vec::new(); n_items];
        for r in &responses {
            by_item[r.item].push((r.annotator, r.label));
        }
        for row in &mut by_item {
            row.sort_unstable();
        }
        Ok(Self {
            n_items,
            n_annotators,
            n_classes,
            by_item,
            n_responses: responses.len(),
        })
    }

    /// Builds from per-item rows already sorted by annotator. Used by the
    /// generator, which produces valid rows by construction; still checked.
    pub fn from_item_rows(
        n_annotators: usize,
        n_classes: usize,
        by_item: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        check_dims(by_item.len(), n_annotators, n_classes)?;
        let n_items = by_item.len();
        let mut n_responses = 0;
        for (item, row) in by_item.iter().enumerate() {
            for (idx, &(annotator, label)) in row.iter().enumerate() {
                let r = Response { item, annotator, label };
                check_response(&r, n_items, n_annotators, n_classes)?;
                if idx > 0 && row[idx - 1].0 >= annotator {
                    return Err(Error::DuplicateResponse {
                        item: item + 1,
                        annotator: annotator + 1,
                    });
                }
            }
            n_responses += row.len();
        }
        Ok(Self {
            n_items,
            n_annotators,
            n_classes,
            by_item,
            n_responses,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_annotators(&self) -> usize {
        self.n_annotators
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_responses(&self) -> usize {
        self.n_responses
    }

    /// Responses to item `n` as (annotator, label), ascending by annotator.
    pub fn item(&self, n: usize) -> &[(usize, usize)] {
        &self.by_item[n]
    }

    /// The label annotator `m` gave item `n`, if any.
    pub fn label(&self, n: usize, m: usize) -> Option<usize> {
        let row = &self.by_item[n];
        row.binary_search_by_key(&m, |&(a, _)| a)
            .ok()
            .map(|i| row[i].1)
    }

    /// All responses ordered by (item, annotator).
    pub fn responses(&self) -> impl Iterator<Item = Response> + '_ {
        self.by_item.iter().enumerate().flat_map(|(item, row)| {
            row.iter()
                .map(move |&(annotator, label)| Response { item, annotator, label })
        })
    }
}

/// K x K column-stochastic matrix; entry (j, k) is Pr(response = j | truth = k).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix(DMatrix<f64>);

impl ConfusionMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidModel(format!(
                "confusion matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if let Some(x) = entries.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "confusion entry {x} is negative or not finite"
            )));
        }
        for (k, col) in entries.column_iter().enumerate() {
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidModel(format!(
                    "confusion column {} sums to {s}",
                    k + 1
                )));
            }
        }
        Ok(Self(entries))
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn uniform(k: usize) -> Self {
        Self(DMatrix::from_element(k, k, 1.0 / k as f64))
    }

    pub fn k(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Pr(response = `response` | truth = `truth`).
    pub fn prob(&self, response: usize, truth: usize) -> f64 {
        self.0[(response, truth)]
    }
}

/// Prior over the latent true class.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPMF(DVector<f64>);

impl PriorPMF {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidModel("empty prior".into()));
        }
        if probs.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidModel("prior has a negative entry".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidModel(format!("prior sums to {s}")));
        }
        Ok(Self(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(DVector::from_element(k, 1.0 / k as f64))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.0)
    }
}

/// A full Dawid-Skene parameter set with one shared class ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEstimate {
    confusions: Vec<ConfusionMatrix>,
    prior: PriorPMF,
}

impl ModelEstimate {
    pub fn new(confusions: Vec<ConfusionMatrix>, prior: PriorPMF) -> Result<Self> {
        if confusions.is_empty() {
            return Err(Error::InvalidModel("model needs at least one annotator".into()));
        }
        let k = prior.k();
        if let Some((m, a)) = confusions.iter().enumerate().find(|(_, a)| a.k() != k) {
            return Err(Error::DimensionMismatch(format!(
                "annotator {} has K = {}, prior has K = {k}",
                m + 1,
                a.k()
            )));
        }
        Ok(Self { confusions, prior })
    }

    /// Validates raw matrices and prior in one go.
    pub fn from_parts(confusions: Vec<DMatrix<f64>>, prior: DVector<f64>) -> Result<Self> {
        let confusions = confusions
            .into_iter()
            .map(ConfusionMatrix::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(confusions, PriorPMF::new(prior)?)
    }

    pub fn k(&self) -> usize {
        self.prior.k()
    }

    pub fn n_annotators(&self) -> usize {
        self.confusions.len()
    }

    pub fn confusions(&self) -> &[ConfusionMatrix] {
        &self.confusions
    }

    pub fn confusion(&self, m: usize) -> &ConfusionMatrix {
        &self.confusions[m]
    }

    pub fn prior(&self) -> &PriorPMF {
        &self.prior
    }

    pub fn into_parts(self) -> (Vec<ConfusionMatrix>, PriorPMF) {
        (self.confusions, self.prior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_dataset_is_valid() {
        let r = [Response::new(0, 0, 0), Response::new(1, 1, 1)];
        assert!(validate_dataset(3, 2, 2, &r).is_ok());
    }

    #[test]
    fn label_out_of_range() {
        // 1-based (1,1) -> 3 with K = 2
        let err = validate_dataset(3, 2, 2, &[Response::new(0, 0, 2)]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 3, .. }));
        assert!(err.to_string().contains("label out of range"));
    }

    #[test]
    fn duplicate_response() {
        let r = [Response::new(0, 0, 0), Response::new(0, 0, 1)];
        let err = validate_dataset(3, 2, 2, &r).unwrap_err();
        assert!(err.to_string().contains("duplicate response"));
    }

    #[test]
    fn index_out_of_range() {
        let err = validate_dataset(3, 2, 2, &[Response::new(3, 0, 0)]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { what: "item", .. }));
        let err = validate_dataset(3, 2, 2, &[Response::new(0, 2, 0)]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { what: "annotator", .. }));
    }

    #[test]
    fn dataset_lookup() {
        let d = LabelDataset::new(
            2,
            3,
            2,
            [Response::new(0, 2, 1), Response::new(0, 0, 0), Response::new(1, 1, 1)],
        )
        .unwrap();
        assert_eq!(d.item(0), &[(0, 0), (2, 1)]);
        assert_eq!(d.label(0, 2), Some(1));
        assert_eq!(d.label(0, 1), None);
        assert_eq!(d.n_responses(), 3);
        assert_eq!(d.responses().count(), 3);
    }

    #[test]
    fn confusion_invariants() {
        assert!(ConfusionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.2, 0.7])).is_ok());
        assert!(ConfusionMatrix::new(DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.3, 0.7])).is_err());
        assert!(ConfusionMatrix::new(DMatrix::from_row_slice(2, 2, &[1.1, 0.3, -0.1, 0.7])).is_err());
        assert!(PriorPMF::from_slice(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn model_rejects_mixed_k() {
        let err = ModelEstimate::new(
            vec![ConfusionMatrix::identity(2), ConfusionMatrix::identity(3)],
            PriorPMF::uniform(2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }
}
