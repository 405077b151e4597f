//! Pairwise co-occurrence statistics: empirical joint PMFs of two
//! annotators' responses over the items both labeled, and their population
//! counterparts under a known model.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::data::{LabelDataset, ModelEstimate};
use crate::error::{Error, Result};
use crate::par;

/// Empirical joint PMF of one annotator pair and its co-label count.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStat {
    /// Rows index the lower-numbered annotator's label.
    pub matrix: DMatrix<f64>,
    pub count: u64,
}

/// All annotator pairs with at least one co-labeled item, stored once per
/// unordered pair under key `(m, l)` with `m < l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceSet {
    k: usize,
    n_annotators: usize,
    pairs: BTreeMap<(usize, usize), PairStat>,
}

impl CooccurrenceSet {
    pub fn new(k: usize, n_annotators: usize) -> Self {
        Self { k, n_annotators, pairs: BTreeMap::new() }
    }

    /// Stores the joint PMF of `(m, l)`, rows indexing `m`'s label.
    pub fn insert(&mut self, m: usize, l: usize, matrix: DMatrix<f64>, count: u64) -> Result<()> {
        if m == l {
            return Err(Error::SameAnnotator(m + 1));
        }
        if m >= self.n_annotators || l >= self.n_annotators {
            return Err(Error::IndexOutOfRange {
                what: "annotator",
                index: m.max(l) + 1,
                max: self.n_annotators,
            });
        }
        if matrix.nrows() != self.k || matrix.ncols() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "pair matrix is {}x{}, expected {k}x{k}",
                matrix.nrows(),
                matrix.ncols(),
                k = self.k
            )));
        }
        let (key, matrix) = if m < l { ((m, l), matrix) } else { ((l, m), matrix.transpose()) };
        self.pairs.insert(key, PairStat { matrix, count });
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_annotators(&self) -> usize {
        self.n_annotators
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stored pairs in ascending `(m, l)` order, `m < l`.
    pub fn pairs(&self) -> impl Iterator<Item = (&(usize, usize), &PairStat)> {
        self.pairs.iter()
    }

    /// `R_{m,l}` with rows indexing `m`'s label; the transpose of the
    /// stored matrix when `m > l`.
    pub fn get(&self, m: usize, l: usize) -> Option<DMatrix<f64>> {
        if m < l {
            self.pairs.get(&(m, l)).map(|p| p.matrix.clone())
        } else {
            self.pairs.get(&(l, m)).map(|p| p.matrix.transpose())
        }
    }

    /// Co-label count of an unordered pair, 0 if absent.
    pub fn count(&self, m: usize, l: usize) -> u64 {
        let key = if m < l { (m, l) } else { (l, m) };
        self.pairs.get(&key).map_or(0, |p| p.count)
    }

    /// Annotators sharing at least one item with `m`, ascending.
    pub fn partners(&self, m: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .pairs
            .keys()
            .filter_map(|&(a, b)| {
                if a == m {
                    Some(b)
                } else if b == m {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Sum of co-label counts over all of `m`'s partners.
    pub fn total_count(&self, m: usize) -> u64 {
        self.pairs
            .iter()
            .filter(|((a, b), _)| *a == m || *b == m)
            .map(|(_, p)| p.count)
            .sum()
    }
}

#[inline]
fn pair_index(m: usize, l: usize, n_annotators: usize) -> usize {
    debug_assert!(m < l);
    m * n_annotators - m * (m + 1) / 2 + (l - m - 1)
}

/// Counts co-labeled responses for every annotator pair and normalizes each
/// pair's counts into a joint PMF. Pairs that share no item are omitted.
///
/// Counting is integer accumulation merged in chunk order, so the result
/// does not depend on the number of worker threads.
pub fn count_pairs(dataset: &LabelDataset) -> CooccurrenceSet {
    let m_total = dataset.n_annotators();
    let k = dataset.n_classes();
    let n_pairs = m_total * (m_total - 1) / 2;
    let cells = k * k;
    let n = dataset.n_items();

    let chunk = n.div_ceil(par::current_num_threads().max(1)).max(256);
    let partials = par::map_chunks(n, chunk, |range| {
        let mut counts = vec![0u64; n_pairs * cells];
        for item in range {
            let row = dataset.item(item);
            for (i, &(a, la)) in row.iter().enumerate() {
                for &(b, lb) in &row[i + 1..] {
                    counts[pair_index(a, b, m_total) * cells + la * k + lb] += 1;
                }
            }
        }
        counts
    });
    let mut counts = vec![0u64; n_pairs * cells];
    for part in partials {
        for (c, p) in counts.iter_mut().zip(part) {
            *c += p;
        }
    }

    let mut set = CooccurrenceSet::new(k, m_total);
    for a in 0..m_total {
        for b in a + 1..m_total {
            let base = pair_index(a, b, m_total) * cells;
            let block = &counts[base..base + cells];
            let total: u64 = block.iter().sum();
            if total == 0 {
                continue;
            }
            let matrix = DMatrix::from_fn(k, k, |r, c| block[r * k + c] as f64 / total as f64);
            set.pairs.insert((a, b), PairStat { matrix, count: total });
        }
    }
    set
}

/// `A_m Diag(d) A_l^T` for a known model.
pub fn population_cooccurrence(model: &ModelEstimate, m: usize, l: usize) -> Result<DMatrix<f64>> {
    if m == l {
        return Err(Error::SameAnnotator(m + 1));
    }
    let am = model.confusion(m).matrix();
    let al = model.confusion(l).matrix();
    Ok(am * model.prior().diag() * al.transpose())
}

/// Population co-occurrences for every pair of a known model, each
/// recorded with co-label count `count`.
pub fn population_set(model: &ModelEstimate, count: u64) -> CooccurrenceSet {
    let m_total = model.n_annotators();
    let mut set = CooccurrenceSet::new(model.k(), m_total);
    for a in 0..m_total {
        for b in a + 1..m_total {
            let r = population_cooccurrence(model, a, b).expect("distinct annotators");
            set.pairs.insert((a, b), PairStat { matrix: r, count });
        }
    }
    set
}
