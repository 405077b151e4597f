//! MultiSPA: per-annotator confusion identification by successive
//! projection on stacked co-occurrence blocks, followed by alignment of the
//! per-annotator column orders and prior extraction.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::assignment::min_cost_assignment;
use crate::cooccurrence::{count_pairs, CooccurrenceSet};
use crate::data::{ConfusionMatrix, LabelDataset, ModelEstimate, PriorPMF};
use crate::error::{Error, Result};
use crate::linalg::{self, checked_inverse, clamp_normalize, clamp_normalize_columns};
use crate::par;

/// Residual norm below which a block is considered exhausted.
const SPA_RESIDUAL_TOL: f64 = 1e-12;

/// Factor by which the partners' consensus must agree better with them than
/// the own estimate does before it replaces it.
const TRANSFER_MARGIN: f64 = 0.25;

/// How per-annotator column orders are reconciled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignMethod {
    /// Match each annotator against an estimate derived from an aligned
    /// partner, by optimal assignment. Propagates breadth-first.
    #[default]
    Assignment,
    /// Reorder each estimate independently so its diagonal mass is maximal.
    DiagonalDominance,
}

/// How the alignment reference is picked when none is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceRule {
    /// The annotator whose estimate has the smallest condition number, so
    /// that inverting it amplifies estimation noise the least.
    #[default]
    BestConditioned,
    /// The annotator with the largest total co-label count.
    MostCoLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultispaConfig {
    /// Columns of the stacked block with l1 mass below this are dropped.
    pub eta: f64,
    /// Alignment reference; overrides `reference_rule` when set.
    pub reference: Option<usize>,
    pub reference_rule: ReferenceRule,
    /// Rounds of consensus re-alignment after the breadth-first pass.
    /// Zero keeps the breadth-first result.
    pub consensus_passes: usize,
    /// After alignment, replace an annotator's own estimate by the consensus
    /// of its partners' transferred estimates when the latter agrees better
    /// with them.
    pub transfer_check: bool,
    /// Minimum co-label count for a pair to contribute to the prior.
    pub s_min: u64,
    pub align: AlignMethod,
}

impl Default for MultispaConfig {
    fn default() -> Self {
        Self {
            eta: 1e-6,
            reference: None,
            reference_rule: ReferenceRule::BestConditioned,
            consensus_passes: 10,
            transfer_check: true,
            s_min: 1,
            align: AlignMethod::Assignment,
        }
    }
}

impl MultispaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidConfig(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// The horizontally stacked co-occurrence blocks `[R_{m,l1} | R_{m,l2} | ...]`
/// of one annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedBlock {
    pub annotator: usize,
    pub matrix: DMatrix<f64>,
    /// For each column of `matrix`: (partner annotator, column within its block).
    pub column_origin: Vec<(usize, usize)>,
    /// Over the columns as originally stacked: whether each survived filtering.
    pub kept_mask: Vec<bool>,
}

/// Stacks `R_{m,l}` for every partner `l` of `m`, ascending in `l`.
pub fn build_stacked(m: usize, cooc: &CooccurrenceSet) -> Result<StackedBlock> {
    let partners = cooc.partners(m);
    if partners.is_empty() {
        return Err(Error::IsolatedAnnotator(m + 1));
    }
    let k = cooc.k();
    let mut matrix = DMatrix::zeros(k, k * partners.len());
    let mut column_origin = Vec::with_capacity(k * partners.len());
    for (t, &l) in partners.iter().enumerate() {
        let r = cooc.get(m, l).expect("partner pair exists");
        matrix.columns_mut(t * k, k).copy_from(&r);
        column_origin.extend((0..k).map(|c| (l, c)));
    }
    let kept_mask = vec![true; column_origin.len()];
    Ok(StackedBlock { annotator: m, matrix, column_origin, kept_mask })
}

/// Drops columns with l1 mass below `eta` and scales the rest to unit l1 norm.
pub fn normalize_columns(block: &StackedBlock, eta: f64) -> Result<StackedBlock> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!("eta must be positive, got {eta}")));
    }
    let k = block.matrix.nrows();
    let mut kept_cols = Vec::new();
    let mut column_origin = Vec::new();
    let mut kept_mask = block.kept_mask.clone();
    let live_slots: Vec<usize> = kept_mask.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect();
    let mut live = live_slots.into_iter();
    for (col, origin) in block.matrix.column_iter().zip(&block.column_origin) {
        let slot = live.next().expect("mask matches columns");
        let mass: f64 = col.iter().map(|x| x.abs()).sum();
        if mass >= eta {
            kept_cols.push(col / mass);
            column_origin.push(*origin);
        } else {
            kept_mask[slot] = false;
        }
    }
    if kept_cols.len() < k {
        return Err(Error::InsufficientMass {
            annotator: block.annotator + 1,
            kept: kept_cols.len(),
            k,
        });
    }
    Ok(StackedBlock {
        annotator: block.annotator,
        matrix: DMatrix::from_columns(&kept_cols),
        column_origin,
        kept_mask,
    })
}

/// Successive projection: picks `k` columns, each maximizing the squared
/// residual norm after projecting out the span of earlier picks. Ties go
/// to the lowest column index. Returns the picked columns in pick order
/// and their indices into `block.matrix`.
pub fn spa(block: &StackedBlock, k: usize) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let z = &block.matrix;
    if k < 2 || z.ncols() < k {
        return Err(Error::InsufficientMass {
            annotator: block.annotator + 1,
            kept: z.ncols(),
            k,
        });
    }
    let mut residual = z.clone();
    let mut picked = Vec::with_capacity(k);
    for step in 0..k {
        let norms = residual.column_iter().map(|c| c.norm_squared());
        let q = linalg::argmax(norms);
        let norm = residual.column(q).norm();
        if !(norm >= SPA_RESIDUAL_TOL) {
            return Err(Error::DegenerateBlock { annotator: block.annotator + 1, picked: step });
        }
        let u = residual.column(q) / norm;
        // residual <- (I - u u^T) residual
        let proj = u.transpose() * &residual;
        residual -= &u * proj;
        picked.push(q);
    }
    let cols: Vec<_> = picked.iter().map(|&q| z.column(q).into_owned()).collect();
    Ok((DMatrix::from_columns(&cols), picked))
}

/// Annotator with the largest total co-label count; ties to the lowest index.
pub fn default_reference(cooc: &CooccurrenceSet) -> usize {
    let mut best = 0;
    let mut best_count = 0;
    for m in 0..cooc.n_annotators() {
        let c = cooc.total_count(m);
        if c > best_count {
            best = m;
            best_count = c;
        }
    }
    best
}

/// Annotator whose estimate has the smallest condition number; ties to
/// the lowest index.
pub fn best_conditioned_reference(estimates: &[DMatrix<f64>]) -> usize {
    let mut best = 0;
    let mut best_cond = f64::INFINITY;
    for (m, a) in estimates.iter().enumerate() {
        let c = linalg::condition_number(a);
        if c < best_cond {
            best = m;
            best_cond = c;
        }
    }
    best
}

/// Column-normalized estimate of `A_l` in `r`'s column order, derived
/// from `R_{r,l}` and the inverse of `r`'s estimate.
fn transferred_estimate(inv_r: &DMatrix<f64>, r_rl: &DMatrix<f64>) -> DMatrix<f64> {
    // inv(A_r Pi) R_{r,l} = Pi^T D A_l^T, so its transpose holds the scaled
    // columns of A_l in r's order.
    let mut a = (inv_r * r_rl).transpose();
    clamp_normalize_columns(&mut a);
    a
}

/// Cost of placing column `j` of `estimate` at position `i` of `target`.
fn column_cost(target: &DMatrix<f64>, estimate: &DMatrix<f64>) -> DMatrix<f64> {
    let k = target.ncols();
    DMatrix::from_fn(k, k, |i, j| (target.column(i) - estimate.column(j)).norm_squared())
}

/// Aligned estimates with the permutation applied to each.
pub type Aligned = (Vec<DMatrix<f64>>, Vec<Vec<usize>>);

/// Brings every estimate into the reference annotator's column order by
/// breadth-first propagation through the pair graph. Returns the reordered
/// estimates and, per annotator, the permutation applied (column `i` of the
/// output is column `perm[i]` of the input).
pub fn align_permutations(
    estimates: &[DMatrix<f64>],
    cooc: &CooccurrenceSet,
    reference: usize,
) -> Result<Aligned> {
    let m_total = estimates.len();
    let k = cooc.k();
    if reference >= m_total {
        return Err(Error::IndexOutOfRange { what: "annotator", index: reference + 1, max: m_total });
    }
    let mut aligned: Vec<Option<DMatrix<f64>>> = vec![None; m_total];
    let mut perms: Vec<Vec<usize>> = vec![(0..k).collect(); m_total];
    aligned[reference] = Some(estimates[reference].clone());

    let mut queue = VecDeque::from([reference]);
    while let Some(r) = queue.pop_front() {
        let a_r = aligned[r].as_ref().expect("queued annotators are aligned");
        let inv_r = match checked_inverse(a_r) {
            Ok(inv) => inv,
            Err(cond) if r == reference => {
                return Err(Error::ReferenceNotInvertible { annotator: r + 1, cond })
            }
            // An ill-conditioned parent cannot transfer its ordering;
            // its partners may still be reached through others.
            Err(_) => continue,
        };
        for l in cooc.partners(r) {
            if aligned[l].is_some() {
                continue;
            }
            let r_rl = cooc.get(r, l).expect("partner pair exists");
            let target = transferred_estimate(&inv_r, &r_rl);
            let perm = min_cost_assignment(&column_cost(&target, &estimates[l]));
            aligned[l] = Some(linalg::permute_columns(&estimates[l], &perm));
            perms[l] = perm;
            queue.push_back(l);
        }
    }

    let unreachable: Vec<usize> = (0..m_total).filter(|&m| aligned[m].is_none()).map(|m| m + 1).collect();
    if !unreachable.is_empty() {
        return Err(Error::Unreachable(unreachable));
    }
    Ok((aligned.into_iter().map(Option::unwrap).collect(), perms))
}

/// Reorders one estimate so that its diagonal mass is maximal.
/// Re-aligns every non-reference annotator against all of its aligned
/// partners at once. The assignment cost is the sum of the per-partner
/// costs, each weighted by `S_{r,l} / cond(A_r)^2` so that well-estimated,
/// well-conditioned partners dominate. Repeats until no permutation changes
/// or `passes` rounds have run.
pub fn consensus_alignment(
    estimates: &[DMatrix<f64>],
    cooc: &CooccurrenceSet,
    reference: usize,
    mut perms: Vec<Vec<usize>>,
    passes: usize,
) -> (Vec<DMatrix<f64>>, Vec<Vec<usize>>) {
    let k = cooc.k();
    let m_total = estimates.len();
    let mut aligned: Vec<DMatrix<f64>> =
        estimates.iter().zip(&perms).map(|(a, p)| linalg::permute_columns(a, p)).collect();
    for _ in 0..passes {
        let inverses: Vec<Option<(DMatrix<f64>, f64)>> = par::map_slice(&aligned, |a| {
            checked_inverse(a).ok().map(|inv| (inv, linalg::condition_number(a)))
        });
        let next: Vec<Vec<usize>> = par::map_range(m_total, |l| {
            if l == reference {
                return perms[l].clone();
            }
            let mut cost = DMatrix::zeros(k, k);
            let mut any = false;
            for r in cooc.partners(l) {
                let Some((inv_r, cond)) = &inverses[r] else { continue };
                let r_rl = cooc.get(r, l).expect("partner pair exists");
                let w = cooc.count(r, l) as f64 / (cond * cond);
                cost += column_cost(&transferred_estimate(inv_r, &r_rl), &estimates[l]) * w;
                any = true;
            }
            if any { min_cost_assignment(&cost) } else { perms[l].clone() }
        });
        if next == perms {
            break;
        }
        perms = next;
        aligned = estimates.iter().zip(&perms).map(|(a, p)| linalg::permute_columns(a, p)).collect();
    }
    (aligned, perms)
}

/// Relabels the shared class order of already aligned estimates so that
/// the diagonal mass summed over all annotators is maximal. Alignment only
/// fixes the order up to one common permutation; this picks the one under
/// which annotators look best, which names classes sensibly whenever the
/// crowd is better than chance on average.
pub fn orient_shared(aligned: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, Vec<usize>) {
    let Some(first) = aligned.first() else { return (Vec::new(), Vec::new()) };
    let mut total = DMatrix::zeros(first.nrows(), first.ncols());
    for a in aligned {
        total -= a;
    }
    let perm = min_cost_assignment(&total);
    (aligned.iter().map(|a| linalg::permute_columns(a, &perm)).collect(), perm)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Cross-checks each aligned estimate against the estimates its partners
/// imply. Every invertible partner `r` yields a transferred estimate `T_r`
/// of `A_l`; their weighted mean (weights `S_{r,l} / cond(A_r)^2`) replaces
/// the annotator's own estimate when its median distance to the `T_r` is
/// below a quarter of the own estimate's. The median is unweighted so that
/// one confidently wrong partner cannot outvote the rest. This recovers annotators whose own stacked
/// block lacks anchor columns, such as a perfect annotator, from partners
/// that do have them.
pub fn transfer_check(aligned: &[DMatrix<f64>], cooc: &CooccurrenceSet) -> Vec<DMatrix<f64>> {
    let k = cooc.k();
    let inverses: Vec<Option<(DMatrix<f64>, f64)>> = par::map_slice(aligned, |a| {
        checked_inverse(a).ok().map(|inv| (inv, linalg::condition_number(a)))
    });
    par::map_range(aligned.len(), |l| {
        let mut transfers = Vec::new();
        for r in cooc.partners(l) {
            let Some((inv_r, cond)) = &inverses[r] else { continue };
            let r_rl = cooc.get(r, l).expect("partner pair exists");
            transfers.push((transferred_estimate(inv_r, &r_rl), cooc.count(r, l) as f64 / (cond * cond)));
        }
        let total: f64 = transfers.iter().map(|t| t.1).sum();
        if transfers.is_empty() || !(total > 0.0) {
            return aligned[l].clone();
        }
        let mut consensus = DMatrix::zeros(k, k);
        for (t, w) in &transfers {
            consensus += t * (*w / total);
        }
        let spread = |x: &DMatrix<f64>| median(transfers.iter().map(|(t, _)| (t - x).norm()).collect());
        if spread(&consensus) < TRANSFER_MARGIN * spread(&aligned[l]) {
            consensus
        } else {
            aligned[l].clone()
        }
    })
}

pub fn align_diagonal(estimate: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let cost = -estimate.clone();
    let perm = min_cost_assignment(&cost);
    (linalg::permute_columns(estimate, &perm), perm)
}

/// Averages `diag(inv(A_m) R_{m,l} inv(A_l^T))` over pairs with at least
/// `s_min` co-labels and invertible estimates, weighted by co-label count.
/// Each pair's diagonal is clamped at zero before averaging.
pub fn estimate_prior(aligned: &[DMatrix<f64>], cooc: &CooccurrenceSet, s_min: u64) -> Result<PriorPMF> {
    let k = cooc.k();
    let inverses: Vec<Option<DMatrix<f64>>> = aligned.iter().map(|a| checked_inverse(a).ok()).collect();
    let mut acc = DVector::zeros(k);
    let mut weight = 0.0;
    for (&(m, l), stat) in cooc.pairs() {
        if stat.count < s_min {
            continue;
        }
        let (Some(inv_m), Some(inv_l)) = (&inverses[m], &inverses[l]) else {
            continue;
        };
        let d_hat = inv_m * &stat.matrix * inv_l.transpose();
        let diag = d_hat.diagonal().map(|x| x.max(0.0));
        acc += diag * stat.count as f64;
        weight += stat.count as f64;
    }
    if weight == 0.0 {
        return Err(Error::NoQualifyingPair);
    }
    acc /= weight;
    let total: f64 = acc.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegeneratePrior);
    }
    acc /= total;
    PriorPMF::new(acc)
}

/// Runs MultiSPA on precomputed co-occurrences.
pub fn multispa_from_cooc(cooc: &CooccurrenceSet, config: &MultispaConfig) -> Result<ModelEstimate> {
    config.validate()?;
    let k = cooc.k();
    let m_total = cooc.n_annotators();

    if let Some(m) = (0..m_total).find(|&m| cooc.partners(m).is_empty()) {
        return Err(Error::IsolatedAnnotator(m + 1));
    }
    let per_annotator = par::map_range(m_total, |m| -> Result<DMatrix<f64>> {
        let block = build_stacked(m, cooc)?;
        let normalized = normalize_columns(&block, config.eta)?;
        let (a_hat, _) = spa(&normalized, k)?;
        Ok(a_hat)
    });
    let estimates = per_annotator.into_iter().collect::<Result<Vec<_>>>()?;

    let mut aligned = match config.align {
        AlignMethod::Assignment => {
            let reference = config.reference.unwrap_or_else(|| match config.reference_rule {
                ReferenceRule::BestConditioned => best_conditioned_reference(&estimates),
                ReferenceRule::MostCoLabels => default_reference(cooc),
            });
            let (aligned, perms) = align_permutations(&estimates, cooc, reference)?;
            let aligned = if config.consensus_passes == 0 {
                aligned
            } else {
                consensus_alignment(&estimates, cooc, reference, perms, config.consensus_passes).0
            };
            let aligned = if config.transfer_check { transfer_check(&aligned, cooc) } else { aligned };
            orient_shared(&aligned).0
        }
        AlignMethod::DiagonalDominance => estimates.iter().map(|a| align_diagonal(a).0).collect(),
    };
    for a in &mut aligned {
        clamp_normalize_columns(a);
    }

    let mut prior = estimate_prior(&aligned, cooc, config.s_min)?.probs().clone();
    clamp_normalize(&mut prior);
    let confusions = aligned
        .into_iter()
        .map(ConfusionMatrix::new)
        .collect::<Result<Vec<_>>>()?;
    ModelEstimate::new(confusions, PriorPMF::new(prior)?)
}

/// Counts co-occurrences then runs [`multispa_from_cooc`].
pub fn multispa(dataset: &LabelDataset, config: &MultispaConfig) -> Result<ModelEstimate> {
    multispa_from_cooc(&count_pairs(dataset), config)
}
