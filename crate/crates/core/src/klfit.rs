//! MultiSPA-KL: refine a MultiSPA initialization by minimizing the summed
//! KL divergence between every observed pair PMF and its model counterpart
//! `A_m Diag(d) A_l^T`, cycling over the confusion matrices and then the
//! prior. Each subproblem is solved by multiplicative majorize-minimize
//! steps, with exponentiated-gradient steps and backtracking as a fallback,
//! so iterates stay on the simplex and no accepted step increases the
//! objective.

use nalgebra::{DMatrix, DVector};

use crate::cooccurrence::{count_pairs, CooccurrenceSet};
use crate::data::{ConfusionMatrix, LabelDataset, ModelEstimate, PriorPMF};
use crate::error::{Error, Result};
use crate::linalg::{floor_normalize, floor_normalize_columns};
use crate::multispa::{multispa_from_cooc, MultispaConfig};
use crate::par;

/// Pair counts at or above which objective terms are evaluated in parallel.
const PAR_TERMS: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_outer_sweeps: usize,
    pub inner_iterations: usize,
    /// Stop once a sweep lowers the objective by less than this fraction.
    pub tol: f64,
    /// Probability floor used in logarithms and on the iterates.
    pub delta: f64,
    /// Weight each pair's divergence by its co-label count (mean weight 1).
    pub weight_by_count: bool,
    /// First trial step of the inner solver.
    pub initial_step: f64,
    /// Halvings tried before an inner solve gives up on a step.
    pub max_backtracks: usize,
    pub multispa: MultispaConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_outer_sweeps: 100,
            inner_iterations: 50,
            tol: 1e-6,
            delta: 1e-6,
            weight_by_count: false,
            initial_step: 1.0,
            max_backtracks: 40,
            multispa: MultispaConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0 / k as f64) {
            return Err(Error::InvalidConfig(format!(
                "delta must be in (0, 1/K) = (0, {}), got {}",
                1.0 / k as f64,
                self.delta
            )));
        }
        if self.max_outer_sweeps == 0 || self.inner_iterations == 0 {
            return Err(Error::InvalidConfig("sweep and iteration counts must be >= 1".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::InvalidConfig("initial_step must be positive".into()));
        }
        self.multispa.validate()
    }
}

/// KL(P || Q) with 0 ln(0/q) = 0 and Q floored at `delta` inside the log.
pub fn kl_divergence(p: &DMatrix<f64>, q: &DMatrix<f64>, delta: f64) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q.max(delta)).ln())
        .sum()
}

/// One observed pair, oriented so rows index annotator `m`'s label.
#[derive(Debug, Clone)]
struct Term {
    m: usize,
    l: usize,
    r: DMatrix<f64>,
    weight: f64,
}

struct Problem {
    terms: Vec<Term>,
    // Per annotator, indices into `terms` with the annotator as row side
    // (stored orientation) or column side (transposed).
    touching: Vec<Vec<(usize, bool)>>,
    delta: f64,
}

impl Problem {
    fn new(cooc: &CooccurrenceSet, weight_by_count: bool, delta: f64) -> Self {
        let mean_count = if cooc.is_empty() {
            1.0
        } else {
            cooc.pairs().map(|(_, p)| p.count as f64).sum::<f64>() / cooc.len() as f64
        };
        let mut terms = Vec::with_capacity(cooc.len());
        let mut touching = vec![Vec::new(); cooc.n_annotators()];
        for (&(m, l), stat) in cooc.pairs() {
            let weight = if weight_by_count { stat.count as f64 / mean_count } else { 1.0 };
            touching[m].push((terms.len(), false));
            touching[l].push((terms.len(), true));
            terms.push(Term { m, l, r: stat.matrix.clone(), weight });
        }
        Self { terms, touching, delta }
    }

    fn term_value(&self, t: &Term, a: &[DMatrix<f64>], d: &DVector<f64>) -> f64 {
        let q = model_pair(&a[t.m], d, &a[t.l]);
        t.weight * kl_divergence(&t.r, &q, self.delta)
    }

    fn objective(&self, a: &[DMatrix<f64>], d: &DVector<f64>) -> f64 {
        let values: Vec<f64> = if self.terms.len() >= PAR_TERMS {
            par::map_slice(&self.terms, |t| self.term_value(t, a, d))
        } else {
            self.terms.iter().map(|t| self.term_value(t, a, d)).collect()
        };
        values.iter().sum()
    }

    /// Oriented (R_{m,l}, A_l, weight) for every partner of `m`.
    fn partners_of<'a>(&'a self, m: usize, a: &'a [DMatrix<f64>]) -> Vec<(DMatrix<f64>, &'a DMatrix<f64>, f64)> {
        self.touching[m]
            .iter()
            .map(|&(idx, transposed)| {
                let t = &self.terms[idx];
                if transposed {
                    (t.r.transpose(), &a[t.m], t.weight)
                } else {
                    (t.r.clone(), &a[t.l], t.weight)
                }
            })
            .collect()
    }
}

/// Diag(d) A_l^T.
fn scaled_transpose(d: &DVector<f64>, al: &DMatrix<f64>) -> DMatrix<f64> {
    let mut b = al.transpose();
    for (k, mut row) in b.row_iter_mut().enumerate() {
        row *= d[k];
    }
    b
}

fn model_pair(am: &DMatrix<f64>, d: &DVector<f64>, al: &DMatrix<f64>) -> DMatrix<f64> {
    am * scaled_transpose(d, al)
}

/// R / max(Q, delta) where R > 0 and Q >= delta, else 0: the data weights
/// in the divergence gradient.
fn ratio(r: &DMatrix<f64>, q: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    r.zip_map(q, |r, q| if r > 0.0 && q >= delta { r / q } else { 0.0 })
}

/// Multiplicative step on each column: x_i exp(-step (g_i - min g)), then
/// unit-sum, floor and unit-sum again.
fn eg_columns(a: &DMatrix<f64>, grad: &DMatrix<f64>, step: f64, delta: f64) -> DMatrix<f64> {
    let mut out = a.clone();
    for (mut col, g) in out.column_iter_mut().zip(grad.column_iter()) {
        let g_min = g.min();
        for (x, gi) in col.iter_mut().zip(g.iter()) {
            *x *= (-step * (gi - g_min)).exp();
        }
        let s = col.sum();
        col /= s;
    }
    floor_normalize_columns(&mut out, delta);
    out
}

/// Majorize-minimize step on each column: x_i (-g_i), then unit-sum,
/// floor and unit-sum again. For this objective `-g` is nonnegative and the
/// step is the classic multiplicative update for mixture weights.
fn mm_columns(a: &DMatrix<f64>, grad: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let mut out = a.component_mul(&(-grad));
    for (mut col, orig) in out.column_iter_mut().zip(a.column_iter()) {
        let s = col.sum();
        if s > 0.0 && s.is_finite() {
            col /= s;
        } else {
            col.copy_from(&orig);
        }
    }
    floor_normalize_columns(&mut out, delta);
    out
}

/// Shared inner loop for the simplex subproblems. Each iteration tries the
/// multiplicative step first; when flooring keeps it from improving, falls
/// back to an exponentiated-gradient step with backtracking.
#[allow(clippy::too_many_arguments)]
fn descend<X: Clone>(
    x0: X,
    iterations: usize,
    initial_step: f64,
    max_backtracks: usize,
    value: impl Fn(&X) -> f64,
    grad: impl Fn(&X) -> DMatrix<f64>,
    mm_step: impl Fn(&X, &DMatrix<f64>) -> X,
    eg_step: impl Fn(&X, &DMatrix<f64>, f64) -> X,
) -> (X, f64, f64) {
    let mut x = x0;
    let mut f = value(&x);
    let mut step = initial_step;
    for _ in 0..iterations {
        let g = grad(&x);
        let cand = mm_step(&x, &g);
        let fc = value(&cand);
        let mut improved = (fc < f).then_some((cand, fc));
        if improved.is_none() {
            for _ in 0..max_backtracks {
                let cand = eg_step(&x, &g, step);
                let fc = value(&cand);
                if fc < f {
                    improved = Some((cand, fc));
                    step = (step * 2.0).min(1e6);
                    break;
                }
                step *= 0.5;
            }
        }
        let Some((cand, fc)) = improved else { break };
        let gain = f - fc;
        x = cand;
        f = fc;
        if gain <= 1e-15 * f.abs() {
            break;
        }
    }
    (x, f, step)
}

fn solve_confusion(
    problem: &Problem,
    m: usize,
    a: &[DMatrix<f64>],
    d: &DVector<f64>,
    config: &FitConfig,
    initial_step: f64,
) -> (DMatrix<f64>, f64) {
    let delta = problem.delta;
    let partners = problem.partners_of(m, a);
    // B_l = Diag(d) A_l^T is fixed during this subproblem.
    let blocks: Vec<(DMatrix<f64>, DMatrix<f64>, f64)> = partners
        .into_iter()
        .map(|(r, al, w)| (r, scaled_transpose(d, al), w))
        .collect();
    let value = |x: &DMatrix<f64>| -> f64 {
        blocks.iter().map(|(r, b, w)| w * kl_divergence(r, &(x * b), delta)).sum()
    };
    let grad = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let mut g = DMatrix::zeros(x.nrows(), x.ncols());
        for (r, b, w) in &blocks {
            let q = x * b;
            g -= ratio(r, &q, delta) * b.transpose() * *w;
        }
        g
    };
    let (x, _, step) = descend(
        a[m].clone(),
        config.inner_iterations,
        initial_step,
        config.max_backtracks,
        value,
        grad,
        |x, g| mm_columns(x, g, delta),
        |x, g, s| eg_columns(x, g, s, delta),
    );
    (x, step)
}

fn solve_prior(
    problem: &Problem,
    a: &[DMatrix<f64>],
    d: &DVector<f64>,
    config: &FitConfig,
    initial_step: f64,
) -> (DVector<f64>, f64) {
    let delta = problem.delta;
    let k = d.len();
    let value = |x: &DVector<f64>| problem.objective(a, x);
    let grad = |x: &DVector<f64>| -> DMatrix<f64> {
        let per_term = |t: &Term| -> DVector<f64> {
            let q = model_pair(&a[t.m], x, &a[t.l]);
            let w = ratio(&t.r, &q, delta);
            // d/dd_k = -(A_m^T W A_l)_kk
            -(a[t.m].transpose() * w * &a[t.l]).diagonal() * t.weight
        };
        let parts: Vec<DVector<f64>> = if problem.terms.len() >= PAR_TERMS {
            par::map_slice(&problem.terms, per_term)
        } else {
            problem.terms.iter().map(per_term).collect()
        };
        let mut g = DVector::zeros(k);
        for p in parts {
            g += p;
        }
        DMatrix::from_column_slice(k, 1, g.as_slice())
    };
    let as_col = |x: &DVector<f64>| DMatrix::from_column_slice(k, 1, x.as_slice());
    let mm_step = |x: &DVector<f64>, g: &DMatrix<f64>| {
        DVector::from_column_slice(mm_columns(&as_col(x), g, delta).as_slice())
    };
    let eg_step = |x: &DVector<f64>, g: &DMatrix<f64>, s: f64| {
        DVector::from_column_slice(eg_columns(&as_col(x), g, s, delta).as_slice())
    };
    let (x, _, step) =
        descend(d.clone(), config.inner_iterations, initial_step, config.max_backtracks, value, grad, mm_step, eg_step);
    (x, step)
}

fn raw_parts(model: &ModelEstimate) -> (Vec<DMatrix<f64>>, DVector<f64>) {
    (
        model.confusions().iter().map(|a| a.matrix().clone()).collect(),
        model.prior().probs().clone(),
    )
}

fn check_dims(model: &ModelEstimate, cooc: &CooccurrenceSet) -> Result<()> {
    if model.k() != cooc.k() || model.n_annotators() != cooc.n_annotators() {
        return Err(Error::DimensionMismatch(format!(
            "model is K={} M={}, co-occurrences are K={} M={}",
            model.k(),
            model.n_annotators(),
            cooc.k(),
            cooc.n_annotators()
        )));
    }
    Ok(())
}

/// Sum over observed pairs of KL(R_{m,l} || A_m D A_l^T), each unordered
/// pair once, with model probabilities floored at `delta` inside the log.
pub fn kl_objective(model: &ModelEstimate, cooc: &CooccurrenceSet, delta: f64) -> Result<f64> {
    check_dims(model, cooc)?;
    let (a, d) = raw_parts(model);
    Ok(Problem::new(cooc, false, delta).objective(&a, &d))
}

/// Re-solves annotator `m`'s confusion matrix with everything else held
/// fixed. Never returns a matrix with a higher subproblem objective.
pub fn update_confusion(
    m: usize,
    model: &ModelEstimate,
    cooc: &CooccurrenceSet,
    config: &FitConfig,
) -> Result<ConfusionMatrix> {
    check_dims(model, cooc)?;
    config.validate(model.k())?;
    let problem = Problem::new(cooc, config.weight_by_count, config.delta);
    let (a, d) = raw_parts(model);
    let (am, _) = solve_confusion(&problem, m, &a, &d, config, config.initial_step);
    ConfusionMatrix::new(am)
}

/// Re-solves the prior with all confusion matrices held fixed.
pub fn update_prior(model: &ModelEstimate, cooc: &CooccurrenceSet, config: &FitConfig) -> Result<PriorPMF> {
    check_dims(model, cooc)?;
    config.validate(model.k())?;
    let problem = Problem::new(cooc, config.weight_by_count, config.delta);
    let (a, d) = raw_parts(model);
    let (d, _) = solve_prior(&problem, &a, &d, config, config.initial_step);
    PriorPMF::new(d)
}

/// Outcome of a KL refinement.
#[derive(Debug, Clone)]
pub struct KlFit {
    pub model: ModelEstimate,
    /// The MultiSPA estimate the refinement started from (before flooring).
    pub initial: ModelEstimate,
    /// Objective after flooring the initialization, then after every sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
}

/// Alternating minimization from `init`: every sweep updates A_1..A_M in
/// order, then the prior.
pub fn refine(init: &ModelEstimate, cooc: &CooccurrenceSet, config: &FitConfig) -> Result<KlFit> {
    check_dims(init, cooc)?;
    config.validate(init.k())?;
    let problem = Problem::new(cooc, config.weight_by_count, config.delta);
    let (mut a, mut d) = raw_parts(init);
    for am in &mut a {
        floor_normalize_columns(am, config.delta);
    }
    floor_normalize(&mut d, config.delta);

    let mut steps = vec![config.initial_step; a.len() + 1];
    let mut trace = vec![problem.objective(&a, &d)];
    let mut sweeps = 0;
    while sweeps < config.max_outer_sweeps {
        for m in 0..a.len() {
            if problem.touching[m].is_empty() {
                continue;
            }
            let (am, step) = solve_confusion(&problem, m, &a, &d, config, steps[m]);
            a[m] = am;
            steps[m] = step;
        }
        let (new_d, step) = solve_prior(&problem, &a, &d, config, steps[a.len()]);
        d = new_d;
        steps[a.len()] = step;
        sweeps += 1;

        let prev = *trace.last().unwrap();
        let cur = problem.objective(&a, &d);
        trace.push(cur);
        if prev <= f64::MIN_POSITIVE || (prev - cur) / prev.abs() < config.tol {
            break;
        }
    }
    let model = ModelEstimate::from_parts(a, d)?;
    Ok(KlFit { model, initial: init.clone(), objective_trace: trace, sweeps })
}

/// MultiSPA initialization followed by [`refine`], on precomputed co-occurrences.
pub fn multispa_kl_from_cooc(cooc: &CooccurrenceSet, config: &FitConfig) -> Result<KlFit> {
    config.validate(cooc.k())?;
    let init = multispa_from_cooc(cooc, &config.multispa)?;
    refine(&init, cooc, config)
}

pub fn multispa_kl(dataset: &LabelDataset, config: &FitConfig) -> Result<KlFit> {
    multispa_kl_from_cooc(&count_pairs(dataset), config)
}
