//! Seeded synthetic crowdsourcing data.
//!
//! Truth labels are drawn from the prior, each annotator answers from its
//! confusion column, and each answer is kept with probability `p`.
//! Model parameters come from a stream seeded by the master seed; item `n`
//! draws from its own stream `n + 1` of the same seed, so generation is
//! identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ConfusionMatrix, LabelDataset, ModelEstimate, PriorPMF};
use crate::error::{Error, Result};
use crate::par;

/// How the confusion matrices are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// One randomly chosen annotator is perfect (identity confusion).
    Case1,
    /// One randomly chosen annotator is diagonally dominant.
    Case2,
    /// Every annotator is random.
    AllRandom,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" => Ok(Self::Case1),
            "case2" => Ok(Self::Case2),
            "all_random" | "all-random" => Ok(Self::AllRandom),
            other => Err(Error::InvalidConfig(format!("unknown regime `{other}`"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Case1 => "case1",
            Self::Case2 => "case2",
            Self::AllRandom => "all_random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_annotators: usize,
    pub n_classes: usize,
    pub prior: PriorPMF,
    /// Probability that a response is kept.
    pub p: f64,
    pub regime: Regime,
    pub seed: u64,
}

impl SynthConfig {
    /// Uniform-prior configuration.
    pub fn new(n_items: usize, n_annotators: usize, n_classes: usize, p: f64, regime: Regime, seed: u64) -> Self {
        Self {
            n_items,
            n_annotators,
            n_classes,
            prior: PriorPMF::uniform(n_classes),
            p,
            regime,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidConfig(format!("p must be in (0, 1], got {}", self.p)));
        }
        if self.n_items == 0 || self.n_annotators == 0 || self.n_classes < 2 {
            return Err(Error::InvalidConfig("N, M must be positive and K >= 2".into()));
        }
        if self.prior.k() != self.n_classes {
            return Err(Error::InvalidConfig(format!(
                "prior has {} classes, K = {}",
                self.prior.k(),
                self.n_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: LabelDataset,
    pub truth: ModelEstimate,
    /// 0-based true class per item.
    pub labels: Vec<usize>,
    /// The perfect / dominant annotator, when the regime has one.
    pub special: Option<usize>,
}

/// Columns uniform on (0, 1), l1-normalized.
pub fn random_confusion<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>());
    for mut col in a.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }
    a
}

/// A random confusion matrix whose diagonal entry is the largest in its
/// column: each column's maximum is swapped onto the diagonal.
pub fn diagonally_dominant<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = random_confusion(k, rng);
    for c in 0..k {
        let (imax, _) = a
            .column(c)
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        a.swap((imax, c), (c, c));
        let s = a.column(c).sum();
        a.column_mut(c).unscale_mut(s);
    }
    a
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let k = config.n_classes;
    let m_total = config.n_annotators;
    let mut rng = stream(config.seed, 0);

    let special = match config.regime {
        Regime::AllRandom => None,
        _ => Some(rng.gen_range(0..m_total)),
    };
    let mats: Vec<DMatrix<f64>> = (0..m_total)
        .map(|m| match (config.regime, Some(m) == special) {
            (Regime::Case1, true) => DMatrix::identity(k, k),
            (Regime::Case2, true) => diagonally_dominant(k, &mut rng),
            _ => random_confusion(k, &mut rng),
        })
        .collect();
    let truth = ModelEstimate::new(
        mats.iter().cloned().map(ConfusionMatrix::new).collect::<Result<Vec<_>>>()?,
        config.prior.clone(),
    )?;

    let prior_dist = WeightedIndex::new(config.prior.probs().iter().copied())
        .map_err(|e| Error::InvalidConfig(format!("prior: {e}")))?;
    let columns: Vec<Vec<WeightedIndex<f64>>> = mats
        .iter()
        .map(|a| {
            a.column_iter()
                .map(|c| WeightedIndex::new(c.iter().copied()).expect("confusion column has mass"))
                .collect()
        })
        .collect();

    let rows = par::map_range(config.n_items, |n| {
        let mut rng = stream(config.seed, n as u64 + 1);
        let y = prior_dist.sample(&mut rng);
        let mut row = Vec::with_capacity(m_total);
        for (m, cols) in columns.iter().enumerate() {
            let x = cols[y].sample(&mut rng);
            if rng.gen_bool(config.p) {
                row.push((m, x));
            }
        }
        (y, row)
    });
    let (labels, by_item): (Vec<usize>, Vec<Vec<(usize, usize)>>) = rows.into_iter().unzip();
    let dataset = LabelDataset::from_item_rows(m_total, k, by_item)?;
    Ok(SynthData { dataset, truth, labels, special })
}

/// Empirical Pr(response | truth) per annotator, for diagnostics.
pub fn empirical_confusions(data: &SynthData) -> Vec<DMatrix<f64>> {
    let k = data.dataset.n_classes();
    let mut counts = vec![DMatrix::<f64>::zeros(k, k); data.dataset.n_annotators()];
    for r in data.dataset.responses() {
        counts[r.annotator][(r.label, data.labels[r.item])] += 1.0;
    }
    for a in &mut counts {
        for mut col in a.column_iter_mut() {
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            }
        }
    }
    counts
}

/// The prior `[1/6, 2/3, 1/6]` used for the unbalanced three-class runs.
pub fn unbalanced_prior() -> PriorPMF {
    PriorPMF::new(DVector::from_vec(vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])).expect("valid prior")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;

    #[test]
    fn case1_has_one_identity() {
        let data = generate(&SynthConfig::new(50, 6, 3, 1.0, Regime::Case1, 3)).unwrap();
        let ids: Vec<_> = (0..6)
            .filter(|&m| data.truth.confusion(m).matrix() == &DMatrix::identity(3, 3))
            .collect();
        assert_eq!(ids, vec![data.special.unwrap()]);
    }

    #[test]
    fn full_retention() {
        let data = generate(&SynthConfig::new(40, 5, 3, 1.0, Regime::AllRandom, 1)).unwrap();
        assert_eq!(data.dataset.n_responses(), 200);
        assert!(data.special.is_none());
    }

    #[test]
    fn case2_dominant_diagonal() {
        for seed in 0..20 {
            let data = generate(&SynthConfig::new(5, 4, 4, 1.0, Regime::Case2, seed)).unwrap();
            let a = data.truth.confusion(data.special.unwrap()).matrix();
            for k in 0..4 {
                for j in 0..4 {
                    if j != k {
                        assert!(a[(k, k)] > a[(j, k)]);
                    }
                }
            }
        }
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let cfg = SynthConfig::new(100, 5, 3, 0.5, Regime::Case2, 42);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.labels, b.labels);
        let c = generate(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn generated_data_validates() {
        let data = generate(&SynthConfig::new(100, 7, 3, 0.3, Regime::Case1, 9)).unwrap();
        let d = &data.dataset;
        let responses: Vec<_> = d.responses().collect();
        assert!(validate_dataset(d.n_items(), d.n_annotators(), d.n_classes(), &responses).is_ok());
    }

    #[test]
    fn rejects_bad_p() {
        assert!(generate(&SynthConfig::new(10, 2, 2, 0.0, Regime::Case1, 0)).is_err());
        assert!(generate(&SynthConfig::new(10, 2, 2, 1.5, Regime::Case1, 0)).is_err());
    }
}
