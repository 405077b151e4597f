//! Exact-data oracles and large-sample convergence checks.

use crowdpair::multispa::multispa_from_cooc;
use crowdpair::synth::{empirical_confusions, random_confusion};
use crowdpair::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model_with_identity(seed: u64, k: usize, m: usize, perfect: usize) -> ModelEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mats: Vec<DMatrix<f64>> = (0..m).map(|_| random_confusion(k, &mut rng)).collect();
    mats[perfect] = DMatrix::identity(k, k);
    let mut d = DVector::from_fn(k, |i, _| 1.0 + i as f64);
    d /= d.sum();
    ModelEstimate::from_parts(mats, d).unwrap()
}

#[test]
fn multispa_recovers_population_model() {
    for (seed, k, m) in [(1u64, 3, 10), (2, 3, 6), (3, 4, 8), (4, 2, 5)] {
        let truth = model_with_identity(seed, k, m, seed as usize % m);
        let est = multispa_from_cooc(&population_set(&truth, 50), &MultispaConfig::default()).unwrap();
        let err = model_mse(&est, &truth, MseMode::Shared).unwrap();
        assert!(err <= 1e-10, "seed {seed}: {err}");
        let perm = shared_permutation(&est, &truth).unwrap();
        for i in 0..k {
            let gap = (est.prior().probs()[perm[i]] - truth.prior().probs()[i]).abs();
            assert!(gap <= 1e-10, "seed {seed}: prior gap {gap}");
        }
    }
}

#[test]
fn multispa_orders_classes_by_diagonal_mass() {
    let truth = model_with_identity(9, 3, 6, 0);
    let est = multispa_from_cooc(&population_set(&truth, 50), &MultispaConfig::default()).unwrap();
    // The identity annotator dominates the summed diagonal, so the shared
    // relabeling is the identity.
    assert_eq!(shared_permutation(&est, &truth).unwrap(), vec![0, 1, 2]);
}

#[test]
fn kl_refinement_reaches_zero_on_exact_data() {
    let truth = model_with_identity(5, 3, 6, 2);
    let cooc = population_set(&truth, 100);
    let init = multispa_from_cooc(&cooc, &MultispaConfig::default()).unwrap();
    let cfg = FitConfig { delta: 1e-12, tol: 1e-14, max_outer_sweeps: 200, ..FitConfig::default() };
    let fit = refine(&init, &cooc, &cfg).unwrap();
    let obj = *fit.objective_trace.last().unwrap();
    assert!(obj <= 1e-10, "objective {obj}");
    assert!(model_mse(&fit.model, &truth, MseMode::Shared).unwrap() <= 1e-12);
}

#[test]
fn counted_pairs_approach_population() {
    let data = generate(&SynthConfig::new(100_000, 5, 3, 1.0, Regime::AllRandom, 21)).unwrap();
    let cooc = count_pairs(&data.dataset);
    for (&(m, l), stat) in cooc.pairs() {
        let pop = population_cooccurrence(&data.truth, m, l).unwrap();
        let gap = (&stat.matrix - pop).norm();
        assert!(gap <= 0.01, "pair ({m}, {l}): {gap}");
    }
}

#[test]
fn synthetic_responses_follow_the_truth() {
    let data = generate(&SynthConfig::new(60_000, 4, 3, 1.0, Regime::Case2, 33)).unwrap();
    for (emp, truth) in empirical_confusions(&data).iter().zip(data.truth.confusions()) {
        let gap = (emp - truth.matrix()).amax();
        assert!(gap <= 0.02, "{gap}");
    }
}

#[test]
fn retention_matches_labeling_probability() {
    let (n, m, p) = (20_000usize, 10usize, 0.3);
    let data = generate(&SynthConfig::new(n, m, 3, p, Regime::Case1, 44)).unwrap();
    let trials = (n * m) as f64;
    let expected = trials * p;
    let sigma = (trials * p * (1.0 - p)).sqrt();
    let got = data.dataset.n_responses() as f64;
    assert!((got - expected).abs() <= 3.0 * sigma, "{got} vs {expected} +- {sigma}");
}

#[test]
fn em_stays_at_truth_on_large_samples() {
    let data = generate(&SynthConfig::new(100_000, 6, 3, 1.0, Regime::AllRandom, 55)).unwrap();
    let fit = em_fit(&data.dataset, &data.truth, &EmConfig { max_iters: 1, ..EmConfig::default() }).unwrap();
    for (e, t) in fit.model.confusions().iter().zip(data.truth.confusions()) {
        assert!((e.matrix() - t.matrix()).amax() < 1e-2);
    }
    assert!((fit.model.prior().probs() - data.truth.prior().probs()).amax() < 1e-2);
}
