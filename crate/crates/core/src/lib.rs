//! Label aggregation for crowdsourcing under the Dawid-Skene model,
//! identified from pairwise annotator co-occurrence statistics.
//!
//! The pipeline is: count pairwise co-occurrences ([`cooccurrence`]),
//! recover each annotator's confusion matrix by successive projection and
//! align the class orderings ([`multispa`]), optionally refine all
//! parameters jointly under a KL criterion ([`klfit`]), and predict labels
//! with the MAP rule ([`predict`]). Majority voting and EM baselines live
//! in [`baseline`]; [`synth`] and [`experiment`] generate and score
//! synthetic benchmarks.
//!
//! # Features
//!
//! * `parallel` (default): data-parallel loops run on rayon. Without it
//!   every loop runs sequentially with identical results.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod baseline;
pub mod cli;
pub mod cooccurrence;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod klfit;
pub mod linalg;
pub mod multispa;
pub mod par;
pub mod predict;
pub mod synth;

pub use baseline::{em_fit, majority_vote, mv_initialize, EmConfig, EmFit};
pub use cooccurrence::{count_pairs, population_cooccurrence, population_set, CooccurrenceSet, PairStat};
pub use data::{validate_dataset, ConfusionMatrix, LabelDataset, ModelEstimate, PriorPMF, Response};
pub use error::{Error, Result};
pub use klfit::{kl_objective, multispa_kl, refine, update_confusion, update_prior, FitConfig, KlFit};
pub use multispa::{multispa, AlignMethod, MultispaConfig, ReferenceRule};
pub use predict::{classification_error, map_predict, model_mse, mse, relabel, shared_permutation, MseMode, Prediction};
pub use synth::{generate, Regime, SynthConfig, SynthData};
