//! Seeded synthetic benchmark runs: fit every method on generated data and
//! score it against the generating model.

use std::fmt::Write as _;

use crate::baseline::{em_fit, majority_vote, mv_initialize, EmConfig};
use crate::cooccurrence::count_pairs;
use crate::data::ModelEstimate;
use crate::error::{Error, Result};
use crate::klfit::{refine, FitConfig};
use crate::linalg;
use crate::multispa::multispa_from_cooc;
use crate::par;
use crate::predict::{error_rate, map_predict, model_mse, relabel, shared_permutation, MseMode};
use crate::synth::{generate, Regime, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    MultiSpa,
    MultiSpaKl,
    MultiSpaDs,
    MvDs,
    MajorityVote,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::MultiSpa,
        Method::MultiSpaKl,
        Method::MultiSpaDs,
        Method::MvDs,
        Method::MajorityVote,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MultiSpa => "MultiSPA",
            Method::MultiSpaKl => "MultiSPA-KL",
            Method::MultiSpaDs => "MultiSPA-D&S",
            Method::MvDs => "MV-D&S",
            Method::MajorityVote => "MajorityVote",
        }
    }
}

/// Scores of one method on one trial. `mse` is `None` for methods that do
/// not produce a model; both are `None` when the method failed.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub method: Method,
    pub mse: Option<f64>,
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    pub scores: Vec<MethodScore>,
    /// Objective trace of the KL refinement, when it ran.
    pub kl_trace: Vec<f64>,
}

impl TrialResult {
    pub fn score(&self, method: Method) -> Option<&MethodScore> {
        self.scores.iter().find(|s| s.method == method)
    }

    pub fn mse(&self, method: Method) -> Option<f64> {
        self.score(method).and_then(|s| s.mse)
    }

    pub fn error(&self, method: Method) -> Option<f64> {
        self.score(method).and_then(|s| s.error)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrialSettings {
    pub fit: FitConfig,
    pub em: EmConfig,
}

fn score_model(
    method: Method,
    model: &ModelEstimate,
    truth: &ModelEstimate,
    predicted: Vec<Option<usize>>,
    labels: &[usize],
) -> Result<MethodScore> {
    // Class names are identifiable only up to one shared relabeling; the
    // relabeling that matches the confusions to the truth is applied to the
    // predictions too, so both metrics judge the same class assignment.
    let perm = shared_permutation(model, truth)?;
    Ok(MethodScore {
        method,
        mse: Some(model_mse(model, truth, MseMode::Shared)?),
        error: Some(error_rate(&relabel(&predicted, &perm), labels)?),
        failure: None,
    })
}

fn failed(method: Method, e: Error) -> MethodScore {
    MethodScore { method, mse: None, error: None, failure: Some(e.to_string()) }
}

/// Generates one dataset and runs the requested methods on it.
pub fn run_trial(config: &SynthConfig, methods: &[Method], settings: &TrialSettings) -> Result<TrialResult> {
    let data = generate(config)?;
    let truth = &data.truth;
    let labels = &data.labels;
    let cooc = count_pairs(&data.dataset);
    let delta = settings.fit.delta;
    let wants = |m: Method| methods.contains(&m);

    let predict = |model: &ModelEstimate| -> Result<Vec<Option<usize>>> {
        Ok(map_predict(model, &data.dataset, delta)?.into_iter().map(|p| Some(p.label)).collect())
    };
    let em_labels = |post: &[nalgebra::DVector<f64>]| -> Vec<Option<usize>> {
        post.iter().map(|p| Some(linalg::argmax(p.iter().copied()))).collect()
    };

    let mut scores = Vec::new();
    let mut kl_trace = Vec::new();
    let needs_spa = wants(Method::MultiSpa) || wants(Method::MultiSpaKl) || wants(Method::MultiSpaDs);
    let spa = if needs_spa { Some(multispa_from_cooc(&cooc, &settings.fit.multispa)) } else { None };

    if wants(Method::MultiSpa) {
        scores.push(match spa.as_ref().unwrap() {
            Ok(model) => score_model(Method::MultiSpa, model, truth, predict(model)?, labels)?,
            Err(e) => failed(Method::MultiSpa, Error::Eval(e.to_string())),
        });
    }
    if wants(Method::MultiSpaKl) {
        scores.push(match spa.as_ref().unwrap() {
            Ok(init) => match refine(init, &cooc, &settings.fit) {
                Ok(fit) => {
                    kl_trace = fit.objective_trace;
                    score_model(Method::MultiSpaKl, &fit.model, truth, predict(&fit.model)?, labels)?
                }
                Err(e) => failed(Method::MultiSpaKl, e),
            },
            Err(e) => failed(Method::MultiSpaKl, Error::Eval(e.to_string())),
        });
    }
    if wants(Method::MultiSpaDs) {
        scores.push(match spa.as_ref().unwrap() {
            Ok(init) => match em_fit(&data.dataset, init, &settings.em) {
                Ok(fit) => score_model(Method::MultiSpaDs, &fit.model, truth, em_labels(&fit.posteriors), labels)?,
                Err(e) => failed(Method::MultiSpaDs, e),
            },
            Err(e) => failed(Method::MultiSpaDs, Error::Eval(e.to_string())),
        });
    }
    if wants(Method::MvDs) {
        let fit = mv_initialize(&data.dataset, settings.em.delta).and_then(|init| em_fit(&data.dataset, &init, &settings.em));
        scores.push(match fit {
            Ok(fit) => score_model(Method::MvDs, &fit.model, truth, em_labels(&fit.posteriors), labels)?,
            Err(e) => failed(Method::MvDs, e),
        });
    }
    if wants(Method::MajorityVote) {
        scores.push(MethodScore {
            method: Method::MajorityVote,
            mse: None,
            error: Some(error_rate(&majority_vote(&data.dataset), labels)?),
            failure: None,
        });
    }
    Ok(TrialResult { seed: config.seed, scores, kl_trace })
}

/// Seed of trial `trial` in column `column` of a run seeded with `seed`.
pub fn trial_seed(seed: u64, column: usize, trial: usize) -> u64 {
    seed.wrapping_mul(1_000_003)
        .wrapping_add((column as u64) << 20)
        .wrapping_add(trial as u64)
}

/// Runs `trials` independent trials, in parallel, varying only the seed.
pub fn run_trials(
    base: &SynthConfig,
    column: usize,
    trials: usize,
    methods: &[Method],
    settings: &TrialSettings,
) -> Result<Vec<TrialResult>> {
    par::map_range(trials, |t| {
        let cfg = SynthConfig { seed: trial_seed(base.seed, column, t), ..base.clone() };
        run_trial(&cfg, methods, settings)
    })
    .into_iter()
    .collect()
}

/// Which metric a table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    ClassificationError,
}

/// One of the reproducible synthetic tables.
#[derive(Debug, Clone)]
pub struct TableSpec {
    pub id: u32,
    pub title: &'static str,
    pub regime: Regime,
    pub metric: Metric,
    pub ps: Vec<f64>,
    /// (method, published value per p; `None` where not reported).
    pub reference: Vec<(Method, Vec<Option<f64>>)>,
}

pub fn table_spec(id: u32) -> Result<TableSpec> {
    let s = |v: &[f64]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
    match id {
        3 => Ok(TableSpec {
            id,
            title: "Average confusion-matrix MSE, one perfect annotator (case 1)",
            regime: Regime::Case1,
            metric: Metric::Mse,
            ps: vec![0.2, 0.3, 0.5, 1.0],
            reference: vec![
                (Method::MultiSpa, s(&[0.0184, 0.0083, 0.0063, 0.0034])),
                (Method::MultiSpaKl, s(&[0.0019, 0.0009, 0.0004, 1.73e-4])),
                (Method::MvDs, vec![None, None, Some(0.0173), Some(1.84e-4)]),
            ],
        }),
        4 => Ok(TableSpec {
            id,
            title: "Average confusion-matrix MSE, one diagonally dominant annotator (case 2)",
            regime: Regime::Case2,
            metric: Metric::Mse,
            ps: vec![0.2, 0.3, 0.5, 1.0],
            reference: vec![
                (Method::MultiSpa, s(&[0.0229, 0.0188, 0.0115, 0.0102])),
                (Method::MultiSpaKl, s(&[0.0029, 0.0014, 0.0005, 1.67e-4])),
                (Method::MvDs, vec![None, None, Some(0.0028), Some(5.88e-4)]),
            ],
        }),
        5 => Ok(TableSpec {
            id,
            title: "Classification error (%), case 2, uniform prior",
            regime: Regime::Case2,
            metric: Metric::ClassificationError,
            ps: vec![0.2, 0.3, 0.5],
            reference: vec![
                (Method::MultiSpa, s(&[37.24, 26.39, 19.21])),
                (Method::MultiSpaKl, s(&[31.71, 21.10, 12.79])),
                (Method::MultiSpaDs, s(&[31.95, 21.11, 12.80])),
                (Method::MvDs, s(&[66.91, 57.92, 13.09])),
                (Method::MajorityVote, s(&[67.57, 68.37, 71.39])),
            ],
        }),
        other => Err(Error::InvalidConfig(format!("no table {other}; choose 3, 4 or 5"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub method: Method,
    pub p: f64,
    /// Mean over successful trials.
    pub mean: Option<f64>,
    pub ok_trials: usize,
    pub trials: usize,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TableReport {
    pub spec: TableSpec,
    pub n_items: usize,
    pub n_annotators: usize,
    pub seed: u64,
    pub cells: Vec<TableCell>,
}

/// Runs every column of a table with `trials` trials each.
pub fn run_table(
    id: u32,
    trials: usize,
    seed: u64,
    n_items: usize,
    n_annotators: usize,
    settings: &TrialSettings,
) -> Result<TableReport> {
    let spec = table_spec(id)?;
    let methods: Vec<Method> = spec.reference.iter().map(|(m, _)| *m).collect();
    let mut cells = Vec::new();
    for (col, &p) in spec.ps.iter().enumerate() {
        let base = SynthConfig::new(n_items, n_annotators, 3, p, spec.regime, seed);
        let results = run_trials(&base, col, trials, &methods, settings)?;
        for (method, refs) in &spec.reference {
            let values: Vec<f64> = results
                .iter()
                .filter_map(|r| match spec.metric {
                    Metric::Mse => r.mse(*method),
                    Metric::ClassificationError => r.error(*method),
                })
                .collect();
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            cells.push(TableCell {
                method: *method,
                p,
                mean,
                ok_trials: values.len(),
                trials,
                reference: refs[col],
            });
        }
    }
    Ok(TableReport { spec, n_items, n_annotators, seed, cells })
}

fn fmt_num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6e}"),
        None => "-".into(),
    }
}

impl TableReport {
    /// Human-readable table: measured mean and published value per column.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Table {}: {} (N={}, M={}, K=3, trials={}, seed={})",
            self.spec.id,
            self.spec.title,
            self.n_items,
            self.n_annotators,
            self.cells.first().map_or(0, |c| c.trials),
            self.seed
        );
        let _ = write!(out, "{:<14}", "method");
        for p in &self.spec.ps {
            let _ = write!(out, " | {:>13} {:>13}", format!("p={p} ours"), "published");
        }
        out.push('\n');
        for (method, _) in &self.spec.reference {
            let _ = write!(out, "{:<14}", method.name());
            for p in &self.spec.ps {
                let cell = self.cells.iter().find(|c| c.method == *method && c.p == *p).unwrap();
                let _ = write!(out, " | {:>13} {:>13}", fmt_num(cell.mean), fmt_num(cell.reference));
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable results, one row per (method, p).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,method,p,metric,mean,ok_trials,trials,published\n");
        let metric = match self.spec.metric {
            Metric::Mse => "mse",
            Metric::ClassificationError => "error_pct",
        };
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.spec.id,
                c.method.name(),
                c.p,
                metric,
                c.mean.map_or(String::new(), |x| format!("{x:.9e}")),
                c.ok_trials,
                c.trials,
                c.reference.map_or(String::new(), |x| format!("{x:e}")),
            );
        }
        out
    }
}
