//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on usage errors, 2 on data or numeric errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::baseline::{em_fit, mv_initialize, EmConfig};
use crate::data::{LabelDataset, ModelEstimate, PriorPMF};
use crate::error::{Error, Result};
use crate::experiment::{run_table, TrialSettings};
use crate::io;
use crate::klfit::{multispa_kl, FitConfig};
use crate::multispa::{multispa, AlignMethod, MultispaConfig, ReferenceRule};
use crate::predict::{classification_error, map_predict, model_mse, MseMode};
use crate::synth::{generate, Regime, SynthConfig};
use crate::par;

#[derive(Debug, Parser)]
#[command(name = "crowdpair", version, about = "Dawid-Skene label aggregation from pairwise co-occurrences")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its truth model and labels.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset CSV.
    Fit(FitArgs),
    /// MAP-predict labels for a dataset with a fitted model.
    Predict(PredictArgs),
    /// Score predictions against truth labels, or a model against a truth model.
    Eval(EvalArgs),
    /// Reproduce a synthetic results table.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Case1,
    Case2,
    AllRandom,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Case1 => Regime::Case1,
            RegimeArg::Case2 => Regime::Case2,
            RegimeArg::AllRandom => Regime::AllRandom,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, value_enum, default_value = "case2")]
    regime: RegimeArg,
    /// Comma-separated class prior; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    prior: Option<Vec<f64>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Multispa,
    MultispaKl,
    MultispaDs,
    MvDs,
    Mv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlignArg {
    Assignment,
    Diagonal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReferenceArg {
    BestConditioned,
    MostColabels,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Declared item count (defaults to the largest item index).
    #[arg(long)]
    n: Option<usize>,
    /// Declared annotator count (defaults to the largest annotator index).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    eta: f64,
    /// 1-based alignment reference annotator.
    #[arg(long)]
    reference: Option<usize>,
    /// How to pick the reference when --reference is absent.
    #[arg(long, value_enum, default_value = "best-conditioned")]
    reference_rule: ReferenceArg,
    /// Consensus re-alignment rounds after the breadth-first pass.
    #[arg(long, default_value_t = 10)]
    consensus_passes: usize,
    /// Keep each annotator's own estimate even when its partners disagree.
    #[arg(long)]
    no_transfer_check: bool,
    #[arg(long, default_value_t = 1)]
    s_min: u64,
    #[arg(long, value_enum, default_value = "assignment")]
    align: AlignArg,
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, default_value_t = 50)]
    inner_iters: usize,
    #[arg(long)]
    weight_by_count: bool,
    #[arg(long, default_value_t = 100)]
    em_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    em_tol: f64,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, requires = "truth", conflicts_with_all = ["model", "truth_model"])]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, requires = "truth_model")]
    model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    truth_model: Option<PathBuf>,
    /// Match each annotator's columns independently.
    #[arg(long)]
    per_annotator: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["3", "4", "5"]))]
    table: String,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 25)]
    m: usize,
    /// Write the machine-readable results here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Entry point used by the binary.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Like [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            let _ = writeln!(err, "error: --threads must be positive");
            return 1;
        }
        // Fails only if the pool already exists (e.g. repeated in-process runs).
        let _ = par::set_num_threads(t);
    }
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::InvalidConfig(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a, out, err),
        Command::Fit(a) => fit(a, out, err),
        Command::Predict(a) => predict(a, out, err),
        Command::Eval(a) => eval(a, out, err),
        Command::Bench(a) => bench(a, out, err),
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn log(err: &mut dyn Write, msg: std::fmt::Arguments<'_>) {
    let _ = writeln!(err, "crowdpair: {msg}");
}

fn simulate(a: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let prior = match &a.prior {
        Some(v) => PriorPMF::new(DVector::from_vec(v.clone())).map_err(|e| Error::InvalidConfig(e.to_string()))?,
        None => PriorPMF::uniform(a.k),
    };
    let cfg = SynthConfig {
        n_items: a.n,
        n_annotators: a.m,
        n_classes: a.k,
        prior,
        p: a.p,
        regime: a.regime.into(),
        seed: a.seed,
    };
    cfg.validate()?;
    log(err, format_args!("simulate config: {cfg:?}"));
    let data = generate(&cfg)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io { path: a.out_dir.clone(), source })?;
    io::save_dataset(&data.dataset, &a.out_dir.join("dataset.csv"))?;
    io::save_model(&data.truth, &a.out_dir.join("truth_model.json"))?;
    io::save_truth(&data.labels, &a.out_dir.join("truth_labels.csv"))?;
    let _ = writeln!(
        out,
        "wrote {} responses for {} items to {}",
        data.dataset.n_responses(),
        data.dataset.n_items(),
        a.out_dir.display()
    );
    Ok(())
}

fn fit(a: FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let dataset = io::load_dataset(&a.data, a.k, a.n, a.m)?;
    let reference = match a.reference {
        Some(0) => return Err(Error::InvalidConfig("--reference is 1-based".into())),
        Some(r) if r > dataset.n_annotators() => {
            return Err(Error::InvalidConfig(format!("--reference {r} exceeds M = {}", dataset.n_annotators())))
        }
        r => r.map(|r| r - 1),
    };
    let spa_cfg = MultispaConfig {
        eta: a.eta,
        reference,
        reference_rule: match a.reference_rule {
            ReferenceArg::BestConditioned => ReferenceRule::BestConditioned,
            ReferenceArg::MostColabels => ReferenceRule::MostCoLabels,
        },
        consensus_passes: a.consensus_passes,
        transfer_check: !a.no_transfer_check,
        s_min: a.s_min,
        align: match a.align {
            AlignArg::Assignment => AlignMethod::Assignment,
            AlignArg::Diagonal => AlignMethod::DiagonalDominance,
        },
    };
    let fit_cfg = FitConfig {
        max_outer_sweeps: a.max_sweeps,
        inner_iterations: a.inner_iters,
        tol: a.tol,
        delta: a.delta,
        weight_by_count: a.weight_by_count,
        multispa: spa_cfg.clone(),
        ..FitConfig::default()
    };
    let em_cfg = EmConfig { max_iters: a.em_iters, tol: a.em_tol, delta: a.delta };
    log(
        err,
        format_args!(
            "fit method={:?} N={} M={} K={} responses={}",
            a.method,
            dataset.n_items(),
            dataset.n_annotators(),
            dataset.n_classes(),
            dataset.n_responses()
        ),
    );

    let model = match a.method {
        MethodArg::Multispa => {
            spa_cfg.validate()?;
            log(err, format_args!("config: {spa_cfg:?}"));
            multispa(&dataset, &spa_cfg)?
        }
        MethodArg::MultispaKl => {
            fit_cfg.validate(a.k)?;
            log(err, format_args!("config: {fit_cfg:?}"));
            let fit = multispa_kl(&dataset, &fit_cfg)?;
            log(
                err,
                format_args!(
                    "sweeps={} objective={:.9e}",
                    fit.sweeps,
                    fit.objective_trace.last().copied().unwrap_or(f64::NAN)
                ),
            );
            fit.model
        }
        MethodArg::MultispaDs => {
            spa_cfg.validate()?;
            log(err, format_args!("config: {spa_cfg:?} {em_cfg:?}"));
            let init = multispa(&dataset, &spa_cfg)?;
            em_fit(&dataset, &init, &em_cfg)?.model
        }
        MethodArg::MvDs => {
            log(err, format_args!("config: {em_cfg:?}"));
            let init = mv_initialize(&dataset, em_cfg.delta)?;
            em_fit(&dataset, &init, &em_cfg)?.model
        }
        MethodArg::Mv => {
            log(err, format_args!("config: delta={}", a.delta));
            mv_initialize(&dataset, a.delta)?
        }
    };
    io::save_model(&model, &a.out)?;
    let _ = writeln!(out, "wrote model (K={}, M={}) to {}", model.k(), model.n_annotators(), a.out.display());
    Ok(())
}

fn load_for_model(path: &Path, model: &ModelEstimate, n: Option<usize>) -> Result<LabelDataset> {
    io::load_dataset(path, model.k(), n, Some(model.n_annotators()))
}

fn predict(a: PredictArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let model = io::load_model(&a.model)?;
    let dataset = load_for_model(&a.data, &model, a.n)?;
    log(err, format_args!("predict delta={} N={}", a.delta, dataset.n_items()));
    let preds = map_predict(&model, &dataset, a.delta)?;
    let rows: Vec<io::PredictionRow> = preds
        .into_iter()
        .enumerate()
        .map(|(item, p)| io::PredictionRow {
            item,
            label: Some(p.label),
            posterior: p.posterior.iter().copied().collect(),
        })
        .collect();
    io::save_predictions(&rows, model.k(), &a.out)?;
    let _ = writeln!(out, "wrote {} predictions to {}", rows.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match (a.pred, a.truth, a.model, a.truth_model) {
        (Some(pred), Some(truth), None, None) => {
            let preds = io::load_predictions(&pred)?;
            let truth = io::load_truth(&truth)?;
            let pairs: Vec<(usize, Option<usize>)> = preds.iter().map(|r| (r.item, r.label)).collect();
            let e = classification_error(&pairs, &truth)?;
            let _ = writeln!(out, "{{\"items\": {}, \"classification_error_pct\": {e:.9e}}}", pairs.len());
            Ok(())
        }
        (None, None, Some(model), Some(truth_model)) => {
            let est = io::load_model(&model)?;
            let truth = io::load_model(&truth_model)?;
            let mode = if a.per_annotator { MseMode::PerAnnotator } else { MseMode::Shared };
            log(err, format_args!("eval mse mode={mode:?}"));
            let v = model_mse(&est, &truth, mode)?;
            let per: Vec<String> = est
                .confusions()
                .iter()
                .zip(truth.confusions())
                .map(|(e, t)| crate::predict::mse(e, t).map(|x| format!("{x:.9e}")))
                .collect::<Result<_>>()?;
            let _ = writeln!(
                out,
                "{{\"annotators\": {}, \"mse\": {v:.9e}, \"per_annotator_mse\": [{}]}}",
                est.n_annotators(),
                per.join(", ")
            );
            Ok(())
        }
        _ => Err(Error::InvalidConfig(
            "eval needs either --pred and --truth, or --model and --truth-model".into(),
        )),
    }
}

fn bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let table: u32 = a.table.parse().expect("validated by clap");
    if a.trials == 0 {
        return Err(Error::InvalidConfig("--trials must be positive".into()));
    }
    let settings = TrialSettings::default();
    log(
        err,
        format_args!(
            "bench table={table} trials={} seed={} N={} M={} {:?} {:?}",
            a.trials, a.seed, a.n, a.m, settings.fit, settings.em
        ),
    );
    let started = std::time::Instant::now();
    let report = run_table(table, a.trials, a.seed, a.n, a.m, &settings)?;
    log(err, format_args!("bench finished in {:.3} s", started.elapsed().as_secs_f64()));
    let _ = write!(out, "{}", report.to_text());
    match &a.csv {
        Some(path) => write_file(path, &report.to_csv())?,
        None => {
            let _ = writeln!(out);
            let _ = write!(out, "{}", report.to_csv());
        }
    }
    Ok(())
}
