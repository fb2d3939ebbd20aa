//! The operations behind the CLI subcommands, written as library functions
//! so integration tests can drive them directly.
//!
//! Every command validates the full [`RunConfig`] before any compute, then
//! writes the resolved configuration to `<out>/run.json` and its results to
//! fixed locations beneath the output directory:
//!
//! ```text
//! <out>/run.json      resolved configuration
//! <out>/models/       one bundle directory per fitted strategy
//! <out>/reports/      JSON and CSV result tables
//! <out>/dumps/        large per-point dumps (grids, per-index errors)
//! ```
//!
//! Outputs carry no timestamps, so a command re-run with the same
//! configuration and seed produces byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ToyConfig};
use crate::dataset::{self, LoadSeries, SequenceDataset};
use crate::error::{Error, Result};
use crate::evaluation::{self, quantile_lower};
use crate::flow::{train_flow, FlowTrainConfig, RealNvpFlow};
use crate::forecaster::{self, ForecastDistribution, Forecaster, Strategy};
use crate::mixture::{em_fit, select_k, GaussianMixture, EM_MAX_ITER, EM_TOL};
use crate::seeding::{self, stream};

const TAG_TOY_TRAIN: u64 = 0x746f_7974;
const TAG_TOY_VAL: u64 = 0x746f_7976;
const TAG_TOY_GMM: u64 = 0x746f_7967;
const TAG_TOY_FLOW: u64 = 0x746f_7966;
const TAG_TOY_SAMPLE: u64 = 0x746f_7973;
const TAG_TOY_EM: u64 = 0x746f_7965;
const TAG_TOY_KL: u64 = 0x746f_796b;
const TAG_FORECAST: u64 = 0x6663_7374;
const TAG_SCHEDULE: u64 = 0x7363_6864;
const TAG_DECISION: u64 = 0x6465_6373;

/// The fixed output layout beneath a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
    pub dumps: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> RunPaths {
        RunPaths {
            root: out.to_path_buf(),
            models: out.join("models"),
            reports: out.join("reports"),
            dumps: out.join("dumps"),
        }
    }

    fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.models)?;
        fs::create_dir_all(&self.reports)?;
        fs::create_dir_all(&self.dumps)?;
        Ok(())
    }

    pub fn model_dir(&self, strategy: Strategy) -> PathBuf {
        self.models.join(strategy.name())
    }
}

/// Create the output layout and record the resolved configuration.
fn init_run(cfg: &RunConfig) -> Result<RunPaths> {
    let paths = RunPaths::new(&cfg.out);
    paths.create()?;
    forecaster::write_json(&paths.root.join("run.json"), cfg)?;
    Ok(paths)
}

/// Log which pipeline stage an error came from before propagating it.
fn staged<T>(stage: &str, r: Result<T>) -> Result<T> {
    if let Err(e) = &r {
        log::error!("stage '{stage}' failed: {e}");
    }
    r
}

/// The standardized window datasets a run fits and evaluates on.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: SequenceDataset,
    pub val: SequenceDataset,
    pub test: SequenceDataset,
}

/// Load the configured CSV, or generate the synthetic series.
pub fn load_series(cfg: &RunConfig, seed: u64) -> Result<LoadSeries> {
    match &cfg.data.csv {
        Some(path) => dataset::load_csv(path, &cfg.data.timestamp_column, &cfg.data.value_column),
        None => Ok(dataset::synth_load(
            cfg.data.synth_weeks,
            &cfg.data.synth,
            seeding::mix(seed, stream::DATA),
        )),
    }
}

/// Run the data pipeline: ingest, week-level split, windowing, and
/// standardization with training statistics. The same configuration and
/// seed always yield the same three datasets, so separately invoked `fit`
/// and `evaluate` commands agree on the split.
pub fn prepare_datasets(cfg: &RunConfig, seed: u64) -> Result<PreparedData> {
    let series = staged("ingest", load_series(cfg, seed))?;
    let (train_segments, test_segments) = staged(
        "split",
        dataset::week_split(
            &series,
            cfg.data.test_fraction,
            seeding::mix(seed, stream::SPLIT),
        ),
    )?;
    let train_all = staged(
        "window",
        dataset::rolling_windows(&train_segments, cfg.l, cfg.k, cfg.data.stride),
    )?;
    let test_raw = staged(
        "window",
        dataset::rolling_windows(&test_segments, cfg.l, cfg.k, cfg.data.stride),
    )?;
    let train_std = staged("standardize", train_all.standardize(None))?;
    let stats = train_std.stats;
    let test = staged("standardize", test_raw.standardize(stats))?;
    let (train, val) = staged("standardize", train_std.train_val_split(cfg.data.val_fraction))?;
    Ok(PreparedData { train, val, test })
}

/// Write a synthetic hourly load CSV; returns the file path.
pub fn cmd_synth(cfg: &RunConfig, file: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let paths = init_run(cfg)?;
    let series = dataset::synth_load(
        cfg.data.synth_weeks,
        &cfg.data.synth,
        seeding::mix(cfg.seed0(), stream::DATA),
    );
    let path = match file {
        Some(p) => p.to_path_buf(),
        None => paths.dumps.join("synthetic.csv"),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    series.to_csv(&path, &cfg.data.timestamp_column, &cfg.data.value_column)?;
    log::info!(
        "wrote {} hours of synthetic load to {}",
        series.len(),
        path.display()
    );
    Ok(path)
}

/// Summary written next to a fitted bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub strategy: String,
    pub l: usize,
    pub k: usize,
    pub seed: u64,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
    pub n_test_windows: usize,
    pub stats: Option<(f64, f64)>,
    /// Epochs actually run (0 for closed-form strategies).
    pub epochs_run: usize,
    pub best_val_nll: Option<f64>,
}

/// Fit the single configured strategy and save its bundle; returns the
/// bundle directory.
pub fn cmd_fit(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.strategies.len() != 1 {
        return Err(Error::InvalidConfig(format!(
            "fit needs exactly one strategy (pass --strategy); the configuration lists {}",
            cfg.strategies.len()
        )));
    }
    let strategy = cfg.strategies[0];
    let paths = init_run(cfg)?;
    let seed = cfg.seed0();
    let prepared = prepare_datasets(cfg, seed)?;
    let fc_cfg = cfg.forecaster_config(strategy);
    let (forecaster, curves) = staged(
        "fit",
        forecaster::fit(
            &prepared.train,
            &prepared.val,
            &fc_cfg,
            seeding::mix(seed, stream::FIT),
        ),
    )?;
    let dir = paths.model_dir(strategy);
    fs::create_dir_all(&dir)?;
    forecaster.save(&dir)?;
    if !curves.train.is_empty() {
        forecaster::write_json(&dir.join("curves.json"), &curves)?;
    }
    let report = FitReport {
        strategy: strategy.name().to_string(),
        l: cfg.l,
        k: cfg.k,
        seed,
        n_train_windows: prepared.train.len(),
        n_val_windows: prepared.val.len(),
        n_test_windows: prepared.test.len(),
        stats: forecaster.stats(),
        epochs_run: curves.train.len(),
        best_val_nll: curves.val.iter().copied().reduce(f64::min),
    };
    forecaster::write_json(
        &paths.reports.join(format!("fit_{}.json", strategy.name())),
        &report,
    )?;
    log::info!("saved {strategy} bundle to {}", dir.display());
    Ok(dir)
}

/// One row of the strategy comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub strategy: String,
    pub wape: f64,
    pub rwse: f64,
    /// Mean log-likelihood of the true continuations (raw units); absent
    /// for sample-only strategies.
    pub mean_ll: Option<f64>,
    /// Quantile of per-sequence proportional regrets.
    pub decision_score: f64,
    /// Sequences the decision score skipped (zero hindsight-optimal cost).
    pub skipped_sequences: usize,
    pub per_index_rwse: Vec<f64>,
    pub n_sequences: usize,
}

/// Evaluate saved bundles on the shared test split and write the
/// comparison table plus per-index and trajectory-likelihood dumps.
pub fn cmd_evaluate(cfg: &RunConfig, bundle_dirs: &[PathBuf]) -> Result<Vec<EvalRow>> {
    cfg.validate()?;
    if bundle_dirs.is_empty() {
        return Err(Error::InvalidConfig(
            "evaluate needs at least one --bundle".into(),
        ));
    }
    let paths = init_run(cfg)?;
    let seed = cfg.seed0();
    let prepared = prepare_datasets(cfg, seed)?;
    let test = &prepared.test;
    let metrics_seed = seeding::mix(seed, stream::EVAL);
    let decision_seed = seeding::mix(seed, TAG_DECISION);

    let mut loaded = Vec::new();
    for dir in bundle_dirs {
        let f = Forecaster::load(dir)?;
        if f.l() != cfg.l || f.k() != cfg.k {
            return Err(Error::IncompatibleBundles {
                reason: format!(
                    "bundle {} was fitted with L={}, K={} but the run expects L={}, K={}",
                    dir.display(),
                    f.l(),
                    f.k(),
                    cfg.l,
                    cfg.k
                ),
            });
        }
        loaded.push(f);
    }

    let mut rows = Vec::new();
    for f in &loaded {
        let metrics = evaluation::eval_metrics(f, test, cfg.m, metrics_seed)?;
        let decision = evaluation::decision_score(
            f,
            test,
            cfg.d,
            cfg.alpha,
            cfg.m,
            cfg.quantile,
            decision_seed,
        )?;
        log::info!(
            "{}: WAPE {:.4}, RWSE {:.4}, decision score {:.4}",
            f.strategy(),
            metrics.wape,
            metrics.rwse,
            decision.decision_score
        );
        rows.push(EvalRow {
            strategy: f.strategy().name().to_string(),
            wape: metrics.wape,
            rwse: metrics.rwse,
            mean_ll: metrics.mean_ll,
            decision_score: decision.decision_score,
            skipped_sequences: decision.skipped,
            per_index_rwse: metrics.per_index_rwse,
            n_sequences: metrics.n_sequences,
        });
    }

    forecaster::write_json(&paths.reports.join("evaluation.json"), &rows)?;
    write_eval_csv(&paths.reports.join("evaluation.csv"), &rows)?;
    write_per_index_csv(&paths.dumps.join("per_index_rwse.csv"), &rows)?;
    write_trajectory_ll(&paths.dumps.join("trajectory_ll.csv"), &loaded, test)?;
    Ok(rows)
}

fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "wape",
        "rwse",
        "mean_ll",
        "decision_score",
        "skipped_sequences",
        "n_sequences",
    ])?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            format!("{}", r.wape),
            format!("{}", r.rwse),
            r.mean_ll.map(|v| format!("{v}")).unwrap_or_default(),
            format!("{}", r.decision_score),
            format!("{}", r.skipped_sequences),
            format!("{}", r.n_sequences),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_per_index_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["strategy", "step", "rwse"])?;
    for r in rows {
        for (i, v) in r.per_index_rwse.iter().enumerate() {
            w.write_record([r.strategy.clone(), format!("{}", i + 1), format!("{v}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// For the first flow-based bundle, dump per-window log-likelihoods of the
/// full standardized window under the flow itself and under its
/// approximating mixture — plus, when a `cgmm` bundle is evaluated
/// alongside, under that mixture model too.
fn write_trajectory_ll(path: &Path, loaded: &[Forecaster], test: &SequenceDataset) -> Result<()> {
    let Some(canf) = loaded.iter().find(|f| f.strategy() == Strategy::Canf) else {
        return Ok(());
    };
    let flow = canf.canf_flow().expect("canf bundle carries its flow");
    let flow_ll = flow.log_pdf(test.windows.view())?;
    let anf_ll = canf.window_log_pdf(test.windows.view())?;
    let gmm_ll = loaded
        .iter()
        .find(|f| f.strategy() == Strategy::Cgmm)
        .map(|f| f.window_log_pdf(test.windows.view()))
        .transpose()?;
    let mut w = csv::Writer::from_path(path)?;
    match &gmm_ll {
        Some(_) => w.write_record(["window_start", "flow_ll", "anf_ll", "gmm_ll"])?,
        None => w.write_record(["window_start", "flow_ll", "anf_ll"])?,
    }
    for i in 0..test.len() {
        let mut record = vec![
            format!("{}", test.starts[i]),
            format!("{}", flow_ll[i]),
            format!("{}", anf_ll[i]),
        ];
        if let Some(g) = &gmm_ll {
            record.push(format!("{}", g[i]));
        }
        w.write_record(record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an input window (the last L+1 observed hours) from a CSV with the
/// configured columns and standardize it with the bundle's statistics.
fn read_window(cfg: &RunConfig, forecaster: &Forecaster, path: &Path) -> Result<Array1<f64>> {
    let series = dataset::load_csv(path, &cfg.data.timestamp_column, &cfg.data.value_column)?;
    let expected = forecaster.l() + 1;
    if series.len() != expected {
        return Err(Error::WindowLengthMismatch {
            expected,
            got: series.len(),
        });
    }
    let mut x = Array1::from_vec(series.values);
    if let Some((mean, std)) = forecaster.stats() {
        x.mapv_inplace(|v| (v - mean) / std);
    }
    Ok(x)
}

/// Per-step sample summary of a forecast in raw units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSummary {
    /// 1-based horizon step.
    pub step: usize,
    pub mean: f64,
    pub std: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

/// Component weights and conditional means of an analytic forecast mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub strategy: String,
    pub horizon: usize,
    pub m: usize,
    pub seed: u64,
    pub steps: Vec<StepSummary>,
    /// Present only for strategies with an analytic forecast density.
    pub mixture: Option<MixtureSummary>,
}

fn summarize_forecast(
    forecaster: &Forecaster,
    fd: &ForecastDistribution,
    m: usize,
    seed: u64,
) -> Result<ForecastSummary> {
    let samples = fd.sample(m, seed)?;
    let mut steps = Vec::with_capacity(fd.horizon());
    for j in 0..fd.horizon() {
        let col: Vec<f64> = samples.column(j).to_vec();
        let mean = col.iter().sum::<f64>() / m as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        let mut sorted = col;
        steps.push(StepSummary {
            step: j + 1,
            mean,
            std: var.sqrt(),
            p10: quantile_lower(&mut sorted, 0.1),
            p50: quantile_lower(&mut sorted, 0.5),
            p90: quantile_lower(&mut sorted, 0.9),
        });
    }
    let mixture = fd.analytic().map(|mx| MixtureSummary {
        weights: mx.weights().to_vec(),
        means: mx
            .components()
            .iter()
            .map(|g| g.mean().to_vec())
            .collect(),
    });
    Ok(ForecastSummary {
        strategy: forecaster.strategy().name().to_string(),
        horizon: fd.horizon(),
        m,
        seed,
        steps,
        mixture,
    })
}

/// Forecast the next K hours from a saved bundle and an input-window CSV.
pub fn cmd_forecast(cfg: &RunConfig, bundle: &Path, window_csv: &Path) -> Result<ForecastSummary> {
    cfg.validate()?;
    let paths = init_run(cfg)?;
    let forecaster = Forecaster::load(bundle)?;
    let x = read_window(cfg, &forecaster, window_csv)?;
    let fd = forecaster
        .forecast(x.view())?
        .destandardize(forecaster.stats())?;
    let seed = seeding::mix(cfg.seed0(), TAG_FORECAST);
    let summary = summarize_forecast(&forecaster, &fd, cfg.m, seed)?;
    forecaster::write_json(&paths.reports.join("forecast.json"), &summary)?;
    Ok(summary)
}

/// One row of the per-subset value-at-risk table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarRow {
    /// 1-based horizon indices of the candidate schedule.
    pub indices: Vec<usize>,
    /// α-quantile of the schedule's utility over the shared trajectories.
    pub var: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleOutcome {
    /// The chosen 1-based horizon indices.
    pub indices: Vec<usize>,
    pub d: usize,
    pub alpha: f64,
    pub m: usize,
    pub seed: u64,
    /// The highest-VaR candidate subsets (at most ten), best first.
    pub top: Vec<VarRow>,
    pub forecast: ForecastSummary,
}

/// Pick the D cheapest hours of the forecast horizon by α-value-at-risk.
pub fn cmd_schedule(cfg: &RunConfig, bundle: &Path, window_csv: &Path) -> Result<ScheduleOutcome> {
    cfg.validate()?;
    let paths = init_run(cfg)?;
    let forecaster = Forecaster::load(bundle)?;
    let x = read_window(cfg, &forecaster, window_csv)?;
    let fd = forecaster
        .forecast(x.view())?
        .destandardize(forecaster.stats())?;
    let seed = cfg.seed0();
    let sched_seed = seeding::mix(seed, TAG_SCHEDULE);
    let action = evaluation::select_action(&fd, cfg.d, cfg.alpha, cfg.m, sched_seed)?;
    let table = evaluation::var_table(&fd, cfg.d, cfg.alpha, cfg.m, sched_seed)?;
    let top = table
        .into_iter()
        .take(10)
        .map(|(indices, var)| VarRow { indices, var })
        .collect();
    let forecast = summarize_forecast(
        &forecaster,
        &fd,
        cfg.m,
        seeding::mix(seed, TAG_FORECAST),
    )?;
    let outcome = ScheduleOutcome {
        indices: action.indices().to_vec(),
        d: cfg.d,
        alpha: cfg.alpha,
        m: cfg.m,
        seed,
        top,
        forecast,
    };
    forecaster::write_json(&paths.reports.join("schedule.json"), &outcome)?;
    Ok(outcome)
}

/// Mean and standard deviation of a per-seed statistic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

/// Per-seed result of the toy density-recovery study. KL fields are absent
/// when the seed failed; `status` records why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToySeedResult {
    pub seed: u64,
    pub status: String,
    pub gmm_components: Option<usize>,
    pub kl_gmm: Option<f64>,
    pub se_gmm: Option<f64>,
    pub kl_flow: Option<f64>,
    pub se_flow: Option<f64>,
    pub kl_anf: Option<f64>,
    pub se_anf: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyAggregate {
    /// Seeds that completed.
    pub n_seeds: usize,
    pub gmm: MeanStd,
    pub flow: MeanStd,
    pub anf: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToySummary {
    pub per_seed: Vec<ToySeedResult>,
    /// Aggregate over completed seeds; absent when every seed failed.
    pub aggregate: Option<ToyAggregate>,
}

/// Uniform samples on the unit square, row-major deterministic fill.
fn uniform_square(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeding::rng(seed);
    Array2::from_shape_simple_fn((n, 2), || rng.random::<f64>())
}

struct ToyFit {
    gmm_k: usize,
    gmm: GaussianMixture,
    flow: RealNvpFlow,
    /// Pooled mean/std the flow's inputs were standardized with.
    flow_stats: (f64, f64),
    /// The flow's mixture approximation, mapped back to raw coordinates.
    anf: GaussianMixture,
}

impl ToyFit {
    /// Flow log-density in raw coordinates: the flow models the
    /// standardized data, so the constant Jacobian −d·ln s folds back in.
    fn flow_log_pdf(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let (mean, std) = self.flow_stats;
        let z = x.mapv(|v| (v - mean) / std);
        let jac = x.ncols() as f64 * std.ln();
        Ok(self.flow.log_pdf(z.view())? - jac)
    }
}

fn fit_toy_models(toy: &ToyConfig, seed: u64) -> Result<ToyFit> {
    let train = uniform_square(toy.train_n, seeding::mix(seed, TAG_TOY_TRAIN));
    let val = uniform_square(toy.val_n, seeding::mix(seed, TAG_TOY_VAL));
    let (gmm_k, gmm) = select_k(
        train.view(),
        val.view(),
        &toy.gmm_candidates,
        seeding::mix(seed, TAG_TOY_GMM),
    )?;
    // Standardize the flow's inputs (pooled over both coordinates) so the
    // identity-initialized flow starts aligned with its Gaussian base;
    // densities are mapped back to raw coordinates afterwards.
    let n = train.len() as f64;
    let mean = train.sum() / n;
    let std = (train.mapv(|v| (v - mean).powi(2)).sum() / n).sqrt();
    if std.is_nan() || std <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let z_train = train.mapv(|v| (v - mean) / std);
    let z_val = val.mapv(|v| (v - mean) / std);
    let flow_cfg = FlowTrainConfig {
        shape: toy.flow,
        epochs: toy.flow_epochs,
        batch: toy.flow_batch,
        lr: toy.flow_lr,
        val_every: toy.flow_val_every,
        seed: seeding::mix(seed, TAG_TOY_FLOW),
    };
    let (flow, curves) = train_flow(z_train.view(), z_val.view(), &flow_cfg)?;
    if let Some(best) = curves.val.iter().copied().reduce(f64::min) {
        log::info!(
            "toy seed {seed}: flow ran {} epochs, best validation NLL {best:.4}",
            curves.train.len()
        );
    }
    let samples = forecaster::sample_flow(&flow, toy.anf_samples, seeding::mix(seed, TAG_TOY_SAMPLE))?;
    let (anf_z, _trace) = em_fit(
        samples.view(),
        toy.anf_components,
        seeding::mix(seed, TAG_TOY_EM),
        EM_MAX_ITER,
        EM_TOL,
    )?;
    let anf = anf_z.affine(std, mean)?;
    Ok(ToyFit {
        gmm_k,
        gmm,
        flow,
        flow_stats: (mean, std),
        anf,
    })
}

/// KL(data ‖ model) for the three estimators, on one shared Monte-Carlo
/// sample so the comparison is paired.
fn toy_kls(fit: &ToyFit, kl_n: usize, seed: u64) -> Result<[(f64, f64); 3]> {
    let sampler = |n: usize, s: u64| uniform_square(n, s);
    let log_uniform =
        |x: ArrayView2<'_, f64>| -> Result<Array1<f64>> { Ok(Array1::zeros(x.nrows())) };
    let kl_seed = seeding::mix(seed, TAG_TOY_KL);
    let gmm = evaluation::mc_kl(sampler, log_uniform, |x| fit.gmm.batch_log_pdf(x), kl_n, kl_seed)?;
    let flow = evaluation::mc_kl(sampler, log_uniform, |x| fit.flow_log_pdf(x), kl_n, kl_seed)?;
    let anf = evaluation::mc_kl(sampler, log_uniform, |x| fit.anf.batch_log_pdf(x), kl_n, kl_seed)?;
    Ok([gmm, flow, anf])
}

/// Dump the three log-densities over a regular grid spanning the square
/// with a margin, for plotting.
fn write_toy_grid(path: &Path, fit: &ToyFit, grid: usize) -> Result<()> {
    let (lo, hi) = (-0.25, 1.25);
    let coord = |i: usize| lo + (hi - lo) * i as f64 / (grid - 1) as f64;
    let mut pts = Array2::zeros((grid * grid, 2));
    for i in 0..grid {
        for j in 0..grid {
            pts[[i * grid + j, 0]] = coord(i);
            pts[[i * grid + j, 1]] = coord(j);
        }
    }
    let lg = fit.gmm.batch_log_pdf(pts.view())?;
    let lf = fit.flow_log_pdf(pts.view())?;
    let la = fit.anf.batch_log_pdf(pts.view())?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "log_gmm", "log_flow", "log_anf"])?;
    for r in 0..grid * grid {
        w.write_record([
            format!("{}", pts[[r, 0]]),
            format!("{}", pts[[r, 1]]),
            format!("{}", lg[r]),
            format!("{}", lf[r]),
            format!("{}", la[r]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run the two-dimensional density-recovery study: per seed, fit a
/// validation-selected mixture, a flow, and the flow's mixture
/// approximation to uniform-square samples, and score each by Monte-Carlo
/// KL divergence. Seeds fail independently; completed seeds are always
/// reported.
pub fn cmd_toy(cfg: &RunConfig) -> Result<ToySummary> {
    cfg.validate()?;
    let paths = init_run(cfg)?;
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let run = fit_toy_models(&cfg.toy, seed).and_then(|fit| {
            let kls = toy_kls(&fit, cfg.toy.kl_n, seed)?;
            write_toy_grid(
                &paths.dumps.join(format!("toy_density_seed{seed}.csv")),
                &fit,
                cfg.toy.grid,
            )?;
            Ok((fit.gmm_k, kls))
        });
        match run {
            Ok((gmm_k, [gmm, flow, anf])) => {
                log::info!(
                    "toy seed {seed}: KL gmm {:.4}, flow {:.4}, anf {:.4} (gmm k={gmm_k})",
                    gmm.0,
                    flow.0,
                    anf.0
                );
                per_seed.push(ToySeedResult {
                    seed,
                    status: "ok".into(),
                    gmm_components: Some(gmm_k),
                    kl_gmm: Some(gmm.0),
                    se_gmm: Some(gmm.1),
                    kl_flow: Some(flow.0),
                    se_flow: Some(flow.1),
                    kl_anf: Some(anf.0),
                    se_anf: Some(anf.1),
                });
            }
            Err(e) => {
                log::warn!("toy seed {seed} failed: {e}");
                per_seed.push(ToySeedResult {
                    seed,
                    status: format!("error: {e}"),
                    gmm_components: None,
                    kl_gmm: None,
                    se_gmm: None,
                    kl_flow: None,
                    se_flow: None,
                    kl_anf: None,
                    se_anf: None,
                });
            }
        }
    }
    let ok: Vec<&ToySeedResult> = per_seed.iter().filter(|r| r.status == "ok").collect();
    let aggregate = if ok.is_empty() {
        None
    } else {
        let collect = |get: fn(&ToySeedResult) -> Option<f64>| -> Vec<f64> {
            ok.iter().map(|r| get(r).expect("ok seeds carry KLs")).collect()
        };
        Some(ToyAggregate {
            n_seeds: ok.len(),
            gmm: mean_std(&collect(|r| r.kl_gmm)),
            flow: mean_std(&collect(|r| r.kl_flow)),
            anf: mean_std(&collect(|r| r.kl_anf)),
        })
    };
    let summary = ToySummary {
        per_seed,
        aggregate,
    };
    forecaster::write_json(&paths.reports.join("toy.json"), &summary)?;
    write_toy_csv(&paths.reports.join("toy.csv"), &summary)?;
    write_toy_aggregate_csv(&paths.reports.join("toy_aggregate.csv"), &summary)?;
    Ok(summary)
}

fn write_toy_csv(path: &Path, summary: &ToySummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "model", "kl", "std_err", "status"])?;
    for r in &summary.per_seed {
        let rows: [(&str, Option<f64>, Option<f64>); 3] = [
            ("gmm", r.kl_gmm, r.se_gmm),
            ("flow", r.kl_flow, r.se_flow),
            ("anf", r.kl_anf, r.se_anf),
        ];
        for (model, kl, se) in rows {
            w.write_record([
                format!("{}", r.seed),
                model.to_string(),
                kl.map(|v| format!("{v}")).unwrap_or_default(),
                se.map(|v| format!("{v}")).unwrap_or_default(),
                r.status.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_toy_aggregate_csv(path: &Path, summary: &ToySummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "mean_kl", "std_kl", "n_seeds"])?;
    if let Some(agg) = &summary.aggregate {
        for (model, ms) in [("gmm", &agg.gmm), ("flow", &agg.flow), ("anf", &agg.anf)] {
            w.write_record([
                model.to_string(),
                format!("{}", ms.mean),
                format!("{}", ms.std),
                format!("{}", agg.n_seeds),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
