//! The forecaster strategies behind the CLI: conditional Gaussian (`cg`),
//! conditional Gaussian mixture (`cgmm`), conditional approximate
//! normalizing flow (`canf`), joint mixture-density network (`jfnn`), and
//! the iterative single-step models (`arma`, `ifnn`).
//!
//! Joint strategies model the full window y[t−L ..= t+K] and produce an
//! analytic conditional mixture given the observed prefix; iterative
//! strategies model one step ahead and forecast by repeatedly appending
//! their own samples to the input window. Fitted forecasters are immutable,
//! and every forecast is pure given a seed, so they are safe to share
//! across threads.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowShape, FlowTrainConfig, RealNvpFlow};
use crate::gaussian::MultivariateGaussian;
use crate::mixture::{em_fit, select_k, GaussianMixture};
use crate::neural::{train_mdn, MdnHead, MdnModel, MdnTrainConfig, TrainingCurves};
use crate::seeding;

/// Flow samples are drawn in chunks of this many rows to bound peak memory
/// when the approximating sample count is large.
const SAMPLE_CHUNK: usize = 65_536;

const TAG_FLOW: u64 = 0x666c_6f77;
const TAG_SAMPLE: u64 = 0x7361_6d70;
const TAG_EM: u64 = 0x656d;
const TAG_CGMM: u64 = 0x6367_6d6d;
const TAG_JFNN: u64 = 0x6a66_6e6e;
const TAG_IFNN: u64 = 0x6966_6e6e;

/// Forecasting strategy tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Conditional Gaussian over the full window.
    Cg,
    /// Conditional Gaussian mixture, component count chosen on validation.
    Cgmm,
    /// Conditional approximate normalizing flow: RealNVP fit, sampled, and
    /// re-approximated by a large mixture that can be conditioned exactly.
    Canf,
    /// Joint mixture-density network over all future steps.
    Jfnn,
    /// Gaussian one-step model rolled out iteratively.
    Arma,
    /// Mixture-density one-step model rolled out iteratively.
    Ifnn,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Cg,
        Strategy::Cgmm,
        Strategy::Canf,
        Strategy::Jfnn,
        Strategy::Arma,
        Strategy::Ifnn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Cg => "cg",
            Strategy::Cgmm => "cgmm",
            Strategy::Canf => "canf",
            Strategy::Jfnn => "jfnn",
            Strategy::Arma => "arma",
            Strategy::Ifnn => "ifnn",
        }
    }

    /// Whether the strategy forecasts by iterative single-step rollout.
    pub fn is_iterative(&self) -> bool {
        matches!(self, Strategy::Arma | Strategy::Ifnn)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|strat| strat.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown strategy '{s}' (expected one of cg, cgmm, canf, jfnn, arma, ifnn)"
                ))
            })
    }
}

/// Hyperparameters of the CANF pipeline: flow training, sample count, and
/// the approximating mixture. Defaults follow the production load setup
/// (10 coupling layers with 2×32 nets, one million samples, 25 components).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanfConfig {
    pub shape: FlowShape,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Epochs between flow validation checks; early-stopping patience counts
    /// checks, so spacing them out lengthens the grace period.
    pub val_every: usize,
    /// Number of flow samples the approximating mixture is fit to.
    pub samples: usize,
    /// Component count of the approximating mixture.
    pub components: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
}

impl Default for CanfConfig {
    fn default() -> Self {
        Self {
            shape: FlowShape {
                coupling_layers: 10,
                hidden_layers: 2,
                hidden_units: 32,
            },
            epochs: 60,
            batch: crate::neural::DEFAULT_BATCH,
            lr: crate::neural::DEFAULT_LR,
            val_every: 1,
            samples: 1_000_000,
            components: 25,
            em_max_iter: crate::mixture::EM_MAX_ITER,
            em_tol: crate::mixture::EM_TOL,
        }
    }
}

/// Hyperparameters of a mixture-density network strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdnStrategyConfig {
    pub hidden: Vec<usize>,
    pub components: usize,
    /// Covariance factor rank; 0 means diagonal covariances.
    pub rank: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl MdnStrategyConfig {
    /// Joint-network default: three 40-unit layers feeding a two-component,
    /// rank-2 mixture over all future steps.
    pub fn jfnn_default() -> Self {
        Self {
            hidden: vec![40, 40, 40],
            components: 2,
            rank: 2,
            epochs: 200,
            batch: crate::neural::DEFAULT_BATCH,
            lr: crate::neural::DEFAULT_LR,
        }
    }

    /// Iterative-network default: three 40-unit layers feeding a
    /// three-component univariate mixture for the next step.
    pub fn ifnn_default() -> Self {
        Self {
            hidden: vec![40, 40, 40],
            components: 3,
            rank: 0,
            epochs: 200,
            batch: crate::neural::DEFAULT_BATCH,
            lr: crate::neural::DEFAULT_LR,
        }
    }
}

fn default_cgmm_candidates() -> Vec<usize> {
    vec![5]
}

/// Complete configuration of one forecaster: strategy tag, window geometry,
/// and per-strategy hyperparameters (unused sections are ignored).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecasterConfig {
    pub strategy: Strategy,
    /// Observed history length L; the input window has L+1 values.
    pub l: usize,
    /// Forecast horizon K.
    pub k: usize,
    #[serde(default = "default_cgmm_candidates")]
    pub cgmm_candidates: Vec<usize>,
    #[serde(default)]
    pub canf: CanfConfig,
    #[serde(default = "MdnStrategyConfig::jfnn_default")]
    pub jfnn: MdnStrategyConfig,
    #[serde(default = "MdnStrategyConfig::ifnn_default")]
    pub ifnn: MdnStrategyConfig,
}

impl ForecasterConfig {
    pub fn new(strategy: Strategy, l: usize, k: usize) -> Self {
        Self {
            strategy,
            l,
            k,
            cgmm_candidates: default_cgmm_candidates(),
            canf: CanfConfig::default(),
            jfnn: MdnStrategyConfig::jfnn_default(),
            ifnn: MdnStrategyConfig::ifnn_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 1 || self.k < 1 {
            return Err(Error::InvalidConfig(format!(
                "window geometry requires L >= 1 and K >= 1, got L={} K={}",
                self.l, self.k
            )));
        }
        if self.cgmm_candidates.is_empty() {
            return Err(Error::InvalidConfig(
                "cgmm candidate list must not be empty".into(),
            ));
        }
        if self.canf.samples < self.canf.components {
            return Err(Error::InvalidConfig(format!(
                "canf sample count {} is below its component count {}",
                self.canf.samples, self.canf.components
            )));
        }
        if self.canf.val_every < 1 {
            return Err(Error::InvalidConfig(
                "canf flow validation interval must be at least 1 epoch".into(),
            ));
        }
        Ok(())
    }
}

enum ModelKind {
    Cg(MultivariateGaussian),
    Cgmm(GaussianMixture),
    Canf {
        flow: RealNvpFlow,
        mixture: GaussianMixture,
    },
    Jfnn(MdnModel),
    Arma {
        joint: MultivariateGaussian,
        coeff: Array1<f64>,
        intercept: f64,
        step_std: f64,
    },
    Ifnn(MdnModel),
}

/// A fitted forecaster. Immutable; `forecast` is pure given a seed.
pub struct Forecaster {
    strategy: Strategy,
    l: usize,
    k: usize,
    stats: Option<(f64, f64)>,
    model: ModelKind,
}

/// The forecast p(y[t+1 ..= t+K] | y[t−L ..= t]): either a closed-form
/// mixture or a seeded trajectory sampler.
pub enum ForecastDistribution {
    /// Closed-form K-dimensional mixture.
    Analytic(GaussianMixture),
    /// Trajectory sampler that is deterministic per seed.
    SampleOnly(SampleForecast),
}

impl ForecastDistribution {
    /// Forecast horizon K.
    pub fn horizon(&self) -> usize {
        match self {
            ForecastDistribution::Analytic(m) => m.dim(),
            ForecastDistribution::SampleOnly(g) => g.horizon,
        }
    }

    pub fn analytic(&self) -> Option<&GaussianMixture> {
        match self {
            ForecastDistribution::Analytic(m) => Some(m),
            ForecastDistribution::SampleOnly(_) => None,
        }
    }

    /// Draw m length-K trajectories, deterministically per seed.
    pub fn sample(&self, m: usize, seed: u64) -> Result<Array2<f64>> {
        match self {
            ForecastDistribution::Analytic(mixture) => Ok(mixture.sample(m, seed)),
            ForecastDistribution::SampleOnly(gen) => gen.sample(m, seed),
        }
    }

    /// Map the forecast back to raw units given the standardization stats
    /// that produced the model inputs. `None` stats are the identity.
    pub fn destandardize(&self, stats: Option<(f64, f64)>) -> Result<ForecastDistribution> {
        let Some((mean, std)) = stats else {
            return Ok(match self {
                ForecastDistribution::Analytic(m) => ForecastDistribution::Analytic(m.clone()),
                ForecastDistribution::SampleOnly(g) => ForecastDistribution::SampleOnly(g.clone()),
            });
        };
        match self {
            ForecastDistribution::Analytic(m) => {
                Ok(ForecastDistribution::Analytic(m.affine(std, mean)?))
            }
            ForecastDistribution::SampleOnly(g) => {
                let mut g = g.clone();
                g.shift = g.shift * std + mean;
                g.scale *= std;
                Ok(ForecastDistribution::SampleOnly(g))
            }
        }
    }
}

enum StepModel {
    Arma {
        coeff: Array1<f64>,
        intercept: f64,
        std: f64,
    },
    Ifnn(MdnModel),
}

impl Clone for StepModel {
    fn clone(&self) -> Self {
        match self {
            StepModel::Arma {
                coeff,
                intercept,
                std,
            } => StepModel::Arma {
                coeff: coeff.clone(),
                intercept: *intercept,
                std: *std,
            },
            StepModel::Ifnn(m) => StepModel::Ifnn(m.clone()),
        }
    }
}

/// Iterative trajectory sampler: repeatedly samples one step ahead and
/// appends it to the (fixed-length) input window.
#[derive(Clone)]
pub struct SampleForecast {
    step: StepModel,
    window: Vec<f64>,
    horizon: usize,
    /// Output affine map (standardized → raw units); the autoregressive
    /// state itself stays in model units.
    scale: f64,
    shift: f64,
}

impl SampleForecast {
    fn sample_next(&self, window: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        match &self.step {
            StepModel::Arma {
                coeff,
                intercept,
                std,
            } => {
                let mean: f64 =
                    intercept + coeff.iter().zip(window).map(|(c, v)| c * v).sum::<f64>();
                Ok(mean + std * rng.sample::<f64, _>(StandardNormal))
            }
            StepModel::Ifnn(model) => {
                let mixture = model.predict(ArrayView1::from(window))?;
                Ok(mixture.sample_with(1, rng)[[0, 0]])
            }
        }
    }

    /// Draw m trajectories of `horizon` steps, deterministic per seed.
    pub fn sample(&self, m: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = seeding::rng(seed);
        let mut out = Array2::zeros((m, self.horizon));
        let mut window = self.window.clone();
        for i in 0..m {
            window.copy_from_slice(&self.window);
            for j in 0..self.horizon {
                let v = self.sample_next(&window, &mut rng)?;
                out[[i, j]] = v * self.scale + self.shift;
                window.rotate_left(1);
                *window.last_mut().expect("non-empty window") = v;
            }
        }
        Ok(out)
    }
}

impl Forecaster {
    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Standardization stats of the training data, if it was standardized.
    pub fn stats(&self) -> Option<(f64, f64)> {
        self.stats
    }

    /// The underlying flow of a CANF forecaster (diagnostics).
    pub fn canf_flow(&self) -> Option<&RealNvpFlow> {
        match &self.model {
            ModelKind::Canf { flow, .. } => Some(flow),
            _ => None,
        }
    }

    /// The approximating mixture of a CANF forecaster (diagnostics).
    pub fn canf_mixture(&self) -> Option<&GaussianMixture> {
        match &self.model {
            ModelKind::Canf { mixture, .. } => Some(mixture),
            _ => None,
        }
    }

    /// One-step regression view of an ARMA forecaster:
    /// (lag coefficients, intercept, innovation std).
    pub fn arma_step(&self) -> Option<(ArrayView1<'_, f64>, f64, f64)> {
        match &self.model {
            ModelKind::Arma {
                coeff,
                intercept,
                step_std,
                ..
            } => Some((coeff.view(), *intercept, *step_std)),
            _ => None,
        }
    }

    /// Joint log-density of full windows under the fitted model, for the
    /// strategies that model full windows (cg, cgmm, canf via its mixture).
    pub fn window_log_pdf(&self, windows: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match &self.model {
            ModelKind::Cg(g) => g.batch_log_pdf(windows),
            ModelKind::Cgmm(m) => m.batch_log_pdf(windows),
            ModelKind::Canf { mixture, .. } => mixture.batch_log_pdf(windows),
            _ => Err(Error::StrategyUnfit {
                strategy: format!("{} does not model full windows", self.strategy),
            }),
        }
    }

    /// Forecast the next K steps given the observed window y[t−L ..= t]
    /// (in the same standardized units the forecaster was fitted on).
    pub fn forecast(&self, x: ArrayView1<'_, f64>) -> Result<ForecastDistribution> {
        if x.len() != self.l + 1 {
            return Err(Error::WindowLengthMismatch {
                expected: self.l + 1,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let split = self.l + 1;
        match &self.model {
            ModelKind::Cg(g) => {
                let posterior = g.condition(x, split)?;
                Ok(ForecastDistribution::Analytic(GaussianMixture::new(
                    vec![1.0],
                    vec![posterior],
                )?))
            }
            ModelKind::Cgmm(m) => Ok(ForecastDistribution::Analytic(m.condition(x, split)?)),
            ModelKind::Canf { mixture, .. } => {
                Ok(ForecastDistribution::Analytic(mixture.condition(x, split)?))
            }
            ModelKind::Jfnn(model) => Ok(ForecastDistribution::Analytic(model.predict(x)?)),
            ModelKind::Arma {
                coeff,
                intercept,
                step_std,
                ..
            } => Ok(ForecastDistribution::SampleOnly(SampleForecast {
                step: StepModel::Arma {
                    coeff: coeff.clone(),
                    intercept: *intercept,
                    std: *step_std,
                },
                window: x.to_vec(),
                horizon: self.k,
                scale: 1.0,
                shift: 0.0,
            })),
            ModelKind::Ifnn(model) => Ok(ForecastDistribution::SampleOnly(SampleForecast {
                step: StepModel::Ifnn(model.clone()),
                window: x.to_vec(),
                horizon: self.k,
                scale: 1.0,
                shift: 0.0,
            })),
        }
    }

    /// Persist the forecaster as a directory: a manifest plus per-model
    /// JSON artifacts.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = BundleManifest {
            strategy: self.strategy,
            l: self.l,
            k: self.k,
            stats: self.stats,
        };
        write_json(&dir.join("forecaster.json"), &manifest)?;
        match &self.model {
            ModelKind::Cg(g) => write_json(&dir.join("cg.json"), g),
            ModelKind::Cgmm(m) => write_json(&dir.join("cgmm.json"), m),
            ModelKind::Canf { flow, mixture } => {
                write_json(&dir.join("flow.json"), flow)?;
                write_json(&dir.join("anf_mixture.json"), mixture)
            }
            ModelKind::Jfnn(m) => write_json(&dir.join("jfnn.json"), m),
            ModelKind::Arma { joint, .. } => write_json(&dir.join("arma.json"), joint),
            ModelKind::Ifnn(m) => write_json(&dir.join("ifnn.json"), m),
        }
    }

    /// Load a forecaster bundle saved by [`save`](Self::save).
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = read_json(&dir.join("forecaster.json"))?;
        let require = |name: &str| -> Result<std::path::PathBuf> {
            let path = dir.join(name);
            if path.exists() {
                Ok(path)
            } else {
                Err(Error::StrategyUnfit {
                    strategy: format!("{} (missing {name})", manifest.strategy),
                })
            }
        };
        let model = match manifest.strategy {
            Strategy::Cg => ModelKind::Cg(read_json(&require("cg.json")?)?),
            Strategy::Cgmm => ModelKind::Cgmm(read_json(&require("cgmm.json")?)?),
            Strategy::Canf => ModelKind::Canf {
                flow: read_json(&require("flow.json")?)?,
                mixture: read_json(&require("anf_mixture.json")?)?,
            },
            Strategy::Jfnn => ModelKind::Jfnn(read_json(&require("jfnn.json")?)?),
            Strategy::Arma => {
                let joint: MultivariateGaussian = read_json(&require("arma.json")?)?;
                let (coeff, intercept, step_std) = one_step_regression(&joint)?;
                ModelKind::Arma {
                    joint,
                    coeff,
                    intercept,
                    step_std,
                }
            }
            Strategy::Ifnn => ModelKind::Ifnn(read_json(&require("ifnn.json")?)?),
        };
        Ok(Forecaster {
            strategy: manifest.strategy,
            l: manifest.l,
            k: manifest.k,
            stats: manifest.stats,
            model,
        })
    }
}

#[cfg(test)]
impl Forecaster {
    /// Test-only: a conditional-Gaussian forecaster with a hand-built joint.
    pub(crate) fn for_tests_cg(
        l: usize,
        k: usize,
        stats: Option<(f64, f64)>,
        joint: MultivariateGaussian,
    ) -> Forecaster {
        assert_eq!(joint.dim(), l + 1 + k);
        Forecaster {
            strategy: Strategy::Cg,
            l,
            k,
            stats,
            model: ModelKind::Cg(joint),
        }
    }

    /// Test-only: a single-step linear forecaster with explicit coefficients
    /// (zero `step_std` makes it deterministic).
    pub(crate) fn for_tests_arma(
        l: usize,
        k: usize,
        stats: Option<(f64, f64)>,
        coeff: Array1<f64>,
        intercept: f64,
        step_std: f64,
    ) -> Forecaster {
        let width = l + 2;
        let joint =
            MultivariateGaussian::new(Array1::zeros(width), Array2::eye(width)).expect("identity");
        Forecaster {
            strategy: Strategy::Arma,
            l,
            k,
            stats,
            model: ModelKind::Arma {
                joint,
                coeff,
                intercept,
                step_std,
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    strategy: Strategy,
    l: usize,
    k: usize,
    stats: Option<(f64, f64)>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn check_compatible(train: &SequenceDataset, val: &SequenceDataset) -> Result<()> {
    if train.l != val.l || train.k != val.k {
        return Err(Error::IncompatibleBundles {
            reason: format!(
                "train windows are (L={}, K={}) but validation windows are (L={}, K={})",
                train.l, train.k, val.l, val.k
            ),
        });
    }
    if train.stats != val.stats {
        return Err(Error::IncompatibleBundles {
            reason: "train and validation sets were standardized differently".into(),
        });
    }
    Ok(())
}

fn check_window_count(ds: &SequenceDataset) -> Result<()> {
    let needed = ds.width() + 1;
    if ds.len() < needed {
        return Err(Error::TooFewPoints {
            n: ds.len(),
            k: needed,
        });
    }
    Ok(())
}

/// Fit a single Gaussian over full windows; forecasting conditions it on
/// the observed prefix (the probabilistic analog of linear regression).
pub fn fit_cg(train: &SequenceDataset) -> Result<Forecaster> {
    check_window_count(train)?;
    let joint = MultivariateGaussian::fit(train.windows.view())?;
    Ok(Forecaster {
        strategy: Strategy::Cg,
        l: train.l,
        k: train.k,
        stats: train.stats,
        model: ModelKind::Cg(joint),
    })
}

/// Fit a Gaussian mixture over full windows, selecting the component count
/// on validation likelihood.
pub fn fit_cgmm(
    train: &SequenceDataset,
    val: &SequenceDataset,
    k_candidates: &[usize],
    seed: u64,
) -> Result<Forecaster> {
    check_compatible(train, val)?;
    check_window_count(train)?;
    let (k, mixture) = select_k(
        train.windows.view(),
        val.windows.view(),
        k_candidates,
        seeding::mix(seed, TAG_CGMM),
    )?;
    log::info!("cgmm selected {k} components");
    Ok(Forecaster {
        strategy: Strategy::Cgmm,
        l: train.l,
        k: train.k,
        stats: train.stats,
        model: ModelKind::Cgmm(mixture),
    })
}

/// Fit the conditional approximate normalizing flow: train a RealNVP flow
/// over full windows, sample it, and fit a mixture to the samples. The
/// mixture is what gets conditioned at forecast time; the flow is retained
/// for diagnostics.
pub fn fit_canf(
    train: &SequenceDataset,
    val: &SequenceDataset,
    config: &CanfConfig,
    seed: u64,
) -> Result<(Forecaster, TrainingCurves)> {
    check_compatible(train, val)?;
    check_window_count(train)?;
    let flow_cfg = FlowTrainConfig {
        shape: config.shape,
        epochs: config.epochs,
        batch: config.batch,
        lr: config.lr,
        val_every: config.val_every,
        seed: seeding::mix(seed, TAG_FLOW),
    };
    let (flow, curves) = train_flow(train.windows.view(), val.windows.view(), &flow_cfg)?;
    if let Some(best) = curves.val.iter().cloned().reduce(f64::min) {
        log::info!("canf flow trained, best validation NLL {best:.4}");
    }
    let samples = sample_flow(&flow, config.samples, seeding::mix(seed, TAG_SAMPLE))?;
    let (mixture, _trace) = em_fit(
        samples.view(),
        config.components,
        seeding::mix(seed, TAG_EM),
        config.em_max_iter,
        config.em_tol,
    )?;
    let forecaster = Forecaster {
        strategy: Strategy::Canf,
        l: train.l,
        k: train.k,
        stats: train.stats,
        model: ModelKind::Canf { flow, mixture },
    };
    Ok((forecaster, curves))
}

/// Draw `count` flow samples in bounded-memory chunks, deterministic per
/// seed.
pub fn sample_flow(flow: &RealNvpFlow, count: usize, seed: u64) -> Result<Array2<f64>> {
    let mut samples = Array2::zeros((count, flow.dim()));
    let mut row = 0;
    let mut chunk_idx = 0u64;
    while row < count {
        let take = SAMPLE_CHUNK.min(count - row);
        let chunk = flow.sample(take, seeding::mix(seed, chunk_idx))?;
        samples.slice_mut(s![row..row + take, ..]).assign(&chunk);
        row += take;
        chunk_idx += 1;
    }
    Ok(samples)
}

/// Fit a joint mixture-density network mapping the observed window to a
/// mixture over all K future steps.
pub fn fit_jfnn(
    train: &SequenceDataset,
    val: &SequenceDataset,
    config: &MdnStrategyConfig,
    seed: u64,
) -> Result<(Forecaster, TrainingCurves)> {
    check_compatible(train, val)?;
    check_window_count(train)?;
    let head = MdnHead {
        k: config.components,
        out_dim: train.k,
        rank: config.rank,
    };
    let cfg = MdnTrainConfig {
        hidden: config.hidden.clone(),
        head,
        epochs: config.epochs,
        batch: config.batch,
        lr: config.lr,
        seed: seeding::mix(seed, TAG_JFNN),
    };
    let (model, curves) = train_mdn(
        train.observed(),
        train.future(),
        val.observed(),
        val.future(),
        &cfg,
    )?;
    let forecaster = Forecaster {
        strategy: Strategy::Jfnn,
        l: train.l,
        k: train.k,
        stats: train.stats,
        model: ModelKind::Jfnn(model),
    };
    Ok((forecaster, curves))
}

/// Fit the Gaussian single-step model over windows of length L+2: a linear
/// one-step predictor with constant innovation variance.
pub fn fit_arma(train: &SequenceDataset) -> Result<Forecaster> {
    check_window_count(train)?;
    let one_step = one_step_windows(train);
    let joint = MultivariateGaussian::fit(one_step.view())?;
    let (coeff, intercept, step_std) = one_step_regression(&joint)?;
    Ok(Forecaster {
        strategy: Strategy::Arma,
        l: train.l,
        k: train.k,
        stats: train.stats,
        model: ModelKind::Arma {
            joint,
            coeff,
            intercept,
            step_std,
        },
    })
}

/// Fit the mixture-density single-step model (univariate mixture over the
/// next step), forecast by iterative rollout.
pub fn fit_ifnn(
    train: &SequenceDataset,
    val: &SequenceDataset,
    config: &MdnStrategyConfig,
    seed: u64,
) -> Result<(Forecaster, TrainingCurves)> {
    check_compatible(train, val)?;
    check_window_count(train)?;
    let train_one = one_step_windows(train);
    let val_one = one_step_windows(val);
    let split = train.l + 1;
    let head = MdnHead {
        k: config.components,
        out_dim: 1,
        rank: config.rank,
    };
    let cfg = MdnTrainConfig {
        hidden: config.hidden.clone(),
        head,
        epochs: config.epochs,
        batch: config.batch,
        lr: config.lr,
        seed: seeding::mix(seed, TAG_IFNN),
    };
    let (model, curves) = train_mdn(
        train_one.slice(s![.., ..split]),
        train_one.slice(s![.., split..]),
        val_one.slice(s![.., ..split]),
        val_one.slice(s![.., split..]),
        &cfg,
    )?;
    let forecaster = Forecaster {
        strategy: Strategy::Ifnn,
        l: train.l,
        k: train.k,
        stats: train.stats,
        model: ModelKind::Ifnn(model),
    };
    Ok((forecaster, curves))
}

/// Fit whichever strategy the config names.
pub fn fit(
    train: &SequenceDataset,
    val: &SequenceDataset,
    config: &ForecasterConfig,
    seed: u64,
) -> Result<(Forecaster, TrainingCurves)> {
    config.validate()?;
    if config.l != train.l || config.k != train.k {
        return Err(Error::IncompatibleBundles {
            reason: format!(
                "config window geometry (L={}, K={}) does not match the dataset (L={}, K={})",
                config.l, config.k, train.l, train.k
            ),
        });
    }
    match config.strategy {
        Strategy::Cg => Ok((fit_cg(train)?, TrainingCurves::default())),
        Strategy::Cgmm => Ok((
            fit_cgmm(train, val, &config.cgmm_candidates, seed)?,
            TrainingCurves::default(),
        )),
        Strategy::Canf => fit_canf(train, val, &config.canf, seed),
        Strategy::Jfnn => fit_jfnn(train, val, &config.jfnn, seed),
        Strategy::Arma => Ok((fit_arma(train)?, TrainingCurves::default())),
        Strategy::Ifnn => fit_ifnn(train, val, &config.ifnn, seed),
    }
}

/// Roll a fitted single-step forecaster (`arma` or `ifnn`) out to horizon
/// `k`: sample one step, append it to the window (dropping the oldest
/// value), and repeat. Returns an m×k trajectory matrix, deterministic per
/// seed.
pub fn iterative_rollout(
    step: &Forecaster,
    x: ArrayView1<'_, f64>,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if !step.strategy.is_iterative() {
        return Err(Error::InvalidConfig(format!(
            "iterative rollout requires a single-step strategy, got {}",
            step.strategy
        )));
    }
    if m < 1 || k < 1 {
        return Err(Error::InvalidConfig(
            "rollout needs at least one trajectory and one step".into(),
        ));
    }
    let forecast = step.forecast(x)?;
    match forecast {
        ForecastDistribution::SampleOnly(mut gen) => {
            gen.horizon = k;
            gen.sample(m, seed)
        }
        ForecastDistribution::Analytic(_) => unreachable!("iterative strategies are SampleOnly"),
    }
}

/// All distinct one-step windows (length L+2) that can be cut from the
/// dataset's rows, deduplicated by absolute start hour so overlapping
/// source windows contribute each transition once.
fn one_step_windows(ds: &SequenceDataset) -> Array2<f64> {
    let width = ds.l + 2;
    let mut seen = HashSet::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut count = 0;
    for (r, &start) in ds.starts.iter().enumerate() {
        let row = ds.windows.row(r);
        for offset in 0..ds.k {
            if seen.insert(start + offset) {
                rows.extend(row.slice(s![offset..offset + width]).iter());
                count += 1;
            }
        }
    }
    Array2::from_shape_vec((count, width), rows).expect("consistent shape")
}

/// Extract the affine one-step predictor hidden in a Gaussian over
/// length-(L+2) windows: posterior mean = intercept + coeffᵀ·window, with a
/// constant posterior variance.
fn one_step_regression(joint: &MultivariateGaussian) -> Result<(Array1<f64>, f64, f64)> {
    let split = joint.dim() - 1;
    let zero = Array1::zeros(split);
    let base = joint.condition(zero.view(), split)?;
    let intercept = base.mean()[0];
    let step_var = base.covariance()[[0, 0]];
    let mut coeff = Array1::zeros(split);
    for j in 0..split {
        let mut e = Array1::zeros(split);
        e[j] = 1.0;
        let shifted = joint.condition(e.view(), split)?;
        coeff[j] = shifted.mean()[0] - intercept;
    }
    Ok((coeff, intercept, step_var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    /// Wrap pre-built rows as a dataset with synthetic provenance spaced so
    /// one-step deduplication keeps every row's transitions.
    fn dataset_from_rows(rows: Array2<f64>, l: usize, k: usize) -> SequenceDataset {
        let width = l + 1 + k;
        assert_eq!(rows.ncols(), width);
        let starts = (0..rows.nrows()).map(|i| i * width).collect();
        SequenceDataset {
            windows: rows,
            l,
            k,
            starts,
            stats: None,
        }
    }

    fn sinusoid_dataset(l: usize, k: usize, hours: usize) -> SequenceDataset {
        let series: Vec<f64> = (0..hours)
            .map(|t| (std::f64::consts::TAU * t as f64 / 24.0).sin())
            .collect();
        let segs = vec![crate::dataset::Segment {
            start_hour: 0,
            values: series,
        }];
        crate::dataset::rolling_windows(&segs, l, k, 1).unwrap()
    }

    fn ar1_dataset(l: usize, k: usize, n_hours: usize, phi: f64, seed: u64) -> SequenceDataset {
        let mut rng = seeding::rng(seed);
        let mut y = 0.0f64;
        let mut series = Vec::with_capacity(n_hours);
        for _ in 0..200 {
            y = phi * y + rng.sample::<f64, _>(StandardNormal);
        }
        for _ in 0..n_hours {
            y = phi * y + rng.sample::<f64, _>(StandardNormal);
            series.push(y);
        }
        let segs = vec![crate::dataset::Segment {
            start_hour: 0,
            values: series,
        }];
        crate::dataset::rolling_windows(&segs, l, k, 1).unwrap()
    }

    /// Correlated Gaussian rows (banded covariance) for regression tests.
    fn banded_dataset(l: usize, k: usize, n: usize, seed: u64) -> SequenceDataset {
        let d = l + 1 + k;
        let cov = Array2::from_shape_fn((d, d), |(i, j)| {
            2.0 * 0.6f64.powi((i as i32 - j as i32).abs())
        });
        let mean = Array1::from_elem(d, 1.5);
        let g = MultivariateGaussian::new(mean, cov).unwrap();
        dataset_from_rows(g.sample(n, seed), l, k)
    }

    #[test]
    fn cg_reproduces_exact_sinusoid() {
        let ds = sinusoid_dataset(5, 3, 400);
        let f = fit_cg(&ds).unwrap();
        for row in [0, 7, 100] {
            let x = ds.windows.row(row);
            let forecast = f.forecast(x.slice(s![..6])).unwrap();
            let mean = forecast.analytic().unwrap().mean();
            for j in 0..3 {
                let truth = x[6 + j];
                assert!(
                    (mean[j] - truth).abs() < 1e-3,
                    "row {row} step {j}: {} vs {truth}",
                    mean[j]
                );
            }
        }
    }

    #[test]
    fn cg_white_noise_forecast_is_marginal() {
        let mut rng = seeding::rng(21);
        let rows = Array2::from_shape_simple_fn((5000, 6), || rng.sample::<f64, _>(StandardNormal));
        let ds = dataset_from_rows(rows, 3, 2);
        let f = fit_cg(&ds).unwrap();
        let x = Array1::from_vec(vec![1.0, -1.0, 0.5, 2.0]);
        let forecast = f.forecast(x.view()).unwrap();
        let mixture = forecast.analytic().unwrap();
        let mean = mixture.mean();
        for j in 0..2 {
            assert!(mean[j].abs() < 0.2, "posterior mean {j} = {}", mean[j]);
            let var = mixture.components()[0].covariance()[[j, j]];
            assert!((var - 1.0).abs() < 0.15, "posterior var {j} = {var}");
        }
    }

    #[test]
    fn cg_mean_matches_ols_oracle() {
        let (l, k) = (3, 2);
        let ds = banded_dataset(l, k, 3000, 5);
        let f = fit_cg(&ds).unwrap();
        let n = ds.len();
        let split = l + 1;

        // Oracle: per-index OLS on centered data via the normal equations,
        // solved with plain Gauss-Jordan elimination.
        let x = ds.observed();
        let y = ds.future();
        let x_mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let y_mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        let xc = &x - &x_mean;
        let yc = &y - &y_mean;
        let xtx = xc.t().dot(&xc) / n as f64;
        let solve = |b: Array1<f64>| -> Array1<f64> {
            let d = b.len();
            let mut a = xtx.clone();
            let mut v = b;
            for p in 0..d {
                let piv = a[[p, p]];
                for j in 0..d {
                    a[[p, j]] /= piv;
                }
                v[p] /= piv;
                for r in 0..d {
                    if r != p {
                        let factor = a[[r, p]];
                        for j in 0..d {
                            a[[r, j]] -= factor * a[[p, j]];
                        }
                        v[r] -= factor * v[p];
                    }
                }
            }
            v
        };
        let betas: Vec<Array1<f64>> = (0..k)
            .map(|j| solve(xc.t().dot(&yc.column(j)) / n as f64))
            .collect();

        let probes = MultivariateGaussian::new(
            Array1::from_elem(split, 1.5),
            Array2::eye(split),
        )
        .unwrap()
        .sample(5, 99);
        for p in 0..probes.nrows() {
            let probe = probes.row(p);
            let forecast = f.forecast(probe).unwrap();
            let mean = forecast.analytic().unwrap().mean();
            for j in 0..k {
                let ols = y_mean[j] + betas[j].dot(&(&probe - &x_mean));
                assert!(
                    (mean[j] - ols).abs() < 1e-6,
                    "probe {p} index {j}: cg {} vs ols {ols}",
                    mean[j]
                );
            }
        }
    }

    #[test]
    fn cgmm_with_one_candidate_equals_cg() {
        let ds = banded_dataset(3, 2, 500, 8);
        let cg = fit_cg(&ds).unwrap();
        let cgmm = fit_cgmm(&ds, &ds, &[1], 4).unwrap();
        let x = ds.observed().row(0).to_owned();
        let a = cg.forecast(x.view()).unwrap();
        let b = cgmm.forecast(x.view()).unwrap();
        let (a, b) = (a.analytic().unwrap(), b.analytic().unwrap());
        let (ma, mb) = (a.mean(), b.mean());
        for j in 0..2 {
            assert!((ma[j] - mb[j]).abs() < 1e-8, "{} vs {}", ma[j], mb[j]);
        }
        let (ca, cb) = (a.components()[0].covariance(), b.components()[0].covariance());
        for (va, vb) in ca.iter().zip(cb.iter()) {
            assert!((va - vb).abs() < 1e-8);
        }
    }

    #[test]
    fn cgmm_separates_phase_regimes() {
        // Two antipodal daily shapes (a sinusoid and its 12-hour shift) with
        // slight phase jitter and noise: a clean two-cluster window set.
        let (l, k) = (4, 3);
        let width = l + 1 + k;
        let n = 600;
        let mut rng = seeding::rng(33);
        let mut rows = Array2::zeros((n, width));
        for i in 0..n {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let jitter: f64 = rng.random_range(-0.5..0.5);
            for j in 0..width {
                let phase = std::f64::consts::TAU * (j as f64 + jitter) / 24.0;
                rows[[i, j]] =
                    sign * phase.sin() + 0.03 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let ds = dataset_from_rows(rows, l, k);
        let f = fit_cgmm(&ds, &ds, &[2], 7).unwrap();

        // An unambiguous positive-regime input.
        let x = Array1::from_shape_fn(l + 1, |j| {
            (std::f64::consts::TAU * j as f64 / 24.0).sin()
        });
        let forecast = f.forecast(x.view()).unwrap();
        let mixture = forecast.analytic().unwrap();
        let top = mixture
            .weights()
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        assert!(top >= 0.9, "dominant posterior weight {top}");
        let mean = mixture.mean();
        for j in 0..k {
            let truth = (std::f64::consts::TAU * (l + 1 + j) as f64 / 24.0).sin();
            assert!(
                (mean[j] - truth).abs() < 0.15,
                "step {j}: {} vs {truth}",
                mean[j]
            );
        }
    }

    fn tiny_canf_config() -> CanfConfig {
        CanfConfig {
            shape: FlowShape {
                coupling_layers: 4,
                hidden_layers: 1,
                hidden_units: 8,
            },
            epochs: 15,
            batch: 128,
            lr: 3e-3,
            val_every: 1,
            samples: 4000,
            components: 4,
            em_max_iter: 100,
            em_tol: 1e-4,
        }
    }

    #[test]
    fn canf_end_to_end_sampling_matches_analytic_mean() {
        let ds = banded_dataset(2, 2, 800, 13);
        let (f, curves) = fit_canf(&ds, &ds, &tiny_canf_config(), 17).unwrap();
        assert!(!curves.train.is_empty() && curves.train.len() == curves.val.len());
        assert!(f.canf_flow().is_some());
        assert_eq!(f.canf_mixture().unwrap().dim(), 5);

        let x = ds.observed().row(3).to_owned();
        let forecast = f.forecast(x.view()).unwrap();
        let mixture = forecast.analytic().unwrap();
        assert_eq!(mixture.k(), 4);
        let wsum: f64 = mixture.weights().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12);

        // Sampling invariant: per-index sample means within 3 standard
        // errors of the analytic mixture mean.
        let m = 10_000;
        let samples = forecast.sample(m, 5).unwrap();
        let analytic = mixture.mean();
        for j in 0..2 {
            let col = samples.column(j);
            let mean = col.mean().unwrap();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
            let se = sd / (m as f64).sqrt();
            assert!(
                (mean - analytic[j]).abs() < 3.0 * se,
                "index {j}: sample {mean} vs analytic {} (se {se})",
                analytic[j]
            );
        }
    }

    #[test]
    fn canf_single_component_degrades_to_gaussian() {
        let ds = banded_dataset(2, 1, 400, 29);
        let mut cfg = tiny_canf_config();
        cfg.samples = 1500;
        cfg.components = 1;
        cfg.epochs = 5;
        let (f, _) = fit_canf(&ds, &ds, &cfg, 3).unwrap();
        let x = ds.observed().row(0).to_owned();
        let forecast = f.forecast(x.view()).unwrap();
        let mixture = forecast.analytic().unwrap();
        assert_eq!(mixture.k(), 1);
        assert!(mixture.mean().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn canf_survives_starved_mixture_fit() {
        // 100 samples shared by 40 components starves some of them; the
        // starvation path (reseed once, then error) must either recover or
        // fail loudly with the component index — never return silently
        // broken weights.
        let ds = banded_dataset(2, 1, 300, 41);
        let mut cfg = tiny_canf_config();
        cfg.samples = 100;
        cfg.components = 40;
        cfg.epochs = 3;
        match fit_canf(&ds, &ds, &cfg, 11) {
            Ok((f, _)) => {
                let mixture = f.canf_mixture().unwrap();
                let wsum: f64 = mixture.weights().iter().sum();
                assert!((wsum - 1.0).abs() < 1e-9);
                assert!(mixture.weights().iter().all(|w| w.is_finite()));
            }
            Err(Error::DegenerateComponent { component }) => {
                assert!(component < 40);
            }
            Err(other) => panic!("unexpected failure mode: {other:?}"),
        }
    }

    #[test]
    fn arma_recovers_ar1_coefficient() {
        let ds = ar1_dataset(4, 3, 6000, 0.8, 2);
        let f = fit_arma(&ds).unwrap();
        let (coeff, intercept, std) = f.arma_step().unwrap();
        let last = coeff[coeff.len() - 1];
        assert!((last - 0.8).abs() < 0.05, "last-lag coefficient {last}");
        for &c in coeff.iter().take(coeff.len() - 1) {
            assert!(c.abs() < 0.08, "stale lag coefficient {c}");
        }
        assert!(intercept.abs() < 0.1);
        assert!((std - 1.0).abs() < 0.1, "innovation std {std}");
    }

    #[test]
    fn arma_constant_series_predicts_the_constant() {
        let segs = vec![crate::dataset::Segment {
            start_hour: 0,
            values: vec![5.0; 60],
        }];
        let ds = crate::dataset::rolling_windows(&segs, 3, 2, 1).unwrap();
        let f = fit_arma(&ds).unwrap();
        let (coeff, intercept, _) = f.arma_step().unwrap();
        let predicted = intercept + coeff.sum() * 5.0;
        assert!((predicted - 5.0).abs() < 1e-6, "predicted {predicted}");
    }

    #[test]
    fn rollout_variance_matches_ar1_closed_form() {
        let phi = 0.8f64;
        let ds = ar1_dataset(4, 4, 8000, phi, 6);
        let f = fit_arma(&ds).unwrap();
        let x = Array1::zeros(5);
        let samples = iterative_rollout(&f, x.view(), 4, 10_000, 44).unwrap();
        for step in 0..4 {
            let col = samples.column(step);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            let horizon = step as i32 + 1;
            let truth = (1.0 - phi.powi(2 * horizon)) / (1.0 - phi * phi);
            assert!(
                (var - truth).abs() < 0.1 * truth,
                "step {step}: var {var} vs {truth}"
            );
        }
    }

    #[test]
    fn rollout_single_step_matches_analytic_posterior() {
        let ds = ar1_dataset(3, 2, 6000, 0.8, 9);
        let f = fit_arma(&ds).unwrap();
        let x = Array1::from_vec(vec![0.3, -0.2, 1.1, 0.6]);
        let (coeff, intercept, std) = f.arma_step().unwrap();
        let analytic_mean = intercept + coeff.dot(&x);
        let m = 20_000;
        let samples = iterative_rollout(&f, x.view(), 1, m, 3).unwrap();
        let col = samples.column(0);
        let mean = col.mean().unwrap();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        let se = std / (m as f64).sqrt();
        assert!(
            (mean - analytic_mean).abs() < 3.0 * se,
            "mean {mean} vs {analytic_mean}"
        );
        assert!((var - std * std).abs() < 0.05 * std * std);
    }

    #[test]
    fn rollout_with_zero_variance_is_deterministic() {
        let ds = ar1_dataset(2, 2, 300, 0.5, 14);
        let joint = MultivariateGaussian::fit(one_step_windows(&ds).view()).unwrap();
        let f = Forecaster {
            strategy: Strategy::Arma,
            l: 2,
            k: 2,
            stats: None,
            model: ModelKind::Arma {
                joint,
                coeff: Array1::from_vec(vec![0.0, 0.0, 0.9]),
                intercept: 0.1,
                step_std: 0.0,
            },
        };
        let x = Array1::from_vec(vec![0.0, 0.0, 1.0]);
        let samples = iterative_rollout(&f, x.view(), 3, 50, 8).unwrap();
        let first = samples.row(0).to_owned();
        assert!((first[0] - 1.0f64.mul_add(0.9, 0.1)).abs() < 1e-12);
        for i in 1..50 {
            assert_eq!(samples.row(i), first.view(), "trajectory {i} differs");
        }
    }

    #[test]
    fn sample_only_forecasts_are_seed_deterministic() {
        let ds = ar1_dataset(3, 4, 2000, 0.7, 25);
        let f = fit_arma(&ds).unwrap();
        let x = ds.observed().row(0).to_owned();
        let fc = f.forecast(x.view()).unwrap();
        assert!(fc.analytic().is_none());
        assert_eq!(fc.horizon(), 4);
        let a = fc.sample(50, 123).unwrap();
        let b = fc.sample(50, 123).unwrap();
        assert_eq!(a, b);
        let c = fc.sample(50, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn jfnn_learns_a_constant_future() {
        let (l, k) = (2, 2);
        let n = 1200;
        let mut rng = seeding::rng(51);
        let mut rows = Array2::zeros((n, l + 1 + k));
        for i in 0..n {
            for j in 0..l + 1 {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
            for j in l + 1..l + 1 + k {
                rows[[i, j]] = 0.8 + 0.02 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let ds = dataset_from_rows(rows, l, k);
        let (train, val) = ds.train_val_split(0.2).unwrap();
        let cfg = MdnStrategyConfig {
            hidden: vec![16],
            components: 2,
            rank: 1,
            epochs: 300,
            batch: 64,
            lr: 3e-3,
        };
        let (f, _) = fit_jfnn(&train, &val, &cfg, 5).unwrap();
        let x = Array1::zeros(l + 1);
        let forecast = f.forecast(x.view()).unwrap();
        let mean = forecast.analytic().unwrap().mean();
        for j in 0..k {
            assert!((mean[j] - 0.8).abs() < 0.05, "index {j}: {}", mean[j]);
        }
    }

    #[test]
    fn ifnn_fits_and_rolls_out() {
        let ds = ar1_dataset(3, 3, 3000, 0.7, 31);
        let (train, val) = ds.train_val_split(0.2).unwrap();
        let cfg = MdnStrategyConfig {
            hidden: vec![16],
            components: 3,
            rank: 0,
            epochs: 40,
            batch: 128,
            lr: 3e-3,
        };
        let (f, _) = fit_ifnn(&train, &val, &cfg, 23).unwrap();
        let x = Array1::zeros(4);
        let fc = f.forecast(x.view()).unwrap();
        let samples = fc.sample(200, 77).unwrap();
        assert_eq!(samples.shape(), &[200, 3]);
        assert!(samples.iter().all(|v| v.is_finite()));
        assert_eq!(samples, fc.sample(200, 77).unwrap());
        let mean = samples.column(0).mean().unwrap();
        assert!(mean.abs() < 0.5, "one-step mean from zero state: {mean}");
    }

    #[test]
    fn standardized_cg_commutes_with_raw_fit() {
        // Commutation is exact up to the fixed covariance regularizer,
        // which is applied in model units; keep the data near unit scale so
        // its imprint stays below the 1e-6 comparison threshold.
        let profile = crate::dataset::SynthProfile {
            daily_amp: 1.3,
            noise_std: 0.3,
            ..crate::dataset::SynthProfile::default()
        };
        let series = crate::dataset::synth_load(10, &profile, 77);
        let segs = vec![crate::dataset::Segment {
            start_hour: 0,
            values: series.values,
        }];
        let raw = crate::dataset::rolling_windows(&segs, 5, 4, 3).unwrap();
        let standardized = raw.standardize(None).unwrap();
        let (mean, std) = standardized.stats.unwrap();

        let f_raw = fit_cg(&raw).unwrap();
        let f_std = fit_cg(&standardized).unwrap();
        assert_eq!(f_std.stats(), Some((mean, std)));

        let x_raw = raw.observed().row(10).to_owned();
        let x_std = x_raw.mapv(|v| (v - mean) / std);
        let a = f_raw.forecast(x_raw.view()).unwrap();
        let b = f_std
            .forecast(x_std.view())
            .unwrap()
            .destandardize(f_std.stats())
            .unwrap();
        let (a, b) = (a.analytic().unwrap(), b.analytic().unwrap());
        let (ma, mb) = (a.mean(), b.mean());
        for j in 0..4 {
            assert!(
                (ma[j] - mb[j]).abs() < 1e-6,
                "mean {j}: {} vs {}",
                ma[j],
                mb[j]
            );
        }
        for (va, vb) in a.components()[0]
            .covariance()
            .iter()
            .zip(b.components()[0].covariance().iter())
        {
            assert!((va - vb).abs() < 1e-6, "cov {va} vs {vb}");
        }
    }

    #[test]
    fn destandardize_scales_sample_forecasts() {
        let ds = ar1_dataset(2, 2, 1000, 0.6, 3);
        let f = fit_arma(&ds).unwrap();
        let x = Array1::zeros(3);
        let fc = f.forecast(x.view()).unwrap();
        let raw = fc.sample(40, 9).unwrap();
        let scaled = fc
            .destandardize(Some((10.0, 2.0)))
            .unwrap()
            .sample(40, 9)
            .unwrap();
        for (r, s) in raw.iter().zip(scaled.iter()) {
            assert!((r * 2.0 + 10.0 - s).abs() < 1e-12);
        }
    }

    #[test]
    fn forecast_validates_inputs() {
        let ds = banded_dataset(3, 2, 300, 2);
        let f = fit_cg(&ds).unwrap();
        let short = Array1::zeros(3);
        assert!(matches!(
            f.forecast(short.view()),
            Err(Error::WindowLengthMismatch {
                expected: 4,
                got: 3
            })
        ));
        let bad = Array1::from_vec(vec![0.0, f64::NAN, 0.0, 0.0]);
        assert!(matches!(f.forecast(bad.view()), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn one_step_windows_deduplicate_overlaps() {
        let (l, k) = (3, 2);
        let segs = vec![crate::dataset::Segment {
            start_hour: 0,
            values: (0..30).map(|i| i as f64).collect(),
        }];
        let ds = crate::dataset::rolling_windows(&segs, l, k, 1).unwrap();
        assert_eq!(ds.len(), 25);
        let one = one_step_windows(&ds);
        // Transitions start at hours 0..=25 — 26 distinct one-step windows.
        assert_eq!(one.nrows(), 26);
        assert_eq!(one.ncols(), l + 2);
        for r in 0..one.nrows() {
            for c in 0..one.ncols() {
                assert_eq!(one[[r, c]], (r + c) as f64);
            }
        }
    }

    #[test]
    fn bundle_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = banded_dataset(3, 2, 400, 6);
        let standardized = ds.standardize(None).unwrap();
        let x = standardized.observed().row(2).to_owned();

        // CG
        let f = fit_cg(&standardized).unwrap();
        let path = dir.path().join("cg");
        f.save(&path).unwrap();
        let g = Forecaster::load(&path).unwrap();
        assert_eq!(g.strategy(), Strategy::Cg);
        assert_eq!(g.stats(), standardized.stats);
        let (a, b) = (
            f.forecast(x.view()).unwrap(),
            g.forecast(x.view()).unwrap(),
        );
        assert_eq!(
            a.analytic().unwrap().mean(),
            b.analytic().unwrap().mean(),
            "reloaded cg forecast must be bit-identical"
        );

        // CGMM
        let f = fit_cgmm(&standardized, &standardized, &[2], 1).unwrap();
        let path = dir.path().join("cgmm");
        f.save(&path).unwrap();
        let g = Forecaster::load(&path).unwrap();
        assert_eq!(
            f.forecast(x.view()).unwrap().analytic().unwrap().mean(),
            g.forecast(x.view()).unwrap().analytic().unwrap().mean()
        );

        // ARMA: derived regression must be rebuilt identically on load.
        let f = fit_arma(&standardized).unwrap();
        let path = dir.path().join("arma");
        f.save(&path).unwrap();
        let g = Forecaster::load(&path).unwrap();
        assert_eq!(f.arma_step().unwrap().0, g.arma_step().unwrap().0);
        assert_eq!(
            f.forecast(x.view()).unwrap().sample(20, 5).unwrap(),
            g.forecast(x.view()).unwrap().sample(20, 5).unwrap()
        );

        // Missing model file → StrategyUnfit.
        std::fs::remove_file(path.join("arma.json")).unwrap();
        assert!(matches!(
            Forecaster::load(&path),
            Err(Error::StrategyUnfit { .. })
        ));
    }

    #[test]
    fn canf_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = banded_dataset(2, 1, 400, 10);
        let mut cfg = tiny_canf_config();
        cfg.samples = 1500;
        cfg.epochs = 5;
        let (f, _) = fit_canf(&ds, &ds, &cfg, 2).unwrap();
        let path = dir.path().join("canf");
        f.save(&path).unwrap();
        let g = Forecaster::load(&path).unwrap();
        let x = ds.observed().row(0).to_owned();
        assert_eq!(
            f.forecast(x.view()).unwrap().analytic().unwrap().mean(),
            g.forecast(x.view()).unwrap().analytic().unwrap().mean()
        );
        // The diagnostic flow survives the round trip too.
        let probe = ds.windows.slice(s![..4, ..]);
        let lp_a = f.canf_flow().unwrap().log_pdf(probe).unwrap();
        let lp_b = g.canf_flow().unwrap().log_pdf(probe).unwrap();
        assert_eq!(lp_a, lp_b);
    }

    #[test]
    fn fit_dispatcher_checks_geometry() {
        let ds = banded_dataset(3, 2, 300, 12);
        let mut cfg = ForecasterConfig::new(Strategy::Cg, 4, 2);
        assert!(matches!(
            fit(&ds, &ds, &cfg, 0),
            Err(Error::IncompatibleBundles { .. })
        ));
        cfg.l = 3;
        let (f, curves) = fit(&ds, &ds, &cfg, 0).unwrap();
        assert_eq!(f.strategy(), Strategy::Cg);
        assert!(curves.train.is_empty());
        assert_eq!("canf".parse::<Strategy>().unwrap(), Strategy::Canf);
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn anf_mixture_tracks_flow_likelihood() {
        // Self-consistency: on held-out flow samples, the approximating
        // mixture's mean log-likelihood lands within 1 nat of the flow's own.
        let ds = banded_dataset(3, 2, 1500, 18);
        let mut cfg = tiny_canf_config();
        cfg.samples = 20_000;
        cfg.components = 10;
        cfg.epochs = 12;
        let (f, _) = fit_canf(&ds, &ds, &cfg, 21).unwrap();
        let flow = f.canf_flow().unwrap();
        let mixture = f.canf_mixture().unwrap();
        let held_out = sample_flow(flow, 4000, 777).unwrap();
        let flow_ll = flow.log_pdf(held_out.view()).unwrap().mean().unwrap();
        let mix_ll = mixture
            .batch_log_pdf(held_out.view())
            .unwrap()
            .mean()
            .unwrap();
        assert!(
            (flow_ll - mix_ll).abs() < 1.0,
            "flow {flow_ll} vs mixture {mix_ll}"
        );
    }
}
