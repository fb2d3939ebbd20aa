//! Run configuration shared by every CLI subcommand.
//!
//! A run is described by a single TOML file ([`RunConfig`]); individual CLI
//! flags override fields after the file is loaded (flags win). Every command
//! validates the full configuration before doing any compute, and writes the
//! resolved configuration to `<out>/run.json` so a run can be reproduced
//! from its output directory alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SynthProfile;
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_ALPHA, DEFAULT_D, DEFAULT_M, DEFAULT_QUANTILE};
use crate::flow::FlowShape;
use crate::forecaster::{CanfConfig, ForecasterConfig, MdnStrategyConfig, Strategy};

/// Where the hourly load series comes from and how it is windowed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Hourly load CSV. When absent, a synthetic series is generated from
    /// `synth` instead.
    pub csv: Option<PathBuf>,
    /// Name of the timestamp column in the CSV.
    pub timestamp_column: String,
    /// Name of the load column in the CSV.
    pub value_column: String,
    /// Length of the generated series (whole weeks) when no CSV is given.
    pub synth_weeks: usize,
    /// Shape of the synthetic load profile.
    pub synth: SynthProfile,
    /// Fraction of whole weeks held out as the test set.
    pub test_fraction: f64,
    /// Fraction of training windows (the latest ones) held out for
    /// validation-based model selection and early stopping.
    pub val_fraction: f64,
    /// Hours between consecutive window starts.
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: None,
            timestamp_column: "timestamp".into(),
            value_column: "load_kwh".into(),
            synth_weeks: 52,
            synth: SynthProfile::default(),
            test_fraction: 0.25,
            val_fraction: 0.2,
            stride: 1,
        }
    }
}

/// Configuration for the two-dimensional density-recovery study run by
/// `canf toy`: all three estimators are fitted to samples from the unit
/// square and scored by Monte-Carlo KL divergence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Training sample count per seed.
    pub train_n: usize,
    /// Validation sample count per seed.
    pub val_n: usize,
    /// Monte-Carlo sample count for the KL estimates.
    pub kl_n: usize,
    /// Component counts tried when selecting the mixture size on the
    /// validation set.
    pub gmm_candidates: Vec<usize>,
    /// Flow architecture.
    pub flow: FlowShape,
    pub flow_epochs: usize,
    pub flow_batch: usize,
    pub flow_lr: f64,
    /// Epochs between validation checks during flow training. The toy's
    /// 200-point validation set is noisy, and the flow leaves its identity
    /// start slowly; checking every epoch lets the patience rule fire before
    /// training has escaped the initialization.
    pub flow_val_every: usize,
    /// Flow samples drawn to build the approximating mixture.
    pub anf_samples: usize,
    /// Component count of the approximating mixture.
    pub anf_components: usize,
    /// Per-axis resolution of the log-density grid dumps.
    pub grid: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            train_n: 1000,
            val_n: 200,
            kl_n: 50_000,
            gmm_candidates: (4..=12).collect(),
            flow: FlowShape {
                coupling_layers: 4,
                hidden_layers: 2,
                hidden_units: 12,
            },
            // Full-batch descent keeps the validation curve smooth enough
            // that early stopping measures progress rather than minibatch
            // noise; the epoch cap is generous because patience, not the
            // cap, ends the run.
            flow_epochs: 20_000,
            flow_batch: 1024,
            flow_lr: 3e-3,
            flow_val_every: 25,
            anf_samples: 10_000,
            anf_components: 40,
            grid: 60,
        }
    }
}

/// One run: dataset, window geometry, strategies with their
/// hyperparameters, scheduling parameters, seeds, and the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Free-form tag identifying the experiment.
    pub experiment: String,
    pub data: DataConfig,
    /// Observed window length (hours before the forecast origin; the window
    /// also includes the origin hour itself).
    pub l: usize,
    /// Forecast horizon (hours).
    pub k: usize,
    /// Number of hours to schedule.
    pub d: usize,
    /// Value-at-risk level for scheduling.
    pub alpha: f64,
    /// Trajectories drawn per forecast for metrics and scheduling.
    pub m: usize,
    /// Quantile of per-sequence regrets reported as the decision score.
    pub quantile: f64,
    /// Strategies a multi-strategy command operates on.
    pub strategies: Vec<Strategy>,
    /// Seeds; multi-seed commands iterate all of them, single-run commands
    /// use the first.
    pub seeds: Vec<u64>,
    /// Output directory; reports land in fixed locations beneath it.
    pub out: PathBuf,
    /// Mixture sizes tried by the `cgmm` strategy.
    pub cgmm_candidates: Vec<usize>,
    pub canf: CanfConfig,
    pub jfnn: MdnStrategyConfig,
    pub ifnn: MdnStrategyConfig,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: "default".into(),
            data: DataConfig::default(),
            l: 7,
            k: 12,
            d: DEFAULT_D,
            alpha: DEFAULT_ALPHA,
            m: DEFAULT_M,
            quantile: DEFAULT_QUANTILE,
            strategies: Strategy::ALL.to_vec(),
            seeds: (0..10).collect(),
            out: PathBuf::from("runs/default"),
            cgmm_candidates: vec![5],
            canf: CanfConfig::default(),
            jfnn: MdnStrategyConfig::jfnn_default(),
            ifnn: MdnStrategyConfig::ifnn_default(),
            toy: ToyConfig::default(),
        }
    }
}

/// CLI-flag overrides applied on top of a loaded config; a `Some` field
/// always wins over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub l: Option<usize>,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub alpha: Option<f64>,
    pub m: Option<usize>,
    pub csv: Option<PathBuf>,
    pub timestamp_column: Option<String>,
    pub value_column: Option<String>,
}

impl RunConfig {
    /// Load a TOML run configuration from disk.
    pub fn from_toml_path(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))
    }

    /// Apply CLI-flag overrides; `--seed` collapses the seed list to that
    /// single seed, `--strategy` collapses the strategy list likewise.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(strategy) = o.strategy {
            self.strategies = vec![strategy];
        }
        if let Some(l) = o.l {
            self.l = l;
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(d) = o.d {
            self.d = d;
        }
        if let Some(alpha) = o.alpha {
            self.alpha = alpha;
        }
        if let Some(m) = o.m {
            self.m = m;
        }
        if let Some(csv) = &o.csv {
            self.data.csv = Some(csv.clone());
        }
        if let Some(c) = &o.timestamp_column {
            self.data.timestamp_column = c.clone();
        }
        if let Some(c) = &o.value_column {
            self.data.value_column = c.clone();
        }
    }

    /// The seed driving a single-run command.
    pub fn seed0(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    /// Assemble the per-strategy fitting configuration.
    pub fn forecaster_config(&self, strategy: Strategy) -> ForecasterConfig {
        ForecasterConfig {
            strategy,
            l: self.l,
            k: self.k,
            cgmm_candidates: self.cgmm_candidates.clone(),
            canf: self.canf.clone(),
            jfnn: self.jfnn.clone(),
            ifnn: self.ifnn.clone(),
        }
    }

    /// Check every field before any compute happens.
    pub fn validate(&self) -> Result<()> {
        fn bad(msg: String) -> Result<()> {
            Err(Error::InvalidConfig(msg))
        }
        if self.l < 1 || self.k < 1 {
            return bad(format!(
                "window geometry needs L >= 1 and K >= 1, got L={}, K={}",
                self.l, self.k
            ));
        }
        if self.d < 1 || self.d > self.k {
            return bad(format!(
                "schedule size D={} must lie in 1..={}",
                self.d, self.k
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!(
                "value-at-risk level must lie strictly between 0 and 1, got {}",
                self.alpha
            ));
        }
        if self.m < 1 {
            return bad("need at least one trajectory per forecast".into());
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return bad(format!(
                "decision-score quantile must lie in (0, 1], got {}",
                self.quantile
            ));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required".into());
        }
        let d = &self.data;
        if d.timestamp_column.is_empty() || d.value_column.is_empty() {
            return bad("CSV column names must be non-empty".into());
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return bad(format!(
                "test fraction must lie strictly between 0 and 1, got {}",
                d.test_fraction
            ));
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return bad(format!(
                "validation fraction must lie strictly between 0 and 1, got {}",
                d.val_fraction
            ));
        }
        if d.stride < 1 {
            return bad("window stride must be at least 1".into());
        }
        if d.csv.is_none() && d.synth_weeks < 8 {
            return bad(format!(
                "the synthetic series needs at least 8 weeks for a week-level split, got {}",
                d.synth_weeks
            ));
        }
        let t = &self.toy;
        if t.train_n < 2 || t.val_n < 1 {
            return bad("the toy study needs at least 2 training and 1 validation samples".into());
        }
        if t.kl_n < 1000 {
            return bad(format!(
                "Monte-Carlo KL needs at least 1000 points, got {}",
                t.kl_n
            ));
        }
        if t.gmm_candidates.is_empty() || t.gmm_candidates.iter().any(|&k| k < 1) {
            return bad("toy mixture candidates must be a non-empty list of positive counts".into());
        }
        if t.anf_samples < t.anf_components {
            return bad(format!(
                "toy flow sample count {} cannot be below the mixture size {}",
                t.anf_samples, t.anf_components
            ));
        }
        if t.grid < 2 {
            return bad("the density grid needs at least 2 points per axis".into());
        }
        if t.flow.coupling_layers < 1 || t.flow.hidden_units < 1 {
            return bad("the toy flow needs at least one coupling layer and one hidden unit".into());
        }
        if t.flow_val_every < 1 {
            return bad("the flow validation interval must be at least 1 epoch".into());
        }
        for &s in &self.strategies {
            self.forecaster_config(s).validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_fields() {
        let cfg = RunConfig {
            experiment: "bench".into(),
            l: 5,
            seeds: vec![7, 8],
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.experiment, "bench");
        assert_eq!(back.l, 5);
        assert_eq!(back.seeds, vec![7, 8]);
        assert_eq!(back.data.value_column, "load_kwh");
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            experiment = "partial"
            k = 6

            [data]
            synth_weeks = 12
            "#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, "partial");
        assert_eq!(cfg.k, 6);
        assert_eq!(cfg.l, 7);
        assert_eq!(cfg.data.synth_weeks, 12);
        assert_eq!(cfg.data.test_fraction, 0.25);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("experimnt = \"typo\"\n");
        assert!(err.is_err());
        let nested = toml::from_str::<RunConfig>("[data]\nstrid = 2\n");
        assert!(nested.is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let mut cfg = RunConfig {
            seeds: vec![1, 2, 3],
            ..RunConfig::default()
        };
        cfg.apply(&Overrides {
            seed: Some(99),
            strategy: Some(Strategy::Arma),
            alpha: Some(0.4),
            value_column: Some("kw".into()),
            ..Overrides::default()
        });
        assert_eq!(cfg.seeds, vec![99]);
        assert_eq!(cfg.strategies, vec![Strategy::Arma]);
        assert_eq!(cfg.alpha, 0.4);
        assert_eq!(cfg.data.value_column, "kw");
        assert_eq!(cfg.m, DEFAULT_M);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let checks: Vec<(fn(&mut RunConfig), &str)> = vec![
            (|c| c.l = 0, "L"),
            (|c| c.d = 13, "D"),
            (|c| c.alpha = 1.0, "alpha"),
            (|c| c.m = 0, "m"),
            (|c| c.quantile = 0.0, "quantile"),
            (|c| c.seeds.clear(), "seeds"),
            (|c| c.strategies.clear(), "strategies"),
            (|c| c.data.test_fraction = 0.0, "test fraction"),
            (|c| c.data.stride = 0, "stride"),
            (|c| c.data.synth_weeks = 4, "weeks"),
            (|c| c.toy.kl_n = 10, "kl_n"),
            (|c| c.toy.gmm_candidates.clear(), "candidates"),
            (|c| c.toy.flow_val_every = 0, "flow_val_every"),
            (|c| c.canf.samples = 0, "canf samples"),
        ];
        for (mutate, what) in checks {
            let mut cfg = RunConfig::default();
            mutate(&mut cfg);
            let res = cfg.validate();
            assert!(
                matches!(res, Err(Error::InvalidConfig(_))),
                "expected InvalidConfig for {what}, got {res:?}"
            );
        }
    }

    #[test]
    fn missing_config_file_is_an_io_error() {
        let err = RunConfig::from_toml_path(Path::new("/nonexistent/canf.toml")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
