//! Forecast-quality metrics (WAPE, RWSE, mean log-likelihood, Monte-Carlo
//! KL) and the decision layer: value-at-risk schedule selection,
//! proportional regret, and the decision score.
//!
//! All metrics are computed in raw (destandardized) units, and every
//! stochastic step derives its seed from the sequence's provenance (its
//! absolute start hour), so results do not depend on evaluation order.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::forecaster::{ForecastDistribution, Forecaster};
use crate::seeding;

/// Denominator clamp for WAPE terms with (near-)zero true load, in raw
/// units. Household data can contain zero-consumption hours.
pub const EPS_WAPE: f64 = 1e-6;

/// Default trajectory count per test sequence.
pub const DEFAULT_M: usize = 1000;

/// Default scheduled-step count D.
pub const DEFAULT_D: usize = 4;

/// Default value-at-risk level α (the 20% VaR).
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Default decision-score quantile over per-sequence regrets.
pub const DEFAULT_QUANTILE: f64 = 0.8;

/// Forecast-quality metrics over a test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean of |y − z| / max(|y|, ε) over sequences, horizon steps, and
    /// sampled trajectories.
    pub wape: f64,
    /// Root mean squared error over the same terms.
    pub rwse: f64,
    /// RWSE per horizon index (length K).
    pub per_index_rwse: Vec<f64>,
    /// Mean log-density of the true continuation in raw units; present only
    /// for strategies with an analytic forecast density.
    pub mean_ll: Option<f64>,
    pub n_sequences: usize,
    pub m_samples: usize,
    /// Number of WAPE terms whose denominator was clamped to ε.
    pub clamped_terms: usize,
}

/// An ordered set of D scheduled step indices, 1-based within 1..=K.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleAction {
    indices: Vec<usize>,
}

impl ScheduleAction {
    /// Validate and normalize: indices must be distinct and within 1..=k;
    /// they are stored sorted ascending.
    pub fn new(mut indices: Vec<usize>, k: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidConfig("empty schedule action".into()));
        }
        indices.sort_unstable();
        let distinct = indices.windows(2).all(|w| w[0] != w[1]);
        if !distinct || indices[0] < 1 || *indices.last().expect("non-empty") > k {
            return Err(Error::InvalidConfig(format!(
                "schedule indices {indices:?} must be distinct and within 1..={k}"
            )));
        }
        Ok(ScheduleAction { indices })
    }

    /// The scheduled indices, sorted ascending, 1-based.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Decision-quality report: per-sequence proportional regrets and their
/// empirical quantile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionReport {
    /// The `quantile`-level empirical quantile of `regrets`.
    pub decision_score: f64,
    /// Proportional regret per evaluated test sequence, in dataset order.
    pub regrets: Vec<f64>,
    /// Sequences excluded because their hindsight-optimal utility was zero.
    pub skipped: usize,
    pub d: usize,
    pub alpha: f64,
    pub m_samples: usize,
    pub quantile: f64,
}

/// Empirical quantile with the lower-interpolation convention used
/// throughout the decision layer: `sorted[floor(q·(n−1))]`. Reorders the
/// slice.
pub fn quantile_lower(values: &mut [f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let idx = (q * (values.len() - 1) as f64).floor() as usize;
    let idx = idx.min(values.len() - 1);
    let (_, v, _) = values.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *v
}

fn check_compatible(forecaster: &Forecaster, test: &SequenceDataset) -> Result<()> {
    if forecaster.l() != test.l || forecaster.k() != test.k {
        return Err(Error::IncompatibleBundles {
            reason: format!(
                "forecaster is (L={}, K={}) but test windows are (L={}, K={})",
                forecaster.l(),
                forecaster.k(),
                test.l,
                test.k
            ),
        });
    }
    if forecaster.stats() != test.stats {
        return Err(Error::IncompatibleBundles {
            reason: "forecaster and test set use different standardizations".into(),
        });
    }
    Ok(())
}

/// Evaluate WAPE/RWSE (and mean log-likelihood for analytic forecasters)
/// over a test set, drawing m trajectories per sequence. Metrics are in raw
/// units regardless of how the data was standardized.
pub fn eval_metrics(
    forecaster: &Forecaster,
    test: &SequenceDataset,
    m: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if m < 1 {
        return Err(Error::InvalidConfig("need at least one trajectory".into()));
    }
    check_compatible(forecaster, test)?;
    if test.is_empty() {
        return Err(Error::EmptyData { min: 1, got: 0 });
    }
    let n = test.len();
    let k = test.k;
    let (shift, scale) = test.stats.unwrap_or((0.0, 1.0));

    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut per_index_sq = vec![0.0f64; k];
    let mut clamped = 0usize;
    let mut ll_sum = 0.0;
    let analytic = !forecaster.strategy().is_iterative();

    let observed = test.observed();
    let future = test.future();
    for i in 0..n {
        let fd = forecaster.forecast(observed.row(i))?;
        let samples = fd
            .destandardize(test.stats)?
            .sample(m, seeding::mix(seed, test.starts[i] as u64))?;
        for tau in 0..k {
            let truth = future[[i, tau]] * scale + shift;
            let denom = truth.abs();
            let clamp = denom < EPS_WAPE;
            let denom = denom.max(EPS_WAPE);
            if clamp {
                clamped += m;
            }
            for j in 0..m {
                let err = truth - samples[[j, tau]];
                abs_sum += err.abs() / denom;
                sq_sum += err * err;
                per_index_sq[tau] += err * err;
            }
        }
        if analytic {
            let mixture = fd.analytic().expect("analytic strategy");
            // Density in raw units: standardized density minus the
            // log-Jacobian K·ln σ of the affine map.
            ll_sum += mixture.log_pdf(future.row(i))? - k as f64 * scale.ln();
        }
    }

    let terms = (n * m * k) as f64;
    Ok(MetricsReport {
        wape: abs_sum / terms,
        rwse: (sq_sum / terms).sqrt(),
        per_index_rwse: per_index_sq
            .iter()
            .map(|s| (s / (n * m) as f64).sqrt())
            .collect(),
        mean_ll: analytic.then_some(ll_sum / n as f64),
        n_sequences: n,
        m_samples: m,
        clamped_terms: clamped,
    })
}

/// Monte-Carlo estimate of D_KL(p_data ∥ p_model) = E_{x~p_data}[log p_data(x)
/// − log p_model(x)], with its standard error. `sample_data(count, seed)`
/// must be deterministic per seed.
pub fn mc_kl<S, L, M>(
    sample_data: S,
    log_p_data: L,
    log_p_model: M,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    S: Fn(usize, u64) -> Array2<f64>,
    L: Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>>,
    M: Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>>,
{
    if n < 1000 {
        return Err(Error::InvalidConfig(format!(
            "Monte-Carlo KL needs at least 1000 points, got {n}"
        )));
    }
    let x = sample_data(n, seed);
    let lp_data = log_p_data(x.view())?;
    let lp_model = log_p_model(x.view())?;
    if lp_data.len() != n || lp_model.len() != n {
        return Err(Error::ShapeMismatch);
    }
    let diffs = &lp_data - &lp_model;
    let bad = diffs.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFiniteLogDensity {
            count: bad,
            total: n,
        });
    }
    let mean = diffs.sum() / n as f64;
    let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok((mean, (var / n as f64).sqrt()))
}

fn for_each_combination(k: usize, d: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        visit(&idx);
        // Advance to the next combination in lexicographic order.
        let mut i = d;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != k - d + i {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Choose the D step indices that maximize the empirical α-quantile of the
/// utility U = −Σ scheduled loads (the α value-at-risk) over m trajectories
/// drawn once and shared across all C(K,D) candidate subsets. Ties break to
/// the lexicographically smallest index tuple.
pub fn select_action(
    fd: &ForecastDistribution,
    d: usize,
    alpha: f64,
    m: usize,
    seed: u64,
) -> Result<ScheduleAction> {
    let k = fd.horizon();
    validate_schedule_args(k, d, alpha, m)?;
    let samples = fd.sample(m, seed)?;
    let mut utilities = vec![0.0f64; m];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_combination(k, d, |subset| {
        for (j, u) in utilities.iter_mut().enumerate() {
            let mut total = 0.0;
            for &a in subset {
                total += samples[[j, a]];
            }
            *u = -total;
        }
        let q = quantile_lower(&mut utilities, alpha);
        if best.as_ref().is_none_or(|(bq, _)| q > *bq) {
            best = Some((q, subset.to_vec()));
        }
    });
    let (_, subset) = best.expect("at least one subset");
    ScheduleAction::new(subset.iter().map(|i| i + 1).collect(), k)
}

fn validate_schedule_args(k: usize, d: usize, alpha: f64, m: usize) -> Result<()> {
    if d < 1 || d > k {
        return Err(Error::InvalidConfig(format!(
            "schedule size D={d} must lie in 1..={k}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "value-at-risk level must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    if m < 1 {
        return Err(Error::InvalidConfig("need at least one trajectory".into()));
    }
    Ok(())
}

/// The full per-subset VaR table behind [`select_action`]: every C(K,D)
/// subset's 1-based indices with its α-quantile utility, computed over the
/// same m shared trajectories and sorted by VaR descending (ties
/// lexicographic). With identical arguments the top row is exactly the
/// schedule `select_action` returns.
pub fn var_table(
    fd: &ForecastDistribution,
    d: usize,
    alpha: f64,
    m: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, f64)>> {
    let k = fd.horizon();
    validate_schedule_args(k, d, alpha, m)?;
    let samples = fd.sample(m, seed)?;
    let mut utilities = vec![0.0f64; m];
    let mut rows: Vec<(Vec<usize>, f64)> = Vec::new();
    for_each_combination(k, d, |subset| {
        for (j, u) in utilities.iter_mut().enumerate() {
            let mut total = 0.0;
            for &a in subset {
                total += samples[[j, a]];
            }
            *u = -total;
        }
        let q = quantile_lower(&mut utilities, alpha);
        rows.push((subset.iter().map(|i| i + 1).collect(), q));
    });
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(rows)
}

/// Proportional regret of an action against the hindsight-optimal schedule
/// a* (the D smallest true loads): PR = [U(y,a) − U(y,a*)] / U(y,a*) ≥ 0.
pub fn proportional_regret(
    true_future: ArrayView1<'_, f64>,
    action: &ScheduleAction,
    d: usize,
) -> Result<f64> {
    if action.indices().len() != d {
        return Err(Error::InvalidConfig(format!(
            "action has {} indices, expected D={d}",
            action.indices().len()
        )));
    }
    let k = true_future.len();
    if action.indices().iter().any(|&a| a < 1 || a > k) {
        return Err(Error::InvalidConfig(format!(
            "action indices exceed horizon {k}"
        )));
    }
    let chosen: f64 = action.indices().iter().map(|&a| true_future[a - 1]).sum();
    let mut loads = true_future.to_vec();
    loads.sort_unstable_by(f64::total_cmp);
    let optimal: f64 = loads[..d].iter().sum();
    if optimal == 0.0 {
        return Err(Error::ZeroOptimalUtility);
    }
    // With U = −Σ loads: (U_a − U*)/U* = (Σ_a − Σ*)/Σ*.
    Ok((chosen - optimal) / optimal)
}

/// Evaluate decision quality over a test set: per sequence, pick the VaR
/// schedule from the forecast, score it against the true continuation, and
/// report the empirical `quantile` of the proportional regrets. Sequences
/// whose hindsight-optimal utility is zero are skipped (and counted).
#[allow(clippy::too_many_arguments)]
pub fn decision_score(
    forecaster: &Forecaster,
    test: &SequenceDataset,
    d: usize,
    alpha: f64,
    m: usize,
    quantile: f64,
    seed: u64,
) -> Result<DecisionReport> {
    check_compatible(forecaster, test)?;
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "regret quantile must lie in (0, 1], got {quantile}"
        )));
    }
    if test.is_empty() {
        return Err(Error::EmptyData { min: 1, got: 0 });
    }
    let (shift, scale) = test.stats.unwrap_or((0.0, 1.0));
    let observed = test.observed();
    let future = test.future();
    let mut regrets = Vec::with_capacity(test.len());
    let mut skipped = 0usize;
    for i in 0..test.len() {
        let fd = forecaster
            .forecast(observed.row(i))?
            .destandardize(test.stats)?;
        let action = select_action(&fd, d, alpha, m, seeding::mix(seed, test.starts[i] as u64))?;
        let truth = future.row(i).mapv(|v| v * scale + shift);
        match proportional_regret(truth.view(), &action, d) {
            Ok(pr) => regrets.push(pr),
            Err(Error::ZeroOptimalUtility) => {
                log::warn!(
                    "sequence at hour {} has zero hindsight-optimal utility; skipped",
                    test.starts[i]
                );
                skipped += 1;
            }
            Err(other) => return Err(other),
        }
    }
    if regrets.is_empty() {
        return Err(Error::EmptyData { min: 1, got: 0 });
    }
    let mut scratch = regrets.clone();
    let decision_score = quantile_lower(&mut scratch, quantile);
    Ok(DecisionReport {
        decision_score,
        regrets,
        skipped,
        d,
        alpha,
        m_samples: m,
        quantile,
    })
}
