//! Gaussian mixture models: EM fitting, density, sampling, analytic
//! conditioning, and validation-NLL component-count selection.
//!
//! Conditioning is the heart of the forecasting pipeline: a mixture over the
//! full window conditions on the observed prefix into a mixture over the
//! future block whose weights are reweighted by each component's marginal
//! likelihood of the observation. All weight arithmetic happens in log space
//! so 20–36-dimensional marginals cannot underflow.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::MultivariateGaussian;
use crate::seeding;

/// EM stops once the mean log-likelihood improves by less than this.
pub const EM_TOL: f64 = 1e-6;
/// Hard cap on EM iterations.
pub const EM_MAX_ITER: usize = 500;
/// A component whose total responsibility mass falls below this is starved.
const STARVATION_MASS: f64 = 1e-8;

/// A finite mixture of dense multivariate Gaussians.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureDto", into = "MixtureDto")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<MultivariateGaussian>,
}

impl GaussianMixture {
    /// Build a mixture from weights and components. Weights must be finite
    /// and non-negative with positive sum; they are normalized to sum to 1.
    /// All components must share one dimension.
    pub fn new(weights: Vec<f64>, components: Vec<MultivariateGaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyData { min: 1, got: 0 });
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFiniteInput);
        }
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::AllWeightsVanish);
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: components.iter().map(|c| c.dim()).find(|&x| x != d).unwrap_or(d),
            });
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[MultivariateGaussian] {
        &self.components
    }

    /// Mixture mean Σ_i π_i μ_i — the point forecast read off an analytic
    /// predictive distribution.
    pub fn mean(&self) -> Array1<f64> {
        let mut mean = Array1::<f64>::zeros(self.dim());
        for (w, c) in self.weights.iter().zip(&self.components) {
            mean.scaled_add(*w, &c.mean());
        }
        mean
    }

    /// log Σ_i π_i N(x; μ_i, Σ_i) via log-sum-exp.
    pub fn log_pdf(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.k());
        for (w, c) in self.weights.iter().zip(&self.components) {
            if *w > 0.0 {
                terms.push(w.ln() + c.log_pdf(x)?);
            } else {
                c.log_pdf(x)?; // still validate the dimension
            }
        }
        Ok(log_sum_exp(&terms))
    }

    /// Row-wise [`log_pdf`](Self::log_pdf), vectorized per component.
    pub fn batch_log_pdf(&self, data: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let n = data.nrows();
        let mut lp = Array2::<f64>::from_elem((n, self.k()), f64::NEG_INFINITY);
        for (i, (w, c)) in self.weights.iter().zip(&self.components).enumerate() {
            let col = c.batch_log_pdf(data)?;
            if *w > 0.0 {
                lp.column_mut(i).assign(&(col + w.ln()));
            }
        }
        Ok(Array1::from_shape_fn(n, |r| {
            log_sum_exp(lp.row(r).as_slice().expect("row-major"))
        }))
    }

    /// Mean log-likelihood of a dataset under the mixture.
    pub fn mean_log_pdf(&self, data: ArrayView2<'_, f64>) -> Result<f64> {
        let lp = self.batch_log_pdf(data)?;
        Ok(lp.mean().unwrap_or(f64::NEG_INFINITY))
    }

    /// Ancestral sampling: categorical component draw, then a Gaussian draw.
    /// Deterministic per seed.
    pub fn sample(&self, count: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeding::rng(seed);
        self.sample_with(count, &mut rng)
    }

    /// Sampling body reused by callers that manage their own RNG stream.
    pub fn sample_with(&self, count: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::<f64>::zeros((count, d));
        for mut row in out.outer_iter_mut() {
            let i = self.pick_component(rng);
            row.assign(&self.components[i].sample_with(1, rng).row(0));
        }
        out
    }

    fn pick_component(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    /// Condition the mixture on the first `split` coordinates: each
    /// component is conditioned by Schur complement and the posterior weight
    /// of component i becomes π_i·N(observed; μ_ia, Σ_iaa), renormalized.
    /// Log-space with max-subtraction keeps the reweighting stable.
    pub fn condition(&self, observed: ArrayView1<'_, f64>, split: usize) -> Result<Self> {
        let mut posteriors = Vec::with_capacity(self.k());
        let mut log_weights = Vec::with_capacity(self.k());
        for (w, c) in self.weights.iter().zip(&self.components) {
            let (posterior, marginal) = c.condition_with_marginal(observed, split)?;
            posteriors.push(posterior);
            log_weights.push(if *w > 0.0 {
                w.ln() + marginal
            } else {
                f64::NEG_INFINITY
            });
        }
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::AllWeightsVanish);
        }
        let weights: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
        Self::new(weights, posteriors)
    }

    /// The mixture of scale·X + shift (scalar affine map on every
    /// coordinate); weights are unchanged.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|c| c.affine(scale, shift))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.weights.clone(), components)
    }
}

/// Fit a k-component mixture by expectation-maximization.
///
/// Initialization: k-means++-style mean seeding from data points, all
/// covariances set to the global covariance, uniform weights. Iterates until
/// the mean log-likelihood improves by less than `tol` or `max_iter` is hit.
/// Returns the model together with the per-iteration mean log-likelihood
/// trace. A component whose responsibility mass starves is re-seeded from a
/// random data point once; a second starvation is an error.
pub fn em_fit(
    data: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(GaussianMixture, Vec<f64>)> {
    let n = data.nrows();
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { n, k });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut rng = seeding::rng(seed);
    let global = MultivariateGaussian::fit(data)?;
    let mut components: Vec<MultivariateGaussian> = kmeanspp_means(data, k, &mut rng)
        .into_iter()
        .map(|mean| MultivariateGaussian::new(mean, global.covariance().to_owned()))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = vec![1.0 / k as f64; k];
    let mut reseeded = vec![false; k];
    let mut trace: Vec<f64> = Vec::new();

    for _ in 0..max_iter {
        // E-step: log joint per (point, component), responsibilities, and
        // the mean log-likelihood of the current parameters.
        let mut log_joint = Array2::<f64>::zeros((n, k));
        for (i, c) in components.iter().enumerate() {
            let lp = c.batch_log_pdf(data)?;
            log_joint.column_mut(i).assign(&(lp + weights[i].ln()));
        }
        let lse = Array1::from_shape_fn(n, |r| {
            log_sum_exp(log_joint.row(r).as_slice().expect("row-major"))
        });
        let mean_ll = lse.mean().expect("n >= 1");
        if !mean_ll.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: trace.len() });
        }
        let converged = trace
            .last()
            .is_some_and(|last| (mean_ll - last).abs() < tol);
        trace.push(mean_ll);
        if converged {
            break;
        }

        let resp = {
            let mut r = log_joint;
            for (mut row, &l) in r.outer_iter_mut().zip(lse.iter()) {
                row.mapv_inplace(|v| (v - l).exp());
            }
            r
        };

        // M-step with starvation handling.
        let mass = resp.sum_axis(Axis(0));
        for i in 0..k {
            if mass[i] < STARVATION_MASS {
                if reseeded[i] {
                    return Err(Error::DegenerateComponent { component: i });
                }
                reseeded[i] = true;
                let pick = rng.random_range(0..n);
                components[i] = MultivariateGaussian::new(
                    data.row(pick).to_owned(),
                    global.covariance().to_owned(),
                )?;
                weights[i] = 1.0 / k as f64;
            } else {
                components[i] = MultivariateGaussian::fit_weighted(data, resp.column(i))?;
                weights[i] = mass[i] / n as f64;
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
    }

    let mixture = GaussianMixture::new(weights, components)?;
    Ok((mixture, trace))
}

/// Fit every candidate component count and keep the one with the lowest mean
/// validation negative log-likelihood; ties break toward smaller k. Each
/// candidate gets its own derived seed. Candidates whose EM fit fails are
/// skipped; it is an error only if all of them fail.
pub fn select_k(
    train: ArrayView2<'_, f64>,
    val: ArrayView2<'_, f64>,
    k_candidates: &[usize],
    seed: u64,
) -> Result<(usize, GaussianMixture)> {
    if k_candidates.is_empty() {
        return Err(Error::InvalidConfig("empty component-count candidate list".into()));
    }
    let mut best: Option<(usize, GaussianMixture, f64)> = None;
    for &k in k_candidates {
        let fit = em_fit(train, k, seeding::mix(seed, k as u64), EM_MAX_ITER, EM_TOL);
        let (mixture, _) = match fit {
            Ok(f) => f,
            Err(err) => {
                log::warn!("skipping k={k}: {err}");
                continue;
            }
        };
        let nll = -mixture.mean_log_pdf(val)?;
        let better = match &best {
            None => true,
            Some((bk, _, bnll)) => nll < *bnll || (nll == *bnll && k < *bk),
        };
        if better {
            best = Some((k, mixture, nll));
        }
    }
    best.map(|(k, m, _)| (k, m)).ok_or(Error::AllCandidatesFailed)
}

/// Numerically stable log Σ exp(x_i); −∞ for an empty or all-−∞ input.
pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// k-means++ seeding: first mean uniform over rows, each next mean drawn
/// with probability proportional to squared distance from the chosen set.
fn kmeanspp_means(
    data: ArrayView2<'_, f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Array1<f64>> {
    let n = data.nrows();
    let first = rng.random_range(0..n);
    let mut means = vec![data.row(first).to_owned()];
    let mut d2 = Array1::from_shape_fn(n, |i| sq_dist(data.row(i), means[0].view()));
    while means.len() < k {
        let total = d2.sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for i in 0..n {
                acc += d2[i];
                if r < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining distances vanish (duplicated points).
            rng.random_range(0..n)
        };
        let mean = data.row(pick).to_owned();
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(data.row(i), mean.view()));
        }
        means.push(mean);
    }
    means
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Wire format: `{weights: [...], components: [...]}`.
#[derive(Serialize, Deserialize)]
struct MixtureDto {
    weights: Vec<f64>,
    components: Vec<MultivariateGaussian>,
}

impl From<GaussianMixture> for MixtureDto {
    fn from(m: GaussianMixture) -> Self {
        MixtureDto {
            weights: m.weights,
            components: m.components,
        }
    }
}

impl TryFrom<MixtureDto> for GaussianMixture {
    type Error = Error;

    fn try_from(dto: MixtureDto) -> Result<Self> {
        Self::new(dto.weights, dto.components)
    }
}
