//! Dense multivariate Gaussians: maximum-likelihood fitting, log-density,
//! sampling, and Schur-complement conditioning.
//!
//! All densities are computed through a cached Cholesky factor — triangular
//! solves instead of explicit matrix inversion — which keeps conditioning
//! stable for the near-degenerate covariances that show up in long load
//! windows.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Base diagonal jitter (in standardized units) added to estimated
/// covariances so degenerate scatter matrices stay factorizable.
pub const EPS_JITTER: f64 = 1e-6;

/// Jitter values tried in order when factorizing a covariance. Starting at
/// zero keeps explicitly constructed matrices exact; the ladder tops out at
/// 1e-2 before we give up.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

const LN_2PI: f64 = 1.8378770664093453;

/// A dense multivariate normal distribution N(mean, covariance).
///
/// Immutable after construction; the lower-triangular Cholesky factor of the
/// covariance is cached at build time and reused by every density query,
/// sample, and conditioning call.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GaussianDto", into = "GaussianDto")]
pub struct MultivariateGaussian {
    mean: Array1<f64>,
    covariance: Array2<f64>,
    chol: Array2<f64>,
}

impl MultivariateGaussian {
    /// Build a Gaussian from explicit parameters.
    ///
    /// The covariance must be square, finite, and symmetric; it is
    /// symmetrized and factorized, escalating diagonal jitter only if the
    /// plain factorization fails, so exact inputs stay exact.
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::EmptyData { min: 1, got: 0 });
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows().max(covariance.ncols()),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) || covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let scale = covariance.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut max_asym = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                max_asym = max_asym.max((covariance[[i, j]] - covariance[[j, i]]).abs());
            }
        }
        if max_asym > 1e-10 * scale.max(1.0) {
            return Err(Error::AsymmetricCovariance {
                max_asym: max_asym / scale.max(1.0),
            });
        }
        // Kill floating-point asymmetry below the tolerance.
        let covariance = 0.5 * (&covariance + &covariance.t());
        let (covariance, chol) = factorize_with_jitter(covariance)?;
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    /// Maximum-likelihood fit: column means and the biased (1/n) scatter
    /// matrix, plus [`EPS_JITTER`] on the diagonal. A degenerate input
    /// (all rows identical) therefore yields covariance exactly ε·I.
    pub fn fit(data: ArrayView2<'_, f64>) -> Result<Self> {
        let n = data.nrows();
        if n < 2 {
            return Err(Error::EmptyData { min: 2, got: n });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let mean = data.mean_axis(Axis(0)).expect("n >= 2");
        let centered = &data - &mean;
        let mut covariance = centered.t().dot(&centered) / n as f64;
        for i in 0..covariance.nrows() {
            covariance[[i, i]] += EPS_JITTER;
        }
        Self::new(mean, covariance)
    }

    /// Weighted maximum-likelihood fit with per-row weights that sum to the
    /// effective count (used by the EM M-step). Weights need not be
    /// normalized; covariance gets the usual diagonal jitter.
    pub fn fit_weighted(data: ArrayView2<'_, f64>, weights: ArrayView1<'_, f64>) -> Result<Self> {
        let n = data.nrows();
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        let total: f64 = weights.sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::NonFiniteInput);
        }
        let d = data.ncols();
        let mut mean = Array1::<f64>::zeros(d);
        for (row, &w) in data.outer_iter().zip(weights.iter()) {
            mean.scaled_add(w, &row);
        }
        mean /= total;
        let centered = &data - &mean;
        // Σ = (1/W) Σ_n w_n (x_n−μ)(x_n−μ)ᵀ, computed as Cᵀ diag(w) C.
        let weighted = &centered * &weights.insert_axis(Axis(1));
        let mut covariance = centered.t().dot(&weighted) / total;
        for i in 0..d {
            covariance[[i, i]] += EPS_JITTER;
        }
        Self::new(mean, covariance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn covariance(&self) -> ArrayView2<'_, f64> {
        self.covariance.view()
    }

    pub fn cholesky_factor(&self) -> ArrayView2<'_, f64> {
        self.chol.view()
    }

    /// log N(x; μ, Σ) in nats, via two triangular solves on the cached
    /// factor: −½[(x−μ)ᵀΣ⁻¹(x−μ) + log det Σ + d·log 2π].
    pub fn log_pdf(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let diff = &x - &self.mean;
        let u = solve_lower(&self.chol, diff.view());
        let maha = u.dot(&u);
        Ok(-0.5 * (maha + self.log_det() + d as f64 * LN_2PI))
    }

    /// log det Σ from the Cholesky pivots.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Log-density of every row of `data` at once. Equivalent to mapping
    /// [`log_pdf`](Self::log_pdf) over rows but computed with one matrix
    /// product, which is what keeps the EM E-step affordable.
    pub fn batch_log_pdf(&self, data: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let d = self.dim();
        if data.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.ncols(),
            });
        }
        let centered = &data - &self.mean;
        let u = centered.dot(&lower_inverse(&self.chol).t());
        let constant = self.log_det() + d as f64 * LN_2PI;
        Ok((&u * &u)
            .sum_axis(Axis(1))
            .mapv(|maha| -0.5 * (maha + constant)))
    }

    /// Precision matrix Σ⁻¹ = L⁻ᵀL⁻¹, assembled from the cached factor.
    /// Density queries never use this — it exists for gradient formulas
    /// that need the precision explicitly.
    pub fn precision(&self) -> Array2<f64> {
        let w = lower_inverse(&self.chol);
        w.t().dot(&w)
    }

    /// The Gaussian of scale·X + shift for scalar affine maps applied to
    /// every coordinate (used to translate standardized forecasts back to
    /// data units).
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        Self::new(
            self.mean.mapv(|m| scale * m + shift),
            self.covariance.mapv(|c| scale * scale * c),
        )
    }

    /// Draw `count` rows μ + L·z with z standard normal; deterministic for a
    /// fixed seed.
    pub fn sample(&self, count: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeding::rng(seed);
        self.sample_with(count, &mut rng)
    }

    /// Sampling body shared with mixture ancestral sampling.
    pub fn sample_with(&self, count: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let d = self.dim();
        let z = Array2::from_shape_simple_fn((count, d), || rng.sample::<f64, _>(StandardNormal));
        z.dot(&self.chol.t()) + &self.mean
    }

    /// Condition on the first `split` coordinates taking the values in
    /// `observed`: returns N(μ_b + Σ_ba Σ_aa⁻¹(obs − μ_a),
    /// Σ_bb − Σ_ba Σ_aa⁻¹ Σ_ab) over the remaining coordinates.
    pub fn condition(&self, observed: ArrayView1<'_, f64>, split: usize) -> Result<Self> {
        Ok(self.condition_with_marginal(observed, split)?.0)
    }

    /// As [`condition`](Self::condition), additionally returning the marginal
    /// log-likelihood log N(observed; μ_a, Σ_aa) — the quantity mixture
    /// conditioning needs for its posterior weights.
    pub fn condition_with_marginal(
        &self,
        observed: ArrayView1<'_, f64>,
        split: usize,
    ) -> Result<(Self, f64)> {
        let d = self.dim();
        if split == 0 || split >= d {
            return Err(Error::DimensionMismatch {
                expected: d - 1,
                got: split,
            });
        }
        if observed.len() != split {
            return Err(Error::DimensionMismatch {
                expected: split,
                got: observed.len(),
            });
        }
        let mu_a = self.mean.slice(s![..split]);
        let mu_b = self.mean.slice(s![split..]);
        let sigma_aa = self.covariance.slice(s![..split, ..split]).to_owned();
        let sigma_ab = self.covariance.slice(s![..split, split..]);
        let sigma_bb = self.covariance.slice(s![split.., split..]);

        // Σ_aa is a principal submatrix of a PD matrix, so this only climbs
        // the jitter ladder when the marginal is numerically singular.
        let (_sigma_aa, l_a) = factorize_with_jitter(sigma_aa)?;
        let delta = &observed - &mu_a;
        let u = solve_lower(&l_a, delta.view());
        let log_det_aa = 2.0 * l_a.diag().iter().map(|v| v.ln()).sum::<f64>();
        let marginal = -0.5 * (u.dot(&u) + log_det_aa + split as f64 * LN_2PI);

        // With V = L_a⁻¹ Σ_ab: Σ_ba Σ_aa⁻¹ δ = Vᵀu and Σ_ba Σ_aa⁻¹ Σ_ab = VᵀV.
        let v = solve_lower_multi(&l_a, sigma_ab);
        let post_mean = &mu_b + &v.t().dot(&u);
        let post_cov = &sigma_bb - &v.t().dot(&v);
        let post_cov = 0.5 * (&post_cov + &post_cov.t());
        let posterior = Self::new(post_mean, post_cov)?;
        Ok((posterior, marginal))
    }
}

/// Try the jitter ladder until the Cholesky factorization succeeds. Returns
/// the (possibly jittered) covariance actually factorized together with its
/// factor, so `L·Lᵀ` always reconstructs the stored matrix.
fn factorize_with_jitter(covariance: Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = covariance.nrows();
    for &jitter in &JITTER_LADDER {
        let candidate = if jitter == 0.0 {
            covariance.clone()
        } else {
            let mut c = covariance.clone();
            for i in 0..d {
                c[[i, i]] += jitter;
            }
            c
        };
        if let Some(l) = cholesky(&candidate) {
            return Ok((candidate, l));
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: *JITTER_LADDER.last().expect("non-empty ladder"),
    })
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` if a
/// pivot is non-positive. Plain O(d³) loops — window dimensions stay small.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let d = a.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !sum.is_finite() || sum <= 0.0 {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solve L·y = b by forward substitution (L lower triangular).
fn solve_lower(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let d = b.len();
    let mut y = Array1::<f64>::zeros(d);
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    y
}

/// Inverse of a lower-triangular matrix by forward substitution per column.
fn lower_inverse(l: &Array2<f64>) -> Array2<f64> {
    let d = l.nrows();
    let mut inv = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut e = Array1::<f64>::zeros(d);
        e[j] = 1.0;
        inv.column_mut(j).assign(&solve_lower(l, e.view()));
    }
    inv
}

/// Solve L·Y = B column-by-column (B is d×m).
fn solve_lower_multi(l: &Array2<f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (d, m) = (b.nrows(), b.ncols());
    let mut y = Array2::<f64>::zeros((d, m));
    for j in 0..m {
        let col = solve_lower(l, b.column(j));
        y.column_mut(j).assign(&col);
    }
    y
}

/// Wire format: plain nested arrays, factorization rebuilt on load.
#[derive(Serialize, Deserialize)]
struct GaussianDto {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl From<MultivariateGaussian> for GaussianDto {
    fn from(g: MultivariateGaussian) -> Self {
        GaussianDto {
            mean: g.mean.to_vec(),
            covariance: g.covariance.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl TryFrom<GaussianDto> for MultivariateGaussian {
    type Error = Error;

    fn try_from(dto: GaussianDto) -> Result<Self> {
        let d = dto.mean.len();
        let mut covariance = Array2::<f64>::zeros((d, d));
        if dto.covariance.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: dto.covariance.len(),
            });
        }
        for (i, row) in dto.covariance.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                covariance[[i, j]] = v;
            }
        }
        Self::new(Array1::from_vec(dto.mean), covariance)
    }
}
