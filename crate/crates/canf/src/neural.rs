//! Minimal feedforward networks with explicit reverse-mode gradients and
//! Adam, plus the low-rank mixture-density output head used by the JFNN and
//! IFNN baselines and by the flow's coupling nets.
//!
//! Everything is batch-first: a forward pass maps an n×in matrix to an n×out
//! matrix and records the per-layer inputs and pre-activations on a tape, so
//! the backward pass is two matrix products per layer. No autodiff graph —
//! the architectures here are small and fixed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::MultivariateGaussian;
use crate::mixture::{log_sum_exp, GaussianMixture};
use crate::seeding;

/// Default Adam learning rate.
pub const DEFAULT_LR: f64 = 1e-3;
/// Default mini-batch size.
pub const DEFAULT_BATCH: usize = 128;
/// Validation checks without improvement before training stops early.
pub const PATIENCE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine layer; also reused as the container for its gradients and for
/// Adam moment accumulators, since those mirror the parameter shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LayerDto", into = "LayerDto")]
pub struct Layer {
    /// out×in weight matrix.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }
}

/// A plain multilayer perceptron: affine layers with one hidden activation,
/// linear output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden: Activation,
}

/// Per-layer records from a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug)]
pub struct Tape {
    /// Input to each layer, n×in_l.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer, n×out_l.
    pre: Vec<Array2<f64>>,
}

/// Parameter gradients mirroring an [`Mlp`]'s layers.
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Build a network with the given layer widths (`sizes[0]` is the input
    /// width) and uniform fan-in initialization, U(−1/√fan_in, 1/√fan_in)
    /// for weights and biases.
    pub fn new(sizes: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "MLP needs at least input and output widths, all positive; got {sizes:?}"
            )));
        }
        let mut rng = seeding::rng(seed);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = 1.0 / (fan_in as f64).sqrt();
            let weight =
                Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-a..a));
            let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-a..a));
            layers.push(Layer { weight, bias });
        }
        Ok(Self { layers, hidden })
    }

    /// Zero the final layer so the network outputs exactly 0 everywhere —
    /// used by coupling nets so a fresh flow is the identity map.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.nrows()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access, for optimizer-free parameter surgery
    /// (tests, finite-difference probes). Shapes must stay unchanged.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Forward pass over a batch, recording the tape for backprop.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        if x.ncols() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: x.ncols(),
            });
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(a);
            a = if l + 1 < n_layers {
                z.mapv(|v| self.hidden.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok((a, Tape { inputs, pre }))
    }

    /// Convenience single-vector forward.
    pub fn forward_one(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let x2 = x.insert_axis(Axis(0));
        let (out, _) = self.forward(x2)?;
        Ok(out.row(0).to_owned())
    }

    /// Exact reverse-mode gradients of the recorded computation. Returns the
    /// parameter gradients and the gradient with respect to the input batch.
    /// `output_grad` is ∂loss/∂output, n×out.
    pub fn backward(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrad, Array2<f64>)> {
        let n_layers = self.layers.len();
        if tape.inputs.len() != n_layers || tape.pre.len() != n_layers {
            return Err(Error::TapeMismatch);
        }
        if output_grad.dim() != tape.pre[n_layers - 1].dim() {
            return Err(Error::TapeMismatch);
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut dz = output_grad.to_owned();
        for l in (0..n_layers).rev() {
            if tape.inputs[l].ncols() != self.layers[l].weight.ncols() {
                return Err(Error::TapeMismatch);
            }
            if l + 1 < n_layers {
                // dz arriving here is ∂loss/∂activation; fold in act'(pre).
                dz = &dz * &tape.pre[l].mapv(|z| self.hidden.derivative(z));
            }
            grads[l].weight = dz.t().dot(&tape.inputs[l]);
            grads[l].bias = dz.sum_axis(Axis(0));
            dz = dz.dot(&self.layers[l].weight);
        }
        Ok((MlpGrad { layers: grads }, dz))
    }
}

/// Canonical Adam with bias correction (β₁=0.9, β₂=0.999, ε=1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: net.layers.iter().map(Layer::zeros_like).collect(),
            v: net.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// One update in place; gradients must mirror the network's shapes.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrad) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::ShapeMismatch);
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (l, grad) in grads.layers.iter().enumerate() {
            if grad.weight.dim() != net.layers[l].weight.dim()
                || grad.bias.len() != net.layers[l].bias.len()
            {
                return Err(Error::ShapeMismatch);
            }
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            azip_update(
                &mut net.layers[l].weight,
                &mut m.weight,
                &mut v.weight,
                &grad.weight,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            for i in 0..grad.bias.len() {
                let g = grad.bias[i];
                m.bias[i] = self.beta1 * m.bias[i] + (1.0 - self.beta1) * g;
                v.bias[i] = self.beta2 * v.bias[i] + (1.0 - self.beta2) * g * g;
                net.layers[l].bias[i] -=
                    self.lr * (m.bias[i] / bc1) / ((v.bias[i] / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    p: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    });
}

/// Mapping of raw network outputs to a low-rank Gaussian mixture over the
/// `out_dim` future steps.
///
/// Raw layout, per component i: [λ_i, μ_i (out_dim), d_i (out_dim),
/// B_i (out_dim·rank, row-major)]. Weights are softmax(λ); covariances are
/// Σ_i = diag(exp(d_i)) + B_i·B_iᵀ, positive definite by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdnHead {
    pub k: usize,
    pub out_dim: usize,
    pub rank: usize,
}

impl MdnHead {
    /// Required width of the raw network output:
    /// k·(1 + out_dim + out_dim + out_dim·rank).
    pub fn raw_width(&self) -> usize {
        self.k * (1 + 2 * self.out_dim + self.out_dim * self.rank)
    }

    fn component_stride(&self) -> usize {
        1 + 2 * self.out_dim + self.out_dim * self.rank
    }

    /// Assemble the predictive mixture from one raw output vector.
    pub fn predict(&self, raw: ArrayView1<'_, f64>) -> Result<GaussianMixture> {
        let parts = self.split(raw)?;
        let weights = softmax(&parts.iter().map(|p| p.lambda).collect::<Vec<_>>());
        let components = parts
            .iter()
            .map(|p| MultivariateGaussian::new(p.mu.clone(), p.sigma()))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(weights, components)
    }

    /// Negative log-likelihood of `target` under the mixture for one raw
    /// output, together with its gradient with respect to the raw vector.
    ///
    /// With responsibilities ρ_i and α_i = Σ_i⁻¹(y − μ_i):
    ///   ∂loss/∂λ_i = π_i − ρ_i,
    ///   ∂loss/∂μ_i = −ρ_i·α_i,
    ///   ∂loss/∂Σ_i = −ρ_i·½(α_iα_iᵀ − Σ_i⁻¹),
    /// chained onto d (diagonal, through exp) and B (low-rank factor).
    pub fn loss_grad(
        &self,
        raw: ArrayView1<'_, f64>,
        target: ArrayView1<'_, f64>,
    ) -> Result<(f64, Array1<f64>)> {
        if target.len() != self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim,
                got: target.len(),
            });
        }
        let parts = self.split(raw)?;
        let lambdas: Vec<f64> = parts.iter().map(|p| p.lambda).collect();
        let log_pi = log_softmax(&lambdas);
        let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();

        let mut gaussians = Vec::with_capacity(self.k);
        let mut log_joint = Vec::with_capacity(self.k);
        for (p, lp) in parts.iter().zip(&log_pi) {
            let g = MultivariateGaussian::new(p.mu.clone(), p.sigma())?;
            log_joint.push(lp + g.log_pdf(target)?);
            gaussians.push(g);
        }
        let lse = log_sum_exp(&log_joint);
        if !lse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0 });
        }
        let loss = -lse;

        let mut grad = Array1::<f64>::zeros(raw.len());
        let stride = self.component_stride();
        for i in 0..self.k {
            let resp = (log_joint[i] - lse).exp();
            let base = i * stride;
            grad[base] = pi[i] - resp;

            let delta = &target - &parts[i].mu;
            let precision = gaussians[i].precision();
            let alpha = precision.dot(&delta);
            // ∂loss/∂Σ = −ρ·½(ααᵀ − Σ⁻¹)
            let mut dsigma = Array2::<f64>::zeros((self.out_dim, self.out_dim));
            for r in 0..self.out_dim {
                for c in 0..self.out_dim {
                    dsigma[[r, c]] = -resp * 0.5 * (alpha[r] * alpha[c] - precision[[r, c]]);
                }
            }
            for j in 0..self.out_dim {
                grad[base + 1 + j] = -resp * alpha[j];
                grad[base + 1 + self.out_dim + j] =
                    dsigma[[j, j]] * parts[i].d[j].exp();
            }
            if self.rank > 0 {
                let db = 2.0 * dsigma.dot(&parts[i].b);
                for r in 0..self.out_dim {
                    for c in 0..self.rank {
                        grad[base + 1 + 2 * self.out_dim + r * self.rank + c] = db[[r, c]];
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    fn split(&self, raw: ArrayView1<'_, f64>) -> Result<Vec<MdnParams>> {
        if raw.len() != self.raw_width() {
            return Err(Error::DimensionMismatch {
                expected: self.raw_width(),
                got: raw.len(),
            });
        }
        let stride = self.component_stride();
        let mut parts = Vec::with_capacity(self.k);
        for i in 0..self.k {
            let base = i * stride;
            let lambda = raw[base];
            let mu = raw.slice(ndarray::s![base + 1..base + 1 + self.out_dim]).to_owned();
            let d = raw
                .slice(ndarray::s![base + 1 + self.out_dim..base + 1 + 2 * self.out_dim])
                .to_owned();
            let mut b = Array2::<f64>::zeros((self.out_dim, self.rank));
            for r in 0..self.out_dim {
                for c in 0..self.rank {
                    b[[r, c]] = raw[base + 1 + 2 * self.out_dim + r * self.rank + c];
                }
            }
            parts.push(MdnParams { lambda, mu, d, b });
        }
        Ok(parts)
    }
}

struct MdnParams {
    lambda: f64,
    mu: Array1<f64>,
    d: Array1<f64>,
    b: Array2<f64>,
}

impl MdnParams {
    fn sigma(&self) -> Array2<f64> {
        let k = self.mu.len();
        let mut sigma = self.b.dot(&self.b.t());
        for j in 0..k {
            sigma[[j, j]] += self.d[j].exp();
        }
        sigma
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Training and validation loss curves, one entry per epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

/// A trunk network plus MDN head trained to emit predictive mixtures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdnModel {
    pub net: Mlp,
    pub head: MdnHead,
}

impl MdnModel {
    /// Predictive mixture for one input window.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<GaussianMixture> {
        let raw = self.net.forward_one(x)?;
        self.head.predict(raw.view())
    }

    /// Mean NLL of a dataset (used for validation checkpoints).
    pub fn mean_nll(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
        let (raw, _) = self.net.forward(x)?;
        let mut total = 0.0;
        for (r, t) in raw.outer_iter().zip(y.outer_iter()) {
            let (loss, _) = self.head.loss_grad(r, t)?;
            total += loss;
        }
        Ok(total / x.nrows() as f64)
    }
}

/// Options for [`train_mdn`]; `hidden` lists the trunk's hidden widths.
#[derive(Debug, Clone)]
pub struct MdnTrainConfig {
    pub hidden: Vec<usize>,
    pub head: MdnHead,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Mini-batch Adam on the NLL of targets under the head's mixture. Keeps the
/// parameters with the best validation NLL; returns per-epoch mean training
/// loss and validation NLL curves. Stops early after [`PATIENCE`] epochs
/// without validation improvement.
pub fn train_mdn(
    train_x: ArrayView2<'_, f64>,
    train_y: ArrayView2<'_, f64>,
    val_x: ArrayView2<'_, f64>,
    val_y: ArrayView2<'_, f64>,
    config: &MdnTrainConfig,
) -> Result<(MdnModel, TrainingCurves)> {
    if train_x.nrows() != train_y.nrows() || val_x.nrows() != val_y.nrows() {
        return Err(Error::ShapeMismatch);
    }
    let mut sizes = vec![train_x.ncols()];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(config.head.raw_width());
    let mut net = Mlp::new(&sizes, Activation::Relu, seeding::mix(config.seed, 0x6d6c70))?;
    let mut adam = Adam::new(&net, config.lr);
    let mut rng = seeding::rng(seeding::mix(config.seed, 0x626174));
    let mut curves = TrainingCurves::default();
    let mut best: Option<(f64, Mlp)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let order = shuffled_indices(train_x.nrows(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(config.batch.max(1)) {
            let xb = select_rows(train_x, chunk);
            let yb = select_rows(train_y, chunk);
            let (raw, tape) = net.forward(xb.view())?;
            let mut grad_raw = Array2::<f64>::zeros(raw.dim());
            let mut batch_loss = 0.0;
            for (i, (r, t)) in raw.outer_iter().zip(yb.outer_iter()).enumerate() {
                let (loss, g) = config.head.loss_grad(r, t)?;
                batch_loss += loss;
                grad_raw.row_mut(i).assign(&(g / chunk.len() as f64));
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let (grads, _) = net.backward(&tape, grad_raw.view())?;
            adam.step(&mut net, &grads)?;
            epoch_loss += batch_loss;
            batches += 1.0;
        }
        curves.train.push(epoch_loss / batches.max(1.0));

        let probe = MdnModel {
            net: net.clone(),
            head: config.head,
        };
        let val_nll = probe.mean_nll(val_x, val_y)?;
        if !val_nll.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        curves.val.push(val_nll);
        match &best {
            Some((b, _)) if *b <= val_nll => since_best += 1,
            _ => {
                best = Some((val_nll, net.clone()));
                since_best = 0;
            }
        }
        if since_best >= PATIENCE {
            break;
        }
    }

    let net = best.map(|(_, n)| n).unwrap_or(net);
    Ok((
        MdnModel {
            net,
            head: config.head,
        },
        curves,
    ))
}

/// Deterministic Fisher–Yates permutation of 0..n.
pub(crate) fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Gather the given rows into a new owned matrix.
pub(crate) fn select_rows(data: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((rows.len(), data.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&data.row(r));
    }
    out
}

/// Wire format for a layer: nested weight rows plus bias.
#[derive(Serialize, Deserialize)]
struct LayerDto {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<Layer> for LayerDto {
    fn from(l: Layer) -> Self {
        LayerDto {
            weight: l.weight.outer_iter().map(|r| r.to_vec()).collect(),
            bias: l.bias.to_vec(),
        }
    }
}

impl TryFrom<LayerDto> for Layer {
    type Error = Error;

    fn try_from(dto: LayerDto) -> Result<Self> {
        let rows = dto.weight.len();
        let cols = dto.weight.first().map_or(0, |r| r.len());
        if rows == 0 || cols == 0 || dto.bias.len() != rows {
            return Err(Error::ShapeMismatch);
        }
        let mut weight = Array2::<f64>::zeros((rows, cols));
        for (i, row) in dto.weight.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::ShapeMismatch);
            }
            for (j, &v) in row.iter().enumerate() {
                weight[[i, j]] = v;
            }
        }
        Ok(Layer {
            weight,
            bias: Array1::from_vec(dto.bias),
        })
    }
}
