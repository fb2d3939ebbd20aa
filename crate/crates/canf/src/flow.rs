//! RealNVP normalizing flow over the full trajectory window: density
//! estimation via the change of variables formula, exact inversion for
//! sampling, and NLL training with manual backprop through the coupling
//! nets.
//!
//! Each coupling layer leaves the masked coordinates untouched and maps the
//! rest as x ← x·exp(s) + t, where s and t come from small feedforward nets
//! reading the masked coordinates. The Jacobian is triangular, so the
//! log-determinant is just Σ s — that one fact is what makes exact density
//! evaluation affordable.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Activation, Adam, Mlp, MlpGrad, Tape, TrainingCurves, PATIENCE};
use crate::seeding;

/// Scale clamp: raw net outputs pass through s_max·tanh(s/s_max), keeping
/// exp(s) bounded and training stable on outlier-prone data.
pub const S_MAX: f64 = 5.0;

const LN_2PI: f64 = 1.8378770664093453;

/// One affine coupling layer.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    /// true = pass-through coordinate (input to the nets), false = transformed.
    mask: Vec<bool>,
    scale: Mlp,
    translate: Mlp,
    s_max: f64,
    /// Cached index lists derived from the mask.
    pass_idx: Vec<usize>,
    trans_idx: Vec<usize>,
}

impl CouplingLayer {
    fn new(
        mask: Vec<bool>,
        hidden_layers: usize,
        hidden_units: usize,
        s_max: f64,
        seed: u64,
        identity_init: bool,
    ) -> Result<Self> {
        let pass_idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        let trans_idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (!m).then_some(i))
            .collect();
        if pass_idx.is_empty() || trans_idx.is_empty() {
            return Err(Error::InvalidConfig(
                "coupling mask must keep and transform at least one coordinate".into(),
            ));
        }
        let mut sizes = vec![pass_idx.len()];
        sizes.extend(std::iter::repeat_n(hidden_units, hidden_layers));
        sizes.push(trans_idx.len());
        let mut scale = Mlp::new(&sizes, Activation::Tanh, seeding::mix(seed, 1))?;
        let mut translate = Mlp::new(&sizes, Activation::Tanh, seeding::mix(seed, 2))?;
        if identity_init {
            scale.zero_last_layer();
            translate.zero_last_layer();
        }
        Ok(Self {
            mask,
            scale,
            translate,
            s_max,
            pass_idx,
            trans_idx,
        })
    }

    fn clamp(&self, s_raw: f64) -> f64 {
        self.s_max * (s_raw / self.s_max).tanh()
    }
}

/// Per-layer forward records needed to backpropagate the NLL.
struct CouplingTape {
    /// Transformed block before the affine map (n×u).
    xu: Array2<f64>,
    s_raw: Array2<f64>,
    s: Array2<f64>,
    scale_tape: Tape,
    translate_tape: Tape,
}

/// Gradients for one coupling layer's two nets.
pub struct CouplingGrad {
    pub scale: MlpGrad,
    pub translate: MlpGrad,
}

/// A RealNVP flow with alternating even/odd masks and a standard-normal
/// base distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FlowDto", into = "FlowDto")]
pub struct RealNvpFlow {
    dim: usize,
    layers: Vec<CouplingLayer>,
}

/// Architecture of a flow: how many coupling layers, and the shape of each
/// coupling net.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowShape {
    pub coupling_layers: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
}

impl RealNvpFlow {
    /// Build a flow that starts as the identity map (coupling-net output
    /// layers zeroed) — the initialization used for training.
    pub fn new(dim: usize, shape: FlowShape, seed: u64) -> Result<Self> {
        Self::build(dim, shape, seed, true)
    }

    /// Build a flow with fully random coupling nets. The resulting map is a
    /// nontrivial diffeomorphism out of the box, which is what round-trip
    /// and Jacobian checks want to exercise.
    pub fn new_random(dim: usize, shape: FlowShape, seed: u64) -> Result<Self> {
        Self::build(dim, shape, seed, false)
    }

    fn build(dim: usize, shape: FlowShape, seed: u64, identity_init: bool) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(
                "a coupling flow needs dimension at least 2".into(),
            ));
        }
        if shape.coupling_layers == 0 {
            return Err(Error::InvalidConfig("flow needs at least one layer".into()));
        }
        let layers = (0..shape.coupling_layers)
            .map(|l| {
                // Even layers pass the even coordinates through, odd layers
                // the odd ones, so every coordinate is transformed at least
                // once every two layers.
                let mask: Vec<bool> = (0..dim).map(|i| i % 2 == l % 2).collect();
                CouplingLayer::new(
                    mask,
                    shape.hidden_layers,
                    shape.hidden_units,
                    S_MAX,
                    seeding::mix(seed, 0x1000 + l as u64),
                    identity_init,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, layers })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Forward pass y → (z, log|det ∂z/∂y|) over a batch of rows.
    pub fn forward(&self, y: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (z, log_det, _) = self.forward_impl(y, false)?;
        Ok((z, log_det))
    }

    fn forward_impl(
        &self,
        y: ArrayView2<'_, f64>,
        want_tape: bool,
    ) -> Result<(Array2<f64>, Array1<f64>, Vec<CouplingTape>)> {
        if y.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: y.ncols(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let n = y.nrows();
        let mut x = y.to_owned();
        let mut log_det = Array1::<f64>::zeros(n);
        let mut tapes = Vec::new();
        for layer in &self.layers {
            let xm = gather_cols(x.view(), &layer.pass_idx);
            let xu = gather_cols(x.view(), &layer.trans_idx);
            let (s_raw, scale_tape) = layer.scale.forward(xm.view())?;
            let s = s_raw.mapv(|v| layer.clamp(v));
            let (t, translate_tape) = layer.translate.forward(xm.view())?;
            let xu_new = &xu * &s.mapv(f64::exp) + &t;
            log_det += &s.sum_axis(Axis(1));
            scatter_cols(&mut x, &layer.trans_idx, xu_new.view());
            if want_tape {
                tapes.push(CouplingTape {
                    xu,
                    s_raw,
                    s,
                    scale_tape,
                    translate_tape,
                });
            }
        }
        Ok((x, log_det, tapes))
    }

    /// Exact inverse z → y, applying the layers in reverse. Also returns
    /// log|det ∂y/∂z|, which is the negation of the forward log-det at the
    /// corresponding point.
    pub fn inverse(&self, z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if z.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.ncols(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let n = z.nrows();
        let mut x = z.to_owned();
        let mut log_det = Array1::<f64>::zeros(n);
        for layer in self.layers.iter().rev() {
            let xm = gather_cols(x.view(), &layer.pass_idx);
            let xu = gather_cols(x.view(), &layer.trans_idx);
            let (s_raw, _) = layer.scale.forward(xm.view())?;
            let s = s_raw.mapv(|v| layer.clamp(v));
            let (t, _) = layer.translate.forward(xm.view())?;
            let xu_orig = (&xu - &t) * &s.mapv(|v| (-v).exp());
            log_det -= &s.sum_axis(Axis(1));
            scatter_cols(&mut x, &layer.trans_idx, xu_orig.view());
        }
        Ok((x, log_det))
    }

    /// log p(y) = log N(z; 0, I) + log|det ∂z/∂y| for each row.
    pub fn log_pdf(&self, y: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let (z, log_det) = self.forward(y)?;
        let base = base_log_pdf(z.view());
        Ok(base + log_det)
    }

    /// Mean negative log-likelihood of a dataset.
    pub fn mean_nll(&self, data: ArrayView2<'_, f64>) -> Result<f64> {
        let lp = self.log_pdf(data)?;
        Ok(-lp.mean().unwrap_or(f64::NEG_INFINITY))
    }

    /// Draw `count` rows by sampling the base normal and inverting the flow;
    /// deterministic per seed.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Array2<f64>> {
        let mut rng = seeding::rng(seed);
        let z = Array2::from_shape_simple_fn((count, self.dim), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        Ok(self.inverse(z.view())?.0)
    }

    /// Mean NLL of a batch together with the gradients of that loss with
    /// respect to every coupling-net parameter.
    pub fn nll_grad(&self, data: ArrayView2<'_, f64>) -> Result<(f64, Vec<CouplingGrad>)> {
        let n = data.nrows();
        let (z, log_det, tapes) = self.forward_impl(data, true)?;
        let base = base_log_pdf(z.view());
        let loss = -(&base + &log_det).mean().unwrap_or(f64::NEG_INFINITY);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0 });
        }

        // loss = mean_r [ ½‖z_r‖² + ½·d·log2π − log_det_r ]
        //   ⇒ ∂loss/∂z = z/n, ∂loss/∂log_det_r = −1/n.
        let mut dz = z.mapv(|v| v / n as f64);
        let d_log_det = -1.0 / n as f64;

        let mut grads_rev = Vec::with_capacity(self.layers.len());
        for (layer, tape) in self.layers.iter().zip(tapes.iter()).rev() {
            let d_xm_pass = gather_cols(dz.view(), &layer.pass_idx);
            let d_xu_out = gather_cols(dz.view(), &layer.trans_idx);
            let e_s = tape.s.mapv(f64::exp);

            // xu' = xu·e^s + t, plus the direct −(1/n)·Σ s term in the loss.
            let d_xu = &d_xu_out * &e_s;
            let d_s = &d_xu_out * &tape.xu * &e_s + d_log_det;
            let d_s_raw = &d_s * &tape.s_raw.mapv(|v| 1.0 - (v / layer.s_max).tanh().powi(2));
            let d_t = d_xu_out;

            let (scale_grad, d_xm_s) = layer.scale.backward(&tape.scale_tape, d_s_raw.view())?;
            let (translate_grad, d_xm_t) =
                layer.translate.backward(&tape.translate_tape, d_t.view())?;
            let d_xm = d_xm_pass + d_xm_s + d_xm_t;

            scatter_cols(&mut dz, &layer.pass_idx, d_xm.view());
            scatter_cols(&mut dz, &layer.trans_idx, d_xu.view());
            grads_rev.push(CouplingGrad {
                scale: scale_grad,
                translate: translate_grad,
            });
        }
        grads_rev.reverse();
        Ok((loss, grads_rev))
    }
}

fn base_log_pdf(z: ArrayView2<'_, f64>) -> Array1<f64> {
    let d = z.ncols() as f64;
    (&z * &z)
        .sum_axis(Axis(1))
        .mapv(|sq| -0.5 * (sq + d * LN_2PI))
}

fn gather_cols(x: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((x.nrows(), idx.len()));
    for (j, &c) in idx.iter().enumerate() {
        out.column_mut(j).assign(&x.column(c));
    }
    out
}

fn scatter_cols(x: &mut Array2<f64>, idx: &[usize], vals: ArrayView2<'_, f64>) {
    for (j, &c) in idx.iter().enumerate() {
        x.column_mut(c).assign(&vals.column(j));
    }
}

/// Options for [`train_flow`].
#[derive(Debug, Clone)]
pub struct FlowTrainConfig {
    pub shape: FlowShape,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Run a validation check every this many epochs (minimum 1). Patience
    /// counts checks, not epochs, so spacing checks out stretches the grace
    /// window. Small noisy validation sets reward a coarser cadence: checked
    /// every epoch they can starve a run that is still descending.
    pub val_every: usize,
    pub seed: u64,
}

/// Mini-batch Adam on the flow NLL. Starts from the identity flow, keeps the
/// best-validation checkpoint, and stops early after [`PATIENCE`] validation
/// checks without improvement. Returns the flow and loss curves (`train` has
/// one entry per epoch, `val` one per check).
pub fn train_flow(
    train: ArrayView2<'_, f64>,
    val: ArrayView2<'_, f64>,
    config: &FlowTrainConfig,
) -> Result<(RealNvpFlow, TrainingCurves)> {
    if train.ncols() != val.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            got: val.ncols(),
        });
    }
    let mut flow = RealNvpFlow::new(train.ncols(), config.shape, seeding::mix(config.seed, 0xf0))?;
    let mut adams: Vec<(Adam, Adam)> = flow
        .layers
        .iter()
        .map(|l| {
            (
                Adam::new(&l.scale, config.lr),
                Adam::new(&l.translate, config.lr),
            )
        })
        .collect();
    let mut rng = seeding::rng(seeding::mix(config.seed, 0xba7c4));
    let mut curves = TrainingCurves::default();
    let mut best: Option<(f64, RealNvpFlow)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let order = crate::neural::shuffled_indices(train.nrows(), &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch.max(1)) {
            let xb = crate::neural::select_rows(train, chunk);
            let (loss, grads) = flow.nll_grad(xb.view()).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch },
                other => other,
            })?;
            for ((layer, grad), (adam_s, adam_t)) in
                flow.layers.iter_mut().zip(&grads).zip(&mut adams)
            {
                adam_s.step(&mut layer.scale, &grad.scale)?;
                adam_t.step(&mut layer.translate, &grad.translate)?;
            }
            epoch_loss += loss;
            batches += 1;
        }
        curves.train.push(epoch_loss / batches.max(1) as f64);

        let check = (epoch + 1) % config.val_every.max(1) == 0 || epoch + 1 == config.epochs;
        if !check {
            continue;
        }
        let val_nll = flow.mean_nll(val)?;
        if !val_nll.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        curves.val.push(val_nll);
        match &best {
            Some((b, _)) if *b <= val_nll => since_best += 1,
            _ => {
                best = Some((val_nll, flow.clone()));
                since_best = 0;
            }
        }
        if since_best >= PATIENCE {
            break;
        }
    }

    let flow = best.map(|(_, f)| f).unwrap_or(flow);
    Ok((flow, curves))
}

/// Compare the analytic NLL gradient against central finite differences for
/// every coupling-net parameter, returning the worst relative error. Exists
/// so integration suites can audit the backprop without reaching into
/// private state.
// Indexing by layer keeps the paired mutable walks over `flow.layers` and
// `analytic` in lockstep; iterator forms fight the borrow checker here.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(flow: &mut RealNvpFlow, data: ArrayView2<'_, f64>, h: f64) -> Result<f64> {
    let (_, analytic) = flow.nll_grad(data)?;
    let mut worst = 0.0f64;
    for l in 0..flow.layers.len() {
        for which in 0..2 {
            let n_layers = if which == 0 {
                flow.layers[l].scale.layers().len()
            } else {
                flow.layers[l].translate.layers().len()
            };
            for li in 0..n_layers {
                let (rows, cols) = {
                    let net = if which == 0 {
                        &flow.layers[l].scale
                    } else {
                        &flow.layers[l].translate
                    };
                    net.layers()[li].weight.dim()
                };
                for i in 0..rows {
                    for j in 0..=cols {
                        // j == cols probes the bias entry for row i.
                        let read = |f: &mut RealNvpFlow, v: Option<f64>| -> f64 {
                            let net = if which == 0 {
                                &mut f.layers[l].scale
                            } else {
                                &mut f.layers[l].translate
                            };
                            let slot = if j < cols {
                                &mut net.layers_mut()[li].weight[[i, j]]
                            } else {
                                &mut net.layers_mut()[li].bias[i]
                            };
                            let old = *slot;
                            if let Some(v) = v {
                                *slot = v;
                            }
                            old
                        };
                        let orig = read(flow, None);
                        read(flow, Some(orig + h));
                        let up = flow.mean_nll(data)?;
                        read(flow, Some(orig - h));
                        let down = flow.mean_nll(data)?;
                        read(flow, Some(orig));
                        let numeric = (up - down) / (2.0 * h);
                        let grad = if which == 0 {
                            &analytic[l].scale
                        } else {
                            &analytic[l].translate
                        };
                        let exact = if j < cols {
                            grad.layers[li].weight[[i, j]]
                        } else {
                            grad.layers[li].bias[i]
                        };
                        let denom = exact.abs().max(numeric.abs()).max(1e-6);
                        worst = worst.max((numeric - exact).abs() / denom);
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Wire format: masks plus embedded net objects.
#[derive(Serialize, Deserialize)]
struct CouplingDto {
    mask: Vec<bool>,
    scale: Mlp,
    translate: Mlp,
    s_max: f64,
}

#[derive(Serialize, Deserialize)]
struct FlowDto {
    dim: usize,
    layers: Vec<CouplingDto>,
}

impl From<RealNvpFlow> for FlowDto {
    fn from(f: RealNvpFlow) -> Self {
        FlowDto {
            dim: f.dim,
            layers: f
                .layers
                .into_iter()
                .map(|l| CouplingDto {
                    mask: l.mask,
                    scale: l.scale,
                    translate: l.translate,
                    s_max: l.s_max,
                })
                .collect(),
        }
    }
}

impl TryFrom<FlowDto> for RealNvpFlow {
    type Error = Error;

    fn try_from(dto: FlowDto) -> Result<Self> {
        let mut layers = Vec::with_capacity(dto.layers.len());
        for l in dto.layers {
            if l.mask.len() != dto.dim {
                return Err(Error::DimensionMismatch {
                    expected: dto.dim,
                    got: l.mask.len(),
                });
            }
            let pass_idx: Vec<usize> = l
                .mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| m.then_some(i))
                .collect();
            let trans_idx: Vec<usize> = l
                .mask
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| (!m).then_some(i))
                .collect();
            if l.scale.input_width() != pass_idx.len()
                || l.scale.output_width() != trans_idx.len()
                || l.translate.input_width() != pass_idx.len()
                || l.translate.output_width() != trans_idx.len()
            {
                return Err(Error::ShapeMismatch);
            }
            layers.push(CouplingLayer {
                mask: l.mask,
                scale: l.scale,
                translate: l.translate,
                s_max: l.s_max,
                pass_idx,
                trans_idx,
            });
        }
        if layers.is_empty() {
            return Err(Error::InvalidConfig("flow needs at least one layer".into()));
        }
        Ok(RealNvpFlow {
            dim: dto.dim,
            layers,
        })
    }
}
