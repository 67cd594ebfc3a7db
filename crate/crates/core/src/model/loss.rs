use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{Batch, LossKind, Masks, ModelParams};
use crate::data::COORDS_PER_JOINT;
use crate::error::{Error, Result};

/// Log-variances are clamped to `[-ALPHA_CLAMP, ALPHA_CLAMP]` before use.
pub const ALPHA_CLAMP: f64 = 10.0;

/// Per-layer gradients, shaped like [`ModelParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            weights: params
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            bias: params
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.bias.iter().flat_map(|b| b.iter()))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn check_batch(params: &ModelParams, batch: &Batch<'_>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::validation("batch", "must contain at least one sample"));
    }
    if batch.y.ncols() != params.head.mean_width() {
        return Err(Error::Shape {
            location: "batch targets".into(),
            expected: params.head.mean_width(),
            actual: batch.y.ncols(),
        });
    }
    if batch.y.nrows() != batch.x.nrows() {
        return Err(Error::Shape {
            location: "batch rows".into(),
            expected: batch.x.nrows(),
            actual: batch.y.nrows(),
        });
    }
    Ok(())
}

fn check_kind(params: &ModelParams, kind: LossKind) -> Result<()> {
    if kind == LossKind::Heteroscedastic && !params.is_heteroscedastic() {
        return Err(Error::Contract(
            "heteroscedastic loss needs a model with a log-variance head".into(),
        ));
    }
    Ok(())
}

/// Loss value and its gradient with respect to the raw network output.
fn loss_and_output_grad(
    params: &ModelParams,
    output: ArrayView2<f64>,
    y: ArrayView2<f64>,
    kind: LossKind,
) -> (f64, Array2<f64>) {
    let n = output.nrows() as f64;
    let joints = params.head.joints as f64;
    let norm = 1.0 / (n * joints);
    let (mean, alpha) = params.split_output(output);
    let mw = params.head.mean_width();
    let mut d_out = Array2::zeros(output.raw_dim());
    let mut total = 0.0;
    match (kind, alpha) {
        (LossKind::Mse, _) => {
            Zip::from(d_out.slice_mut(ndarray::s![.., ..mw]))
                .and(&mean)
                .and(&y)
                .for_each(|d, &yh, &yt| {
                    let r = yt - yh;
                    total += r * r;
                    *d = -2.0 * norm * r;
                });
        }
        (LossKind::Heteroscedastic, Some(alpha)) => {
            let head = params.head;
            for i in 0..output.nrows() {
                let mut sq = vec![0.0; head.alpha_width()];
                for c in 0..mw {
                    let r = y[[i, c]] - mean[[i, c]];
                    let a = alpha[[i, head.alpha_index(c)]].clamp(-ALPHA_CLAMP, ALPHA_CLAMP);
                    sq[head.alpha_index(c)] += r * r;
                    d_out[[i, c]] = -norm * (-a).exp() * r;
                }
                for (j, &r2) in sq.iter().enumerate() {
                    let raw = alpha[[i, j]];
                    let a = raw.clamp(-ALPHA_CLAMP, ALPHA_CLAMP);
                    let w = (-a).exp();
                    total += 0.5 * w * r2 + 0.5 * a;
                    if raw.abs() < ALPHA_CLAMP {
                        d_out[[i, mw + j]] = norm * (0.5 - 0.5 * w * r2);
                    }
                }
            }
        }
        (LossKind::Heteroscedastic, None) => unreachable!("checked by check_kind"),
    }
    (total * norm, d_out)
}

/// Loss over a batch. `masks = None` evaluates the deterministic network.
pub fn loss(params: &ModelParams, batch: Batch<'_>, kind: LossKind, masks: Option<&Masks>) -> Result<f64> {
    check_batch(params, &batch)?;
    check_kind(params, kind)?;
    let cache = params.forward_batch(batch.x, masks)?;
    Ok(loss_and_output_grad(params, cache.output.view(), batch.y, kind).0)
}

/// Mean over samples of the per-joint squared error, averaged over joints,
/// using the deterministic pass.
pub fn loss_mse(params: &ModelParams, batch: Batch<'_>) -> Result<f64> {
    loss(params, batch, LossKind::Mse, None)
}

/// Attenuated loss `1/(nK) sum ½ exp(-alpha) |y - yhat|² + ½ alpha`, with alpha
/// clamped to `[-10, 10]`, using the deterministic pass.
pub fn loss_heteroscedastic(params: &ModelParams, batch: Batch<'_>) -> Result<f64> {
    loss(params, batch, LossKind::Heteroscedastic, None)
}

/// Reverse-mode gradient of the loss for fixed dropout masks. Returns the
/// loss value alongside the gradient.
pub fn grad(
    params: &ModelParams,
    batch: Batch<'_>,
    kind: LossKind,
    masks: Option<&Masks>,
) -> Result<(f64, Gradients)> {
    check_batch(params, &batch)?;
    check_kind(params, kind)?;
    let cache = params.forward_batch(batch.x, masks)?;
    let (value, mut delta) = loss_and_output_grad(params, cache.output.view(), batch.y, kind);
    let mut g = Gradients::zeros_like(params);
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let act = layer.activation;
        Zip::from(&mut delta)
            .and(&cache.pre[l])
            .for_each(|d, &z| *d *= act.derivative(z));
        g.weights[l] = delta.t().dot(&cache.inputs[l]);
        g.bias[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut d_in = delta.dot(&layer.weights);
            if let Some(mask) = masks.and_then(|m| m.sites[l].as_ref()) {
                d_in *= mask;
            }
            delta = d_in;
        }
    }
    Ok((value, g))
}

/// Per-joint squared error `1/n sum_i 1/K sum_k |y_ik - yhat_ik|²` between two
/// coordinate matrices.
pub(crate) fn per_joint_mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let joints = (pred.ncols() / COORDS_PER_JOINT) as f64;
    let n = pred.nrows() as f64;
    let sq: f64 = Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
    sq / (n * joints)
}
