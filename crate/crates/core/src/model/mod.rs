//! Feedforward regressor with Monte-Carlo dropout.
//!
//! The network is a stack of dense layers. Dropout "sites" are the inputs of
//! the dense layers: site 0 is the raw feature vector, site `l > 0` is the
//! output of hidden layer `l - 1`. A [`DropoutMode`] selects which sites get
//! an inverted-dropout mask during stochastic passes.
//!
//! The final layer is linear and produces `3K` joint coordinates followed,
//! for heteroscedastic models, by the log-variance outputs `alpha`.

mod checkpoint;
mod loss;
mod mc;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng as _;

use crate::data::{Dataset, COORDS_PER_JOINT};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, checkpoint_to_string};
pub(crate) use loss::per_joint_mse;
pub use loss::{grad, loss, loss_heteroscedastic, loss_mse, Gradients, ALPHA_CLAMP};
pub use mc::{mc_predict, mc_predict_rows, Prediction, PredictionBatch};
pub use train::{train, Adam, TrainConfig, TrainOutcome};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Linear => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky-relu",
            Activation::Linear => "linear",
        }
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "leaky-relu" => Ok(Activation::LeakyRelu),
            "linear" => Ok(Activation::Linear),
            _ => Err(format!("unknown activation `{s}`")),
        }
    }
}

/// Where dropout masks are applied.
///
/// * `A`: after every hidden layer (never on the raw input).
/// * `B`: only after the last two hidden layers.
/// * `C`: everywhere, including the raw input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropoutMode {
    None,
    #[default]
    A,
    B,
    C,
}

impl DropoutMode {
    /// For a network with `layers` dense layers, whether each site is masked.
    pub fn sites(self, layers: usize) -> Vec<bool> {
        (0..layers)
            .map(|site| match self {
                DropoutMode::None => false,
                DropoutMode::A => site >= 1,
                DropoutMode::B => site >= 1 && site + 2 >= layers,
                DropoutMode::C => true,
            })
            .collect()
    }
}

impl fmt::Display for DropoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropoutMode::None => "none",
            DropoutMode::A => "A",
            DropoutMode::B => "B",
            DropoutMode::C => "C",
        })
    }
}

impl FromStr for DropoutMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(DropoutMode::None),
            "A" | "a" => Ok(DropoutMode::A),
            "B" | "b" => Ok(DropoutMode::B),
            "C" | "c" => Ok(DropoutMode::C),
            _ => Err(format!("unknown dropout mode `{s}` (expected none, A, B or C)")),
        }
    }
}

/// How many log-variance outputs a heteroscedastic head has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaGranularity {
    /// One log-variance per joint, shared by its three coordinates.
    #[default]
    PerJoint,
    /// One log-variance per coordinate.
    PerCoordinate,
}

impl fmt::Display for AlphaGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaGranularity::PerJoint => "per_joint",
            AlphaGranularity::PerCoordinate => "per_coordinate",
        })
    }
}

impl FromStr for AlphaGranularity {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per_joint" => Ok(AlphaGranularity::PerJoint),
            "per_coordinate" => Ok(AlphaGranularity::PerCoordinate),
            _ => Err(format!("unknown alpha granularity `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    Mse,
    #[default]
    Heteroscedastic,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Heteroscedastic => "heteroscedastic",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "heteroscedastic" => Ok(LossKind::Heteroscedastic),
            _ => Err(format!("unknown loss `{s}` (expected mse or heteroscedastic)")),
        }
    }
}

/// Output layout of the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub joints: usize,
    pub alpha: Option<AlphaGranularity>,
}

impl Head {
    pub fn mean_width(&self) -> usize {
        self.joints * COORDS_PER_JOINT
    }

    pub fn alpha_width(&self) -> usize {
        match self.alpha {
            None => 0,
            Some(AlphaGranularity::PerJoint) => self.joints,
            Some(AlphaGranularity::PerCoordinate) => self.joints * COORDS_PER_JOINT,
        }
    }

    pub fn width(&self) -> usize {
        self.mean_width() + self.alpha_width()
    }

    /// Index of the alpha output governing mean coordinate `c`.
    pub fn alpha_index(&self, c: usize) -> usize {
        match self.alpha {
            Some(AlphaGranularity::PerCoordinate) => c,
            _ => c / COORDS_PER_JOINT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub dropout_rate: f64,
    pub dropout_mode: DropoutMode,
    pub head: Head,
}

/// Architecture description used to initialize fresh parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub joints: usize,
    pub alpha: Option<AlphaGranularity>,
    pub dropout_mode: DropoutMode,
    pub dropout_rate: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("model.input_dim", "must be positive"));
        }
        if self.joints == 0 {
            return Err(Error::validation("model.joints", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::validation("model.hidden", "layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("model.dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Fresh parameters: weights uniform in `[-a, a]` with `a = sqrt(6 / fan_in)`
    /// for hidden layers and `sqrt(3 / fan_in)` for the linear head; zero biases.
    pub fn init(&self, seed: u64) -> Result<ModelParams> {
        self.validate()?;
        let head = Head {
            joints: self.joints,
            alpha: self.alpha,
        };
        let mut r = rng::seeded(seed);
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(head.width());
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let last = l + 1 == n;
                let gain = if last { 3.0 } else { 6.0 };
                let a = (gain / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-a, a);
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut r)),
                    bias: Array1::zeros(fan_out),
                    activation: if last {
                        Activation::Linear
                    } else {
                        Activation::LeakyRelu
                    },
                }
            })
            .collect();
        let params = ModelParams {
            layers,
            dropout_rate: self.dropout_rate,
            dropout_mode: self.dropout_mode,
            head,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Dropout masks for one batch: for each site, either nothing or an
/// `n x width` matrix of `0` and `1/(1-p)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    sites: Vec<Option<Array2<f64>>>,
}

impl Masks {
    /// Masks for `rows` samples drawn from one stream, site by site, row-major.
    pub fn sample(params: &ModelParams, rows: usize, rng: &mut Rng) -> Masks {
        let mut m = Masks::empty(params, rows);
        for site in m.sites.iter_mut().flatten() {
            for v in site.iter_mut() {
                *v = params.mask_value(rng);
            }
        }
        m
    }

    /// Masks where row `r` draws from its own stream `rngs[r]`. Each row
    /// consumes its stream site by site, so a row's masks do not depend on
    /// which other rows share the batch.
    pub fn sample_rows(params: &ModelParams, rngs: &mut [Rng]) -> Masks {
        let mut m = Masks::empty(params, rngs.len());
        for (r, rng) in rngs.iter_mut().enumerate() {
            for site in m.sites.iter_mut().flatten() {
                for v in site.row_mut(r).iter_mut() {
                    *v = params.mask_value(rng);
                }
            }
        }
        m
    }

    fn empty(params: &ModelParams, rows: usize) -> Masks {
        let flags = params.dropout_sites();
        let sites = params
            .layers
            .iter()
            .zip(flags)
            .map(|(layer, on)| on.then(|| Array2::zeros((rows, layer.input_dim()))))
            .collect();
        Masks { sites }
    }

    pub fn rows(&self) -> Option<usize> {
        self.sites.iter().flatten().next().map(|m| m.nrows())
    }
}

/// Intermediate values of a batched forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer after masking.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("layers", "network has no layers"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Shape {
                    location: format!("layer {i} bias"),
                    expected: layer.output_dim(),
                    actual: layer.bias.len(),
                });
            }
            if i > 0 {
                let prev = self.layers[i - 1].output_dim();
                if layer.input_dim() != prev {
                    return Err(Error::Shape {
                        location: format!("layer {i} input"),
                        expected: prev,
                        actual: layer.input_dim(),
                    });
                }
            }
        }
        let out = self.layers.last().unwrap().output_dim();
        if out != self.head.width() {
            return Err(Error::Shape {
                location: format!("layer {} output (head)", self.layers.len() - 1),
                expected: self.head.width(),
                actual: out,
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn is_heteroscedastic(&self) -> bool {
        self.head.alpha.is_some()
    }

    pub fn dropout_sites(&self) -> Vec<bool> {
        if self.dropout_rate == 0.0 {
            return vec![false; self.layers.len()];
        }
        self.dropout_mode.sites(self.layers.len())
    }

    fn mask_value(&self, rng: &mut Rng) -> f64 {
        let keep = 1.0 - self.dropout_rate;
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                location: "layer 0 input".into(),
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass. `masks = None` is the deterministic pass.
    pub fn forward_batch(&self, x: ArrayView2<f64>, masks: Option<&Masks>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        if let Some(m) = masks {
            if m.sites.len() != self.layers.len() {
                return Err(Error::Shape {
                    location: "dropout masks".into(),
                    expected: self.layers.len(),
                    actual: m.sites.len(),
                });
            }
            if let Some(rows) = m.rows() {
                if rows != x.nrows() {
                    return Err(Error::Shape {
                        location: "dropout mask rows".into(),
                        expected: x.nrows(),
                        actual: rows,
                    });
                }
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(mask) = masks.and_then(|m| m.sites[l].as_ref()) {
                h *= mask;
            }
            let z = h.dot(&layer.weights.t()) + &layer.bias;
            let act = layer.activation;
            let a = z.mapv(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: h,
        })
    }

    /// Single-sample forward pass. With `stochastic = true` fresh masks are
    /// drawn from `rng`. Returns the coordinates and, for heteroscedastic
    /// heads, the log-variances.
    pub fn forward(
        &self,
        x: &[f64],
        stochastic: bool,
        rng: Option<&mut Rng>,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let xv = ndarray::aview1(x).insert_axis(Axis(0));
        let masks = match (stochastic, rng) {
            (true, Some(r)) => Some(Masks::sample(self, 1, r)),
            (true, None) => {
                return Err(Error::Contract("stochastic forward pass needs an rng".into()))
            }
            (false, _) => None,
        };
        let out = self.forward_batch(xv, masks.as_ref())?.output;
        let (mean, alpha) = self.split_output(out.view());
        Ok((
            mean.row(0).to_vec(),
            alpha.map(|a| a.row(0).to_vec()),
        ))
    }

    /// Splits raw network output into coordinates and log-variances.
    pub fn split_output<'a>(
        &self,
        out: ArrayView2<'a, f64>,
    ) -> (ArrayView2<'a, f64>, Option<ArrayView2<'a, f64>>) {
        let w = self.head.mean_width();
        let mean = out.slice_move(s![.., ..w]);
        let alpha = self
            .is_heteroscedastic()
            .then(|| out.slice_move(s![.., w..]));
        (mean, alpha)
    }

    /// Deterministic predictions for every row of `x`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.forward_batch(x, None)?.output;
        Ok(self.split_output(out.view()).0.to_owned())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

/// Features and targets of labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl Labeled {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape {
                location: "labeled targets".into(),
                expected: x.nrows(),
                actual: y.nrows(),
            });
        }
        Ok(Labeled { x, y })
    }

    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Self {
        Labeled {
            x: ds.features_matrix(indices),
            y: ds.targets_matrix(indices),
        }
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            x: self.x.view(),
            y: self.y.view(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Labeled {
        Labeled {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}
