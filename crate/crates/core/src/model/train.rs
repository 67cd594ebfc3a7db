use rand::seq::SliceRandom;

use super::{grad, Gradients, Labeled, LossKind, Masks, ModelParams};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 100,
            loss: LossKind::Heteroscedastic,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("train.lr", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("train.epochs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Adam with the usual moment parameters (0.9, 0.999, 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, g: &Gradients) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let eps = self.eps;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (l, layer) in params.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights[l])
                .and(&mut self.m.weights[l])
                .and(&mut self.v.weights[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias[l])
                .and(&mut self.m.bias[l])
                .and(&mut self.v.bias[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean minibatch loss of each epoch (stochastic passes).
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Minibatch Adam with dropout active. Shuffle order and masks come from
/// `cfg.seed`, so the result is a pure function of the inputs.
pub fn train(params: &ModelParams, data: &Labeled, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    if data.is_empty() {
        return Err(Error::validation("labeled", "cannot train on an empty set"));
    }
    let mut params = params.clone();
    let mut opt = Adam::new(&params, cfg.learning_rate);
    let mut shuffle_rng = rng::stream(cfg.seed, 0);
    let mut mask_rng = rng::stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(chunk);
            let masks = Masks::sample(&params, chunk.len(), &mut mask_rng);
            let (value, g) = grad(&params, batch.batch(), cfg.loss, Some(&masks))?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(&mut params, &g);
            sum += value;
            batches += 1;
        }
        epoch_losses.push(sum / batches as f64);
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{loss_mse, AlphaGranularity, DropoutMode, ModelSpec};
    use ndarray::Array2;
    use rand::Rng as _;

    fn toy(n: usize, seed: u64) -> Labeled {
        let mut r = rng::seeded(seed);
        let x = Array2::from_shape_simple_fn((n, 2), || r.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, 3), |(i, c)| 0.5 + 0.2 * x[[i, c % 2]]);
        Labeled::new(x, y).unwrap()
    }

    fn model(mode: DropoutMode) -> ModelParams {
        ModelSpec {
            input_dim: 2,
            hidden: vec![8, 8],
            joints: 1,
            alpha: Some(AlphaGranularity::PerJoint),
            dropout_mode: mode,
            dropout_rate: 0.1,
        }
        .init(0)
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_params_untouched() {
        let p = model(DropoutMode::A);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train(&p, &toy(30, 1), &cfg).unwrap();
        assert_eq!(out.params, p);
    }

    #[test]
    fn training_is_deterministic() {
        let p = model(DropoutMode::C);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&p, &toy(40, 1), &cfg).unwrap();
        let b = train(&p, &toy(40, 1), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn learns_a_linear_map() {
        // y = 2x on a single-joint target, no hidden layers.
        let mut r = rng::seeded(5);
        let x = Array2::from_shape_simple_fn((64, 1), || r.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((64, 3), |(i, _)| 2.0 * x[[i, 0]]);
        let data = Labeled::new(x, y).unwrap();
        let p = ModelSpec {
            input_dim: 1,
            hidden: vec![],
            joints: 1,
            alpha: None,
            dropout_mode: DropoutMode::None,
            dropout_rate: 0.0,
        }
        .init(1)
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 200,
            loss: LossKind::Mse,
            seed: 0,
        };
        let before = loss_mse(&p, data.batch()).unwrap();
        let out = train(&p, &data, &cfg).unwrap();
        let after = loss_mse(&out.params, data.batch()).unwrap();
        assert!(after < 0.01 * before, "{before} -> {after}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let p = model(DropoutMode::A);
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&p, &toy(4, 0), &bad).is_err());
        let empty = toy(0, 0);
        assert!(train(&p, &empty, &TrainConfig::default()).is_err());
    }

    #[test]
    fn nan_loss_names_epoch_and_batch() {
        let p = model(DropoutMode::A);
        let mut data = toy(20, 0);
        data.y[[15, 0]] = f64::NAN;
        let cfg = TrainConfig {
            batch_size: 20,
            epochs: 2,
            loss: LossKind::Mse,
            ..TrainConfig::default()
        };
        match train(&p, &data, &cfg) {
            Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (0, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
