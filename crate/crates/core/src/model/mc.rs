use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::{Masks, ModelParams, ALPHA_CLAMP};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Variances closer to zero than this are reported as exactly zero; the
/// mean-of-squares form loses a few ulps to cancellation.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Monte-Carlo dropout summary for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub epistemic_var: Vec<f64>,
    pub aleatoric_var: Vec<f64>,
    pub combined_var: Vec<f64>,
    pub passes: usize,
}

/// Monte-Carlo dropout summaries for many inputs, one row per input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub mean: Array2<f64>,
    pub epistemic_var: Array2<f64>,
    pub aleatoric_var: Array2<f64>,
    pub combined_var: Array2<f64>,
    pub passes: usize,
}

impl PredictionBatch {
    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.nrows() == 0
    }

    pub fn row(&self, i: usize) -> Prediction {
        Prediction {
            mean: self.mean.row(i).to_vec(),
            epistemic_var: self.epistemic_var.row(i).to_vec(),
            aleatoric_var: self.aleatoric_var.row(i).to_vec(),
            combined_var: self.combined_var.row(i).to_vec(),
            passes: self.passes,
        }
    }

    /// Coordinate-wise square root of the epistemic variance.
    pub fn epistemic_sd(&self) -> Array2<f64> {
        self.epistemic_var.mapv(f64::sqrt)
    }
}

fn summarize(
    params: &ModelParams,
    x: ArrayView2<f64>,
    passes: usize,
    mut masks_for_pass: impl FnMut() -> Option<Masks>,
) -> Result<PredictionBatch> {
    if passes < 1 {
        return Err(Error::validation("M", "need at least one Monte-Carlo pass"));
    }
    let rows = x.nrows();
    let w = params.head.mean_width();
    let mut sum = Array2::<f64>::zeros((rows, w));
    let mut sum_sq = Array2::<f64>::zeros((rows, w));
    let mut sum_al = Array2::<f64>::zeros((rows, w));
    for _ in 0..passes {
        let masks = masks_for_pass();
        let out = params.forward_batch(x, masks.as_ref())?.output;
        let (mean, alpha) = params.split_output(out.view());
        Zip::from(&mut sum)
            .and(&mut sum_sq)
            .and(&mean)
            .for_each(|s, q, &y| {
                *s += y;
                *q += y * y;
            });
        if let Some(alpha) = alpha {
            let head = params.head;
            for i in 0..rows {
                for c in 0..w {
                    let a = alpha[[i, head.alpha_index(c)]].clamp(-ALPHA_CLAMP, ALPHA_CLAMP);
                    sum_al[[i, c]] += a.exp();
                }
            }
        }
    }
    let m = passes as f64;
    let mean = sum / m;
    let mut epistemic_var = sum_sq / m;
    Zip::from(&mut epistemic_var).and(&mean).for_each(|v, &mu| {
        let var = *v - mu * mu;
        *v = if var < VARIANCE_FLOOR { 0.0 } else { var };
    });
    let aleatoric_var = sum_al / m;
    let combined_var = &epistemic_var + &aleatoric_var;
    Ok(PredictionBatch {
        mean,
        epistemic_var,
        aleatoric_var,
        combined_var,
        passes,
    })
}

/// `passes` stochastic forward passes of a single input, masks drawn from `rng`.
pub fn mc_predict(params: &ModelParams, x: &[f64], passes: usize, rng: &mut Rng) -> Result<Prediction> {
    let xv = ndarray::aview1(x).insert_axis(Axis(0));
    let batch = summarize(params, xv, passes, || Some(Masks::sample(params, 1, rng)))?;
    Ok(batch.row(0))
}

/// Monte-Carlo predictions for every row of `x`. Row `r` draws its masks from
/// the stream `(base_seed, ids[r])`, so its result depends only on the model,
/// its features, `passes` and its id.
pub fn mc_predict_rows(
    params: &ModelParams,
    x: ArrayView2<f64>,
    ids: &[u64],
    passes: usize,
    base_seed: u64,
) -> Result<PredictionBatch> {
    if ids.len() != x.nrows() {
        return Err(Error::Shape {
            location: "mc_predict ids".into(),
            expected: x.nrows(),
            actual: ids.len(),
        });
    }
    let mut rngs: Vec<Rng> = ids.iter().map(|&id| rng::stream(base_seed, id)).collect();
    summarize(params, x, passes, || Some(Masks::sample_rows(params, &mut rngs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, AlphaGranularity, DropoutMode, Head, Layer, ModelSpec};
    use ndarray::array;

    fn net(mode: DropoutMode) -> ModelParams {
        ModelSpec {
            input_dim: 3,
            hidden: vec![6, 6],
            joints: 2,
            alpha: Some(AlphaGranularity::PerJoint),
            dropout_mode: mode,
            dropout_rate: 0.2,
        }
        .init(11)
        .unwrap()
    }

    #[test]
    fn single_pass_has_no_epistemic_variance() {
        let p = net(DropoutMode::A);
        let pred = mc_predict(&p, &[0.1, 0.2, 0.3], 1, &mut rng::seeded(0)).unwrap();
        assert!(pred.epistemic_var.iter().all(|&v| v == 0.0));
        assert_eq!(pred.combined_var, pred.aleatoric_var);
    }

    #[test]
    fn deterministic_net_has_no_epistemic_variance() {
        let p = net(DropoutMode::None);
        let pred = mc_predict(&p, &[0.1, 0.2, 0.3], 25, &mut rng::seeded(0)).unwrap();
        assert!(pred.epistemic_var.iter().all(|&v| v == 0.0));
        let (y, _) = p.forward(&[0.1, 0.2, 0.3], false, None).unwrap();
        for (a, b) in pred.mean.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_passes_is_rejected() {
        let p = net(DropoutMode::A);
        assert!(mc_predict(&p, &[0.0; 3], 0, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn two_pass_variance_by_hand() {
        // One hidden unit dropped with p = 0.5 (kept units scaled by 2) and an
        // output bias of 1: each pass yields 1 (dropped) or 3 (kept).
        let p = ModelParams {
            layers: vec![
                Layer {
                    weights: array![[1.0]],
                    bias: array![0.0],
                    activation: Activation::Linear,
                },
                Layer {
                    weights: array![[1.0], [0.0], [0.0]],
                    bias: array![1.0, 0.0, 0.0],
                    activation: Activation::Linear,
                },
            ],
            dropout_rate: 0.5,
            dropout_mode: DropoutMode::A,
            head: Head {
                joints: 1,
                alpha: None,
            },
        };
        // Find a seed giving one pass of each.
        let mut found = false;
        for seed in 0..64 {
            let pred = mc_predict(&p, &[1.0], 2, &mut rng::seeded(seed)).unwrap();
            if pred.mean[0] == 2.0 {
                // passes {1, 3}: (1 + 9)/2 - 2² = 1
                assert_eq!(pred.epistemic_var[0], 1.0);
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn combined_is_sum_of_parts() {
        let p = net(DropoutMode::C);
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0]];
        let b = mc_predict_rows(&p, x.view(), &[4, 9], 10, 3).unwrap();
        assert_eq!(b.combined_var, &b.epistemic_var + &b.aleatoric_var);
        assert!(b.epistemic_var.iter().all(|&v| v >= 0.0));
        // Per-joint alpha is broadcast across the joint's coordinates.
        assert_eq!(b.aleatoric_var[[0, 0]], b.aleatoric_var[[0, 2]]);
    }

    #[test]
    fn rows_are_independent_of_batch_composition() {
        let p = net(DropoutMode::A);
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.0], [0.5, 0.5, 0.5]];
        let all = mc_predict_rows(&p, x.view(), &[10, 20, 30], 8, 7).unwrap();
        let one = mc_predict_rows(&p, x.slice(ndarray::s![1..2, ..]), &[20], 8, 7).unwrap();
        for c in 0..6 {
            assert!((all.mean[[1, c]] - one.mean[[0, c]]).abs() < 1e-12);
            assert!((all.epistemic_var[[1, c]] - one.epistemic_var[[0, c]]).abs() < 1e-12);
        }
        let single = mc_predict(&p, &[1.0, -1.0, 0.0], 8, &mut rng::stream(7, 20)).unwrap();
        for c in 0..6 {
            assert!((single.mean[c] - one.mean[[0, c]]).abs() < 1e-12);
        }
    }
}
