//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use bayes_al::acquisition::PoolPredictions;
use bayes_al::model::{grad, loss, AlphaGranularity, Batch, DropoutMode, LossKind, Masks, ModelParams, ModelSpec};
use bayes_al::rng;
use ndarray::Array2;
use rand::Rng as _;

/// Step for central differences. Smaller steps drown gradients near 1e-6
/// in roundoff.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-5;

/// A small random network plus a batch and frozen masks.
pub struct GradCase {
    pub params: ModelParams,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub kind: LossKind,
    pub masks: Option<Masks>,
}

impl GradCase {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            x: self.x.view(),
            y: self.y.view(),
        }
    }

    pub fn describe(&self) -> String {
        let dims: Vec<usize> = self.params.layers.iter().map(|l| l.output_dim()).collect();
        format!(
            "D={} layers={:?} {:?} {} p={} rows={}",
            self.params.input_dim(),
            dims,
            self.kind,
            self.params.dropout_mode,
            self.params.dropout_rate,
            self.x.nrows()
        )
    }
}

/// Random configuration number `case`: both loss kinds and all four
/// dropout modes are cycled through deterministically.
pub fn grad_case(case: usize) -> GradCase {
    let mut r = rng::stream(0x6AD, case as u64);
    let kind = if case.is_multiple_of(2) {
        LossKind::Heteroscedastic
    } else {
        LossKind::Mse
    };
    let mode = [DropoutMode::None, DropoutMode::A, DropoutMode::B, DropoutMode::C][(case / 2) % 4];
    let alpha = match (kind, r.gen_bool(0.5)) {
        (LossKind::Mse, _) => None,
        (_, true) => Some(AlphaGranularity::PerJoint),
        (_, false) => Some(AlphaGranularity::PerCoordinate),
    };
    let depth = r.gen_range(1..=3);
    let spec = ModelSpec {
        input_dim: r.gen_range(1..=6),
        hidden: (0..depth).map(|_| r.gen_range(2..=8)).collect(),
        joints: r.gen_range(1..=3),
        alpha,
        dropout_mode: mode,
        dropout_rate: if mode == DropoutMode::None {
            0.0
        } else {
            r.gen_range(0.1..0.5)
        },
    };
    let mut params = spec.init(r.gen()).unwrap();
    // Nonzero biases so every parameter is exercised.
    for layer in &mut params.layers {
        layer.bias.mapv_inplace(|_| r.gen_range(-0.3..0.3));
    }
    let rows = r.gen_range(1..=6);
    let x = Array2::from_shape_simple_fn((rows, spec.input_dim), || r.gen_range(-1.5..1.5));
    let y = Array2::from_shape_simple_fn((rows, params.head.mean_width()), || r.gen_range(-1.0..1.0));
    let masks = (mode != DropoutMode::None).then(|| Masks::sample(&params, rows, &mut r));
    GradCase {
        params,
        x,
        y,
        kind,
        masks,
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over every weight and bias. The relative error of one
/// entry is `|a - n| / max(|a|, |n|, FD_FLOOR)`.
pub fn max_grad_rel_error(case: &GradCase) -> f64 {
    let (_, g) = grad(&case.params, case.batch(), case.kind, case.masks.as_ref()).unwrap();
    let f = |p: &ModelParams| loss(p, case.batch(), case.kind, case.masks.as_ref()).unwrap();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR);
    let mut worst: f64 = 0.0;
    let mut p = case.params.clone();
    for l in 0..p.layers.len() {
        let (rows, cols) = p.layers[l].weights.dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = p.layers[l].weights[[i, j]];
                p.layers[l].weights[[i, j]] = orig + FD_STEP;
                let up = f(&p);
                p.layers[l].weights[[i, j]] = orig - FD_STEP;
                let down = f(&p);
                p.layers[l].weights[[i, j]] = orig;
                worst = worst.max(rel(g.weights[l][[i, j]], (up - down) / (2.0 * FD_STEP)));
            }
        }
        for i in 0..p.layers[l].bias.len() {
            let orig = p.layers[l].bias[i];
            p.layers[l].bias[i] = orig + FD_STEP;
            let up = f(&p);
            p.layers[l].bias[i] = orig - FD_STEP;
            let down = f(&p);
            p.layers[l].bias[i] = orig;
            worst = worst.max(rel(g.bias[l][i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Textbook k-Center Greedy: every step recomputes each candidate's
/// distance to all current centers from scratch. Ties go to the lower index.
pub fn brute_force_coreset(labeled: &[Vec<f64>], pool: &[(usize, Vec<f64>)], budget: usize) -> Vec<usize> {
    let mut centers: Vec<Vec<f64>> = labeled.to_vec();
    let mut remaining: Vec<(usize, Vec<f64>)> = pool.to_vec();
    let mut chosen = Vec::new();
    while chosen.len() < budget && !remaining.is_empty() {
        let mut best: Option<(f64, usize, usize)> = None;
        for (pos, (idx, p)) in remaining.iter().enumerate() {
            let d = centers.iter().map(|c| dist(p, c)).fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bd, bi, _)) => d > bd || (d == bd && *idx < bi),
            };
            if better {
                best = Some((d, *idx, pos));
            }
        }
        let (_, idx, pos) = best.unwrap();
        let (_, p) = remaining.remove(pos);
        centers.push(p);
        chosen.push(idx);
    }
    chosen
}

/// Random selector instance: labeled means, pool means and deviations.
/// Values are small integers so that ties actually occur.
pub struct SelectCase {
    pub labeled: PoolPredictions,
    pub pool: PoolPredictions,
    pub budget: usize,
}

impl SelectCase {
    pub fn labeled_rows(&self) -> Vec<Vec<f64>> {
        self.labeled.means.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn pool_rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.pool
            .indices
            .iter()
            .zip(self.pool.means.rows())
            .map(|(&i, r)| (i, r.to_vec()))
            .collect()
    }
}

pub fn select_case(seed: u64) -> SelectCase {
    let mut r = rng::stream(0x5E1, seed);
    let width = r.gen_range(1..=4);
    let n_lab = r.gen_range(1..=8);
    let n_pool = r.gen_range(1..=50);
    let coarse = r.gen_bool(0.5);
    let value = |r: &mut rng::Rng| {
        if coarse {
            r.gen_range(-3..=3) as f64
        } else {
            r.gen_range(-3.0..3.0)
        }
    };
    let labeled = Array2::from_shape_simple_fn((n_lab, width), || value(&mut r));
    let pool = Array2::from_shape_simple_fn((n_pool, width), || value(&mut r));
    let sd = Array2::from_shape_simple_fn((n_pool, width), || r.gen_range(0.0..1.0));
    let lab_sd = Array2::from_shape_simple_fn((n_lab, width), || r.gen_range(0.0..1.0));
    // Global indices: distinct, shuffled, not contiguous.
    let mut ids: Vec<usize> = (0..n_lab + n_pool).map(|i| 3 * i + 1).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut r);
    SelectCase {
        labeled: PoolPredictions::new(ids[..n_lab].to_vec(), labeled, lab_sd).unwrap(),
        pool: PoolPredictions::new(ids[n_lab..].to_vec(), pool, sd).unwrap(),
        budget: r.gen_range(1..=n_pool + 2),
    }
}
