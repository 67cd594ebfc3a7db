//! Sample selection over an unlabeled candidate subset.
//!
//! All selectors work on Monte-Carlo summaries of the model's predictions
//! ([`PoolPredictions`]) and break ties by the lower global dataset index.
//! The greedy selectors keep, for every candidate, its distance to the
//! nearest center and update it only against the newest center, so one
//! selection costs `O(B * |pool| * width)` after initialization.

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;

use crate::data::parse_row;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Mean predictions and epistemic standard deviations for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPredictions {
    pub indices: Vec<usize>,
    pub means: Array2<f64>,
    pub epistemic_sd: Array2<f64>,
}

impl PoolPredictions {
    pub fn new(indices: Vec<usize>, means: Array2<f64>, epistemic_sd: Array2<f64>) -> Result<Self> {
        if means.nrows() != indices.len() {
            return Err(Error::Shape {
                location: "pool means rows".into(),
                expected: indices.len(),
                actual: means.nrows(),
            });
        }
        if epistemic_sd.dim() != means.dim() {
            return Err(Error::Shape {
                location: "pool epistemic sd columns".into(),
                expected: means.ncols(),
                actual: epistemic_sd.ncols(),
            });
        }
        if !means.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("pool means", "must be finite"));
        }
        if !epistemic_sd.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::validation("pool epistemic sd", "must be finite and >= 0"));
        }
        Ok(PoolPredictions {
            indices,
            means,
            epistemic_sd,
        })
    }

    /// Predictions without uncertainty; the sd matrix is all zeros.
    pub fn from_means(indices: Vec<usize>, means: Array2<f64>) -> Result<Self> {
        let sd = Array2::zeros(means.raw_dim());
        PoolPredictions::new(indices, means, sd)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn width(&self) -> usize {
        self.means.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Global indices in the order they were picked.
    pub chosen: Vec<usize>,
    /// Score of each pick (empty for random selection).
    pub scores: Vec<f64>,
}

/// How to read the selection step of the CKE greedy loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CkeScore {
    /// Upper-bound distance to the center that is nearest under the
    /// lower-bound shift.
    #[default]
    LowerBoundCenter,
    /// The minimum upper-bound distance itself; the lower-bound center is
    /// not used.
    UpperBoundMin,
}

impl fmt::Display for CkeScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CkeScore::LowerBoundCenter => "lb_center",
            CkeScore::UpperBoundMin => "ub_min",
        })
    }
}

impl FromStr for CkeScore {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lb_center" => Ok(CkeScore::LowerBoundCenter),
            "ub_min" => Ok(CkeScore::UpperBoundMin),
            _ => Err(format!("unknown CKE score `{s}` (expected lb_center or ub_min)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Random,
    Uncertainty,
    CoreSet,
    Cke,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Uncertainty,
        Strategy::CoreSet,
        Strategy::Cke,
    ];

    /// Whether the strategy needs Monte-Carlo predictions of the pool.
    pub fn needs_predictions(self) -> bool {
        !matches!(self, Strategy::Random)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
            Strategy::CoreSet => "coreset",
            Strategy::Cke => "cke",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(Strategy::Random),
            "uncertainty" => Ok(Strategy::Uncertainty),
            "coreset" => Ok(Strategy::CoreSet),
            "cke" => Ok(Strategy::Cke),
            _ => Err(format!(
                "unknown strategy `{s}` (expected random, uncertainty, coreset or cke)"
            )),
        }
    }
}

fn check_budget(budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::validation("budget", "must be at least 1"));
    }
    Ok(())
}

pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Is candidate `(score, index)` better than the current best?
fn beats(score: f64, index: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((s, i)) => score > s || (score == s && index < i),
    }
}

/// Uniform sample of `budget` indices without replacement, in random order.
pub fn select_random(subset: &[usize], budget: usize, rng: &mut Rng) -> Result<SelectionResult> {
    check_budget(budget)?;
    if subset.is_empty() {
        return Err(Error::validation("subset", "cannot select from an empty subset"));
    }
    let mut pool = subset.to_vec();
    let take = budget.min(pool.len());
    let (chosen, _) = pool.partial_shuffle(rng, take);
    Ok(SelectionResult {
        chosen: chosen.to_vec(),
        scores: Vec::new(),
    })
}

/// Picks the `budget` rows with the largest summed epistemic deviation.
pub fn select_uncertainty(pool: &PoolPredictions, budget: usize) -> Result<SelectionResult> {
    check_budget(budget)?;
    if pool.is_empty() {
        return Err(Error::validation("pool", "cannot select from an empty pool"));
    }
    let sums = pool.epistemic_sd.sum_axis(Axis(1));
    let mut order: Vec<(f64, usize)> = sums.iter().copied().zip(pool.indices.iter().copied()).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    order.truncate(budget);
    Ok(SelectionResult {
        chosen: order.iter().map(|&(_, i)| i).collect(),
        scores: order.iter().map(|&(s, _)| s).collect(),
    })
}

fn check_greedy_inputs(labeled: &PoolPredictions, pool: &PoolPredictions, budget: usize) -> Result<()> {
    check_budget(budget)?;
    if labeled.is_empty() {
        return Err(Error::validation(
            "labeled",
            "greedy selection needs at least one labeled center",
        ));
    }
    if pool.is_empty() {
        return Err(Error::validation("pool", "cannot select from an empty pool"));
    }
    if labeled.width() != pool.width() {
        return Err(Error::Shape {
            location: "labeled prediction width".into(),
            expected: pool.width(),
            actual: labeled.width(),
        });
    }
    Ok(())
}

/// Distance from every pool row to its nearest labeled mean.
pub fn min_distances(labeled: &PoolPredictions, pool: &PoolPredictions) -> Vec<f64> {
    pool.means
        .rows()
        .into_iter()
        .map(|p| {
            labeled
                .means
                .rows()
                .into_iter()
                .map(|c| euclidean(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// k-Center Greedy in prediction space: repeatedly take the pool point
/// farthest from its nearest center, where centers are the labeled means
/// plus the points already taken.
pub fn select_coreset(
    labeled: &PoolPredictions,
    pool: &PoolPredictions,
    budget: usize,
) -> Result<SelectionResult> {
    check_greedy_inputs(labeled, pool, budget)?;
    let mut min_dist = min_distances(labeled, pool);
    let mut taken = vec![false; pool.len()];
    let take = budget.min(pool.len());
    let mut chosen = Vec::with_capacity(take);
    let mut scores = Vec::with_capacity(take);
    for _ in 0..take {
        let mut best: Option<(f64, usize)> = None;
        let mut best_row = 0;
        for (r, &d) in min_dist.iter().enumerate() {
            if !taken[r] && beats(d, pool.indices[r], best) {
                best = Some((d, pool.indices[r]));
                best_row = r;
            }
        }
        let (score, index) = best.expect("pool not exhausted");
        taken[best_row] = true;
        chosen.push(index);
        scores.push(score);
        let center = pool.means.row(best_row);
        for (r, d) in min_dist.iter_mut().enumerate() {
            if !taken[r] {
                *d = d.min(euclidean(pool.means.row(r), center));
            }
        }
    }
    Ok(SelectionResult { chosen, scores })
}

/// CKE: k-Center Greedy where each point is shifted by `±(eta/2)` times its
/// epistemic deviation. The upper shift measures distances, the lower
/// shift picks which center counts as nearest.
pub fn select_cke(
    labeled: &PoolPredictions,
    pool: &PoolPredictions,
    budget: usize,
    eta: f64,
    reading: CkeScore,
) -> Result<SelectionResult> {
    check_greedy_inputs(labeled, pool, budget)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::validation("eta", "must be finite and >= 0"));
    }
    let half = eta / 2.0;
    let shift = |p: &PoolPredictions, sign: f64| &p.means + &(&p.epistemic_sd * (sign * half));
    let pool_up = shift(pool, 1.0);
    let pool_lo = shift(pool, -1.0);
    // Center set grows as picks are made; labeled centers come first.
    let mut centers_up: Vec<ndarray::Array1<f64>> =
        shift(labeled, 1.0).rows().into_iter().map(|r| r.to_owned()).collect();
    let mut centers_lo: Vec<ndarray::Array1<f64>> =
        shift(labeled, -1.0).rows().into_iter().map(|r| r.to_owned()).collect();

    let n = pool.len();
    let mut ub_min = vec![f64::INFINITY; n];
    let mut lb_min = vec![f64::INFINITY; n];
    let mut lb_arg = vec![0usize; n];
    let mut taken = vec![false; n];
    let update = |r: usize,
                  c: usize,
                  up: &ndarray::Array1<f64>,
                  lo: &ndarray::Array1<f64>,
                  ub_min: &mut [f64],
                  lb_min: &mut [f64],
                  lb_arg: &mut [usize]| {
        let du = euclidean(pool_up.row(r), up.view());
        if du < ub_min[r] {
            ub_min[r] = du;
        }
        let dl = euclidean(pool_lo.row(r), lo.view());
        if dl < lb_min[r] {
            lb_min[r] = dl;
            lb_arg[r] = c;
        }
    };
    for (c, (up, lo)) in centers_up.iter().zip(&centers_lo).enumerate() {
        for r in 0..n {
            update(r, c, up, lo, &mut ub_min, &mut lb_min, &mut lb_arg);
        }
    }

    let take = budget.min(n);
    let mut chosen = Vec::with_capacity(take);
    let mut scores = Vec::with_capacity(take);
    for _ in 0..take {
        let mut best: Option<(f64, usize)> = None;
        let mut best_row = 0;
        for r in 0..n {
            if taken[r] {
                continue;
            }
            let score = match reading {
                CkeScore::LowerBoundCenter => {
                    euclidean(pool_up.row(r), centers_up[lb_arg[r]].view())
                }
                CkeScore::UpperBoundMin => ub_min[r],
            };
            if beats(score, pool.indices[r], best) {
                best = Some((score, pool.indices[r]));
                best_row = r;
            }
        }
        let (score, index) = best.expect("pool not exhausted");
        taken[best_row] = true;
        chosen.push(index);
        scores.push(score);
        let c = centers_up.len();
        centers_up.push(pool_up.row(best_row).to_owned());
        centers_lo.push(pool_lo.row(best_row).to_owned());
        for (r, _) in taken.iter().enumerate().filter(|(_, &t)| !t) {
            update(r, c, &centers_up[c], &centers_lo[c], &mut ub_min, &mut lb_min, &mut lb_arg);
        }
    }
    Ok(SelectionResult { chosen, scores })
}

/// Labeled centers and unlabeled candidates read from one predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionsFile {
    pub labeled: PoolPredictions,
    pub pool: PoolPredictions,
}

/// Writes predictions in the column-text format: a `dim=<int>` header, then
/// one row per sample: `index,labeled,<dim means>,<dim sds>` where
/// `labeled` is 1 for centers and 0 for candidates.
pub fn predictions_to_string(file: &PredictionsFile) -> String {
    let mut out = format!("dim={}\n", file.pool.width().max(file.labeled.width()));
    for (flag, p) in [(1, &file.labeled), (0, &file.pool)] {
        for (r, &idx) in p.indices.iter().enumerate() {
            write!(out, "{idx},{flag}").unwrap();
            for v in p.means.row(r).iter().chain(p.epistemic_sd.row(r).iter()) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_predictions(file: &PredictionsFile, path: &Path) -> Result<()> {
    fs::write(path, predictions_to_string(file)).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<PredictionsFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, &path.display().to_string())
}

pub fn parse_predictions(text: &str, origin: &str) -> Result<PredictionsFile> {
    let err = |line: usize, reason: String| Error::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected header dim=<int>".into()))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|v| v.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| err(1, format!("malformed header `{header}`, expected dim=<int>")))?;
    let mut rows: [(Vec<usize>, Vec<f64>, Vec<f64>); 2] = Default::default();
    for (no, line) in lines {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.splitn(3, ',');
        let idx: usize = cells
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| err(line_no, "first column must be a non-negative integer index".into()))?;
        let flag: usize = match cells.next().map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            _ => return Err(err(line_no, "second column must be 0 (pool) or 1 (labeled)".into())),
        };
        let values = parse_row(cells.next().unwrap_or("")).map_err(|r| err(line_no, r))?;
        if values.len() != 2 * dim {
            return Err(err(
                line_no,
                format!("expected {} values after the flag, found {}", 2 * dim, values.len()),
            ));
        }
        if values[dim..].iter().any(|&v| v < 0.0) {
            return Err(err(line_no, "epistemic deviations must be >= 0".into()));
        }
        let bucket = &mut rows[1 - flag];
        bucket.0.push(idx);
        bucket.1.extend(&values[..dim]);
        bucket.2.extend(&values[dim..]);
    }
    let [labeled, pool] = rows.map(|(idx, means, sds)| {
        let n = idx.len();
        PoolPredictions::new(
            idx,
            Array2::from_shape_vec((n, dim), means).expect("sized above"),
            Array2::from_shape_vec((n, dim), sds).expect("sized above"),
        )
    });
    Ok(PredictionsFile {
        labeled: labeled?,
        pool: pool?,
    })
}
