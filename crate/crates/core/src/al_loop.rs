//! Pool-based active learning: a seed set, then stages of
//! train -> evaluate -> draw candidate subset -> select -> annotate.
//!
//! Seeds are derived from the master seed per trial and stage, never per
//! strategy, so trial `t` of every strategy starts from the same labeled
//! set and trains with the same initialization and shuffle seeds. Curves of
//! different strategies then differ only through what they acquire.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::acquisition::{
    select_cke, select_coreset, select_random, select_uncertainty, PoolPredictions, Strategy,
};
use crate::config::ExperimentConfig;
use crate::data::{load_dataset, Dataset, NormStats, SyntheticTask};
use crate::error::{Error, Result};
use crate::model::{mc_predict_rows, train, Labeled, ModelParams, ModelSpec, TrainConfig};
use crate::rng;

/// Labeled and unlabeled index sets of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ALState {
    /// Labeled indices in annotation order.
    pub labeled: Vec<usize>,
    /// Unlabeled indices, ascending.
    pub pool: Vec<usize>,
    pub stage: usize,
    /// Size of the unlabeled pool before the first acquisition.
    pub initial_pool: usize,
}

impl ALState {
    /// Splits `0..n` into the seed set and the remaining pool.
    pub fn new(n: usize, seed_set: Vec<usize>) -> Result<Self> {
        let mut in_seed = vec![false; n];
        for &i in &seed_set {
            if i >= n || in_seed[i] {
                return Err(Error::validation("seed set", "indices must be distinct and < n"));
            }
            in_seed[i] = true;
        }
        let pool: Vec<usize> = (0..n).filter(|&i| !in_seed[i]).collect();
        Ok(ALState {
            initial_pool: pool.len(),
            labeled: seed_set,
            pool,
            stage: 0,
        })
    }

    /// Moves `chosen` from the pool to the labeled set.
    fn annotate(&mut self, chosen: &[usize]) {
        let mut picked = vec![false; self.labeled.len() + self.pool.len()];
        for &i in chosen {
            picked[i] = true;
        }
        self.pool.retain(|&i| !picked[i]);
        self.labeled.extend_from_slice(chosen);
    }
}

/// Gives the learner targets for labeled indices only. Candidates are
/// exposed through their features.
pub struct LabelOracle<'a> {
    data: &'a Dataset,
}

impl<'a> LabelOracle<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        LabelOracle { data }
    }

    pub fn labeled(&self, state: &ALState) -> Labeled {
        Labeled::from_dataset(self.data, &state.labeled)
    }

    pub fn features(&self, indices: &[usize]) -> Array2<f64> {
        self.data.features_matrix(indices)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub labeled_count: usize,
    /// Per-joint squared error on the test set, in raw target units.
    pub test_mse: f64,
    pub train_loss_final: f64,
    pub wall_time: f64,
    /// The pool held fewer candidates than the budget at this stage.
    pub pool_exhausted: bool,
}

/// Held-out evaluation data: raw targets plus the normalization that the
/// model's outputs must be mapped back through.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub x: Array2<f64>,
    pub y_raw: Array2<f64>,
    pub stats: NormStats,
}

impl TestSet {
    pub fn new(test: &Dataset, stats: NormStats) -> Self {
        let all: Vec<usize> = (0..test.len()).collect();
        TestSet {
            x: test.features_matrix(&all),
            y_raw: test.targets_matrix(&all),
            stats,
        }
    }

    /// Test error of normalized predictions after mapping them back to raw units.
    pub fn mse(&self, normalized_pred: &Array2<f64>) -> f64 {
        let mut raw = normalized_pred.clone();
        for mut row in raw.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.stats.denormalize_value(j, *v);
            }
        }
        crate::model::per_joint_mse(raw.view(), self.y_raw.view())
    }
}

/// Everything a stage needs besides the state.
pub struct StageContext<'a> {
    pub oracle: LabelOracle<'a>,
    pub test: &'a TestSet,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub mc_passes: usize,
    pub budget: usize,
    pub subset_fraction: f64,
    pub eta: f64,
    pub cke_score: crate::acquisition::CkeScore,
}

/// Seeds for one stage of one trial.
#[derive(Debug, Clone, Copy)]
pub struct StageSeeds {
    pub init: u64,
    pub train: u64,
    pub subset: u64,
    pub selection: u64,
    pub mc: u64,
}

impl StageSeeds {
    pub fn derive(trial_seed: u64, stage: usize, strategy_salt: Option<u64>) -> Self {
        let s = stage as u64;
        StageSeeds {
            init: rng::mix(&[trial_seed, 1, s]),
            train: rng::mix(&[trial_seed, 2, s]),
            subset: match strategy_salt {
                None => rng::mix(&[trial_seed, 3, s]),
                Some(salt) => rng::mix(&[trial_seed, 3, s, salt]),
            },
            selection: rng::mix(&[trial_seed, 4, s]),
            mc: rng::mix(&[trial_seed, 5, s]),
        }
    }
}

/// Trains a fresh model on the labeled set and measures test error.
pub fn train_and_evaluate(
    state: &ALState,
    ctx: &StageContext<'_>,
    seeds: &StageSeeds,
) -> Result<(ModelParams, f64, f64)> {
    let labeled = ctx.oracle.labeled(state);
    let init = ctx.model.init(seeds.init)?;
    let cfg = TrainConfig {
        seed: seeds.train,
        ..ctx.train.clone()
    };
    let outcome = train(&init, &labeled, &cfg)?;
    let params = outcome.params;
    let pred = predict_mean(&params, &ctx.test.x, ctx.mc_passes, seeds.mc)?;
    Ok((params, ctx.test.mse(&pred), outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)))
}

/// Monte-Carlo mean when the model has dropout, deterministic output otherwise.
fn predict_mean(params: &ModelParams, x: &Array2<f64>, passes: usize, seed: u64) -> Result<Array2<f64>> {
    if params.dropout_sites().iter().any(|&s| s) {
        let ids: Vec<u64> = (0..x.nrows() as u64).collect();
        Ok(mc_predict_rows(params, x.view(), &ids, passes, seed)?.mean)
    } else {
        params.predict(x.view())
    }
}

/// Monte-Carlo predictions for the given global indices.
pub fn pool_predictions(
    params: &ModelParams,
    oracle: &LabelOracle<'_>,
    indices: &[usize],
    passes: usize,
    seed: u64,
) -> Result<PoolPredictions> {
    let x = oracle.features(indices);
    let ids: Vec<u64> = indices.iter().map(|&i| i as u64).collect();
    let pred = mc_predict_rows(params, x.view(), &ids, passes, seed)?;
    let sd = pred.epistemic_sd();
    PoolPredictions::new(indices.to_vec(), pred.mean, sd)
}

/// Draws the candidate subset: `max(ceil(fraction * initial_pool), budget)`
/// indices, capped at the pool size, returned ascending.
pub fn draw_subset(state: &ALState, fraction: f64, budget: usize, seed: u64) -> Vec<usize> {
    let want = ((fraction * state.initial_pool as f64).ceil() as usize)
        .max(budget)
        .min(state.pool.len());
    let mut pool = state.pool.clone();
    let mut r = rng::seeded(seed);
    let (picked, _) = pool.partial_shuffle(&mut r, want);
    let mut subset = picked.to_vec();
    subset.sort_unstable();
    subset
}

/// Chooses up to `ctx.budget` indices from `subset`.
pub fn acquire(
    state: &ALState,
    params: &ModelParams,
    subset: &[usize],
    ctx: &StageContext<'_>,
    strategy: Strategy,
    seeds: &StageSeeds,
) -> Result<Vec<usize>> {
    if ctx.budget == 0 || subset.is_empty() {
        return Ok(Vec::new());
    }
    let chosen = match strategy {
        Strategy::Random => select_random(subset, ctx.budget, &mut rng::seeded(seeds.selection))?,
        Strategy::Uncertainty => {
            let pool = pool_predictions(params, &ctx.oracle, subset, ctx.mc_passes, seeds.mc)?;
            select_uncertainty(&pool, ctx.budget)?
        }
        Strategy::CoreSet | Strategy::Cke => {
            let pool = pool_predictions(params, &ctx.oracle, subset, ctx.mc_passes, seeds.mc)?;
            let labeled = pool_predictions(params, &ctx.oracle, &state.labeled, ctx.mc_passes, seeds.mc)?;
            if strategy == Strategy::CoreSet {
                select_coreset(&labeled, &pool, ctx.budget)?
            } else {
                select_cke(&labeled, &pool, ctx.budget, ctx.eta, ctx.cke_score)?
            }
        }
    };
    Ok(chosen.chosen)
}

/// One stage: train from scratch, evaluate, then acquire and annotate.
pub fn run_stage(
    state: &ALState,
    ctx: &StageContext<'_>,
    strategy: Strategy,
    seeds: &StageSeeds,
) -> Result<(ALState, StageRecord, ModelParams)> {
    if state.pool.is_empty() {
        return Err(Error::validation("pool", "no unlabeled samples left"));
    }
    let start = Instant::now();
    let (params, test_mse, train_loss_final) = train_and_evaluate(state, ctx, seeds)?;
    let subset = draw_subset(state, ctx.subset_fraction, ctx.budget, seeds.subset);
    let chosen = acquire(state, &params, &subset, ctx, strategy, seeds)?;
    let mut next = state.clone();
    next.annotate(&chosen);
    next.stage += 1;
    let record = StageRecord {
        stage: state.stage,
        labeled_count: state.labeled.len(),
        test_mse,
        train_loss_final,
        wall_time: start.elapsed().as_secs_f64(),
        pool_exhausted: state.pool.len() < ctx.budget,
    };
    Ok((next, record, params))
}

/// A stage record tagged with its strategy and trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub strategy: Strategy,
    pub trial: usize,
    pub record: StageRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub stage: usize,
    pub labeled_count: usize,
    pub mean_mse: f64,
    /// Sample standard deviation across trials (0 for a single trial).
    pub std_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    pub trials: usize,
    pub epochs: usize,
    pub master_seed: u64,
}

impl Report {
    /// Builds the per-(strategy, stage) summary from per-trial records.
    pub fn from_records(mut records: Vec<TrialRecord>, strategies: &[Strategy], trials: usize, epochs: usize, master_seed: u64) -> Self {
        let rank = |s: Strategy| strategies.iter().position(|&x| x == s).unwrap_or(usize::MAX);
        records.sort_by_key(|r| (rank(r.strategy), r.trial, r.record.stage));
        let summary = summarize(&records, strategies);
        Report {
            records,
            summary,
            trials,
            epochs,
            master_seed,
        }
    }

    pub fn final_stage(&self, strategy: Strategy) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .filter(|r| r.strategy == strategy)
            .max_by_key(|r| r.stage)
    }

    pub fn trial_curve(&self, strategy: Strategy, trial: usize) -> Vec<&StageRecord> {
        self.records
            .iter()
            .filter(|r| r.strategy == strategy && r.trial == trial)
            .map(|r| &r.record)
            .collect()
    }
}

pub fn summarize(records: &[TrialRecord], strategies: &[Strategy]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &strategy in strategies {
        let mut stages: Vec<usize> = records
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| r.record.stage)
            .collect();
        stages.sort_unstable();
        stages.dedup();
        for stage in stages {
            let rows: Vec<&StageRecord> = records
                .iter()
                .filter(|r| r.strategy == strategy && r.record.stage == stage)
                .map(|r| &r.record)
                .collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.test_mse).sum::<f64>() / n;
            let std = if rows.len() > 1 {
                (rows.iter().map(|r| (r.test_mse - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let labeled_count = rows.iter().map(|r| r.labeled_count).sum::<usize>() / rows.len();
            out.push(SummaryRow {
                strategy,
                stage,
                labeled_count,
                mean_mse: mean,
                std_mse: std,
            });
        }
    }
    out
}

/// Pool and test data ready for an experiment: pool targets are normalized,
/// test targets stay raw.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub pool: Dataset,
    pub test: TestSet,
}

impl ExperimentData {
    pub fn from_split(pool_raw: &Dataset, test_raw: &Dataset) -> Result<Self> {
        let stats = NormStats::fit(pool_raw)?;
        Ok(ExperimentData {
            pool: stats.apply(pool_raw),
            test: TestSet::new(test_raw, stats),
        })
    }

    /// Generates or loads the data described by `cfg.data`.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.data.path {
            None => {
                let task = SyntheticTask::new(&cfg.data.synthetic_spec())?;
                let pool = task.generate(cfg.data.n, rng::mix(&[cfg.master_seed, 0xDA7A, 0]))?;
                let test = task.generate(cfg.data.n_test, rng::mix(&[cfg.master_seed, 0xDA7A, 1]))?;
                ExperimentData::from_split(&pool.dataset, &test.dataset)
            }
            Some(path) => {
                let all = load_dataset(path)?;
                if cfg.data.n_test >= all.len() {
                    return Err(Error::validation(
                        "data.n_test",
                        format!("must be smaller than the {} rows of {}", all.len(), path.display()),
                    ));
                }
                let mut order: Vec<usize> = (0..all.len()).collect();
                order.shuffle(&mut rng::seeded(rng::mix(&[cfg.master_seed, 0xDA7A, 2])));
                let mut test_idx = order[..cfg.data.n_test].to_vec();
                test_idx.sort_unstable();
                let (test, pool) = all.split(&test_idx);
                ExperimentData::from_split(&pool, &test)
            }
        }
    }
}

/// Checks that the configuration fits the data before any training.
fn check_experiment(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<()> {
    cfg.validate()?;
    if cfg.al.seed_size() >= data.pool.len() {
        return Err(Error::validation(
            "al.seed_size",
            format!("must be smaller than the pool ({} samples)", data.pool.len()),
        ));
    }
    let spec = cfg.model.spec(data.pool.dim(), data.pool.joints());
    spec.validate()?;
    cfg.train.config(cfg.model.loss, 0).validate()?;
    Ok(())
}

/// Runs one trial of one strategy; `on_stage` sees each record as soon as
/// it is complete.
pub fn run_trial(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    strategy: Strategy,
    trial: usize,
    on_stage: &(dyn Fn(Strategy, usize, &StageRecord) + Sync),
) -> Result<Vec<StageRecord>> {
    let trial_seed = rng::mix(&[cfg.master_seed, trial as u64]);
    let n = data.pool.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(trial_seed, 0);
    let (seed_set, _) = order.partial_shuffle(&mut r, cfg.al.seed_size());
    let mut state = ALState::new(n, seed_set.to_vec())?;
    let ctx = StageContext {
        oracle: LabelOracle::new(&data.pool),
        test: &data.test,
        model: cfg.model.spec(data.pool.dim(), data.pool.joints()),
        train: cfg.train.config(cfg.model.loss, 0),
        mc_passes: cfg.model.mc_passes,
        budget: cfg.al.budget,
        subset_fraction: cfg.al.subset_fraction,
        eta: cfg.al.eta,
        cke_score: cfg.al.cke_score,
    };
    let salt = (!cfg.al.share_subsets).then(|| strategy as u64 + 1);
    let mut records = Vec::with_capacity(cfg.al.stages + 1);
    for stage in 0..=cfg.al.stages {
        let seeds = StageSeeds::derive(trial_seed, stage, salt);
        let record = if stage < cfg.al.stages && !state.pool.is_empty() {
            let (next, record, _) = run_stage(&state, &ctx, strategy, &seeds)?;
            state = next;
            record
        } else {
            let start = Instant::now();
            let (_, test_mse, train_loss_final) = train_and_evaluate(&state, &ctx, &seeds)?;
            state.stage += 1;
            StageRecord {
                stage,
                labeled_count: state.labeled.len(),
                test_mse,
                train_loss_final,
                wall_time: start.elapsed().as_secs_f64(),
                pool_exhausted: state.pool.len() < ctx.budget,
            }
        };
        on_stage(strategy, trial, &record);
        records.push(record);
    }
    Ok(records)
}

/// Every configured strategy times every trial, aggregated into a report.
/// With `jobs > 1` the (strategy, trial) runs execute in parallel; the
/// report is identical to a serial run.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    jobs: usize,
    on_stage: &(dyn Fn(Strategy, usize, &StageRecord) + Sync),
) -> Result<Report> {
    check_experiment(cfg, data)?;
    let runs: Vec<(Strategy, usize)> = cfg
        .al
        .strategies
        .iter()
        .flat_map(|&s| (0..cfg.al.trials).map(move |t| (s, t)))
        .collect();
    let exec = |&(s, t): &(Strategy, usize)| -> Result<Vec<TrialRecord>> {
        Ok(run_trial(cfg, data, s, t, on_stage)?
            .into_iter()
            .map(|record| TrialRecord {
                strategy: s,
                trial: t,
                record,
            })
            .collect())
    };
    let results: Vec<Result<Vec<TrialRecord>>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::validation("jobs", e.to_string()))?;
        pool.install(|| runs.par_iter().map(exec).collect())
    } else {
        runs.iter().map(exec).collect()
    };
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    Ok(Report::from_records(
        records,
        &cfg.al.strategies,
        cfg.al.trials,
        cfg.train.epochs,
        cfg.master_seed,
    ))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let data = ExperimentData::prepare(cfg)?;
    run_experiment_with(cfg, &data, 1, &|_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.n = 60;
        cfg.data.n_test = 30;
        cfg.data.dim = 3;
        cfg.data.joints = 2;
        cfg.model.hidden = vec![8, 8];
        cfg.model.mc_passes = 5;
        cfg.train.epochs = 3;
        cfg.train.batch = 16;
        cfg.al.budget = 5;
        cfg.al.stages = 2;
        cfg.al.trials = 2;
        cfg.al.subset_fraction = 0.5;
        cfg
    }

    #[test]
    fn state_conserves_indices() {
        let mut s = ALState::new(10, vec![3, 7]).unwrap();
        assert_eq!(s.pool, vec![0, 1, 2, 4, 5, 6, 8, 9]);
        s.annotate(&[9, 0]);
        assert_eq!(s.labeled, vec![3, 7, 9, 0]);
        assert_eq!(s.pool, vec![1, 2, 4, 5, 6, 8]);
        assert!(ALState::new(3, vec![1, 1]).is_err());
    }

    #[test]
    fn subset_size_and_membership() {
        let s = ALState::new(100, vec![0, 1]).unwrap();
        let sub = draw_subset(&s, 0.1, 3, 5);
        assert_eq!(sub.len(), 10);
        assert!(sub.windows(2).all(|w| w[0] < w[1]));
        assert!(sub.iter().all(|i| s.pool.contains(i)));
        // Budget larger than the fraction widens the subset.
        assert_eq!(draw_subset(&s, 0.1, 20, 5).len(), 20);
    }

    #[test]
    fn zero_budget_is_pure_evaluation() {
        let mut cfg = tiny();
        cfg.al.budget = 0;
        cfg.al.seed_size = Some(5);
        let data = ExperimentData::prepare(&cfg).unwrap();
        let recs = run_trial(&cfg, &data, Strategy::Cke, 0, &|_, _, _| {}).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.labeled_count == 5));
    }

    #[test]
    fn record_count_and_labeled_growth() {
        let mut cfg = tiny();
        cfg.al.trials = 1;
        cfg.al.stages = 1;
        cfg.al.strategies = vec![Strategy::Random];
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.records.len(), 2);
        let counts: Vec<usize> = report.records.iter().map(|r| r.record.labeled_count).collect();
        assert_eq!(counts, vec![5, 10]);
    }

    #[test]
    fn strategies_share_stage_zero() {
        let mut cfg = tiny();
        cfg.al.strategies = vec![Strategy::Random, Strategy::Cke];
        let report = run_experiment(&cfg).unwrap();
        for t in 0..cfg.al.trials {
            let a = report.trial_curve(Strategy::Random, t)[0].test_mse;
            let b = report.trial_curve(Strategy::Cke, t)[0].test_mse;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = tiny();
        let data = ExperimentData::prepare(&cfg).unwrap();
        let serial = run_experiment_with(&cfg, &data, 1, &|_, _, _| {}).unwrap();
        let parallel = run_experiment_with(&cfg, &data, 3, &|_, _, _| {}).unwrap();
        let strip = |r: &Report| -> Vec<(Strategy, usize, usize, usize, f64)> {
            r.records
                .iter()
                .map(|t| (t.strategy, t.trial, t.record.stage, t.record.labeled_count, t.record.test_mse))
                .collect()
        };
        assert_eq!(strip(&serial), strip(&parallel));
    }

    #[test]
    fn seed_set_must_fit_pool() {
        let mut cfg = tiny();
        cfg.al.seed_size = Some(60);
        let data = ExperimentData::prepare(&cfg).unwrap();
        assert!(run_experiment_with(&cfg, &data, 1, &|_, _, _| {}).is_err());
    }
}
