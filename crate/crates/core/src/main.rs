use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use bayes_al::acquisition::{
    load_predictions, select_cke, select_coreset, select_random, select_uncertainty, CkeScore,
    Strategy,
};
use bayes_al::al_loop::{run_experiment_with, ExperimentData};
use bayes_al::config::ExperimentConfig;
use bayes_al::data::{write_dataset, SyntheticTask};
use bayes_al::report::{append_partial, reaggregate, summary_to_string, write_report};
use bayes_al::rng;

/// Name of the resolved configuration written next to every report.
const RESOLVED_CONFIG: &str = "config.resolved";

#[derive(Parser, Debug)]
#[command(name = "bayes-al", version, about = "Uncertainty-aware active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment described by a config file.
    Run {
        config: PathBuf,
        /// Parallel (strategy, trial) runs; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides `seeds.master`.
        #[arg(long, env = "BAYES_AL_SEED")]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long, env = "BAYES_AL_OUT")]
        out: Option<PathBuf>,
    },
    /// Select samples from a predictions file.
    Select {
        predictions: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0.3)]
        eta: f64,
        /// Seed for the random strategy.
        #[arg(long, default_value_t = 0, env = "BAYES_AL_SEED")]
        seed: u64,
        #[arg(long, default_value = "lb_center")]
        cke_score: CkeScore,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from the `data.*` keys of a config file.
    GenData {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seeds.master`.
        #[arg(long, env = "BAYES_AL_SEED")]
        seed: Option<u64>,
    },
    /// Re-aggregate per-trial results in a run directory into `summary.csv`.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn cmd_run(config: &Path, jobs: usize, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let data = ExperimentData::prepare(&cfg)?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let resolved = dir.join(RESOLVED_CONFIG);
    fs::write(&resolved, cfg.emit()).with_context(|| format!("writing {}", resolved.display()))?;
    let on_stage = |s: Strategy, t: usize, r: &bayes_al::al_loop::StageRecord| {
        if let Err(e) = append_partial(&dir, s, t, r) {
            eprintln!("warning: {e}");
        }
        eprintln!(
            "{s} trial {t} stage {}: labeled {} test_mse {:.6e} ({:.1}s)",
            r.stage, r.labeled_count, r.test_mse, r.wall_time
        );
    };
    let report = run_experiment_with(&cfg, &data, jobs.max(1), &on_stage)?;
    write_report(&report, &dir)?;
    print!("{}", summary_to_string(&report.summary));
    Ok(())
}

fn cmd_select(
    path: &Path,
    strategy: Strategy,
    budget: usize,
    eta: f64,
    seed: u64,
    cke_score: CkeScore,
    out: Option<PathBuf>,
) -> Result<()> {
    let file = load_predictions(path)?;
    let result = match strategy {
        Strategy::Random => {
            select_random(&file.pool.indices, budget, &mut rng::seeded(seed))?
        }
        Strategy::Uncertainty => select_uncertainty(&file.pool, budget)?,
        Strategy::CoreSet => select_coreset(&file.labeled, &file.pool, budget)?,
        Strategy::Cke => select_cke(&file.labeled, &file.pool, budget, eta, cke_score)?,
    };
    let text: String = result.chosen.iter().map(|i| format!("{i}\n")).collect();
    match out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gen_data(spec: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = ExperimentConfig::load(spec)?;
    if cfg.data.path.is_some() {
        bail!("{}: data.path is set; gen-data only generates synthetic data", spec.display());
    }
    let task = SyntheticTask::new(&cfg.data.synthetic_spec())?;
    let data = task.generate(cfg.data.n, seed.unwrap_or(cfg.master_seed))?;
    write_dataset(&data.dataset, out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            jobs,
            seed,
            out,
        } => cmd_run(&config, jobs, seed, out),
        Command::Select {
            predictions,
            strategy,
            budget,
            eta,
            seed,
            cke_score,
            out,
        } => cmd_select(&predictions, strategy, budget, eta, seed, cke_score, out),
        Command::GenData { spec, out, seed } => cmd_gen_data(&spec, &out, seed),
        Command::Report { dir } => reaggregate(&dir)
            .map(|rows| print!("{}", summary_to_string(&rows)))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cause: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", cause.join(": "));
            ExitCode::FAILURE
        }
    }
}
