//! Experiment configuration in a flat `section.key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration; unknown keys are
//! rejected. [`ExperimentConfig::emit`] writes every key, and parsing the
//! emitted text gives back the same configuration.
//!
//! | key | default |
//! |-----|---------|
//! | `data.path` | unset (synthetic data) |
//! | `data.n` | 4000 |
//! | `data.n_test` | 1000 |
//! | `data.dim` | 16 |
//! | `data.joints` | 21 |
//! | `data.noise` | `constant` (`constant` or `ramp`) |
//! | `data.noise_sd` | 0.05 |
//! | `data.noise_min_sd` | 0.01 |
//! | `data.noise_max_sd` | 0.1 |
//! | `data.clusters` | 32 |
//! | `data.target_hidden` | 32 |
//! | `data.target_seed` | 7 |
//! | `model.hidden` | `64,64,64` |
//! | `model.dropout_mode` | `A` |
//! | `model.dropout_rate` | 0.1 |
//! | `model.loss` | `heteroscedastic` |
//! | `model.alpha` | `per_joint` |
//! | `model.mc_passes` | 40 |
//! | `train.lr` | 0.001 |
//! | `train.batch` | 128 |
//! | `train.epochs` | 100 |
//! | `al.budget` | 100 |
//! | `al.seed_size` | same as `al.budget` |
//! | `al.stages` | 10 |
//! | `al.subset_fraction` | 0.1 |
//! | `al.trials` | 5 |
//! | `al.strategies` | `random,uncertainty,coreset,cke` |
//! | `al.eta` | 0.3 |
//! | `al.cke_score` | `lb_center` |
//! | `al.share_subsets` | `true` |
//! | `seeds.master` | 0 |
//! | `output.dir` | `results` |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::acquisition::{CkeScore, Strategy};
use crate::data::{NoiseProfile, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{AlphaGranularity, DropoutMode, LossKind, ModelSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Dataset file; synthetic data is generated when unset.
    pub path: Option<PathBuf>,
    pub n: usize,
    pub n_test: usize,
    pub dim: usize,
    pub joints: usize,
    pub noise: NoiseProfile,
    pub clusters: usize,
    pub target_hidden: usize,
    pub target_seed: u64,
}

impl DataConfig {
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n: self.n,
            dim: self.dim,
            joints: self.joints,
            noise: self.noise,
            target_fn_seed: self.target_seed,
            clusters: self.clusters,
            hidden: self.target_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub dropout_mode: DropoutMode,
    pub dropout_rate: f64,
    pub loss: LossKind,
    pub alpha: AlphaGranularity,
    pub mc_passes: usize,
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, joints: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.hidden.clone(),
            joints,
            alpha: (self.loss == LossKind::Heteroscedastic).then_some(self.alpha),
            dropout_mode: self.dropout_mode,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
}

impl TrainSection {
    pub fn config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            loss,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlConfig {
    pub budget: usize,
    /// Size of the initial labeled set; `None` means "same as the budget".
    pub seed_size: Option<usize>,
    pub stages: usize,
    pub subset_fraction: f64,
    pub trials: usize,
    pub strategies: Vec<Strategy>,
    pub eta: f64,
    pub cke_score: CkeScore,
    /// Draw candidate subsets from the same seed for every strategy.
    pub share_subsets: bool,
}

impl AlConfig {
    pub fn seed_size(&self) -> usize {
        self.seed_size.unwrap_or(self.budget)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub al: AlConfig,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig {
                path: None,
                n: 4000,
                n_test: 1000,
                dim: 16,
                joints: 21,
                noise: NoiseProfile::Constant { sd: 0.05 },
                clusters: 32,
                target_hidden: 32,
                target_seed: 7,
            },
            model: ModelConfig {
                hidden: vec![64, 64, 64],
                dropout_mode: DropoutMode::A,
                dropout_rate: 0.1,
                loss: LossKind::Heteroscedastic,
                alpha: AlphaGranularity::PerJoint,
                mc_passes: 40,
            },
            train: TrainSection {
                lr: 1e-3,
                batch: 128,
                epochs: 100,
            },
            al: AlConfig {
                budget: 100,
                seed_size: None,
                stages: 10,
                subset_fraction: 0.1,
                trials: 5,
                strategies: Strategy::ALL.to_vec(),
                eta: 0.3,
                cke_score: CkeScore::LowerBoundCenter,
                share_subsets: true,
            },
            master_seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize, origin: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Parse {
        path: origin.to_string(),
        line,
        reason: format!("`{key}`: cannot parse `{value}`: {e}"),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, line: usize, origin: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_value(key, v.trim(), line, origin))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut noise_kind = "constant".to_string();
        let mut noise_sd = 0.05;
        let mut noise_min = 0.01;
        let mut noise_max = 0.1;
        let mut key_lines: Vec<(String, usize)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = no + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line,
                reason: format!("expected `key = value`, found `{trimmed}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key_lines.iter().any(|(k, _)| k == key) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    reason: format!("`{key}` is set twice"),
                });
            }
            key_lines.push((key.to_string(), line));
            let p = |v: &str| v.to_string();
            match key {
                "data.path" => cfg.data.path = (!value.is_empty()).then(|| PathBuf::from(value)),
                "data.n" => cfg.data.n = parse_value(key, value, line, origin)?,
                "data.n_test" => cfg.data.n_test = parse_value(key, value, line, origin)?,
                "data.dim" => cfg.data.dim = parse_value(key, value, line, origin)?,
                "data.joints" => cfg.data.joints = parse_value(key, value, line, origin)?,
                "data.noise" => noise_kind = p(value),
                "data.noise_sd" => noise_sd = parse_value(key, value, line, origin)?,
                "data.noise_min_sd" => noise_min = parse_value(key, value, line, origin)?,
                "data.noise_max_sd" => noise_max = parse_value(key, value, line, origin)?,
                "data.clusters" => cfg.data.clusters = parse_value(key, value, line, origin)?,
                "data.target_hidden" => cfg.data.target_hidden = parse_value(key, value, line, origin)?,
                "data.target_seed" => cfg.data.target_seed = parse_value(key, value, line, origin)?,
                "model.hidden" => cfg.model.hidden = parse_list(key, value, line, origin)?,
                "model.dropout_mode" => cfg.model.dropout_mode = parse_value(key, value, line, origin)?,
                "model.dropout_rate" => cfg.model.dropout_rate = parse_value(key, value, line, origin)?,
                "model.loss" => cfg.model.loss = parse_value(key, value, line, origin)?,
                "model.alpha" => cfg.model.alpha = parse_value(key, value, line, origin)?,
                "model.mc_passes" => cfg.model.mc_passes = parse_value(key, value, line, origin)?,
                "train.lr" => cfg.train.lr = parse_value(key, value, line, origin)?,
                "train.batch" => cfg.train.batch = parse_value(key, value, line, origin)?,
                "train.epochs" => cfg.train.epochs = parse_value(key, value, line, origin)?,
                "al.budget" => cfg.al.budget = parse_value(key, value, line, origin)?,
                "al.seed_size" => cfg.al.seed_size = Some(parse_value(key, value, line, origin)?),
                "al.stages" => cfg.al.stages = parse_value(key, value, line, origin)?,
                "al.subset_fraction" => cfg.al.subset_fraction = parse_value(key, value, line, origin)?,
                "al.trials" => cfg.al.trials = parse_value(key, value, line, origin)?,
                "al.strategies" => cfg.al.strategies = parse_list(key, value, line, origin)?,
                "al.eta" => cfg.al.eta = parse_value(key, value, line, origin)?,
                "al.cke_score" => cfg.al.cke_score = parse_value(key, value, line, origin)?,
                "al.share_subsets" => cfg.al.share_subsets = parse_value(key, value, line, origin)?,
                "seeds.master" => cfg.master_seed = parse_value(key, value, line, origin)?,
                "output.dir" => cfg.output_dir = PathBuf::from(value),
                _ => {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line,
                        reason: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        let line_of = |key: &str| {
            key_lines
                .iter()
                .find(|(k, _)| k == key)
                .map_or(0, |(_, l)| *l)
        };
        cfg.data.noise = match noise_kind.as_str() {
            "constant" => NoiseProfile::Constant { sd: noise_sd },
            "ramp" => NoiseProfile::Ramp {
                min_sd: noise_min,
                max_sd: noise_max,
            },
            other => {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: line_of("data.noise"),
                    reason: format!("`data.noise`: unknown noise profile `{other}` (expected constant or ramp)"),
                })
            }
        };
        if let Err(Error::Validation { field, reason }) = cfg.validate() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: line_of(&field),
                reason: format!("`{field}`: {reason}"),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text, &path.display().to_string())
    }

    /// Range checks. Errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, r: &str| Err(Error::validation(k, r));
        if self.data.n == 0 {
            return bad("data.n", "must be positive");
        }
        if self.data.dim == 0 {
            return bad("data.dim", "must be positive");
        }
        if self.data.joints == 0 {
            return bad("data.joints", "must be positive");
        }
        if self.data.n_test == 0 {
            return bad("data.n_test", "must be positive");
        }
        if self.data.clusters == 0 {
            return bad("data.clusters", "must be positive");
        }
        if self.data.target_hidden == 0 {
            return bad("data.target_hidden", "must be positive");
        }
        match self.data.noise {
            NoiseProfile::Constant { sd } if !(sd >= 0.0 && sd.is_finite()) => {
                return bad("data.noise_sd", "must be finite and >= 0")
            }
            NoiseProfile::Ramp { min_sd, .. } if !(min_sd >= 0.0 && min_sd.is_finite()) => {
                return bad("data.noise_min_sd", "must be finite and >= 0")
            }
            NoiseProfile::Ramp { max_sd, .. } if !(max_sd >= 0.0 && max_sd.is_finite()) => {
                return bad("data.noise_max_sd", "must be finite and >= 0")
            }
            _ => {}
        }
        if self.model.hidden.contains(&0) {
            return bad("model.hidden", "layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.model.dropout_rate) {
            return bad("model.dropout_rate", "must lie in [0, 1)");
        }
        if self.model.mc_passes == 0 {
            return bad("model.mc_passes", "must be at least 1");
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return bad("train.lr", "must be finite and > 0");
        }
        if self.train.batch == 0 {
            return bad("train.batch", "must be at least 1");
        }
        if self.train.epochs == 0 {
            return bad("train.epochs", "must be at least 1");
        }
        if self.al.seed_size() == 0 {
            return bad("al.seed_size", "the initial labeled set must be non-empty");
        }
        if !(self.al.subset_fraction > 0.0 && self.al.subset_fraction <= 1.0) {
            return bad("al.subset_fraction", "must lie in (0, 1]");
        }
        if self.al.trials == 0 {
            return bad("al.trials", "must be at least 1");
        }
        if self.al.strategies.is_empty() {
            return bad("al.strategies", "list at least one strategy");
        }
        for (i, s) in self.al.strategies.iter().enumerate() {
            if self.al.strategies[..i].contains(s) {
                return bad("al.strategies", &format!("`{s}` is listed twice"));
            }
        }
        if !(self.al.eta >= 0.0 && self.al.eta.is_finite()) {
            return bad("al.eta", "must be finite and >= 0");
        }
        Ok(())
    }

    /// Every key with its resolved value, in the parse format.
    pub fn emit(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").unwrap();
        if let Some(p) = &self.data.path {
            kv("data.path", p.display().to_string());
        }
        kv("data.n", self.data.n.to_string());
        kv("data.n_test", self.data.n_test.to_string());
        kv("data.dim", self.data.dim.to_string());
        kv("data.joints", self.data.joints.to_string());
        match self.data.noise {
            NoiseProfile::Constant { sd } => {
                kv("data.noise", "constant".into());
                kv("data.noise_sd", sd.to_string());
            }
            NoiseProfile::Ramp { min_sd, max_sd } => {
                kv("data.noise", "ramp".into());
                kv("data.noise_min_sd", min_sd.to_string());
                kv("data.noise_max_sd", max_sd.to_string());
            }
        }
        kv("data.clusters", self.data.clusters.to_string());
        kv("data.target_hidden", self.data.target_hidden.to_string());
        kv("data.target_seed", self.data.target_seed.to_string());
        kv("model.hidden", join(&self.model.hidden));
        kv("model.dropout_mode", self.model.dropout_mode.to_string());
        kv("model.dropout_rate", self.model.dropout_rate.to_string());
        kv("model.loss", self.model.loss.to_string());
        kv("model.alpha", self.model.alpha.to_string());
        kv("model.mc_passes", self.model.mc_passes.to_string());
        kv("train.lr", self.train.lr.to_string());
        kv("train.batch", self.train.batch.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv("al.budget", self.al.budget.to_string());
        if let Some(s) = self.al.seed_size {
            kv("al.seed_size", s.to_string());
        }
        kv("al.stages", self.al.stages.to_string());
        kv("al.subset_fraction", self.al.subset_fraction.to_string());
        kv("al.trials", self.al.trials.to_string());
        kv("al.strategies", join(&self.al.strategies));
        kv("al.eta", self.al.eta.to_string());
        kv("al.cke_score", self.al.cke_score.to_string());
        kv("al.share_subsets", self.al.share_subsets.to_string());
        kv("seeds.master", self.master_seed.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        o
    }
}
