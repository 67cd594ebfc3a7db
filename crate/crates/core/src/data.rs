//! Regression datasets: synthetic generation with known noise, a portable
//! text format, and min-max target normalization.
//!
//! Targets are flattened joint coordinates: joint `k` occupies the three
//! consecutive entries `3k..3k+3`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

pub const COORDS_PER_JOINT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    joints: usize,
}

impl Dataset {
    /// Builds a dataset, checking that every sample has `dim` features and
    /// `3 * joints` finite target values.
    pub fn new(samples: Vec<Sample>, dim: usize, joints: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("D", "must be positive"));
        }
        if joints == 0 {
            return Err(Error::validation("K", "must be positive"));
        }
        let width = joints * COORDS_PER_JOINT;
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::Shape {
                    location: format!("sample {i} features"),
                    expected: dim,
                    actual: s.features.len(),
                });
            }
            if s.target.len() != width {
                return Err(Error::Shape {
                    location: format!("sample {i} target"),
                    expected: width,
                    actual: s.target.len(),
                });
            }
            if !s.features.iter().chain(&s.target).all(|v| v.is_finite()) {
                return Err(Error::validation(
                    format!("sample {i}"),
                    "contains a non-finite value",
                ));
            }
        }
        Ok(Dataset {
            samples,
            dim,
            joints,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn target_width(&self) -> usize {
        self.joints * COORDS_PER_JOINT
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Features of the given rows stacked into an `indices.len() x D` matrix.
    pub fn features_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r)
                .assign(&ndarray::aview1(&self.samples[i].features));
        }
        out
    }

    pub fn targets_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.target_width()));
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).assign(&ndarray::aview1(&self.samples[i].target));
        }
        out
    }

    /// Splits rows into two datasets; `first` takes the listed indices in
    /// order, the rest keep their original order.
    pub fn split(&self, first: &[usize]) -> (Dataset, Dataset) {
        let mut taken = vec![false; self.len()];
        for &i in first {
            taken[i] = true;
        }
        let a = first.iter().map(|&i| self.samples[i].clone()).collect();
        let b = self
            .samples
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(s, _)| s.clone())
            .collect();
        (
            Dataset {
                samples: a,
                dim: self.dim,
                joints: self.joints,
            },
            Dataset {
                samples: b,
                dim: self.dim,
                joints: self.joints,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseProfile {
    /// The same standard deviation for every sample and coordinate.
    Constant { sd: f64 },
    /// `sd = min_sd + (max_sd - min_sd) * (1 + tanh(x_0)) / 2`, driven by the
    /// first feature.
    Ramp { min_sd: f64, max_sd: f64 },
}

impl NoiseProfile {
    pub fn sd(&self, features: &[f64]) -> f64 {
        match *self {
            NoiseProfile::Constant { sd } => sd,
            NoiseProfile::Ramp { min_sd, max_sd } => {
                let t = 0.5 * (1.0 + features[0].tanh());
                min_sd + (max_sd - min_sd) * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub joints: usize,
    pub noise: NoiseProfile,
    /// Seeds the target function and the feature-cluster layout.
    pub target_fn_seed: u64,
    /// Number of Gaussian feature clusters. Cluster weights fall off as
    /// `1/(c+1)`, so some regions of feature space are rare.
    pub clusters: usize,
    pub hidden: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 4000,
            dim: 16,
            joints: 21,
            noise: NoiseProfile::Constant { sd: 0.05 },
            target_fn_seed: 7,
            clusters: 32,
            hidden: 32,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("n", "must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::validation("D", "must be positive"));
        }
        if self.joints == 0 {
            return Err(Error::validation("K", "must be positive"));
        }
        if self.clusters == 0 {
            return Err(Error::validation("clusters", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::validation("hidden", "must be positive"));
        }
        match self.noise {
            NoiseProfile::Constant { sd } if !(sd >= 0.0 && sd.is_finite()) => {
                Err(Error::validation("noise_sd", "must be finite and >= 0"))
            }
            NoiseProfile::Ramp { min_sd, max_sd }
                if !(min_sd >= 0.0 && max_sd >= 0.0 && min_sd.is_finite() && max_sd.is_finite()) =>
            {
                Err(Error::validation("noise_sd", "ramp bounds must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

/// The noiseless smooth map from features to targets: a fixed random
/// two-layer tanh network.
#[derive(Debug, Clone)]
pub struct SmoothFn {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl SmoothFn {
    pub fn sample(seed: u64, dim: usize, hidden: usize, outputs: usize) -> Self {
        let mut r = rng::stream(seed, 0);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut r);
            z * scale
        };
        let s1 = 1.5 / (dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((hidden, dim), || normal(s1));
        let b1 = Array1::from_shape_simple_fn(hidden, || normal(0.5));
        let w2 = Array2::from_shape_simple_fn((outputs, hidden), || normal(s2));
        let b2 = Array1::from_shape_simple_fn(outputs, || normal(1.0));
        SmoothFn { w1, b1, w2, b2 }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let h = (self.w1.dot(&ndarray::aview1(x)) + &self.b1).mapv(f64::tanh);
        (self.w2.dot(&h) + &self.b2).to_vec()
    }
}

/// Per-sample quantities known only to the generator. Kept out of
/// [`Dataset`] so the learner can never see them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub noiseless: Vec<Vec<f64>>,
    pub noise_sd: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

/// The feature distribution and target function of a synthetic task. The
/// task depends only on the spec; `generate` draws samples from it.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    spec: SyntheticSpec,
    f: SmoothFn,
    centers: Vec<Vec<f64>>,
    cumulative_weights: Vec<f64>,
    cluster_sd: f64,
}

impl SyntheticTask {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let f = SmoothFn::sample(
            spec.target_fn_seed,
            spec.dim,
            spec.hidden,
            spec.joints * COORDS_PER_JOINT,
        );
        let mut r = rng::stream(spec.target_fn_seed, 1);
        let (centers, cluster_sd) = if spec.clusters == 1 {
            (vec![vec![0.0; spec.dim]], 1.0)
        } else {
            let c = (0..spec.clusters)
                .map(|_| {
                    (0..spec.dim)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut r);
                            1.2 * z
                        })
                        .collect()
                })
                .collect();
            (c, 0.5)
        };
        let weights: Vec<f64> = (0..spec.clusters).map(|c| 1.0 / (c as f64 + 1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative_weights = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(SyntheticTask {
            spec: spec.clone(),
            f,
            centers,
            cumulative_weights,
            cluster_sd,
        })
    }

    pub fn target_fn(&self) -> &SmoothFn {
        &self.f
    }

    /// Draws `n` samples using `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<SyntheticData> {
        let spec = &self.spec;
        let mut r = rng::seeded(seed);
        let mut samples = Vec::with_capacity(n);
        let mut noiseless = Vec::with_capacity(n);
        let mut noise_sd = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = r.gen();
            let c = self
                .cumulative_weights
                .iter()
                .position(|&w| u < w)
                .unwrap_or(self.centers.len() - 1);
            let features: Vec<f64> = self.centers[c]
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    m + self.cluster_sd * z
                })
                .collect();
            let clean = self.f.eval(&features);
            let sd = spec.noise.sd(&features);
            let target = clean
                .iter()
                .map(|&y| {
                    if sd == 0.0 {
                        y
                    } else {
                        let z: f64 = StandardNormal.sample(&mut r);
                        y + sd * z
                    }
                })
                .collect();
            samples.push(Sample { features, target });
            noiseless.push(clean);
            noise_sd.push(sd);
        }
        Ok(SyntheticData {
            dataset: Dataset::new(samples, spec.dim, spec.joints)?,
            truth: GroundTruth {
                noiseless,
                noise_sd,
            },
        })
    }
}

/// Draws `spec.n` samples of the task described by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    SyntheticTask::new(spec)?.generate(spec.n, seed)
}

/// Writes the dataset in the comma-separated text format: a `D=<int>,K=<int>`
/// header, then one row per sample with the features followed by the targets.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_string(ds)).map_err(|e| Error::io(path, e))
}

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = format!("D={},K={}\n", ds.dim, ds.joints);
    for s in &ds.samples {
        let mut first = true;
        for v in s.features.iter().chain(&s.target) {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn parse_dataset(text: &str, origin: &str) -> Result<Dataset> {
    let err = |line: usize, reason: String| Error::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected header D=<int>,K=<int>".into()))?;
    let (dim, joints) = parse_header(header).map_err(|r| err(1, r))?;
    let width = dim + joints * COORDS_PER_JOINT;
    let mut samples = Vec::new();
    for (no, line) in lines {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let values = parse_row(line).map_err(|r| err(line_no, r))?;
        if values.len() != width {
            return Err(err(
                line_no,
                format!("expected {width} values, found {}", values.len()),
            ));
        }
        let target = values[dim..].to_vec();
        let mut features = values;
        features.truncate(dim);
        samples.push(Sample { features, target });
    }
    Dataset::new(samples, dim, joints)
}

fn parse_header(header: &str) -> std::result::Result<(usize, usize), String> {
    let mut dim = None;
    let mut joints = None;
    for part in header.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("malformed header field `{}`", part.trim()))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("header value `{}` is not a positive integer", v.trim()))?;
        match k.trim() {
            "D" => dim = Some(v),
            "K" => joints = Some(v),
            other => return Err(format!("unknown header field `{other}`")),
        }
    }
    match (dim, joints) {
        (Some(d), Some(k)) if d > 0 && k > 0 => Ok((d, k)),
        _ => Err("header must set positive D and K".into()),
    }
}

pub(crate) fn parse_row(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split(',')
        .enumerate()
        .map(|(col, cell)| {
            let cell = cell.trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("column {}: `{cell}` is not a finite number", col + 1)),
            }
        })
        .collect()
}

/// Per-coordinate min and max of the raw targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::validation("dataset", "cannot normalize an empty dataset"));
        }
        let w = ds.target_width();
        let mut min = vec![f64::INFINITY; w];
        let mut max = vec![f64::NEG_INFINITY; w];
        for s in &ds.samples {
            for (j, &v) in s.target.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(NormStats { min, max })
    }

    /// Maps a raw coordinate into `[0, 1]`; zero-range coordinates map to 0.5.
    pub fn normalize_value(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range == 0.0 {
            0.5
        } else {
            (v - self.min[j]) / range
        }
    }

    pub fn denormalize_value(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range == 0.0 {
            self.min[j]
        } else {
            self.min[j] + v * range
        }
    }

    pub fn normalize(&self, target: &[f64]) -> Vec<f64> {
        target
            .iter()
            .enumerate()
            .map(|(j, &v)| self.normalize_value(j, v))
            .collect()
    }

    pub fn denormalize(&self, target: &[f64]) -> Vec<f64> {
        target
            .iter()
            .enumerate()
            .map(|(j, &v)| self.denormalize_value(j, v))
            .collect()
    }

    /// Scale factor from normalized to raw units for coordinate `j`.
    pub fn scale(&self, j: usize) -> f64 {
        self.max[j] - self.min[j]
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let samples = ds
            .samples
            .iter()
            .map(|s| Sample {
                features: s.features.clone(),
                target: self.normalize(&s.target),
            })
            .collect();
        Dataset {
            samples,
            dim: ds.dim,
            joints: ds.joints,
        }
    }

    pub fn invert(&self, ds: &Dataset) -> Dataset {
        let samples = ds
            .samples
            .iter()
            .map(|s| Sample {
                features: s.features.clone(),
                target: self.denormalize(&s.target),
            })
            .collect();
        Dataset {
            samples,
            dim: ds.dim,
            joints: ds.joints,
        }
    }
}

/// Min-max normalizes every target coordinate into `[0, 1]` over the dataset.
pub fn normalize_targets(ds: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(ds)?;
    Ok((stats.apply(ds), stats))
}
