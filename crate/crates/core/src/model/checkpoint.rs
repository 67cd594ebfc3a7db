//! Text checkpoints.
//!
//! ```text
//! bayes-al-checkpoint 1
//! joints <K>
//! alpha <none|per_joint|per_coordinate>
//! dropout <mode> <rate>
//! layers <count>
//! layer <in> <out> <activation>
//! <out lines of `in` comma-separated weights, row-major>
//! <one line of `out` comma-separated biases>
//! ...
//! ```
//!
//! Values are written in shortest round-trip form, so loading a saved
//! checkpoint reproduces the parameters bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Head, Layer, ModelParams};
use crate::data::parse_row;
use crate::error::{Error, Result};

const MAGIC: &str = "bayes-al-checkpoint 1";

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

pub fn checkpoint_to_string(params: &ModelParams) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "joints {}", params.head.joints).unwrap();
    let alpha = params
        .head
        .alpha
        .map_or_else(|| "none".to_string(), |a| a.to_string());
    writeln!(out, "alpha {alpha}").unwrap();
    writeln!(out, "dropout {} {}", params.dropout_mode, params.dropout_rate).unwrap();
    writeln!(out, "layers {}", params.layers.len()).unwrap();
    for layer in &params.layers {
        writeln!(
            out,
            "layer {} {} {}",
            layer.input_dim(),
            layer.output_dim(),
            layer.activation.name()
        )
        .unwrap();
        for row in layer.weights.rows() {
            writeln!(out, "{}", join(row.iter().copied())).unwrap();
        }
        writeln!(out, "{}", join(layer.bias.iter().copied())).unwrap();
    }
    out
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line: self.line,
            reason: reason.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of checkpoint"))
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}` line")));
        }
        Ok(parts.collect())
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let v = parse_row(line).map_err(|r| self.err(r))?;
        if v.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", v.len())));
        }
        Ok(v)
    }
}

fn one<'a, T: std::str::FromStr>(lines: &Lines<'a>, parts: &[&str], what: &str) -> Result<T> {
    match parts {
        [v] => v.parse().map_err(|_| lines.err(format!("bad {what} `{v}`"))),
        _ => Err(lines.err(format!("expected a single {what}"))),
    }
}

pub fn parse_checkpoint(text: &str, origin: &str) -> Result<ModelParams> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        origin,
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a checkpoint (bad magic line)"));
    }
    let parts = lines.keyed("joints")?;
    let joints: usize = one(&lines, &parts, "joint count")?;
    let parts = lines.keyed("alpha")?;
    let alpha = match parts.as_slice() {
        ["none"] => None,
        [a] => Some(a.parse().map_err(|e: String| lines.err(e))?),
        _ => return Err(lines.err("expected alpha granularity")),
    };
    let parts = lines.keyed("dropout")?;
    let (dropout_mode, dropout_rate) = match parts.as_slice() {
        [m, r] => (
            m.parse().map_err(|e: String| lines.err(e))?,
            r.parse::<f64>().map_err(|_| lines.err(format!("bad dropout rate `{r}`")))?,
        ),
        _ => return Err(lines.err("expected `dropout <mode> <rate>`")),
    };
    let parts = lines.keyed("layers")?;
    let count: usize = one(&lines, &parts, "layer count")?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let parts = lines.keyed("layer")?;
        let [i, o, a] = parts.as_slice() else {
            return Err(lines.err("expected `layer <in> <out> <activation>`"));
        };
        let input: usize = i.parse().map_err(|_| lines.err("bad layer input size"))?;
        let output: usize = o.parse().map_err(|_| lines.err("bad layer output size"))?;
        let activation = a.parse().map_err(|e: String| lines.err(e))?;
        let mut w = Vec::with_capacity(input * output);
        for _ in 0..output {
            w.extend(lines.values(input)?);
        }
        let b = lines.values(output)?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((output, input), w).expect("sized above"),
            bias: Array1::from(b),
            activation,
        });
    }
    let params = ModelParams {
        layers,
        dropout_rate,
        dropout_mode,
        head: Head { joints, alpha },
    };
    params.validate()?;
    Ok(params)
}
