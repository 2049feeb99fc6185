//! Single-hidden-layer feed-forward network mapping
//! `(v_ref, v_c, i_l)` to a switch decision.
//!
//! ```text
//! h_j = act_h( sum_m w1[j][m]·x_m + b1[j] )
//! y   = act_o( sum_j w2[j]·h_j + b2 )
//! ```
//!
//! Inputs are min-max scaled per feature before the first layer; the scaling
//! travels with the model file.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::plant::SwitchState;

pub const INPUT_DIM: usize = 3;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    BinaryStep,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            // undefined at zero in the usual table; zero chosen here
            Activation::BinaryStep => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the activation output `y = apply(x)`.
    /// `None` for the non-smooth activations.
    pub fn derivative_from_output(self, y: f64) -> Option<f64> {
        match self {
            Activation::Sigmoid => Some(y * (1.0 - y)),
            Activation::Tanh => Some(1.0 - y * y),
            Activation::Relu | Activation::BinaryStep => None,
        }
    }

    pub fn is_smooth(self) -> bool {
        matches!(self, Activation::Sigmoid | Activation::Tanh)
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::BinaryStep => "binary_step",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "binary_step" => Ok(Activation::BinaryStep),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

pub fn activate(a: Activation, x: f64) -> f64 {
    a.apply(x)
}

/// The three controller inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector {
    pub v_ref: f64,
    pub v_c: f64,
    pub i_l: f64,
}

impl FeatureVector {
    pub fn new(v_ref: f64, v_c: f64, i_l: f64) -> Self {
        Self { v_ref, v_c, i_l }
    }

    pub fn as_array(&self) -> [f64; INPUT_DIM] {
        [self.v_ref, self.v_c, self.i_l]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }
}

/// Per-feature affine map `x_scaled = (x - offset) * gain`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputScale {
    pub offset: [f64; INPUT_DIM],
    pub gain: [f64; INPUT_DIM],
}

impl Default for InputScale {
    fn default() -> Self {
        Self {
            offset: [0.0; INPUT_DIM],
            gain: [1.0; INPUT_DIM],
        }
    }
}

impl InputScale {
    /// Min-max scaling onto `[-1, 1]`. A constant feature maps to zero.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut lo = [f64::INFINITY; INPUT_DIM];
        let mut hi = [f64::NEG_INFINITY; INPUT_DIM];
        for f in features {
            for (m, x) in f.as_array().into_iter().enumerate() {
                lo[m] = lo[m].min(x);
                hi[m] = hi[m].max(x);
            }
        }
        let mut scale = Self::default();
        for m in 0..INPUT_DIM {
            if !lo[m].is_finite() || !hi[m].is_finite() {
                continue;
            }
            scale.offset[m] = 0.5 * (lo[m] + hi[m]);
            let span = hi[m] - lo[m];
            scale.gain[m] = if span > 0.0 { 2.0 / span } else { 1.0 };
        }
        scale
    }

    pub fn apply(&self, f: &FeatureVector) -> [f64; INPUT_DIM] {
        let raw = f.as_array();
        std::array::from_fn(|m| (raw[m] - self.offset[m]) * self.gain[m])
    }
}

/// Network parameters. The flat parameter order used by training is
/// hidden weights (row-major, one row per hidden unit), hidden biases,
/// output weights, output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden_weights: Vec<[f64; INPUT_DIM]>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub input_scale: InputScale,
}

impl Mlp {
    /// All-zero network with the default tanh/sigmoid pairing.
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            hidden_weights: vec![[0.0; INPUT_DIM]; hidden_dim],
            hidden_biases: vec![0.0; hidden_dim],
            output_weights: vec![0.0; hidden_dim],
            output_bias: 0.0,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Sigmoid,
            input_scale: InputScale::default(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_biases.len()
    }

    pub fn param_count(&self) -> usize {
        param_count(self.hidden_dim())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for row in &self.hidden_weights {
            p.extend_from_slice(row);
        }
        p.extend_from_slice(&self.hidden_biases);
        p.extend_from_slice(&self.output_weights);
        p.push(self.output_bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let j = self.hidden_dim();
        let mut it = p.iter().copied();
        for row in &mut self.hidden_weights {
            for w in row.iter_mut() {
                *w = it.next().unwrap();
            }
        }
        for b in &mut self.hidden_biases {
            *b = it.next().unwrap();
        }
        for w in &mut self.output_weights {
            *w = it.next().unwrap();
        }
        self.output_bias = it.next().unwrap();
        debug_assert_eq!(j, self.hidden_dim());
    }

    pub fn forward(&self, f: &FeatureVector) -> f64 {
        self.forward_scaled(&self.input_scale.apply(f))
    }

    pub fn forward_scaled(&self, x: &[f64; INPUT_DIM]) -> f64 {
        let mut acc = self.output_bias;
        for ((row, b), w2) in self
            .hidden_weights
            .iter()
            .zip(&self.hidden_biases)
            .zip(&self.output_weights)
        {
            let z = b + row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
            acc += w2 * self.hidden_activation.apply(z);
        }
        self.output_activation.apply(acc)
    }

    /// Output and its gradient with respect to every parameter (flat order).
    /// Requires smooth activations.
    pub fn forward_with_gradient(&self, x: &[f64; INPUT_DIM], grad: &mut [f64]) -> f64 {
        let jdim = self.hidden_dim();
        debug_assert_eq!(grad.len(), self.param_count());
        let mut hidden = [0.0f64; 64];
        let mut hidden_vec;
        let h: &mut [f64] = if jdim <= hidden.len() {
            &mut hidden[..jdim]
        } else {
            hidden_vec = vec![0.0; jdim];
            &mut hidden_vec
        };
        let mut acc = self.output_bias;
        for j in 0..jdim {
            let row = &self.hidden_weights[j];
            let z = self.hidden_biases[j] + row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
            h[j] = self.hidden_activation.apply(z);
            acc += self.output_weights[j] * h[j];
        }
        let y = self.output_activation.apply(acc);
        let dy = self
            .output_activation
            .derivative_from_output(y)
            .expect("smooth output activation");
        let (w1, rest) = grad.split_at_mut(jdim * INPUT_DIM);
        let (b1, rest) = rest.split_at_mut(jdim);
        let (w2, b2) = rest.split_at_mut(jdim);
        for j in 0..jdim {
            let dh = self
                .hidden_activation
                .derivative_from_output(h[j])
                .expect("smooth hidden activation");
            let back = dy * self.output_weights[j] * dh;
            w1[j * INPUT_DIM] = back * x[0];
            w1[j * INPUT_DIM + 1] = back * x[1];
            w1[j * INPUT_DIM + 2] = back * x[2];
            b1[j] = back;
            w2[j] = dy * h[j];
        }
        b2[0] = dy;
        y
    }

    /// Switch on when the output reaches one half.
    pub fn classify(&self, f: &FeatureVector) -> SwitchState {
        if self.forward(f) >= 0.5 {
            SwitchState::On
        } else {
            SwitchState::Off
        }
    }

    pub fn validate(&self) -> Result<(), ModelFileError> {
        let j = self.hidden_dim();
        if self.hidden_weights.len() != j || self.output_weights.len() != j {
            return Err(ModelFileError::DimensionMismatch(format!(
                "hidden_dim {j} but {} weight rows and {} output weights",
                self.hidden_weights.len(),
                self.output_weights.len()
            )));
        }
        if let Some(m) = self.input_scale.gain.iter().position(|g| *g == 0.0 || !g.is_finite()) {
            return Err(ModelFileError::NonFinite(format!("input_gain[{m}]")));
        }
        if self.input_scale.offset.iter().any(|o| !o.is_finite()) {
            return Err(ModelFileError::NonFinite("input_offset".into()));
        }
        if let Some(k) = self.params().iter().position(|p| !p.is_finite()) {
            return Err(ModelFileError::NonFinite(format!("parameter #{k}")));
        }
        Ok(())
    }
}

pub fn param_count(hidden_dim: usize) -> usize {
    hidden_dim * (INPUT_DIM + 1) + hidden_dim + 1
}

pub fn forward(net: &Mlp, f: &FeatureVector) -> f64 {
    net.forward(f)
}

pub fn classify(net: &Mlp, f: &FeatureVector) -> SwitchState {
    net.classify(f)
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelFileError {
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

const MAGIC: &str = "boost-imitator-mlp";

fn push_row(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        // Display for f64 is the shortest representation that parses back exactly
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
}

/// Serialize to the versioned text format.
pub fn save_model(net: &Mlp) -> String {
    let mut out = String::new();
    writeln!(out, "format {MAGIC}").unwrap();
    writeln!(out, "version {MODEL_FORMAT_VERSION}").unwrap();
    writeln!(out, "input_dim {INPUT_DIM}").unwrap();
    writeln!(out, "hidden_dim {}", net.hidden_dim()).unwrap();
    writeln!(out, "hidden_activation {}", net.hidden_activation).unwrap();
    writeln!(out, "output_activation {}", net.output_activation).unwrap();
    push_row(&mut out, "input_offset", &net.input_scale.offset);
    push_row(&mut out, "input_gain", &net.input_scale.gain);
    writeln!(out, "hidden_weights").unwrap();
    for row in &net.hidden_weights {
        let mut line = String::new();
        for (k, w) in row.iter().enumerate() {
            if k > 0 {
                line.push(' ');
            }
            write!(line, "{w}").unwrap();
        }
        writeln!(out, "{line}").unwrap();
    }
    push_row(&mut out, "hidden_biases", &net.hidden_biases);
    push_row(&mut out, "output_weights", &net.output_weights);
    push_row(&mut out, "output_bias", &[net.output_bias]);
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (idx, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Some((idx + 1, line));
        }
        None
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), ModelFileError> {
        let (line, text) = self
            .next_content()
            .ok_or_else(|| ModelFileError::DimensionMismatch(format!("file ends before `{key}`")))?;
        let mut tokens = text.split_whitespace();
        match tokens.next() {
            Some(k) if k == key => Ok((line, tokens.collect())),
            Some(k) => Err(ModelFileError::Syntax {
                line,
                msg: format!("expected `{key}`, found `{k}`"),
            }),
            None => unreachable!(),
        }
    }
}

fn parse_floats(line: usize, field: &str, tokens: &[&str], expected: usize) -> Result<Vec<f64>, ModelFileError> {
    if tokens.len() != expected {
        return Err(ModelFileError::DimensionMismatch(format!(
            "line {line}: `{field}` has {} values, expected {expected}",
            tokens.len()
        )));
    }
    tokens
        .iter()
        .map(|t| {
            let v: f64 = t.parse().map_err(|_| ModelFileError::Syntax {
                line,
                msg: format!("`{t}` is not a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ModelFileError::NonFinite(format!("{field} (line {line})")))
            }
        })
        .collect()
}

fn single<'a>(line: usize, key: &str, tokens: &[&'a str]) -> Result<&'a str, ModelFileError> {
    match tokens {
        [one] => Ok(one),
        _ => Err(ModelFileError::Syntax {
            line,
            msg: format!("`{key}` takes exactly one value"),
        }),
    }
}

pub fn load_model(text: &str) -> Result<Mlp, ModelFileError> {
    let mut lines = Lines {
        inner: text.lines().enumerate().peekable(),
    };
    let (line, t) = lines.keyed("format")?;
    if single(line, "format", &t)? != MAGIC {
        return Err(ModelFileError::Syntax {
            line,
            msg: format!("not a {MAGIC} file"),
        });
    }
    let (line, t) = lines.keyed("version")?;
    let version = single(line, "version", &t)?;
    if version.parse::<u32>().ok() != Some(MODEL_FORMAT_VERSION) {
        return Err(ModelFileError::VersionMismatch {
            found: version.to_string(),
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let (line, t) = lines.keyed("input_dim")?;
    let input_dim: usize = single(line, "input_dim", &t)?
        .parse()
        .map_err(|_| ModelFileError::Syntax {
            line,
            msg: "input_dim is not an integer".into(),
        })?;
    if input_dim != INPUT_DIM {
        return Err(ModelFileError::DimensionMismatch(format!(
            "input_dim {input_dim}, expected {INPUT_DIM}"
        )));
    }
    let (line, t) = lines.keyed("hidden_dim")?;
    let hidden_dim: usize = single(line, "hidden_dim", &t)?
        .parse()
        .map_err(|_| ModelFileError::Syntax {
            line,
            msg: "hidden_dim is not an integer".into(),
        })?;
    if hidden_dim == 0 {
        return Err(ModelFileError::DimensionMismatch("hidden_dim is zero".into()));
    }
    let mut activation = |key: &str| -> Result<Activation, ModelFileError> {
        let (line, t) = lines.keyed(key)?;
        single(line, key, &t)?
            .parse()
            .map_err(|msg| ModelFileError::Syntax { line, msg })
    };
    let hidden_activation = activation("hidden_activation")?;
    let output_activation = activation("output_activation")?;

    let mut fixed = |key: &str, n: usize| -> Result<Vec<f64>, ModelFileError> {
        let (line, t) = lines.keyed(key)?;
        parse_floats(line, key, &t, n)
    };
    let offset = fixed("input_offset", INPUT_DIM)?;
    let gain = fixed("input_gain", INPUT_DIM)?;

    lines.keyed("hidden_weights")?;
    let mut hidden_weights = Vec::with_capacity(hidden_dim);
    for j in 0..hidden_dim {
        let (line, text) = lines.next_content().ok_or_else(|| {
            ModelFileError::DimensionMismatch(format!("hidden_weights has {j} rows, expected {hidden_dim}"))
        })?;
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.first().is_some_and(|t| t.parse::<f64>().is_err()) {
            return Err(ModelFileError::DimensionMismatch(format!(
                "hidden_weights has {j} rows, expected {hidden_dim}"
            )));
        }
        let row = parse_floats(line, "hidden_weights", &tokens, INPUT_DIM)?;
        hidden_weights.push([row[0], row[1], row[2]]);
    }
    let mut fixed = |key: &str, n: usize| -> Result<Vec<f64>, ModelFileError> {
        let (line, t) = lines.keyed(key)?;
        parse_floats(line, key, &t, n)
    };
    let hidden_biases = fixed("hidden_biases", hidden_dim)?;
    let output_weights = fixed("output_weights", hidden_dim)?;
    let output_bias = fixed("output_bias", 1)?[0];
    if let Some((line, _)) = lines.next_content() {
        return Err(ModelFileError::Syntax {
            line,
            msg: "unexpected trailing content".into(),
        });
    }

    let net = Mlp {
        hidden_weights,
        hidden_biases,
        output_weights,
        output_bias,
        hidden_activation,
        output_activation,
        input_scale: InputScale {
            offset: [offset[0], offset[1], offset[2]],
            gain: [gain[0], gain[1], gain[2]],
        },
    };
    net.validate()?;
    Ok(net)
}

pub fn write_model_file(net: &Mlp, path: &Path) -> crate::Result<()> {
    std::fs::write(path, save_model(net)).map_err(|e| crate::Error::io(path, e))
}

pub fn read_model_file(path: &Path) -> crate::Result<Mlp> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(load_model(&text)?)
}
