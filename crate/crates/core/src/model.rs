//! Dense networks, adversarial budgets, datasets, and their file formats.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{sum, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Arctan,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Arctan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Arctan => "arctan",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "arctan" => Ok(Activation::Arctan),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }

    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
            Activation::Arctan => x.atan(),
        }
    }

    /// σ′(x); ReLU takes the active branch at 0.
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => T::constant(if x.value() >= 0.0 { 1.0 } else { 0.0 }),
            Activation::Sigmoid => {
                let s = x.sigmoid();
                s * (T::constant(1.0) - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::constant(1.0) - t * t
            }
            Activation::Arctan => T::constant(1.0) / (x * x + 1.0),
        }
    }

    /// Largest slope attained, reached at the origin for the S-shaped kinds.
    pub fn max_slope(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            _ => 1.0,
        }
    }

    /// Upper bound on |σ″| (zero for ReLU away from the kink).
    pub(crate) fn curvature_bound(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            // max |s(1-s)(1-2s)| = 1/(6√3)
            Activation::Sigmoid => 0.0963,
            // max |2 tanh (1 - tanh²)| = 4/(3√3)
            Activation::Tanh => 0.7699,
            // max |2x/(1+x²)²| = 3√3/8
            Activation::Arctan => 0.6496,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Norm order of the adversarial ball. The dual order is derived, never stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl Norm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "2" | "l2" | "two" => Ok(Norm::Two),
            "inf" | "linf" | "infinity" => Ok(Norm::Inf),
            other => Err(Error::InvalidArgument(format!(
                "unknown norm `{other}` (expected 2 or inf)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::Two => "2",
            Norm::Inf => "inf",
        }
    }

    /// Dual exponent q with 1/p + 1/q = 1.
    pub fn dual_exponent(self) -> f64 {
        match self {
            Norm::Two => 2.0,
            Norm::Inf => 1.0,
        }
    }

    /// ‖v‖ in this norm.
    pub fn of<T: Real>(self, v: &[T]) -> T {
        lp_norm(v, self)
    }

    /// ‖v‖ in the dual norm.
    pub fn dual_of<T: Real>(self, v: &[T]) -> T {
        match self {
            Norm::Two => lp_norm(v, Norm::Two),
            Norm::Inf => sum(v.iter().map(|x| x.abs())),
        }
    }
}

fn lp_norm<T: Real>(v: &[T], norm: Norm) -> T {
    match norm {
        Norm::Two => {
            let sq = sum(v.iter().map(|&x| x * x));
            if sq.value() == 0.0 {
                T::zero()
            } else {
                sq.sqrt()
            }
        }
        Norm::Inf => v
            .iter()
            .map(|x| x.abs())
            .fold(T::zero(), |a, b| a.max_by_value(b)),
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub min: f64,
    pub max: f64,
}

impl InputBox {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidArgument(format!(
                "input box requires finite min < max, got [{min}, {max}]"
            )));
        }
        Ok(InputBox { min, max })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v >= self.min && v <= self.max)
    }
}

/// An lp ball of radius `epsilon`, optionally intersected with an axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialBudget {
    pub norm: Norm,
    pub epsilon: f64,
    pub bounds: Option<InputBox>,
}

impl AdversarialBudget {
    pub fn new(norm: Norm, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        Ok(AdversarialBudget {
            norm,
            epsilon,
            bounds: None,
        })
    }

    pub fn with_box(mut self, bounds: InputBox) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `n_out × n_in`, rows indexed by output neuron.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.weight
            .matvec(x)
            .into_iter()
            .zip(&self.bias)
            .map(|(a, &b)| a + b)
            .collect()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }
}

/// A stack of dense layers with one activation kind applied between them
/// (never after the last). Immutable once validated.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f64> {
    input_dim: usize,
    activation: Activation,
    layers: Vec<Dense<T>>,
}

pub type NeuralNetwork = Network<f64>;

impl<T: Real> Network<T> {
    pub fn new(input_dim: usize, activation: Activation, layers: Vec<Dense<T>>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            let n = i + 1;
            if layer.inputs() != width {
                return Err(Error::LayerShape {
                    layer: n,
                    detail: format!(
                        "weight has {} columns but the previous layer produces {}",
                        layer.inputs(),
                        width
                    ),
                });
            }
            if layer.outputs() == 0 {
                return Err(Error::LayerShape {
                    layer: n,
                    detail: "weight has no rows".into(),
                });
            }
            if layer.bias.len() != layer.outputs() {
                return Err(Error::LayerShape {
                    layer: n,
                    detail: format!(
                        "bias has {} entries but weight has {} rows",
                        layer.bias.len(),
                        layer.outputs()
                    ),
                });
            }
            if !layer.weight.all_finite() || !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: n });
            }
            width = layer.outputs();
        }
        Ok(Network {
            input_dim,
            activation,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Number of neuron layers, input and output included (one more than the
    /// number of affine maps).
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_lifted(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            h = if i == last {
                z
            } else {
                z.into_iter().map(|v| self.activation.apply(v)).collect()
            };
        }
        Ok(h)
    }

    /// Output logits.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<T>> {
        let lifted: Vec<T> = x.iter().map(|&v| T::constant(v)).collect();
        self.forward_lifted(&lifted)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Plain-`f64` copy of the parameters.
    pub fn values(&self) -> NeuralNetwork {
        Network {
            input_dim: self.input_dim,
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.values(),
                    bias: l.bias.iter().map(|v| v.value()).collect(),
                })
                .collect(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }
}

impl NeuralNetwork {
    /// Rebuilds the same architecture over another scalar type, one value per
    /// parameter in layer order (weights row-major, then bias).
    pub fn map_parameters<U: Real>(&self, mut f: impl FnMut(f64) -> U) -> Network<U> {
        Network {
            input_dim: self.input_dim,
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let w: Vec<U> = l.weight.as_slice().iter().map(|&v| f(v)).collect();
                    Dense {
                        weight: Matrix::from_vec(l.weight.rows(), l.weight.cols(), w),
                        bias: l.bias.iter().map(|&v| f(v)).collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn lift<U: Real>(&self) -> Network<U> {
        self.map_parameters(U::constant)
    }

    /// Parameters flattened in the same order as [`Self::map_parameters`].
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn with_parameters(&self, params: &[f64]) -> NeuralNetwork {
        assert_eq!(params.len(), self.num_parameters());
        let mut it = params.iter().copied();
        self.map_parameters(|_| it.next().unwrap())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if v.value() > logits[best].value() {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    input_dim: usize,
    activation: String,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// Parses the JSON model schema. Weights are row-major, one row per output neuron.
pub fn parse_model(text: &str) -> Result<NeuralNetwork> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let activation = Activation::parse(&file.activation)?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        let cols = l.weight.first().map_or(0, Vec::len);
        if let Some(r) = l.weight.iter().position(|r| r.len() != cols) {
            return Err(Error::LayerShape {
                layer: i + 1,
                detail: format!("weight row {} has {} entries, expected {cols}", r, l.weight[r].len()),
            });
        }
        layers.push(Dense {
            weight: Matrix::from_rows(&l.weight),
            bias: l.bias,
        });
    }
    Network::new(file.input_dim, activation, layers)
}

pub fn model_to_json(net: &NeuralNetwork) -> String {
    let file = ModelFile {
        input_dim: net.input_dim,
        activation: net.activation.name().to_string(),
        layers: net
            .layers
            .iter()
            .map(|l| LayerFile {
                weight: l.weight.row_vecs(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NeuralNetwork> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

/// Writes the JSON model file. Floats use the shortest representation that
/// reads back to the identical bit pattern.
pub fn save_model(net: &NeuralNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(net)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    /// Checks feature widths, label range and (when given) box membership.
    pub fn validate(&self, input_dim: usize, classes: usize, bounds: Option<InputBox>) -> Result<()> {
        for (row, (x, y)) in self.iter().enumerate() {
            if x.len() != input_dim {
                return Err(Error::Dataset {
                    row,
                    detail: format!("{} features, model expects {input_dim}", x.len()),
                });
            }
            if y >= classes {
                return Err(Error::Dataset {
                    row,
                    detail: format!("label {y} out of range for {classes} classes"),
                });
            }
            if let Some(b) = bounds {
                if !b.contains(x) {
                    return Err(Error::Dataset {
                        row,
                        detail: format!("features outside the input box [{}, {}]", b.min, b.max),
                    });
                }
            }
        }
        Ok(())
    }
}

/// CSV: label in the first column, features after. A header row is detected
/// by a non-numeric first cell.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Dataset {
            row,
            detail: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let first = record.get(0).unwrap_or("");
        if row == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        let label = first.parse::<usize>().map_err(|_| Error::Dataset {
            row,
            detail: format!("label `{first}` is not a class index"),
        })?;
        let features = record
            .iter()
            .skip(1)
            .map(|c| {
                c.parse::<f64>().map_err(|_| Error::Dataset {
                    row,
                    detail: format!("feature `{c}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        labels.push(label);
        inputs.push(features);
    }
    Dataset::new(inputs, labels)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    for (x, y) in data.iter() {
        out.push_str(&y.to_string());
        for v in x {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_csv(data)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
