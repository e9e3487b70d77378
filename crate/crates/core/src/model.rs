//! The model zoo: named layer recipes instantiated as trainable stacks.
//!
//! Every model maps a `[batch, 14, 1]` window to one scalar per sample.
//! Dense-only models flatten the window internally; recurrent and
//! convolutional models consume it as a sequence. Each recipe ends in a
//! linear Dense(1) head so the output is an unbounded regression value.

use crate::data::LOOKBACK;
use crate::error::{Error, Result};
use crate::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, lstm_backward, lstm_forward,
    rnn_backward, rnn_forward, Activation, Conv1dParams, ConvCache, DenseCache, DenseParams,
    LstmCache, LstmParams, RecurrentParams, RnnCache,
};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

/// The benchmark vocabulary, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelName {
    Fc1,
    Fc2,
    Rnn1,
    Rnn1Fc,
    Rnn2,
    Lstm1,
    Conv1,
    Conv1Fc,
}

impl ModelName {
    pub fn all() -> [ModelName; 8] {
        [
            ModelName::Fc1,
            ModelName::Fc2,
            ModelName::Rnn1,
            ModelName::Rnn1Fc,
            ModelName::Rnn2,
            ModelName::Lstm1,
            ModelName::Conv1,
            ModelName::Conv1Fc,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelName::Fc1 => "fc1",
            ModelName::Fc2 => "fc2",
            ModelName::Rnn1 => "rnn1",
            ModelName::Rnn1Fc => "rnn1fc",
            ModelName::Rnn2 => "rnn2",
            ModelName::Lstm1 => "lstm1",
            ModelName::Conv1 => "conv1",
            ModelName::Conv1Fc => "conv1fc",
        }
    }

    /// Models whose feature stage is recurrent (simple or gated).
    pub fn is_recurrent(&self) -> bool {
        matches!(
            self,
            ModelName::Rnn1 | ModelName::Rnn1Fc | ModelName::Rnn2 | ModelName::Lstm1
        )
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::all()
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ModelName::all().iter().map(|m| m.as_str()).collect();
                Error::Config(format!(
                    "unknown model '{s}' (expected one of: {})",
                    names.join(", ")
                ))
            })
    }
}

/// One step of a recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    Rnn { units: usize },
    Lstm { units: usize },
    Conv1d { filters: usize, width: usize },
    Flatten,
}

/// A named recipe plus the fixed input arity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: ModelName,
    pub layers: Vec<LayerSpec>,
    pub lookback: usize,
}

#[derive(Debug, Clone, Copy)]
enum StageShape {
    Seq { steps: usize, channels: usize },
    Flat { dim: usize },
}

impl ModelSpec {
    /// Recipe table. `conv1fc` mirrors `rnn1fc`: the conv feature extractor
    /// followed by a small dense layer before the head.
    pub fn for_name(name: ModelName) -> ModelSpec {
        use LayerSpec::*;
        let relu = Activation::Relu;
        let head = Dense {
            units: 1,
            activation: Activation::Linear,
        };
        let layers = match name {
            ModelName::Fc1 => vec![
                Dense {
                    units: 14,
                    activation: relu,
                },
                head,
            ],
            ModelName::Fc2 => vec![
                Dense {
                    units: 14,
                    activation: relu,
                },
                Dense {
                    units: 7,
                    activation: relu,
                },
                head,
            ],
            ModelName::Rnn1 => vec![Rnn { units: 4 }, head],
            ModelName::Rnn1Fc => vec![
                Rnn { units: 4 },
                Dense {
                    units: 4,
                    activation: relu,
                },
                head,
            ],
            ModelName::Rnn2 => vec![Rnn { units: 6 }, head],
            ModelName::Lstm1 => vec![Lstm { units: 6 }, head],
            ModelName::Conv1 => vec![Conv1d { filters: 4, width: 3 }, Flatten, head],
            ModelName::Conv1Fc => vec![
                Conv1d { filters: 4, width: 3 },
                Flatten,
                Dense {
                    units: 4,
                    activation: relu,
                },
                head,
            ],
        };
        ModelSpec {
            name,
            layers,
            lookback: LOOKBACK,
        }
    }

    /// True when the recipe consumes the window as a flat vector rather
    /// than a sequence.
    pub fn takes_flat_input(&self) -> bool {
        matches!(self.layers.first(), Some(LayerSpec::Dense { .. }) | None)
    }

    fn input_shape(&self) -> StageShape {
        if self.takes_flat_input() {
            StageShape::Flat { dim: self.lookback }
        } else {
            StageShape::Seq {
                steps: self.lookback,
                channels: 1,
            }
        }
    }

    /// Shape entering each layer (and, last, the output shape), or a config
    /// error when the recipe does not chain.
    fn stage_shapes(&self) -> Result<Vec<StageShape>> {
        let mut shapes = vec![self.input_shape()];
        for (idx, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (layer, cur) {
                (LayerSpec::Dense { units, .. }, StageShape::Flat { .. }) => {
                    StageShape::Flat { dim: *units }
                }
                (LayerSpec::Rnn { units }, StageShape::Seq { .. })
                | (LayerSpec::Lstm { units }, StageShape::Seq { .. }) => {
                    StageShape::Flat { dim: *units }
                }
                (LayerSpec::Conv1d { filters, width }, StageShape::Seq { steps, .. }) => {
                    if steps < *width {
                        return Err(Error::Config(format!(
                            "{}: conv width {width} exceeds sequence length {steps}",
                            self.name
                        )));
                    }
                    StageShape::Seq {
                        steps: steps - width + 1,
                        channels: *filters,
                    }
                }
                (LayerSpec::Flatten, StageShape::Seq { steps, channels }) => StageShape::Flat {
                    dim: steps * channels,
                },
                _ => {
                    return Err(Error::Config(format!(
                        "{}: layer {idx} does not fit the preceding stage",
                        self.name
                    )))
                }
            };
            shapes.push(next);
        }
        match shapes.last() {
            Some(StageShape::Flat { dim: 1 }) => Ok(shapes),
            _ => Err(Error::Config(format!(
                "{}: recipe does not end in a scalar head",
                self.name
            ))),
        }
    }

    /// Analytic parameter count from the recipe alone.
    pub fn param_count(&self) -> usize {
        let Ok(shapes) = self.stage_shapes() else {
            return 0;
        };
        let mut total = 0;
        for (layer, cur) in self.layers.iter().zip(shapes.iter()) {
            total += match (layer, *cur) {
                (LayerSpec::Dense { units, .. }, StageShape::Flat { dim }) => dim * units + units,
                (LayerSpec::Rnn { units }, StageShape::Seq { channels, .. }) => {
                    channels * units + units * units + units
                }
                (LayerSpec::Lstm { units }, StageShape::Seq { channels, .. }) => {
                    4 * (channels * units + units * units + units)
                }
                (LayerSpec::Conv1d { filters, width }, StageShape::Seq { channels, .. }) => {
                    filters * width * channels + filters
                }
                _ => 0,
            };
        }
        total
    }
}

/// Instantiated layer with owned parameters.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseParams),
    Rnn(RecurrentParams),
    Lstm(LstmParams),
    Conv1d(Conv1dParams),
    Flatten,
}

/// Per-layer caches from one [`Model::forward`] call.
pub enum LayerCache {
    Dense(DenseCache),
    Rnn(RnnCache),
    Lstm(LstmCache),
    Conv1d(ConvCache),
    Flatten { steps: usize, channels: usize },
}

/// An instantiated model: recipe, seed and layer stack.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    cell_activation: Activation,
    layers: Vec<Layer>,
}

/// Builds a model with seeded-deterministic weights and the default ReLU
/// cell activation for the gated recurrence.
pub fn build_model(name: ModelName, seed: u64) -> Result<Model> {
    build_model_with_cell(name, seed, Activation::Relu)
}

/// As [`build_model`], with the LSTM candidate/cell activation switched
/// (tanh is the conventional alternative).
pub fn build_model_with_cell(
    name: ModelName,
    seed: u64,
    cell_activation: Activation,
) -> Result<Model> {
    let spec = ModelSpec::for_name(name);
    let shapes = spec.stage_shapes()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (layer, cur) in spec.layers.iter().zip(shapes.iter()) {
        let built = match (layer, *cur) {
            (LayerSpec::Dense { units, activation }, StageShape::Flat { dim }) => {
                Layer::Dense(DenseParams::init(dim, *units, *activation, &mut rng))
            }
            (LayerSpec::Rnn { units }, StageShape::Seq { channels, .. }) => Layer::Rnn(
                RecurrentParams::init(channels, *units, Activation::Relu, &mut rng),
            ),
            (LayerSpec::Lstm { units }, StageShape::Seq { channels, .. }) => {
                Layer::Lstm(LstmParams::init(channels, *units, cell_activation, &mut rng))
            }
            (LayerSpec::Conv1d { filters, width }, StageShape::Seq { channels, .. }) => {
                Layer::Conv1d(Conv1dParams::init(
                    *filters,
                    *width,
                    channels,
                    Activation::Relu,
                    &mut rng,
                ))
            }
            (LayerSpec::Flatten, _) => Layer::Flatten,
            _ => unreachable!("stage_shapes validated the recipe"),
        };
        layers.push(built);
    }
    Ok(Model {
        spec,
        seed,
        cell_activation,
        layers,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> ModelName {
        self.spec.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cell_activation(&self) -> Activation {
        self.cell_activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameter tensors in canonical order: layer by layer, weights before
    /// biases, LSTM gates in input/forget/output/candidate order. Gradients
    /// from [`Model::backward`] align with this ordering.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(p) => out.extend([&p.w, &p.b]),
                Layer::Rnn(p) => out.extend([&p.wx, &p.wh, &p.b]),
                Layer::Lstm(p) => {
                    for g in p.gates() {
                        out.extend([&g.wx, &g.wh, &g.b]);
                    }
                }
                Layer::Conv1d(p) => out.extend([&p.kernels, &p.b]),
                Layer::Flatten => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(p) => out.extend([&mut p.w, &mut p.b]),
                Layer::Rnn(p) => out.extend([&mut p.wx, &mut p.wh, &mut p.b]),
                Layer::Lstm(p) => out.extend([
                    &mut p.input_gate.wx,
                    &mut p.input_gate.wh,
                    &mut p.input_gate.b,
                    &mut p.forget_gate.wx,
                    &mut p.forget_gate.wh,
                    &mut p.forget_gate.b,
                    &mut p.output_gate.wx,
                    &mut p.output_gate.wh,
                    &mut p.output_gate.b,
                    &mut p.candidate.wx,
                    &mut p.candidate.wh,
                    &mut p.candidate.b,
                ]),
                Layer::Conv1d(p) => out.extend([&mut p.kernels, &mut p.b]),
                Layer::Flatten => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Flattened copy of all parameters in canonical order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p.data());
        }
        out
    }

    /// Overwrites all parameters from a flat vector in canonical order.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} flat values vs {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.rank() != 3 || batch.shape()[1] != self.spec.lookback || batch.shape()[2] != 1 {
            return Err(Error::Shape(format!(
                "{} expects input [batch, {}, 1], got {:?}",
                self.spec.name,
                self.spec.lookback,
                batch.shape()
            )));
        }
        Ok(())
    }

    /// Runs the stack over a `[batch, lookback, 1]` window tensor and
    /// returns `[batch, 1]` predictions plus the caches for backward.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        self.check_input(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut value = if self.spec.takes_flat_input() {
            batch.flatten_batch()?
        } else {
            batch.clone()
        };
        for layer in &self.layers {
            value = match layer {
                Layer::Dense(p) => {
                    let (y, cache) = dense_forward(&value, p)?;
                    caches.push(LayerCache::Dense(cache));
                    y
                }
                Layer::Rnn(p) => {
                    let (y, cache) = rnn_forward(&value, p)?;
                    caches.push(LayerCache::Rnn(cache));
                    y
                }
                Layer::Lstm(p) => {
                    let (y, cache) = lstm_forward(&value, p)?;
                    caches.push(LayerCache::Lstm(cache));
                    y
                }
                Layer::Conv1d(p) => {
                    let (y, cache) = conv1d_forward(&value, p)?;
                    caches.push(LayerCache::Conv1d(cache));
                    y
                }
                Layer::Flatten => {
                    caches.push(LayerCache::Flatten {
                        steps: value.shape()[1],
                        channels: value.shape()[2],
                    });
                    value.flatten_batch()?
                }
            };
        }
        value.ensure_finite("model predictions")?;
        Ok((value, caches))
    }

    /// Predictions only.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward(batch)?.0)
    }

    /// Backpropagates `d_pred` (loss gradient in the predictions) through
    /// the cached stack. The returned gradient tensors align with
    /// [`Model::params`].
    pub fn backward(&self, caches: &[LayerCache], d_pred: &Tensor) -> Result<Vec<Tensor>> {
        if caches.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        // Collected back to front, reversed into canonical order at the end.
        let mut rev_grads: Vec<Tensor> = Vec::new();
        let mut grad = d_pred.clone();
        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            grad = match (layer, cache) {
                (Layer::Dense(p), LayerCache::Dense(c)) => {
                    let g = dense_backward(&grad, p, c)?;
                    rev_grads.extend([g.db, g.dw]);
                    g.dx
                }
                (Layer::Rnn(p), LayerCache::Rnn(c)) => {
                    let g = rnn_backward(&grad, p, c)?;
                    rev_grads.extend([g.db, g.dwh, g.dwx]);
                    g.dseq
                }
                (Layer::Lstm(p), LayerCache::Lstm(c)) => {
                    let g = lstm_backward(&grad, p, c)?;
                    for gate in g.gates.into_iter().rev() {
                        rev_grads.extend([gate.db, gate.dwh, gate.dwx]);
                    }
                    g.dseq
                }
                (Layer::Conv1d(p), LayerCache::Conv1d(c)) => {
                    let g = conv1d_backward(&grad, p, c)?;
                    rev_grads.extend([g.db, g.dkernels]);
                    g.dseq
                }
                (Layer::Flatten, LayerCache::Flatten { steps, channels }) => {
                    grad.unflatten_batch(*steps, *channels)?
                }
                _ => {
                    return Err(Error::Contract(
                        "cache kind does not match layer kind".into(),
                    ))
                }
            };
        }
        rev_grads.reverse();
        Ok(rev_grads)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    format: String,
    version: u32,
    name: String,
    seed: u64,
    cell_activation: String,
    layer_dims: Vec<Vec<usize>>,
    param_count: usize,
}

const WEIGHTS_FORMAT: &str = "forecast-weights";
const WEIGHTS_VERSION: u32 = 1;

/// Serializes trained weights: one JSON header line, then the parameters as
/// a little-endian f64 block in canonical order.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let header = WeightsHeader {
        format: WEIGHTS_FORMAT.to_string(),
        version: WEIGHTS_VERSION,
        name: model.name().to_string(),
        seed: model.seed(),
        cell_activation: match model.cell_activation() {
            Activation::Tanh => "tanh".to_string(),
            _ => "relu".to_string(),
        },
        layer_dims: model.params().iter().map(|p| p.shape().to_vec()).collect(),
        param_count: model.param_count(),
    };
    let mut file = std::fs::File::create(path)?;
    let header_json =
        serde_json::to_string(&header).map_err(|e| Error::Config(format!("weights header: {e}")))?;
    file.write_all(header_json.as_bytes())?;
    file.write_all(b"\n")?;
    for p in model.params() {
        for v in p.data() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads weights written by [`save_model`], rebuilding the recipe named in
/// the header and overwriting its parameters.
pub fn load_model(path: &Path) -> Result<Model> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    let header: WeightsHeader = serde_json::from_str(header_line.trim_end())
        .map_err(|e| Error::Config(format!("weights header: {e}")))?;
    if header.format != WEIGHTS_FORMAT {
        return Err(Error::Config(format!(
            "not a weights file (format '{}')",
            header.format
        )));
    }
    if header.version != WEIGHTS_VERSION {
        return Err(Error::Config(format!(
            "unsupported weights version {}",
            header.version
        )));
    }
    let name = ModelName::from_str(&header.name)?;
    let cell = match header.cell_activation.as_str() {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        other => {
            return Err(Error::Config(format!(
                "unknown cell activation '{other}' in weights header"
            )))
        }
    };
    let mut model = build_model_with_cell(name, header.seed, cell)?;
    let dims: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
    if dims != header.layer_dims || model.param_count() != header.param_count {
        return Err(Error::Config(
            "weights header does not match the named recipe".into(),
        ));
    }
    let mut flat = vec![0.0f64; header.param_count];
    let mut buf = [0u8; 8];
    for v in flat.iter_mut() {
        reader.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    if reader.read(&mut buf)? != 0 {
        return Err(Error::Config("trailing bytes after parameter block".into()));
    }
    model.set_flat_params(&flat)?;
    Ok(model)
}
