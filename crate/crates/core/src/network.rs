//! Fully connected network with neuron-wise locally adaptive tanh activations.
//!
//! Hidden layer `d` maps `h -> tanh(n * a^d ⊙ (W^d h + b^d))`, where `a^d`
//! holds one trainable slope per neuron and `n` is a fixed scale factor.
//! The output layer is affine. Inputs are `(x, t)`, optionally mapped
//! affinely onto `[-1, 1]^2` first; outputs are `(u, v, L)`.

use std::fs;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffValue, Tape};

pub const INPUT_WIDTH: usize = 2;
pub const OUTPUT_WIDTH: usize = 3;
/// Default activation scale factor `n`.
pub const DEFAULT_SCALE: f64 = 10.0;
/// Initial slope; `n * a = 1` with the default scale.
pub const INITIAL_SLOPE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("architecture needs at least one hidden layer, got widths {0:?}")]
    NoHiddenLayer(Vec<usize>),
    #[error("architecture must map 2 inputs to 3 outputs, got widths {0:?}")]
    BadEnds(Vec<usize>),
    #[error("layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("scale factor must exceed 1, got {0}")]
    BadScale(f64),
    #[error("flat parameter vector has length {got}, expected {expected}")]
    FlatLength { expected: usize, got: usize },
    #[error("non-finite activation input in layer {layer}")]
    NonFinite { layer: usize },
    #[error("input map needs finite centers and positive gains, got {0}")]
    InputMap(String),
    #[error("checkpoint is inconsistent: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Fixed affine map `(x, t) -> (g_x (x - c_x), g_t (t - c_t))` applied
/// before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub center: [f64; 2],
    pub gain: [f64; 2],
}

impl Default for InputMap {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            gain: [1.0, 1.0],
        }
    }
}

impl InputMap {
    /// Sends the box `[x_lo, x_hi] x [t_lo, t_hi]` onto `[-1, 1]^2`.
    pub fn unit_box(x: (f64, f64), t: (f64, f64)) -> Self {
        Self {
            center: [0.5 * (x.0 + x.1), 0.5 * (t.0 + t.1)],
            gain: [2.0 / (x.1 - x.0), 2.0 / (t.1 - t.0)],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, x: f64, t: f64) -> [f64; 2] {
        [
            self.gain[0] * (x - self.center[0]),
            self.gain[1] * (t - self.center[1]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    widths: Vec<usize>,
    #[serde(default)]
    activation: Activation,
    #[serde(default)]
    input_map: InputMap,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self, NetworkError> {
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(NetworkError::ZeroWidth(pos));
        }
        if widths.len() < 3 {
            return Err(NetworkError::NoHiddenLayer(widths));
        }
        if widths[0] != INPUT_WIDTH || widths[widths.len() - 1] != OUTPUT_WIDTH {
            return Err(NetworkError::BadEnds(widths));
        }
        Ok(Self {
            widths,
            activation: Activation::Tanh,
            input_map: InputMap::default(),
        })
    }

    pub fn with_input_map(mut self, map: InputMap) -> Result<Self, NetworkError> {
        let ok = map.center.iter().chain(&map.gain).all(|v| v.is_finite())
            && map.gain.iter().all(|&g| g > 0.0);
        if !ok {
            return Err(NetworkError::InputMap(format!("{map:?}")));
        }
        self.input_map = map;
        Ok(self)
    }

    pub fn input_map(&self) -> InputMap {
        self.input_map
    }

    /// `depth` hidden layers of `width` neurons each.
    pub fn uniform(depth: usize, width: usize) -> Result<Self, NetworkError> {
        let mut widths = vec![INPUT_WIDTH];
        widths.extend(std::iter::repeat(width).take(depth));
        widths.push(OUTPUT_WIDTH);
        Self::new(widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of affine layers, i.e. the depth `D`.
    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_hidden(&self) -> usize {
        self.widths.len() - 2
    }

    /// Flat-vector length: all weights, biases and slopes.
    pub fn n_params(&self) -> usize {
        (0..self.n_layers())
            .map(|d| {
                let (fan_in, fan_out) = (self.widths[d], self.widths[d + 1]);
                let slopes = if d + 1 < self.n_layers() { fan_out } else { 0 };
                fan_in * fan_out + fan_out + slopes
            })
            .sum()
    }

    /// Index ranges of each layer's blocks inside the flat vector.
    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        (0..self.n_layers())
            .map(|d| {
                let (fan_in, fan_out) = (self.widths[d], self.widths[d + 1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                let slopes = if d + 1 < self.n_layers() {
                    Some(bias.end..bias.end + fan_out)
                } else {
                    None
                };
                offset = slopes.as_ref().map_or(bias.end, |s| s.end);
                LayerLayout {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                    slopes,
                }
            })
            .collect()
    }

    /// Flat indices of every weight-matrix entry, layer by layer.
    pub fn weight_indices(&self) -> Vec<usize> {
        self.layout().into_iter().flat_map(|l| l.weights).collect()
    }
}

/// Position of one layer's parameters in the flat vector. Weights are
/// stored row-major as `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub slopes: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Per-neuron slopes `a^d`; `None` for the output layer.
    pub slopes: Option<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    layers: Vec<Layer>,
    scale: f64,
}

impl NetworkParams {
    pub fn from_layers(
        arch: Architecture,
        layers: Vec<Layer>,
        scale: f64,
    ) -> Result<Self, NetworkError> {
        if !(scale > 1.0) {
            return Err(NetworkError::BadScale(scale));
        }
        if layers.len() != arch.n_layers() {
            return Err(NetworkError::Checkpoint(format!(
                "{} layers for a depth-{} architecture",
                layers.len(),
                arch.n_layers()
            )));
        }
        for (d, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (arch.widths[d], arch.widths[d + 1]);
            let hidden = d + 1 < arch.n_layers();
            let ok = layer.weights.dim() == (fan_out, fan_in)
                && layer.bias.len() == fan_out
                && match &layer.slopes {
                    Some(a) => hidden && a.len() == fan_out,
                    None => !hidden,
                };
            if !ok {
                return Err(NetworkError::Checkpoint(format!(
                    "layer {d} does not match widths {fan_in}->{fan_out}"
                )));
            }
        }
        Ok(Self {
            arch,
            layers,
            scale,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Multiplies every slope by `c` and divides the scale by `c`; the
    /// network function is unchanged.
    pub fn rescale_slopes(&mut self, c: f64) -> Result<(), NetworkError> {
        let scale = self.scale / c;
        if !(scale > 1.0) {
            return Err(NetworkError::BadScale(scale));
        }
        for layer in &mut self.layers {
            if let Some(a) = &mut layer.slopes {
                a.mapv_inplace(|v| v * c);
            }
        }
        self.scale = scale;
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.arch.n_params());
        for layer in &self.layers {
            flat.extend(layer.weights.iter());
            flat.extend(layer.bias.iter());
            if let Some(a) = &layer.slopes {
                flat.extend(a.iter());
            }
        }
        flat
    }

    pub fn from_flat(arch: &Architecture, scale: f64, flat: &[f64]) -> Result<Self, NetworkError> {
        if flat.len() != arch.n_params() {
            return Err(NetworkError::FlatLength {
                expected: arch.n_params(),
                got: flat.len(),
            });
        }
        let layers = arch
            .layout()
            .into_iter()
            .map(|l| Layer {
                weights: Array2::from_shape_vec((l.fan_out, l.fan_in), flat[l.weights].to_vec())
                    .expect("layout sizes match"),
                bias: Array1::from(flat[l.bias].to_vec()),
                slopes: l.slopes.map(|r| Array1::from(flat[r].to_vec())),
            })
            .collect();
        Self::from_layers(arch.clone(), layers, scale)
    }

    /// Plain `f64` evaluation at one point.
    pub fn eval(&self, x: f64, t: f64) -> [f64; 3] {
        let mut h = self.arch.input_map.apply(x, t).to_vec();
        for layer in &self.layers {
            let mut z = layer.weights.dot(&Array1::from(h)) + &layer.bias;
            if let Some(a) = &layer.slopes {
                z.zip_mut_with(a, |zi, ai| *zi = (self.scale * ai * *zi).tanh());
            }
            h = z.to_vec();
        }
        [h[0], h[1], h[2]]
    }

    pub fn save_checkpoint(
        &self,
        path: &Path,
        seed: Option<u64>,
        lambdas: Option<[f64; 2]>,
    ) -> Result<(), NetworkError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            widths: self.arch.widths.clone(),
            activation: self.arch.activation,
            input_map: self.arch.input_map,
            scale: self.scale,
            seed,
            lambdas,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                    slopes: l.slopes.as_ref().map(|a| a.to_vec()),
                })
                .collect(),
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(&ckpt)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, Checkpoint), NetworkError> {
        let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NetworkError::Checkpoint(format!(
                "unknown format tag {:?}",
                ckpt.format
            )));
        }
        let arch = Architecture::new(ckpt.widths.clone())?.with_input_map(ckpt.input_map)?;
        let layers = ckpt
            .layers
            .iter()
            .map(|l| {
                let rows = l.weights.len();
                let cols = l.weights.first().map_or(0, Vec::len);
                let flat: Vec<f64> = l.weights.iter().flatten().copied().collect();
                Ok(Layer {
                    weights: Array2::from_shape_vec((rows, cols), flat)
                        .map_err(|e| NetworkError::Checkpoint(e.to_string()))?,
                    bias: Array1::from(l.bias.clone()),
                    slopes: l.slopes.clone().map(Array1::from),
                })
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        Ok((Self::from_layers(arch, layers, ckpt.scale)?, ckpt))
    }
}

pub const CHECKPOINT_FORMAT: &str = "yo-pinn-checkpoint-v1";

/// JSON checkpoint layout. Weight matrices are lists of rows
/// (`fan_out` rows of `fan_in` entries).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub input_map: InputMap,
    pub scale: f64,
    pub seed: Option<u64>,
    pub lambdas: Option<[f64; 2]>,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub slopes: Option<Vec<f64>>,
}

/// Glorot-normal weights, zero biases and all slopes at 0.1 with `n = 10`.
pub fn init_xavier(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = arch.n_layers();
    let layers = (0..n_layers)
        .map(|d| {
            let (fan_in, fan_out) = (arch.widths[d], arch.widths[d + 1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            Layer {
                weights: Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(&mut rng)),
                bias: Array1::zeros(fan_out),
                slopes: (d + 1 < n_layers).then(|| Array1::from_elem(fan_out, INITIAL_SLOPE)),
            }
        })
        .collect();
    NetworkParams::from_layers(arch.clone(), layers, DEFAULT_SCALE).expect("consistent by construction")
}

/// Network parameters registered as leaves on a tape.
pub struct ParamVars<'t> {
    layers: Vec<LayerVars<'t>>,
    scale: f64,
    input_map: InputMap,
}

struct LayerVars<'t> {
    fan_in: usize,
    weights: Vec<DiffValue<'t>>,
    bias: Vec<DiffValue<'t>>,
    slopes: Option<Vec<DiffValue<'t>>>,
}

impl<'t> ParamVars<'t> {
    pub fn new(tape: &'t Tape, params: &NetworkParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerVars {
                fan_in: l.weights.ncols(),
                weights: l.weights.iter().map(|&w| tape.var(w)).collect(),
                bias: l.bias.iter().map(|&b| tape.var(b)).collect(),
                slopes: l
                    .slopes
                    .as_ref()
                    .map(|a| a.iter().map(|&v| tape.var(v)).collect()),
            })
            .collect();
        Self {
            layers,
            scale: params.scale,
            input_map: params.arch.input_map,
        }
    }

    /// All parameters in flat-vector order.
    pub fn flat(&self) -> Vec<DiffValue<'t>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(&l.weights);
            out.extend(&l.bias);
            if let Some(a) = &l.slopes {
                out.extend(a);
            }
        }
        out
    }

    pub fn weights(&self) -> impl Iterator<Item = &DiffValue<'t>> {
        self.layers.iter().flat_map(|l| l.weights.iter())
    }

    /// Slope vectors of the hidden layers.
    pub fn slopes(&self) -> impl Iterator<Item = &[DiffValue<'t>]> {
        self.layers.iter().filter_map(|l| l.slopes.as_deref())
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Network output `(u, v, L)` at `(x, t)`, recorded on the tape.
pub fn forward<'t>(
    params: &ParamVars<'t>,
    x: DiffValue<'t>,
    t: DiffValue<'t>,
) -> Result<[DiffValue<'t>; 3], NetworkError> {
    let map = params.input_map;
    let mut h = if map.is_identity() {
        vec![x, t]
    } else {
        vec![
            x.shift(-map.center[0]).scale(map.gain[0]),
            t.shift(-map.center[1]).scale(map.gain[1]),
        ]
    };
    for (d, layer) in params.layers.iter().enumerate() {
        let next: Vec<DiffValue<'t>> = layer
            .bias
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let row = &layer.weights[i * layer.fan_in..(i + 1) * layer.fan_in];
                row.iter().zip(&h).fold(b, |acc, (&w, &hj)| acc + w * hj)
            })
            .collect();
        h = match &layer.slopes {
            Some(slopes) => next
                .into_iter()
                .zip(slopes)
                .map(|(z, &a)| {
                    let s = a.scale(params.scale) * z;
                    if !s.value().is_finite() {
                        return Err(NetworkError::NonFinite { layer: d + 1 });
                    }
                    Ok(s.tanh())
                })
                .collect::<Result<_, _>>()?,
            None => next,
        };
    }
    Ok([h[0], h[1], h[2]])
}
