//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Weights are stored row-major with shape `(fan_out, fan_in)`; a layer maps
//! `x -> act(W x + b)`. Batched entry points take inputs as `(batch, input_dim)`
//! matrices and are what the simulator uses; the per-sample `forward` and
//! `backward` are thin wrappers over a one-row batch.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y = act(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Linear => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            3 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Layer structure of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths,
            output_dim,
            activation: Activation::Tanh,
            output_activation: Activation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer == self.hidden_widths.len() {
            self.output_activation
        } else {
            self.activation
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// Shape `(fan_out, fan_in)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Network parameters together with the structure they realize.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    version: u64,
}

/// Post-activation outputs of every layer for one batch; index 0 is the input.
#[derive(Clone, Debug)]
pub struct BatchCache {
    activations: Vec<Array2<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("cache holds the input").view()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                Layer {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            version: 0,
        })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| Layer {
                weight: Array2::zeros((fan_out, fan_in)),
                bias: Array1::zeros(fan_out),
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            version: 0,
        })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::shape("layer count", dims.len(), layers.len()));
        }
        for (&(fan_in, fan_out), layer) in dims.iter().zip(&layers) {
            if layer.weight.dim() != (fan_out, fan_in) {
                return Err(Error::shape(
                    "layer weight",
                    fan_in * fan_out,
                    layer.weight.len(),
                ));
            }
            if layer.bias.len() != fan_out {
                return Err(Error::shape("layer bias", fan_out, layer.bias.len()));
            }
        }
        Ok(Self {
            spec,
            layers,
            version: 0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.spec.clone()).expect("spec already validated")
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Number of optimizer updates applied to these parameters.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Multiply every weight and bias by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weight *= factor;
            layer.bias *= factor;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::shape("network input", self.input_dim(), x.len()))?;
        let cache = self.forward_batch(input)?;
        Ok(cache.output().row(0).to_vec())
    }

    /// Gradients of `<upstream, forward(x)>` with respect to every parameter
    /// and to the input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Mlp, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape(
                "network upstream",
                self.output_dim(),
                upstream.len(),
            ));
        }
        let input = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::shape("network input", self.input_dim(), x.len()))?;
        let cache = self.forward_batch(input)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream)
            .expect("length checked above");
        let mut grads = self.zeros_like();
        let dx = self.backward_batch(&cache, up, &mut grads)?;
        Ok((grads, dx.row(0).to_vec()))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<BatchCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), x.ncols()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.spec.activation_of(l);
            let prev = activations.last().expect("non-empty");
            let mut z = prev.dot(&layer.weight.t());
            z += &layer.bias;
            if act != Activation::Linear {
                z.mapv_inplace(|v| act.apply(v));
            }
            activations.push(z);
        }
        Ok(BatchCache { activations })
    }

    /// Accumulates parameter gradients of `sum_rows <upstream_row, output_row>`
    /// into `grads` and returns the gradient with respect to the batch input.
    pub fn backward_batch(
        &self,
        cache: &BatchCache,
        upstream: ArrayView2<'_, f64>,
        grads: &mut Mlp,
    ) -> Result<Array2<f64>> {
        if upstream.ncols() != self.output_dim() {
            return Err(Error::shape(
                "network upstream",
                self.output_dim(),
                upstream.ncols(),
            ));
        }
        if upstream.nrows() != cache.batch_size() {
            return Err(Error::shape(
                "upstream batch",
                cache.batch_size(),
                upstream.nrows(),
            ));
        }
        if grads.spec != self.spec {
            return Err(Error::shape(
                "gradient buffer",
                self.spec.param_count(),
                grads.spec.param_count(),
            ));
        }
        let mut delta = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let act = self.spec.activation_of(l);
            let out = &cache.activations[l + 1];
            if act != Activation::Linear {
                ndarray::Zip::from(&mut delta)
                    .and(out)
                    .for_each(|d, &y| *d *= act.derivative_from_output(y));
            }
            let prev = &cache.activations[l];
            let g = &mut grads.layers[l];
            ndarray::linalg::general_mat_mul(1.0, &delta.t(), prev, 1.0, &mut g.weight);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[l].weight);
        }
        Ok(delta)
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
            .collect()
    }

    fn on_update(&mut self) {
        self.bump_version();
    }
}
