//! Layered ANN/SNN models, the multi-step forward pass with BPTT, output
//! records, losses, presets, and the MDL1 checkpoint format.

mod checkpoint;
mod exec;
mod loss;
mod presets;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_model, read_model, save_model, write_model, MDL1_MAGIC};
pub use exec::{probe_gradients, ExecMode, ForwardRecord, GradProbe, Gradients, Trace};
pub use loss::{
    avg_membrane_potential, cross_entropy, fire_rate, fire_rate_mse, loss_and_grad, mse_one_hot,
    sample_loss, LossKind,
};
pub use presets::{build_preset, default_init_gain, PresetOptions, PRESETS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neurons::{NeuronModel, SurrogateKind};
use crate::numerics::{conv2d_output_shape, pool2d_output_shape, PoolMode, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    Ann,
    Snn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Backprop,
    Conversion,
}

fn default_true() -> bool {
    true
}

/// One layer of a model. Shapes are per time step, without a batch axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// 1x1 convolution that changes the channel count.
    ChannelAdapter {
        in_channels: usize,
        out_channels: usize,
    },
    Pool {
        window: usize,
        mode: PoolMode,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Flatten,
    /// Inference-form batch normalization with fixed statistics; parameters
    /// are `[gamma, beta, mean, var]`, only the first two are trained.
    BatchNorm {
        channels: usize,
        eps: f32,
    },
    Spiking {
        neuron: NeuronModel,
        surrogate: SurrogateKind,
        /// Treat the spike inside the reset as a constant during backprop.
        #[serde(default = "default_true")]
        detach_reset: bool,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ChannelAdapter { .. } => "channel_adapter",
            LayerSpec::Pool { .. } => "pool",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Spiking { .. } => "spiking",
        }
    }

    pub fn spiking(neuron: NeuronModel, surrogate: SurrogateKind) -> Self {
        LayerSpec::Spiking {
            neuron,
            surrogate,
            detach_reset: true,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                expect_channels(self, input, in_channels)?;
                conv2d_output_shape(input, out_channels, kernel, stride, padding)
            }
            LayerSpec::ChannelAdapter {
                in_channels,
                out_channels,
            } => {
                expect_channels(self, input, in_channels)?;
                conv2d_output_shape(input, out_channels, 1, 1, 0)
            }
            LayerSpec::Pool { window, .. } => pool2d_output_shape(input, window),
            LayerSpec::Fc { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::shape(format!(
                        "fc expects [{inputs}], got {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::BatchNorm { channels, .. } => {
                expect_channels(self, input, channels)?;
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Spiking { .. } => Ok(input.to_vec()),
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::ChannelAdapter {
                in_channels,
                out_channels,
            } => vec![vec![out_channels, in_channels, 1, 1], vec![out_channels]],
            LayerSpec::Fc { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::BatchNorm { channels, .. } => vec![vec![channels]; 4],
            _ => Vec::new(),
        }
    }

    /// Whether parameter `index` of this layer is updated by training.
    pub fn trainable(&self, index: usize) -> bool {
        match self {
            LayerSpec::BatchNorm { .. } => index < 2,
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv { kernel, stride, .. } if *kernel == 0 || *stride == 0 => {
                Err(Error::config("conv kernel and stride must be >= 1"))
            }
            LayerSpec::Pool { window: 0, .. } => Err(Error::config("pool window must be >= 1")),
            LayerSpec::BatchNorm { eps, .. } if !(*eps > 0.0) => {
                Err(Error::config("batch norm eps must be > 0"))
            }
            LayerSpec::Spiking {
                neuron, surrogate, ..
            } => {
                neuron.validate()?;
                surrogate.validate()
            }
            _ => Ok(()),
        }
    }
}

fn expect_channels(layer: &LayerSpec, input: &[usize], channels: usize) -> Result<()> {
    if input.first() != Some(&channels) {
        return Err(Error::shape(format!(
            "{} expects {channels} channels, got input {input:?}",
            layer.name()
        )));
    }
    Ok(())
}

/// A model with its parameters. `params[l]` holds layer `l`'s tensors in
/// the order given by [`LayerSpec::param_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub family: Family,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Vec<Tensor>>,
    /// Per-step input shape, e.g. `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    /// Default number of steps the model is run for.
    pub time_steps: usize,
    pub preset: String,
    pub seed: u64,
    pub origin: Origin,
}

impl NetworkModel {
    /// Builds a model with fan-in scaled uniform initialization
    /// (`|w| <= gain / sqrt(fan_in)`, same bound for biases).
    pub fn new(
        family: Family,
        layers: Vec<LayerSpec>,
        input_shape: Vec<usize>,
        classes: usize,
        time_steps: usize,
        init_gain: f32,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut model = Self {
            family,
            params: layers
                .iter()
                .map(|l| l.param_shapes().iter().map(|s| Tensor::zeros(s)).collect())
                .collect(),
            layers,
            input_shape,
            classes,
            time_steps,
            preset: "custom".into(),
            seed: rng.seed(),
            origin: Origin::Backprop,
        };
        model.validate()?;
        model.initialize(init_gain, rng);
        Ok(model)
    }

    fn initialize(&mut self, gain: f32, rng: &mut Rng) {
        for (layer, params) in self.layers.iter().zip(self.params.iter_mut()) {
            match layer {
                LayerSpec::BatchNorm { .. } => {
                    params[0].fill(1.0);
                    params[1].fill(0.0);
                    params[2].fill(0.0);
                    params[3].fill(1.0);
                }
                _ if !params.is_empty() => {
                    let w_shape = params[0].shape().to_vec();
                    let fan_in: usize = w_shape[1..].iter().product();
                    let bound = gain as f64 / (fan_in as f64).sqrt();
                    for p in params.iter_mut() {
                        for v in p.data_mut() {
                            *v = rng.uniform_range(-bound, bound) as f32;
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Checks family invariants, layer parameters and shape conformity.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("model has no layers"));
        }
        if self.classes == 0 || self.time_steps == 0 {
            return Err(Error::config("classes and time steps must be >= 1"));
        }
        if self.params.len() != self.layers.len() {
            return Err(Error::shape("parameter list does not match layers"));
        }
        let mut shape = self.input_shape.clone();
        for (i, (layer, params)) in self.layers.iter().zip(&self.params).enumerate() {
            layer.validate()?;
            match (self.family, layer) {
                (Family::Ann, LayerSpec::Spiking { .. }) => {
                    return Err(Error::config(format!("ANN layer {i} is spiking")));
                }
                (Family::Snn, LayerSpec::Relu) => {
                    return Err(Error::config(format!("SNN layer {i} is a relu")));
                }
                _ => {}
            }
            let expected = layer.param_shapes();
            if params.len() != expected.len()
                || params.iter().zip(&expected).any(|(p, e)| p.shape() != e.as_slice())
            {
                return Err(Error::shape(format!(
                    "layer {i} ({}) parameters do not match {expected:?}",
                    layer.name()
                )));
            }
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.name())))?;
        }
        if shape != [self.classes] {
            return Err(Error::shape(format!(
                "model output {shape:?} does not match {} classes",
                self.classes
            )));
        }
        if self.family == Family::Snn && !matches!(self.layers.last(), Some(LayerSpec::Spiking { .. })) {
            return Err(Error::config("SNN must end in a spiking layer"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    /// Index of the last spiking layer, whose potentials are recorded.
    pub fn last_spiking_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Spiking { .. }))
    }

    /// Per-step shapes of every layer's output.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape)?;
                Ok(shape.clone())
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().flatten().all(Tensor::all_finite)
    }
}
