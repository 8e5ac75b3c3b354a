//! Named architectures. Channel widths are scaled down for desk-scale runs;
//! "cnn-paper" keeps the conv/downsampling/fc layer counts of the reference
//! CNN (one conv per downsampling block, two fully connected layers).

use serde::{Deserialize, Serialize};

use super::{Family, LayerSpec, NetworkModel};
use crate::error::{Error, Result};
use crate::neurons::{NeuronModel, SurrogateKind};
use crate::numerics::{PoolMode, Rng};

pub const PRESETS: &[&str] = &["cnn-paper", "cnn-tiny", "mlp-tiny"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetOptions {
    pub neuron: NeuronModel,
    pub surrogate: SurrogateKind,
    /// Base channel width of convolutional presets.
    pub channels: usize,
    /// Hidden width of fully connected stages.
    pub hidden: usize,
    /// Prepend a 1x1 convolution mapping the input to this many channels.
    pub adapter_channels: Option<usize>,
    /// Downsampling blocks of "cnn-paper"; derived from the input size when
    /// absent.
    pub downsampling: Option<usize>,
    /// Multiplier on the fan-in init bound; defaults to `default_init_gain`.
    pub init_gain: Option<f32>,
}

/// Spiking presets start with larger weights so the untrained network fires.
pub fn default_init_gain(family: Family) -> f32 {
    match family {
        Family::Ann => 1.0,
        Family::Snn => 4.0,
    }
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            neuron: NeuronModel::default(),
            surrogate: SurrogateKind::default(),
            channels: 8,
            hidden: 64,
            adapter_channels: None,
            downsampling: None,
            init_gain: None,
        }
    }
}

/// Downsampling depth by input side: 2 up to 34 px, 4 up to 128 px, else 5.
fn paper_downsampling(side: usize) -> usize {
    if side <= 34 {
        2
    } else if side <= 128 {
        4
    } else {
        5
    }
}

pub fn build_preset(
    name: &str,
    family: Family,
    input_shape: &[usize],
    classes: usize,
    opts: &PresetOptions,
) -> Result<Vec<LayerSpec>> {
    let act = || match family {
        Family::Ann => LayerSpec::Relu,
        Family::Snn => LayerSpec::spiking(opts.neuron, opts.surrogate),
    };
    let mut layers = Vec::new();
    let mut shape = input_shape.to_vec();
    if let Some(k) = opts.adapter_channels {
        let c = *shape.first().ok_or_else(|| Error::config("empty input shape"))?;
        layers.push(LayerSpec::ChannelAdapter {
            in_channels: c,
            out_channels: k,
        });
        shape[0] = k;
    }
    let conv_block = |layers: &mut Vec<LayerSpec>, shape: &mut Vec<usize>, out: usize| {
        layers.push(LayerSpec::Conv {
            in_channels: shape[0],
            out_channels: out,
            kernel: 3,
            stride: 1,
            padding: 1,
        });
        layers.push(act());
        layers.push(LayerSpec::Pool {
            window: 2,
            mode: PoolMode::Max,
        });
        shape[0] = out;
        shape[1] /= 2;
        shape[2] /= 2;
    };
    let spatial = |shape: &[usize]| -> Result<()> {
        if shape.len() != 3 {
            return Err(Error::config(format!(
                "preset {name} needs [C, H, W] input, got {shape:?}"
            )));
        }
        Ok(())
    };
    let hidden_fcs = match name {
        "cnn-tiny" => {
            spatial(&shape)?;
            conv_block(&mut layers, &mut shape, opts.channels);
            conv_block(&mut layers, &mut shape, opts.channels * 2);
            false
        }
        "cnn-paper" => {
            spatial(&shape)?;
            let depth = opts
                .downsampling
                .unwrap_or_else(|| paper_downsampling(shape[1].min(shape[2])));
            for _ in 0..depth {
                conv_block(&mut layers, &mut shape, opts.channels);
            }
            true
        }
        "mlp-tiny" => true,
        other => {
            return Err(Error::config(format!(
                "unknown preset `{other}`, expected one of {PRESETS:?}"
            )))
        }
    };
    layers.push(LayerSpec::Flatten);
    let flat: usize = shape.iter().product();
    if flat == 0 {
        return Err(Error::config(format!(
            "input {input_shape:?} is too small for preset {name}"
        )));
    }
    let mut width = flat;
    if hidden_fcs {
        layers.push(LayerSpec::Fc {
            inputs: width,
            outputs: opts.hidden,
        });
        layers.push(act());
        width = opts.hidden;
    }
    layers.push(LayerSpec::Fc {
        inputs: width,
        outputs: classes,
    });
    if family == Family::Snn {
        layers.push(act());
    }
    Ok(layers)
}

impl NetworkModel {
    pub fn from_preset(
        name: &str,
        family: Family,
        input_shape: &[usize],
        classes: usize,
        time_steps: usize,
        opts: &PresetOptions,
        rng: &mut Rng,
    ) -> Result<Self> {
        let layers = build_preset(name, family, input_shape, classes, opts)?;
        let mut model = NetworkModel::new(
            family,
            layers,
            input_shape.to_vec(),
            classes,
            time_steps,
            opts.init_gain.unwrap_or_else(|| default_init_gain(family)),
            rng,
        )?;
        model.preset = name.to_string();
        Ok(model)
    }
}
