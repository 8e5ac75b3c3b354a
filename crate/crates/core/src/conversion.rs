//! ANN-to-SNN conversion: batch-norm folding, average pooling, percentile
//! weight normalization, and ReLU to integrate-and-fire replacement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{Family, LayerSpec, NetworkModel, Origin};
use crate::neurons::{IfParams, NeuronModel, ResetMode, SurrogateKind};
use crate::numerics::{conv2d, fully_connected, pool2d, PoolMode, Tensor};

/// Floor for a layer scale whose percentile is not positive.
pub const MIN_SCALE: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConversionConfig {
    pub percentile: f64,
    pub v_th: f32,
    pub time_steps: usize,
    /// Upper bound on calibration inputs used; all when `None`.
    pub calibration_samples: Option<usize>,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self {
            percentile: 99.9,
            v_th: 1.0,
            time_steps: 32,
            calibration_samples: Some(256),
        }
    }
}

impl ConversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::config(format!("percentile must lie in (0, 100], got {}", self.percentile)));
        }
        if !(self.v_th > 0.0) {
            return Err(Error::config("v_th must be > 0"));
        }
        if self.time_steps == 0 {
            return Err(Error::config("inference time steps must be >= 1"));
        }
        if self.calibration_samples == Some(0) {
            return Err(Error::config("calibration sample count must be >= 1"));
        }
        Ok(())
    }
}

/// Linearly interpolated `p`-th percentile (rank `p/100 * (n-1)`), falling
/// back to `max(max(values), MIN_SCALE)` when the percentile is not positive.
pub fn robust_percentile(values: &[f32], p: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::config("percentile of an empty set"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::config(format!("percentile must lie in (0, 100], got {p}")));
    }
    let mut v: Vec<f32> = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN in calibration activations".into()));
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    let q = v[lo] as f64 + frac * (v[hi] as f64 - v[lo] as f64);
    if q > 0.0 {
        Ok(q as f32)
    } else {
        Ok(v[v.len() - 1].max(MIN_SCALE))
    }
}

fn is_weighted(layer: &LayerSpec) -> bool {
    matches!(layer, LayerSpec::Conv { .. } | LayerSpec::ChannelAdapter { .. } | LayerSpec::Fc { .. })
}

/// Folds batch norms into the preceding weighted layer and swaps max pooling
/// for average pooling. The result is still an ANN.
pub fn prepare_ann(ann: &NetworkModel) -> Result<NetworkModel> {
    if ann.family != Family::Ann {
        return Err(Error::config("conversion expects an ANN"));
    }
    ann.validate()?;
    let mut layers = Vec::new();
    let mut params: Vec<Vec<Tensor>> = Vec::new();
    for (i, (layer, p)) in ann.layers.iter().zip(&ann.params).enumerate() {
        match *layer {
            LayerSpec::BatchNorm { channels, eps } => {
                let prev = layers.last().filter(|l| is_weighted(l)).ok_or_else(|| {
                    Error::UnsupportedLayer(format!("batch_norm at layer {i} without a preceding conv or fc"))
                })?;
                let out = match prev {
                    LayerSpec::Fc { outputs, .. } => *outputs,
                    LayerSpec::Conv { out_channels, .. } | LayerSpec::ChannelAdapter { out_channels, .. } => *out_channels,
                    _ => unreachable!(),
                };
                if out != channels {
                    return Err(Error::shape(format!("batch_norm at layer {i} has {channels} channels, expected {out}")));
                }
                let wp: &mut Vec<Tensor> = params.last_mut().expect("weighted layer has params");
                fold_batch_norm(wp, p, eps)?;
            }
            LayerSpec::Pool { window, .. } => {
                layers.push(LayerSpec::Pool {
                    window,
                    mode: PoolMode::Avg,
                });
                params.push(Vec::new());
            }
            LayerSpec::Conv { .. } | LayerSpec::ChannelAdapter { .. } | LayerSpec::Fc { .. } | LayerSpec::Relu | LayerSpec::Flatten => {
                layers.push(layer.clone());
                params.push(p.clone());
            }
            LayerSpec::Spiking { .. } => {
                return Err(Error::UnsupportedLayer(format!("spiking at layer {i}")));
            }
        }
    }
    let mut out = ann.clone();
    out.layers = layers;
    out.params = params;
    out.validate()?;
    Ok(out)
}

/// `w[c] *= gamma[c]/sqrt(var[c]+eps)`, `b[c] = (b[c]-mean[c])*scale[c]+beta[c]`.
fn fold_batch_norm(weighted: &mut [Tensor], bn: &[Tensor], eps: f32) -> Result<()> {
    let (gamma, beta, mean, var) = (bn[0].data(), bn[1].data(), bn[2].data(), bn[3].data());
    let channels = gamma.len();
    let per = weighted[0].len() / channels;
    for c in 0..channels {
        let s = gamma[c] as f64 / (var[c] as f64 + eps as f64).sqrt();
        for w in &mut weighted[0].data_mut()[c * per..(c + 1) * per] {
            *w = (*w as f64 * s) as f32;
        }
        let b = &mut weighted[1].data_mut()[c];
        *b = ((*b as f64 - mean[c] as f64) * s + beta[c] as f64) as f32;
    }
    Ok(())
}

/// Single-step ANN pass returning the output of every weighted layer.
fn weighted_outputs(ann: &NetworkModel, input: &Tensor) -> Result<Vec<Tensor>> {
    let mut x = input.clone();
    let mut outs = Vec::new();
    for (layer, p) in ann.layers.iter().zip(&ann.params) {
        x = match *layer {
            LayerSpec::Conv { stride, padding, .. } => conv2d(&x, &p[0], &p[1], stride, padding)?,
            LayerSpec::ChannelAdapter { .. } => conv2d(&x, &p[0], &p[1], 1, 0)?,
            LayerSpec::Fc { .. } => fully_connected(&x, &p[0], &p[1])?,
            LayerSpec::Pool { window, mode } => pool2d(&x, window, mode)?,
            LayerSpec::Relu => {
                x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                x
            }
            LayerSpec::Flatten => {
                let n = x.len();
                x.reshape(&[n])?
            }
            _ => return Err(Error::UnsupportedLayer(layer.name().into())),
        };
        if is_weighted(layer) {
            outs.push(x.clone());
        }
    }
    Ok(outs)
}

/// Per-step calibration inputs: each tensor is either one step
/// (`input_shape`) or a stack of steps (`[T, ...input_shape]`).
fn calibration_steps(model: &NetworkModel, data: &[Tensor], limit: Option<usize>) -> Result<Vec<Tensor>> {
    let mut steps = Vec::new();
    for t in data.iter().take(limit.unwrap_or(usize::MAX)) {
        if t.shape() == model.input_shape.as_slice() {
            steps.push(t.clone());
        } else if t.ndim() == model.input_shape.len() + 1 && t.shape()[1..] == model.input_shape[..] {
            for s in 0..t.shape()[0] {
                steps.push(t.slice_outer(s)?);
            }
        } else {
            return Err(Error::shape(format!(
                "calibration input {:?} does not match {:?}",
                t.shape(),
                model.input_shape
            )));
        }
    }
    if steps.is_empty() {
        return Err(Error::config("calibration set is empty"));
    }
    Ok(steps)
}

/// Scale of every weighted layer, in layer order: the `p`-th percentile of
/// its pre-activations over the calibration set.
pub fn calibrate(ann: &NetworkModel, data: &[Tensor], config: &ConversionConfig) -> Result<Vec<f32>> {
    config.validate()?;
    let steps = calibration_steps(ann, data, config.calibration_samples)?;
    let mut pools: Vec<Vec<f32>> = Vec::new();
    for s in &steps {
        let outs = weighted_outputs(ann, s)?;
        pools.resize(outs.len(), Vec::new());
        for (pool, o) in pools.iter_mut().zip(&outs) {
            pool.extend_from_slice(o.data());
        }
    }
    pools.iter().map(|v| robust_percentile(v, config.percentile)).collect()
}

/// Rescales weighted layer `l` by `lambda[l-1]/lambda[l]` (weights) and
/// `1/lambda[l]` (biases), with `lambda[-1] = 1`.
pub fn normalize_weights(ann: &NetworkModel, lambdas: &[f32]) -> Result<NetworkModel> {
    let mut out = ann.clone();
    let weighted: Vec<usize> = (0..out.layers.len()).filter(|&i| is_weighted(&out.layers[i])).collect();
    if weighted.len() != lambdas.len() {
        return Err(Error::shape(format!(
            "{} scales for {} weighted layers",
            lambdas.len(),
            weighted.len()
        )));
    }
    if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::config("layer scales must be positive and finite"));
    }
    let mut prev = 1.0f64;
    for (&li, &lam) in weighted.iter().zip(lambdas) {
        let lam = lam as f64;
        let p = &mut out.params[li];
        for w in p[0].data_mut() {
            *w = (*w as f64 * prev / lam) as f32;
        }
        for b in p[1].data_mut() {
            *b = (*b as f64 / lam) as f32;
        }
        prev = lam;
    }
    Ok(out)
}

fn if_layer(v_th: f32) -> LayerSpec {
    LayerSpec::spiking(
        NeuronModel::If(IfParams {
            v_th,
            v_reset: 0.0,
            reset_mode: ResetMode::Subtract,
        }),
        SurrogateKind::default(),
    )
}

/// Turns a normalized ANN into an SNN with the given scales already applied.
pub fn convert_with_scales(ann: &NetworkModel, lambdas: &[f32], config: &ConversionConfig) -> Result<NetworkModel> {
    config.validate()?;
    let prepared = prepare_ann(ann)?;
    let mut snn = normalize_weights(&prepared, lambdas)?;
    // IF neurons with threshold v_th see currents scaled by v_th
    if config.v_th != 1.0 {
        for (layer, p) in snn.layers.iter().zip(snn.params.iter_mut()) {
            if is_weighted(layer) {
                for t in p.iter_mut() {
                    t.scale(config.v_th);
                }
            }
        }
    }
    let mut layers: Vec<LayerSpec> = snn
        .layers
        .iter()
        .map(|l| match l {
            LayerSpec::Relu => if_layer(config.v_th),
            other => other.clone(),
        })
        .collect();
    let mut params = std::mem::take(&mut snn.params);
    if !matches!(layers.last(), Some(LayerSpec::Spiking { .. })) {
        layers.push(if_layer(config.v_th));
        params.push(Vec::new());
    }
    snn.layers = layers;
    snn.params = params;
    snn.family = Family::Snn;
    snn.origin = Origin::Conversion;
    snn.time_steps = config.time_steps;
    snn.validate()?;
    Ok(snn)
}

/// Full conversion: fold, calibrate on `calibration`, normalize, and swap
/// ReLUs for integrate-and-fire neurons with subtract reset.
pub fn convert_ann_to_snn(ann: &NetworkModel, calibration: &[Tensor], config: &ConversionConfig) -> Result<NetworkModel> {
    let prepared = prepare_ann(ann)?;
    let lambdas = calibrate(&prepared, calibration, config)?;
    convert_with_scales(&prepared, &lambdas, config)
}

/// Repeats one step `t` times: converted networks see the raw input on
/// every step.
pub fn repeat_input(step: &Tensor, t: usize) -> Result<Tensor> {
    Tensor::stack(&vec![step.clone(); t])
}

/// Rates the normalized ANN predicts for the output neurons:
/// `clamp(relu(z) / lambda_L, 0, 1)`.
pub fn expected_output_rates(ann: &NetworkModel, lambdas: &[f32], step: &Tensor) -> Result<Vec<f32>> {
    let prepared = prepare_ann(ann)?;
    let outs = weighted_outputs(&prepared, step)?;
    let last = outs.last().ok_or_else(|| Error::config("model has no weighted layers"))?;
    let lam = *lambdas.last().ok_or_else(|| Error::config("no scales"))?;
    Ok(last.data().iter().map(|z| (z.max(0.0) / lam).min(1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{fire_rate, PresetOptions};
    use crate::numerics::Rng;

    fn single_neuron(w: f32) -> NetworkModel {
        let mut m = NetworkModel::new(
            Family::Ann,
            vec![LayerSpec::Fc { inputs: 1, outputs: 1 }, LayerSpec::Relu],
            vec![1],
            1,
            1,
            1.0,
            &mut Rng::new(0),
        )
        .unwrap();
        m.params[0][0].data_mut()[0] = w;
        m.params[0][1].data_mut()[0] = 0.0;
        m
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f32> = (1..=1000).map(|i| i as f32).collect();
        assert!((robust_percentile(&v, 99.9).unwrap() - 999.001).abs() < 1e-3);
        assert_eq!(robust_percentile(&v, 100.0).unwrap(), 1000.0);
        assert_eq!(robust_percentile(&[0.7; 5], 99.9).unwrap(), 0.7);
        assert_eq!(robust_percentile(&[-3.0, -1.0], 50.0).unwrap(), MIN_SCALE);
        assert!(robust_percentile(&[], 50.0).is_err());
        assert!(robust_percentile(&[1.0], 0.0).is_err());
    }

    #[test]
    fn single_if_neuron_rate() {
        let cfg = ConversionConfig {
            time_steps: 10,
            ..ConversionConfig::default()
        };
        let snn = convert_with_scales(&single_neuron(1.0), &[1.0], &cfg).unwrap();
        assert_eq!(snn.origin, Origin::Conversion);
        let rec = snn.forward(&repeat_input(&Tensor::from_vec(vec![0.6]), 10).unwrap()).unwrap();
        let spikes: Vec<usize> = (0..10).filter(|&t| rec.outputs.data()[t] > 0.5).map(|t| t + 1).collect();
        assert_eq!(spikes, vec![2, 4, 5, 7, 9, 10]);
        assert!((fire_rate(&rec)[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn negative_drive_is_silent() {
        let cfg = ConversionConfig::default();
        let snn = convert_with_scales(&single_neuron(-1.0), &[1.0], &cfg).unwrap();
        let rec = snn.forward(&repeat_input(&Tensor::from_vec(vec![0.9]), 20).unwrap()).unwrap();
        assert_eq!(fire_rate(&rec)[0], 0.0);
    }

    #[test]
    fn identity_batch_norm_fold() {
        let mut rng = Rng::new(3);
        let ann = NetworkModel::new(
            Family::Ann,
            vec![
                LayerSpec::Fc { inputs: 4, outputs: 3 },
                LayerSpec::BatchNorm { channels: 3, eps: 1e-12 },
                LayerSpec::Relu,
            ],
            vec![4],
            3,
            1,
            1.0,
            &mut rng,
        )
        .unwrap();
        let folded = prepare_ann(&ann).unwrap();
        assert_eq!(folded.layers.len(), 2);
        assert!(folded.params[0][0].max_abs_diff(&ann.params[0][0]).unwrap() <= 1e-6);
        assert!(folded.params[0][1].max_abs_diff(&ann.params[0][1]).unwrap() <= 1e-6);
    }

    #[test]
    fn batch_norm_fold_matches_forward() {
        let mut rng = Rng::new(4);
        let mut ann = NetworkModel::new(
            Family::Ann,
            vec![
                LayerSpec::Fc { inputs: 4, outputs: 3 },
                LayerSpec::BatchNorm { channels: 3, eps: 1e-5 },
            ],
            vec![4],
            3,
            1,
            1.0,
            &mut rng,
        )
        .unwrap();
        ann.params[1] = vec![
            Tensor::from_vec(vec![1.5, 0.5, 2.0]),
            Tensor::from_vec(vec![0.1, -0.2, 0.0]),
            Tensor::from_vec(vec![0.3, 0.0, -0.4]),
            Tensor::from_vec(vec![2.0, 0.25, 1.0]),
        ];
        let x = Tensor::new(vec![1, 4], vec![0.2, -0.5, 0.9, 0.4]).unwrap();
        let folded = prepare_ann(&ann).unwrap();
        let a = ann.forward(&x).unwrap();
        let b = folded.forward(&x).unwrap();
        assert!(a.outputs.max_abs_diff(&b.outputs).unwrap() < 1e-5);
    }

    #[test]
    fn unsupported_layers_named() {
        let mut ann = single_neuron(1.0);
        ann.layers.insert(0, LayerSpec::BatchNorm { channels: 1, eps: 1e-5 });
        ann.params.insert(
            0,
            vec![Tensor::full(&[1], 1.0), Tensor::zeros(&[1]), Tensor::zeros(&[1]), Tensor::full(&[1], 1.0)],
        );
        match prepare_ann(&ann) {
            Err(Error::UnsupportedLayer(msg)) => assert!(msg.contains("batch_norm")),
            other => panic!("{other:?}"),
        }
        let mut snn_like = single_neuron(1.0);
        snn_like.family = Family::Snn;
        assert!(prepare_ann(&snn_like).is_err());
    }

    #[test]
    fn max_pool_becomes_average() {
        let ann = NetworkModel::from_preset("cnn-tiny", Family::Ann, &[1, 8, 8], 3, 1, &PresetOptions::default(), &mut Rng::new(1))
            .unwrap();
        let cfg = ConversionConfig::default();
        let calib: Vec<Tensor> = (0..4)
            .map(|i| Tensor::full(&[1, 8, 8], 0.2 * i as f32))
            .collect();
        let snn = convert_ann_to_snn(&ann, &calib, &cfg).unwrap();
        assert!(snn
            .layers
            .iter()
            .all(|l| !matches!(l, LayerSpec::Pool { mode: PoolMode::Max, .. })));
        assert_eq!(snn.family, Family::Snn);
        assert!(matches!(snn.layers.last(), Some(LayerSpec::Spiking { .. })));
    }

    #[test]
    fn normalizing_twice_is_idempotent() {
        let mut rng = Rng::new(11);
        let ann = NetworkModel::from_preset("mlp-tiny", Family::Ann, &[6], 3, 1, &PresetOptions::default(), &mut rng).unwrap();
        let calib: Vec<Tensor> = (0..64)
            .map(|_| Tensor::from_vec((0..6).map(|_| rng.uniform() as f32).collect()))
            .collect();
        let cfg = ConversionConfig::default();
        let once = normalize_weights(&ann, &calibrate(&ann, &calib, &cfg).unwrap()).unwrap();
        let lambdas = calibrate(&once, &calib, &cfg).unwrap();
        for l in &lambdas {
            assert!((l - 1.0).abs() < 1e-5, "{lambdas:?}");
        }
        let twice = normalize_weights(&once, &lambdas).unwrap();
        for (a, b) in once.params.iter().flatten().zip(twice.params.iter().flatten()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-5 * x.abs().max(1e-3), "{x} vs {y}");
            }
        }
    }
}
