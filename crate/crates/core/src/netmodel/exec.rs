//! Multi-step execution. A sample `[T, ...]` flows through the network one
//! layer at a time over all `T` steps; spiking layers carry their state
//! across steps and start from rest for every call. The optional trace keeps
//! what backpropagation through time needs.

use super::{Family, LayerSpec, NetworkModel};
use crate::error::{Error, Result};
use crate::neurons::{surrogate_grad, ResetMode, SpikeFn, SurrogateKind};
use crate::numerics::{
    conv2d, conv2d_backward_accumulate, conv2d_forward, fc_backward_accumulate, fc_forward,
    fully_connected, pool2d, pool2d_backward, pool2d_forward, softmax, Conv2dCache, FcCache,
    PoolCache, Tensor,
};

/// How spikes are produced in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Binary spikes; the surrogate is used only in the backward pass.
    #[default]
    Hard,
    /// Spikes are replaced by the surrogate function itself and the reset is
    /// not detached, making the whole network differentiable. Used to check
    /// gradients against finite differences.
    Soft,
}

/// Output of one forward call.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub family: Family,
    /// `[T, n]`: output spikes for SNNs, per-step logits for ANNs.
    pub outputs: Tensor,
    /// `[T, m]`: pre-reset potentials of the last spiking layer.
    pub potentials: Option<Tensor>,
}

impl ForwardRecord {
    pub fn time_steps(&self) -> usize {
        self.outputs.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.outputs.shape()[1]
    }

    fn step(&self, t: usize) -> &[f32] {
        let n = self.classes();
        &self.outputs.data()[t * n..(t + 1) * n]
    }

    /// Mean logits over steps (ANN).
    pub fn logits(&self) -> Vec<f32> {
        mean_rows(&self.outputs)
    }

    /// ANN: mean softmax over steps. SNN: softmax of the fire rates.
    pub fn confidences(&self) -> Vec<f32> {
        match self.family {
            Family::Snn => softmax(&super::fire_rate(self)),
            Family::Ann => {
                let t_steps = self.time_steps();
                let mut acc = vec![0f64; self.classes()];
                for t in 0..t_steps {
                    for (a, p) in acc.iter_mut().zip(softmax(self.step(t))) {
                        *a += p as f64;
                    }
                }
                acc.iter().map(|a| (a / t_steps as f64) as f32).collect()
            }
        }
    }

    /// SNN: fire rates. ANN: confidences.
    pub fn signal(&self) -> Vec<f32> {
        match self.family {
            Family::Snn => super::fire_rate(self),
            Family::Ann => self.confidences(),
        }
    }

    /// Predicted class; ties go to the lowest index.
    pub fn prediction(&self) -> usize {
        crate::numerics::argmax(&self.signal())
    }
}

pub(crate) fn mean_rows(t: &Tensor) -> Vec<f32> {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut acc = vec![0f64; cols];
    for r in 0..rows {
        for (a, v) in acc.iter_mut().zip(&t.data()[r * cols..(r + 1) * cols]) {
            *a += *v as f64;
        }
    }
    acc.iter().map(|a| (a / rows as f64) as f32).collect()
}

struct SpikeTrace {
    v_prev: Vec<Vec<f32>>,
    charge: Vec<Vec<f32>>,
    spikes: Vec<Vec<f32>>,
    detach: bool,
}

enum LayerTrace {
    Conv(Vec<Conv2dCache>),
    Fc(Vec<FcCache>),
    Pool(Vec<PoolCache>),
    Relu(Vec<Vec<bool>>),
    Flatten(Vec<usize>),
    BatchNorm(Vec<Tensor>),
    Spiking(SpikeTrace),
}

/// Per-layer, per-step state cached by a traced forward pass.
pub struct Trace {
    layers: Vec<LayerTrace>,
    steps: usize,
}

/// Gradient accumulator shaped like a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        Self {
            tensors: model
                .params
                .iter()
                .map(|ps| ps.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        self.tensors.iter_mut().flatten().for_each(|t| t.fill(0.0));
    }

    pub fn scale(&mut self, factor: f32) {
        self.tensors.iter_mut().flatten().for_each(|t| t.scale(factor));
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(Tensor::all_finite)
    }
}

fn bn_scale(params: &[Tensor], eps: f32) -> Vec<f32> {
    params[0]
        .data()
        .iter()
        .zip(params[3].data())
        .map(|(g, var)| (*g as f64 / ((*var as f64) + eps as f64).sqrt()) as f32)
        .collect()
}

impl NetworkModel {
    fn check_input(&self, input: &Tensor) -> Result<usize> {
        let s = input.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "model expects [T, {:?}], got {s:?}",
                self.input_shape
            )));
        }
        Ok(s[0])
    }

    /// Inference pass with binary spikes.
    pub fn forward(&self, input: &Tensor) -> Result<ForwardRecord> {
        self.run(input, ExecMode::Hard, None)
    }

    pub fn forward_with(&self, input: &Tensor, mode: ExecMode) -> Result<ForwardRecord> {
        self.run(input, mode, None)
    }

    pub fn forward_traced(&self, input: &Tensor, mode: ExecMode) -> Result<(ForwardRecord, Trace)> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let rec = self.run(input, mode, Some(&mut layers))?;
        let steps = rec.time_steps();
        Ok((rec, Trace { layers, steps }))
    }

    fn run(
        &self,
        input: &Tensor,
        mode: ExecMode,
        mut trace: Option<&mut Vec<LayerTrace>>,
    ) -> Result<ForwardRecord> {
        let t_steps = self.check_input(input)?;
        let mut xs: Vec<Tensor> = (0..t_steps)
            .map(|t| input.slice_outer(t))
            .collect::<Result<_>>()?;
        let last_spiking = self.last_spiking_layer();
        let mut potentials = None;
        let tracing = trace.is_some();
        for (li, (layer, p)) in self.layers.iter().zip(&self.params).enumerate() {
            let lt = match *layer {
                LayerSpec::Conv {
                    stride, padding, ..
                } => conv_steps(&mut xs, p, stride, padding, tracing)?,
                LayerSpec::ChannelAdapter { .. } => conv_steps(&mut xs, p, 1, 0, tracing)?,
                LayerSpec::Pool { window, mode } => {
                    if tracing {
                        let mut caches = Vec::with_capacity(t_steps);
                        for x in xs.iter_mut() {
                            let (y, c) = pool2d_forward(x, window, mode)?;
                            *x = y;
                            caches.push(c);
                        }
                        Some(LayerTrace::Pool(caches))
                    } else {
                        for x in xs.iter_mut() {
                            *x = pool2d(x, window, mode)?;
                        }
                        None
                    }
                }
                LayerSpec::Fc { .. } => {
                    if tracing {
                        let mut caches = Vec::with_capacity(t_steps);
                        for x in xs.iter_mut() {
                            let (y, c) = fc_forward(x, &p[0], &p[1])?;
                            *x = y;
                            caches.push(c);
                        }
                        Some(LayerTrace::Fc(caches))
                    } else {
                        for x in xs.iter_mut() {
                            *x = fully_connected(x, &p[0], &p[1])?;
                        }
                        None
                    }
                }
                LayerSpec::Relu => {
                    let mut masks = Vec::new();
                    for x in xs.iter_mut() {
                        if tracing {
                            masks.push(x.data().iter().map(|&v| v > 0.0).collect());
                        }
                        x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    tracing.then_some(LayerTrace::Relu(masks))
                }
                LayerSpec::Flatten => {
                    let shape = xs[0].shape().to_vec();
                    for x in xs.iter_mut() {
                        let n = x.len();
                        *x = std::mem::replace(x, Tensor::zeros(&[1])).reshape(&[n])?;
                    }
                    tracing.then_some(LayerTrace::Flatten(shape))
                }
                LayerSpec::BatchNorm { channels, eps } => {
                    let scale = bn_scale(p, eps);
                    let (beta, mean, var) = (p[1].data(), p[2].data(), p[3].data());
                    let mut xhats = Vec::new();
                    for x in xs.iter_mut() {
                        let plane = x.len() / channels;
                        let mut xhat = if tracing {
                            Some(Tensor::zeros(x.shape()))
                        } else {
                            None
                        };
                        for (i, v) in x.data_mut().iter_mut().enumerate() {
                            let c = i / plane;
                            let norm = (*v - mean[c]) / (var[c] + eps).sqrt();
                            if let Some(xh) = xhat.as_mut() {
                                xh.data_mut()[i] = norm;
                            }
                            *v = (*v - mean[c]) * scale[c] + beta[c];
                        }
                        xhats.extend(xhat);
                    }
                    tracing.then_some(LayerTrace::BatchNorm(xhats))
                }
                LayerSpec::Spiking {
                    neuron,
                    surrogate,
                    detach_reset,
                } => {
                    let spike_fn = match mode {
                        ExecMode::Hard => SpikeFn::Hard,
                        ExecMode::Soft => SpikeFn::Soft(surrogate),
                    };
                    let n = xs[0].len();
                    let mut state = neuron.initial_state(n);
                    let mut st = SpikeTrace {
                        v_prev: Vec::new(),
                        charge: Vec::new(),
                        spikes: Vec::new(),
                        detach: detach_reset && mode == ExecMode::Hard,
                    };
                    let record = Some(li) == last_spiking;
                    let mut pots = Vec::new();
                    let mut spikes = vec![0f32; n];
                    let mut charge = vec![0f32; n];
                    for x in xs.iter_mut() {
                        if tracing {
                            st.v_prev.push(state.v.clone());
                        }
                        neuron.step_in_place(&mut state, x.data(), spike_fn, &mut spikes, &mut charge);
                        if !spikes.iter().chain(&charge).all(|v| v.is_finite()) {
                            return Err(Error::NonFinite(format!(
                                "spiking layer {li} produced a non-finite potential"
                            )));
                        }
                        x.data_mut().copy_from_slice(&spikes);
                        if record {
                            pots.extend_from_slice(&charge);
                        }
                        if tracing {
                            st.charge.push(charge.clone());
                            st.spikes.push(spikes.clone());
                        }
                    }
                    if record {
                        potentials = Some(Tensor::new(vec![t_steps, n], pots)?);
                    }
                    tracing.then_some(LayerTrace::Spiking(st))
                }
            };
            if let (Some(tr), Some(lt)) = (trace.as_deref_mut(), lt) {
                tr.push(lt);
            }
        }
        let outputs = Tensor::stack(&xs)?;
        Ok(ForwardRecord {
            family: self.family,
            outputs,
            potentials,
        })
    }

    /// Backpropagates `grad_outputs` (`[T, n]`, the loss gradient with
    /// respect to the record's outputs) and adds parameter gradients into
    /// `grads`.
    pub fn backward(&self, trace: &Trace, grad_outputs: &Tensor, grads: &mut Gradients) -> Result<()> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::shape("trace does not belong to this model"));
        }
        if grad_outputs.shape() != [trace.steps, self.classes] {
            return Err(Error::shape(format!(
                "output gradient must be [{}, {}], got {:?}",
                trace.steps,
                self.classes,
                grad_outputs.shape()
            )));
        }
        let mut gs: Vec<Tensor> = (0..trace.steps)
            .map(|t| grad_outputs.slice_outer(t))
            .collect::<Result<_>>()?;
        for li in (0..self.layers.len()).rev() {
            let want_input = li > 0;
            let p = &self.params[li];
            let g_layer = &mut grads.tensors[li];
            match (&self.layers[li], &trace.layers[li]) {
                (LayerSpec::Conv { .. } | LayerSpec::ChannelAdapter { .. }, LayerTrace::Conv(caches)) => {
                    let (gw, gb) = g_layer.split_at_mut(1);
                    for (g, c) in gs.iter_mut().zip(caches) {
                        let gi = conv2d_backward_accumulate(c, &p[0], g, &mut gw[0], &mut gb[0], want_input)?;
                        if let Some(gi) = gi {
                            *g = gi;
                        }
                    }
                }
                (LayerSpec::Fc { .. }, LayerTrace::Fc(caches)) => {
                    let (gw, gb) = g_layer.split_at_mut(1);
                    for (g, c) in gs.iter_mut().zip(caches) {
                        let gi = fc_backward_accumulate(c, &p[0], g, &mut gw[0], &mut gb[0], want_input)?;
                        if let Some(gi) = gi {
                            *g = gi;
                        }
                    }
                }
                (LayerSpec::Pool { .. }, LayerTrace::Pool(caches)) => {
                    for (g, c) in gs.iter_mut().zip(caches) {
                        *g = pool2d_backward(c, g)?;
                    }
                }
                (LayerSpec::Relu, LayerTrace::Relu(masks)) => {
                    for (g, m) in gs.iter_mut().zip(masks) {
                        for (v, &on) in g.data_mut().iter_mut().zip(m) {
                            if !on {
                                *v = 0.0;
                            }
                        }
                    }
                }
                (LayerSpec::Flatten, LayerTrace::Flatten(shape)) => {
                    for g in gs.iter_mut() {
                        *g = std::mem::replace(g, Tensor::zeros(&[1])).reshape(shape)?;
                    }
                }
                (LayerSpec::BatchNorm { channels, eps }, LayerTrace::BatchNorm(xhats)) => {
                    let scale = bn_scale(p, *eps);
                    for (g, xh) in gs.iter_mut().zip(xhats) {
                        let plane = g.len() / channels;
                        for (i, v) in g.data_mut().iter_mut().enumerate() {
                            let c = i / plane;
                            g_layer[0].data_mut()[c] += *v * xh.data()[i];
                            g_layer[1].data_mut()[c] += *v;
                            *v *= scale[c];
                        }
                    }
                }
                (
                    LayerSpec::Spiking {
                        neuron, surrogate, ..
                    },
                    LayerTrace::Spiking(st),
                ) => spiking_backward(neuron, *surrogate, st, &mut gs),
                (layer, _) => {
                    return Err(Error::shape(format!(
                        "trace entry {li} does not match layer {}",
                        layer.name()
                    )))
                }
            }
        }
        Ok(())
    }
}

fn conv_steps(
    xs: &mut [Tensor],
    p: &[Tensor],
    stride: usize,
    padding: usize,
    tracing: bool,
) -> Result<Option<LayerTrace>> {
    if tracing {
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs.iter_mut() {
            let (y, c) = conv2d_forward(x, &p[0], &p[1], stride, padding)?;
            *x = y;
            caches.push(c);
        }
        Ok(Some(LayerTrace::Conv(caches)))
    } else {
        for x in xs.iter_mut() {
            *x = conv2d(x, &p[0], &p[1], stride, padding)?;
        }
        Ok(None)
    }
}

/// Backpropagation through time for one spiking population. `gs[t]` holds
/// the gradient with respect to the spikes of step `t` on entry and with
/// respect to the input current of step `t` on exit.
fn spiking_backward(
    neuron: &crate::neurons::NeuronModel,
    surrogate: SurrogateKind,
    st: &SpikeTrace,
    gs: &mut [Tensor],
) {
    let n = gs[0].len();
    let th = neuron.threshold() as f64;
    let v_reset = neuron.reset_value() as f64;
    let mode = neuron.reset_mode();
    let jump = match neuron {
        crate::neurons::NeuronModel::Izhikevich(p) => p.d as f64,
        _ => 0.0,
    };
    let mut gv = vec![0f64; n];
    let mut gu = vec![0f64; n];
    for t in (0..gs.len()).rev() {
        let g = gs[t].data_mut();
        for i in 0..n {
            let h = st.charge[t][i] as f64;
            let s = st.spikes[t][i] as f64;
            let (dv_dh, dv_ds) = match mode {
                ResetMode::Hard => (1.0 - s, v_reset - h),
                ResetMode::Subtract => (1.0, -th),
            };
            let mut g_s = g[i] as f64;
            if !st.detach {
                g_s += gv[i] * dv_ds + gu[i] * jump;
            }
            let g_h = g_s * surrogate_grad(h - th, surrogate) + gv[i] * dv_dh;
            let g_u_next = gu[i];
            let j = neuron.jacobian(st.v_prev[t][i] as f64, 0.0);
            g[i] = (g_h * j.dh_dx) as f32;
            gv[i] = g_h * j.dh_dv + g_u_next * j.du_dv;
            gu[i] = g_h * j.dh_du + g_u_next * j.du_du;
        }
    }
}

/// Analytic and finite-difference derivative of one parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradProbe {
    pub layer: usize,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares BPTT gradients with central differences of the forward pass at
/// the given `(layer, param, index)` coordinates. The divisor of each
/// difference is the perturbation as stored in `f32`.
pub fn probe_gradients(
    model: &NetworkModel,
    input: &Tensor,
    target: &[f32],
    loss: super::LossKind,
    mode: ExecMode,
    coords: &[(usize, usize, usize)],
    eps: f32,
) -> Result<Vec<GradProbe>> {
    let (rec, trace) = model.forward_traced(input, mode)?;
    let (_, g_out) = super::loss_and_grad(loss, &rec, target)?;
    let mut grads = Gradients::zeros_like(model);
    model.backward(&trace, &g_out, &mut grads)?;
    let mut probe = model.clone();
    coords
        .iter()
        .map(|&(layer, param, index)| {
            let orig = model.params[layer][param].data()[index];
            let (hi, lo) = (orig + eps, orig - eps);
            let mut eval = |v: f32| -> Result<f64> {
                probe.params[layer][param].data_mut()[index] = v;
                let r = probe.forward_with(input, mode)?;
                super::sample_loss(loss, &r, target)
            };
            let f_hi = eval(hi)?;
            let f_lo = eval(lo)?;
            probe.params[layer][param].data_mut()[index] = orig;
            Ok(GradProbe {
                layer,
                param,
                index,
                analytic: grads.tensors[layer][param].data()[index] as f64,
                numeric: (f_hi - f_lo) / (hi as f64 - lo as f64),
            })
        })
        .collect()
}
