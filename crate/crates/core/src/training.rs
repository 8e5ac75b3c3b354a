//! Optimizers, the mini-batch training loop, and evaluation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{loss_and_grad, ExecMode, Gradients, LossKind, NetworkModel};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam(1e-3)
    }
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr, momentum: 0.0 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::Sgd { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr() > 0.0) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr())));
        }
        match *self {
            OptimizerKind::Adam { beta1, beta2, eps, .. } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::config("Adam needs betas in [0, 1) and eps > 0"));
                }
            }
            OptimizerKind::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::config("SGD momentum must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer with its per-tensor moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub steps: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    fn ensure_buffers(&mut self, params: &[&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
        Ok(())
    }

    /// One update of `params` by `grads`, tensor by tensor.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::shape("gradients do not match the parameters"));
        }
        self.ensure_buffers(params)?;
        self.steps += 1;
        match self.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, p) in params.iter_mut().enumerate() {
                    let g = grads[k].data();
                    let m = self.first[k].data_mut();
                    let v = self.second[k].data_mut();
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        let gi = g[i] as f64;
                        let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
                        let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
                        m[i] = mi as f32;
                        v[i] = vi as f32;
                        let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                        *w = (*w as f64 - update) as f32;
                    }
                }
            }
            OptimizerKind::Sgd { lr, momentum } => {
                for (k, p) in params.iter_mut().enumerate() {
                    let g = grads[k].data();
                    let buf = self.first[k].data_mut();
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        let b = momentum * buf[i] as f64 + g[i] as f64;
                        buf[i] = b as f32;
                        *w = (*w as f64 - lr * b) as f32;
                    }
                }
            }
        }
        Ok(())
    }

    /// Updates every trainable parameter of `model`.
    pub fn step_model(&mut self, model: &mut NetworkModel, grads: &Gradients) -> Result<()> {
        let mut ps = Vec::new();
        let mut gs = Vec::new();
        for (li, (layer, params)) in model.layers.iter().zip(model.params.iter_mut()).enumerate() {
            for (pi, p) in params.iter_mut().enumerate() {
                if layer.trainable(pi) {
                    ps.push(p);
                    gs.push(&grads.tensors[li][pi]);
                }
            }
        }
        self.step(&mut ps, &gs)
    }
}

/// One training or evaluation input with its (possibly soft) target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `[T, ...]` model input.
    pub input: Tensor,
    pub target: Vec<f32>,
    pub label: u32,
}

/// Supplies mini-batches. `batch` may return more examples than indices,
/// e.g. one example per frame.
pub trait DataSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> u32;

    /// Examples for `indices`; training-time augmentation when `augment`.
    fn batch(&self, indices: &[usize], augment: bool, rng: &mut Rng) -> Result<Vec<Example>>;

    /// Examples for evaluation: one per sample, in order.
    fn eval_batch(&self, indices: &[usize]) -> Result<Vec<Example>> {
        self.batch(indices, false, &mut Rng::new(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Defaults to MSE for SNNs and cross-entropy for ANNs.
    pub loss: Option<LossKind>,
    pub clip_norm: Option<f64>,
    /// Evaluate train and test parts after every epoch.
    pub track_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            optimizer: OptimizerKind::default(),
            loss: None,
            clip_norm: None,
            track_metrics: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_norm must be > 0"));
            }
        }
        self.optimizer.validate()
    }

    pub fn loss_for(&self, model: &NetworkModel) -> LossKind {
        self.loss.unwrap_or_else(|| LossKind::default_for(model.family))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy (argmax of fire rates or confidences, ties to the lowest class)
/// and mean loss over every sample of `data`.
pub fn evaluate(model: &NetworkModel, data: &dyn DataSource, loss: LossKind, chunk: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty part"));
    }
    let mut correct = 0usize;
    let mut total_loss = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for part in indices.chunks(chunk.max(1)) {
        for ex in data.eval_batch(part)? {
            let rec = model.forward(&ex.input)?;
            if rec.prediction() == ex.label as usize {
                correct += 1;
            }
            total_loss += loss_and_grad(loss, &rec, &ex.target)?.0;
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: total_loss / n,
    })
}

/// Trains `model` in place with shuffled mini-batches and returns the
/// per-epoch metrics. `on_epoch` runs after every epoch with the current
/// model.
pub fn train_with_callback(
    model: &mut NetworkModel,
    train: &dyn DataSource,
    test: Option<&dyn DataSource>,
    cfg: &TrainConfig,
    rng: &Rng,
    on_epoch: &mut dyn FnMut(&NetworkModel, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("training part is empty"));
    }
    let loss_kind = cfg.loss_for(model);
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut grads = Gradients::zeros_like(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_rng = rng.split(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        epoch_rng.shuffle(&mut order);
        let mut running = 0.0;
        let mut seen = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut aug_rng = epoch_rng.split(bi as u64 + 1);
            let batch = train.batch(idx, true, &mut aug_rng)?;
            grads.clear();
            let mut batch_loss = 0.0;
            for ex in &batch {
                let (rec, trace) = model.forward_traced(&ex.input, ExecMode::Hard).map_err(|e| diverged(e, epoch, bi))?;
                let (l, g) = loss_and_grad(loss_kind, &rec, &ex.target).map_err(|e| diverged(e, epoch, bi))?;
                batch_loss += l;
                model.backward(&trace, &g, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            if !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    loss: batch_loss,
                });
            }
            if let Some(max) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale((max / norm) as f32);
                }
            }
            opt.step_model(model, &grads)?;
            if !model.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    loss: batch_loss,
                });
            }
            running += batch_loss;
            seen += batch.len();
        }
        let metrics = if cfg.track_metrics {
            let tr = evaluate(model, train, loss_kind, cfg.batch_size)?;
            let te = match test {
                Some(t) => evaluate(model, t, loss_kind, cfg.batch_size)?,
                None => Evaluation {
                    accuracy: f64::NAN,
                    loss: f64::NAN,
                },
            };
            EpochMetrics {
                epoch,
                train_loss: tr.loss,
                test_loss: te.loss,
                train_acc: tr.accuracy,
                test_acc: te.accuracy,
            }
        } else {
            EpochMetrics {
                epoch,
                train_loss: running / seen as f64,
                test_loss: f64::NAN,
                train_acc: f64::NAN,
                test_acc: f64::NAN,
            }
        };
        on_epoch(model, &metrics)?;
        history.push(metrics);
    }
    Ok(history)
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    if e.is_numerical() {
        Error::Divergence {
            epoch,
            batch,
            loss: f64::NAN,
        }
    } else {
        e
    }
}

pub fn train_model(
    mut model: NetworkModel,
    train: &dyn DataSource,
    test: Option<&dyn DataSource>,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(NetworkModel, Vec<EpochMetrics>)> {
    let history = train_with_callback(&mut model, train, test, cfg, rng, &mut |_, _| Ok(()))?;
    Ok((model, history))
}

/// Writes `epoch,train_loss,test_loss,train_acc,test_acc` rows.
pub fn write_epoch_csv(path: impl AsRef<Path>, history: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for m in history {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// In-memory examples, used for small synthetic tasks and tests.
#[derive(Debug, Clone)]
pub struct TensorSource {
    pub examples: Vec<Example>,
}

impl TensorSource {
    /// Wraps `[T, ...]` inputs with one-hot targets.
    pub fn new(inputs: Vec<Tensor>, labels: &[u32], classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape("inputs and labels differ in length"));
        }
        let examples = inputs
            .into_iter()
            .zip(labels)
            .map(|(input, &label)| {
                if label as usize >= classes {
                    return Err(Error::shape(format!("label {label} exceeds {classes} classes")));
                }
                Ok(Example {
                    input,
                    target: crate::augment::one_hot(label, classes),
                    label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { examples })
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }
}

impl DataSource for TensorSource {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn label(&self, index: usize) -> u32 {
        self.examples[index].label
    }

    fn batch(&self, indices: &[usize], _augment: bool, _rng: &mut Rng) -> Result<Vec<Example>> {
        Ok(indices.iter().map(|&i| self.examples[i].clone()).collect())
    }
}

/// Renders metrics as a CSV string (header included).
pub fn epoch_csv_string(history: &[EpochMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in history {
        w.serialize(m)?;
    }
    let mut bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
    bytes.flush().ok();
    String::from_utf8(bytes).map_err(|e| Error::parse("csv", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Family, PresetOptions};
    use crate::numerics::Rng;

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [3.0f32, -0.5, 1e-3] {
            let mut p = Tensor::from_vec(vec![1.0]);
            let grad = Tensor::from_vec(vec![g]);
            let mut opt = OptimizerState::new(OptimizerKind::adam(1e-3));
            opt.step(&mut [&mut p], &[&grad]).unwrap();
            let update = (p.data()[0] - 1.0) as f64;
            assert!((update * g.signum() as f64 + 1e-3).abs() <= 1e-6, "{update}");
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = Tensor::from_vec(vec![1.0]);
        let mut opt = OptimizerState::new(OptimizerKind::sgd(0.1));
        opt.step(&mut [&mut p], &[&Tensor::from_vec(vec![2.0])]).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::adam(1e-3), OptimizerKind::Sgd { lr: 0.1, momentum: 0.9 }] {
            let mut p = Tensor::from_vec(vec![0.3, -2.0]);
            let mut opt = OptimizerState::new(kind);
            for _ in 0..3 {
                opt.step(&mut [&mut p], &[&Tensor::zeros(&[2])]).unwrap();
            }
            assert_eq!(p.data(), &[0.3, -2.0]);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut opt = OptimizerState::new(OptimizerKind::adam(1e-3));
        assert!(opt.step(&mut [&mut p], &[&Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let lr = TrainConfig {
            optimizer: OptimizerKind::sgd(0.0),
            ..TrainConfig::default()
        };
        assert!(lr.validate().is_err());
        let json = r#"{"epochs": 5, "optimizer": {"kind": "adam", "lr": 0.01}}"#;
        let c: TrainConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.optimizer, OptimizerKind::adam(0.01));
        assert_eq!(c.batch_size, 8);
    }

    /// Two Gaussian blobs in 4-D.
    fn blobs(n: usize, seed: u64) -> TensorSource {
        let mut rng = Rng::new(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u32;
            let centre = if y == 0 { 0.2 } else { 0.8 };
            let x: Vec<f32> = (0..4).map(|_| (centre + 0.1 * rng.normal()) as f32).collect();
            inputs.push(Tensor::new(vec![1, 4], x).unwrap());
            labels.push(y);
        }
        TensorSource::new(inputs, &labels, 2).unwrap()
    }

    fn mlp(family: Family, seed: u64) -> NetworkModel {
        NetworkModel::from_preset("mlp-tiny", family, &[4], 2, 1, &PresetOptions::default(), &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn loss_decreases_on_separable_toy() {
        let data = blobs(40, 1);
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let (_, hist) = train_model(mlp(Family::Ann, 3), &data, None, &cfg, &Rng::new(4)).unwrap();
        assert!(hist.last().unwrap().train_loss < hist[0].train_loss);
        assert!(hist.last().unwrap().train_acc >= 0.95);
    }

    #[test]
    fn training_is_deterministic_and_isolated() {
        let data = blobs(24, 2);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (a, ha) = train_model(mlp(Family::Ann, 5), &data, Some(&data), &cfg, &Rng::new(9)).unwrap();
        // an unrelated run in between must not leak state
        let _ = train_model(mlp(Family::Ann, 6), &data, None, &cfg, &Rng::new(1)).unwrap();
        let (b, hb) = train_model(mlp(Family::Ann, 5), &data, Some(&data), &cfg, &Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn evaluation_is_order_invariant() {
        let data = blobs(30, 7);
        let m = mlp(Family::Ann, 1);
        let e1 = evaluate(&m, &data, LossKind::CrossEntropy, 8).unwrap();
        let rev: Vec<usize> = (0..30).rev().collect();
        let e2 = evaluate(&m, &data.subset(&rev), LossKind::CrossEntropy, 8).unwrap();
        assert_eq!(e1.accuracy, e2.accuracy);
        assert!((e1.loss - e2.loss).abs() < 1e-9);
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let data = blobs(8, 3);
        let mut m = mlp(Family::Ann, 0);
        m.params[1][0].data_mut()[0] = f32::NAN;
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        match train_model(m, &data, None, &cfg, &Rng::new(0)) {
            Err(Error::Divergence { epoch: 0, batch: 0, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn epoch_csv_header() {
        let h = vec![EpochMetrics {
            epoch: 0,
            train_loss: 1.0,
            test_loss: 2.0,
            train_acc: 0.5,
            test_acc: 0.25,
        }];
        let s = epoch_csv_string(&h).unwrap();
        assert!(s.starts_with("epoch,train_loss,test_loss,train_acc,test_acc\n"));
    }
}
