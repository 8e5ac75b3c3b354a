use serde::{Deserialize, Serialize};

use super::{exec::mean_rows, Family, ForwardRecord};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Per-step squared error between output spikes and the target,
    /// averaged over steps and classes.
    #[default]
    Mse,
    /// Squared error between fire rates and the target, averaged over classes.
    RateMse,
    /// Cross-entropy of each step's softmax against the target, averaged
    /// over steps.
    CrossEntropy,
}

impl LossKind {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Snn => LossKind::Mse,
            Family::Ann => LossKind::CrossEntropy,
        }
    }

    pub fn applies_to(self, family: Family) -> bool {
        self.check(family).is_ok()
    }

    fn check(self, family: Family) -> Result<()> {
        match (self, family) {
            (LossKind::CrossEntropy, Family::Snn) | (LossKind::Mse | LossKind::RateMse, Family::Ann) => {
                Err(Error::config(format!("loss {self:?} does not apply to {family:?} models")))
            }
            _ => Ok(()),
        }
    }
}

/// Spike count over steps divided by `T`.
pub fn fire_rate(record: &ForwardRecord) -> Vec<f32> {
    let (t_steps, n) = (record.time_steps(), record.classes());
    let data = record.outputs.data();
    (0..n)
        .map(|i| {
            let count = (0..t_steps).filter(|t| data[t * n + i] >= 0.5).count();
            count as f32 / t_steps as f32
        })
        .collect()
}

/// Mean over steps of the recorded potentials; empty when none were recorded.
pub fn avg_membrane_potential(record: &ForwardRecord) -> Vec<f32> {
    record.potentials.as_ref().map(mean_rows).unwrap_or_default()
}

fn check_target(n: usize, target: &[f32]) -> Result<()> {
    if target.len() != n {
        return Err(Error::shape(format!(
            "target has {} entries for {n} classes",
            target.len()
        )));
    }
    Ok(())
}

/// Mean over steps and classes of `(S_t - target)^2`.
pub fn mse_one_hot(spikes: &Tensor, target: &[f32]) -> Result<f64> {
    let n = spikes.shape()[spikes.ndim() - 1];
    check_target(n, target)?;
    let total: f64 = spikes
        .data()
        .chunks_exact(n)
        .flat_map(|row| row.iter().zip(target).map(|(s, y)| ((s - y) as f64).powi(2)))
        .sum();
    Ok(total / spikes.len() as f64)
}

/// Mean over classes of `(Fr - target)^2`.
pub fn fire_rate_mse(record: &ForwardRecord, target: &[f32]) -> Result<f64> {
    check_target(record.classes(), target)?;
    let steps = mean_rows(&record.outputs);
    let total: f64 = steps.iter().zip(target).map(|(r, y)| ((r - y) as f64).powi(2)).sum();
    Ok(total / target.len() as f64)
}

const LOG_FLOOR: f64 = 1e-12;

/// `-sum_i target_i * ln(confidence_i)`, with confidences floored at 1e-12.
pub fn cross_entropy(confidences: &[f32], target: &[f32]) -> Result<f64> {
    check_target(confidences.len(), target)?;
    Ok(confidences
        .iter()
        .zip(target)
        .filter(|(_, &y)| y != 0.0)
        .map(|(&c, &y)| -(y as f64) * (c as f64).max(LOG_FLOOR).ln())
        .sum())
}

fn log_softmax(z: &[f32]) -> Vec<f64> {
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = z.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|&v| v as f64 - lse).collect()
}

/// Loss of one sample and its gradient with respect to `record.outputs`.
pub fn loss_and_grad(kind: LossKind, record: &ForwardRecord, target: &[f32]) -> Result<(f64, Tensor)> {
    kind.check(record.family)?;
    let (t_steps, n) = (record.time_steps(), record.classes());
    check_target(n, target)?;
    let out = record.outputs.data();
    let mut grad = Tensor::zeros(&[t_steps, n]);
    let g = grad.data_mut();
    let loss = match kind {
        LossKind::Mse => {
            let scale = 2.0 / (t_steps * n) as f64;
            for (i, (gv, &s)) in g.iter_mut().zip(out).enumerate() {
                *gv = (scale * (s - target[i % n]) as f64) as f32;
            }
            mse_one_hot(&record.outputs, target)?
        }
        LossKind::RateMse => {
            let rates = mean_rows(&record.outputs);
            let scale = 2.0 / (n * t_steps) as f64;
            for (i, gv) in g.iter_mut().enumerate() {
                *gv = (scale * (rates[i % n] - target[i % n]) as f64) as f32;
            }
            fire_rate_mse(record, target)?
        }
        LossKind::CrossEntropy => {
            let mut total = 0.0;
            for t in 0..t_steps {
                let ls = log_softmax(&out[t * n..(t + 1) * n]);
                for i in 0..n {
                    total -= target[i] as f64 * ls[i];
                    g[t * n + i] = ((ls[i].exp() - target[i] as f64) / t_steps as f64) as f32;
                }
            }
            total / t_steps as f64
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{kind:?} loss is {loss}")));
    }
    Ok((loss, grad))
}

pub fn sample_loss(kind: LossKind, record: &ForwardRecord, target: &[f32]) -> Result<f64> {
    loss_and_grad(kind, record, target).map(|(l, _)| l)
}
