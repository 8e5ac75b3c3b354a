use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::training::{OptimizerKind, OptimizerState};

pub const HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

/// `d -> 64 -> 64 -> 1` ReLU network with a sigmoid output, on features
/// standardized with the training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackMlp {
    mean: Vec<f32>,
    std: Vec<f32>,
    /// `[w1, b1, w2, b2, w3, b3]`.
    pub(super) params: Vec<Tensor>,
}

pub(super) struct Activations {
    x: Vec<f32>,
    h1: Vec<f32>,
    h2: Vec<f32>,
    p: f32,
}

fn dense(w: &Tensor, b: &Tensor, x: &[f32], relu: bool) -> Vec<f32> {
    let n = b.len();
    let d = x.len();
    let wd = w.data();
    (0..n)
        .map(|o| {
            let row = &wd[o * d..(o + 1) * d];
            let z = b.data()[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AttackMlp {
    pub fn new(inputs: usize, rng: &mut Rng) -> Self {
        let shapes = [
            vec![HIDDEN, inputs],
            vec![HIDDEN],
            vec![HIDDEN, HIDDEN],
            vec![HIDDEN],
            vec![1, HIDDEN],
            vec![1],
        ];
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let fan_in = shapes[i - i % 2][1];
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = s.iter().product();
                let data = (0..n).map(|_| rng.uniform_range(-bound, bound) as f32).collect();
                Tensor::new(s.clone(), data).expect("static shape")
            })
            .collect();
        Self {
            mean: vec![0.0; inputs],
            std: vec![1.0; inputs],
            params,
        }
    }

    pub fn inputs(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.inputs() {
            return Err(Error::shape(format!("attack MLP expects {} features, got {}", self.inputs(), x.len())));
        }
        Ok(x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect())
    }

    pub(super) fn run(&self, x: Vec<f32>) -> Activations {
        let p = &self.params;
        let h1 = dense(&p[0], &p[1], &x, true);
        let h2 = dense(&p[2], &p[3], &h1, true);
        let z = dense(&p[4], &p[5], &h2, false)[0];
        Activations { x, h1, h2, p: sigmoid(z) }
    }

    /// Membership probability.
    pub fn predict(&self, features: &[f32]) -> Result<f32> {
        Ok(self.run(self.standardize(features)?).p)
    }

    /// Adds the binary cross-entropy gradient of one sample into `grads`.
    pub(super) fn accumulate(&self, a: &Activations, member: bool, grads: &mut [Tensor]) {
        let p = &self.params;
        let dz = a.p - if member { 1.0 } else { 0.0 };
        let mut d2 = vec![0f32; HIDDEN];
        for (j, d) in d2.iter_mut().enumerate() {
            grads[4].data_mut()[j] += dz * a.h2[j];
            *d = if a.h2[j] > 0.0 { dz * p[4].data()[j] } else { 0.0 };
        }
        grads[5].data_mut()[0] += dz;
        let mut d1 = vec![0f32; HIDDEN];
        for (o, &g) in d2.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grads[2].data_mut()[o * HIDDEN..(o + 1) * HIDDEN];
            for (i, r) in row.iter_mut().enumerate() {
                *r += g * a.h1[i];
                d1[i] += g * p[2].data()[o * HIDDEN + i];
            }
            grads[3].data_mut()[o] += g;
        }
        let d = a.x.len();
        for (o, g) in d1.iter().enumerate() {
            if a.h1[o] <= 0.0 {
                continue;
            }
            let row = &mut grads[0].data_mut()[o * d..(o + 1) * d];
            for (r, x) in row.iter_mut().zip(&a.x) {
                *r += g * x;
            }
            grads[1].data_mut()[o] += g;
        }
    }

    /// Trains a fresh classifier with Adam and binary cross-entropy.
    pub fn train(features: &[Vec<f32>], members: &[bool], cfg: &MlpConfig, rng: &mut Rng) -> Result<Self> {
        if features.len() != members.len() || features.is_empty() {
            return Err(Error::shape("attack training set is empty or misaligned"));
        }
        let pos = members.iter().filter(|&&m| m).count();
        if pos == 0 || pos == members.len() {
            return Err(Error::config("attack training needs members and non-members"));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::config("attack MLP epochs and batch size must be >= 1"));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::shape("attack features have inconsistent widths"));
        }
        let mut mlp = Self::new(d, rng);
        let n = features.len() as f64;
        for j in 0..d {
            let mean = features.iter().map(|f| f[j] as f64).sum::<f64>() / n;
            let var = features.iter().map(|f| (f[j] as f64 - mean).powi(2)).sum::<f64>() / n;
            mlp.mean[j] = mean as f32;
            mlp.std[j] = if var.sqrt() > 1e-6 { var.sqrt() as f32 } else { 1.0 };
        }
        let xs: Vec<Vec<f32>> = features.iter().map(|f| mlp.standardize(f)).collect::<Result<_>>()?;

        let mut opt = OptimizerState::new(OptimizerKind::adam(cfg.lr));
        let mut grads: Vec<Tensor> = mlp.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for batch in order.chunks(cfg.batch_size) {
                grads.iter_mut().for_each(|g| g.fill(0.0));
                for &i in batch {
                    let a = mlp.run(xs[i].clone());
                    mlp.accumulate(&a, members[i], &mut grads);
                }
                let scale = 1.0 / batch.len() as f32;
                grads.iter_mut().for_each(|g| g.scale(scale));
                let mut ps: Vec<&mut Tensor> = mlp.params.iter_mut().collect();
                let gs: Vec<&Tensor> = grads.iter().collect();
                opt.step(&mut ps, &gs)?;
            }
        }
        if !mlp.params.iter().all(Tensor::all_finite) {
            return Err(Error::NonFinite("attack MLP parameters diverged".into()));
        }
        Ok(mlp)
    }
}
