//! Membership-inference attacks: feature extraction, threshold metrics,
//! the classifier attack, and evaluation on balanced record sets.

mod mlp;
mod threshold;

pub use mlp::{AttackMlp, MlpConfig};
pub use threshold::{brute_force_threshold, select_threshold, Direction, ThresholdRule};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{avg_membrane_potential, sample_loss, Family, LossKind, NetworkModel};
use crate::numerics::Rng;
use crate::training::DataSource;

/// Lower clamp for log arguments in the logit-scaled and Mentr metrics.
pub const LOG_EPS: f64 = 1e-7;

/// Attack features of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFeatureRecord {
    pub family: Family,
    /// Fire rates (SNN) or confidences (ANN).
    pub signal: Vec<f32>,
    pub loss: f64,
    pub correct: bool,
    /// Average membrane potential of the last spiking layer (SNN only).
    pub amp: Option<Vec<f32>>,
    /// Mean logits over steps (ANN only).
    pub logits: Option<Vec<f32>>,
    pub label: u32,
    pub member: bool,
}

/// Runs `model` over every sample of `data` and records attack features.
pub fn extract_features(
    model: &NetworkModel,
    data: &dyn DataSource,
    member: bool,
    loss: LossKind,
    chunk: usize,
) -> Result<Vec<AttackFeatureRecord>> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for part in indices.chunks(chunk.max(1)) {
        for ex in data.eval_batch(part)? {
            let rec = model.forward(&ex.input)?;
            let snn = model.family == Family::Snn;
            out.push(AttackFeatureRecord {
                family: model.family,
                signal: rec.signal(),
                loss: sample_loss(loss, &rec, &ex.target)?,
                correct: rec.prediction() == ex.label as usize,
                amp: if snn { Some(avg_membrane_potential(&rec)) } else { None },
                logits: if snn { None } else { Some(rec.logits()) },
                label: ex.label,
                member,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    FireRates,
    Loss,
    PredictionCorrectness,
    Top3FireRates,
    MaxFireRate,
    LogitScaledFireRate,
    MentrFireRates,
    AvgMembranePotential,
    ConfidenceScores,
    Top3Confidences,
    MaxConfidence,
    LogitScaledConfidence,
    MentrConfidences,
    HingeLoss,
}

/// Input used by a classifier attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Full,
    Top3,
    Amp,
}

/// How a method turns records into membership decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Threshold(Direction),
    Correctness,
    Classifier(FeatureKind),
}

pub const SNN_METHODS: [AttackMethod; 8] = [
    AttackMethod::FireRates,
    AttackMethod::Loss,
    AttackMethod::PredictionCorrectness,
    AttackMethod::Top3FireRates,
    AttackMethod::MaxFireRate,
    AttackMethod::LogitScaledFireRate,
    AttackMethod::MentrFireRates,
    AttackMethod::AvgMembranePotential,
];

pub const ANN_METHODS: [AttackMethod; 8] = [
    AttackMethod::ConfidenceScores,
    AttackMethod::Loss,
    AttackMethod::PredictionCorrectness,
    AttackMethod::Top3Confidences,
    AttackMethod::MaxConfidence,
    AttackMethod::LogitScaledConfidence,
    AttackMethod::MentrConfidences,
    AttackMethod::HingeLoss,
];

impl AttackMethod {
    pub fn all_for(family: Family) -> [AttackMethod; 8] {
        match family {
            Family::Snn => SNN_METHODS,
            Family::Ann => ANN_METHODS,
        }
    }

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    /// Family the method is defined for; `None` for methods shared by both.
    pub fn family(self) -> Option<Family> {
        use AttackMethod::*;
        match self {
            Loss | PredictionCorrectness => None,
            FireRates | Top3FireRates | MaxFireRate | LogitScaledFireRate | MentrFireRates | AvgMembranePotential => {
                Some(Family::Snn)
            }
            _ => Some(Family::Ann),
        }
    }

    pub fn kind(self) -> MethodKind {
        use AttackMethod::*;
        match self {
            FireRates | ConfidenceScores => MethodKind::Classifier(FeatureKind::Full),
            Top3FireRates | Top3Confidences => MethodKind::Classifier(FeatureKind::Top3),
            AvgMembranePotential => MethodKind::Classifier(FeatureKind::Amp),
            PredictionCorrectness => MethodKind::Correctness,
            Loss | MentrFireRates | MentrConfidences => MethodKind::Threshold(Direction::Below),
            MaxFireRate | MaxConfidence | LogitScaledFireRate | LogitScaledConfidence | HingeLoss => {
                MethodKind::Threshold(Direction::Above)
            }
        }
    }

    pub fn check_family(self, family: Family) -> Result<()> {
        match self.family() {
            Some(f) if f != family => Err(Error::config(format!(
                "attack `{}` does not apply to {family:?} records",
                self.name()
            ))),
            _ => Ok(()),
        }
    }
}

fn clamp_prob(s: f32) -> f64 {
    (s as f64).clamp(LOG_EPS, 1.0)
}

/// `ln s_y - ln sum_{y' != y} s_y'` on clamped scores.
pub fn logit_scaled(signal: &[f32], label: usize) -> f64 {
    let sy = clamp_prob(signal[label]);
    let rest: f64 = signal
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, &s)| clamp_prob(s))
        .sum();
    sy.ln() - rest.max(LOG_EPS).ln()
}

/// `-(1 - s_y) ln s_y - sum_{y' != y} s_y' ln(1 - s_y')` on clamped scores.
pub fn mentr(signal: &[f32], label: usize) -> f64 {
    let sy = clamp_prob(signal[label]);
    let mut v = -(1.0 - sy) * sy.ln();
    for (i, &s) in signal.iter().enumerate() {
        if i != label {
            let s = clamp_prob(s);
            v -= s * (1.0 - s).max(LOG_EPS).ln();
        }
    }
    v
}

/// `z_y - max_{y' != y} z_y'`.
pub fn hinge(logits: &[f32], label: usize) -> f64 {
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, &z)| z as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[label] as f64 - other
}

/// Scalar metric of a threshold-based method.
pub fn metric_value(method: AttackMethod, record: &AttackFeatureRecord) -> Result<f64> {
    method.check_family(record.family)?;
    let y = record.label as usize;
    if y >= record.signal.len() {
        return Err(Error::shape(format!("label {y} outside {} classes", record.signal.len())));
    }
    use AttackMethod::*;
    let v = match method {
        Loss => record.loss,
        MaxFireRate | MaxConfidence => record.signal.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64,
        LogitScaledFireRate | LogitScaledConfidence => logit_scaled(&record.signal, y),
        MentrFireRates | MentrConfidences => mentr(&record.signal, y),
        HingeLoss => {
            let z = record
                .logits
                .as_ref()
                .ok_or_else(|| Error::config("hinge needs logits"))?;
            hinge(z, y)
        }
        _ => {
            return Err(Error::config(format!("`{}` is not a threshold attack", method.name())));
        }
    };
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("`{}` metric is {v}", method.name())));
    }
    Ok(v)
}

/// Features for a classifier attack.
pub fn classifier_features(kind: FeatureKind, record: &AttackFeatureRecord) -> Result<Vec<f32>> {
    match kind {
        FeatureKind::Full => Ok(record.signal.clone()),
        FeatureKind::Top3 => top3(&record.signal),
        FeatureKind::Amp => record
            .amp
            .clone()
            .ok_or_else(|| Error::config("membrane potential features need SNN records")),
    }
}

/// The three largest values, descending.
pub fn top3(signal: &[f32]) -> Result<Vec<f32>> {
    if signal.len() < 3 {
        return Err(Error::config(format!("top-3 features need >= 3 classes, got {}", signal.len())));
    }
    let mut v = signal.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.truncate(3);
    Ok(v)
}

/// Mean of true-positive and true-negative rates from raw counts.
pub fn balanced_accuracy_counts(tp: usize, positives: usize, tn: usize, negatives: usize) -> f64 {
    0.5 * (tp as f64 / positives as f64 + tn as f64 / negatives as f64)
}

/// Balanced accuracy of `predicted` against `actual`; both classes must be
/// present in `actual`.
pub fn balanced_accuracy(predicted: &[bool], actual: &[bool]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::shape("prediction and truth lengths differ"));
    }
    let positives = actual.iter().filter(|&&a| a).count();
    let negatives = actual.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::config("balanced accuracy needs both classes"));
    }
    let tp = predicted.iter().zip(actual).filter(|&(&p, &a)| p && a).count();
    let tn = predicted.iter().zip(actual).filter(|&(&p, &a)| !p && !a).count();
    Ok(balanced_accuracy_counts(tp, positives, tn, negatives))
}

/// An attack calibrated on shadow records.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedAttack {
    Threshold(ThresholdRule),
    Correctness,
    Classifier { kind: FeatureKind, mlp: AttackMlp },
}

/// Calibrates `method` on shadow records.
pub fn fit_attack(
    method: AttackMethod,
    shadow: &[AttackFeatureRecord],
    mlp: &MlpConfig,
    rng: &mut Rng,
) -> Result<FittedAttack> {
    if let Some(r) = shadow.first() {
        method.check_family(r.family)?;
    }
    match method.kind() {
        MethodKind::Threshold(_) => Ok(FittedAttack::Threshold(select_threshold(shadow, method)?)),
        MethodKind::Correctness => Ok(FittedAttack::Correctness),
        MethodKind::Classifier(kind) => {
            let xs = shadow
                .iter()
                .map(|r| classifier_features(kind, r))
                .collect::<Result<Vec<_>>>()?;
            let ys: Vec<bool> = shadow.iter().map(|r| r.member).collect();
            Ok(FittedAttack::Classifier {
                kind,
                mlp: AttackMlp::train(&xs, &ys, mlp, rng)?,
            })
        }
    }
}

impl FittedAttack {
    pub fn predict(&self, method: AttackMethod, record: &AttackFeatureRecord) -> Result<bool> {
        match self {
            FittedAttack::Threshold(rule) => Ok(rule.is_member(metric_value(method, record)?)),
            FittedAttack::Correctness => Ok(record.correct),
            FittedAttack::Classifier { kind, mlp } => Ok(mlp.predict(&classifier_features(*kind, record)?)? >= 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub method: AttackMethod,
    pub predictions: Vec<bool>,
    pub balanced_accuracy: f64,
    /// Threshold used, for threshold attacks.
    pub threshold: Option<f64>,
}

/// Applies a fitted attack to a balanced target record set.
pub fn run_attack(method: AttackMethod, fitted: &FittedAttack, target: &[AttackFeatureRecord]) -> Result<AttackOutcome> {
    let members = target.iter().filter(|r| r.member).count();
    if members * 2 != target.len() || target.is_empty() {
        return Err(Error::config(format!(
            "target records must be balanced, got {members} members of {}",
            target.len()
        )));
    }
    let predictions = target
        .iter()
        .map(|r| fitted.predict(method, r))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<bool> = target.iter().map(|r| r.member).collect();
    Ok(AttackOutcome {
        method,
        balanced_accuracy: balanced_accuracy(&predictions, &truth)?,
        predictions,
        threshold: match fitted {
            FittedAttack::Threshold(r) => Some(r.threshold),
            _ => None,
        },
    })
}

/// Fits on shadow records and evaluates on target records.
pub fn evaluate_attack(
    method: AttackMethod,
    shadow: &[AttackFeatureRecord],
    target: &[AttackFeatureRecord],
    mlp: &MlpConfig,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let fitted = fit_attack(method, shadow, mlp, rng)?;
    run_attack(method, &fitted, target)
}

/// Writes `membership,label,correct,loss,signal_*[,amp_*]` rows.
pub fn write_feature_csv<W: Write>(records: &[AttackFeatureRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = records.first().map_or(0, |r| r.signal.len());
    let m = records.first().and_then(|r| r.amp.as_ref()).map_or(0, Vec::len);
    let mut header: Vec<String> = ["membership", "label", "correct", "loss"].iter().map(|s| s.to_string()).collect();
    header.extend((0..n).map(|i| format!("signal_{i}")));
    header.extend((0..m).map(|i| format!("amp_{i}")));
    out.write_record(&header)?;
    for r in records {
        if r.signal.len() != n || r.amp.as_ref().map_or(0, Vec::len) != m {
            return Err(Error::shape("records have inconsistent widths"));
        }
        let mut row = vec![
            (r.member as u8).to_string(),
            r.label.to_string(),
            (r.correct as u8).to_string(),
            r.loss.to_string(),
        ];
        row.extend(r.signal.iter().map(f32::to_string));
        if let Some(a) = &r.amp {
            row.extend(a.iter().map(f32::to_string));
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<features csv>", e))
}

pub fn save_feature_csv(path: impl AsRef<Path>, records: &[AttackFeatureRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_csv(records, std::io::BufWriter::new(f))
}
