use serde::{Deserialize, Serialize};

use super::{balanced_accuracy, balanced_accuracy_counts, metric_value, AttackFeatureRecord, AttackMethod, MethodKind};
use crate::error::{Error, Result};

/// Side of the threshold that is predicted to be a member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Member iff metric < t.
    Below,
    /// Member iff metric > t.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub method: AttackMethod,
    pub direction: Direction,
    pub threshold: f64,
    /// Balanced accuracy on the shadow records the rule was fitted on.
    pub shadow_accuracy: f64,
}

impl ThresholdRule {
    pub fn is_member(&self, metric: f64) -> bool {
        match self.direction {
            Direction::Below => metric < self.threshold,
            Direction::Above => metric > self.threshold,
        }
    }
}

fn direction_of(method: AttackMethod) -> Result<Direction> {
    match method.kind() {
        MethodKind::Threshold(d) => Ok(d),
        _ => Err(Error::config(format!("`{}` is not a threshold attack", method.name()))),
    }
}

fn metrics(records: &[AttackFeatureRecord], method: AttackMethod) -> Result<(Vec<f64>, Vec<bool>)> {
    let m = records.iter().map(|r| metric_value(method, r)).collect::<Result<Vec<_>>>()?;
    let members: Vec<bool> = records.iter().map(|r| r.member).collect();
    let pos = members.iter().filter(|&&b| b).count();
    if pos == 0 || pos == members.len() {
        return Err(Error::config("shadow records must contain members and non-members"));
    }
    Ok((m, members))
}

/// Candidate thresholds in ascending order: -inf, midpoints of adjacent
/// sorted unique values, +inf.
pub fn candidates(values: &[f64]) -> Vec<f64> {
    let mut u = values.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut c = Vec::with_capacity(u.len() + 1);
    c.push(f64::NEG_INFINITY);
    c.extend(u.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    c.push(f64::INFINITY);
    c
}

/// Picks the candidate with the highest shadow balanced accuracy, smallest
/// threshold on ties, in one sorted sweep.
pub fn select_threshold(shadow: &[AttackFeatureRecord], method: AttackMethod) -> Result<ThresholdRule> {
    let direction = direction_of(method)?;
    let (values, members) = metrics(shadow, method)?;
    let positives = members.iter().filter(|&&b| b).count();
    let negatives = members.len() - positives;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let cands = candidates(&values);

    // counts of members / non-members strictly below each candidate
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut k = 0usize;
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    for &t in &cands {
        while k < order.len() && values[order[k]] < t {
            if members[order[k]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            k += 1;
        }
        let ba = match direction {
            Direction::Below => balanced_accuracy_counts(pos_below, positives, negatives - neg_below, negatives),
            Direction::Above => {
                // members strictly above t; equal values are never exactly at a midpoint
                let (mut pa, mut na) = (positives - pos_below, negatives - neg_below);
                let mut j = k;
                while j < order.len() && values[order[j]] == t {
                    if members[order[j]] {
                        pa -= 1;
                    } else {
                        na -= 1;
                    }
                    j += 1;
                }
                balanced_accuracy_counts(pa, positives, negatives - na, negatives)
            }
        };
        if ba > best.0 {
            best = (ba, t);
        }
    }
    Ok(ThresholdRule {
        method,
        direction,
        threshold: best.1,
        shadow_accuracy: best.0,
    })
}

/// Reference implementation: evaluates every candidate by direct
/// prediction.
pub fn brute_force_threshold(shadow: &[AttackFeatureRecord], method: AttackMethod) -> Result<ThresholdRule> {
    let direction = direction_of(method)?;
    let (values, members) = metrics(shadow, method)?;
    let mut best: Option<ThresholdRule> = None;
    for t in candidates(&values) {
        let rule = ThresholdRule {
            method,
            direction,
            threshold: t,
            shadow_accuracy: 0.0,
        };
        let pred: Vec<bool> = values.iter().map(|&v| rule.is_member(v)).collect();
        let ba = balanced_accuracy(&pred, &members)?;
        if best.as_ref().is_none_or(|b| ba > b.shadow_accuracy) {
            best = Some(ThresholdRule {
                shadow_accuracy: ba,
                ..rule
            });
        }
    }
    best.ok_or_else(|| Error::config("no threshold candidates"))
}
