use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Disjoint index lists for the target model and the adversary's shadow model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub target_train: Vec<usize>,
    pub target_test: Vec<usize>,
    pub shadow_train: Vec<usize>,
    pub shadow_test: Vec<usize>,
}

const TRAIN_FRACTION: f64 = 0.9;

/// Shuffled per-class buckets of `pool` (one bucket when unlabeled).
fn buckets(pool: &[usize], labels: Option<&[u32]>, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut pool = pool.to_vec();
    rng.shuffle(&mut pool);
    let Some(labels) = labels else {
        return vec![pool];
    };
    let mut classes: Vec<u32> = pool.iter().map(|&i| labels[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    classes
        .iter()
        .map(|&c| pool.iter().copied().filter(|&i| labels[i] == c).collect())
        .collect()
}

/// Interleaves buckets so that every prefix is close to class-balanced.
fn round_robin(buckets: &[Vec<usize>]) -> Vec<usize> {
    let longest = buckets.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .flat_map(|r| buckets.iter().filter_map(move |b| b.get(r).copied()))
        .collect()
}

/// Alternating assignment within each bucket. The starting side flips after
/// every odd-sized bucket so the halves differ by at most one overall, and
/// the first half gets the extra item when the total is odd.
fn halve(buckets: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut a = Vec::with_capacity(buckets.len());
    let mut b = Vec::with_capacity(buckets.len());
    let mut start = 0;
    for bucket in buckets {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (i, &idx) in bucket.iter().enumerate() {
            if (i + start) % 2 == 0 {
                x.push(idx);
            } else {
                y.push(idx);
            }
        }
        start ^= bucket.len() % 2;
        a.push(x);
        b.push(y);
    }
    (a, b)
}

/// The first `h - round(0.9 h)` items of the interleaved order are test,
/// the rest train.
fn train_test(half: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let order = round_robin(half);
    let h = order.len();
    let n_train = ((TRAIN_FRACTION * h as f64).round() as usize).clamp(1, h - 1);
    let test = order[..h - n_train].to_vec();
    let train = order[h - n_train..].to_vec();
    (train, test)
}

/// Partitions `0..n` into target and shadow halves, each with train and
/// test parts.
///
/// Without `predefined_train`, each half is split 90/10 into train/test.
/// With `Some(k)`, indices `< k` form the dataset's own training pool and the
/// rest its test pool; both pools are halved between target and shadow.
/// When `labels` is given the assignment is stratified per class.
pub fn split_dataset(
    n: usize,
    labels: Option<&[u32]>,
    predefined_train: Option<usize>,
    rng: &mut Rng,
) -> Result<DatasetSplit> {
    if n < 4 {
        return Err(Error::config(format!(
            "need at least 4 samples to split, got {n}"
        )));
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::shape(format!(
                "{} labels for {n} samples",
                l.len()
            )));
        }
    }
    let split = match predefined_train {
        None => {
            let all: Vec<usize> = (0..n).collect();
            let (target, shadow) = halve(&buckets(&all, labels, rng));
            let (target_train, target_test) = train_test(&target);
            let (shadow_train, shadow_test) = train_test(&shadow);
            DatasetSplit {
                target_train,
                target_test,
                shadow_train,
                shadow_test,
            }
        }
        Some(k) => {
            if k < 2 || n - k.min(n) < 2 {
                return Err(Error::config(format!(
                    "predefined split {k}/{} leaves an empty part",
                    n.saturating_sub(k)
                )));
            }
            let train: Vec<usize> = (0..k).collect();
            let test: Vec<usize> = (k..n).collect();
            let (target_train, shadow_train) = halve(&buckets(&train, labels, rng));
            let (target_test, shadow_test) = halve(&buckets(&test, labels, rng));
            let (target_train, shadow_train) = (round_robin(&target_train), round_robin(&shadow_train));
            let (mut target_test, mut shadow_test) = (round_robin(&target_test), round_robin(&shadow_test));
            if k % 2 == 1 {
                // target already holds the odd train sample
                std::mem::swap(&mut target_test, &mut shadow_test);
            }
            DatasetSplit {
                target_train,
                target_test,
                shadow_train,
                shadow_test,
            }
        }
    };
    Ok(split)
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.target_train.len()
            + self.target_test.len()
            + self.shadow_train.len()
            + self.shadow_test.len()
    }
}
