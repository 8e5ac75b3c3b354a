use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::attacks::AttackMethod;
use crate::error::{Error, Result};
use crate::netmodel::{Family, NetworkModel, Origin};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub method: AttackMethod,
    pub balanced_accuracy: f64,
    /// Fitted threshold; absent for non-threshold attacks and infinite
    /// thresholds.
    pub threshold: Option<f64>,
}

impl AttackResult {
    pub fn new(method: AttackMethod, balanced_accuracy: f64, threshold: Option<f64>) -> Self {
        Self {
            method,
            balanced_accuracy,
            threshold: threshold.filter(|t| t.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub attacks: Vec<AttackResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub family: Family,
    pub origin: Origin,
    pub preset: String,
    pub time_steps: usize,
    pub target_train_acc: f64,
    pub target_test_acc: f64,
    pub shadow_train_acc: f64,
    pub shadow_test_acc: f64,
    /// Target train accuracy minus target test accuracy.
    pub gap: f64,
    /// Members (and, equally, non-members) in each evaluation set.
    pub eval_size: usize,
    pub attacks: Vec<AttackResult>,
    pub highest_attack: AttackMethod,
    pub highest_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochReport>,
}

impl ExperimentReport {
    pub(super) fn new(
        cfg: &ExperimentConfig,
        model: &NetworkModel,
        [target_train_acc, target_test_acc, shadow_train_acc, shadow_test_acc]: [f64; 4],
        eval_size: usize,
        attacks: Vec<AttackResult>,
        epochs: Vec<EpochReport>,
    ) -> Result<Self> {
        let best = attacks
            .iter()
            .fold(None::<&AttackResult>, |b, a| match b {
                Some(b) if b.balanced_accuracy >= a.balanced_accuracy => Some(b),
                _ => Some(a),
            })
            .ok_or_else(|| Error::config("report has no attacks"))?;
        Ok(Self {
            name: cfg.name.clone(),
            seed: cfg.seed,
            family: model.family,
            origin: model.origin,
            preset: cfg.model.preset.clone(),
            time_steps: cfg.model.time_steps,
            target_train_acc,
            target_test_acc,
            shadow_train_acc,
            shadow_test_acc,
            gap: target_train_acc - target_test_acc,
            eval_size,
            highest_attack: best.method,
            highest_accuracy: best.balanced_accuracy,
            attacks,
            epochs,
        })
    }

    pub fn accuracy_of(&self, method: AttackMethod) -> Option<f64> {
        self.attacks.iter().find(|a| a.method == method).map(|a| a.balanced_accuracy)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub attacks_csv: PathBuf,
    pub epochs_csv: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_at(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// Writes `report.json`, `attacks.csv` (one row per attack) and, when
/// epochs were tracked, `epochs.csv` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<ReportPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    write(&json, &report.to_json()?)?;

    let attacks_csv = dir.join("attacks.csv");
    let mut w = csv_at(&attacks_csv)?;
    w.write_record(["method", "balanced_accuracy", "threshold"])?;
    for a in &report.attacks {
        w.write_record([
            a.method.name(),
            a.balanced_accuracy.to_string(),
            a.threshold.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&attacks_csv, e))?;

    let epochs_csv = if report.epochs.is_empty() {
        None
    } else {
        let path = dir.join("epochs.csv");
        let mut w = csv_at(&path)?;
        let mut header: Vec<String> = ["epoch", "train_loss", "test_loss", "train_acc", "test_acc"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(report.epochs[0].attacks.iter().map(|a| a.method.name()));
        w.write_record(&header)?;
        for e in &report.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.test_loss.to_string(),
                e.train_acc.to_string(),
                e.test_acc.to_string(),
            ];
            row.extend(e.attacks.iter().map(|a| a.balanced_accuracy.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Some(path)
    };
    Ok(ReportPaths {
        json,
        attacks_csv,
        epochs_csv,
    })
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
