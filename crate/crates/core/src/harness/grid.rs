use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{gap_trend, run_experiment, run_experiment_to_dir, ExperimentConfig, ExperimentReport};
use crate::error::{Error, Result};

/// A base experiment and a list of partial overrides, each deep-merged into
/// the base to form one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub base: ExperimentConfig,
    pub variants: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub reports: Vec<ExperimentReport>,
    /// Gap vs best-attack rank correlation, when defined.
    pub gap_trend: Option<f64>,
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

impl GridConfig {
    /// Experiment configs of every grid point; unnamed variants are named
    /// `<base>-<index>`.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        if self.variants.is_empty() {
            return Err(Error::config("grid has no variants"));
        }
        let base = serde_json::to_value(&self.base)?;
        self.variants
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut cfg = base.clone();
                merge(&mut cfg, v);
                if v.get("name").is_none() {
                    cfg["name"] = Value::String(format!("{}-{i}", self.base.name));
                }
                let cfg: ExperimentConfig = serde_json::from_value(cfg)?;
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

/// Runs the grid points concurrently; reports keep variant order. With
/// `out_dir`, each report goes to `out_dir/<name>/` and a `grid.csv`
/// summary is written.
pub fn run_grid(grid: &GridConfig, out_dir: Option<&Path>) -> Result<GridOutcome> {
    let configs = grid.expand()?;
    let reports = configs
        .par_iter()
        .map(|cfg| {
            let r = match out_dir {
                Some(dir) => run_experiment_to_dir(cfg, dir.join(&cfg.name))?.0,
                None => run_experiment(cfg)?,
            };
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("grid point"))?;
    let trend = if reports.len() >= 3 { gap_trend(&reports).ok() } else { None };
    if let Some(dir) = out_dir {
        let path = dir.join("grid.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["name", "target_train_acc", "target_test_acc", "gap", "highest_attack", "highest_accuracy"])?;
        for r in &reports {
            w.write_record([
                r.name.clone(),
                r.target_train_acc.to_string(),
                r.target_test_acc.to_string(),
                r.gap.to_string(),
                r.highest_attack.name(),
                r.highest_accuracy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(GridOutcome {
        reports,
        gap_trend: trend,
    })
}
