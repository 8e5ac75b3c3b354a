//! Experiment orchestration: data, target and shadow models, attacks,
//! reports, and grids of experiments.

mod data;
mod grid;
mod report;
mod stats;

pub use data::{Dataset, DatasetSpec, InputMode, PartSource, Samples};
pub use grid::{run_grid, GridConfig, GridOutcome};
pub use report::{emit_report, read_report, AttackResult, EpochReport, ExperimentReport, ReportPaths};
pub use stats::{gap_trend, spearman};

pub use crate::attacks::balanced_accuracy;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    extract_features, fit_attack, run_attack, save_feature_csv, AttackFeatureRecord, AttackMethod, MlpConfig,
};
use crate::augment::AugmentPolicy;
use crate::conversion::{convert_ann_to_snn, ConversionConfig};
use crate::error::{Error, Result};
use crate::eventdata::{split_dataset, DatasetSplit};
use crate::netmodel::{Family, LossKind, NetworkModel, PresetOptions};
use crate::numerics::Rng;
use crate::training::{evaluate, train_with_callback, EpochMetrics, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub preset: String,
    pub family: Family,
    pub time_steps: usize,
    pub options: PresetOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            preset: "cnn-tiny".into(),
            family: Family::Snn,
            time_steps: 8,
            options: PresetOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Backprop,
    /// Train an ANN, then convert it.
    Conversion {
        #[serde(default)]
        conversion: ConversionConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub strategy: Strategy,
    pub train: TrainConfig,
    /// Skip training; attack freshly initialized models.
    pub evaluation_only: bool,
    pub augment: AugmentPolicy,
    /// Defaults to all eight methods of the attacked family.
    pub attacks: Option<Vec<AttackMethod>>,
    pub attack_mlp: MlpConfig,
    /// Shadow models trained on the shadow data; their records are pooled.
    pub shadow_models: usize,
    /// Attack the model after every training epoch.
    pub track_epochs: bool,
    pub epoch_attacks: Vec<AttackMethod>,
    /// Write target and shadow feature CSVs next to the report.
    pub dump_features: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            strategy: Strategy::Backprop,
            train: TrainConfig::default(),
            evaluation_only: false,
            augment: AugmentPolicy::default(),
            attacks: None,
            attack_mlp: MlpConfig::default(),
            shadow_models: 1,
            track_epochs: false,
            epoch_attacks: vec![AttackMethod::Loss, AttackMethod::PredictionCorrectness],
            dump_features: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Family of the model that is attacked.
    pub fn attacked_family(&self) -> Family {
        match self.strategy {
            Strategy::Backprop => self.model.family,
            Strategy::Conversion { .. } => Family::Snn,
        }
    }

    pub fn attack_methods(&self) -> Vec<AttackMethod> {
        self.attacks
            .clone()
            .unwrap_or_else(|| AttackMethod::all_for(self.attacked_family()).to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.model.time_steps == 0 {
            return Err(Error::config("time steps must be >= 1"));
        }
        if let Strategy::Conversion { conversion } = &self.strategy {
            conversion.validate()?;
            if self.model.family != Family::Ann {
                return Err(Error::config("conversion needs an ANN training stage: set model.family to ANN"));
            }
            if self.track_epochs {
                return Err(Error::config("per-epoch tracking applies to backprop training only"));
            }
        }
        if self.shadow_models == 0 {
            return Err(Error::config("at least one shadow model is required"));
        }
        let fam = self.attacked_family();
        let methods = self.attack_methods();
        if methods.is_empty() {
            return Err(Error::config("no attacks requested"));
        }
        for m in methods.iter().chain(self.track_epochs.then_some(&self.epoch_attacks).into_iter().flatten()) {
            m.check_family(fam)?;
        }
        Ok(())
    }
}

/// Balanced evaluation indices: equal-size samples of a train and a test
/// part (the smaller side sets the size).
fn balanced_parts(train: &[usize], test: &[usize], rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let k = train.len().min(test.len());
    let pick = |v: &[usize], rng: &mut Rng| {
        let mut idx = rng.sample_indices(v.len(), k);
        idx.sort_unstable();
        idx.into_iter().map(|i| v[i]).collect::<Vec<_>>()
    };
    (pick(train, rng), pick(test, rng))
}

/// A trained (or converted) model and how to present data to it.
struct Trained {
    model: NetworkModel,
    mode: InputMode,
    time_steps: usize,
    history: Vec<EpochMetrics>,
    checkpoints: Vec<NetworkModel>,
}

struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    data: Dataset,
    input_shape: Vec<usize>,
    rng: Rng,
}

impl<'a> Pipeline<'a> {
    fn train_mode(&self) -> InputMode {
        match self.cfg.model.family {
            Family::Snn => InputMode::Spiking,
            Family::Ann => InputMode::Ann,
        }
    }

    fn loss(&self, family: Family) -> LossKind {
        match (self.cfg.train.loss, family) {
            (Some(l), f) if l.applies_to(f) => l,
            _ => LossKind::default_for(family),
        }
    }

    /// Trains one model on `train`/`test` indices; `stream` separates the
    /// randomness of different models.
    fn build(
        &self,
        train: &[usize],
        test: &[usize],
        stream: u64,
        on_epoch: &mut dyn FnMut(usize, &NetworkModel) -> Result<Vec<AttackResult>>,
    ) -> Result<(Trained, Vec<Vec<AttackResult>>)> {
        let cfg = self.cfg;
        let rng = self.rng.split(stream);
        let mut model = NetworkModel::from_preset(
            &cfg.model.preset,
            cfg.model.family,
            &self.input_shape,
            self.data.classes,
            cfg.model.time_steps,
            &cfg.model.options,
            &mut rng.split(0),
        )?;
        let t = cfg.model.time_steps;
        let mode = self.train_mode();
        let train_src = PartSource::new(&self.data, train, mode, t, &cfg.augment)?;
        let test_src = PartSource::plain(&self.data, test, mode, t)?;
        let mut history = Vec::new();
        let mut checkpoints = Vec::new();
        let mut curves = Vec::new();
        if !cfg.evaluation_only {
            let mut tc = cfg.train.clone();
            tc.track_metrics = cfg.track_epochs;
            tc.loss = Some(self.loss(cfg.model.family));
            let track = cfg.track_epochs;
            history = train_with_callback(&mut model, &train_src, Some(&test_src), &tc, &rng.split(1), &mut |m, e| {
                if track {
                    checkpoints.push(m.clone());
                    curves.push(on_epoch(e.epoch, m)?);
                }
                Ok(())
            })?;
        }
        let trained = match &cfg.strategy {
            Strategy::Backprop => Trained {
                model,
                mode,
                time_steps: t,
                history,
                checkpoints,
            },
            Strategy::Conversion { conversion } => {
                let calib = train_src_plain(&self.data, train, t)?.inputs(cfg.train.batch_size)?;
                let snn = convert_ann_to_snn(&model, &calib, conversion).map_err(|e| e.in_stage("convert"))?;
                let (mode, steps) = self.converted_mode(conversion, t);
                Trained {
                    model: snn,
                    mode,
                    time_steps: steps,
                    history,
                    checkpoints,
                }
            }
        };
        Ok((trained, curves))
    }

    /// Converted SNNs on frames hold each of the `T` frames for
    /// `ceil(T_inf / T)` steps; on images the input is repeated `T_inf` times.
    fn converted_mode(&self, conversion: &ConversionConfig, t: usize) -> (InputMode, usize) {
        match self.data.samples {
            Samples::Events(_) => (
                InputMode::Converted {
                    repeat: conversion.time_steps.div_ceil(t),
                },
                t,
            ),
            Samples::Static(_) => (
                InputMode::Converted {
                    repeat: conversion.time_steps,
                },
                t,
            ),
        }
    }

    fn records(
        &self,
        model: &NetworkModel,
        mode: InputMode,
        time_steps: usize,
        members: &[usize],
        non_members: &[usize],
    ) -> Result<Vec<AttackFeatureRecord>> {
        let loss = self.loss(model.family);
        let chunk = self.cfg.train.batch_size;
        let m = PartSource::plain(&self.data, members, mode, time_steps)?;
        let n = PartSource::plain(&self.data, non_members, mode, time_steps)?;
        let mut out = extract_features(model, &m, true, loss, chunk)?;
        out.extend(extract_features(model, &n, false, loss, chunk)?);
        Ok(out)
    }

    fn accuracy(&self, t: &Trained, part: &[usize]) -> Result<f64> {
        let src = PartSource::plain(&self.data, part, t.mode, t.time_steps)?;
        Ok(evaluate(&t.model, &src, self.loss(t.model.family), self.cfg.train.batch_size)?.accuracy)
    }
}

fn train_src_plain<'d>(data: &'d Dataset, idx: &[usize], t: usize) -> Result<PartSource<'d>> {
    PartSource::plain(data, idx, InputMode::Ann, t)
}

fn attack_all(
    methods: &[AttackMethod],
    shadow: &[AttackFeatureRecord],
    target: &[AttackFeatureRecord],
    mlp: &MlpConfig,
    rng: &Rng,
) -> Result<Vec<AttackResult>> {
    methods
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let fitted = fit_attack(m, shadow, mlp, &mut rng.split(i as u64))?;
            let out = run_attack(m, &fitted, target)?;
            Ok(AttackResult::new(m, out.balanced_accuracy, out.threshold))
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("attack"))
}

fn setup(cfg: &ExperimentConfig) -> Result<(Pipeline<'_>, DatasetSplit, Rng)> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let data = cfg.dataset.load(&root.split(1)).map_err(|e| e.in_stage("load data"))?;
    let input_shape = data.input_shape()?;
    let labels = data.labels();
    let split = split_dataset(data.len(), Some(&labels), data.predefined_train, &mut root.split(2))
        .map_err(|e| e.in_stage("split"))?;
    let pipe = Pipeline {
        cfg,
        data,
        input_shape,
        rng: root.split(3),
    };
    Ok((pipe, split, root))
}

/// The experiment's target model, trained (and converted, for the
/// conversion strategy) exactly as [`run_experiment`] would, with its
/// training curve.
pub fn train_target(cfg: &ExperimentConfig) -> Result<(NetworkModel, Vec<EpochMetrics>)> {
    let mut quiet = cfg.clone();
    quiet.track_epochs = false;
    let (pipe, split, _) = setup(&quiet)?;
    let (t, _) = pipe
        .build(&split.target_train, &split.target_test, 1, &mut |_, _| Ok(Vec::new()))
        .map_err(|e| e.in_stage("train target"))?;
    Ok((t.model, t.history))
}

/// Converts a trained ANN, calibrating on the experiment's target training
/// part. Uses the config's conversion settings, or defaults for backprop
/// configs.
pub fn convert_trained(cfg: &ExperimentConfig, ann: &NetworkModel) -> Result<NetworkModel> {
    let (pipe, split, _) = setup(cfg)?;
    let conversion = match &cfg.strategy {
        Strategy::Conversion { conversion } => conversion.clone(),
        Strategy::Backprop => ConversionConfig::default(),
    };
    let calib = train_src_plain(&pipe.data, &split.target_train, cfg.model.time_steps)?.inputs(cfg.train.batch_size)?;
    convert_ann_to_snn(ann, &calib, &conversion).map_err(|e| e.in_stage("convert"))
}

/// Runs the experiment and writes its report to `dir`; with
/// `dump_features`, also `target_features.csv` and `shadow_features.csv`.
pub fn run_experiment_to_dir(cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<(ExperimentReport, ReportPaths)> {
    let dir = dir.as_ref();
    let (report, target, shadow) = run_experiment_full(cfg)?;
    let paths = emit_report(&report, dir)?;
    if cfg.dump_features {
        save_feature_csv(dir.join("target_features.csv"), &target)?;
        save_feature_csv(dir.join("shadow_features.csv"), &shadow)?;
    }
    Ok((report, paths))
}

/// Full pipeline: split, train or convert target and shadow models, extract
/// features on balanced member/non-member sets, fit attacks on the shadow
/// records and evaluate them on the target.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    Ok(run_experiment_full(cfg)?.0)
}

/// [`run_experiment`] that also returns the target and shadow records.
pub fn run_experiment_full(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<AttackFeatureRecord>, Vec<AttackFeatureRecord>)> {
    let (pipe, split, root) = setup(cfg)?;
    let mut eval_rng = root.split(4);
    let (t_mem, t_non) = balanced_parts(&split.target_train, &split.target_test, &mut eval_rng);
    let (s_mem, s_non) = balanced_parts(&split.shadow_train, &split.shadow_test, &mut eval_rng);
    let methods = cfg.attack_methods();
    let attack_rng = root.split(5);

    // shadows first, so per-epoch target attacks can use the matching shadow epoch
    let mut shadows = Vec::with_capacity(cfg.shadow_models);
    for k in 0..cfg.shadow_models {
        let (s, _) = pipe
            .build(&split.shadow_train, &split.shadow_test, 100 + k as u64, &mut |_, _| Ok(Vec::new()))
            .map_err(|e| e.in_stage("train shadow"))?;
        shadows.push(s);
    }

    let mut epoch_curves = Vec::new();
    let (target, curves) = {
        let shadows = &shadows;
        let pipe_ref = &pipe;
        let (tm, tn, sm, sn) = (&t_mem, &t_non, &s_mem, &s_non);
        pipe.build(&split.target_train, &split.target_test, 1, &mut |epoch, model| {
            let mut shadow_recs = Vec::new();
            for s in shadows {
                let ck = &s.checkpoints[epoch];
                shadow_recs.extend(pipe_ref.records(ck, s.mode, s.time_steps, sm, sn)?);
            }
            let target_recs = pipe_ref.records(model, pipe_ref.train_mode(), cfg.model.time_steps, tm, tn)?;
            attack_all(&cfg.epoch_attacks, &shadow_recs, &target_recs, &cfg.attack_mlp, &attack_rng.split(1000 + epoch as u64))
        })
        .map_err(|e| e.in_stage("train target"))?
    };
    epoch_curves.extend(curves);

    let target_recs = pipe
        .records(&target.model, target.mode, target.time_steps, &t_mem, &t_non)
        .map_err(|e| e.in_stage("extract features"))?;
    let mut shadow_recs = Vec::new();
    for s in &shadows {
        shadow_recs.extend(
            pipe.records(&s.model, s.mode, s.time_steps, &s_mem, &s_non)
                .map_err(|e| e.in_stage("extract features"))?,
        );
    }
    let attacks = attack_all(&methods, &shadow_recs, &target_recs, &cfg.attack_mlp, &attack_rng)?;

    let target_train_acc = pipe.accuracy(&target, &split.target_train)?;
    let target_test_acc = pipe.accuracy(&target, &split.target_test)?;
    let shadow_train_acc = pipe.accuracy(&shadows[0], &split.shadow_train)?;
    let shadow_test_acc = pipe.accuracy(&shadows[0], &split.shadow_test)?;

    let epochs = target
        .history
        .iter()
        .zip(epoch_curves)
        .map(|(m, a)| EpochReport {
            epoch: m.epoch,
            train_loss: m.train_loss,
            test_loss: m.test_loss,
            train_acc: m.train_acc,
            test_acc: m.test_acc,
            attacks: a,
        })
        .collect();
    let report = ExperimentReport::new(
        cfg,
        &target.model,
        [target_train_acc, target_test_acc, shadow_train_acc, shadow_test_acc],
        t_mem.len(),
        attacks,
        epochs,
    )?;
    Ok((report, target_recs, shadow_recs))
}

#[cfg(test)]
mod tests;
