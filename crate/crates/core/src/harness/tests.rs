use super::*;
use crate::eventdata::SynthConfig;

fn tiny(family: Family) -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        seed: 3,
        dataset: DatasetSpec::SyntheticEvents {
            synth: SynthConfig {
                width: 12,
                height: 12,
                classes: 3,
                ..SynthConfig::default()
            },
            samples: 48,
        },
        model: ModelConfig {
            preset: "mlp-tiny".into(),
            family,
            time_steps: 4,
            options: PresetOptions {
                hidden: 32,
                ..PresetOptions::default()
            },
        },
        train: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        attack_mlp: MlpConfig {
            epochs: 5,
            ..MlpConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn balanced_accuracy_examples() {
    let t = [true, false, true, false];
    assert_eq!(balanced_accuracy(&[true, true, false, false], &t).unwrap(), 0.5);
    assert_eq!(balanced_accuracy(&t, &t).unwrap(), 1.0);
    assert_eq!(balanced_accuracy(&[true; 4], &t).unwrap(), 0.5);
    assert!(balanced_accuracy(&[true], &[true]).is_err());
}

#[test]
fn snn_experiment_report_is_consistent_and_deterministic() {
    let mut cfg = tiny(Family::Snn);
    cfg.track_epochs = true;
    let a = run_experiment(&cfg).unwrap();
    assert_eq!(a.attacks.len(), 8);
    assert_eq!(a.gap, a.target_train_acc - a.target_test_acc);
    let max = a.attacks.iter().map(|r| r.balanced_accuracy).fold(0.0, f64::max);
    assert_eq!(a.highest_accuracy, max);
    assert_eq!(a.accuracy_of(a.highest_attack), Some(max));
    assert!(a.attacks.iter().all(|r| (0.0..=1.0).contains(&r.balanced_accuracy)));
    assert_eq!(a.epochs.len(), 2);
    assert_eq!(a.epochs[0].attacks.len(), 2);
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let paths = emit_report(&a, dir.path()).unwrap();
    assert_eq!(read_report(&paths.json).unwrap(), a);
    let rows = std::fs::read_to_string(&paths.attacks_csv).unwrap().lines().count();
    assert_eq!(rows, 1 + a.attacks.len());
    assert!(paths.epochs_csv.is_some());
}

#[test]
fn ann_and_converted_experiments_run() {
    let ann = run_experiment(&tiny(Family::Ann)).unwrap();
    assert_eq!(ann.family, Family::Ann);
    assert!(ann.attacks.iter().any(|a| a.method == AttackMethod::HingeLoss));

    let mut conv = tiny(Family::Ann);
    conv.strategy = Strategy::Conversion {
        conversion: ConversionConfig {
            time_steps: 16,
            ..ConversionConfig::default()
        },
    };
    let r = run_experiment(&conv).unwrap();
    assert_eq!(r.family, Family::Snn);
    assert_eq!(r.origin, crate::netmodel::Origin::Conversion);
    assert!(r.attacks.iter().any(|a| a.method == AttackMethod::AvgMembranePotential));
}

#[test]
fn static_experiment_with_augmentation() {
    let mut cfg = tiny(Family::Snn);
    cfg.dataset = DatasetSpec::SyntheticStatic {
        synth: SynthConfig {
            width: 10,
            height: 10,
            classes: 3,
            ..SynthConfig::default()
        },
        samples: 40,
    };
    cfg.augment = AugmentPolicy::of_kind(crate::augment::AugmentKind::StaticBasic);
    cfg.evaluation_only = true;
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.eval_size, 2);
}

#[test]
fn invalid_configs_rejected() {
    let mut c = tiny(Family::Snn);
    c.strategy = Strategy::Conversion {
        conversion: ConversionConfig::default(),
    };
    assert!(c.validate().is_err());
    let mut c = tiny(Family::Snn);
    c.attacks = Some(vec![AttackMethod::HingeLoss]);
    assert!(c.validate().is_err());
    let mut c = tiny(Family::Snn);
    c.train.epochs = 0;
    assert!(c.validate().is_err());
    assert!(ExperimentConfig::from_json(r#"{"model": {"time_steps": 0}}"#).is_err());
}

#[test]
fn config_json_defaults() {
    let c = ExperimentConfig::from_json(r#"{"dataset": {"source": "synthetic_events", "samples": 20}}"#).unwrap();
    assert_eq!(c.model.preset, "cnn-tiny");
    assert_eq!(c.attack_methods().len(), 8);
    let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
}
