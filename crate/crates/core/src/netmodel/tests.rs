use super::*;
use crate::neurons::{IfParams, LifParams, ResetMode};
use crate::numerics::relative_error;

fn if_neuron() -> NeuronModel {
    NeuronModel::If(IfParams {
        v_th: 1.0,
        v_reset: 0.0,
        reset_mode: ResetMode::Subtract,
    })
}

/// One input, one IF output neuron driven by `drive` per step.
fn single_neuron(drive: f32) -> NetworkModel {
    let mut m = NetworkModel::new(
        Family::Snn,
        vec![
            LayerSpec::Fc {
                inputs: 1,
                outputs: 1,
            },
            LayerSpec::spiking(if_neuron(), SurrogateKind::atan()),
        ],
        vec![1],
        1,
        5,
        1.0,
        &mut Rng::new(0),
    )
    .unwrap();
    m.params[0][0].data_mut()[0] = drive;
    m.params[0][1].data_mut()[0] = 0.0;
    m
}

fn spike_steps(rec: &ForwardRecord) -> Vec<usize> {
    rec.outputs
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 1.0)
        .map(|(t, _)| t + 1)
        .collect()
}

#[test]
fn constant_drive_spike_times() {
    let m = single_neuron(0.6);
    let rec = m.forward(&Tensor::full(&[4, 1], 1.0)).unwrap();
    assert_eq!(spike_steps(&rec), vec![2, 4]);
    assert_eq!(fire_rate(&rec), vec![0.5]);
    // the potential reaches exactly 1.0 on step 5 and fires
    let rec = m.forward(&Tensor::full(&[5, 1], 1.0)).unwrap();
    assert_eq!(spike_steps(&rec), vec![2, 4, 5]);
    let rec = m.forward(&Tensor::full(&[10, 1], 1.0)).unwrap();
    assert_eq!(spike_steps(&rec), vec![2, 4, 5, 7, 9, 10]);
    let amp = avg_membrane_potential(&rec);
    assert_eq!(amp.len(), 1);
}

fn tiny_snn(seed: u64) -> NetworkModel {
    NetworkModel::from_preset(
        "cnn-tiny",
        Family::Snn,
        &[2, 8, 8],
        3,
        4,
        &PresetOptions::default(),
        &mut Rng::new(seed),
    )
    .unwrap()
}

fn random_input(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform() as f32 * 2.0).collect()).unwrap()
}

#[test]
fn silent_network() {
    let mut m = tiny_snn(1);
    for p in m.params.iter_mut().flatten() {
        if p.ndim() == 1 {
            p.fill(0.0);
        }
    }
    let rec = m.forward(&Tensor::zeros(&[4, 2, 8, 8])).unwrap();
    assert_eq!(fire_rate(&rec), vec![0.0; 3]);
}

#[test]
fn forward_is_stateless_across_calls() {
    let m = tiny_snn(2);
    let mut rng = Rng::new(3);
    let xs: Vec<Tensor> = (0..4).map(|_| random_input(&mut rng, &[4, 2, 8, 8])).collect();
    let first: Vec<ForwardRecord> = xs.iter().map(|x| m.forward(x).unwrap()).collect();
    let reversed: Vec<ForwardRecord> = xs.iter().rev().map(|x| m.forward(x).unwrap()).collect();
    for (a, b) in first.iter().zip(reversed.iter().rev()) {
        assert_eq!(a, b);
    }
    let rec = &first[0];
    assert!(rec.outputs.data().iter().all(|&s| s == 0.0 || s == 1.0));
    assert_eq!(rec.potentials.as_ref().unwrap().shape(), &[4, 3]);
}

#[test]
fn input_shape_checked() {
    let m = tiny_snn(0);
    assert!(m.forward(&Tensor::zeros(&[4, 2, 8, 9])).is_err());
    assert!(m.forward(&Tensor::zeros(&[2, 8, 8])).is_err());
}

#[test]
fn ann_confidences() {
    let m = NetworkModel::from_preset("mlp-tiny", Family::Ann, &[4], 3, 1, &PresetOptions::default(), &mut Rng::new(0)).unwrap();
    let rec = m.forward(&Tensor::full(&[1, 4], 0.5)).unwrap();
    let c = rec.confidences();
    assert!((c.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    let shifted = ForwardRecord {
        outputs: Tensor::new(vec![1, 3], rec.outputs.data().iter().map(|z| z + 3.0).collect()).unwrap(),
        ..rec.clone()
    };
    for (a, b) in c.iter().zip(shifted.confidences()) {
        assert!((a - b).abs() <= 1e-6);
    }
    let fixed = ForwardRecord {
        outputs: Tensor::new(vec![1, 3], vec![2.0, 0.5, -1.0]).unwrap(),
        ..rec
    };
    assert_eq!(fixed.prediction(), 0);
    let zeros = ForwardRecord {
        outputs: Tensor::zeros(&[1, 3]),
        ..fixed
    };
    assert!(zeros.confidences().iter().all(|c| (c - 1.0 / 3.0).abs() < 1e-7));
}

fn two_layer_snn(neuron: NeuronModel, seed: u64) -> NetworkModel {
    NetworkModel::new(
        Family::Snn,
        vec![
            LayerSpec::Fc {
                inputs: 6,
                outputs: 5,
            },
            LayerSpec::spiking(neuron, SurrogateKind::atan()),
            LayerSpec::Fc {
                inputs: 5,
                outputs: 3,
            },
            LayerSpec::spiking(neuron, SurrogateKind::atan()),
        ],
        vec![6],
        3,
        4,
        2.0,
        &mut Rng::new(seed),
    )
    .unwrap()
}

#[test]
fn soft_mode_gradients_match_finite_differences() {
    let lif = NeuronModel::Lif(LifParams::default());
    let hard_lif = NeuronModel::Lif(LifParams {
        reset_mode: ResetMode::Hard,
        ..LifParams::default()
    });
    for neuron in [lif, hard_lif] {
        for t in [1, 4] {
            let m = two_layer_snn(neuron, 11 + t as u64);
            let mut rng = Rng::new(5);
            let x = random_input(&mut rng, &[t, 6]);
            let coords: Vec<(usize, usize, usize)> = (0..10)
                .map(|k| {
                    let layer = if k % 2 == 0 { 0 } else { 2 };
                    let param = usize::from(k % 3 == 0);
                    let len = m.params[layer][param].len();
                    (layer, param, rng.below(len))
                })
                .collect();
            let probes = probe_gradients(&m, &x, &[0.0, 1.0, 0.0], LossKind::Mse, ExecMode::Soft, &coords, 1e-2).unwrap();
            for p in probes {
                let err = relative_error(p.analytic, p.numeric, 1e-2);
                assert!(err <= 1e-3, "T={t} {p:?} err {err}");
            }
        }
    }
}


#[test]
fn family_invariants() {
    let lif = NeuronModel::Lif(LifParams::default());
    let spk = LayerSpec::spiking(lif, SurrogateKind::atan());
    let fc = LayerSpec::Fc {
        inputs: 4,
        outputs: 2,
    };
    let mut rng = Rng::new(0);
    assert!(NetworkModel::new(Family::Ann, vec![fc.clone(), spk.clone()], vec![4], 2, 1, 1.0, &mut rng).is_err());
    assert!(NetworkModel::new(Family::Snn, vec![fc.clone(), LayerSpec::Relu], vec![4], 2, 1, 1.0, &mut rng).is_err());
    assert!(NetworkModel::new(Family::Snn, vec![fc.clone()], vec![4], 2, 1, 1.0, &mut rng).is_err());
    assert!(NetworkModel::new(Family::Snn, vec![fc, spk], vec![4], 2, 1, 1.0, &mut rng).is_ok());
}

#[test]
fn shape_mismatch_rejected() {
    let layers = vec![LayerSpec::Fc {
        inputs: 5,
        outputs: 2,
    }];
    assert!(NetworkModel::new(Family::Ann, layers, vec![4], 2, 1, 1.0, &mut Rng::new(0)).is_err());
}

#[test]
fn init_is_bounded_and_seeded() {
    let layers = vec![
        LayerSpec::Flatten,
        LayerSpec::Fc {
            inputs: 16,
            outputs: 3,
        },
    ];
    let a = NetworkModel::new(Family::Ann, layers.clone(), vec![1, 4, 4], 3, 1, 1.0, &mut Rng::new(7)).unwrap();
    let b = NetworkModel::new(Family::Ann, layers, vec![1, 4, 4], 3, 1, 1.0, &mut Rng::new(7)).unwrap();
    assert_eq!(a, b);
    assert!(a.params[1][0].data().iter().all(|v| v.abs() <= 0.25));
    assert_eq!(a.param_count(), 16 * 3 + 3);
}

#[test]
fn layer_spec_json() {
    let json = r#"{"type": "pool", "window": 2, "mode": "max"}"#;
    let l: LayerSpec = serde_json::from_str(json).unwrap();
    assert_eq!(
        l,
        LayerSpec::Pool {
            window: 2,
            mode: PoolMode::Max
        }
    );
}
