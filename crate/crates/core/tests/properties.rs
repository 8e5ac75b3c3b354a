//! Cross-module properties on public APIs: spiking outputs, losses, and
//! the on-disk formats.

use proptest::prelude::*;
use snn_mia::eventdata::{read_events, write_events, Event, EventStream};
use snn_mia::netmodel::{fire_rate, mse_one_hot, read_model, write_model, Family, NetworkModel, PresetOptions, PRESETS};
use snn_mia::numerics::{Rng, Tensor};

fn snn(seed: u64, t: usize) -> NetworkModel {
    let opts = PresetOptions {
        hidden: 16,
        ..PresetOptions::default()
    };
    NetworkModel::from_preset("mlp-tiny", Family::Snn, &[2, 6, 6], 4, t, &opts, &mut Rng::new(seed)).unwrap()
}

fn counts(rng: &mut Rng, t: usize) -> Tensor {
    let data = (0..t * 2 * 6 * 6).map(|_| rng.below(3) as f32).collect();
    Tensor::new(vec![t, 2, 6, 6], data).unwrap()
}

fn stream(rng: &mut Rng, n: usize) -> EventStream {
    let (w, h) = (1 + rng.below(40) as u16, 1 + rng.below(40) as u16);
    let events = (0..n)
        .map(|_| Event {
            t_us: rng.below(1 << 20) as u32,
            x: rng.below(w as usize) as u16,
            y: rng.below(h as usize) as u16,
            polarity: rng.below(2) as u8,
        })
        .collect();
    EventStream::new(w, h, events, rng.below(100) as u32).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn records_do_not_depend_on_sample_order(seed in 0u64..1000, n in 2usize..7) {
        let model = snn(seed, 4);
        let mut rng = Rng::new(seed ^ 0x5eed);
        let xs: Vec<Tensor> = (0..n).map(|_| counts(&mut rng, 4)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let direct: Vec<_> = xs.iter().map(|x| model.forward(x).unwrap()).collect();
        for &i in &order {
            prop_assert_eq!(&model.forward(&xs[i]).unwrap(), &direct[i]);
        }
    }

    #[test]
    fn fire_rate_is_count_over_steps(seed in 0u64..1000, t in 1usize..9) {
        let model = snn(seed, t);
        let rec = model.forward(&counts(&mut Rng::new(seed), t)).unwrap();
        let n = rec.classes();
        let out = rec.outputs.data();
        prop_assert!(out.iter().all(|&s| s == 0.0 || s == 1.0));
        for (i, r) in fire_rate(&rec).into_iter().enumerate() {
            let c = (0..t).filter(|&s| out[s * n + i] == 1.0).count();
            prop_assert_eq!(r, c as f32 / t as f32);
        }
    }

    #[test]
    fn mse_vanishes_only_on_the_target_train(
        t in 1usize..8,
        label in 0usize..5,
        flips in prop::collection::vec((0usize..8, 0usize..5), 0..4),
    ) {
        let mut target = vec![0.0f32; 5];
        target[label] = 1.0;
        let mut spikes: Vec<f32> = (0..t).flat_map(|_| target.clone()).collect();
        for (s, i) in flips {
            if s < t {
                spikes[s * 5 + i] = 1.0 - spikes[s * 5 + i];
            }
        }
        let changed = spikes.chunks(5).any(|row| row != target.as_slice());
        let loss = mse_one_hot(&Tensor::new(vec![t, 5], spikes).unwrap(), &target).unwrap();
        prop_assert_eq!(loss == 0.0, !changed);
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn evt1_round_trips(seed in 0u64..10_000, n in 0usize..300) {
        let s = stream(&mut Rng::new(seed), n);
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        prop_assert_eq!(read_events(&mut buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn truncated_evt1_is_rejected(seed in 0u64..10_000, n in 1usize..50, cut in 1usize..12) {
        let s = stream(&mut Rng::new(seed), n);
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        buf.truncate(buf.len() - cut);
        prop_assert!(read_events(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn mdl1_round_trips(seed in 0u64..1000, preset in 0usize..3, snn in any::<bool>()) {
        let family = if snn { Family::Snn } else { Family::Ann };
        let model = NetworkModel::from_preset(
            PRESETS[preset], family, &[2, 8, 8], 3, 4, &PresetOptions::default(), &mut Rng::new(seed),
        ).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        prop_assert_eq!(read_model(&mut buf.as_slice()).unwrap(), model);
    }
}
