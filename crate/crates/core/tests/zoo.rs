use mixconv::nn::network::{init_params, Network};
use mixconv::nn::{BnMode, BnSettings, Tape};
use mixconv::train::TrainConfig;
use mixconv::zoo::{apply_width_multiplier, builtin, round_channels, BlockType, BUILTIN_MODELS};
use mixconv::{Rng, Shape4, Tensor};
use proptest::prelude::*;

#[test]
fn every_builtin_propagates_at_both_resolutions() {
    for name in BUILTIN_MODELS {
        let cfg = builtin(name).unwrap();
        cfg.check(224).unwrap();
        cfg.check(32).unwrap();
    }
}

#[test]
fn mixnet_kernel_schedules() {
    for name in ["mixnet-s", "mixnet-m", "mixnet-l"] {
        for b in builtin(name).unwrap().blocks {
            let g = b.kernels.len();
            assert!((1..=5).contains(&g));
            assert_eq!(b.kernels, (1..=g).map(|i| 2 * i + 1).collect::<Vec<_>>());
            assert_eq!(b.kind, BlockType::InvertedResidual);
        }
    }
}

#[test]
fn width_rounding_examples() {
    assert_eq!(round_channels(16, 1.3), 24);
    let m = builtin("mixnet-m").unwrap();
    assert_eq!(apply_width_multiplier(&m, 1.0).unwrap(), m);
    let doubled = apply_width_multiplier(&m, 2.0).unwrap();
    assert_eq!(doubled.stem.channels, 2 * m.stem.channels);
    for (a, b) in doubled.blocks.iter().zip(&m.blocks) {
        assert_eq!(a.channels_out, 2 * b.channels_out);
    }
    assert!(apply_width_multiplier(&m, 0.0).is_err());
}

#[test]
fn init_is_deterministic_with_identity_batch_norm() {
    let cfg = TrainConfig::from_json(include_str!("../../../configs/toy.json")).unwrap().model;
    let a = init_params(&cfg, 9).unwrap();
    let b = init_params(&cfg, 9).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert_eq!(x.to_le_bytes(), y.to_le_bytes());
    }
    assert_ne!(a, init_params(&cfg, 10).unwrap());
    for slot in 0..a.len() {
        let v = a.get(slot).data();
        if a.name(slot).ends_with(".gamma") {
            assert!(v.iter().all(|&g| g == 1.0));
        } else if a.name(slot).ends_with(".beta") || a.name(slot).ends_with(".b") {
            assert!(v.iter().all(|&g| g == 0.0));
        }
    }
}

#[test]
fn network_forward_shapes() {
    for name in ["mobilenet-v1", "mixnet-s"] {
        let mut cfg = builtin(name).unwrap();
        cfg.head.classes = 5;
        let mut net = Network::new(&cfg, 1, BnSettings::default()).unwrap();
        let x = Tensor::randn(Shape4::new(2, 32, 32, 3).unwrap(), 0.0, 1.0, &mut Rng::new(2));
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let y = net.forward(&mut tape, xv, BnMode::Train).unwrap();
        assert_eq!(tape.value(y).shape(), Shape4::new(2, 1, 1, 5).unwrap());
    }
}

proptest! {
    #[test]
    fn rounding_respects_floor(c in 1usize..2048, f in 0.1f64..4.0) {
        let r = round_channels(c, f);
        prop_assert!(r % 8 == 0 && r >= 8);
        prop_assert!(r as f64 >= 0.9 * c as f64 * f);
    }
}
