mod common;

use common::{random, shape};
use mixconv::accounting::{count_layer, LayerOp};
use mixconv::conv::depthwise_forward;
use mixconv::mixconv::{mixconv_forward, partition_equal, partition_exponential};
use mixconv::{ConvGeom, Error, MixConvSpec, PartitionScheme, Rng, Tensor};
use proptest::prelude::*;

/// Split channels, run each group on its own, concatenate.
fn composed(x: &Tensor, kernels: &[Tensor], spec: &MixConvSpec) -> Tensor {
    let mut lo = 0;
    let mut parts = Vec::new();
    for t in 0..spec.groups() {
        let hi = lo + spec.channels()[t];
        let geom = ConvGeom::new(spec.kernels()[t])
            .with_stride(spec.stride())
            .with_dilation(spec.dilations()[t])
            .with_multiplier(spec.multiplier());
        parts.push(depthwise_forward(&x.slice_channels(lo, hi).unwrap(), &kernels[t], &geom).unwrap());
        lo = hi;
    }
    Tensor::concat_channels(&parts).unwrap()
}

fn kernels_for(spec: &MixConvSpec, rng: &mut Rng) -> Vec<Tensor> {
    (0..spec.groups()).map(|t| random(spec.kernel_shape(t).unwrap(), rng)).collect()
}

#[test]
fn partition_examples() {
    assert_eq!(partition_equal(32, 4).unwrap(), vec![8, 8, 8, 8]);
    assert_eq!(partition_exponential(32, 4).unwrap(), vec![16, 8, 4, 4]);
    assert_eq!(partition_equal(10, 4).unwrap(), vec![3, 3, 2, 2]);
    assert!(matches!(partition_equal(3, 4), Err(Error::Partition(_))));
}

#[test]
fn two_group_ones_example() {
    // 3x3 on one channel, 5x5 on the other, 3x3 input of ones
    let spec = MixConvSpec::new(vec![3, 5], vec![1, 1], 1, 1).unwrap();
    let x = Tensor::new(shape(1, 3, 3, 2), mixconv::tensor::Fill::Ones);
    let ks = vec![
        Tensor::new(spec.kernel_shape(0).unwrap(), mixconv::tensor::Fill::Ones),
        Tensor::new(spec.kernel_shape(1).unwrap(), mixconv::tensor::Fill::Ones),
    ];
    let y = mixconv_forward(&x, &ks, &spec).unwrap();
    let first: Vec<f64> = (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| y.get(0, r, c, 0)).collect();
    assert_eq!(first, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    for r in 0..3 {
        for c in 0..3 {
            assert_eq!(y.get(0, r, c, 1), 9.0);
        }
    }
}

#[test]
fn dilated_cost_matches_plain() {
    for k in [3usize, 5, 7, 9, 11, 13] {
        let rate = (k - 1) / 2;
        let plain = LayerOp::Depthwise { geom: ConvGeom::new(3), channels: 48 };
        let dilated = LayerOp::Depthwise { geom: ConvGeom::new(3).with_dilation(rate), channels: 48 };
        assert_eq!(count_layer(&plain, 28, 28).unwrap(), count_layer(&dilated, 28, 28).unwrap());
    }
    let bad = MixConvSpec::with_dilations(vec![3, 3], vec![4, 4], vec![1, 2], 1, 2);
    assert!(matches!(bad, Err(Error::Geometry(_))));
}

#[test]
fn exponential_remainder_can_favor_large_kernel() {
    // floor halving hands the odd channel to the last (largest) group
    let eq = MixConvSpec::uniform(63, 2, &PartitionScheme::Equal, 1, 1).unwrap();
    let ex = MixConvSpec::uniform(63, 2, &PartitionScheme::Exponential, 1, 1).unwrap();
    assert_eq!(ex.channels(), &[31, 32]);
    assert!(ex.param_count() > eq.param_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fused_equals_composition(seed in any::<u64>(), g in 1usize..=5, stride in 1usize..=2, m in 1usize..=2, extra in 0usize..6) {
        let mut rng = Rng::new(seed);
        let c = g + extra;
        let spec = MixConvSpec::uniform(c, g, &PartitionScheme::Equal, m, stride).unwrap();
        let x = random(shape(2, rng.int_range(1, 9), rng.int_range(1, 9), c), &mut rng);
        let ks = kernels_for(&spec, &mut rng);
        let fused = mixconv_forward(&x, &ks, &spec).unwrap();
        prop_assert_eq!(fused.to_le_bytes(), composed(&x, &ks, &spec).to_le_bytes());
    }

    #[test]
    fn one_group_is_depthwise(seed in any::<u64>(), k in 0usize..5, c in 1usize..7, stride in 1usize..=2, m in 1usize..=2) {
        let mut rng = Rng::new(seed);
        let spec = MixConvSpec::depthwise(2 * k + 1, c, m, stride).unwrap();
        let x = random(shape(1, rng.int_range(1, 10), rng.int_range(1, 10), c), &mut rng);
        let ks = kernels_for(&spec, &mut rng);
        let geom = ConvGeom::new(2 * k + 1).with_stride(stride).with_multiplier(m);
        prop_assert_eq!(
            mixconv_forward(&x, &ks, &spec).unwrap().to_le_bytes(),
            depthwise_forward(&x, &ks[0], &geom).unwrap().to_le_bytes()
        );
    }

    #[test]
    fn partitions_cover_channels(c in 1usize..300, g in 1usize..7) {
        if let Ok(p) = partition_equal(c, g) {
            prop_assert_eq!(p.iter().sum::<usize>(), c);
            prop_assert!(p.iter().max().unwrap() - p.iter().min().unwrap() <= 1);
            prop_assert!(p.windows(2).all(|w| w[0] >= w[1]));
        } else {
            prop_assert!(c < g);
        }
        if let Ok(p) = partition_exponential(c, g) {
            prop_assert_eq!(p.iter().sum::<usize>(), c);
            prop_assert!(p.iter().all(|&v| v >= 1));
        }
    }

    #[test]
    fn exponential_never_costs_more(half in 16usize..128, g in 2usize..=5) {
        let c = 2 * half;
        let eq = MixConvSpec::uniform(c, g, &PartitionScheme::Equal, 1, 1).unwrap();
        let ex = MixConvSpec::uniform(c, g, &PartitionScheme::Exponential, 1, 1).unwrap();
        prop_assert!(ex.param_count() <= eq.param_count());
        prop_assert!(ex.madds(14, 14).unwrap() <= eq.madds(14, 14).unwrap());
    }

    #[test]
    fn mixconv_cheaper_than_largest_kernel(c in 8usize..128, g in 2usize..=6) {
        let mix = MixConvSpec::uniform(c.max(g), g, &PartitionScheme::Equal, 1, 1).unwrap();
        let big = MixConvSpec::depthwise(2 * g + 1, c.max(g), 1, 1).unwrap();
        prop_assert!(mix.param_count() < big.param_count());
    }
}
