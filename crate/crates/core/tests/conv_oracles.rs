mod common;

use common::{depthwise_reference, random, shape};
use mixconv::conv::{
    depthwise_backward, depthwise_forward, depthwise_kernel_shape, pad_compute, pointwise_backward, pointwise_forward,
};
use mixconv::{ConvGeom, Error, Rng};
use proptest::prelude::*;

#[test]
fn depthwise_matches_reference_and_counts() {
    let mut rng = Rng::new(21);
    for _ in 0..60 {
        let k = 2 * rng.int_range(0, 3) + 1;
        let stride = rng.int_range(1, 2);
        let dilation = if stride == 1 { rng.int_range(1, 3) } else { 1 };
        let m = rng.int_range(1, 2);
        let c = rng.int_range(1, 5);
        let x = random(shape(rng.int_range(1, 2), rng.int_range(1, 9), rng.int_range(1, 9), c), &mut rng);
        let w = random(depthwise_kernel_shape(k, c, m).unwrap(), &mut rng);
        let geom = ConvGeom::new(k).with_stride(stride).with_dilation(dilation).with_multiplier(m);
        let got = depthwise_forward(&x, &w, &geom).unwrap();
        let (want, count) = depthwise_reference(&x, &w, k, stride, dilation, m);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
        let s = got.shape();
        assert_eq!(count, (s.n * s.h * s.w * k * k * s.c) as u64);
    }
}

#[test]
fn depthwise_adjoint_identity() {
    // <J dx, dy> == <dx, J^T dy> for the linear map x -> depthwise(x, w)
    let mut rng = Rng::new(5);
    for _ in 0..30 {
        let k = 2 * rng.int_range(0, 2) + 1;
        let stride = rng.int_range(1, 2);
        let m = rng.int_range(1, 2);
        let c = rng.int_range(1, 4);
        let geom = ConvGeom::new(k).with_stride(stride).with_multiplier(m);
        let x = random(shape(2, rng.int_range(2, 8), rng.int_range(2, 8), c), &mut rng);
        let w = random(depthwise_kernel_shape(k, c, m).unwrap(), &mut rng);
        let y = depthwise_forward(&x, &w, &geom).unwrap();
        let dy = random(y.shape(), &mut rng);
        let (dx, dw) = depthwise_backward(&x, &w, &geom, &dy).unwrap();
        let lhs = y.dot(&dy).unwrap();
        assert!((lhs - x.dot(&dx).unwrap()).abs() < 1e-10);
        // and in w
        assert!((lhs - w.dot(&dw).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn pointwise_adjoint_identity() {
    let mut rng = Rng::new(8);
    for groups in 1..=3 {
        let x = random(shape(2, 3, 4, 2 * groups), &mut rng);
        let w = random(shape(1, 1, 2, 3 * groups), &mut rng);
        let y = pointwise_forward(&x, &w, groups).unwrap();
        let dy = random(y.shape(), &mut rng);
        let (dx, dw) = pointwise_backward(&x, &w, groups, &dy).unwrap();
        let lhs = y.dot(&dy).unwrap();
        assert!((lhs - x.dot(&dx).unwrap()).abs() < 1e-10);
        assert!((lhs - w.dot(&dw).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn finite_differences_on_depthwise_weights() {
    let mut rng = Rng::new(3);
    let geom = ConvGeom::new(3).with_stride(2);
    let x = random(shape(1, 5, 6, 2), &mut rng);
    let w = random(depthwise_kernel_shape(3, 2, 1).unwrap(), &mut rng);
    let r = random(depthwise_forward(&x, &w, &geom).unwrap().shape(), &mut rng);
    let (_, dw) = depthwise_backward(&x, &w, &geom, &r).unwrap();
    let h = 1e-5;
    for j in 0..w.len() {
        let mut p = w.data().to_vec();
        p[j] += h;
        let mut q = w.data().to_vec();
        q[j] -= h;
        let f = |v: Vec<f64>| depthwise_forward(&x, &mixconv::Tensor::from_vec(w.shape(), v).unwrap(), &geom)
            .unwrap()
            .dot(&r)
            .unwrap();
        let fd = (f(p) - f(q)) / (2.0 * h);
        let a = dw.data()[j];
        assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-6);
    }
}

#[test]
fn dilated_stride_two_is_rejected() {
    let geom = ConvGeom::new(3).with_stride(2).with_dilation(2);
    assert!(matches!(geom.validate(), Err(Error::Geometry(_))));
    assert!(matches!(pad_compute(8, &geom), Err(Error::Geometry(_))));
}

proptest! {
    #[test]
    fn same_padding_law(input in 1usize..64, k in 0usize..7, stride in 1usize..=2, dilation in 1usize..=4) {
        let k = 2 * k + 1;
        let dilation = if stride == 2 { 1 } else { dilation };
        let geom = ConvGeom::new(k).with_stride(stride).with_dilation(dilation);
        let (pad, out) = pad_compute(input, &geom).unwrap();
        prop_assert_eq!(out, input.div_ceil(stride));
        prop_assert!(pad.after >= pad.before && pad.after - pad.before <= 1);
        let (before, _) = common::pad_before(input, k, stride, dilation);
        prop_assert_eq!(pad.before, before);
    }
}
