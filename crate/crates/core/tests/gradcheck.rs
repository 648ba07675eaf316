mod common;

use common::*;
use fer_core::model::VggModel;
use fer_core::nn::{maxpool_forward, BatchNormLayer, ConvLayer, Mode};
use fer_core::tensor::{SeededRng, Tensor};
use proptest::prelude::*;

#[test]
fn every_layer_matches_central_differences() {
    for report in gradcheck_suite(7, 20) {
        assert!(report.shapes >= 20);
        assert!(
            report.ok(),
            "{}: worst relative error {:e} > {:e}",
            report.layer,
            report.worst,
            report.tol
        );
    }
}

#[test]
fn conv_single_channel_four_by_four() {
    let mut rng = SeededRng::new(3);
    let x = normal(&[1, 1, 4, 4], &mut rng);
    let w = normal(&[1, 1, 3, 3], &mut rng);
    let layer = ConvLayer::new(w, Tensor::zeros(&[1]), 1, 1).unwrap();
    let r = normal(&[1, 1, 4, 4], &mut rng);
    let g = layer.backward(&x, &r).unwrap();
    let worst = fd_max_rel(x.data(), g.input.data(), |p| {
        dot(&r, &layer.forward(&t(&[1, 1, 4, 4], p)).unwrap())
    });
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = SeededRng::new(11);
    let x = normal(&[2, 3, 8, 8], &mut rng);
    let w = normal(&[4, 3, 3, 3], &mut rng);
    let b = normal(&[4], &mut rng);
    let got = ConvLayer::new(w.clone(), b.clone(), 1, 1)
        .unwrap()
        .forward(&x)
        .unwrap();
    let want = naive_conv(&x, &w, b.data(), 1, 1);
    assert_eq!(got.shape(), want.shape());
    for (g, w) in got.data().iter().zip(want.data()) {
        assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
    }
}

#[test]
fn whole_network_spot_check() {
    let worst = network_gradcheck(5, 20);
    assert!(worst <= 1e-4, "{worst:e}");
}

#[test]
fn relu_off_kink_agrees_to_1e8() {
    let mut rng = SeededRng::new(2);
    let report = gradcheck_relu(&mut rng, 5);
    assert!(report.worst <= 1e-8, "{:e}", report.worst);
}

#[test]
fn bn_input_grad_sums_to_zero_per_channel() {
    let mut rng = SeededRng::new(9);
    let x = normal(&[4, 2, 3, 3], &mut rng);
    let bn = BatchNormLayer::<f64>::new(2);
    let r = normal(&[4, 2, 3, 3], &mut rng);
    let g = bn.backward(&x, &r, Mode::Train).unwrap().input;
    for c in 0..2 {
        let s: f64 = (0..4)
            .flat_map(|n| g.data()[(n * 2 + c) * 9..][..9].to_vec())
            .sum();
        assert!(s.abs() <= 1e-8, "channel {c}: {s:e}");
    }
}

#[test]
fn maxpool_matches_brute_force_window_scan() {
    let mut rng = SeededRng::new(4);
    let x = normal(&[1, 1, 6, 6], &mut rng);
    let out = maxpool_forward(&x).unwrap().output;
    for oy in 0..3 {
        for ox in 0..3 {
            let mut best = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    best = best.max(x.data()[(2 * oy + dy) * 6 + 2 * ox + dx]);
                }
            }
            assert_eq!(out.data()[oy * 3 + ox], best);
        }
    }
}

#[test]
fn network_zero_logit_grad_gives_zero_grads() {
    let mut rng = SeededRng::new(1);
    let mut model = VggModel::<f64>::build(&tiny_config(), &mut rng).unwrap();
    let x = normal(&[2, 1, 16, 16], &mut rng);
    model.forward(&x, Mode::Train, None).unwrap();
    let g = model.backward(&Tensor::zeros(&[2, 7])).unwrap();
    assert!(g
        .params
        .values()
        .all(|t| t.data().iter().all(|&v| v == 0.0)));
    assert!(g.input.data().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn im2col_conv_equals_direct_loops(
        seed in 0u64..1000,
        n in 1usize..3, c in 1usize..4, oc in 1usize..4,
        h in 3usize..9, w in 3usize..9,
        k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3,
    ) {
        prop_assume!(k <= h && k <= w);
        let pad = k / 2;
        let mut rng = SeededRng::new(seed);
        let x = normal(&[n, c, h, w], &mut rng);
        let wt = normal(&[oc, c, k, k], &mut rng);
        let b = normal(&[oc], &mut rng);
        let got = ConvLayer::new(wt.clone(), b.clone(), stride, pad).unwrap().forward(&x).unwrap();
        let want = naive_conv(&x, &wt, b.data(), stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        for (g, v) in got.data().iter().zip(want.data()) {
            prop_assert!((g - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn pooled_extents_floor(h in 2usize..12, w in 2usize..12) {
        let x = Tensor::<f64>::zeros(&[1, 2, h, w]);
        let out = maxpool_forward(&x).unwrap().output;
        prop_assert_eq!(out.shape(), &[1, 2, h / 2, w / 2][..]);
    }
}
