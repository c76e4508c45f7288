use derain_core::metrics::{psnr, psnr_from_mse, ssim};
use derain_core::rain::{
    compose_linear_raw, compose_veiled_raw, invert_background_raw, transmittance_from_depth,
    AtmosphericLight,
};
use derain_core::smrnet::{derain, LightMode, NetworkConfig, NetworkParams};
use derain_core::Tensor;
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn scene_parts() -> impl Strategy<Value = (Tensor, Vec<Tensor>, Tensor, f64)> {
    (2usize..6, 2usize..6).prop_flat_map(|(h, w)| {
        (
            tensor(vec![3, h, w], 0.0, 1.0),
            prop::collection::vec(tensor(vec![3, h, w], 0.0, 0.5), 0..4),
            tensor(vec![1, h, w], 1e-3, 1.0),
            0.0f64..1.0,
        )
    })
}

proptest! {
    #[test]
    fn veiled_composite_inverts_exactly((b, rs, alpha, a) in scene_parts()) {
        let light = AtmosphericLight::Scalar(a);
        let o = compose_veiled_raw(&b, &rs, &alpha, &light).unwrap();
        let inv = alpha.map(|v| 1.0 / v);
        let back = invert_background_raw(&o, &inv, &rs, &light).unwrap();
        prop_assert!(back.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn unit_transmittance_is_the_linear_composite((b, rs, alpha, a) in scene_parts()) {
        let ones = alpha.map(|_| 1.0);
        let veiled = compose_veiled_raw(&b, &rs, &ones, &AtmosphericLight::Scalar(a)).unwrap();
        prop_assert_eq!(veiled, compose_linear_raw(&b, &rs).unwrap());
    }

    #[test]
    fn transmittance_is_monotone_and_bounded(d1 in 0.0f64..50.0, dd in 0.0f64..50.0, beta in 0.0f64..5.0) {
        let t = transmittance_from_depth(&Tensor::new(vec![1, 1, 2], vec![d1, d1 + dd]).unwrap(), beta).unwrap();
        prop_assert!(t.data()[1] <= t.data()[0]);
        prop_assert!(t.data().iter().all(|&v| (1e-3..=1.0).contains(&v)));
    }

    #[test]
    fn metrics_are_symmetric(x in tensor(vec![3, 12, 12], 0.0, 1.0), y in tensor(vec![3, 12, 12], 0.0, 1.0)) {
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        let (s1, s2) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s1));
    }

    #[test]
    fn psnr_falls_as_mse_rises(m in 1e-9f64..1.0, k in 1.01f64..10.0) {
        prop_assert!(psnr_from_mse(m * k) < psnr_from_mse(m));
    }

    #[test]
    fn predicted_inverse_transmittance_is_at_least_one(seed in 0u64..1000, o in tensor(vec![3, 6, 7], 0.0, 1.0)) {
        let c = NetworkConfig { veil: true, seed, dense_layers: 1, recurrent_iters: 1, ..Default::default() };
        let mut p = NetworkParams::build(&c).unwrap();
        // Large weights push the head far into both relu regimes.
        p.values_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= 5.0));
        let d = derain(&p, &c, &o, LightMode::Known(0.7)).unwrap();
        prop_assert!(d.trace.inv_alpha.unwrap().min() >= 1.0);
        prop_assert!(d.restored.min() >= 0.0 && d.restored.max() <= 1.0);
    }
}
