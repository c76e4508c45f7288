use derain_core::gradcheck::op_suite;
use derain_core::smrnet::{grad_check_scene, network_grad_check, NetworkConfig, NetworkParams};

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

#[test]
fn every_op_passes_finite_differences_over_five_seeds() {
    for seed in 0..5 {
        for (name, report) in op_suite(seed, STEP, TOL).unwrap() {
            assert!(report.checked > 0, "{name}");
            assert!(report.passed(), "seed {seed} {name}: {report:?}");
        }
    }
}

#[test]
fn full_veiled_network_passes_at_8x8_over_five_seeds() {
    for seed in 0..5 {
        let c = NetworkConfig {
            veil: true,
            seed,
            ..Default::default()
        };
        let p = NetworkParams::build(&c).unwrap();
        let scene = grad_check_scene(8, 8, seed).unwrap();
        let report = network_grad_check(&c, &p, &scene, 3, seed, STEP, TOL).unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn shared_stages_and_baseline_pass() {
    for c in [
        NetworkConfig {
            share_stage_weights: true,
            stages: 3,
            ..Default::default()
        },
        NetworkConfig {
            scale_bins: 0,
            veil: true,
            ..Default::default()
        },
    ] {
        let p = NetworkParams::build(&c).unwrap();
        let mut scene = grad_check_scene(8, 8, 3).unwrap();
        if c.scale_bins == 0 {
            scene.streaks.clear();
            scene.bins.clear();
        }
        let report = network_grad_check(&c, &p, &scene, 2, 3, STEP, TOL).unwrap();
        assert!(report.passed(), "{c}: {report:?}");
    }
}
