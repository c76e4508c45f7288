use super::config::NetworkConfig;
use super::forward::forward;
use super::loss::network_loss;
use super::params::{NetworkParams, ParamVars};
use crate::datagen::{render_scene, RainSceneSpec, Span};
use crate::error::Result;
use crate::gradcheck::{grad_check_at, sample_coords, GradCheckReport};
use crate::rain::RainScene;

/// Veiled `h x w` scene with one streak layer per bin, for gradient checks.
pub fn grad_check_scene(h: usize, w: usize, seed: u64) -> Result<RainScene> {
    let mut spec = RainSceneSpec::desk(h, w, seed);
    spec.veil = true;
    spec.beta = Span::new(0.3, 1.0);
    Ok(render_scene(&spec)?.scene)
}

/// Compares reverse-mode parameter gradients of the full training loss
/// against central differences at `per_tensor` sampled elements of every
/// parameter tensor.
pub fn network_grad_check(
    config: &NetworkConfig,
    params: &NetworkParams,
    scene: &RainScene,
    per_tensor: usize,
    seed: u64,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    params.check_against(config)?;
    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let inputs: Vec<_> = params.iter().map(|(_, t)| t.clone()).collect();
    let coords = sample_coords(&inputs, per_tensor, seed);
    grad_check_at(
        |g, vars| {
            let pv = ParamVars::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let o = g.constant(scene.observed.clone());
            let out = forward(g, &pv, config, o, scene.atmospheric_light)?;
            network_loss(g, &out, scene, config)
        },
        &inputs,
        &coords,
        step,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn veiled_network_gradients_match_at_8x8() {
        let c = NetworkConfig { veil: true, seed: 1, ..Default::default() };
        let p = NetworkParams::build(&c).unwrap();
        let scene = grad_check_scene(8, 8, 1).unwrap();
        let report = network_grad_check(&c, &p, &scene, 2, 1, 1e-3, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 2 * c.param_key_count() - 1);
    }
}
