use super::config::NetworkConfig;
use super::forward::ForwardVars;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rain::RainScene;

/// `MSE(B_hat, B) + sum_j w_j sum_i MSE(R_hat_i^j, R_i)`.
///
/// Without recurrent modules only the background term remains.
pub fn loss_smrnet(
    g: &mut Graph,
    out: &ForwardVars,
    scene: &RainScene,
    config: &NetworkConfig,
) -> Result<Var> {
    let truth = g.constant(scene.background.clone());
    let mut total = g.reduce_mse(out.background, truth)?;
    if config.scale_bins == 0 {
        return Ok(total);
    }
    if scene.streaks.len() != config.scale_bins {
        return Err(Error::shape(
            "loss_smrnet",
            "streak bin count",
            config.scale_bins,
            scene.streaks.len(),
        ));
    }
    let targets: Vec<Var> = scene.streaks.iter().map(|r| g.constant(r.clone())).collect();
    for (stage, maps) in out.rain_maps.iter().enumerate() {
        let weight = config.stage_weight(stage);
        if weight == 0.0 {
            continue;
        }
        for (&pred, &target) in maps.iter().zip(&targets) {
            let term = g.reduce_mse(pred, target)?;
            let term = g.affine(term, weight, 0.0)?;
            total = g.add(total, term)?;
        }
    }
    Ok(total)
}

/// [`loss_smrnet`] plus `MSE(inv_alpha_hat, 1 / alpha)`.
pub fn loss_smrnet_veil(
    g: &mut Graph,
    out: &ForwardVars,
    scene: &RainScene,
    config: &NetworkConfig,
) -> Result<Var> {
    let Some(inv) = out.inv_alpha else {
        return Err(Error::Config(
            "veil loss needs a transmittance prediction; enable the veil head".into(),
        ));
    };
    let base = loss_smrnet(g, out, scene, config)?;
    let target = g.constant(scene.inv_transmittance().repeat_channels(3)?);
    let term = g.reduce_mse(inv, target)?;
    g.add(base, term)
}

/// The training objective matching `config.veil`.
pub fn network_loss(
    g: &mut Graph,
    out: &ForwardVars,
    scene: &RainScene,
    config: &NetworkConfig,
) -> Result<Var> {
    if config.veil {
        loss_smrnet_veil(g, out, scene, config)
    } else {
        loss_smrnet(g, out, scene, config)
    }
}
