use super::config::NetworkConfig;
use super::forward::{forward, ForwardTrace};
use super::params::NetworkParams;
use crate::autograd::Graph;
use crate::error::Result;
use crate::rain::estimate_atmospheric_light;
use crate::tensor::Tensor;

/// Where the veil-aware recovery gets its atmospheric light.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LightMode {
    Known(f64),
    /// Mean color of the brightest pixel of the observation.
    BrightestPixel,
}

impl LightMode {
    pub fn resolve(self, observed: &Tensor) -> Result<f64> {
        match self {
            LightMode::Known(a) => Ok(a),
            LightMode::BrightestPixel => estimate_atmospheric_light(observed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Derained {
    /// Recovered background clamped to `[0, 1]`.
    pub restored: Tensor,
    pub light: f64,
    pub trace: ForwardTrace,
}

/// Removes rain (and haze, with the veil head) from one observation.
pub fn derain(
    params: &NetworkParams,
    config: &NetworkConfig,
    observed: &Tensor,
    light: LightMode,
) -> Result<Derained> {
    let light = light.resolve(observed)?;
    let mut g = Graph::new();
    let vars = params.attach(&mut g, false);
    let o = g.constant(observed.clone());
    let out = forward(&mut g, &vars, config, o, light)?;
    let trace = out.trace(&g);
    Ok(Derained {
        restored: trace.background.clamp(0.0, 1.0),
        light,
        trace,
    })
}
