use super::config::NetworkConfig;
use super::params::{recurrent_prefix, ParamVars};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Graph handles for every intermediate the losses supervise.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// Shared dense features `F`.
    pub features: Var,
    /// Accumulated rain map of every `(stage, scale)`, indexed `[stage][scale]`.
    pub rain_maps: Vec<Vec<Var>>,
    /// `O - sum_i R_i` after each stage.
    pub stage_outputs: Vec<Var>,
    /// Predicted `1 / alpha`, repeated over the color channels.
    pub inv_alpha: Option<Var>,
    /// Recovered background before clamping.
    pub background: Var,
}

/// Plain tensor values of a [`ForwardVars`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub features: Tensor,
    pub rain_maps: Vec<Vec<Tensor>>,
    pub stage_outputs: Vec<Tensor>,
    pub inv_alpha: Option<Tensor>,
    pub background: Tensor,
}

impl ForwardVars {
    pub fn trace(&self, g: &Graph) -> ForwardTrace {
        ForwardTrace {
            features: g.value(self.features).clone(),
            rain_maps: self
                .rain_maps
                .iter()
                .map(|stage| stage.iter().map(|&v| g.value(v).clone()).collect())
                .collect(),
            stage_outputs: self.stage_outputs.iter().map(|&v| g.value(v).clone()).collect(),
            inv_alpha: self.inv_alpha.map(|v| g.value(v).clone()),
            background: g.value(self.background).clone(),
        }
    }
}

impl ForwardTrace {
    /// Loads every tensor onto `g` as a constant.
    pub fn attach(&self, g: &mut Graph) -> ForwardVars {
        ForwardVars {
            features: g.constant(self.features.clone()),
            rain_maps: self
                .rain_maps
                .iter()
                .map(|stage| stage.iter().map(|t| g.constant(t.clone())).collect())
                .collect(),
            stage_outputs: self.stage_outputs.iter().map(|t| g.constant(t.clone())).collect(),
            inv_alpha: self.inv_alpha.as_ref().map(|t| g.constant(t.clone())),
            background: g.constant(self.background.clone()),
        }
    }

    /// Rain maps of the final stage.
    pub fn final_rain_maps(&self) -> &[Tensor] {
        self.rain_maps.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

struct Layers<'a> {
    g: &'a mut Graph,
    p: &'a ParamVars,
    padding: usize,
}

impl Layers<'_> {
    fn conv(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p.get(&format!("{name}.weight"))?;
        let b = self.p.get(&format!("{name}.bias"))?;
        self.g.conv2d(x, w, b, 1, self.padding)
    }

    fn conv_relu(&mut self, x: Var, name: &str) -> Result<Var> {
        let y = self.conv(x, name)?;
        self.g.relu(y)
    }

    /// Convolution without a bias term.
    fn conv_nobias(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p.get(&format!("{name}.weight"))?;
        let out = self.g.value(w).shape()[0];
        let b = self.g.constant(Tensor::zeros(&[out]));
        self.g.conv2d(x, w, b, 1, self.padding)
    }
}

/// Runs the network on a `3 x H x W` observation.
///
/// `light` is the atmospheric light used by the veil-aware recovery and is
/// ignored otherwise.
pub fn forward(
    g: &mut Graph,
    params: &ParamVars,
    config: &NetworkConfig,
    observed: Var,
    light: f64,
) -> Result<ForwardVars> {
    let (c, h, w) = g.value(observed).chw()?;
    if c != 3 {
        return Err(Error::shape("forward", "observation channels", 3, c));
    }
    let mut n = Layers {
        g,
        p: params,
        padding: config.padding(),
    };

    let stem = n.conv_relu(observed, "features.stem")?;
    let mut dense = vec![stem];
    for l in 0..config.dense_layers {
        let input = if dense.len() == 1 { dense[0] } else { n.g.concat_channels(&dense)? };
        let out = n.conv_relu(input, &format!("features.dense{l}"))?;
        dense.push(out);
    }
    let features = if dense.len() == 1 { dense[0] } else { n.g.concat_channels(&dense)? };

    let inv_alpha = if config.veil {
        let a = n.conv_relu(features, "veil.conv1")?;
        let a = n.conv_relu(a, "veil.conv2")?;
        let raw = n.conv(a, "veil.out")?;
        let pos = n.g.relu(raw)?;
        let inv = n.g.affine(pos, 1.0, 1.0)?;
        Some(n.g.repeat_channels(inv, 3)?)
    } else {
        None
    };

    let k = config.scale_bins;
    let mut rain_maps: Vec<Vec<Var>> = Vec::with_capacity(config.stages);
    let mut stage_outputs = Vec::with_capacity(config.stages);

    let residual_sum = if k == 0 {
        let hidden = n.conv_relu(features, "direct.hidden")?;
        let delta = n.conv(hidden, "direct.out")?;
        // The recovery below subtracts the rain estimate, so the direct head's
        // correction enters with a flipped sign.
        let rain = n.g.affine(delta, -1.0, 0.0)?;
        let out = n.g.sub(observed, rain)?;
        stage_outputs.push(out);
        Some(rain)
    } else {
        let zero = n.g.constant(Tensor::zeros(&[3, h, w]));
        let mut prev_maps = vec![zero; k];
        let mut prev_out = observed;
        let mut total = None;
        for stage in 0..config.stages {
            let mut parts = vec![features, prev_out];
            parts.extend(&prev_maps);
            let x = n.g.concat_channels(&parts)?;
            let mut maps = Vec::with_capacity(k);
            for scale in 0..k {
                let prefix = recurrent_prefix(config, stage, scale);
                let from_x = n.conv(x, &format!("{prefix}.in_features"))?;
                let mut state: Option<Var> = None;
                for _ in 0..config.recurrent_iters {
                    let pre = match state {
                        Some(s) => {
                            let from_s = n.conv_nobias(s, &format!("{prefix}.in_state"))?;
                            n.g.add(from_x, from_s)?
                        }
                        None => from_x,
                    };
                    let hid = n.g.relu(pre)?;
                    let delta = n.conv(hid, &format!("{prefix}.out"))?;
                    state = Some(match state {
                        Some(s) => n.g.add(s, delta)?,
                        None => delta,
                    });
                }
                let refined = n.g.add(prev_maps[scale], state.expect("recurrent_iters >= 1"))?;
                maps.push(refined);
            }
            let mut sum = maps[0];
            for &m in &maps[1..] {
                sum = n.g.add(sum, m)?;
            }
            let out = n.g.sub(observed, sum)?;
            stage_outputs.push(out);
            prev_out = out;
            prev_maps = maps.clone();
            rain_maps.push(maps);
            total = Some(sum);
        }
        total
    };
    let rain = residual_sum.expect("at least one stage");

    let background = match inv_alpha {
        Some(inv) => {
            let a = n.g.constant(Tensor::scalar(light));
            let shifted = n.g.sub(observed, a)?;
            let scaled = n.g.mul(inv, shifted)?;
            let derained = n.g.sub(scaled, rain)?;
            n.g.add(derained, a)?
        }
        None => *stage_outputs.last().expect("at least one stage"),
    };

    Ok(ForwardVars {
        features,
        rain_maps,
        stage_outputs,
        inv_alpha,
        background,
    })
}
