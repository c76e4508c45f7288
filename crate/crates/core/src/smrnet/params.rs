use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`; for convolutions followed by a relu.
    HeUniform,
    /// Uniform in `±0.1 sqrt(3 / fan_in)`; for layers that emit residuals.
    SmallUniform,
    Zero,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn conv(specs: &mut Vec<ParamSpec>, name: &str, out: usize, inp: usize, k: usize, init: Init, bias: bool) {
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![out, inp, k, k],
        init,
    });
    if bias {
        specs.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![out],
            init: Init::Zero,
        });
    }
}

/// Key prefix of the sub-network for `(stage, scale)`.
pub(crate) fn recurrent_prefix(config: &NetworkConfig, stage: usize, scale: usize) -> String {
    if config.share_stage_weights {
        format!("shared.scale{scale}")
    } else {
        format!("stage{stage}.scale{scale}")
    }
}

fn param_specs(config: &NetworkConfig) -> Vec<ParamSpec> {
    let k = config.kernel_size;
    let hidden = config.feature_channels;
    let features = config.feature_map_channels();
    let mut s = Vec::new();

    conv(&mut s, "features.stem", hidden, 3, k, Init::HeUniform, true);
    for l in 0..config.dense_layers {
        let inp = hidden + l * config.growth_rate;
        conv(&mut s, &format!("features.dense{l}"), config.growth_rate, inp, k, Init::HeUniform, true);
    }

    if config.scale_bins == 0 {
        conv(&mut s, "direct.hidden", hidden, features, k, Init::HeUniform, true);
        conv(&mut s, "direct.out", 3, hidden, k, Init::SmallUniform, true);
    } else {
        let sets = if config.share_stage_weights { 1 } else { config.stages };
        for stage in 0..sets {
            for scale in 0..config.scale_bins {
                let p = recurrent_prefix(config, stage, scale);
                let x = config.stage_input_channels();
                conv(&mut s, &format!("{p}.in_features"), hidden, x, k, Init::HeUniform, true);
                conv(&mut s, &format!("{p}.in_state"), hidden, 3, k, Init::HeUniform, false);
                conv(&mut s, &format!("{p}.out"), 3, hidden, k, Init::SmallUniform, true);
            }
        }
    }

    if config.veil {
        conv(&mut s, "veil.conv1", hidden, features, k, Init::HeUniform, true);
        conv(&mut s, "veil.conv2", hidden, hidden, k, Init::HeUniform, true);
        conv(&mut s, "veil.out", 1, hidden, k, Init::SmallUniform, true);
    }
    s
}

/// Named network weights, iterated in key order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    tensors: BTreeMap<String, Tensor>,
}

impl NetworkParams {
    /// Randomly initialized weights; deterministic in `config.seed`.
    pub fn build(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut specs = param_specs(config);
        specs.sort_by(|a, b| a.name.cmp(&b.name));
        let tensors = specs
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let fan_in: usize = spec.shape[1..].iter().product();
                let bound = match spec.init {
                    Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
                    Init::SmallUniform => 0.1 * (3.0 / fan_in as f64).sqrt(),
                    Init::Zero => 0.0,
                };
                let data = if bound == 0.0 {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                (spec.name, Tensor::from_parts(spec.shape, data))
            })
            .collect();
        Ok(NetworkParams { tensors })
    }

    /// All-zero weights of the right shapes. Every predicted rain map is
    /// zero, so the network reproduces its input.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(NetworkParams {
            tensors: param_specs(config)
                .into_iter()
                .map(|s| {
                    let t = Tensor::zeros(&s.shape);
                    (s.name, t)
                })
                .collect(),
        })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        NetworkParams { tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.values_mut()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Fails unless the keys and shapes are exactly those `config` expects.
    pub fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        let expected: BTreeMap<String, Vec<usize>> = param_specs(config)
            .into_iter()
            .map(|s| (s.name, s.shape))
            .collect();
        let missing: Vec<&String> = expected.keys().filter(|k| !self.tensors.contains_key(*k)).collect();
        let extra: Vec<&String> = self.tensors.keys().filter(|k| !expected.contains_key(*k)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Config(format!(
                "parameter keys do not match the network: missing {missing:?}, unexpected {extra:?}"
            )));
        }
        for (name, shape) in &expected {
            let got = self.tensors[name].shape();
            if got != shape.as_slice() {
                return Err(Error::shape("params", name.clone(), format!("{shape:?}"), format!("{got:?}")));
            }
        }
        Ok(())
    }

    /// Places every tensor on `g`, as trainable leaves or as constants.
    pub fn attach(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| {
                    let v = if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
                    (k.clone(), v)
                })
                .collect(),
        }
    }
}

/// Graph handles for a [`NetworkParams`], keyed identically.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        ParamVars {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    /// Gradients in key order; parameters the loss does not reach get zeros.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.vars
            .values()
            .map(|&v| match g.grad(v) {
                Some(t) => t.into_data(),
                None => vec![0.0; g.value(v).numel()],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn configs() -> Vec<NetworkConfig> {
        let mut out = Vec::new();
        for k in [0, 1, 3] {
            for stages in [1, 3] {
                for veil in [false, true] {
                    for share in [false, true] {
                        for layers in [0, 2] {
                            out.push(NetworkConfig {
                                scale_bins: k,
                                stages,
                                veil,
                                share_stage_weights: share,
                                dense_layers: layers,
                                ..Default::default()
                            });
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn key_count_matches_closed_form() {
        for c in configs() {
            let p = NetworkParams::build(&c).unwrap();
            assert_eq!(p.len(), c.param_key_count(), "{c}");
            p.check_against(&c).unwrap();
            assert_eq!(NetworkParams::zeros(&c).unwrap().len(), p.len());
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = NetworkConfig::default();
        let a = NetworkParams::build(&c).unwrap();
        assert_eq!(a, NetworkParams::build(&c).unwrap());
        let other = NetworkParams::build(&NetworkConfig { seed: 1, ..c.clone() }).unwrap();
        assert_ne!(a, other);
        let stem = a.get("features.stem.weight").unwrap();
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(stem.data().iter().all(|v| v.abs() < bound));
        assert!(a.get("features.stem.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_keys_are_reported() {
        let p = NetworkParams::build(&NetworkConfig::default()).unwrap();
        let veiled = NetworkConfig {
            veil: true,
            ..Default::default()
        };
        let err = p.check_against(&veiled).unwrap_err().to_string();
        assert!(err.contains("veil.conv1.weight"), "{err}");
    }
}
