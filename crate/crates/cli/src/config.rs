//! Run configuration files.
//!
//! A TOML document with up to three tables; every key is optional and
//! unknown keys are errors:
//!
//! ```toml
//! [network]
//! scale_bins = 3
//! veil = true
//!
//! [scene]
//! height = 32
//! width = 32
//! beta = [0.3, 1.0]
//!
//! [scene.streaks.small]
//! count = [10, 40]
//!
//! [train]
//! epochs = 30
//! learning_rate = 1e-3
//! ```
//!
//! The fully resolved configuration is written next to every run's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use derain_core::datagen::{even_orientations, BinSpec, DepthKind, RainSceneSpec, Span};
use derain_core::rain::StreakBin;
use derain_core::smrnet::{HoldoutLight, NetworkConfig, OptimizerConfig, OptimizerKind, TrainOptions};
use serde::{Deserialize, Serialize};

pub const ECHO_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub scale_bins: Option<usize>,
    pub recurrent_iters: Option<usize>,
    pub stages: Option<usize>,
    pub feature_channels: Option<usize>,
    pub dense_layers: Option<usize>,
    pub growth_rate: Option<usize>,
    pub kernel_size: Option<usize>,
    pub veil: Option<bool>,
    pub share_stage_weights: Option<bool>,
    pub stage_weights: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSection {
    pub count: Option<[usize; 2]>,
    pub intensity: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub seed: Option<u64>,
    pub veil: Option<bool>,
    pub beta: Option<[f64; 2]>,
    pub light: Option<[f64; 2]>,
    pub orientations: Option<usize>,
    pub max_angle_deg: Option<f64>,
    pub depth_near: Option<f64>,
    pub depth_far: Option<f64>,
    /// Bin labels in order, e.g. `["small", "middle", "large"]`.
    pub bins: Option<Vec<String>>,
    pub streaks: Option<BTreeMap<String, BinSection>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    /// `"adam"` or `"sgd"`.
    pub optimizer: Option<String>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub momentum: Option<f64>,
    pub shuffle_seed: Option<u64>,
    /// `"known"` or `"brightest"`.
    pub holdout_light: Option<String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let n = &self.network;
        let d = NetworkConfig::default();
        let stages = n.stages.unwrap_or(d.stages);
        let c = NetworkConfig {
            scale_bins: n.scale_bins.unwrap_or(d.scale_bins),
            recurrent_iters: n.recurrent_iters.unwrap_or(d.recurrent_iters),
            stages,
            feature_channels: n.feature_channels.unwrap_or(d.feature_channels),
            dense_layers: n.dense_layers.unwrap_or(d.dense_layers),
            growth_rate: n.growth_rate.unwrap_or(d.growth_rate),
            kernel_size: n.kernel_size.unwrap_or(d.kernel_size),
            veil: n.veil.unwrap_or(d.veil),
            share_stage_weights: n.share_stage_weights.unwrap_or(d.share_stage_weights),
            stage_weights: n.stage_weights.clone().unwrap_or_else(|| vec![1.0; stages]),
            seed: n.seed.unwrap_or(d.seed),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn scene(&self) -> Result<RainSceneSpec> {
        let s = &self.scene;
        let (h, w) = (s.height.unwrap_or(64), s.width.unwrap_or(64));
        let mut spec = RainSceneSpec::desk(h, w, s.seed.unwrap_or(0));
        if let Some(labels) = &s.bins {
            spec.bins = labels
                .iter()
                .map(|l| {
                    StreakBin::from_label(l)
                        .map(|b| BinSpec::desk_default(b, h, w))
                        .with_context(|| format!("unknown streak bin {l:?} (expected small, middle or large)"))
                })
                .collect::<Result<_>>()?;
        }
        for (label, over) in s.streaks.iter().flatten() {
            let Some(bin) = spec.bins.iter_mut().find(|b| b.bin.label() == label) else {
                bail!("[scene.streaks.{label}] names a bin that is not enabled");
            };
            if let Some([lo, hi]) = over.count {
                bin.count = (lo, hi);
            }
            if let Some([lo, hi]) = over.intensity {
                bin.intensity = Span::new(lo, hi);
            }
        }
        if let Some(v) = s.veil {
            spec.veil = v;
        }
        if let Some([lo, hi]) = s.beta {
            spec.beta = Span::new(lo, hi);
        }
        if let Some([lo, hi]) = s.light {
            spec.light = Span::new(lo, hi);
        }
        if s.orientations.is_some() || s.max_angle_deg.is_some() {
            spec.orientations = even_orientations(s.orientations.unwrap_or(11), s.max_angle_deg.unwrap_or(55.0));
        }
        if let DepthKind::RampBlobs { near, far } = spec.depth {
            spec.depth = DepthKind::RampBlobs {
                near: s.depth_near.unwrap_or(near),
                far: s.depth_far.unwrap_or(far),
            };
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn train(&self) -> Result<TrainOptions> {
        let t = &self.train;
        let d = TrainOptions::default();
        let od = OptimizerConfig::default();
        let kind = match t.optimizer.as_deref() {
            None | Some("adam") => OptimizerKind::Adam,
            Some("sgd") => OptimizerKind::Sgd,
            Some(other) => bail!("unknown optimizer {other:?} (expected \"adam\" or \"sgd\")"),
        };
        let holdout_light = match t.holdout_light.as_deref() {
            None | Some("known") => HoldoutLight::Known,
            Some("brightest") => HoldoutLight::BrightestPixel,
            Some(other) => bail!("unknown holdout_light {other:?} (expected \"known\" or \"brightest\")"),
        };
        let optimizer = OptimizerConfig {
            kind,
            learning_rate: t.learning_rate.unwrap_or(od.learning_rate),
            beta1: t.beta1.unwrap_or(od.beta1),
            beta2: t.beta2.unwrap_or(od.beta2),
            epsilon: t.epsilon.unwrap_or(od.epsilon),
            momentum: t.momentum.unwrap_or(od.momentum),
        };
        optimizer.validate()?;
        Ok(TrainOptions {
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            optimizer,
            shuffle_seed: t.shuffle_seed.unwrap_or(d.shuffle_seed),
            checkpoint_dir: None,
            holdout_light,
        })
    }
}

/// Every setting a run used, with defaults filled in.
pub fn resolved(network: &NetworkConfig, scene: &RainSceneSpec, train: &TrainOptions) -> ConfigFile {
    let streaks = scene
        .bins
        .iter()
        .map(|b| {
            (
                b.bin.label().to_string(),
                BinSection {
                    count: Some([b.count.0, b.count.1]),
                    intensity: Some([b.intensity.lo, b.intensity.hi]),
                },
            )
        })
        .collect();
    let (near, far) = match scene.depth {
        DepthKind::RampBlobs { near, far } => (Some(near), Some(far)),
        DepthKind::Constant(d) => (Some(d), Some(d)),
    };
    let max_angle = scene.orientations.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    ConfigFile {
        network: NetworkSection {
            scale_bins: Some(network.scale_bins),
            recurrent_iters: Some(network.recurrent_iters),
            stages: Some(network.stages),
            feature_channels: Some(network.feature_channels),
            dense_layers: Some(network.dense_layers),
            growth_rate: Some(network.growth_rate),
            kernel_size: Some(network.kernel_size),
            veil: Some(network.veil),
            share_stage_weights: Some(network.share_stage_weights),
            stage_weights: Some(network.stage_weights.clone()),
            seed: Some(network.seed),
        },
        scene: SceneSection {
            height: Some(scene.height),
            width: Some(scene.width),
            seed: Some(scene.seed),
            veil: Some(scene.veil),
            beta: Some([scene.beta.lo, scene.beta.hi]),
            light: Some([scene.light.lo, scene.light.hi]),
            orientations: Some(scene.orientations.len()),
            max_angle_deg: Some(max_angle),
            depth_near: near,
            depth_far: far,
            bins: Some(scene.bins.iter().map(|b| b.bin.label().to_string()).collect()),
            streaks: Some(streaks),
        },
        train: TrainSection {
            epochs: Some(train.epochs),
            batch_size: Some(train.batch_size),
            optimizer: Some(
                match train.optimizer.kind {
                    OptimizerKind::Adam => "adam",
                    OptimizerKind::Sgd => "sgd",
                }
                .into(),
            ),
            learning_rate: Some(train.optimizer.learning_rate),
            beta1: Some(train.optimizer.beta1),
            beta2: Some(train.optimizer.beta2),
            epsilon: Some(train.optimizer.epsilon),
            momentum: Some(train.optimizer.momentum),
            shuffle_seed: Some(train.shuffle_seed),
            holdout_light: Some(
                match train.holdout_light {
                    HoldoutLight::Known => "known",
                    HoldoutLight::BrightestPixel => "brightest",
                }
                .into(),
            ),
        },
    }
}

pub fn write_echo(dir: &Path, config: &ConfigFile) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(ECHO_FILE);
    let text = toml::to_string(config).context("cannot serialize the resolved configuration")?;
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[network]\nscale_bin = 3\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[nettwork]\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[scene.streaks.small]\ncolour = 1\n").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let file: ConfigFile = toml::from_str(
            "[network]\nveil = true\nstages = 3\n[scene]\nheight = 20\nbins = [\"small\", \"large\"]\n\
             [scene.streaks.large]\ncount = [1, 2]\n[train]\noptimizer = \"sgd\"\nmomentum = 0.5\n",
        )
        .unwrap();
        let (n, s, t) = (file.network().unwrap(), file.scene().unwrap(), file.train().unwrap());
        assert_eq!(n.stage_weights, vec![1.0; 3]);
        assert_eq!(s.bins[1].count, (1, 2));
        let echo = toml::to_string(&resolved(&n, &s, &t)).unwrap();
        let back: ConfigFile = toml::from_str(&echo).unwrap();
        assert_eq!(back.network().unwrap(), n);
        assert_eq!(back.scene().unwrap(), s);
        assert_eq!(back.train().unwrap().optimizer, t.optimizer);
    }

    #[test]
    fn bad_values_are_reported() {
        let file: ConfigFile = toml::from_str("[train]\noptimizer = \"rmsprop\"\n").unwrap();
        assert!(file.train().unwrap_err().to_string().contains("rmsprop"));
        let file: ConfigFile = toml::from_str("[scene]\nbins = [\"tiny\"]\n").unwrap();
        assert!(file.scene().is_err());
    }
}
