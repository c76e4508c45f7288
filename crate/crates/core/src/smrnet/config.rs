use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architecture hyperparameters.
///
/// `scale_bins == 0` selects the baseline without recurrent modules, which
/// regresses the clean background directly from the shared features.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Parallel recurrent sub-networks, one per streak size bin.
    pub scale_bins: usize,
    /// Refinement passes of each recurrent sub-network.
    pub recurrent_iters: usize,
    pub stages: usize,
    /// Stem width of the dense feature extractor; also the hidden width of
    /// the recurrent sub-networks and the veil head.
    pub feature_channels: usize,
    pub dense_layers: usize,
    pub growth_rate: usize,
    pub kernel_size: usize,
    pub veil: bool,
    /// Reuse one set of sub-network weights in every stage.
    pub share_stage_weights: bool,
    /// Weight of each stage's rain-map terms in the loss.
    pub stage_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            scale_bins: 3,
            recurrent_iters: 4,
            stages: 2,
            feature_channels: 16,
            dense_layers: 4,
            growth_rate: 8,
            kernel_size: 3,
            veil: false,
            share_stage_weights: false,
            stage_weights: vec![1.0, 1.0],
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Channels of the shared feature map `F`.
    pub fn feature_map_channels(&self) -> usize {
        self.feature_channels + self.dense_layers * self.growth_rate
    }

    /// Channels a stage feeds its sub-networks: `F`, the previous stage
    /// output and the previous stage's rain maps.
    pub fn stage_input_channels(&self) -> usize {
        self.feature_map_channels() + 3 + 3 * self.scale_bins
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }

    /// Parameter tensors held by stage-specific sub-networks.
    fn weight_sets(&self) -> usize {
        if self.share_stage_weights {
            1
        } else {
            self.stages
        }
    }

    /// Number of named parameter tensors:
    /// `2 + 2L + (K >= 1 ? 5 K S' : 4) + (veil ? 6 : 0)` with `S' = 1`
    /// when stage weights are shared and `S` otherwise.
    pub fn param_key_count(&self) -> usize {
        let body = if self.scale_bins == 0 {
            4
        } else {
            5 * self.scale_bins * self.weight_sets()
        };
        2 + 2 * self.dense_layers + body + if self.veil { 6 } else { 0 }
    }

    pub fn stage_weight(&self, stage: usize) -> f64 {
        self.stage_weights.get(stage).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("recurrent_iters", self.recurrent_iters),
            ("stages", self.stages),
            ("feature_channels", self.feature_channels),
            ("growth_rate", self.growth_rate),
            ("kernel_size", self.kernel_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config("kernel_size must be odd".into()));
        }
        if self.stage_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("stage weights must be >= 0".into()));
        }
        Ok(())
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let weights = self
            .stage_weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        write!(
            f,
            "scale_bins={};recurrent_iters={};stages={};feature_channels={};dense_layers={};\
             growth_rate={};kernel_size={};veil={};share_stage_weights={};stage_weights={};seed={}",
            self.scale_bins,
            self.recurrent_iters,
            self.stages,
            self.feature_channels,
            self.dense_layers,
            self.growth_rate,
            self.kernel_size,
            self.veil,
            self.share_stage_weights,
            weights,
            self.seed
        )
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut c = NetworkConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for field in s.split(';') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad network field {field:?}")))?;
            let bad = || Error::Config(format!("bad value for {key}: {value:?}"));
            let int = || value.parse::<usize>().map_err(|_| bad());
            let flag = || value.parse::<bool>().map_err(|_| bad());
            match key {
                "scale_bins" => c.scale_bins = int()?,
                "recurrent_iters" => c.recurrent_iters = int()?,
                "stages" => c.stages = int()?,
                "feature_channels" => c.feature_channels = int()?,
                "dense_layers" => c.dense_layers = int()?,
                "growth_rate" => c.growth_rate = int()?,
                "kernel_size" => c.kernel_size = int()?,
                "veil" => c.veil = flag()?,
                "share_stage_weights" => c.share_stage_weights = flag()?,
                "stage_weights" => {
                    c.stage_weights = value
                        .split(',')
                        .filter(|w| !w.is_empty())
                        .map(|w| w.parse::<f64>().map_err(|_| bad()))
                        .collect::<Result<_>>()?
                }
                "seed" => c.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown network key {key:?}"))),
            }
            seen.insert(key.to_string());
        }
        if seen.len() != 11 {
            return Err(Error::Config(format!("incomplete network description {s:?}")));
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_round_trips() {
        let mut c = NetworkConfig {
            veil: true,
            scale_bins: 2,
            stage_weights: vec![0.5, 1.0, 2.0],
            seed: 42,
            ..Default::default()
        };
        assert_eq!(c.to_string().parse::<NetworkConfig>().unwrap(), c);
        c.share_stage_weights = true;
        assert_eq!(c.to_string().parse::<NetworkConfig>().unwrap(), c);
        assert!("scale_bins=3".parse::<NetworkConfig>().is_err());
    }

    #[test]
    fn validation() {
        let c = NetworkConfig {
            stages: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = NetworkConfig {
            kernel_size: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(NetworkConfig::default().validate().is_ok());
    }

    #[test]
    fn default_channel_bookkeeping() {
        let c = NetworkConfig::default();
        assert_eq!(c.feature_map_channels(), 48);
        assert_eq!(c.stage_input_channels(), 60);
        assert_eq!(c.param_key_count(), 2 + 8 + 30);
    }
}
