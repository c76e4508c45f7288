//! Recurrent-module-count comparison: identical data, seed and budget,
//! differing only in the number of scale sub-networks.

use std::fmt::Write as _;

use crate::error::Result;
use crate::rain::RainScene;
use crate::smrnet::{build_network, train, EpochRecord, NetworkConfig, TrainOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: String,
    pub scale_bins: usize,
    pub param_count: usize,
    pub records: Vec<EpochRecord>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub identity_psnr: f64,
}

pub fn variant_name(scale_bins: usize) -> String {
    format!("modules_{scale_bins}")
}

impl AblationReport {
    /// One row per (variant, epoch). Wall time is left out so that reruns
    /// with the same seed reproduce the file byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,scale_bins,param_count,epoch,train_loss,holdout_psnr,holdout_ssim\n");
        for run in &self.runs {
            for r in &run.records {
                writeln!(
                    out,
                    "{},{},{},{},{:.8},{:.6},{:.6}",
                    run.variant, run.scale_bins, run.param_count, r.epoch, r.train_loss, r.holdout_psnr, r.holdout_ssim
                )
                .unwrap();
            }
        }
        out
    }

    /// Final holdout PSNR of each variant, in run order.
    pub fn final_psnr(&self) -> Vec<(String, f64)> {
        self.runs
            .iter()
            .map(|r| (r.variant.clone(), r.records.last().map_or(f64::NAN, |e| e.holdout_psnr)))
            .collect()
    }
}

/// Trains one network per entry of `module_counts` from the same base
/// configuration and options. Scenes must carry as many streak layers as the
/// largest module count; variants with fewer modules are trained on the
/// background loss alone or on the leading bins.
pub fn run_ablation(
    base: &NetworkConfig,
    module_counts: &[usize],
    train_set: &[RainScene],
    holdout: &[RainScene],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&str, &EpochRecord),
) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for &k in module_counts {
        let config = NetworkConfig { scale_bins: k, ..base.clone() };
        let params = build_network(&config)?;
        let param_count = params.scalar_count();
        let variant = variant_name(k);
        let (tr, ho) = (restrict(train_set, k), restrict(holdout, k));
        let outcome = train(params, &config, &tr, &ho, options, |r| on_epoch(&variant, r))?;
        report.identity_psnr = outcome.log.identity_psnr;
        report.runs.push(AblationRun {
            variant,
            scale_bins: k,
            param_count,
            records: outcome.log.records,
        });
    }
    Ok(report)
}

/// Keeps the first `k` streak layers of each scene (all of them for `k = 0`,
/// where the loss ignores rain maps).
fn restrict(scenes: &[RainScene], k: usize) -> Vec<RainScene> {
    scenes
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if k > 0 && s.streaks.len() > k {
                s.streaks.truncate(k);
                s.bins.truncate(k);
            }
            s
        })
        .collect()
}
