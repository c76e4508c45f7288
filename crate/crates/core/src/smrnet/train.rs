use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::save_checkpoint;
use super::config::NetworkConfig;
use super::forward::forward;
use super::infer::{derain, LightMode};
use super::loss::network_loss;
use super::params::NetworkParams;
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::io::write_bytes;
use crate::metrics::{psnr, ssim, SSIM_WINDOW};
use crate::rain::RainScene;

/// Environment variable capping the worker threads used for training and
/// corpus-wide evaluation.
pub const THREADS_ENV: &str = "DERAIN_THREADS";

/// Thread pool sized by `threads`, else by [`THREADS_ENV`], else by rayon's default.
pub fn build_thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let threads = match threads {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            Err(_) => 0,
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Heavy-ball momentum for SGD.
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("momentum", self.momentum)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// First-order optimizer state, one slot per parameter tensor in key order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &NetworkParams) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Ok(Optimizer {
            config,
            v: zeros.clone(),
            m: zeros,
            steps: 0,
        })
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &[Vec<f64>]) {
        self.steps += 1;
        let c = &self.config;
        let lr = c.learning_rate;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for (((t, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let data = t.data_mut();
            match c.kind {
                OptimizerKind::Adam => {
                    for i in 0..data.len() {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
                    }
                }
                OptimizerKind::Sgd => {
                    for i in 0..data.len() {
                        m[i] = c.momentum * m[i] + g[i];
                        data[i] -= lr * m[i];
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Seeds the per-epoch shuffle of the training scenes.
    pub shuffle_seed: u64,
    /// Receives `epoch_NNN.smrc` and `training_log.csv` after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Atmospheric light used when scoring the holdout set.
    pub holdout_light: HoldoutLight,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 4,
            optimizer: OptimizerConfig::default(),
            shuffle_seed: 0,
            checkpoint_dir: None,
            holdout_light: HoldoutLight::Known,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HoldoutLight {
    /// Use each scene's ground-truth atmospheric light.
    Known,
    BrightestPixel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    /// Mean per-image loss over the epoch's updates.
    pub train_loss: f64,
    pub holdout_psnr: f64,
    /// `NaN` when holdout images are smaller than the SSIM window.
    pub holdout_ssim: f64,
    /// Mean absolute error of the predicted `1 / alpha`, with the veil head.
    pub holdout_inv_alpha_mae: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Holdout PSNR of the observations themselves.
    pub identity_psnr: f64,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,holdout_psnr,holdout_ssim,wall_seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            writeln!(
                out,
                "{},{:.8},{:.6},{:.6},{:.3}",
                r.epoch, r.train_loss, r.holdout_psnr, r.holdout_ssim, r.wall_seconds
            )
            .unwrap();
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: TrainingLog,
}

/// Loss and parameter gradients of one scene.
pub fn scene_gradients(
    params: &NetworkParams,
    config: &NetworkConfig,
    scene: &RainScene,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = params.attach(&mut g, true);
    let o = g.constant(scene.observed.clone());
    let out = forward(&mut g, &vars, config, o, scene.atmospheric_light)?;
    let loss = network_loss(&mut g, &out, scene, config)?;
    g.backward(loss)?;
    Ok((g.value(loss).data()[0], vars.grads(&g)))
}

/// Mean PSNR, SSIM and `1 / alpha` error of the network over `scenes`.
pub fn evaluate_scenes(
    params: &NetworkParams,
    config: &NetworkConfig,
    scenes: &[RainScene],
    light: HoldoutLight,
) -> Result<(f64, f64, Option<f64>)> {
    if scenes.is_empty() {
        return Ok((f64::NAN, f64::NAN, None));
    }
    let rows = scenes
        .par_iter()
        .map(|s| {
            let mode = match light {
                HoldoutLight::Known => LightMode::Known(s.atmospheric_light),
                HoldoutLight::BrightestPixel => LightMode::BrightestPixel,
            };
            let d = derain(params, config, &s.observed, mode)?;
            let p = psnr(&d.restored, &s.background)?;
            let (_, h, w) = s.background.chw()?;
            let q = if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
                ssim(&d.restored, &s.background)?
            } else {
                f64::NAN
            };
            let mae = match &d.trace.inv_alpha {
                Some(inv) => {
                    let truth = s.inv_transmittance();
                    let plane = truth.numel();
                    Some(
                        inv.data()[..plane]
                            .iter()
                            .zip(truth.data())
                            .map(|(a, b)| (a - b).abs())
                            .sum::<f64>()
                            / plane as f64,
                    )
                }
                None => None,
            };
            Ok((p, q, mae))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&(f64, f64, Option<f64>)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mae = if rows[0].2.is_some() {
        Some(mean(&|r| r.2.unwrap_or(f64::NAN)))
    } else {
        None
    };
    Ok((mean(&|r| r.0), mean(&|r| r.1), mae))
}

/// Mean holdout PSNR of the identity restorer (`B_hat = O`).
pub fn identity_psnr(scenes: &[RainScene]) -> Result<f64> {
    if scenes.is_empty() {
        return Ok(f64::NAN);
    }
    let total = scenes
        .iter()
        .map(|s| psnr(&s.observed, &s.background))
        .sum::<Result<f64>>()?;
    Ok(total / scenes.len() as f64)
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.smrc")
}

/// Path of the checkpoint written after `epoch` in `dir`.
pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(checkpoint_name(epoch))
}

/// Mini-batch training on in-memory scenes.
///
/// Per-image gradients of a batch are computed in parallel on the current
/// rayon pool and summed in batch order, so results do not depend on the
/// thread count. `on_epoch` sees every record as soon as it is complete.
pub fn train(
    mut params: NetworkParams,
    config: &NetworkConfig,
    train_set: &[RainScene],
    holdout: &[RainScene],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    params.check_against(config)?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if options.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut optimizer = Optimizer::new(options.optimizer.clone(), &params)?;
    let mut log = TrainingLog {
        records: Vec::with_capacity(options.epochs),
        identity_psnr: identity_psnr(holdout)?,
    };
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=options.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(options.shuffle_seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(options.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| scene_gradients(&params, config, &train_set[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut total: Option<Vec<Vec<f64>>> = None;
            for (loss, grads) in results {
                loss_sum += loss;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            optimizer.step(&mut params, &grads);
        }

        let (holdout_psnr, holdout_ssim, mae) =
            evaluate_scenes(&params, config, holdout, options.holdout_light)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            holdout_psnr,
            holdout_ssim,
            holdout_inv_alpha_mae: mae,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
        if let Some(dir) = &options.checkpoint_dir {
            save_checkpoint(&checkpoint_path(dir, epoch), config, &params)?;
            write_bytes(&dir.join("training_log.csv"), log.to_csv().as_bytes())?;
        }
    }
    Ok(TrainOutcome { params, log })
}
