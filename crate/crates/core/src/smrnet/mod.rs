//! Scale-aware multi-stage recurrent deraining network.
//!
//! A dense feature extractor (no downsampling) produces `F`. Each stage
//! feeds `F`, the previous stage output `T_{j-1}` (the observation for the
//! first stage) and the previous per-bin rain maps (zeros for the first
//! stage) to `K` parallel recurrent sub-networks, one per streak size bin.
//! Each sub-network refines its residual prediction `T` times:
//!
//! ```text
//! h_t = relu(W_x * X + W_p * P_{t-1} + b)      P_0 = 0
//! P_t = P_{t-1} + W_o * h_t + b_o
//! ```
//!
//! The stage adds `P_T` to the bin's previous map and subtracts the sum of
//! all maps from the observation. The optional veil head predicts
//! `1 / alpha = 1 + relu(raw)` from `F`, and the background is recovered as
//! `inv (O - A) - sum_i R_i + A`.

mod checkpoint;
mod config;
mod forward;
mod infer;
mod loss;
mod params;
mod train;
mod verify;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::NetworkConfig;
pub use forward::{forward, ForwardTrace, ForwardVars};
pub use infer::{derain, Derained, LightMode};
pub use loss::{loss_smrnet, loss_smrnet_veil, network_loss};
pub use params::{NetworkParams, ParamVars};
pub use train::{
    build_thread_pool, checkpoint_path, evaluate_scenes, identity_psnr, scene_gradients, train,
    EpochRecord, HoldoutLight, Optimizer, OptimizerConfig, OptimizerKind, TrainOptions,
    TrainOutcome, TrainingLog, THREADS_ENV,
};
pub use verify::{grad_check_scene, network_grad_check};

/// Randomly initialized weights for `config`.
pub fn build_network(config: &NetworkConfig) -> crate::Result<NetworkParams> {
    NetworkParams::build(config)
}
