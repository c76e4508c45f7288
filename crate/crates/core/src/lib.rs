//! Single-image deraining laboratory.
//!
//! - [`tensor`], [`autograd`], [`conv`], [`gradcheck`]: a small `f64` tensor
//!   library with tape-based reverse-mode differentiation.
//! - [`rain`]: layered rain streaks, depth-driven transmittance, veiled
//!   composition and its exact inversion.
//! - [`datagen`]: deterministic synthetic corpora with per-bin ground truth.
//! - [`smrnet`]: the scale-aware multi-stage recurrent network, its losses,
//!   trainer and checkpoints.
//! - [`metrics`]: PSNR and SSIM.
//! - [`ablate`]: recurrent-module-count comparison runs.

pub mod ablate;
pub mod autograd;
pub mod conv;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod rain;
pub mod smrnet;
pub mod tensor;

pub use autograd::{ElementwiseKind, Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Tensor, EPS_RECIP};
