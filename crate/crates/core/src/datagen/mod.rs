//! Deterministic synthetic rain corpora.
//!
//! A scene is drawn from a [`RainSceneSpec`] and its seed alone. Each
//! ingredient (background, every streak bin, depth, scalars) reads from its
//! own ChaCha stream, so toggling the veil or changing one bin never shifts
//! the random draws of another.

mod dataset;
mod procedural;
mod spec;
mod streak;

pub use dataset::{generate_dataset, scene_seed, DatasetManifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub use procedural::{render_background, render_depth, BACKGROUND_RANGE};
pub use spec::{even_orientations, BackgroundKind, BinSpec, DepthKind, RainSceneSpec, Span};
pub use streak::{component_areas, render_streak_layer, StreakLayer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rain::{compose_veiled, transmittance_from_depth, RainScene};
use crate::tensor::Tensor;

const STREAM_BACKGROUND: u64 = 1;
const STREAM_DEPTH: u64 = 2;
const STREAM_SCALARS: u64 = 3;
const STREAM_BIN_BASE: u64 = 16;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A rendered scene plus the per-streak areas of every layer.
#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub scene: RainScene,
    pub layers: Vec<StreakLayer>,
}

/// Renders the full ground-truth bundle for `spec`.
///
/// Without a veil the transmittance is one everywhere and there is no depth.
pub fn render_scene(spec: &RainSceneSpec) -> Result<RenderedScene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let background = render_background(spec.background, h, w, &mut stream(spec.seed, STREAM_BACKGROUND));
    let layers = spec
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| render_streak_layer(spec, b, &mut stream(spec.seed, STREAM_BIN_BASE + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let streaks: Vec<Tensor> = layers.iter().map(|l| l.map.clone()).collect();

    let mut scalars = stream(spec.seed, STREAM_SCALARS);
    let beta = spec.beta.sample(&mut scalars);
    let light = spec.light.sample(&mut scalars);

    let (depth, beta, transmittance) = if spec.veil {
        let depth = render_depth(spec.depth, h, w, &mut stream(spec.seed, STREAM_DEPTH));
        let alpha = transmittance_from_depth(&depth, beta)?;
        (Some(depth), beta, alpha)
    } else {
        (None, 0.0, Tensor::ones(&[1, h, w]))
    };
    let observed = compose_veiled(&background, &streaks, &transmittance, &light.into())?;
    Ok(RenderedScene {
        scene: RainScene {
            background,
            streaks,
            bins: spec.bin_labels(),
            transmittance,
            atmospheric_light: light,
            observed,
            depth,
            beta,
        },
        layers,
    })
}
