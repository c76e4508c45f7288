//! Procedural clean backgrounds and depth maps.

use rand::Rng;

use super::spec::{BackgroundKind, DepthKind};
use crate::tensor::Tensor;

/// Backgrounds stay inside this range, leaving headroom for additive streaks.
pub const BACKGROUND_RANGE: (f64, f64) = (0.05, 0.85);

/// Lattice of random values sampled with smoothstep interpolation.
struct ValueNoise {
    cells: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        let n = cells + 1;
        ValueNoise {
            cells,
            values: (0..n * n).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    /// `u, v` in `[0, 1]`.
    fn sample(&self, u: f64, v: f64) -> f64 {
        let n = self.cells + 1;
        let fx = u * self.cells as f64;
        let fy = v * self.cells as f64;
        let x0 = (fx.floor() as usize).min(self.cells - 1);
        let y0 = (fy.floor() as usize).min(self.cells - 1);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let tx = smooth(fx - x0 as f64);
        let ty = smooth(fy - y0 as f64);
        let at = |x: usize, y: usize| self.values[y * n + x];
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
        let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Three octaves of value noise with halving amplitude, normalized to `[0, 1]`.
struct Fractal(Vec<ValueNoise>);

impl Fractal {
    fn new(base_cells: usize, rng: &mut impl Rng) -> Self {
        Fractal(
            (0..3)
                .map(|o| ValueNoise::new(base_cells << o, rng))
                .collect(),
        )
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        for octave in &self.0 {
            total += amp * octave.sample(u, v);
            norm += amp;
            amp *= 0.5;
        }
        total / norm
    }
}

fn unit_coords(y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
    let u = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.5 };
    let v = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.5 };
    (u, v)
}

pub fn render_background(kind: BackgroundKind, h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
    let (lo, hi) = BACKGROUND_RANGE;
    match kind {
        BackgroundKind::Flat(v) => Tensor::full(&[3, h, w], v),
        BackgroundKind::ValueNoise => {
            let luminance = Fractal::new(3, rng);
            let chroma: Vec<Fractal> = (0..3).map(|_| Fractal::new(2, rng)).collect();
            let tint: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.15..0.15)).collect();
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let (gx, gy) = (angle.cos(), angle.sin());
            Tensor::from_fn_chw(3, h, w, |c, y, x| {
                let (u, v) = unit_coords(y, x, h, w);
                let ramp = 0.5 + 0.5 * ((u - 0.5) * gx + (v - 0.5) * gy) * std::f64::consts::SQRT_2;
                let t = 0.55 * luminance.sample(u, v)
                    + 0.25 * ramp
                    + 0.2 * chroma[c].sample(u, v)
                    + tint[c];
                lo + (hi - lo) * t.clamp(0.0, 1.0)
            })
        }
    }
}

/// Single-channel depth map, nonnegative.
pub fn render_depth(kind: DepthKind, h: usize, w: usize, rng: &mut impl Rng) -> Tensor {
    match kind {
        DepthKind::Constant(d) => Tensor::full(&[1, h, w], d),
        DepthKind::RampBlobs { near, far } => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let (gx, gy) = (angle.cos(), angle.sin());
            let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen::<f64>(),
                        rng.gen::<f64>(),
                        rng.gen_range(0.1..0.35),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let mut raw = Tensor::from_fn_chw(1, h, w, |_, y, x| {
                let (u, v) = unit_coords(y, x, h, w);
                let ramp = 0.5 + 0.5 * ((u - 0.5) * gx + (v - 0.5) * gy) * std::f64::consts::SQRT_2;
                let bumps: f64 = blobs
                    .iter()
                    .map(|&(cx, cy, r, amp)| {
                        let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                        amp * (-d2 / (2.0 * r * r)).exp()
                    })
                    .sum();
                0.75 * ramp + 0.25 * (0.5 + 0.5 * bumps)
            });
            raw.data_mut()
                .iter_mut()
                .for_each(|t| *t = near + (far - near) * t.clamp(0.0, 1.0));
            raw
        }
    }
}
