//! Rain streak layers.
//!
//! Each streak is a motion-blurred line segment: constant intensity along its
//! length and a Gaussian profile across it, truncated to a compact support so
//! that the streak occupies a well-defined set of pixels. A streak's area is
//! the size of that set after clipping to the frame, and placement is
//! rejected until the area lies in the streak's bin. Streaks of one layer
//! never touch (not even diagonally), so every connected component of a
//! layer is exactly one streak.

use rand::Rng;

use super::spec::{BinSpec, RainSceneSpec};
use crate::error::{Error, Result};
use crate::rain::StreakBin;
use crate::tensor::Tensor;

/// Placement attempts per streak before it is dropped.
const MAX_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct StreakLayer {
    /// `3 x H x W`, achromatic, nonnegative.
    pub map: Tensor,
    /// Occupied pixel area of every placed streak.
    pub areas: Vec<usize>,
    /// Streaks requested for this layer; some may be dropped when the frame
    /// is too crowded to place them without touching.
    pub requested: usize,
}

/// Gaussian width (sigma, pixels) range for a bin.
fn sigma_range(bin: StreakBin) -> (f64, f64) {
    match bin {
        StreakBin::Small => (0.35, 0.6),
        StreakBin::Middle => (0.6, 1.2),
        StreakBin::Large => (1.2, 3.0),
    }
}

/// Target area range; the small bin starts at 8 pixels so streaks stay elongated.
fn target_area_range(bin: StreakBin) -> (f64, f64) {
    let (lo, hi) = bin.area_range();
    ((lo as f64 + 1.0).max(8.0), hi as f64)
}

struct Streak {
    /// Flat pixel indices and values, sorted by index.
    pixels: Vec<(usize, f64)>,
}

fn rasterize(
    h: usize,
    w: usize,
    center: (f64, f64),
    angle_deg: f64,
    length: f64,
    sigma: f64,
    intensity: f64,
) -> Streak {
    let radius = (2.0 * sigma).max(0.75);
    let theta = angle_deg.to_radians();
    // Direction measured from vertical: positive angles lean right going down.
    let (dx, dy) = (theta.sin(), theta.cos());
    let half = 0.5 * length;
    let (x0, y0) = (center.0 - dx * half, center.1 - dy * half);
    let (x1, y1) = (center.0 + dx * half, center.1 + dy * half);

    let xmin = (x0.min(x1) - radius).floor().max(0.0) as usize;
    let xmax = ((x0.max(x1) + radius).ceil().max(0.0) as usize).min(w.saturating_sub(1));
    let ymin = (y0.min(y1) - radius).floor().max(0.0) as usize;
    let ymax = ((y0.max(y1) + radius).ceil().max(0.0) as usize).min(h.saturating_sub(1));

    let mut pixels = Vec::new();
    if x0.min(x1) - radius > w as f64 || y0.min(y1) - radius > h as f64 {
        return Streak { pixels };
    }
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let (px, py) = (x as f64, y as f64);
            // Distance to the segment.
            let t = ((px - x0) * dx + (py - y0) * dy).clamp(0.0, length);
            let (qx, qy) = (x0 + t * dx, y0 + t * dy);
            let d2 = (px - qx).powi(2) + (py - qy).powi(2);
            if d2 <= radius * radius {
                let v = intensity * (-d2 / (2.0 * sigma * sigma)).exp();
                pixels.push((y * w + x, v));
            }
        }
    }
    Streak { pixels }
}

/// True when the pixel set is a single 8-connected component.
fn is_connected(pixels: &[(usize, f64)], w: usize) -> bool {
    if pixels.is_empty() {
        return false;
    }
    let set: std::collections::HashSet<usize> = pixels.iter().map(|p| p.0).collect();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![pixels[0].0];
    seen.insert(pixels[0].0);
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if ny < 0 || nx < 0 || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if set.contains(&j) && seen.insert(j) {
                    stack.push(j);
                }
            }
        }
    }
    seen.len() == set.len()
}

/// Marks `pixels` and their 8-neighbours as blocked.
fn block(blocked: &mut [bool], pixels: &[(usize, f64)], h: usize, w: usize) {
    for &(i, _) in pixels {
        let (y, x) = (i / w, i % w);
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                blocked[ny * w + nx] = true;
            }
        }
    }
}

/// Renders the streak layer for one bin of `spec`.
///
/// Fails when the bin's area interval cannot be realized at this image size.
pub fn render_streak_layer(
    spec: &RainSceneSpec,
    bin_spec: &BinSpec,
    rng: &mut impl Rng,
) -> Result<StreakLayer> {
    let (h, w) = (spec.height, spec.width);
    let bin = bin_spec.bin;
    let count = rng.gen_range(bin_spec.count.0..=bin_spec.count.1);
    let mut map = Tensor::zeros(&[3, h, w]);
    if count == 0 {
        return Ok(StreakLayer {
            map,
            areas: Vec::new(),
            requested: 0,
        });
    }
    let (area_lo, _) = bin.area_range();
    if area_lo + 1 > h * w {
        return Err(Error::domain(
            "render_streak_layer",
            format!("{bin} streaks need more than {area_lo} pixels but the image has {}", h * w),
        ));
    }

    let plane = h * w;
    let mut blocked = vec![false; plane];
    let mut areas = Vec::with_capacity(count);
    let mut ever_in_bin = false;
    let (s_lo, s_hi) = sigma_range(bin);
    let (a_lo, a_hi) = target_area_range(bin);

    for _ in 0..count {
        for _ in 0..MAX_ATTEMPTS {
            let sigma = rng.gen_range(s_lo..=s_hi);
            let radius = (2.0 * sigma).max(0.75);
            let target = rng.gen_range(a_lo..=a_hi);
            // Stadium area: 2 r L + pi r^2.
            let length = ((target - std::f64::consts::PI * radius * radius) / (2.0 * radius)).max(1.0);
            let angle = spec.orientations[rng.gen_range(0..spec.orientations.len())];
            let center = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
            let intensity = bin_spec.intensity.sample(rng);
            let streak = rasterize(h, w, center, angle, length, sigma, intensity);
            let area = streak.pixels.len();
            if !bin.contains(area) || !is_connected(&streak.pixels, w) {
                continue;
            }
            ever_in_bin = true;
            if streak.pixels.iter().any(|&(i, _)| blocked[i]) {
                continue;
            }
            block(&mut blocked, &streak.pixels, h, w);
            for &(i, v) in &streak.pixels {
                for c in 0..3 {
                    map.data_mut()[c * plane + i] = v;
                }
            }
            areas.push(area);
            break;
        }
    }
    if areas.is_empty() && !ever_in_bin {
        return Err(Error::domain(
            "render_streak_layer",
            format!("could not realize a {bin} streak in a {h}x{w} image"),
        ));
    }
    Ok(StreakLayer {
        map,
        areas,
        requested: count,
    })
}

/// Areas of the 8-connected components of a layer's nonzero pixels.
pub fn component_areas(layer: &Tensor) -> Result<Vec<usize>> {
    let (_, h, w) = layer.chw()?;
    let nonzero: Vec<(usize, f64)> = (0..h * w)
        .filter(|&i| layer.data()[i] > 0.0)
        .map(|i| (i, 0.0))
        .collect();
    let mut label = vec![usize::MAX; h * w];
    let occupied: std::collections::HashSet<usize> = nonzero.iter().map(|p| p.0).collect();
    let mut areas = Vec::new();
    for &(start, _) in &nonzero {
        if label[start] != usize::MAX {
            continue;
        }
        let id = areas.len();
        let mut size = 0;
        let mut stack = vec![start];
        label[start] = id;
        while let Some(i) = stack.pop() {
            size += 1;
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if occupied.contains(&j) && label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(size);
    }
    Ok(areas)
}
