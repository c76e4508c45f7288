//! Rain image formation.
//!
//! An observed rainy image is modelled as
//!
//! ```text
//! O = alpha * (B + sum_i R_i) + (1 - alpha) * A
//! ```
//!
//! where `B` is the clean background, `R_i` are additive streak layers (one
//! per size class), `alpha` is the per-pixel transmittance of the rain veil
//! and `A` the atmospheric light. With `alpha == 1` this is the purely
//! additive layer model `O = B + sum_i R_i`. Transmittance follows free-space
//! attenuation, `alpha = exp(-beta * depth)`.
//!
//! `alpha` and `A` are single-channel and broadcast over the color channels.
//! Composites are clamped to `[0, 1]`; the `*_raw` variants return the value
//! before clamping.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, EPS_RECIP};

/// Streak size classes by occupied pixel area.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreakBin {
    Small,
    Middle,
    Large,
}

impl StreakBin {
    pub const ALL: [StreakBin; 3] = [StreakBin::Small, StreakBin::Middle, StreakBin::Large];

    /// Half-open `(lo, hi]` area interval in pixels.
    pub fn area_range(self) -> (usize, usize) {
        match self {
            StreakBin::Small => (0, 60),
            StreakBin::Middle => (60, 300),
            StreakBin::Large => (300, 600),
        }
    }

    pub fn contains(self, area: usize) -> bool {
        let (lo, hi) = self.area_range();
        area > lo && area <= hi
    }

    pub fn label(self) -> &'static str {
        match self {
            StreakBin::Small => "small",
            StreakBin::Middle => "middle",
            StreakBin::Large => "large",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.label() == label)
    }
}

impl fmt::Display for StreakBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Atmospheric light: one value for the whole image, or a `1 x H x W` map.
#[derive(Clone, Debug, PartialEq)]
pub enum AtmosphericLight {
    Scalar(f64),
    Map(Tensor),
}

impl AtmosphericLight {
    fn at(&self, plane_index: usize) -> f64 {
        match self {
            AtmosphericLight::Scalar(a) => *a,
            AtmosphericLight::Map(t) => t.data()[plane_index],
        }
    }

    fn check(&self, op: &'static str, h: usize, w: usize) -> Result<()> {
        match self {
            AtmosphericLight::Scalar(a) if !(0.0..=1.0).contains(a) => {
                Err(Error::domain(op, format!("atmospheric light {a} outside [0, 1]")))
            }
            AtmosphericLight::Map(t) => {
                expect_plane(op, "atmospheric light", t, h, w)?;
                if t.min() < 0.0 || t.max() > 1.0 {
                    return Err(Error::domain(op, "atmospheric light outside [0, 1]"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl From<f64> for AtmosphericLight {
    fn from(a: f64) -> Self {
        AtmosphericLight::Scalar(a)
    }
}

fn expect_plane(op: &'static str, what: &str, t: &Tensor, h: usize, w: usize) -> Result<()> {
    if t.shape() != [1, h, w] {
        return Err(Error::shape(
            op,
            format!("{what} extent"),
            format!("[1, {h}, {w}]"),
            format!("{:?}", t.shape()),
        ));
    }
    Ok(())
}

fn sum_layers(op: &'static str, b: &Tensor, streaks: &[Tensor]) -> Result<Tensor> {
    b.chw()?;
    let mut total = b.clone();
    for (i, r) in streaks.iter().enumerate() {
        if r.shape() != b.shape() {
            return Err(Error::shape(
                op,
                format!("streak layer {i}"),
                format!("{:?}", b.shape()),
                format!("{:?}", r.shape()),
            ));
        }
        total
            .data_mut()
            .iter_mut()
            .zip(r.data())
            .for_each(|(t, v)| *t += v);
    }
    Ok(total)
}

/// `B + sum_i R_i` before clamping.
pub fn compose_linear_raw(b: &Tensor, streaks: &[Tensor]) -> Result<Tensor> {
    sum_layers("compose_linear", b, streaks)
}

/// Additive multi-layer composite, clamped to `[0, 1]`.
pub fn compose_linear(b: &Tensor, streaks: &[Tensor]) -> Result<Tensor> {
    Ok(compose_linear_raw(b, streaks)?.clamp(0.0, 1.0))
}

/// Veiled composite before clamping.
pub fn compose_veiled_raw(
    b: &Tensor,
    streaks: &[Tensor],
    alpha: &Tensor,
    light: &AtmosphericLight,
) -> Result<Tensor> {
    const OP: &str = "compose_veiled";
    let (_, h, w) = b.chw()?;
    expect_plane(OP, "transmittance", alpha, h, w)?;
    light.check(OP, h, w)?;
    if let Some(bad) = alpha
        .data()
        .iter()
        .find(|&&a| !(EPS_RECIP..=1.0).contains(&a))
    {
        return Err(Error::domain(
            OP,
            format!("transmittance {bad} outside [{EPS_RECIP}, 1]"),
        ));
    }
    let mut out = sum_layers(OP, b, streaks)?;
    let plane = h * w;
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let p = i % plane;
        let a = alpha.data()[p];
        *v = a * *v + (1.0 - a) * light.at(p);
    }
    Ok(out)
}

/// Veiled composite, clamped to `[0, 1]`.
pub fn compose_veiled(
    b: &Tensor,
    streaks: &[Tensor],
    alpha: &Tensor,
    light: &AtmosphericLight,
) -> Result<Tensor> {
    Ok(compose_veiled_raw(b, streaks, alpha, light)?.clamp(0.0, 1.0))
}

/// `exp(-beta * depth)`, floored at [`EPS_RECIP`].
pub fn transmittance_from_depth(depth: &Tensor, beta: f64) -> Result<Tensor> {
    const OP: &str = "transmittance_from_depth";
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::domain(OP, format!("attenuation {beta} must be >= 0")));
    }
    if let Some(d) = depth.data().iter().find(|&&d| !(d >= 0.0 && d.is_finite())) {
        return Err(Error::domain(OP, format!("depth {d} must be >= 0")));
    }
    Ok(depth.map(|d| (-beta * d).exp().max(EPS_RECIP)))
}

/// Background recovered from an observation given `1 / alpha`, the streak
/// layers and the atmospheric light, before clamping:
/// `B = (1/alpha) * (O - A) - sum_i R_i + A`.
pub fn invert_background_raw(
    o: &Tensor,
    inv_alpha: &Tensor,
    streaks: &[Tensor],
    light: &AtmosphericLight,
) -> Result<Tensor> {
    const OP: &str = "invert_background";
    let (_, h, w) = o.chw()?;
    expect_plane(OP, "reciprocal transmittance", inv_alpha, h, w)?;
    light.check(OP, h, w)?;
    if let Some(bad) = inv_alpha.data().iter().find(|&&v| !(v >= 1.0)) {
        return Err(Error::domain(
            OP,
            format!("reciprocal transmittance {bad} is below 1"),
        ));
    }
    let plane = h * w;
    let mut out = o.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let p = i % plane;
        let a = light.at(p);
        *v = inv_alpha.data()[p] * (*v - a) + a;
    }
    for (i, r) in streaks.iter().enumerate() {
        if r.shape() != o.shape() {
            return Err(Error::shape(
                OP,
                format!("streak layer {i}"),
                format!("{:?}", o.shape()),
                format!("{:?}", r.shape()),
            ));
        }
        out.data_mut()
            .iter_mut()
            .zip(r.data())
            .for_each(|(t, v)| *t -= v);
    }
    Ok(out)
}

/// Clamped background inversion.
pub fn invert_background(
    o: &Tensor,
    inv_alpha: &Tensor,
    streaks: &[Tensor],
    light: &AtmosphericLight,
) -> Result<Tensor> {
    Ok(invert_background_raw(o, inv_alpha, streaks, light)?.clamp(0.0, 1.0))
}

/// Brightest pixel rule: the maximum over pixels of the channel mean.
pub fn estimate_atmospheric_light(o: &Tensor) -> Result<f64> {
    let (c, h, w) = o.chw()?;
    let plane = h * w;
    Ok((0..plane)
        .map(|p| (0..c).map(|ch| o.data()[ch * plane + p]).sum::<f64>() / c as f64)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Ground truth for one synthetic rainy image.
#[derive(Clone, Debug, PartialEq)]
pub struct RainScene {
    pub background: Tensor,
    /// One layer per streak bin, ordered small to large.
    pub streaks: Vec<Tensor>,
    pub bins: Vec<StreakBin>,
    pub transmittance: Tensor,
    pub atmospheric_light: f64,
    pub observed: Tensor,
    pub depth: Option<Tensor>,
    pub beta: f64,
}

/// Tolerance used when re-deriving a scene's observation from its parts.
pub const SCENE_TOLERANCE: f64 = 1e-12;

impl RainScene {
    pub fn light(&self) -> AtmosphericLight {
        AtmosphericLight::Scalar(self.atmospheric_light)
    }

    /// `1 / alpha`, always `>= 1`.
    pub fn inv_transmittance(&self) -> Tensor {
        self.transmittance.map(|a| 1.0 / a)
    }

    pub fn check_invariants(&self) -> Result<()> {
        const OP: &str = "scene";
        let (c, h, w) = self.background.chw()?;
        if c != 3 {
            return Err(Error::shape(OP, "background channels", 3, c));
        }
        if self.streaks.len() != self.bins.len() {
            return Err(Error::shape(
                OP,
                "streak layer count",
                self.bins.len(),
                self.streaks.len(),
            ));
        }
        let in_unit = |t: &Tensor| t.min() >= 0.0 && t.max() <= 1.0;
        if !in_unit(&self.background) {
            return Err(Error::domain(OP, "background outside [0, 1]"));
        }
        if !in_unit(&self.observed) {
            return Err(Error::domain(OP, "observation outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.atmospheric_light) {
            return Err(Error::domain(OP, "atmospheric light outside [0, 1]"));
        }
        if let Some(i) = self.streaks.iter().position(|r| r.min() < 0.0) {
            return Err(Error::domain(OP, format!("streak layer {i} has negative values")));
        }
        let expected = compose_veiled(
            &self.background,
            &self.streaks,
            &self.transmittance,
            &self.light(),
        )?;
        let diff = expected.max_abs_diff(&self.observed)?;
        if diff > SCENE_TOLERANCE {
            return Err(Error::domain(
                OP,
                format!("observation deviates from the composite by {diff:e}"),
            ));
        }
        if let Some(depth) = &self.depth {
            expect_plane(OP, "depth", depth, h, w)?;
            let alpha = transmittance_from_depth(depth, self.beta)?;
            let diff = alpha.max_abs_diff(&self.transmittance)?;
            if diff > SCENE_TOLERANCE {
                return Err(Error::domain(
                    OP,
                    format!("transmittance deviates from exp(-beta d) by {diff:e}"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> Tensor {
        Tensor::full(&[3, 4, 5], v)
    }

    fn plane(v: f64) -> Tensor {
        Tensor::full(&[1, 4, 5], v)
    }

    #[test]
    fn bins_are_exact() {
        assert!(StreakBin::Small.contains(60));
        assert!(!StreakBin::Small.contains(0));
        assert!(StreakBin::Middle.contains(61));
        assert!(StreakBin::Large.contains(600));
        assert!(!StreakBin::Large.contains(601));
        assert_eq!(StreakBin::from_label("middle"), Some(StreakBin::Middle));
    }

    #[test]
    fn linear_zero_streaks_and_clamp() {
        let b = img(0.5);
        assert_eq!(compose_linear(&b, &[Tensor::zeros(&[3, 4, 5])]).unwrap(), b);
        assert_eq!(compose_linear(&b, &[]).unwrap(), b);
        let raw = compose_linear_raw(&b, &[img(0.2), img(0.4)]).unwrap();
        assert!((raw.data()[0] - 1.1).abs() < 1e-15);
        assert_eq!(compose_linear(&b, &[img(0.2), img(0.4)]).unwrap(), img(1.0));
    }

    #[test]
    fn single_layer_is_additive() {
        let b = img(0.3);
        let o = compose_linear(&b, &[img(0.25)]).unwrap();
        assert!(o.max_abs_diff(&img(0.55)).unwrap() < 1e-15);
    }

    #[test]
    fn veiled_hand_evaluation() {
        let o = compose_veiled(&img(0.2), &[img(0.1)], &plane(0.5), &0.8.into()).unwrap();
        assert!(o.max_abs_diff(&img(0.55)).unwrap() < 1e-15);
    }

    #[test]
    fn veiled_with_unit_transmittance_is_linear() {
        let b = Tensor::from_fn_chw(3, 4, 5, |c, y, x| 0.1 * c as f64 + 0.03 * (y + x) as f64);
        let r = [img(0.1), Tensor::from_fn_chw(3, 4, 5, |_, y, _| 0.05 * y as f64)];
        let veiled = compose_veiled_raw(&b, &r, &plane(1.0), &0.7.into()).unwrap();
        assert_eq!(veiled, compose_linear_raw(&b, &r).unwrap());
    }

    #[test]
    fn full_veil_approaches_light() {
        let b = Tensor::from_fn_chw(3, 4, 5, |c, y, x| ((c + y + x) % 5) as f64 / 4.0);
        let a = 0.6;
        let o = compose_veiled(&b, &[], &plane(EPS_RECIP), &a.into()).unwrap();
        let bound = EPS_RECIP * b.data().iter().map(|v| (v - a).abs()).fold(0.0, f64::max);
        assert!(o.data().iter().all(|v| (v - a).abs() <= bound + 1e-15));
    }

    #[test]
    fn transmittance_out_of_range_is_rejected() {
        assert!(compose_veiled(&img(0.2), &[], &plane(1.5), &0.5.into()).is_err());
        assert!(compose_veiled(&img(0.2), &[], &plane(1e-4), &0.5.into()).is_err());
    }

    #[test]
    fn depth_attenuation() {
        let d = plane(2.0);
        let a = transmittance_from_depth(&d, 0.5).unwrap();
        assert!((a.data()[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((a.data()[0] - 0.367879).abs() < 1e-6);
        assert_eq!(transmittance_from_depth(&d, 0.0).unwrap(), plane(1.0));
        assert_eq!(transmittance_from_depth(&plane(0.0), 3.0).unwrap(), plane(1.0));
        assert_eq!(transmittance_from_depth(&plane(1e6), 1.0).unwrap(), plane(EPS_RECIP));
        assert!(transmittance_from_depth(&d, -0.1).is_err());
        assert!(transmittance_from_depth(&plane(-1.0), 0.1).is_err());
    }

    #[test]
    fn inversion_hand_evaluation() {
        let b = invert_background_raw(&img(0.55), &plane(2.0), &[img(0.1)], &0.8.into()).unwrap();
        assert!(b.max_abs_diff(&img(0.2)).unwrap() < 1e-15);
        let o = img(0.37);
        assert_eq!(invert_background(&o, &plane(1.0), &[], &0.9.into()).unwrap(), o);
        assert!(invert_background(&o, &plane(0.9), &[], &0.9.into()).is_err());
    }

    #[test]
    fn brightest_pixel() {
        assert_eq!(estimate_atmospheric_light(&img(0.42)).unwrap(), 0.42);
        let mut t = Tensor::zeros(&[3, 4, 5]);
        for c in 0..3 {
            t.data_mut()[c * 20 + 7] = 1.0;
        }
        assert_eq!(estimate_atmospheric_light(&t).unwrap(), 1.0);
    }
}
