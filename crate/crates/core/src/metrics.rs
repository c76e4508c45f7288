//! Full-reference image quality: PSNR and SSIM.
//!
//! Both operate on RGB images in `[0, 1]`; SSIM is the mean over color
//! channels of the per-channel index.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::datagen::DatasetManifest;
use crate::error::{Error, Result};
use crate::io::{read_image, write_bytes};
use crate::tensor::Tensor;

/// PSNR reported for identical images (and the ceiling for all others).
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    x.expect_shape("mse", y)?;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.numel() as f64)
}

/// Peak signal-to-noise ratio with peak value 1, in dB.
pub fn psnr(x: &Tensor, y: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_1d() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable Gaussian filter of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| kernel[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| kernel[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, kernel: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, h, w, kernel);
    let mu_y = filter_valid(y, h, w, kernel);
    let e_xx = filter_valid(&xx, h, w, kernel);
    let e_yy = filter_valid(&yy, h, w, kernel);
    let e_xy = filter_valid(&xy, h, w, kernel);
    let n = mu_x.len();
    (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2))
        })
        .sum::<f64>()
        / n as f64
}

/// Mean structural similarity over all valid 11x11 Gaussian windows.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    x.expect_shape("ssim", y)?;
    let (c, h, w) = x.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            "spatial extent",
            format!(">= {SSIM_WINDOW}x{SSIM_WINDOW}"),
            format!("{h}x{w}"),
        ));
    }
    let kernel = gaussian_1d();
    let plane = h * w;
    Ok((0..c)
        .map(|ch| {
            let r = ch * plane..(ch + 1) * plane;
            ssim_plane(&x.data()[r.clone()], &y.data()[r], h, w, &kernel)
        })
        .sum::<f64>()
        / c as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    /// `None` for an empty slice. The mean is a left-to-right sum over `n`.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Aggregate {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn psnr(&self) -> Option<Aggregate> {
        Aggregate::of(&self.per_image.iter().map(|m| m.psnr_db).collect::<Vec<_>>())
    }

    pub fn ssim(&self) -> Option<Aggregate> {
        Aggregate::of(&self.per_image.iter().map(|m| m.ssim).collect::<Vec<_>>())
    }

    /// `id,psnr_db,ssim` with one row per image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr_db,ssim\n");
        for m in &self.per_image {
            writeln!(out, "{},{:.6},{:.6}", m.id, m.psnr_db, m.ssim).unwrap();
        }
        out
    }

    /// `metric,mean,min,max`; empty reports only carry the header.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,mean,min,max\n");
        for (name, agg) in [("psnr_db", self.psnr()), ("ssim", self.ssim())] {
            if let Some(a) = agg {
                writeln!(out, "{name},{:.6},{:.6},{:.6}", a.mean, a.min, a.max).unwrap();
            }
        }
        out
    }

    pub fn write(&self, report: &Path, summary: &Path) -> Result<()> {
        write_bytes(report, self.to_csv().as_bytes())?;
        write_bytes(summary, self.summary_csv().as_bytes())
    }
}

/// Restored image for `id`: `<id>.drf` if present, else `<id>.png`.
pub fn restored_path(dir: &Path, id: &str) -> Option<PathBuf> {
    ["drf", "png"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Scores every restored image in `restored_dir` against its clean background.
pub fn evaluate_corpus(manifest: &DatasetManifest, restored_dir: &Path) -> Result<MetricReport> {
    let mut missing = Vec::new();
    let mut jobs = Vec::new();
    for e in &manifest.entries {
        match restored_path(restored_dir, &e.id) {
            Some(p) => jobs.push((e, p)),
            None => missing.push(restored_dir.join(format!("{}.drf", e.id))),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let per_image = jobs
        .par_iter()
        .map(|(e, path)| {
            let restored = read_image(path)?;
            let truth = crate::io::read_raw(&manifest.root.join(&e.background))?;
            Ok(ImageMetrics {
                id: e.id.clone(),
                psnr_db: psnr(&restored, &truth)?,
                ssim: ssim(&restored, &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { per_image })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(seed: u64, shape: &[usize]) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn psnr_anchors() {
        let x = Tensor::full(&[3, 8, 8], 0.5);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
        let y = Tensor::full(&[3, 8, 8], 0.6);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
        let (zero, one) = (Tensor::zeros(&[3, 8, 8]), Tensor::ones(&[3, 8, 8]));
        assert!(psnr(&zero, &one).unwrap().abs() < 1e-12);
        assert!(psnr(&x, &Tensor::zeros(&[3, 8, 9])).is_err());
    }

    #[test]
    fn ssim_identity_and_constant_closed_form() {
        let x = noise(1, &[3, 16, 20]);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        let (zero, one) = (Tensor::zeros(&[3, 16, 16]), Tensor::ones(&[3, 16, 16]));
        let c1 = 0.01f64 * 0.01;
        assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = Tensor::zeros(&[3, 10, 32]);
        assert!(ssim(&x, &x).is_err());
    }

    #[test]
    fn ssim_falls_with_noise_level() {
        let x = noise(2, &[3, 24, 24]).map(|v| 0.25 + 0.5 * v);
        let n = noise(3, &[3, 24, 24]).map(|v| v - 0.5);
        let scores: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|eps| {
                let y = x.zip_map(&n, |a, b| a + eps * b).unwrap();
                ssim(&x, &y).unwrap()
            })
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn aggregates() {
        let report = MetricReport {
            per_image: vec![
                ImageMetrics { id: "a".into(), psnr_db: 20.0, ssim: 0.5 },
                ImageMetrics { id: "b".into(), psnr_db: 30.0, ssim: 0.7 },
            ],
        };
        let p = report.psnr().unwrap();
        assert_eq!((p.mean, p.min, p.max), (25.0, 20.0, 30.0));
        assert!(report.to_csv().contains("b,30.000000,0.700000"));
        assert!(MetricReport::default().psnr().is_none());
    }
}
