//! Image and tensor files.
//!
//! Raw tensors (`.drf`) are lossless: a 16-byte header (the magic `DRF1`
//! followed by channels, height and width as little-endian `u32`), then the
//! `f64` values in row-major order, little-endian. PNG files are 8-bit
//! previews.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 4] = b"DRF1";
pub const RAW_HEADER_LEN: usize = 16;

pub fn encode_raw(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] => (c, h, w),
        [n] if n == 1 => (1, 1, 1),
        _ => {
            return Err(Error::shape(
                "encode_raw",
                "rank",
                "3 (or a scalar)",
                t.shape().len(),
            ))
        }
    };
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 8 * t.numel());
    out.extend_from_slice(RAW_MAGIC);
    for d in [c, h, w] {
        let d = u32::try_from(d).map_err(|_| Error::shape("encode_raw", "extent", "< 2^32", d))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(Error::format(path, "not a DRF1 tensor"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = vec![dim(0), dim(1), dim(2)];
    let numel: usize = shape.iter().product();
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != numel * 8 {
        return Err(Error::format(
            path,
            format!("expected {} data bytes for {shape:?}, found {}", numel * 8, body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_raw(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode_raw(t)?;
    write_bytes(path, &bytes)
}

pub fn read_raw(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel image in `[0, 1]` as an 8-bit PNG.
pub fn write_png(path: &Path, t: &Tensor) -> Result<()> {
    let (c, h, w) = t.chw()?;
    if c != 1 && c != 3 {
        return Err(Error::shape("write_png", "channels", "1 or 3", c));
    }
    let plane = h * w;
    let mut buf = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for ch in 0..3 {
            buf.push(quantize(t.data()[(ch % c) * plane + p]));
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer length matches extents");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        })
}

/// Reads any PNG as a `3 x H x W` tensor in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn_chw(3, h, w, |c, y, x| {
        f64::from(raw[(y * w + x) * 3 + c]) / 255.0
    }))
}

/// Loads an image from a `.drf` or `.png` path, chosen by extension.
pub fn read_image(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        Some("drf") => read_raw(path),
        _ => Err(Error::format(path, "expected a .png or .drf file")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_header_layout() {
        let t = Tensor::from_fn_chw(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let bytes = encode_raw(&t).unwrap();
        assert_eq!(&bytes[..4], b"DRF1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24 * 8);
        assert_eq!(decode_raw(&bytes, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let t = Tensor::zeros(&[1, 2, 2]);
        let mut bytes = encode_raw(&t).unwrap();
        bytes.pop();
        assert!(matches!(
            decode_raw(&bytes, Path::new("x")),
            Err(Error::Format { .. })
        ));
        assert!(decode_raw(b"PNG\0aaaaaaaaaaaaa", Path::new("x")).is_err());
    }

    #[test]
    fn scalar_is_stored_as_single_pixel() {
        let bytes = encode_raw(&Tensor::scalar(0.25)).unwrap();
        let back = decode_raw(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.shape(), &[1, 1, 1]);
        assert_eq!(back.data(), &[0.25]);
    }
}
