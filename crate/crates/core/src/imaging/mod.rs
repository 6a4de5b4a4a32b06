//! Pixel-level primitives shared by the rest of the crate.

mod color;
mod filter;
pub mod pnm;
mod ssim;
mod stats;

pub use color::{rgb_to_yuv, to_luma, to_luma_adjoint, yuv_to_rgb, LUMA_COEFFS};
pub use filter::{bilateral_denoise, convolve, convolve_adjoint, max_pool, KernelKind, KernelSpec};
pub use ssim::{ssim_map, ssim_mean, SsimParams, SsimTape};
pub(crate) use stats::robust_normalize_with_tape as stats_tape;
pub use stats::{percentile, robust_normalize, NormalizeTape};

/// Normalized taps of [`KernelSpec::gaussian`] for `sigma`.
pub fn filter_taps(sigma: f64) -> Vec<f64> {
    filter::gaussian_taps(sigma, ((3.0 * sigma).ceil() as usize).max(1))
}

use crate::error::{Error, Result};

/// Dense row-major raster of linear-intensity samples, 1 or 3 interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image samples must be finite"));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grayscale image from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            channels: 1,
            data,
        }
    }

    /// Builds an RGB image from a per-pixel function.
    pub fn from_fn_rgb(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub(crate) fn check_gray(&self, what: &str) -> Result<()> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what} expects a grayscale image")))
        }
    }

    /// Extracts a single channel as a grayscale image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Interleaves three grayscale planes into an RGB image.
    pub fn from_planes(planes: [&Image; 3]) -> Result<Image> {
        let (w, h) = (planes[0].width, planes[0].height);
        for p in planes {
            p.check_gray("from_planes")?;
            if p.width != w || p.height != h {
                return Err(Error::dims("planes differ in size"));
            }
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            data.extend(planes.iter().map(|p| p.data[i]));
        }
        Ok(Image {
            width: w,
            height: h,
            channels: 3,
            data,
        })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone_shape()
        }
    }

    pub fn zip_map(&self, other: &Image, mut f: impl FnMut(f64, f64) -> f64) -> Image {
        assert!(
            self.same_shape(other),
            "zip_map on differently shaped images"
        );
        Image {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.clone_shape()
        }
    }

    fn clone_shape(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: Vec::new(),
        }
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &Image, k: f64) {
        assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Snaps every sample to the nearest 16-bit code value, the precision
    /// of the on-disk format.
    pub fn quantize_u16(&self) -> Image {
        self.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0)
    }

    /// Bilinear sample at continuous coordinates where pixel `(x, y)` has its
    /// center at `(x + 0.5, y + 0.5)`. Borders replicate the edge pixels.
    pub fn sample_bilinear(&self, px: f64, py: f64, out: &mut [f64]) {
        let fx = (px - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (py - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let c = self.channels;
        for (k, o) in out.iter_mut().enumerate().take(c) {
            let v00 = self.data[(y0 * self.width + x0) * c + k];
            let v10 = self.data[(y0 * self.width + x1) * c + k];
            let v01 = self.data[(y1 * self.width + x0) * c + k];
            let v11 = self.data[(y1 * self.width + x1) * c + k];
            *o = (v00 * (1.0 - tx) + v10 * tx) * (1.0 - ty) + (v01 * (1.0 - tx) + v11 * tx) * ty;
        }
    }
}

/// Mean squared error over all samples.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    let n = a.len().max(1) as f64;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// PSNR in dB for unit dynamic range; zero error reports `cap`.
pub fn psnr(a: &Image, b: &Image, cap: f64) -> Result<f64> {
    let e = mse(a, b)?;
    if e <= 0.0 {
        return Ok(cap);
    }
    Ok((10.0 * (1.0 / e).log10()).min(cap))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_roundtrip() {
        let img = Image::from_fn_rgb(4, 3, |x, y| [x as f64, y as f64, 0.5]);
        let planes = [img.channel(0), img.channel(1), img.channel(2)];
        let back = Image::from_planes([&planes[0], &planes[1], &planes[2]]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn from_vec_rejects_bad_shapes() {
        assert!(Image::from_vec(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn psnr_offset_is_twenty_db() {
        let a = Image::filled(8, 8, 3, 0.4);
        let b = Image::filled(8, 8, 3, 0.5);
        assert!((psnr(&a, &b, 99.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 99.0).unwrap(), 99.0);
    }

    #[test]
    fn bilinear_hits_pixel_centers() {
        let img = Image::from_fn(3, 3, |x, y| (x + 3 * y) as f64);
        let mut v = [0.0];
        img.sample_bilinear(1.5, 2.5, &mut v);
        assert_eq!(v[0], 7.0);
        img.sample_bilinear(2.0, 1.5, &mut v);
        assert!((v[0] - 4.5).abs() < 1e-12);
    }
}
