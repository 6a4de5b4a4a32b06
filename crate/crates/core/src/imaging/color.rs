use super::Image;
use crate::error::{Error, Result};

/// BT.601 luma weights for linear R, G, B.
pub const LUMA_COEFFS: [f64; 3] = [0.299, 0.587, 0.114];

const U_SCALE: f64 = 0.492_111;
const V_SCALE: f64 = 0.877_283;

/// Splits an RGB image into luma and the two chroma planes (centered at 0.5).
pub fn rgb_to_yuv(img: &Image) -> Result<(Image, [Image; 2])> {
    if img.channels() != 3 {
        return Err(Error::invalid("rgb_to_yuv expects a 3-channel image"));
    }
    let luma = |p: &[f64]| LUMA_COEFFS[0] * p[0] + LUMA_COEFFS[1] * p[1] + LUMA_COEFFS[2] * p[2];
    let plane = |f: &dyn Fn(&[f64]) -> f64| {
        let data = img.data().chunks_exact(3).map(f).collect();
        Image::from_vec(img.width(), img.height(), 1, data).expect("shape preserved")
    };
    Ok((
        plane(&luma),
        [
            plane(&|p| U_SCALE * (p[2] - luma(p)) + 0.5),
            plane(&|p| V_SCALE * (p[0] - luma(p)) + 0.5),
        ],
    ))
}

/// Inverse of [`rgb_to_yuv`].
pub fn yuv_to_rgb(y: &Image, uv: &[Image; 2]) -> Result<Image> {
    y.check_same_shape(&uv[0], "yuv_to_rgb")?;
    y.check_same_shape(&uv[1], "yuv_to_rgb")?;
    let (w, h) = (y.width(), y.height());
    let mut out = Image::new(w, h, 3);
    for i in 0..w * h {
        let (yy, u, v) = (y.data()[i], uv[0].data()[i] - 0.5, uv[1].data()[i] - 0.5);
        let r = yy + v / V_SCALE;
        let b = yy + u / U_SCALE;
        let g = (yy - LUMA_COEFFS[0] * r - LUMA_COEFFS[2] * b) / LUMA_COEFFS[1];
        out.data_mut()[3 * i..3 * i + 3].copy_from_slice(&[r, g, b]);
    }
    Ok(out)
}

/// Luma of an RGB image; grayscale input is returned unchanged.
pub fn to_luma(img: &Image) -> Image {
    if img.channels() == 1 {
        return img.clone();
    }
    rgb_to_yuv(img).expect("3 channels").0
}

/// Backpropagates a luma gradient to the source image's channels.
pub fn to_luma_adjoint(grad_y: &Image, channels: usize) -> Image {
    if channels == 1 {
        return grad_y.clone();
    }
    Image::from_fn_rgb(grad_y.width(), grad_y.height(), |x, y| {
        let g = grad_y.get(x, y, 0);
        [LUMA_COEFFS[0] * g, LUMA_COEFFS[1] * g, LUMA_COEFFS[2] * g]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_has_neutral_chroma() {
        let img = Image::filled(3, 2, 3, 0.37);
        let (y, uv) = rgb_to_yuv(&img).unwrap();
        for i in 0..6 {
            assert!((y.data()[i] - 0.37).abs() < 1e-12);
            assert!((uv[0].data()[i] - 0.5).abs() < 1e-12);
            assert!((uv[1].data()[i] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn primaries() {
        let red = Image::from_fn_rgb(1, 1, |_, _| [1.0, 0.0, 0.0]);
        let blue = Image::from_fn_rgb(1, 1, |_, _| [0.0, 0.0, 1.0]);
        assert!((rgb_to_yuv(&red).unwrap().0.data()[0] - 0.299).abs() < 1e-15);
        assert!((rgb_to_yuv(&blue).unwrap().0.data()[0] - 0.114).abs() < 1e-15);
    }

    #[test]
    fn rejects_gray() {
        assert!(rgb_to_yuv(&Image::filled(2, 2, 1, 0.0)).is_err());
    }

    #[test]
    fn inverse_roundtrip() {
        let img = Image::from_fn_rgb(4, 4, |x, y| [x as f64 / 4.0, y as f64 / 4.0, 0.3]);
        let (y, uv) = rgb_to_yuv(&img).unwrap();
        let back = yuv_to_rgb(&y, &uv).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
