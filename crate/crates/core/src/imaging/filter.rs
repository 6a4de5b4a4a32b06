use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    SobelX,
    SobelY,
    Bilateral,
}

/// Filter description. `sigma_range` is only read by the bilateral filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub sigma_space: f64,
    pub sigma_range: f64,
    pub radius: usize,
}

impl KernelSpec {
    /// Gaussian with radius `ceil(3 sigma)`.
    pub fn gaussian(sigma: f64) -> Self {
        let radius = ((3.0 * sigma).ceil() as usize).max(1);
        Self::gaussian_with_radius(sigma, radius)
    }

    pub fn gaussian_with_radius(sigma: f64, radius: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Gaussian,
            sigma_space: sigma,
            sigma_range: 0.0,
            radius,
        }
    }

    pub fn sobel_x() -> Self {
        KernelSpec {
            kind: KernelKind::SobelX,
            sigma_space: 1.0,
            sigma_range: 0.0,
            radius: 1,
        }
    }

    pub fn sobel_y() -> Self {
        KernelSpec {
            kind: KernelKind::SobelY,
            sigma_space: 1.0,
            sigma_range: 0.0,
            radius: 1,
        }
    }

    pub fn bilateral(sigma_space: f64, sigma_range: f64, radius: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Bilateral,
            sigma_space,
            sigma_range,
            radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma_space.is_finite() || self.sigma_space <= 0.0 {
            return Err(Error::invalid(format!(
                "sigma_space must be finite and > 0, got {}",
                self.sigma_space
            )));
        }
        if self.radius < 1 {
            return Err(Error::invalid("kernel radius must be >= 1"));
        }
        if self.kind == KernelKind::Bilateral
            && (!self.sigma_range.is_finite() || self.sigma_range <= 0.0)
        {
            return Err(Error::invalid(format!(
                "sigma_range must be finite and > 0, got {}",
                self.sigma_range
            )));
        }
        Ok(())
    }

    /// Horizontal and vertical taps of a separable kernel (correlation order).
    fn separable_taps(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        match self.kind {
            KernelKind::Gaussian => {
                let g = gaussian_taps(self.sigma_space, self.radius);
                Ok((g.clone(), g))
            }
            KernelKind::SobelX => Ok((vec![-1.0, 0.0, 1.0], vec![1.0, 2.0, 1.0])),
            KernelKind::SobelY => Ok((vec![1.0, 2.0, 1.0], vec![-1.0, 0.0, 1.0])),
            KernelKind::Bilateral => Err(Error::invalid(
                "bilateral kernels are not separable; use bilateral_denoise",
            )),
        }
    }
}

/// Normalized 1D Gaussian taps of length `2 * radius + 1`.
pub(crate) fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Edge-replicated 1D correlation over `n` samples as per-output
/// `(source, weight)` lists; `adjoint` returns the transposed operator.
fn tap_lists(n: usize, taps: &[f64], adjoint: bool) -> Vec<Vec<(usize, f64)>> {
    let r = (taps.len() / 2) as isize;
    let last = n as isize - 1;
    let mut fwd: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(taps.len()); n];
    for (i, list) in fwd.iter_mut().enumerate() {
        for (k, &t) in taps.iter().enumerate() {
            // clamped duplicates stay separate so a constant input sums the
            // same terms in the same order everywhere
            list.push(((i as isize + k as isize - r).clamp(0, last) as usize, t));
        }
    }
    if !adjoint {
        return fwd;
    }
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in fwd.iter().enumerate() {
        for &(j, t) in list {
            adj[j].push((i, t));
        }
    }
    adj
}

/// Horizontal pass. Interior columns are one contiguous multiply-add per
/// tap; only the `r` border columns on each side clamp their sources.
fn row_pass(img: &Image, taps: &[f64], adjoint: bool) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = taps.len() / 2;
    let last = w as isize - 1;
    let src = img.data();
    let mut out = Image::new(w, h, c);
    let clamp = |x: usize, k: usize| (x as isize + k as isize - r as isize).clamp(0, last) as usize;
    let interior = if w > 2 * r { r..w - r } else { 0..0 };
    par::for_each_chunk_mut(out.data_mut(), w * c, |y, dst| {
        let row = &src[y * w * c..(y + 1) * w * c];
        let n = interior.len() * c;
        for (k, &t) in taps.iter().enumerate().filter(|_| n > 0) {
            let (from, to) = if adjoint { (interior.start, k) } else { (k, interior.start) };
            let s = &row[from * c..from * c + n];
            for (d, v) in dst[to * c..to * c + n].iter_mut().zip(s) {
                *d += t * v;
            }
        }
        for x in (0..w).filter(|x| !interior.contains(x)) {
            for (k, &t) in taps.iter().enumerate() {
                let (from, to) = if adjoint { (x, clamp(x, k)) } else { (clamp(x, k), x) };
                for ch in 0..c {
                    dst[to * c + ch] += t * row[from * c + ch];
                }
            }
        }
    });
    out
}

fn col_pass(img: &Image, lists: &[Vec<(usize, f64)>]) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let stride = w * c;
    let src = img.data();
    let mut out = Image::new(w, h, c);
    par::for_each_chunk_mut(out.data_mut(), stride, |y, dst| {
        for &(sy, t) in &lists[y] {
            for (d, v) in dst.iter_mut().zip(&src[sy * stride..(sy + 1) * stride]) {
                *d += t * v;
            }
        }
    });
    out
}

fn separable(img: &Image, hx: &[f64], vy: &[f64], adjoint: bool) -> Image {
    if img.is_empty() {
        return img.clone();
    }
    let cols = tap_lists(img.height(), vy, adjoint);
    col_pass(&row_pass(img, hx, adjoint), &cols)
}

/// Linear filtering (correlation) with edge-replicated borders, channel-wise.
pub fn convolve(img: &Image, k: &KernelSpec) -> Result<Image> {
    let (hx, vy) = k.separable_taps()?;
    Ok(separable(img, &hx, &vy, false))
}

/// Transpose of [`convolve`] for the same kernel; used to backpropagate
/// through filtering.
pub fn convolve_adjoint(grad: &Image, k: &KernelSpec) -> Result<Image> {
    let (hx, vy) = k.separable_taps()?;
    Ok(separable(grad, &hx, &vy, true))
}

/// Edge-preserving smoothing of a grayscale image.
///
/// Range weights are computed on a Gaussian-prefiltered guide (sigma equal to
/// half the spatial sigma) rather than on the raw samples, so isolated
/// impulses are smoothed away instead of being protected by their own range
/// weight. Each output is a convex combination of input samples.
pub fn bilateral_denoise(img: &Image, k: &KernelSpec) -> Result<Image> {
    if k.kind != KernelKind::Bilateral {
        return Err(Error::invalid(
            "bilateral_denoise needs a bilateral kernel spec",
        ));
    }
    k.validate()?;
    img.check_gray("bilateral_denoise")?;
    let guide = convolve(img, &KernelSpec::gaussian(0.5 * k.sigma_space))?;
    let (w, h) = (img.width(), img.height());
    let r = k.radius as isize;
    let mut spatial = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            spatial.push((dx, dy, (-d2 / (2.0 * k.sigma_space * k.sigma_space)).exp()));
        }
    }
    let inv_range = 1.0 / (2.0 * k.sigma_range * k.sigma_range);
    let src = img.data();
    let gd = guide.data();
    let mut out = Image::new(w, h, 1);
    par::for_each_chunk_mut(out.data_mut(), w, |y, dst| {
        for x in 0..w {
            let gp = gd[y * w + x];
            let (mut num, mut den) = (0.0, 0.0);
            for &(dx, dy, ws) in &spatial {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let q = yy * w + xx;
                let dg = gd[q] - gp;
                let wt = ws * (-dg * dg * inv_range).exp();
                num += wt * src[q];
                den += wt;
            }
            dst[x] = num / den;
        }
    });
    Ok(out)
}

/// Morphological dilation: max over a `k x k` window, stride 1. `k` must be odd.
pub fn max_pool(img: &Image, k: usize) -> Result<Image> {
    if k % 2 == 0 {
        return Err(Error::invalid(format!(
            "max-pool kernel must be odd, got {k}"
        )));
    }
    let r = (k / 2) as isize;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let mut out = Image::new(w, h, c);
    par::for_each_chunk_mut(out.data_mut(), w * c, |y, dst| {
        for x in 0..w as isize {
            for ch in 0..c {
                let mut m = f64::NEG_INFINITY;
                for dy in -r..=r {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx = x + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        m = m.max(src[(yy as usize * w + xx as usize) * c + ch]);
                    }
                }
                dst[x as usize * c + ch] = m;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn gaussian_preserves_constants() {
        let img = Image::filled(9, 7, 1, 0.5);
        let out = convolve(&img, &KernelSpec::gaussian(1.5)).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        for s in [0.3, 1.0, 1.5, 4.0] {
            let t = gaussian_taps(s, (3.0 * s).ceil() as usize);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sobel_on_vertical_step() {
        let img = Image::from_fn(10, 6, |x, _| if x >= 5 { 1.0 } else { 0.0 });
        let gx = convolve(&img, &KernelSpec::sobel_x()).unwrap();
        let gy = convolve(&img, &KernelSpec::sobel_y()).unwrap();
        for y in 0..6 {
            for x in 0..10 {
                let v = gx.get(x, y, 0);
                if x == 4 || x == 5 {
                    assert_eq!(v, 4.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_is_tabulated_kernel() {
        let mut img = Image::new(7, 7, 1);
        img.set(3, 3, 0, 1.0);
        let out = convolve(&img, &KernelSpec::gaussian_with_radius(1.0, 3)).unwrap();
        // independent 2D tabulation
        let mut table = [[0.0f64; 7]; 7];
        let mut total = 0.0;
        for (j, row) in table.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let (dx, dy) = (i as f64 - 3.0, j as f64 - 3.0);
                *v = (-(dx * dx + dy * dy) / 2.0).exp();
                total += *v;
            }
        }
        for y in 0..7 {
            for x in 0..7 {
                assert!((out.get(x, y, 0) - table[y][x] / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let k = KernelSpec::gaussian(1.7);
        for (w, h) in [(13, 9), (4, 11)] {
            let x = noise(w, h, 1);
            let y = noise(w, h, 2);
            let ax = convolve(&x, &k).unwrap();
            let aty = convolve_adjoint(&y, &k).unwrap();
            let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
        let x = noise(8, 8, 3);
        let y = noise(8, 8, 4);
        for k in [KernelSpec::sobel_x(), KernelSpec::sobel_y()] {
            let lhs: f64 = convolve(&x, &k)
                .unwrap()
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| a * b)
                .sum();
            let rhs: f64 = x
                .data()
                .iter()
                .zip(convolve_adjoint(&y, &k).unwrap().data())
                .map(|(a, b)| a * b)
                .sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_kernels() {
        let img = Image::filled(4, 4, 1, 0.0);
        assert!(convolve(&img, &KernelSpec::gaussian_with_radius(f64::NAN, 2)).is_err());
        assert!(convolve(&img, &KernelSpec::gaussian_with_radius(1.0, 0)).is_err());
        assert!(convolve(&img, &KernelSpec::bilateral(1.0, 0.1, 2)).is_err());
        assert!(bilateral_denoise(&img, &KernelSpec::gaussian(1.0)).is_err());
        assert!(bilateral_denoise(
            &Image::filled(4, 4, 3, 0.0),
            &KernelSpec::bilateral(1.0, 0.1, 2)
        )
        .is_err());
        assert!(max_pool(&img, 2).is_err());
    }

    #[test]
    fn bilateral_constant_fixed_point() {
        let img = Image::filled(12, 12, 1, 0.3);
        let out = bilateral_denoise(&img, &KernelSpec::bilateral(2.0, 0.1, 4)).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn bilateral_reduces_noise_on_step() {
        let clean = Image::from_fn(32, 32, |x, _| if x >= 16 { 0.8 } else { 0.2 });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
        let noisy = clean.map(|v| v + rng.sample(normal));
        let out = bilateral_denoise(&noisy, &KernelSpec::bilateral(2.0, 0.1, 4)).unwrap();
        let before = super::super::mse(&noisy, &clean).unwrap();
        let after = super::super::mse(&out, &clean).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(out.min() >= noisy.min() && out.max() <= noisy.max());
    }

    #[test]
    fn bilateral_hot_pixel_closed_form() {
        let (n, c) = (15usize, 7usize);
        let mut img = Image::new(n, n, 1);
        img.set(c, c, 0, 1.0);
        let spec = KernelSpec::bilateral(2.0, 0.1, 4);
        let out = bilateral_denoise(&img, &spec).unwrap();
        // Closed form: the guide is the impulse response of the prefilter, the
        // hot pixel's output is its own normalized weight.
        let g = gaussian_taps(1.0, 3);
        let guide = |dx: isize, dy: isize| -> f64 {
            if dx.abs() > 3 || dy.abs() > 3 {
                0.0
            } else {
                g[(dx + 3) as usize] * g[(dy + 3) as usize]
            }
        };
        let gp = guide(0, 0);
        let mut den = 0.0;
        let mut num = 0.0;
        for dy in -4isize..=4 {
            for dx in -4isize..=4 {
                let ws = (-((dx * dx + dy * dy) as f64) / 8.0).exp();
                let dg = guide(dx, dy) - gp;
                let wt = ws * (-dg * dg / 0.02).exp();
                den += wt;
                if dx == 0 && dy == 0 {
                    num += wt;
                }
            }
        }
        let expected = num / den;
        assert!((out.get(c, c, 0) - expected).abs() < 1e-12);
        assert!(expected < 0.6);
    }

    #[test]
    fn max_pool_dominates() {
        let img = noise(10, 10, 9);
        let out = max_pool(&img, 3).unwrap();
        assert!(out.data().iter().zip(img.data()).all(|(a, b)| a >= b));
        let flat = Image::filled(5, 5, 1, 0.25);
        assert_eq!(max_pool(&flat, 3).unwrap(), flat);
    }
}
