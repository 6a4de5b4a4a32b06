use super::filter::{convolve, convolve_adjoint, KernelSpec};
use super::Image;
use crate::error::Result;

/// Window and stabilizing constants for unit dynamic range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window_sigma: f64,
    pub window_radius: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        // 11x11 Gaussian window
        SsimParams {
            window_sigma: 1.5,
            window_radius: 5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimParams {
    fn window(&self) -> KernelSpec {
        KernelSpec::gaussian_with_radius(self.window_sigma, self.window_radius)
    }
}

/// Forward windowed statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct SsimTape {
    params: SsimParams,
    include_luminance: bool,
    mu_a: Image,
    mu_b: Image,
    var_a: Image,
    var_b: Image,
    cov: Image,
    map: Image,
}

impl SsimTape {
    pub fn forward(
        a: &Image,
        b: &Image,
        include_luminance: bool,
        params: SsimParams,
    ) -> Result<Self> {
        a.check_same_shape(b, "ssim")?;
        let win = params.window();
        let mu_a = convolve(a, &win)?;
        let mu_b = convolve(b, &win)?;
        let saa = convolve(&a.zip_map(a, |x, y| x * y), &win)?;
        let sbb = convolve(&b.zip_map(b, |x, y| x * y), &win)?;
        let sab = convolve(&a.zip_map(b, |x, y| x * y), &win)?;
        let var_a = saa.zip_map(&mu_a, |s, m| s - m * m);
        let var_b = sbb.zip_map(&mu_b, |s, m| s - m * m);
        let mut cov = sab;
        for ((c, ma), mb) in cov.data_mut().iter_mut().zip(mu_a.data()).zip(mu_b.data()) {
            *c -= ma * mb;
        }
        let mut map = Image::new(a.width(), a.height(), a.channels());
        for i in 0..map.len() {
            let cs =
                (2.0 * cov.data()[i] + params.c2) / (var_a.data()[i] + var_b.data()[i] + params.c2);
            let lum = if include_luminance {
                let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
                (2.0 * ma * mb + params.c1) / (ma * ma + mb * mb + params.c1)
            } else {
                1.0
            };
            map.data_mut()[i] = lum * cs;
        }
        Ok(SsimTape {
            params,
            include_luminance,
            mu_a,
            mu_b,
            var_a,
            var_b,
            cov,
            map,
        })
    }

    pub fn map(&self) -> &Image {
        &self.map
    }

    pub fn into_map(self) -> Image {
        self.map
    }

    /// Gradient with respect to the first argument `a` given the gradient
    /// with respect to the SSIM map. `b` is treated as a constant.
    pub fn backward(&self, a: &Image, b: &Image, grad_map: &Image) -> Result<Image> {
        let p = &self.params;
        let n = self.map.len();
        let mut g_mu = Image::new(a.width(), a.height(), a.channels());
        let mut g_var = g_mu.clone();
        let mut g_cov = g_mu.clone();
        for i in 0..n {
            let u = grad_map.data()[i];
            if u == 0.0 {
                continue;
            }
            let (ma, mb) = (self.mu_a.data()[i], self.mu_b.data()[i]);
            let n2 = 2.0 * self.cov.data()[i] + p.c2;
            let d2 = self.var_a.data()[i] + self.var_b.data()[i] + p.c2;
            let cs = n2 / d2;
            let (lum, dlum) = if self.include_luminance {
                let n1 = 2.0 * ma * mb + p.c1;
                let d1 = ma * ma + mb * mb + p.c1;
                (n1 / d1, (2.0 * mb * d1 - 2.0 * ma * n1) / (d1 * d1))
            } else {
                (1.0, 0.0)
            };
            let gv = -u * lum * n2 / (d2 * d2);
            let gc = u * lum * 2.0 / d2;
            g_var.data_mut()[i] = gv;
            g_cov.data_mut()[i] = gc;
            g_mu.data_mut()[i] = u * cs * dlum - 2.0 * ma * gv - mb * gc;
        }
        let win = p.window();
        let mut grad = convolve_adjoint(&g_mu, &win)?;
        let gv = convolve_adjoint(&g_var, &win)?;
        let gc = convolve_adjoint(&g_cov, &win)?;
        for i in 0..n {
            grad.data_mut()[i] += 2.0 * a.data()[i] * gv.data()[i] + b.data()[i] * gc.data()[i];
        }
        Ok(grad)
    }
}

/// Per-pixel SSIM. With `include_luminance == false` only the
/// contrast-structure product is kept.
pub fn ssim_map(a: &Image, b: &Image, include_luminance: bool) -> Result<Image> {
    Ok(SsimTape::forward(a, b, include_luminance, SsimParams::default())?.into_map())
}

/// Mean of the standard (luminance-including) SSIM map.
pub fn ssim_mean(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_map(a, b, true)?.mean())
}
