//! Local-contrast structure maps and the multi-scale event confidence mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::NormalizeTape;
use crate::imaging::{
    convolve, convolve_adjoint, max_pool, percentile, rgb_to_yuv, robust_normalize, Image,
    KernelSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructureConfig {
    /// Gaussian scale of the local mean / deviation, pixels.
    pub local_sigma: f64,
    /// Added to the local deviation before dividing.
    pub stability_const: f64,
    /// Percentile clip (in percent) of the final [0, 1] normalization;
    /// `(0, 100)` is plain min-max scaling.
    pub normalize_clip: [f64; 2],
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            local_sigma: 2.0,
            stability_const: 1e-3,
            normalize_clip: [0.0, 100.0],
        }
    }
}

impl StructureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.local_sigma > 0.0) || !(self.stability_const > 0.0) {
            return Err(Error::invalid(
                "structure config needs local_sigma > 0 and stability_const > 0",
            ));
        }
        if !(self.normalize_clip[0] < self.normalize_clip[1]) {
            return Err(Error::invalid(
                "structure normalize_clip must be increasing",
            ));
        }
        Ok(())
    }

    fn kernel(&self) -> KernelSpec {
        KernelSpec::gaussian(self.local_sigma)
    }
}

/// Normalized structure map plus the chrominance planes when the input was RGB.
#[derive(Clone, Debug)]
pub struct StructureMap {
    pub s_norm: Image,
    pub chroma: Option<[Image; 2]>,
}

/// Forward state of the structure extractor on a luma plane.
#[derive(Clone, Debug)]
pub struct StructureTape {
    cfg: StructureConfig,
    y: Image,
    mu: Image,
    var: Image,
    s: Image,
    norm: NormalizeTape,
    s_norm: Image,
}

impl StructureTape {
    pub fn forward(y: &Image, cfg: &StructureConfig) -> Result<Self> {
        cfg.validate()?;
        y.check_gray("structure extraction")?;
        let k = cfg.kernel();
        let mu = convolve(y, &k)?;
        let m2 = convolve(&y.zip_map(y, |a, b| a * b), &k)?;
        let var = m2.zip_map(&mu, |s, m| s - m * m);
        let mut s = Image::new(y.width(), y.height(), 1);
        for i in 0..s.len() {
            let sigma = var.data()[i].max(0.0).sqrt();
            s.data_mut()[i] = (y.data()[i] - mu.data()[i]) / (sigma + cfg.stability_const);
        }
        let (s_norm, norm) =
            crate::imaging::stats_tape(&s, cfg.normalize_clip[0], cfg.normalize_clip[1])?;
        Ok(StructureTape {
            cfg: *cfg,
            y: y.clone(),
            mu,
            var,
            s,
            norm,
            s_norm,
        })
    }

    pub fn output(&self) -> &Image {
        &self.s_norm
    }

    /// Raw (unnormalized) structure `(Y - mu) / (sigma + c)`.
    pub fn raw(&self) -> &Image {
        &self.s
    }

    /// Gradient with respect to the luma plane.
    pub fn backward(&self, grad_out: &Image) -> Result<Image> {
        let g_s = self.norm.backward(&self.s, grad_out);
        let c = self.cfg.stability_const;
        let n = self.y.len();
        let mut g_y = Image::new(self.y.width(), self.y.height(), 1);
        let mut g_mu = g_y.clone();
        let mut g_m2 = g_y.clone();
        for i in 0..n {
            let g = g_s.data()[i];
            if g == 0.0 {
                continue;
            }
            let v = self.var.data()[i];
            let sigma = v.max(0.0).sqrt();
            let d = sigma + c;
            let centered = self.y.data()[i] - self.mu.data()[i];
            g_y.data_mut()[i] = g / d;
            let mut gm = -g / d;
            if v > 0.0 {
                let g_sigma = -g * centered / (d * d);
                let g_var = g_sigma / (2.0 * sigma);
                g_m2.data_mut()[i] = g_var;
                gm -= 2.0 * self.mu.data()[i] * g_var;
            }
            g_mu.data_mut()[i] = gm;
        }
        let k = self.cfg.kernel();
        let back_mu = convolve_adjoint(&g_mu, &k)?;
        let back_m2 = convolve_adjoint(&g_m2, &k)?;
        for i in 0..n {
            g_y.data_mut()[i] += back_mu.data()[i] + 2.0 * self.y.data()[i] * back_m2.data()[i];
        }
        Ok(g_y)
    }
}

/// Splits off chrominance for RGB input and returns the normalized
/// local-contrast structure of the luma channel.
pub fn extract_structure(img: &Image, cfg: &StructureConfig) -> Result<StructureMap> {
    let (y, chroma) = match img.channels() {
        1 => (img.clone(), None),
        _ => {
            let (y, uv) = rgb_to_yuv(img)?;
            (y, Some(uv))
        }
    };
    let tape = StructureTape::forward(&y, cfg)?;
    Ok(StructureMap {
        s_norm: tape.s_norm,
        chroma,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub sigma_small: f64,
    pub sigma_large: f64,
    pub persistence_gamma: f64,
    pub gate_sharpness: f64,
    pub gate_percentile: f64,
    pub eps: f64,
    /// Odd max-pool size, or 0 to skip dilation.
    pub dilate_kernel: usize,
    /// Percentile clip (percent) used by every robust normalization.
    pub clip: [f64; 2],
    /// Dilate the final normalized map (true) or dilate before normalizing.
    pub dilate_after_normalize: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            sigma_small: 1.0,
            sigma_large: 3.0,
            persistence_gamma: 1.0,
            gate_sharpness: 25.0,
            gate_percentile: 0.85,
            eps: 1e-12,
            dilate_kernel: 3,
            clip: [1.0, 99.0],
            dilate_after_normalize: true,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_small > 0.0
            && self.sigma_small < self.sigma_large
            && self.persistence_gamma > 0.0
            && self.gate_sharpness > 0.0
            && self.gate_percentile > 0.0
            && self.gate_percentile < 1.0
            && self.eps > 0.0
            && (self.dilate_kernel == 0 || self.dilate_kernel % 2 == 1)
            && self.clip[0] < self.clip[1];
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid mask config {self:?}")))
        }
    }
}

/// Every intermediate of the mask pipeline, for inspection.
#[derive(Clone, Debug)]
pub struct MaskParts {
    pub mag_small: Image,
    pub mag_large: Image,
    pub persistence: Image,
    pub gate: Image,
    pub tau: f64,
    pub raw: Image,
    pub weight: Image,
}

fn gradient_magnitude(img: &Image, sigma: f64, eps: f64) -> Result<Image> {
    let smooth = convolve(img, &KernelSpec::gaussian(sigma))?;
    let gx = convolve(&smooth, &KernelSpec::sobel_x())?;
    let gy = convolve(&smooth, &KernelSpec::sobel_y())?;
    Ok(gx.zip_map(&gy, |a, b| (a * a + b * b + eps).sqrt()))
}

pub fn weight_mask_parts(evs_img: &Image, cfg: &MaskConfig) -> Result<MaskParts> {
    cfg.validate()?;
    evs_img.check_gray("weight_mask")?;
    let [lo, hi] = cfg.clip;
    let mag_small = robust_normalize(
        &gradient_magnitude(evs_img, cfg.sigma_small, cfg.eps)?,
        lo,
        hi,
    )?;
    let mag_large = robust_normalize(
        &gradient_magnitude(evs_img, cfg.sigma_large, cfg.eps)?,
        lo,
        hi,
    )?;
    let persistence = mag_large.zip_map(&mag_small, |l, s| {
        (l / (s + cfg.eps)).min(1.0).powf(cfg.persistence_gamma)
    });
    let tau = percentile(&mag_large, cfg.gate_percentile)?;
    let gate = mag_large.map(|l| 1.0 / (1.0 + (-cfg.gate_sharpness * (l - tau)).exp()));
    let mut raw = mag_large.zip_map(&persistence, |l, p| l * p);
    raw = raw.zip_map(&gate, |a, g| a * g);
    let weight = match (cfg.dilate_kernel, cfg.dilate_after_normalize) {
        (0, _) => robust_normalize(&raw, lo, hi)?,
        (k, true) => max_pool(&robust_normalize(&raw, lo, hi)?, k)?,
        (k, false) => robust_normalize(&max_pool(&raw, k)?, lo, hi)?,
    };
    Ok(MaskParts {
        mag_small,
        mag_large,
        persistence,
        gate,
        tau,
        raw,
        weight,
    })
}

/// Confidence weights in `[0, 1]` that favour structure persistent across scales.
pub fn weight_mask(evs_img: &Image, cfg: &MaskConfig) -> Result<Image> {
    Ok(weight_mask_parts(evs_img, cfg)?.weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Image::from_fn(w, h, |_, _| rng.gen::<f64>());
        convolve(&raw, &KernelSpec::gaussian(0.8)).unwrap()
    }

    #[test]
    fn constant_image_has_no_structure() {
        let img = Image::filled(16, 16, 1, 0.4);
        let m = extract_structure(&img, &StructureConfig::default()).unwrap();
        assert!(m.s_norm.data().iter().all(|&v| v == 0.0));
        assert!(m.chroma.is_none());
        let rgb = Image::filled(8, 8, 3, 0.2);
        assert!(extract_structure(&rgb, &StructureConfig::default())
            .unwrap()
            .chroma
            .is_some());
    }

    #[test]
    fn step_edge_response() {
        let w = 48;
        let img = Image::from_fn(w, 8, |x, _| if x >= w / 2 { 0.9 } else { 0.1 });
        let cfg = StructureConfig::default();
        let m = extract_structure(&img, &cfg).unwrap().s_norm;
        // 1D oracle of the same pipeline along one row
        let taps = crate::imaging::filter_taps(cfg.local_sigma);
        let r = taps.len() as isize / 2;
        let row: Vec<f64> = (0..w).map(|x| img.get(x, 0, 0)).collect();
        let blur = |v: &[f64]| -> Vec<f64> {
            (0..w as isize)
                .map(|x| {
                    taps.iter()
                        .enumerate()
                        .map(|(k, t)| t * v[(x + k as isize - r).clamp(0, w as isize - 1) as usize])
                        .sum()
                })
                .collect()
        };
        let mu = blur(&row);
        let m2 = blur(&row.iter().map(|v| v * v).collect::<Vec<_>>());
        let s: Vec<f64> = (0..w)
            .map(|i| {
                (row[i] - mu[i]) / ((m2[i] - mu[i] * mu[i]).max(0.0).sqrt() + cfg.stability_const)
            })
            .collect();
        let (lo, hi) = s
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for x in 0..w {
            let expect = (s[x] - lo) / (hi - lo);
            assert!((m.get(x, 3, 0) - expect).abs() < 1e-9, "x={x}");
        }
        let argmax = (0..w)
            .max_by(|&a, &b| m.get(a, 0, 0).total_cmp(&m.get(b, 0, 0)))
            .unwrap();
        assert!((argmax as isize - (w / 2) as isize).abs() <= 4);
        assert!((m.get(2, 0, 0) - 0.5).abs() < 0.05);
        assert!((m.get(w - 3, 0, 0) - 0.5).abs() < 0.05);
    }

    #[test]
    fn contrast_and_brightness_invariance() {
        let cfg = StructureConfig {
            stability_const: 1e-9,
            ..Default::default()
        };
        let base = texture(24, 24, 3).map(|v| 0.25 + 0.5 * v);
        let half = base.map(|v| 0.5 * v);
        let a = extract_structure(&base, &cfg).unwrap().s_norm;
        let b = extract_structure(&half, &cfg).unwrap().s_norm;
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let d = StructureConfig::default();
        let a = extract_structure(&base, &d).unwrap().s_norm;
        let c = extract_structure(&base.map(|v| v + 0.13), &d)
            .unwrap()
            .s_norm;
        for (x, y) in a.data().iter().zip(c.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn structure_backward_matches_finite_differences() {
        let y = texture(14, 12, 8);
        let up = texture(14, 12, 9).map(|v| v - 0.5);
        for cfg in [
            StructureConfig::default(),
            StructureConfig {
                normalize_clip: [2.0, 97.0],
                ..Default::default()
            },
        ] {
            let tape = StructureTape::forward(&y, &cfg).unwrap();
            let g = tape.backward(&up).unwrap();
            let h = 1e-6;
            for i in (0..y.len()).step_by(5) {
                let f = |d: f64| {
                    let mut p = y.clone();
                    p.data_mut()[i] += d;
                    let o = StructureTape::forward(&p, &cfg).unwrap();
                    o.output()
                        .data()
                        .iter()
                        .zip(up.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let an = g.data()[i];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + an.abs()),
                    "{i}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn mask_basic_contracts() {
        let cfg = MaskConfig::default();
        let flat = Image::filled(20, 20, 1, 0.6);
        assert!(weight_mask(&flat, &cfg)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let img = texture(32, 32, 4);
        let w0 = weight_mask(
            &img,
            &MaskConfig {
                dilate_kernel: 0,
                ..cfg
            },
        )
        .unwrap();
        let w3 = weight_mask(&img, &cfg).unwrap();
        assert!(w3.data().iter().zip(w0.data()).all(|(a, b)| a >= b));
        assert!(w3.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let p = weight_mask_parts(&img, &cfg).unwrap();
        assert!(p.persistence.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(weight_mask(
            &img,
            &MaskConfig {
                sigma_small: 3.0,
                ..cfg
            }
        )
        .is_err());
        assert!(weight_mask(
            &img,
            &MaskConfig {
                dilate_kernel: 2,
                ..cfg
            }
        )
        .is_err());
        assert!(weight_mask(&Image::filled(4, 4, 3, 0.0), &cfg).is_err());
    }

    #[test]
    fn gate_is_monotone_in_coarse_magnitude() {
        let cfg = MaskConfig::default();
        let tau = 0.4;
        let gate = |l: f64| 1.0 / (1.0 + (-cfg.gate_sharpness * (l - tau)).exp());
        let mut prev = 0.0;
        for i in 0..=100 {
            let g = gate(i as f64 / 100.0);
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn dilation_fixed_point_on_plateau() {
        let img = Image::from_fn(12, 12, |x, _| if x < 6 { 0.2 } else { 0.9 });
        let once = max_pool(&img, 3).unwrap();
        let twice = max_pool(&once, 3).unwrap();
        for y in 0..12 {
            for x in 0..3 {
                assert_eq!(twice.get(x, y, 0), once.get(x, y, 0));
            }
            for x in 8..12 {
                assert_eq!(twice.get(x, y, 0), once.get(x, y, 0));
            }
        }
    }

    #[test]
    fn persistence_suppresses_speckle() {
        let parts = weight_mask_parts(&bar_and_speckle(), &MaskConfig::default()).unwrap();
        // speckle at (24, 8): fine-scale response dominates, persistence well below 1
        assert!(
            parts.persistence.get(24, 8, 0) < 0.6,
            "{}",
            parts.persistence.get(24, 8, 0)
        );
        // bar edge at x = 6: coarse response persists
        // bar edge between x = 5 and x = 6: coarse response persists
        assert!(parts.persistence.get(5, 16, 0) > 0.9);
        assert!(parts.persistence.get(12, 16, 0) > 0.9);
        for x in [5, 6, 11, 12] {
            assert!(
                parts.weight.get(x, 16, 0) > 0.9,
                "edge weight at {x}: {}",
                parts.weight.get(x, 16, 0)
            );
        }
        assert!(
            parts.weight.get(24, 8, 0) < 0.2,
            "speckle weight {}",
            parts.weight.get(24, 8, 0)
        );
    }

    /// 32x32 synthetic: a 6-pixel vertical bar plus one isolated hot pixel.
    pub(crate) fn bar_and_speckle() -> Image {
        let mut img = Image::from_fn(32, 32, |x, _| if (6..12).contains(&x) { 0.9 } else { 0.1 });
        img.set(24, 8, 0, 0.9);
        img
    }
}
