use serde::{Deserialize, Serialize};

use crate::capture::{warp_image, CaptureSession};
use crate::error::{Error, Result};
use crate::imaging::{psnr, ssim_mean, to_luma, Image};
use crate::optim::AdamState;
use crate::splat::{render_gradients, render_with, CameraWarp, GaussianMix2D, RenderOptions};

/// Score of one held-out view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewMetric {
    pub view: usize,
    pub t_us: u64,
    pub psnr: f64,
    /// Luma SSIM with the luminance factor.
    pub ssim: f64,
}

/// Per-view and mean scores of one image source over the test views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub run: String,
    /// `stage1`, `stage2` or `blurred_input`.
    pub source: String,
    /// Training stage, absent for the blurred-input baseline.
    pub stage: Option<u8>,
    pub config_hash: String,
    pub views: Vec<ViewMetric>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn new(run: &str, source: &str, stage: Option<u8>, config_hash: &str, views: Vec<ViewMetric>) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        MetricReport {
            run: run.into(),
            source: source.into(),
            stage,
            config_hash: config_hash.into(),
            views,
            mean_psnr,
            mean_ssim,
        }
    }
}

/// Everything `eval` reports for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub reports: Vec<MetricReport>,
}

impl EvalReport {
    pub fn get(&self, source: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.source == source)
    }

    /// Fixed-width text table, one row per source.
    pub fn table(&self) -> String {
        let mut s = format!("{:<14} {:>9} {:>8}\n", "source", "psnr_db", "ssim");
        for r in &self.reports {
            s += &format!("{:<14} {:>9.3} {:>8.4}\n", r.source, r.mean_psnr, r.mean_ssim);
        }
        s
    }
}

pub fn score(img: &Image, gt: &Image, cap: f64) -> Result<(f64, f64)> {
    Ok((psnr(img, gt, cap)?, ssim_mean(&to_luma(img), &to_luma(gt))?))
}

/// Warp-only registration of a rendered mixture to a target image by Adam on
/// the mean squared error. The best warp seen is returned, so the result is
/// never worse than `init`.
pub fn align_warp(
    mix: &GaussianMix2D,
    init: &CameraWarp,
    target: &Image,
    iters: usize,
    opts: &RenderOptions,
) -> Result<CameraWarp> {
    let (w, h) = (target.width(), target.height());
    if target.channels() != 3 {
        return Err(Error::invalid("alignment target must be RGB"));
    }
    let mut adam = AdamState::new();
    adam.add_group("warp", 4, 1.0).lr_scale = Some(vec![1e-3, 1e-3, 0.05, 0.05]);
    let mut p = init.to_array();
    let mut best = (f64::INFINITY, *init);
    let n = target.len() as f64;
    for it in 0..=iters {
        let warp = CameraWarp::from_array(p);
        let r = render_with(mix, &warp, w, h, opts);
        let diff = r.zip_map(target, |a, b| a - b);
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        if loss < best.0 {
            best = (loss, warp);
        }
        if it == iters {
            break;
        }
        let up = diff.map(|d| 2.0 * d / n);
        let (_, g) = render_gradients(mix, &warp, w, h, &up, opts)?;
        adam.step(&mut [&mut p[..]], &[&g.to_array()[..]])?;
    }
    Ok(best.1)
}

/// Index of the RGB view whose mid-exposure is closest to `t_us`.
pub fn nearest_rgb_view(session: &CaptureSession, t_us: u64) -> Option<usize> {
    (0..session.rgb_views.len()).min_by_key(|&i| session.rgb_views[i].mid_time().abs_diff(t_us))
}

/// The temporally nearest blurred frame resampled from its mid-exposure
/// pose into the test view's pose.
pub fn blurred_baseline(session: &CaptureSession, test: usize) -> Result<Image> {
    let t = session
        .test_views
        .get(test)
        .ok_or_else(|| Error::invalid(format!("test view {test} out of range")))?;
    let i = nearest_rgb_view(session, t.t_us).ok_or_else(|| Error::invalid("session has no RGB views"))?;
    let v = &session.rgb_views[i];
    Ok(warp_image(&v.image, &v.true_warp.inverse().compose(&t.warp)))
}

/// Horizontal concatenation of equally sized images.
pub fn strip(images: &[&Image]) -> Result<Image> {
    let first = images.first().ok_or_else(|| Error::invalid("empty strip"))?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    if images.iter().any(|i| i.width() != w || i.height() != h || i.channels() != c) {
        return Err(Error::dims("strip images differ in shape"));
    }
    let n = images.len();
    let mut data = Vec::with_capacity(n * w * h * c);
    for y in 0..h {
        for img in images {
            data.extend_from_slice(&img.data()[y * w * c..(y + 1) * w * c]);
        }
    }
    Image::from_vec(n * w, h, c, data)
}
