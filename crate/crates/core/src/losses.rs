//! Objective terms. Each returns its scalar value and the gradient with
//! respect to the image(s) it is differentiated against. All reductions are
//! means over pixels (and channels), so values do not scale with resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventsim::LOG_FLOOR;
use crate::imaging::{
    convolve, convolve_adjoint, to_luma, to_luma_adjoint, Image, KernelSpec, SsimParams, SsimTape,
};
use crate::structure::{StructureConfig, StructureTape};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_blur: f64,
    pub lambda_struct: f64,
    pub lambda_evs: f64,
    pub lambda_reg_r: f64,
    pub lambda_reg_e: f64,
    /// SSIM share of the blur term.
    pub alpha_blur: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_blur: 1.0,
            lambda_struct: 0.2,
            lambda_evs: 0.002,
            lambda_reg_r: 0.2,
            lambda_reg_e: 1.0,
            alpha_blur: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_blur,
            self.lambda_struct,
            self.lambda_evs,
            self.lambda_reg_r,
            self.lambda_reg_e,
        ];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha_blur) {
            return Err(Error::Config("alpha_blur must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn weight(&self, term: Term) -> f64 {
        match term {
            Term::Blur => self.lambda_blur,
            Term::Struct => self.lambda_struct,
            Term::Evs => self.lambda_evs,
            Term::RegR => self.lambda_reg_r,
            Term::RegE => self.lambda_reg_e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Blur,
    Struct,
    Evs,
    RegR,
    RegE,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Blur, Term::Struct, Term::Evs, Term::RegR, Term::RegE];

    pub fn name(&self) -> &'static str {
        match self {
            Term::Blur => "blur",
            Term::Struct => "struct",
            Term::Evs => "evs",
            Term::RegR => "reg_r",
            Term::RegE => "reg_e",
        }
    }
}

fn check_dims(a: &Image, b: &Image, what: &str) -> Result<()> {
    a.check_same_shape(b, what)
}

fn luma_log(img: &Image) -> (Image, Image) {
    let y = to_luma(img);
    let log = y.map(|v| v.max(LOG_FLOOR).ln());
    (y, log)
}

fn luma_log_adjoint(y: &Image, grad_log: &Image, channels: usize) -> Image {
    let gy = y.zip_map(grad_log, |v, g| if v > LOG_FLOOR { g / v } else { 0.0 });
    if channels == 1 {
        gy
    } else {
        to_luma_adjoint(&gy, channels)
    }
}

/// Event photometric term:
/// `mean_p (log Y_e - log Y_s - theta * acc)^2` on floored luma.
/// Returns the value and gradients for the start and end renders.
pub fn loss_evs(
    render_s: &Image,
    render_e: &Image,
    acc: &Image,
    theta: f64,
) -> Result<(f64, Image, Image)> {
    check_dims(render_s, render_e, "loss_evs")?;
    if acc.width() != render_s.width() || acc.height() != render_s.height() || acc.channels() != 1 {
        return Err(Error::dims(
            "loss_evs: accumulation image must be a grayscale image of the render size",
        ));
    }
    let (ys, ls) = luma_log(render_s);
    let (ye, le) = luma_log(render_e);
    let n = ls.len().max(1) as f64;
    let mut value = 0.0;
    let mut g = Image::new(acc.width(), acc.height(), 1);
    for i in 0..ls.len() {
        let r = le.data()[i] - ls.data()[i] - theta * acc.data()[i];
        value += r * r;
        g.data_mut()[i] = 2.0 * r / n;
    }
    let ge = luma_log_adjoint(&ye, &g, render_e.channels());
    let gs = luma_log_adjoint(&ys, &g.map(|v| -v), render_s.channels());
    Ok((value / n, gs, ge))
}

/// Precomputed structure target and confidence weights for [`loss_struct`].
#[derive(Clone, Debug)]
pub struct StructTarget {
    pub structure: Image,
    pub weight: Image,
}

impl StructTarget {
    pub fn new(evs_target: &Image, weight: Image, cfg: &StructureConfig) -> Result<Self> {
        let y = to_luma(evs_target);
        check_dims(&y, &weight, "struct target weight")?;
        let structure = StructureTape::forward(&y, cfg)?.output().clone();
        Ok(StructTarget { structure, weight })
    }
}

/// Weighted luminance-free SSIM between structure maps:
/// `1 - mean_p W(p) * SSIM_cs(S(render), S(target))(p)`.
/// The target and weights are constants.
pub fn loss_struct(
    render: &Image,
    target: &StructTarget,
    cfg: &StructureConfig,
    ssim: SsimParams,
) -> Result<(f64, Image)> {
    let y = to_luma(render);
    check_dims(&y, &target.structure, "loss_struct")?;
    let tape = StructureTape::forward(&y, cfg)?;
    let s = tape.output();
    let st = SsimTape::forward(s, &target.structure, false, ssim)?;
    let n = y.len().max(1) as f64;
    let reward = st
        .map()
        .data()
        .iter()
        .zip(target.weight.data())
        .map(|(m, w)| m * w)
        .sum::<f64>()
        / n;
    let gmap = target.weight.map(|w| -w / n);
    let gs = st.backward(s, &target.structure, &gmap)?;
    let gy = tape.backward(&gs)?;
    let g = if render.channels() == 1 {
        gy
    } else {
        to_luma_adjoint(&gy, render.channels())
    };
    Ok((1.0 - reward, g))
}

/// Blur synthesis term: `(1 - alpha) * mean|avg - obs| + alpha * (1 - SSIM(avg, obs))`
/// with standard SSIM averaged over channels.
pub fn loss_blur(avg: &Image, obs: &Image, alpha: f64, ssim: SsimParams) -> Result<(f64, Image)> {
    check_dims(avg, obs, "loss_blur")?;
    let n = avg.len().max(1) as f64;
    let mut l1 = 0.0;
    let mut g = Image::new(avg.width(), avg.height(), avg.channels());
    for i in 0..avg.len() {
        let d = avg.data()[i] - obs.data()[i];
        l1 += d.abs();
        g.data_mut()[i] = (1.0 - alpha)
            * if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
            / n;
    }
    let mut value = (1.0 - alpha) * l1 / n;
    if alpha > 0.0 {
        let st = SsimTape::forward(avg, obs, true, ssim)?;
        value += alpha * (1.0 - st.map().mean());
        let gm = Image::filled(avg.width(), avg.height(), avg.channels(), -alpha / n);
        g.add_scaled(&st.backward(avg, obs, &gm)?, 1.0);
    }
    Ok((value, g))
}

/// RGB consistency term:
/// `(1/N) sum_i mean(g(I_i) - g(I))^2 + mean(g(I) - obs)^2`.
/// Returns the value, the gradients for each sub-frame and for the base render.
pub fn loss_reg_r(
    subs: &[Image],
    base: &Image,
    obs: &Image,
    g: &KernelSpec,
) -> Result<(f64, Vec<Image>, Image)> {
    check_dims(base, obs, "loss_reg_r")?;
    if subs.is_empty() {
        return Err(Error::invalid("loss_reg_r needs at least one sub-frame"));
    }
    for s in subs {
        check_dims(s, base, "loss_reg_r sub-frame")?;
    }
    let n = base.len().max(1) as f64;
    let k = subs.len() as f64;
    let gb = convolve(base, g)?;
    let mut value = 0.0;
    let mut grad_gb = Image::new(base.width(), base.height(), base.channels());
    let mut grad_subs = Vec::with_capacity(subs.len());
    for s in subs {
        let gsub = convolve(s, g)?;
        let diff = gsub.zip_map(&gb, |a, b| a - b);
        value += diff.data().iter().map(|d| d * d).sum::<f64>() / (n * k);
        let gd = diff.map(|d| 2.0 * d / (n * k));
        grad_gb.add_scaled(&gd, -1.0);
        grad_subs.push(convolve_adjoint(&gd, g)?);
    }
    let diff = gb.zip_map(obs, |a, b| a - b);
    value += diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    grad_gb.add_scaled(&diff.map(|d| 2.0 * d / n), 1.0);
    Ok((value, grad_subs, convolve_adjoint(&grad_gb, g)?))
}

/// Event-view color term: mean squared error against the frozen reference render.
pub fn loss_reg_e(render: &Image, reference: &Image) -> Result<(f64, Image)> {
    check_dims(render, reference, "loss_reg_e")?;
    let n = render.len().max(1) as f64;
    let diff = render.zip_map(reference, |a, b| a - b);
    let value = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((value, diff.map(|d| 2.0 * d / n)))
}

/// Term values of one evaluation. Absent terms were not evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub blur: Option<f64>,
    pub structure: Option<f64>,
    pub evs: Option<f64>,
    pub reg_r: Option<f64>,
    pub reg_e: Option<f64>,
}

impl LossTerms {
    pub fn get(&self, t: Term) -> Option<f64> {
        match t {
            Term::Blur => self.blur,
            Term::Struct => self.structure,
            Term::Evs => self.evs,
            Term::RegR => self.reg_r,
            Term::RegE => self.reg_e,
        }
    }
}

/// One line of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossReport {
    pub iter: usize,
    pub stage: u8,
    pub total: f64,
    pub blur: Option<f64>,
    #[serde(rename = "struct")]
    pub structure: Option<f64>,
    pub evs: Option<f64>,
    pub reg_r: Option<f64>,
    pub reg_e: Option<f64>,
}

impl LossReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

/// Weighted aggregate. Stage 1 uses the blur term alone; Stage 2 sums all
/// five terms, where a term may be absent only if its weight is zero (it is
/// then reported as 0).
pub fn total_loss(
    terms: &LossTerms,
    weights: &LossWeights,
    stage: u8,
    iter: usize,
) -> Result<LossReport> {
    match stage {
        1 => {
            let blur = terms
                .blur
                .ok_or_else(|| Error::invalid("stage 1 is missing the `blur` term"))?;
            Ok(LossReport {
                iter,
                stage,
                total: weights.lambda_blur * blur,
                blur: Some(blur),
                structure: None,
                evs: None,
                reg_r: None,
                reg_e: None,
            })
        }
        2 => {
            let mut vals = [0.0; 5];
            let mut total = 0.0;
            for (slot, t) in vals.iter_mut().zip(Term::ALL) {
                let w = weights.weight(t);
                *slot = match terms.get(t) {
                    Some(v) => v,
                    None if w == 0.0 => 0.0,
                    None => {
                        return Err(Error::invalid(format!(
                            "stage 2 is missing the `{}` term",
                            t.name()
                        )))
                    }
                };
                total += w * *slot;
            }
            Ok(LossReport {
                iter,
                stage,
                total,
                blur: Some(vals[0]),
                structure: Some(vals[1]),
                evs: Some(vals[2]),
                reg_r: Some(vals[3]),
                reg_e: Some(vals[4]),
            })
        }
        s => Err(Error::invalid(format!("unknown training stage {s}"))),
    }
}
