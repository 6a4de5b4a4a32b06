use serde::{Deserialize, Serialize};

use super::state::{SceneGrad, SceneState};
use crate::capture::CaptureSession;
use crate::error::{Error, Result};
use crate::eventsim::accumulate;
use crate::imaging::{Image, KernelSpec, SsimParams};
use crate::losses::{
    loss_blur, loss_evs, loss_reg_e, loss_reg_r, loss_struct, total_loss, LossReport, LossTerms,
    LossWeights, StructTarget,
};
use crate::splat::{
    render_gradients, render_with, synth_blur, synth_blur_backward, Deform, GaussianMix2D,
    RenderOptions,
};
use crate::structure::{weight_mask, MaskConfig, StructureConfig};

/// Loss weights plus the settings of the individual terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub structure: StructureConfig,
    pub mask: MaskConfig,
    /// Gaussian sigma of the consistency regularizer's low-pass, pixels.
    pub reg_r_sigma: f64,
    /// Rasterizer cutoff; zero renders exactly.
    pub alpha_min: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            weights: LossWeights::default(),
            structure: StructureConfig::default(),
            mask: MaskConfig::default(),
            reg_r_sigma: 2.0,
            alpha_min: RenderOptions::default().alpha_min,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.structure.validate()?;
        self.mask.validate()?;
        if !(self.reg_r_sigma > 0.0) {
            return Err(Error::Config("reg_r_sigma must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.alpha_min) {
            return Err(Error::Config("alpha_min must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { alpha_min: self.alpha_min, ..RenderOptions::default() }
    }

    fn uses_events(&self) -> bool {
        let w = &self.weights;
        w.lambda_struct > 0.0 || w.lambda_evs > 0.0 || w.lambda_reg_e > 0.0
    }
}

/// Which views one iteration looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub rgb_view: usize,
    /// Index into [`Objective::pairs`]; ignored when no event term is active.
    pub event_pair: usize,
}

/// Precomputed, read-only training data for one stage.
pub struct Objective<'a> {
    pub session: &'a CaptureSession,
    pub config: ObjectiveConfig,
    pub stage: u8,
    view_codes: Vec<[f64; 2]>,
    /// Temporally adjacent event views `(earlier, later)`.
    pairs: Vec<(usize, usize)>,
    accumulations: Vec<Image>,
    targets: Vec<StructTarget>,
    reference: Option<GaussianMix2D>,
    reg_r_kernel: KernelSpec,
    opts: RenderOptions,
}

impl<'a> Objective<'a> {
    /// Stage 1 sees only the blur term. Stage 2 needs the frozen Stage-1
    /// mixture whenever the event-view color term is weighted.
    pub fn new(
        session: &'a CaptureSession,
        config: ObjectiveConfig,
        stage: u8,
        reference: Option<GaussianMix2D>,
    ) -> Result<Self> {
        config.validate()?;
        if stage != 1 && stage != 2 {
            return Err(Error::invalid(format!("unknown training stage {stage}")));
        }
        let events = stage == 2 && config.uses_events();
        if stage == 2 && config.weights.lambda_reg_e > 0.0 && reference.is_none() {
            return Err(Error::invalid("event-view color term needs the frozen stage-1 mixture"));
        }
        let mut order: Vec<usize> = (0..session.event_views.len()).collect();
        order.sort_by_key(|&i| session.event_views[i].t_us);
        let pairs: Vec<(usize, usize)> = if events {
            order.windows(2).map(|p| (p[0], p[1])).collect()
        } else {
            Vec::new()
        };
        if events && pairs.is_empty() {
            return Err(Error::invalid("event terms need at least two event views"));
        }
        let ev = &session.event_views;
        let accumulations = pairs.iter().map(|&(a, b)| accumulate(&session.events, ev[a].t_us, ev[b].t_us)).collect();
        let targets = if events && config.weights.lambda_struct > 0.0 {
            ev.iter()
                .map(|v| StructTarget::new(&v.image, weight_mask(&v.image, &config.mask)?, &config.structure))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Objective {
            session,
            config,
            stage,
            view_codes: super::state::view_codes(session),
            pairs,
            accumulations,
            targets,
            reference: if stage == 2 { reference } else { None },
            reg_r_kernel: KernelSpec::gaussian(config.reg_r_sigma),
            opts: config.render_options(),
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn n_rgb(&self) -> usize {
        self.session.rgb_views.len()
    }

    pub fn frozen_reference(&self) -> Option<&GaussianMix2D> {
        self.reference.as_ref()
    }

    fn weights(&self) -> &LossWeights {
        &self.config.weights
    }

    /// Loss report and, when `grad` is set, the gradient of the weighted total.
    pub fn evaluate(&self, state: &SceneState, sample: Sample, grad: bool) -> Result<(LossReport, Option<SceneGrad>)> {
        let (w, h) = (self.session.width(), self.session.height());
        let lw = *self.weights();
        let mut terms = LossTerms::default();
        let mut g = grad.then(|| SceneGrad::zeros(state));
        let ssim = SsimParams::default();

        let i = sample.rgb_view;
        let need_blur = lw.lambda_blur > 0.0 || self.stage == 1;
        let need_reg_r = self.stage == 2 && lw.lambda_reg_r > 0.0;
        if need_blur || need_reg_r {
            let view = self
                .session
                .rgb_views
                .get(i)
                .ok_or_else(|| Error::invalid(format!("rgb view {i} out of range")))?;
            let deform = state.mlp.as_ref().map(|mlp| Deform { mlp, view_code: self.view_codes[i] });
            let base = state.rgb_warps[i];
            let (avg, subs) = synth_blur(&state.mix, &base, &state.blur, i, deform, w, h, &self.opts)?;
            let mut grad_avg = Image::new(w, h, 3);
            let mut grad_subs: Option<Vec<Image>> = None;
            if need_blur {
                let (v, ga) = loss_blur(&avg, &view.image, lw.alpha_blur, ssim)?;
                terms.blur = Some(v);
                grad_avg.add_scaled(&ga, lw.lambda_blur);
            }
            if need_reg_r {
                let sharp = render_with(&state.mix, &base, w, h, &self.opts);
                let (v, gs, gb) = loss_reg_r(&subs, &sharp, &view.image, &self.reg_r_kernel)?;
                terms.reg_r = Some(v);
                if let Some(g) = g.as_mut() {
                    let mut up = gb;
                    up.scale(lw.lambda_reg_r);
                    let (mg, wg) = render_gradients(&state.mix, &base, w, h, &up, &self.opts)?;
                    g.mix.add_scaled(&mg, 1.0);
                    g.rgb_warps[i].add(&wg);
                    grad_subs = Some(
                        gs.into_iter()
                            .map(|mut s| {
                                s.scale(lw.lambda_reg_r);
                                s
                            })
                            .collect(),
                    );
                }
            }
            if let Some(g) = g.as_mut() {
                let bg = synth_blur_backward(
                    &state.mix,
                    &base,
                    &state.blur,
                    i,
                    deform,
                    w,
                    h,
                    &self.opts,
                    &grad_avg,
                    grad_subs.as_deref(),
                )?;
                g.mix.add_scaled(&bg.mix, 1.0);
                g.rgb_warps[i].add(&bg.base);
                for (dst, src) in g.offsets[i].iter_mut().zip(&bg.offsets) {
                    dst.add(src);
                }
                if let (Some(dst), Some(src)) = (g.mlp.as_mut(), bg.mlp.as_ref()) {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }

        if !self.pairs.is_empty() {
            let j = sample.event_pair;
            let &(a, b) = self
                .pairs
                .get(j)
                .ok_or_else(|| Error::invalid(format!("event pair {j} out of range")))?;
            let warps = [state.event_warps[a], state.event_warps[b]];
            let renders = warps.map(|wp| render_with(&state.mix, &wp, w, h, &self.opts));
            let mut ups = [Image::new(w, h, 3), Image::new(w, h, 3)];
            if lw.lambda_evs > 0.0 {
                let (v, gs, ge) = loss_evs(&renders[0], &renders[1], &self.accumulations[j], self.session.theta())?;
                terms.evs = Some(v);
                ups[0].add_scaled(&gs, lw.lambda_evs);
                ups[1].add_scaled(&ge, lw.lambda_evs);
            }
            if lw.lambda_struct > 0.0 {
                let mut total = 0.0;
                for (k, view) in [a, b].into_iter().enumerate() {
                    let (v, gr) = loss_struct(&renders[k], &self.targets[view], &self.config.structure, ssim)?;
                    total += 0.5 * v;
                    ups[k].add_scaled(&gr, 0.5 * lw.lambda_struct);
                }
                terms.structure = Some(total);
            }
            if lw.lambda_reg_e > 0.0 {
                let reference = self.reference.as_ref().expect("checked at construction");
                let mut total = 0.0;
                for (k, view) in [a, b].into_iter().enumerate() {
                    let r = render_with(reference, &warps[k], w, h, &self.opts);
                    let (v, mut gr) = loss_reg_e(&renders[k], &r)?;
                    total += 0.5 * v;
                    gr.scale(0.5 * lw.lambda_reg_e);
                    if let Some(g) = g.as_mut() {
                        // the reference mixture is frozen, but it is viewed
                        // through the live warp: d/dref = -d/drender
                        let (_, wg) = render_gradients(reference, &warps[k], w, h, &gr.map(|v| -v), &self.opts)?;
                        g.event_warps[view].add(&wg);
                    }
                    ups[k].add_scaled(&gr, 1.0);
                }
                terms.reg_e = Some(total);
            }
            if let Some(g) = g.as_mut() {
                for (k, view) in [a, b].into_iter().enumerate() {
                    let (mg, wg) = render_gradients(&state.mix, &warps[k], w, h, &ups[k], &self.opts)?;
                    g.mix.add_scaled(&mg, 1.0);
                    g.event_warps[view].add(&wg);
                }
            }
        }
        let report = total_loss(&terms, &lw, self.stage, 0)?;
        Ok((report, g))
    }
}
