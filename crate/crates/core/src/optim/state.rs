use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use crate::capture::CaptureSession;
use crate::error::{Error, Result};
use crate::splat::{
    canvas_center, BlurModel, CameraWarp, DeformMLP, Gaussian, GaussianMix2D, MixGrad,
    SceneCheckpoint, WarpGrad, CHECKPOINT_VERSION,
};

/// Per-group Adam step sizes. Positional rates (means, warp and offset
/// translations) are multiplied by the canvas extent in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub means: f64,
    /// Means decay exponentially to `means * mean_decay` over a stage.
    pub mean_decay: f64,
    pub colors: f64,
    pub opacity: f64,
    pub log_scales: f64,
    pub rotations: f64,
    pub warps: f64,
    pub mlp: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            means: 2e-3,
            mean_decay: 0.1,
            colors: 2.5e-2,
            opacity: 2.5e-2,
            log_scales: 5e-3,
            rotations: 1e-3,
            warps: 1e-3,
            mlp: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSettings {
    pub width: usize,
    pub hidden_layers: usize,
    pub l_pos: usize,
    pub l_dir: usize,
}

impl Default for MlpSettings {
    fn default() -> Self {
        MlpSettings { width: 64, hidden_layers: 3, l_pos: 3, l_dir: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr: LearningRates,
    pub pose_refine: bool,
    pub log_interval: usize,
    /// Zero writes checkpoints only at the end of each stage.
    pub checkpoint_interval: usize,
    pub rng_seed: u64,
    /// Sub-frames per blurred view.
    pub n_sub: usize,
    pub use_mlp: bool,
    pub mlp: MlpSettings,
    /// Grid pitch of the initial mixture, pixels.
    pub init_spacing: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            stage1_iters: 2000,
            stage2_iters: 5000,
            lr: LearningRates::default(),
            pose_refine: true,
            log_interval: 10,
            checkpoint_interval: 0,
            rng_seed: 0,
            n_sub: 5,
            use_mlp: true,
            mlp: MlpSettings::default(),
            init_spacing: 4.0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        let rates = [
            lr.means,
            lr.colors,
            lr.opacity,
            lr.log_scales,
            lr.rotations,
            lr.warps,
            lr.mlp,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("learning rates must be finite and >= 0".into()));
        }
        if !(lr.mean_decay > 0.0 && lr.mean_decay <= 1.0) {
            return Err(Error::Config("mean_decay must lie in (0, 1]".into()));
        }
        if self.n_sub < 2 {
            return Err(Error::Config("n_sub must be >= 2".into()));
        }
        if !(self.init_spacing > 0.0) {
            return Err(Error::Config("init_spacing must be > 0".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything the optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneState {
    pub mix: GaussianMix2D,
    pub rgb_warps: Vec<CameraWarp>,
    pub event_warps: Vec<CameraWarp>,
    pub blur: BlurModel,
    pub mlp: Option<DeformMLP>,
}

/// Gradient of a scalar objective with respect to a [`SceneState`].
#[derive(Clone, Debug)]
pub struct SceneGrad {
    pub mix: MixGrad,
    pub rgb_warps: Vec<WarpGrad>,
    pub event_warps: Vec<WarpGrad>,
    pub offsets: Vec<Vec<WarpGrad>>,
    pub mlp: Option<Vec<f64>>,
}

impl SceneGrad {
    pub fn zeros(state: &SceneState) -> Self {
        SceneGrad {
            mix: MixGrad::zeros(state.mix.len()),
            rgb_warps: vec![WarpGrad::default(); state.rgb_warps.len()],
            event_warps: vec![WarpGrad::default(); state.event_warps.len()],
            offsets: vec![vec![WarpGrad::default(); state.blur.n_sub]; state.blur.n_views()],
            mlp: state.mlp.as_ref().map(|m| vec![0.0; m.params.len()]),
        }
    }
}

pub(crate) fn warps_to_vec<'a>(warps: impl IntoIterator<Item = &'a CameraWarp>) -> Vec<f64> {
    warps.into_iter().flat_map(|w| w.to_array()).collect()
}

fn warps_from_slice(dst: &mut [CameraWarp], v: &[f64]) {
    for (w, c) in dst.iter_mut().zip(v.chunks_exact(4)) {
        *w = CameraWarp::from_array([c[0], c[1], c[2], c[3]]);
    }
}

pub(crate) fn grads_to_vec<'a>(g: impl IntoIterator<Item = &'a WarpGrad>) -> Vec<f64> {
    g.into_iter().flat_map(|w| w.to_array()).collect()
}

/// Adam parameter-group names, in update order.
pub const GROUPS: [&str; 9] = [
    "means",
    "log_scales",
    "rotations",
    "opacity_logits",
    "color_logits",
    "rgb_warps",
    "event_warps",
    "blur_offsets",
    "mlp",
];

impl SceneState {
    pub fn canvas_extent(w: usize, h: usize) -> f64 {
        w.max(h) as f64
    }

    /// Fresh optimizer state with the schedule's learning rates.
    pub fn new_adam(&self, lr: &LearningRates, extent: f64) -> AdamState {
        let mut adam = AdamState::new();
        adam.add_group("means", self.mix.means.len(), lr.means * extent);
        adam.add_group("log_scales", self.mix.log_scales.len(), lr.log_scales);
        adam.add_group("rotations", self.mix.rotations.len(), lr.rotations);
        adam.add_group("opacity_logits", self.mix.opacity_logits.len(), lr.opacity);
        adam.add_group("color_logits", self.mix.color_logits.len(), lr.colors);
        let warp_scale = |n: usize| Some((0..n).flat_map(|_| [1.0, 1.0, extent, extent]).collect());
        let n_rgb = self.rgb_warps.len();
        adam.add_group("rgb_warps", 4 * n_rgb, lr.warps).lr_scale = warp_scale(n_rgb);
        let n_ev = self.event_warps.len();
        adam.add_group("event_warps", 4 * n_ev, lr.warps).lr_scale = warp_scale(n_ev);
        let n_off = self.blur.n_views() * self.blur.n_sub;
        adam.add_group("blur_offsets", 4 * n_off, lr.warps).lr_scale = warp_scale(n_off);
        adam.add_group("mlp", self.mlp.as_ref().map_or(0, |m| m.params.len()), lr.mlp);
        adam
    }

    /// One Adam update. Warp groups are skipped when `refine_poses` is off.
    pub fn apply(&mut self, adam: &mut AdamState, g: &SceneGrad, refine_poses: bool) -> Result<()> {
        let mut rgb = warps_to_vec(&self.rgb_warps);
        let mut ev = warps_to_vec(&self.event_warps);
        let mut off = warps_to_vec(self.blur.offsets.iter().flatten());
        let mut empty: Vec<f64> = Vec::new();
        let zero_rgb;
        let zero_ev;
        let (g_rgb, g_ev) = if refine_poses {
            (grads_to_vec(&g.rgb_warps), grads_to_vec(&g.event_warps))
        } else {
            zero_rgb = vec![0.0; rgb.len()];
            zero_ev = vec![0.0; ev.len()];
            (zero_rgb, zero_ev)
        };
        let g_off = grads_to_vec(g.offsets.iter().flatten());
        let no_mlp: Vec<f64> = Vec::new();
        let g_mlp = g.mlp.as_deref().unwrap_or(&no_mlp);
        let mlp_params = match self.mlp.as_mut() {
            Some(m) => &mut m.params,
            None => &mut empty,
        };
        if g_mlp.len() != mlp_params.len() {
            return Err(Error::dims("MLP gradient does not match the MLP parameters"));
        }
        let m = &mut self.mix;
        adam.step(
            &mut [
                &mut m.means,
                &mut m.log_scales,
                &mut m.rotations,
                &mut m.opacity_logits,
                &mut m.color_logits,
                &mut rgb,
                &mut ev,
                &mut off,
                mlp_params,
            ],
            &[
                &g.mix.means,
                &g.mix.log_scales,
                &g.mix.rotations,
                &g.mix.opacity_logits,
                &g.mix.color_logits,
                &g_rgb,
                &g_ev,
                &g_off,
                g_mlp,
            ],
        )?;
        warps_from_slice(&mut self.rgb_warps, &rgb);
        warps_from_slice(&mut self.event_warps, &ev);
        let n_sub = self.blur.n_sub;
        for (view, chunk) in self.blur.offsets.iter_mut().zip(off.chunks(4 * n_sub)) {
            warps_from_slice(view, chunk);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, seed: u64, stage: u8, iteration: usize, w: usize, h: usize) -> SceneCheckpoint {
        SceneCheckpoint {
            format_version: CHECKPOINT_VERSION,
            seed,
            stage,
            iteration,
            width: w,
            height: h,
            mixture: self.mix.clone(),
            rgb_warps: self.rgb_warps.clone(),
            event_warps: self.event_warps.clone(),
            blur: self.blur.clone(),
            mlp: self.mlp.clone(),
        }
    }

    pub fn from_checkpoint(c: SceneCheckpoint) -> Self {
        SceneState {
            mix: c.mixture,
            rgb_warps: c.rgb_warps,
            event_warps: c.event_warps,
            blur: c.blur,
            mlp: c.mlp,
        }
    }
}

/// Jittered grid covering every view's footprint. Colors average the blurred
/// observations seen through the initial warps; depth keys are random.
pub fn init_mixture(session: &CaptureSession, spacing: f64, seed: u64) -> Result<GaussianMix2D> {
    if !(spacing > 0.0) {
        return Err(Error::invalid("initial spacing must be > 0"));
    }
    let (w, h) = (session.width(), session.height());
    let c = canvas_center(w, h);
    let warps: Vec<CameraWarp> = session
        .rgb_views
        .iter()
        .map(|v| v.init_warp)
        .chain(session.event_views.iter().map(|v| v.init_warp))
        .collect();
    let (mut lo, mut hi) = ([0.0f64, 0.0], [w as f64, h as f64]);
    for wp in &warps {
        for corner in [[0.0, 0.0], [w as f64, 0.0], [0.0, h as f64], [w as f64, h as f64]] {
            let q = wp.apply(c, corner);
            for d in 0..2 {
                lo[d] = lo[d].min(q[d]);
                hi[d] = hi[d].max(q[d]);
            }
        }
    }
    let nx = ((hi[0] - lo[0]) / spacing).ceil() as usize;
    let ny = ((hi[1] - lo[1]) / spacing).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mix = GaussianMix2D::new();
    let mut px = [0.0; 3];
    for j in 0..ny {
        for i in 0..nx {
            let mean = [
                lo[0] + (i as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * spacing,
                lo[1] + (j as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * spacing,
            ];
            let (mut sum, mut n) = ([0.0; 3], 0usize);
            for v in &session.rgb_views {
                let p = v.init_warp.apply_inverse(c, mean);
                if p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= w as f64 && p[1] <= h as f64 {
                    v.image.sample_bilinear(p[0], p[1], &mut px);
                    for k in 0..3 {
                        sum[k] += px[k];
                    }
                    n += 1;
                }
            }
            let color = if n > 0 {
                sum.map(|s| (s / n as f64).clamp(0.02, 0.98))
            } else {
                [0.5; 3]
            };
            mix.push(Gaussian {
                mean,
                scale: [0.6 * spacing; 2],
                rotation: 0.0,
                opacity: 0.5,
                depth: rng.gen::<f64>(),
                color,
            });
        }
    }
    Ok(mix)
}

/// Sub-frame offsets spanning each exposure, from a per-view velocity
/// estimated out of neighboring initial warps (the steeper one-sided
/// difference, so views next to a direction reversal keep full speed).
pub fn init_offsets(session: &CaptureSession, warps: &[CameraWarp], n_sub: usize) -> Vec<Vec<CameraWarp>> {
    let views = &session.rgb_views;
    let n = views.len();
    let t = |i: usize| views[i].mid_time() as f64;
    (0..n)
        .map(|i| {
            let diff = |a: usize, b: usize| -> [f64; 4] {
                let (pa, pb) = (warps[a].to_array(), warps[b].to_array());
                std::array::from_fn(|d| (pb[d] - pa[d]) / (t(b) - t(a)))
            };
            let speed = |v: &[f64; 4]| v[2].hypot(v[3]);
            let candidates: Vec<[f64; 4]> = [(i > 0).then(|| diff(i - 1, i)), (i + 1 < n).then(|| diff(i, i + 1))]
                .into_iter()
                .flatten()
                .collect();
            let vel = candidates
                .into_iter()
                .max_by(|a, b| speed(a).total_cmp(&speed(b)))
                .unwrap_or([0.0; 4]);
            let duration = (views[i].window[1] - views[i].window[0]) as f64;
            let base = warps[i];
            let inv = base.inverse();
            (0..n_sub)
                .map(|k| {
                    let tau = ((k as f64 + 0.5) / n_sub as f64 - 0.5) * duration;
                    let p = base.to_array();
                    let target = CameraWarp::from_array(std::array::from_fn(|d| p[d] + tau * vel[d]));
                    inv.compose(&target)
                })
                .collect()
        })
        .collect()
}

/// Fixed per-view code fed to the deformation network: the exposure window
/// normalized to `[-1, 1]` over the capture.
pub fn view_codes(session: &CaptureSession) -> Vec<[f64; 2]> {
    let traj = &session.config.trajectory;
    let (a, b) = (traj.start() as f64, traj.end() as f64);
    let span = (b - a).max(1.0);
    session
        .rgb_views
        .iter()
        .map(|v| {
            let f = |t: u64| 2.0 * (t as f64 - a) / span - 1.0;
            [f(v.window[0]), f(v.window[1])]
        })
        .collect()
}

/// Initial state for a stage: grid mixture, the session's initial warps,
/// offsets from neighbor velocities and a fresh network.
pub fn initial_state(session: &CaptureSession, schedule: &TrainSchedule) -> Result<SceneState> {
    schedule.validate()?;
    if session.rgb_views.is_empty() {
        return Err(Error::invalid("training needs at least one blurred view"));
    }
    let (w, h) = (session.width(), session.height());
    let mix = init_mixture(session, schedule.init_spacing, schedule.rng_seed)?;
    let rgb_warps: Vec<CameraWarp> = session.rgb_views.iter().map(|v| v.init_warp).collect();
    let event_warps = session.event_views.iter().map(|v| v.init_warp).collect();
    let mut blur = BlurModel::new(rgb_warps.len(), schedule.n_sub, schedule.use_mlp)?;
    blur.offsets = init_offsets(session, &rgb_warps, schedule.n_sub);
    let mlp = if schedule.use_mlp {
        let m = schedule.mlp;
        Some(DeformMLP::new(
            schedule.n_sub,
            m.width,
            m.hidden_layers,
            m.l_pos,
            m.l_dir,
            [w as f64, h as f64],
            schedule.rng_seed,
        )?)
    } else {
        None
    };
    Ok(SceneState { mix, rgb_warps, event_warps, blur, mlp })
}
