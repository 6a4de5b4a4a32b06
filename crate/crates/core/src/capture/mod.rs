//! Ground-truth scene synthesis and the asynchronous dual-sensor capture
//! simulator: exposure-integrated blurred RGB frames, an event stream along
//! the same camera path, event-derived grayscale views and sharp test views.

mod scene;
mod session;
mod trajectory;

pub use scene::{synth_scene, SceneGenerator, SceneSpec};
pub use session::{
    read_session, write_session, CaptureSession, EventView, RgbView, SessionConfig, TestView,
};
pub use trajectory::{Knot, MotionSpec, TestPlacement, TrajectorySpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventsim::{
    brightness_balance, log_image, reconstruct_intensity, EventNoise, EventSimulator, EventStream,
    LogFrame, LOG_FLOOR,
};
use crate::imaging::{bilateral_denoise, to_luma, Image, KernelSpec};
use crate::par;
use crate::splat::{canvas_center, CameraWarp};

/// Default number of temporal samples per exposure.
pub const INTEGRATION_SAMPLES: usize = 257;

/// Resamples `img` as seen through `warp`: output pixel `p` reads the scene
/// at `warp.apply(p)`, bilinear with edge replication.
pub fn warp_image(img: &Image, warp: &CameraWarp) -> Image {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let c = canvas_center(w, h);
    // affine coefficients of warp.apply, hoisted out of the pixel loop
    let o = warp.apply(c, [0.0, 0.0]);
    let ex = warp.apply(c, [1.0, 0.0]);
    let ey = warp.apply(c, [0.0, 1.0]);
    let (ax, ay) = ([ex[0] - o[0], ex[1] - o[1]], [ey[0] - o[0], ey[1] - o[1]]);
    let mut out = Image::new(w, h, ch);
    par::for_each_chunk_mut(out.data_mut(), w * ch, |y, row| {
        let py = y as f64 + 0.5;
        for x in 0..w {
            let px = x as f64 + 0.5;
            let qx = o[0] + ax[0] * px + ay[0] * py;
            let qy = o[1] + ax[1] * px + ay[1] * py;
            img.sample_bilinear(qx, qy, &mut row[x * ch..(x + 1) * ch]);
        }
    });
    out
}

/// Midpoint sample instants of a window; odd `k` includes its center.
fn sample_times(window: [u64; 2], k: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (window[0] as f64, window[1] as f64);
    (0..k).map(move |j| a + (j as f64 + 0.5) / k as f64 * (b - a))
}

/// Blurred frame of one exposure window: the mean of `k` warped copies.
pub fn integrate_exposure(
    gt: &Image,
    traj: &TrajectorySpec,
    window: [u64; 2],
    k: usize,
) -> Result<Image> {
    if k == 0 {
        return Err(Error::invalid("integration needs at least one sample"));
    }
    if window[0] > window[1] || window[0] < traj.start() || window[1] > traj.end() {
        return Err(Error::Capture(format!(
            "exposure window {window:?} outside the trajectory"
        )));
    }
    let mut acc = Image::new(gt.width(), gt.height(), gt.channels());
    for t in sample_times(window, k) {
        acc.add_scaled(&warp_image(gt, &traj.warp_at(t)), 1.0 / k as f64);
    }
    Ok(acc)
}

/// One blurred frame per exposure window, `k` samples each.
pub fn capture_blurred_with(gt: &Image, traj: &TrajectorySpec, k: usize) -> Result<Vec<Image>> {
    traj.validate()?;
    par::map_range(traj.exposures.len(), |i| {
        integrate_exposure(gt, traj, traj.exposures[i], k)
    })
    .into_iter()
    .collect()
}

pub fn capture_blurred(gt: &Image, traj: &TrajectorySpec) -> Result<Vec<Image>> {
    capture_blurred_with(gt, traj, INTEGRATION_SAMPLES)
}

/// Instants at which the scene signal is fed to the event simulator.
fn event_sample_times(traj: &TrajectorySpec) -> Vec<u64> {
    let (a, b) = (traj.start(), traj.end());
    let dt = 1e6 / traj.event_rate_hz;
    let n = ((b - a) as f64 / dt).ceil().max(1.0) as u64;
    let mut times: Vec<u64> = (0..=n)
        .map(|j| a + ((j as f64 * dt).round() as u64).min(b - a))
        .collect();
    times.dedup();
    times
}

/// Events of the grayscale scene signal along the trajectory. Fails when
/// the sampling rate leaves fewer than eight samples per threshold step.
pub fn capture_events_with(
    gt: &Image,
    traj: &TrajectorySpec,
    theta: f64,
    noise: EventNoise,
) -> Result<EventStream> {
    traj.validate()?;
    let luma = if gt.channels() == 1 {
        gt.clone()
    } else {
        to_luma(gt)
    };
    let times = event_sample_times(traj);
    let frame = |t: u64| LogFrame {
        image: log_image(&warp_image(&luma, &traj.warp_at(t as f64)), LOG_FLOOR),
        t_us: t,
        floor: LOG_FLOOR,
    };
    let mut sim = EventSimulator::new(&frame(times[0]), theta, noise)?.with_max_step(theta / 8.0);
    for &t in &times[1..] {
        sim.push(&frame(t))?;
    }
    sim.finish()
}

pub fn capture_events(gt: &Image, traj: &TrajectorySpec, theta: f64) -> Result<EventStream> {
    capture_events_with(gt, traj, theta, EventNoise::default())
}

/// Independent Gaussian perturbation of initial view warps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseNoise {
    pub rotation_deg: f64,
    pub log_zoom: f64,
    pub translation_px: f64,
    pub seed: u64,
}

impl Default for PoseNoise {
    fn default() -> Self {
        PoseNoise {
            rotation_deg: 1.0,
            log_zoom: 0.01,
            translation_px: 1.0,
            seed: 0,
        }
    }
}

impl PoseNoise {
    pub const NONE: PoseNoise = PoseNoise {
        rotation_deg: 0.0,
        log_zoom: 0.0,
        translation_px: 0.0,
        seed: 0,
    };

    pub fn validate(&self) -> Result<()> {
        let s = [self.rotation_deg, self.log_zoom, self.translation_px];
        if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "pose noise sigmas must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Perturbs each warp in order with one seeded stream.
    pub fn perturb(&self, warps: &[CameraWarp], stream: u64) -> Result<Vec<CameraWarp>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let normal =
            |s: f64| Normal::new(0.0, s).map_err(|e| Error::Config(format!("pose noise: {e}")));
        let (nr, nz, nt) = (
            normal(self.rotation_deg.to_radians())?,
            normal(self.log_zoom)?,
            normal(self.translation_px)?,
        );
        Ok(warps
            .iter()
            .map(|w| CameraWarp {
                rotation: w.rotation + nr.sample(&mut rng),
                log_zoom: w.log_zoom + nz.sample(&mut rng),
                translation: [
                    w.translation[0] + nt.sample(&mut rng),
                    w.translation[1] + nt.sample(&mut rng),
                ],
            })
            .collect())
    }
}

/// Knobs of the capture simulator beyond the scene and the camera path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureOptions {
    pub integration_samples: usize,
    pub event_noise: EventNoise,
    /// Denoiser applied to every event-derived view.
    pub bilateral: KernelSpec,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        CaptureOptions {
            integration_samples: INTEGRATION_SAMPLES,
            event_noise: EventNoise::default(),
            bilateral: KernelSpec::bilateral(1.5, 0.1, 3),
        }
    }
}

pub fn build_session(
    scene: &SceneSpec,
    traj: &TrajectorySpec,
    noise: &PoseNoise,
    theta: f64,
) -> Result<CaptureSession> {
    build_session_with(scene, traj, noise, theta, &CaptureOptions::default())
}

pub fn build_session_with(
    scene: &SceneSpec,
    traj: &TrajectorySpec,
    noise: &PoseNoise,
    theta: f64,
    opts: &CaptureOptions,
) -> Result<CaptureSession> {
    let gt = synth_scene(scene)?.quantize_u16();
    let config = SessionConfig {
        scene: Some(scene.clone()),
        trajectory: traj.clone(),
        pose_noise: *noise,
        theta,
        options: *opts,
    };
    capture_session(gt, config)
}

/// Runs the capture for an existing ground-truth image.
pub fn capture_session(gt: Image, config: SessionConfig) -> Result<CaptureSession> {
    let traj = &config.trajectory;
    traj.validate()?;
    config.pose_noise.validate()?;
    if gt.channels() != 3 {
        return Err(Error::Capture("ground truth must be RGB".into()));
    }
    let gt = gt.quantize_u16();
    let blurred = capture_blurred_with(&gt, traj, config.options.integration_samples)?;
    let events = capture_events_with(&gt, traj, config.theta, config.options.event_noise)?;

    // the sharp view at the trajectory start anchors the double integral
    let luma = to_luma(&gt);
    let anchor_t = traj.start();
    let anchor = LogFrame::from_intensity(
        &warp_image(&luma, &traj.warp_at(anchor_t as f64)),
        anchor_t,
        LOG_FLOOR,
    )?;
    let recon = par::map_range(traj.event_view_times.len(), |i| {
        reconstruct_intensity(&events, &anchor, traj.event_view_times[i])
            .and_then(|img| bilateral_denoise(&img, &config.options.bilateral))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let balanced = brightness_balance(&recon)?;

    let rgb_true: Vec<CameraWarp> = traj
        .exposures
        .iter()
        .map(|e| traj.warp_at(0.5 * (e[0] as f64 + e[1] as f64)))
        .collect();
    let ev_true: Vec<CameraWarp> = traj
        .event_view_times
        .iter()
        .map(|&t| traj.warp_at(t as f64))
        .collect();
    let rgb_init = config.pose_noise.perturb(&rgb_true, 1)?;
    let ev_init = config.pose_noise.perturb(&ev_true, 2)?;

    let rgb_views = blurred
        .into_iter()
        .enumerate()
        .map(|(i, img)| RgbView {
            image: img.quantize_u16(),
            window: traj.exposures[i],
            init_warp: rgb_init[i],
            true_warp: rgb_true[i],
        })
        .collect();
    let event_views = balanced
        .into_iter()
        .enumerate()
        .map(|(i, img)| EventView {
            image: img.quantize_u16(),
            t_us: traj.event_view_times[i],
            init_warp: ev_init[i],
            true_warp: ev_true[i],
        })
        .collect();
    let test_views = traj
        .test_times
        .iter()
        .map(|&t| {
            let warp = traj.test_warp_at(t as f64);
            TestView {
                image: warp_image(&gt, &warp).quantize_u16(),
                t_us: t,
                warp,
            }
        })
        .collect();
    Ok(CaptureSession {
        gt,
        rgb_views,
        events,
        event_views,
        test_views,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventsim::accumulate;
    use crate::imaging::convolve;

    fn linear_path(from: [f64; 2], to: [f64; 2], end: u64) -> TrajectorySpec {
        TrajectorySpec {
            knots: vec![
                Knot {
                    t_us: 0,
                    warp: CameraWarp::translation(from[0], from[1]),
                },
                Knot {
                    t_us: end,
                    warp: CameraWarp::translation(to[0], to[1]),
                },
            ],
            exposures: vec![[0, end]],
            event_rate_hz: 100_000.0,
            event_view_times: vec![],
            test_times: vec![],
            test_placement: TestPlacement::Interleaved,
        }
    }

    /// Rows repeat one smooth random profile.
    fn profile_image(w: usize, h: usize) -> (Vec<f64>, Image) {
        let f: Vec<f64> = (0..w)
            .map(|x| 0.5 + 0.3 * (0.3 * x as f64).sin() + 0.15 * (0.71 * x as f64).cos())
            .collect();
        let img = Image::from_fn(w, h, |x, _| f[x]);
        (f, img)
    }

    #[test]
    fn zero_motion_window_is_warped_sharp_frame() {
        let (_, img) = profile_image(32, 8);
        let mut traj = linear_path([2.0, 0.0], [2.0, 0.0], 1000);
        traj.exposures = vec![[100, 900]];
        let blurred = capture_blurred(&img, &traj).unwrap();
        let sharp = warp_image(&img, &CameraWarp::translation(2.0, 0.0));
        let err = blurred[0]
            .data()
            .iter()
            .zip(sharp.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn translation_blur_matches_box_oracle() {
        let (f, img) = profile_image(48, 4);
        let traj = linear_path([-4.0, 0.0], [4.0, 0.0], 8000);
        let blurred = &capture_blurred(&img, &traj).unwrap()[0];
        // exact integral of the linear interpolant over an 8 px box
        for x in 6..40 {
            let box_mean =
                (0.5 * f[x - 4] + (x - 3..=x + 3).map(|i| f[i]).sum::<f64>() + 0.5 * f[x + 4])
                    / 8.0;
            assert!((blurred.get(x, 2, 0) - box_mean).abs() < 1e-2, "x={x}");
        }
    }

    #[test]
    fn doubling_samples_converges() {
        let spec = MotionSpec::default().build().unwrap();
        let scene = SceneSpec {
            width: 64,
            height: 64,
            generator: SceneGenerator::GaussianField {
                count: 30,
                scale_range: [1.5, 5.0],
                palette: vec![],
                margin: 8.0,
            },
            seed: 3,
        };
        let gt = synth_scene(&scene).unwrap();
        for &window in &spec.exposures[..3] {
            let a = integrate_exposure(&gt, &spec, window, 257).unwrap();
            let b = integrate_exposure(&gt, &spec, window, 513).unwrap();
            let worst = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-3, "worst {worst}");
        }
    }

    #[test]
    fn blurred_has_less_gradient_energy() {
        let spec = MotionSpec::default().build().unwrap();
        let scene = SceneSpec {
            width: 64,
            height: 64,
            generator: SceneGenerator::GaussianField {
                count: 30,
                scale_range: [1.5, 5.0],
                palette: vec![],
                margin: 8.0,
            },
            seed: 4,
        };
        let gt = to_luma(&synth_scene(&scene).unwrap());
        let energy = |img: &Image| {
            let gx = convolve(img, &KernelSpec::sobel_x()).unwrap();
            let gy = convolve(img, &KernelSpec::sobel_y()).unwrap();
            gx.data()
                .iter()
                .zip(gy.data())
                .map(|(a, b)| a.hypot(*b))
                .sum::<f64>()
        };
        for &window in &spec.exposures[..4] {
            let blurred = integrate_exposure(&gt, &spec, window, 129).unwrap();
            let mid = warp_image(&gt, &spec.warp_at(0.5 * (window[0] + window[1]) as f64));
            assert!(energy(&mid) > energy(&blurred));
        }
    }

    #[test]
    fn window_outside_trajectory_is_rejected() {
        let (_, img) = profile_image(16, 4);
        let mut traj = linear_path([0.0, 0.0], [1.0, 0.0], 1000);
        traj.exposures = vec![[500, 1500]];
        assert!(matches!(
            capture_blurred(&img, &traj),
            Err(Error::Capture(_))
        ));
    }

    #[test]
    fn static_trajectory_emits_nothing() {
        let (_, img) = profile_image(16, 8);
        let traj = linear_path([1.0, 0.0], [1.0, 0.0], 5000);
        assert!(capture_events(&img, &traj, 0.2).unwrap().is_empty());
    }

    /// Log-linear ramp: every interior pixel sees the same log change.
    fn log_ramp(w: usize, h: usize, slope: f64) -> Image {
        Image::from_fn(w, h, |x, _| (-4.0 + slope * x as f64).exp())
    }

    fn count_oracle_holds(theta: f64) -> Image {
        let slope = 0.06;
        let shift = 12.0;
        let img = log_ramp(64, 6, slope);
        let traj = linear_path([0.0, 0.0], [shift, 0.0], 20_000);
        let stream = capture_events(&img, &traj, theta).unwrap();
        let acc = accumulate(&stream, 0, 20_000);
        let theta32 = theta as f32 as f64;
        let expected = (slope * shift / theta32).floor();
        for y in 0..6 {
            for x in 2..48 {
                let n = acc.get(x, y, 0);
                assert!(
                    (n - expected).abs() <= 1.0,
                    "pixel ({x},{y}) count {n} vs {expected}"
                );
            }
        }
        acc
    }

    #[test]
    fn ramp_counts_match_quantization() {
        let a = count_oracle_holds(0.1);
        let b = count_oracle_holds(0.2);
        for x in 2..48 {
            let (na, nb) = (a.get(x, 3, 0), b.get(x, 3, 0));
            assert!((na / 2.0 - nb).abs() <= 1.0, "x={x}: {na} vs {nb}");
        }
    }

    #[test]
    fn coarse_sampling_is_rejected() {
        let img = log_ramp(64, 4, 0.06);
        let mut traj = linear_path([0.0, 0.0], [30.0, 0.0], 20_000);
        traj.event_rate_hz = 200.0;
        assert!(matches!(
            capture_events(&img, &traj, 0.2),
            Err(Error::Capture(_))
        ));
    }

    #[test]
    fn zero_pose_noise_keeps_true_warps() {
        let w = vec![CameraWarp::new(0.1, 0.02, [1.0, -2.0]); 3];
        assert_eq!(PoseNoise::NONE.perturb(&w, 1).unwrap(), w);
        let noisy = PoseNoise {
            seed: 5,
            ..PoseNoise::default()
        }
        .perturb(&w, 1)
        .unwrap();
        assert_ne!(noisy, w);
        assert_eq!(
            noisy,
            PoseNoise {
                seed: 5,
                ..PoseNoise::default()
            }
            .perturb(&w, 1)
            .unwrap()
        );
    }
}
