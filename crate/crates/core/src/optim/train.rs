use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::objective::{Objective, ObjectiveConfig, Sample};
use super::state::{initial_state, SceneState, TrainSchedule};
use crate::capture::CaptureSession;
use crate::error::{Error, Result};
use crate::losses::LossReport;

/// Callbacks fired by the training loop. Both default to no-ops.
pub trait TrainObserver {
    fn on_log(&mut self, _report: &LossReport) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_interval` iterations and once at the end of
    /// the stage, never in the middle of a step.
    fn on_checkpoint(&mut self, _stage: u8, _iter: usize, _state: &SceneState, _adam: &AdamState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects every logged report in memory.
#[derive(Default)]
pub struct TraceRecorder {
    pub reports: Vec<LossReport>,
}

impl TrainObserver for TraceRecorder {
    fn on_log(&mut self, report: &LossReport) -> Result<()> {
        self.reports.push(*report);
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub state: SceneState,
    pub adam: AdamState,
    /// Total loss of every iteration, for smoothing and divergence analysis.
    pub totals: Vec<f64>,
}

fn run_stage(
    objective: &Objective<'_>,
    mut state: SceneState,
    schedule: &TrainSchedule,
    iters: usize,
    refine_poses: bool,
    observer: &mut dyn TrainObserver,
) -> Result<StageResult> {
    let stage = objective.stage;
    let session = objective.session;
    let extent = SceneState::canvas_extent(session.width(), session.height());
    let mut adam = state.new_adam(&schedule.lr, extent);
    let base_means_lr = schedule.lr.means * extent;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.rng_seed);
    rng.set_stream(u64::from(stage));
    let mut totals = Vec::with_capacity(iters);
    let mut initial = None;
    for it in 0..iters {
        let sample = Sample {
            rgb_view: rng.gen_range(0..objective.n_rgb()),
            event_pair: match objective.pairs().len() {
                0 => 0,
                n => rng.gen_range(0..n),
            },
        };
        let (mut report, grad) = objective.evaluate(&state, sample, true)?;
        report.iter = it;
        let total = report.total;
        let first = *initial.get_or_insert(total);
        if !total.is_finite() {
            return Err(Error::Divergence { stage, iter: it, reason: format!("loss is {total}") });
        }
        if total > 10.0 * first {
            return Err(Error::Divergence {
                stage,
                iter: it,
                reason: format!("loss {total:.6} exceeds 10x the initial {first:.6}"),
            });
        }
        totals.push(total);
        if it % schedule.log_interval == 0 || it + 1 == iters {
            observer.on_log(&report)?;
        }
        let frac = it as f64 / iters.max(1) as f64;
        adam.set_lr("means", base_means_lr * schedule.lr.mean_decay.powf(frac))?;
        let grad = grad.expect("gradient requested");
        state.apply(&mut adam, &grad, refine_poses)?;
        let done = it + 1;
        if schedule.checkpoint_interval > 0 && done % schedule.checkpoint_interval == 0 && done < iters {
            observer.on_checkpoint(stage, done, &state, &adam)?;
        }
    }
    observer.on_checkpoint(stage, iters, &state, &adam)?;
    Ok(StageResult { state, adam, totals })
}

/// Blur-only fit of a fresh mixture to the blurred RGB views.
pub fn train_stage1(
    session: &CaptureSession,
    schedule: &TrainSchedule,
    config: &ObjectiveConfig,
    observer: &mut dyn TrainObserver,
) -> Result<StageResult> {
    let state = initial_state(session, schedule)?;
    let objective = Objective::new(session, *config, 1, None)?;
    run_stage(&objective, state, schedule, schedule.stage1_iters, schedule.pose_refine, observer)
}

/// Full objective on a re-initialized mixture. The Stage-1 mixture is kept
/// frozen as the event-view color reference and the refined RGB warps carry
/// over. Blur offsets and the deformation network restart with the mixture:
/// offsets fitted to the Stage-1 mixture mislead the fresh one.
pub fn train_stage2(
    session: &CaptureSession,
    stage1: &SceneState,
    schedule: &TrainSchedule,
    config: &ObjectiveConfig,
    observer: &mut dyn TrainObserver,
) -> Result<StageResult> {
    let fresh = initial_state(session, schedule)?;
    let state = SceneState {
        mix: fresh.mix,
        rgb_warps: stage1.rgb_warps.clone(),
        event_warps: fresh.event_warps,
        blur: fresh.blur,
        mlp: fresh.mlp,
    };
    let objective = Objective::new(session, *config, 2, Some(stage1.mix.clone()))?;
    run_stage(&objective, state, schedule, schedule.stage2_iters, schedule.pose_refine, observer)
}

/// Moving average of `values` over `window` samples, one value per full window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut sum: f64 = values[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out.push(sum / window as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{build_session, MotionSpec, PoseNoise, SceneGenerator, SceneSpec};
    use crate::splat::render;

    fn tiny_session(blur_span: f64, noise: PoseNoise) -> CaptureSession {
        let motion = MotionSpec {
            n_blurred: 3,
            n_event_views: 4,
            n_test: 2,
            blur_span_px: blur_span,
            sweep_frames: 2,
            vertical_amplitude_px: if blur_span == 0.0 { 0.0 } else { 1.0 },
            roll_amplitude_deg: if blur_span == 0.0 { 0.0 } else { 0.5 },
            ..MotionSpec::default()
        };
        let scene = SceneSpec {
            width: 32,
            height: 24,
            generator: SceneGenerator::GaussianField {
                count: 8,
                scale_range: [2.0, 5.0],
                palette: vec![],
                margin: 4.0,
            },
            seed: 5,
        };
        build_session(&scene, &motion.build().unwrap(), &noise, 0.2).unwrap()
    }

    fn quick(stage1: usize, stage2: usize) -> TrainSchedule {
        TrainSchedule {
            stage1_iters: stage1,
            stage2_iters: stage2,
            mlp: super::super::state::MlpSettings { width: 16, hidden_layers: 2, ..Default::default() },
            init_spacing: 3.0,
            log_interval: 1,
            ..TrainSchedule::default()
        }
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let s = tiny_session(4.0, PoseNoise::default());
        let sched = quick(0, 0);
        let init = initial_state(&s, &sched).unwrap();
        let out = train_stage1(&s, &sched, &ObjectiveConfig::default(), &mut ()).unwrap();
        assert_eq!(out.state, init);
        assert_eq!(out.adam.step, 0);
        assert!(out.totals.is_empty());
    }

    #[test]
    fn stage1_is_deterministic_and_descends() {
        let s = tiny_session(4.0, PoseNoise::default());
        let sched = quick(60, 0);
        let cfg = ObjectiveConfig::default();
        let a = train_stage1(&s, &sched, &cfg, &mut ()).unwrap();
        let b = train_stage1(&s, &sched, &cfg, &mut ()).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.totals, b.totals);
        let avg = moving_average(&a.totals, 10);
        assert!(avg.last().unwrap() < avg.first().unwrap());
    }

    #[test]
    fn stage2_leaves_reference_untouched() {
        let s = tiny_session(4.0, PoseNoise::default());
        let sched = quick(10, 10);
        let cfg = ObjectiveConfig::default();
        let st1 = train_stage1(&s, &sched, &cfg, &mut ()).unwrap();
        let frozen = st1.state.mix.clone();
        let mut trace = TraceRecorder::default();
        let st2 = train_stage2(&s, &st1.state, &sched, &cfg, &mut trace).unwrap();
        assert_eq!(st1.state.mix, frozen);
        assert_ne!(st2.state.mix, frozen);
        assert_eq!(trace.reports.len(), 10);
        assert!(trace.reports.iter().all(|r| r.stage == 2 && r.evs.is_some() && r.reg_e.is_some()));
    }

    #[test]
    fn stage1_report_has_blur_only() {
        let s = tiny_session(4.0, PoseNoise::default());
        let mut trace = TraceRecorder::default();
        train_stage1(&s, &quick(3, 0), &ObjectiveConfig::default(), &mut trace).unwrap();
        for r in &trace.reports {
            assert!(r.blur.is_some());
            assert!(r.structure.is_none() && r.evs.is_none() && r.reg_r.is_none() && r.reg_e.is_none());
        }
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let s = tiny_session(4.0, PoseNoise::default());
        let mut sched = quick(40, 0);
        sched.lr.colors = 1e6;
        sched.lr.means = 10.0;
        sched.lr.opacity = 1e6;
        sched.lr.log_scales = 50.0;
        match train_stage1(&s, &sched, &ObjectiveConfig::default(), &mut ()) {
            Err(Error::Divergence { stage: 1, iter, .. }) => assert!(iter > 0),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.totals)),
        }
    }

    #[test]
    fn frozen_poses_without_refinement() {
        let s = tiny_session(4.0, PoseNoise::default());
        let mut sched = quick(5, 5);
        sched.pose_refine = false;
        let cfg = ObjectiveConfig::default();
        let st1 = train_stage1(&s, &sched, &cfg, &mut ()).unwrap();
        let st2 = train_stage2(&s, &st1.state, &sched, &cfg, &mut ()).unwrap();
        for (w, v) in st2.state.rgb_warps.iter().zip(&s.rgb_views) {
            assert_eq!(*w, v.init_warp);
        }
        for (w, v) in st2.state.event_warps.iter().zip(&s.event_views) {
            assert_eq!(*w, v.init_warp);
        }
    }

    #[test]
    fn static_scene_refits() {
        let s = tiny_session(0.0, PoseNoise::NONE);
        let mut sched = quick(300, 0);
        sched.use_mlp = false;
        let out = train_stage1(&s, &sched, &ObjectiveConfig::default(), &mut ()).unwrap();
        let r = render(&out.state.mix, &out.state.rgb_warps[0], s.width(), s.height());
        let p = crate::imaging::psnr(&r, &s.rgb_views[0].image, 99.0).unwrap();
        assert!(p > 30.0, "psnr {p}");
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}
