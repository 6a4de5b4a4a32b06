use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::metrics::{align_warp, blurred_baseline, score, strip, EvalReport, MetricReport, ViewMetric};
use crate::capture::{build_session_with, CaptureSession};
use crate::error::{Error, Result};
use crate::imaging::{pnm, Image};
use crate::losses::LossReport;
use crate::optim::{train_stage1, train_stage2, AdamState, SceneState, TrainObserver};
use crate::splat::{render_with, CameraWarp, RenderOptions};
use crate::structure::weight_mask;

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds the capture session a config describes, with pose noise drawn
/// from the run seed.
pub fn make_session(cfg: &RunConfig) -> Result<CaptureSession> {
    let (noise, _) = cfg.seeded();
    build_session_with(&cfg.scene, &cfg.motion.build()?, &noise, cfg.theta, &cfg.capture)
}

/// Test-view renders of a trained state, each registered to its view first.
pub fn render_test_views(
    session: &CaptureSession,
    state: &SceneState,
    align_iters: usize,
    opts: &RenderOptions,
) -> Result<(Vec<Image>, Vec<CameraWarp>)> {
    let (w, h) = (session.width(), session.height());
    let mut renders = Vec::with_capacity(session.test_views.len());
    let mut warps = Vec::with_capacity(session.test_views.len());
    for t in &session.test_views {
        let warp = align_warp(&state.mix, &t.warp, &t.image, align_iters, opts)?;
        renders.push(render_with(&state.mix, &warp, w, h, opts));
        warps.push(warp);
    }
    Ok((renders, warps))
}

/// Per-view scores of `images` against the session's test views.
pub fn score_views(session: &CaptureSession, images: &[Image], cap: f64) -> Result<Vec<ViewMetric>> {
    if images.len() != session.test_views.len() {
        return Err(Error::dims(format!(
            "{} images for {} test views",
            images.len(),
            session.test_views.len()
        )));
    }
    images
        .iter()
        .zip(&session.test_views)
        .enumerate()
        .map(|(i, (img, t))| {
            let (psnr, ssim) = score(img, &t.image, cap)?;
            Ok(ViewMetric { view: i, t_us: t.t_us, psnr, ssim })
        })
        .collect()
}

pub fn baseline_images(session: &CaptureSession) -> Result<Vec<Image>> {
    (0..session.test_views.len()).map(|i| blurred_baseline(session, i)).collect()
}

/// Writes the loss trace and checkpoints of a run as training proceeds.
struct RunWriter {
    trace: BufWriter<File>,
    trace_path: PathBuf,
    checkpoints: PathBuf,
    seed: u64,
    size: (usize, usize),
}

impl RunWriter {
    fn save(&self, dir: &Path, stem: &str, stage: u8, iter: usize, state: &SceneState, adam: &AdamState) -> Result<()> {
        let ckpt = state.to_checkpoint(self.seed, stage, iter, self.size.0, self.size.1);
        ckpt.save(&dir.join(format!("{stem}.json")))?;
        write_text(&dir.join(format!("{stem}.adam.json")), &adam.to_json()?)
    }
}

impl TrainObserver for RunWriter {
    fn on_log(&mut self, report: &LossReport) -> Result<()> {
        writeln!(self.trace, "{}", report.to_json_line()).map_err(|e| Error::io(&self.trace_path, e))
    }

    fn on_checkpoint(&mut self, stage: u8, iter: usize, state: &SceneState, adam: &AdamState) -> Result<()> {
        self.save(&self.checkpoints, &format!("stage{stage}_{iter:06}"), stage, iter, state, adam)
    }
}

/// Final states and test renders of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub stage1: SceneState,
    pub stage2: SceneState,
    /// Aligned test-view renders, indexed by stage minus one.
    pub renders: [Vec<Image>; 2],
}

/// Trains both stages and writes the run directory:
///
/// ```text
/// config.json                 resolved configuration
/// trace.jsonl                 one loss report per logged iteration
/// stage{1,2}.json             final checkpoints (+ .adam.json optimizer state)
/// checkpoints/                periodic checkpoints
/// renders/stage{1,2}/NNNN.ppm aligned test-view renders (+ warps.json)
/// masks/NNNN.pgm              event-view confidence masks
/// ```
pub fn reconstruct(session: &CaptureSession, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    let checkpoints = run_dir.join("checkpoints");
    mkdir(&checkpoints)?;
    write_text(&run_dir.join("config.json"), &cfg.to_json()?)?;
    for (i, v) in session.event_views.iter().enumerate() {
        let masks = run_dir.join("masks");
        mkdir(&masks)?;
        pnm::write(masks.join(format!("{i:04}.pgm")), &weight_mask(&v.image, &cfg.objective.mask)?)?;
    }

    let (obj, schedule) = cfg.effective();
    let trace_path = run_dir.join("trace.jsonl");
    let file = File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let mut writer = RunWriter {
        trace: BufWriter::new(file),
        trace_path,
        checkpoints,
        seed: cfg.seed,
        size: (session.width(), session.height()),
    };
    let s1 = train_stage1(session, &schedule, &obj, &mut writer)?;
    writer.save(&run_dir, "stage1", 1, schedule.stage1_iters, &s1.state, &s1.adam)?;
    let s2 = train_stage2(session, &s1.state, &schedule, &obj, &mut writer)?;
    writer.save(&run_dir, "stage2", 2, schedule.stage2_iters, &s2.state, &s2.adam)?;
    writer.trace.flush().map_err(|e| Error::io(&writer.trace_path, e))?;

    let opts = obj.render_options();
    let mut renders: [Vec<Image>; 2] = Default::default();
    for (k, state) in [&s1.state, &s2.state].into_iter().enumerate() {
        let dir = run_dir.join("renders").join(format!("stage{}", k + 1));
        mkdir(&dir)?;
        let (imgs, warps) = render_test_views(session, state, cfg.eval.align_iters, &opts)?;
        for (i, img) in imgs.iter().enumerate() {
            pnm::write(dir.join(format!("{i:04}.ppm")), img)?;
        }
        write_text(&dir.join("warps.json"), &serde_json::to_string_pretty(&warps)?)?;
        renders[k] = imgs;
    }
    Ok(RunOutput { run_dir, stage1: s1.state, stage2: s2.state, renders })
}

fn read_renders(dir: &Path, n: usize) -> Result<Vec<Image>> {
    (0..n).map(|i| pnm::read(dir.join(format!("{i:04}.ppm")))).collect()
}

/// Scores the stored test renders of a run against the session, writes
/// `metrics.json` and `strips/` (blurred input | render | ground truth).
pub fn evaluate_run(run_dir: &Path, session: &CaptureSession) -> Result<EvalReport> {
    let cfg = RunConfig::load(run_dir.join("config.json"))?;
    let hash = cfg.hash();
    let run = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let n = session.test_views.len();
    let cap = cfg.eval.psnr_cap;
    let blurred = baseline_images(session)?;
    let mut reports = vec![MetricReport::new(&run, "blurred_input", None, &hash, score_views(session, &blurred, cap)?)];
    let strips = run_dir.join("strips");
    mkdir(&strips)?;
    for stage in [1u8, 2] {
        let renders = read_renders(&run_dir.join("renders").join(format!("stage{stage}")), n)?;
        for (i, r) in renders.iter().enumerate() {
            let s = strip(&[&blurred[i], r, &session.test_views[i].image])?;
            pnm::write(strips.join(format!("stage{stage}_{i:04}.ppm")), &s)?;
        }
        let views = score_views(session, &renders, cap)?;
        reports.push(MetricReport::new(&run, &format!("stage{stage}"), Some(stage), &hash, views));
    }
    let report = EvalReport { reports };
    write_text(&run_dir.join("metrics.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
