use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CaptureOptions, PoseNoise, SceneSpec, TrajectorySpec};
use crate::error::{Error, Result};
use crate::eventsim::{read_events, write_events, EventStream};
use crate::imaging::{pnm, Image};
use crate::splat::CameraWarp;

pub const SESSION_VERSION: u32 = 1;

/// Everything needed to regenerate a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// `None` when the ground truth came from an existing image file.
    pub scene: Option<SceneSpec>,
    pub trajectory: TrajectorySpec,
    pub pose_noise: PoseNoise,
    pub theta: f64,
    pub options: CaptureOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbView {
    pub image: Image,
    pub window: [u64; 2],
    pub init_warp: CameraWarp,
    /// Trajectory at mid-exposure.
    pub true_warp: CameraWarp,
}

impl RgbView {
    pub fn mid_time(&self) -> u64 {
        (self.window[0] + self.window[1]) / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventView {
    pub image: Image,
    pub t_us: u64,
    pub init_warp: CameraWarp,
    pub true_warp: CameraWarp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestView {
    pub image: Image,
    pub t_us: u64,
    pub warp: CameraWarp,
}

/// A simulated dataset: blurred RGB views, the event stream, event-derived
/// grayscale views and sharp held-out views of one ground-truth scene.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSession {
    pub gt: Image,
    pub rgb_views: Vec<RgbView>,
    pub events: EventStream,
    pub event_views: Vec<EventView>,
    pub test_views: Vec<TestView>,
    pub config: SessionConfig,
}

impl CaptureSession {
    pub fn width(&self) -> usize {
        self.gt.width()
    }

    pub fn height(&self) -> usize {
        self.gt.height()
    }

    /// Contrast threshold as stored in the event stream.
    pub fn theta(&self) -> f64 {
        self.events.contrast_threshold()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RgbMeta {
    file: String,
    window: [u64; 2],
    init_warp: CameraWarp,
    true_warp: CameraWarp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventViewMeta {
    file: String,
    t_us: u64,
    init_warp: CameraWarp,
    true_warp: CameraWarp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestMeta {
    file: String,
    t_us: u64,
    warp: CameraWarp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionMeta {
    format_version: u32,
    width: usize,
    height: usize,
    theta: f64,
    gt: String,
    events: String,
    event_count: usize,
    rgb_views: Vec<RgbMeta>,
    event_views: Vec<EventViewMeta>,
    test_views: Vec<TestMeta>,
    config: SessionConfig,
}

fn indexed(dir: &str, i: usize, ext: &str) -> String {
    format!("{dir}/{i:04}.{ext}")
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the session directory; all paths in `session.json` are relative.
pub fn write_session(dir: impl AsRef<Path>, s: &CaptureSession) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["blurred", "evviews", "test"] {
        mkdir(&dir.join(sub))?;
    }
    pnm::write(dir.join("gt.ppm"), &s.gt)?;
    write_events(&dir.join("events.aevt"), &s.events)?;
    let mut rgb_views = Vec::new();
    for (i, v) in s.rgb_views.iter().enumerate() {
        let file = indexed("blurred", i, "ppm");
        pnm::write(dir.join(&file), &v.image)?;
        rgb_views.push(RgbMeta {
            file,
            window: v.window,
            init_warp: v.init_warp,
            true_warp: v.true_warp,
        });
    }
    let mut event_views = Vec::new();
    for (i, v) in s.event_views.iter().enumerate() {
        let file = indexed("evviews", i, "pgm");
        pnm::write(dir.join(&file), &v.image)?;
        event_views.push(EventViewMeta {
            file,
            t_us: v.t_us,
            init_warp: v.init_warp,
            true_warp: v.true_warp,
        });
    }
    let mut test_views = Vec::new();
    for (i, v) in s.test_views.iter().enumerate() {
        let file = indexed("test", i, "ppm");
        pnm::write(dir.join(&file), &v.image)?;
        test_views.push(TestMeta {
            file,
            t_us: v.t_us,
            warp: v.warp,
        });
    }
    let meta = SessionMeta {
        format_version: SESSION_VERSION,
        width: s.width(),
        height: s.height(),
        theta: s.theta(),
        gt: "gt.ppm".into(),
        events: "events.aevt".into(),
        event_count: s.events.len(),
        rgb_views,
        event_views,
        test_views,
        config: s.config.clone(),
    };
    let path = dir.join("session.json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn load(dir: &Path, file: &str, w: usize, h: usize, channels: usize) -> Result<Image> {
    let path: PathBuf = dir.join(file);
    let img = pnm::read(&path)?;
    if img.width() != w || img.height() != h || img.channels() != channels {
        return Err(Error::BadImageFile {
            path: Some(path),
            reason: "geometry differs from session.json".into(),
        });
    }
    Ok(img)
}

pub fn read_session(dir: impl AsRef<Path>) -> Result<CaptureSession> {
    let dir = dir.as_ref();
    let path = dir.join("session.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: SessionMeta = serde_json::from_str(&text)?;
    if meta.format_version != SESSION_VERSION {
        return Err(Error::Capture(format!(
            "unsupported session version {}",
            meta.format_version
        )));
    }
    let (w, h) = (meta.width, meta.height);
    let gt = load(dir, &meta.gt, w, h, 3)?;
    let events = read_events(&dir.join(&meta.events))?;
    if events.width != w || events.height != h || events.len() != meta.event_count {
        return Err(Error::Capture(
            "event stream disagrees with session.json".into(),
        ));
    }
    let rgb_views = meta
        .rgb_views
        .into_iter()
        .map(|m| {
            Ok(RgbView {
                image: load(dir, &m.file, w, h, 3)?,
                window: m.window,
                init_warp: m.init_warp,
                true_warp: m.true_warp,
            })
        })
        .collect::<Result<_>>()?;
    let event_views = meta
        .event_views
        .into_iter()
        .map(|m| {
            Ok(EventView {
                image: load(dir, &m.file, w, h, 1)?,
                t_us: m.t_us,
                init_warp: m.init_warp,
                true_warp: m.true_warp,
            })
        })
        .collect::<Result<_>>()?;
    let test_views = meta
        .test_views
        .into_iter()
        .map(|m| {
            Ok(TestView {
                image: load(dir, &m.file, w, h, 3)?,
                t_us: m.t_us,
                warp: m.warp,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CaptureSession {
        gt,
        rgb_views,
        events,
        event_views,
        test_views,
        config: meta.config,
    })
}
