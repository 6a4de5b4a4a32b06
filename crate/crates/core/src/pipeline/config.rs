use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capture::{CaptureOptions, MotionSpec, PoseNoise, SceneSpec};
use crate::error::{Error, Result};
use crate::optim::{ObjectiveConfig, TrainSchedule};

/// Ablation switches. Each maps to one row of the ordering experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub disable_struct: bool,
    pub disable_reg_r: bool,
    pub disable_reg_e: bool,
    pub disable_evs: bool,
    /// No event terms at all in Stage 2.
    pub rgb_only: bool,
    /// No RGB terms; Stage 1 is skipped and there is no color reference.
    pub events_only: bool,
    /// Warps stay at their initial values in both stages.
    pub no_pose_refine: bool,
}

impl Ablation {
    pub fn validate(&self) -> Result<()> {
        if self.rgb_only && self.events_only {
            return Err(Error::Config("rgb_only and events_only are mutually exclusive".into()));
        }
        Ok(())
    }

    /// Short tag naming the switch combination, `full` when none is set.
    pub fn tag(&self) -> String {
        let names = [
            (self.disable_struct, "no_struct"),
            (self.disable_reg_r, "no_reg_r"),
            (self.disable_reg_e, "no_reg_e"),
            (self.disable_evs, "no_evs"),
            (self.rgb_only, "rgb_only"),
            (self.events_only, "events_only"),
            (self.no_pose_refine, "no_pose"),
        ];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        if on.is_empty() {
            "full".into()
        } else {
            on.join("+")
        }
    }
}

/// Test-view evaluation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Warp-only refinement steps that register each render to its test
    /// view before scoring; zero scores at the nominal test warp.
    pub align_iters: usize,
    pub psnr_cap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { align_iters: 100, psnr_cap: 99.0 }
    }
}

fn default_theta() -> f64 {
    0.2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// One JSON document describing a complete experiment. Only `scene` is
/// required; unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSpec,
    #[serde(default)]
    pub motion: MotionSpec,
    #[serde(default)]
    pub pose_noise: PoseNoise,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub capture: CaptureOptions,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Drives pose noise and every training draw; the scene has its own seed.
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Defaults everywhere except the scene.
    pub fn with_scene(scene: SceneSpec) -> Self {
        RunConfig {
            scene,
            motion: MotionSpec::default(),
            pose_noise: PoseNoise::default(),
            theta: default_theta(),
            capture: CaptureOptions::default(),
            objective: ObjectiveConfig::default(),
            schedule: TrainSchedule::default(),
            ablation: Ablation::default(),
            eval: EvalConfig::default(),
            output_dir: default_output_dir(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.pose_noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config("theta must be finite and > 0".into()));
        }
        self.objective.validate()?;
        self.schedule.validate()?;
        self.ablation.validate()?;
        if !(self.eval.psnr_cap > 0.0) {
            return Err(Error::Config("eval.psnr_cap must be > 0".into()));
        }
        Ok(())
    }

    /// The config with the run-specific `seed` pushed into the pose noise and
    /// the training schedule.
    pub fn seeded(&self) -> (PoseNoise, TrainSchedule) {
        let noise = PoseNoise { seed: self.seed, ..self.pose_noise };
        let schedule = TrainSchedule { rng_seed: self.seed, ..self.schedule };
        (noise, schedule)
    }

    /// Objective and schedule after applying the ablation switches.
    pub fn effective(&self) -> (ObjectiveConfig, TrainSchedule) {
        let (_, mut schedule) = self.seeded();
        let mut obj = self.objective;
        let a = &self.ablation;
        let w = &mut obj.weights;
        if a.disable_struct {
            w.lambda_struct = 0.0;
        }
        if a.disable_reg_r {
            w.lambda_reg_r = 0.0;
        }
        if a.disable_reg_e {
            w.lambda_reg_e = 0.0;
        }
        if a.disable_evs {
            w.lambda_evs = 0.0;
        }
        if a.rgb_only {
            w.lambda_struct = 0.0;
            w.lambda_evs = 0.0;
            w.lambda_reg_e = 0.0;
        }
        if a.events_only {
            w.lambda_blur = 0.0;
            w.lambda_reg_r = 0.0;
            w.lambda_reg_e = 0.0;
            schedule.stage1_iters = 0;
        }
        if a.no_pose_refine {
            schedule.pose_refine = false;
        }
        (obj, schedule)
    }

    /// SHA-256 of the canonical JSON with the output directory blanked, so
    /// the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("plain data serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `<output_dir>/<hash prefix>-s<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-s{}", &self.hash()[..12], self.seed))
    }
}
