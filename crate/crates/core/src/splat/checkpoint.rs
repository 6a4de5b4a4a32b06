use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlurModel, CameraWarp, DeformMLP, GaussianMix2D};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to re-render a trained scene. Field order is fixed so
/// that serialized checkpoints diff cleanly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneCheckpoint {
    pub format_version: u32,
    pub seed: u64,
    pub stage: u8,
    pub iteration: usize,
    pub width: usize,
    pub height: usize,
    pub mixture: GaussianMix2D,
    pub rgb_warps: Vec<CameraWarp>,
    pub event_warps: Vec<CameraWarp>,
    pub blur: BlurModel,
    pub mlp: Option<DeformMLP>,
}

impl SceneCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: SceneCheckpoint = serde_json::from_str(s)?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                c.format_version
            )));
        }
        c.mixture.validate()?;
        c.blur.validate()?;
        if let Some(m) = &c.mlp {
            m.validate()?;
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::render::tests::random_mix;
    use super::*;

    #[test]
    fn json_roundtrip_is_exact() {
        let ck = SceneCheckpoint {
            format_version: CHECKPOINT_VERSION,
            seed: 7,
            stage: 2,
            iteration: 100,
            width: 32,
            height: 24,
            mixture: random_mix(5, 32, 24, 1),
            rgb_warps: vec![CameraWarp::new(0.1, 1e-3, [1.0 / 3.0, -2.0])],
            event_warps: vec![],
            blur: BlurModel::new(1, 5, true).unwrap(),
            mlp: Some(DeformMLP::new(5, 8, 3, 3, 10, [32.0, 24.0], 3).unwrap()),
        };
        let s = ck.to_json().unwrap();
        let back = SceneCheckpoint::from_json(&s).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), s);
        let bad = s.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(SceneCheckpoint::from_json(&bad).is_err());
    }
}
