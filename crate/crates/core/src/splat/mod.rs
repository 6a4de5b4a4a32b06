//! Latent scene and differentiable forward model: a 2D Gaussian mixture
//! rendered through similarity warps, exposure blur synthesis and the
//! per-sub-frame deformation network.

mod blur;
mod checkpoint;
mod mixture;
mod mlp;
mod render;
mod warp;

pub use blur::{synth_blur, synth_blur_backward, BlurGrad, BlurModel, Deform};
pub use checkpoint::{SceneCheckpoint, CHECKPOINT_VERSION};
pub use mixture::{Gaussian, GaussianMix2D, MixGrad};
pub use mlp::{DeformMLP, Deltas, MlpTape};
pub use render::{render, render_gradients, render_with, RenderOptions};
pub use warp::{CameraWarp, WarpGrad};

pub(crate) use render::canvas_center;
