use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::splat::{render_with, CameraWarp, Gaussian, GaussianMix2D, RenderOptions};

/// Ground-truth scene generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneGenerator {
    /// Random opaque-ish Gaussian blobs over a mid-gray background. Blob
    /// centers keep `margin` pixels from the border.
    GaussianField {
        count: usize,
        scale_range: [f64; 2],
        #[serde(default)]
        palette: Vec<[f64; 3]>,
        #[serde(default = "default_margin")]
        margin: f64,
    },
    /// A binary glyph raster (`#` is ink) scaled by `cell` and pasted at `origin`.
    TextCard {
        glyph: Vec<String>,
        cell: usize,
        origin: [usize; 2],
        ink: [f64; 3],
        paper: [f64; 3],
        background: [f64; 3],
    },
    /// A checkerboard overlaid with random blobs.
    CheckerPlusBlobs { square: usize, blobs: usize },
}

fn default_margin() -> f64 {
    16.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub generator: SceneGenerator,
    pub seed: u64,
}

fn random_blobs(
    rng: &mut ChaCha8Rng,
    count: usize,
    scale_range: [f64; 2],
    palette: &[[f64; 3]],
    bounds: ([f64; 2], [f64; 2]),
) -> GaussianMix2D {
    let mut mix = GaussianMix2D::new();
    for i in 0..count {
        let color = if palette.is_empty() {
            [
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
                rng.gen_range(0.05..0.95),
            ]
        } else {
            palette[rng.gen_range(0..palette.len())]
        };
        mix.push(Gaussian {
            mean: [
                rng.gen_range(bounds.0[0]..=bounds.1[0]),
                rng.gen_range(bounds.0[1]..=bounds.1[1]),
            ],
            scale: [
                rng.gen_range(scale_range[0]..=scale_range[1]),
                rng.gen_range(scale_range[0]..=scale_range[1]),
            ],
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            opacity: rng.gen_range(0.75..0.98),
            depth: i as f64,
            color,
        });
    }
    mix
}

/// Deterministic RGB ground truth in `[0, 1]`.
pub fn synth_scene(spec: &SceneSpec) -> Result<Image> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::invalid("scene canvas must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let exact = RenderOptions::exact();
    let img = match &spec.generator {
        SceneGenerator::GaussianField {
            count,
            scale_range,
            palette,
            margin,
        } => {
            if !(scale_range[0] > 0.0 && scale_range[0] <= scale_range[1]) {
                return Err(Error::invalid(
                    "gaussian_field scale_range must be positive and increasing",
                ));
            }
            let lo = [margin.min(w as f64 / 2.0), margin.min(h as f64 / 2.0)];
            let hi = [w as f64 - lo[0], h as f64 - lo[1]];
            let mix = random_blobs(&mut rng, *count, *scale_range, palette, (lo, hi));
            render_with(
                &mix,
                &CameraWarp::IDENTITY,
                w,
                h,
                &RenderOptions {
                    alpha_min: 1e-4,
                    ..exact
                },
            )
        }
        SceneGenerator::TextCard {
            glyph,
            cell,
            origin,
            ink,
            paper,
            background,
        } => {
            let rows = glyph.len();
            let cols = glyph.iter().map(|r| r.chars().count()).max().unwrap_or(0);
            if *cell == 0 || origin[0] + cols * cell > w || origin[1] + rows * cell > h {
                return Err(Error::invalid("text_card raster does not fit the canvas"));
            }
            let bits: Vec<Vec<bool>> = glyph
                .iter()
                .map(|r| r.chars().map(|c| c == '#').collect())
                .collect();
            Image::from_fn_rgb(w, h, |x, y| {
                let inside = x >= origin[0]
                    && y >= origin[1]
                    && x < origin[0] + cols * cell
                    && y < origin[1] + rows * cell;
                if !inside {
                    return *background;
                }
                let (gx, gy) = ((x - origin[0]) / cell, (y - origin[1]) / cell);
                if bits[gy].get(gx).copied().unwrap_or(false) {
                    *ink
                } else {
                    *paper
                }
            })
        }
        SceneGenerator::CheckerPlusBlobs { square, blobs } => {
            if *square == 0 {
                return Err(Error::invalid("checker square must be > 0"));
            }
            let base = Image::from_fn_rgb(w, h, |x, y| {
                if (x / square + y / square) % 2 == 0 {
                    [0.25; 3]
                } else {
                    [0.75; 3]
                }
            });
            let mix = random_blobs(
                &mut rng,
                *blobs,
                [2.0, 6.0],
                &[],
                ([0.0, 0.0], [w as f64, h as f64]),
            );
            let over = render_with(
                &mix,
                &CameraWarp::IDENTITY,
                w,
                h,
                &RenderOptions {
                    alpha_min: 1e-4,
                    background: 0.0,
                },
            );
            // composite the blob layer's premultiplied color over the checker
            let bare = render_with(
                &mix,
                &CameraWarp::IDENTITY,
                w,
                h,
                &RenderOptions {
                    alpha_min: 1e-4,
                    background: 1.0,
                },
            );
            let mut out = base.clone();
            for i in 0..out.len() {
                let transmit = bare.data()[i] - over.data()[i];
                out.data_mut()[i] = over.data()[i] + transmit * base.data()[i];
            }
            out
        }
    };
    Ok(img.clamp01())
}
