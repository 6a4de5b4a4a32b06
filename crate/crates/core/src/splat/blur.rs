use serde::{Deserialize, Serialize};

use super::mixture::{GaussianMix2D, MixGrad};
use super::mlp::{DeformMLP, Deltas};
use super::render::{render_gradients, render_with, RenderOptions};
use super::warp::{CameraWarp, WarpGrad};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Exposure model: each blurred view is the mean of `n_sub` renders under the
/// view's base warp composed with a learnable per-sub-frame offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurModel {
    pub n_sub: usize,
    /// `offsets[view][k]` is applied in camera space before the base warp.
    pub offsets: Vec<Vec<CameraWarp>>,
    pub use_mlp: bool,
}

impl BlurModel {
    pub fn new(n_views: usize, n_sub: usize, use_mlp: bool) -> Result<Self> {
        if n_sub < 2 {
            return Err(Error::invalid(format!(
                "blur model needs at least 2 sub-frames, got {n_sub}"
            )));
        }
        Ok(BlurModel {
            n_sub,
            offsets: vec![vec![CameraWarp::IDENTITY; n_sub]; n_views],
            use_mlp,
        })
    }

    pub fn n_views(&self) -> usize {
        self.offsets.len()
    }

    pub fn sub_warp(&self, base: &CameraWarp, view: usize, k: usize) -> CameraWarp {
        base.compose(&self.offsets[view][k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sub < 2 {
            return Err(Error::invalid("blur model needs at least 2 sub-frames"));
        }
        if self
            .offsets
            .iter()
            .any(|v| v.len() != self.n_sub || v.iter().any(|w| !w.is_finite()))
        {
            return Err(Error::invalid(
                "blur offsets must be finite, n_sub per view",
            ));
        }
        Ok(())
    }
}

/// Optional deformation network and the view code it is queried with.
#[derive(Clone, Copy)]
pub struct Deform<'a> {
    pub mlp: &'a DeformMLP,
    pub view_code: [f64; 2],
}

fn deltas_for(
    mix: &GaussianMix2D,
    blur: &BlurModel,
    deform: Option<Deform<'_>>,
) -> Result<Option<Deltas>> {
    match (blur.use_mlp, deform) {
        (true, Some(d)) => {
            if d.mlp.n_sub != blur.n_sub {
                return Err(Error::dims(
                    "MLP sub-frame count differs from the blur model",
                ));
            }
            Ok(Some(d.mlp.forward(mix, d.view_code).0))
        }
        _ => Ok(None),
    }
}

/// Renders the `n_sub` latent sharp frames of `view` and their mean.
#[allow(clippy::too_many_arguments)]
pub fn synth_blur(
    mix: &GaussianMix2D,
    base: &CameraWarp,
    blur: &BlurModel,
    view: usize,
    deform: Option<Deform<'_>>,
    w: usize,
    h: usize,
    opts: &RenderOptions,
) -> Result<(Image, Vec<Image>)> {
    if view >= blur.n_views() {
        return Err(Error::invalid(format!(
            "view {view} outside blur model with {} views",
            blur.n_views()
        )));
    }
    let deltas = deltas_for(mix, blur, deform)?;
    let mut avg = Image::new(w, h, 3);
    let mut subs = Vec::with_capacity(blur.n_sub);
    for k in 0..blur.n_sub {
        let warp = blur.sub_warp(base, view, k);
        let img = match &deltas {
            Some(d) => render_with(&d.apply(mix, k), &warp, w, h, opts),
            None => render_with(mix, &warp, w, h, opts),
        };
        avg.add_scaled(&img, 1.0 / blur.n_sub as f64);
        subs.push(img);
    }
    Ok((avg, subs))
}

/// Gradients of a scalar that depends on the blurred mean and, optionally,
/// on the individual sub-frames.
#[derive(Clone, Debug)]
pub struct BlurGrad {
    pub mix: MixGrad,
    pub base: WarpGrad,
    pub offsets: Vec<WarpGrad>,
    pub mlp: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn synth_blur_backward(
    mix: &GaussianMix2D,
    base: &CameraWarp,
    blur: &BlurModel,
    view: usize,
    deform: Option<Deform<'_>>,
    w: usize,
    h: usize,
    opts: &RenderOptions,
    grad_avg: &Image,
    grad_subs: Option<&[Image]>,
) -> Result<BlurGrad> {
    if let Some(gs) = grad_subs {
        if gs.len() != blur.n_sub {
            return Err(Error::dims("one sub-frame gradient per sub-frame required"));
        }
    }
    let tape = match (blur.use_mlp, deform) {
        (true, Some(d)) => {
            if d.mlp.n_sub != blur.n_sub {
                return Err(Error::dims(
                    "MLP sub-frame count differs from the blur model",
                ));
            }
            Some(d.mlp.forward(mix, d.view_code))
        }
        _ => None,
    };
    let mut out = BlurGrad {
        mix: MixGrad::zeros(mix.len()),
        base: WarpGrad::default(),
        offsets: Vec::new(),
        mlp: None,
    };
    let mut delta_grad = tape
        .as_ref()
        .map(|(d, _)| Deltas::zeros(mix.len(), d.n_sub()));
    let inv_n = 1.0 / blur.n_sub as f64;
    for k in 0..blur.n_sub {
        let mut up = grad_avg.clone();
        up.scale(inv_n);
        if let Some(gs) = grad_subs {
            up.add_scaled(&gs[k], 1.0);
        }
        let offset = blur.offsets[view][k];
        let warp = base.compose(&offset);
        let (mg, wg) = match &tape {
            Some((d, _)) => render_gradients(&d.apply(mix, k), &warp, w, h, &up, opts)?,
            None => render_gradients(mix, &warp, w, h, &up, opts)?,
        };
        if let Some(dg) = delta_grad.as_mut() {
            dg.set_from_grad(&mg, k);
        }
        out.mix.add_scaled(&mg, 1.0);
        let (gb, go) = base.compose_backward(&offset, &wg);
        out.base.add(&gb);
        out.offsets.push(go);
    }
    if let (Some((_, t)), Some(dg), Some(d)) = (&tape, &delta_grad, deform) {
        let (pg, through) = d.mlp.backward(mix, t, dg);
        out.mix.add_scaled(&through, 1.0);
        out.mlp = Some(pg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::render::tests::random_mix;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_offsets_reproduce_base_render() {
        let mix = random_mix(10, 20, 16, 1);
        let base = CameraWarp::new(0.1, 0.0, [1.0, 2.0]);
        let blur = BlurModel::new(1, 5, false).unwrap();
        let opts = RenderOptions::default();
        let (avg, subs) = synth_blur(&mix, &base, &blur, 0, None, 20, 16, &opts).unwrap();
        let direct = render_with(&mix, &base, 20, 16, &opts);
        assert!(subs.iter().all(|s| *s == direct));
        for (a, b) in avg.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(BlurModel::new(1, 1, false).is_err());
    }

    #[test]
    fn two_subframes_average_two_renders() {
        let mix = random_mix(1, 20, 16, 2);
        let mut blur = BlurModel::new(1, 2, false).unwrap();
        blur.offsets[0][0] = CameraWarp::translation(1.5, 0.0);
        blur.offsets[0][1] = CameraWarp::translation(-1.5, 0.0);
        let opts = RenderOptions::default();
        let (avg, _) =
            synth_blur(&mix, &CameraWarp::IDENTITY, &blur, 0, None, 20, 16, &opts).unwrap();
        let a = render_with(&mix, &CameraWarp::translation(1.5, 0.0), 20, 16, &opts);
        let b = render_with(&mix, &CameraWarp::translation(-1.5, 0.0), 20, 16, &opts);
        for ((x, p), q) in avg.data().iter().zip(a.data()).zip(b.data()) {
            assert!((x - 0.5 * (p + q)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_mlp_matches_plain_blur() {
        let mix = random_mix(8, 24, 24, 3);
        let mlp = DeformMLP::new(3, 16, 3, 3, 10, [24.0, 24.0], 0).unwrap();
        let mut blur = BlurModel::new(1, 3, true).unwrap();
        blur.offsets[0][2] = CameraWarp::translation(0.5, 0.25);
        let opts = RenderOptions::default();
        let d = Deform {
            mlp: &mlp,
            view_code: [0.2, 0.1],
        };
        let (a, _) = synth_blur(
            &mix,
            &CameraWarp::IDENTITY,
            &blur,
            0,
            Some(d),
            24,
            24,
            &opts,
        )
        .unwrap();
        let (b, _) =
            synth_blur(&mix, &CameraWarp::IDENTITY, &blur, 0, None, 24, 24, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (w, h) = (14, 12);
        let mix = random_mix(4, w, h, 5);
        let mut mlp = DeformMLP::new(2, 6, 2, 2, 2, [w as f64, h as f64], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        mlp.params
            .iter_mut()
            .for_each(|p| *p = rng.gen_range(-0.2..0.2));
        let mut blur = BlurModel::new(1, 2, true).unwrap();
        blur.offsets[0][0] = CameraWarp::new(0.05, 0.02, [0.8, -0.3]);
        blur.offsets[0][1] = CameraWarp::new(-0.03, -0.01, [-0.6, 0.4]);
        let base = CameraWarp::new(0.1, 0.03, [0.5, 0.2]);
        let opts = RenderOptions::exact();
        let ga = Image::from_fn_rgb(w, h, |_, _| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        });
        let gs: Vec<Image> = (0..2)
            .map(|_| Image::from_fn_rgb(w, h, |_, _| [rng.gen_range(-1.0..1.0), 0.0, 0.5]))
            .collect();
        let view = [0.1, 0.3];
        let obj = |mix: &GaussianMix2D, base: &CameraWarp, blur: &BlurModel, mlp: &DeformMLP| {
            let (avg, subs) = synth_blur(
                mix,
                base,
                blur,
                0,
                Some(Deform {
                    mlp,
                    view_code: view,
                }),
                w,
                h,
                &opts,
            )
            .unwrap();
            let dot = |a: &Image, b: &Image| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            };
            dot(&avg, &ga) + dot(&subs[0], &gs[0]) + dot(&subs[1], &gs[1])
        };
        let g = synth_blur_backward(
            &mix,
            &base,
            &blur,
            0,
            Some(Deform {
                mlp: &mlp,
                view_code: view,
            }),
            w,
            h,
            &opts,
            &ga,
            Some(&gs),
        )
        .unwrap();
        let e = 1e-4;
        let close = |fd: f64, an: f64, what: &str| {
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(err < 1e-4, "{what}: fd {fd} vs {an}");
        };
        for i in 0..mix.len() {
            let mut p = mix.clone();
            p.means[2 * i] += e;
            let mut m = mix.clone();
            m.means[2 * i] -= e;
            close(
                (obj(&p, &base, &blur, &mlp) - obj(&m, &base, &blur, &mlp)) / (2.0 * e),
                g.mix.means[2 * i],
                "mean",
            );
            let mut p = mix.clone();
            p.rotations[i] += e;
            let mut m = mix.clone();
            m.rotations[i] -= e;
            close(
                (obj(&p, &base, &blur, &mlp) - obj(&m, &base, &blur, &mlp)) / (2.0 * e),
                g.mix.rotations[i],
                "rotation",
            );
        }
        for j in 0..4 {
            let bump = |w: &CameraWarp, d: f64| {
                let mut a = w.to_array();
                a[j] += d;
                CameraWarp::from_array(a)
            };
            let fd = (obj(&mix, &bump(&base, e), &blur, &mlp)
                - obj(&mix, &bump(&base, -e), &blur, &mlp))
                / (2.0 * e);
            close(fd, g.base.to_array()[j], "base warp");
            for k in 0..2 {
                let mut bp = blur.clone();
                bp.offsets[0][k] = bump(&blur.offsets[0][k], e);
                let mut bm = blur.clone();
                bm.offsets[0][k] = bump(&blur.offsets[0][k], -e);
                let fd = (obj(&mix, &base, &bp, &mlp) - obj(&mix, &base, &bm, &mlp)) / (2.0 * e);
                close(fd, g.offsets[k].to_array()[j], "offset");
            }
        }
        let pg = g.mlp.unwrap();
        for k in (0..mlp.params.len()).step_by(7) {
            let mut p = mlp.clone();
            p.params[k] += e;
            let mut m = mlp.clone();
            m.params[k] -= e;
            close(
                (obj(&mix, &base, &blur, &p) - obj(&mix, &base, &blur, &m)) / (2.0 * e),
                pg[k],
                "mlp",
            );
        }
    }
}
