use super::mixture::{GaussianMix2D, MixGrad};
use super::warp::{rot, CameraWarp, WarpGrad};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::par;

/// Rasterization settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Contributions with `alpha < alpha_min` are skipped and each Gaussian's
    /// footprint is bounded accordingly. Zero evaluates every Gaussian at
    /// every pixel, which makes the render exactly differentiable.
    pub alpha_min: f64,
    pub background: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            alpha_min: 1.0 / 255.0,
            background: 0.5,
        }
    }
}

impl RenderOptions {
    pub fn exact() -> Self {
        RenderOptions {
            alpha_min: 0.0,
            ..Self::default()
        }
    }
}

/// A Gaussian transformed into camera space.
#[derive(Clone, Copy, Debug)]
struct Splat {
    index: usize,
    m: [f64; 2],
    cos: f64,
    sin: f64,
    inv_var: [f64; 2],
    opacity: f64,
    color: [f64; 3],
    x_range: (usize, usize),
}

/// Compositing stops once transmittance falls below this, culled mode only.
const T_MIN: f64 = 1e-4;

struct Frame {
    splats: Vec<Splat>,
    /// Splats touching each row, in depth order.
    rows: Vec<Vec<u32>>,
}

pub(crate) fn canvas_center(w: usize, h: usize) -> [f64; 2] {
    [w as f64 / 2.0, h as f64 / 2.0]
}

fn prepare(
    mix: &GaussianMix2D,
    warp: &CameraWarp,
    w: usize,
    h: usize,
    opts: &RenderOptions,
) -> Frame {
    let center = canvas_center(w, h);
    let mut splats = Vec::with_capacity(mix.len());
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    if w == 0 || h == 0 {
        return Frame { splats, rows };
    }
    for i in mix.depth_order() {
        let m = warp.apply_inverse(center, [mix.means[2 * i], mix.means[2 * i + 1]]);
        let ls = [
            mix.log_scales[2 * i] - warp.log_zoom,
            mix.log_scales[2 * i + 1] - warp.log_zoom,
        ];
        let phi = mix.rotations[i] - warp.rotation;
        let (sin, cos) = phi.sin_cos();
        let opacity = mix.opacity(i);
        let var = [(2.0 * ls[0]).exp(), (2.0 * ls[1]).exp()];
        let (x_range, y_range) = if opts.alpha_min > 0.0 {
            if opacity < opts.alpha_min {
                continue;
            }
            let q_max = 2.0 * (opacity / opts.alpha_min).ln();
            let hx = (q_max * (var[0] * cos * cos + var[1] * sin * sin)).sqrt();
            let hy = (q_max * (var[0] * sin * sin + var[1] * cos * cos)).sqrt();
            let span = |c: f64, half: f64, n: usize| -> Option<(usize, usize)> {
                let lo = (c - half - 0.5).ceil().max(0.0);
                let hi = (c + half - 0.5).floor().min(n as f64 - 1.0);
                (lo <= hi).then_some((lo as usize, hi as usize))
            };
            match (span(m[0], hx, w), span(m[1], hy, h)) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            }
        } else {
            ((0, w - 1), (0, h - 1))
        };
        let k = splats.len() as u32;
        splats.push(Splat {
            index: i,
            m,
            cos,
            sin,
            inv_var: [1.0 / var[0], 1.0 / var[1]],
            opacity,
            color: mix.color(i),
            x_range,
        });
        for row in &mut rows[y_range.0..=y_range.1] {
            row.push(k);
        }
    }
    Frame { splats, rows }
}

/// Walks the splat's span on row `y`, yielding `(x, u, v, alpha)`. The
/// exponent is quadratic in `x`, so `exp(-q/2)` advances by a ratio that
/// itself advances by a constant factor: two `exp` calls per span.
#[inline]
fn for_each_on_row(s: &Splat, y: usize, mut f: impl FnMut(usize, f64, f64, f64)) {
    let (x0, x1) = s.x_range;
    let dx = x0 as f64 + 0.5 - s.m[0];
    let dy = y as f64 + 0.5 - s.m[1];
    let (du, dv) = (s.cos, -s.sin);
    let mut u = s.cos * dx + s.sin * dy;
    let mut v = -s.sin * dx + s.cos * dy;
    let [iu, iv] = s.inv_var;
    let q = u * u * iu + v * v * iv;
    let step = iu * (2.0 * u * du + du * du) + iv * (2.0 * v * dv + dv * dv);
    let curvature = 2.0 * (iu * du * du + iv * dv * dv);
    let mut e = (-0.5 * q).exp();
    let mut ratio = (-0.5 * step).exp();
    let ratio_step = (-0.5 * curvature).exp();
    for x in x0..=x1 {
        f(x, u, v, s.opacity * e);
        e *= ratio;
        ratio *= ratio_step;
        u += du;
        v += dv;
    }
}

/// Renders `mix` as seen through `warp` with the default options.
pub fn render(mix: &GaussianMix2D, warp: &CameraWarp, w: usize, h: usize) -> Image {
    render_with(mix, warp, w, h, &RenderOptions::default())
}

/// Front-to-back alpha compositing in ascending depth-key order over a
/// constant background. Pixel `(x, y)` is evaluated at `(x + 0.5, y + 0.5)`.
pub fn render_with(
    mix: &GaussianMix2D,
    warp: &CameraWarp,
    w: usize,
    h: usize,
    opts: &RenderOptions,
) -> Image {
    let frame = prepare(mix, warp, w, h, opts);
    let mut img = Image::new(w, h, 3);
    if w == 0 || h == 0 {
        return img;
    }
    let bg = opts.background;
    let cull = opts.alpha_min > 0.0;
    par::for_each_chunk_mut(img.data_mut(), 3 * w, |y, out| {
        let mut t = vec![1.0; w];
        let mut c = vec![[0.0; 3]; w];
        for &k in &frame.rows[y] {
            let s = &frame.splats[k as usize];
            for_each_on_row(s, y, |x, _, _, a| {
                if a < opts.alpha_min || (cull && t[x] < T_MIN) {
                    return;
                }
                for ch in 0..3 {
                    c[x][ch] += t[x] * a * s.color[ch];
                }
                t[x] *= 1.0 - a;
            });
        }
        for x in 0..w {
            for ch in 0..3 {
                out[3 * x + ch] = c[x][ch] + t[x] * bg;
            }
        }
    });
    img
}

/// Per-splat gradient in camera space:
/// mean (2), log-scale (2), rotation, opacity logit, color logits (3).
type SplatGrad = [f64; 9];

/// Gradient of `sum_p upstream(p) . render(p)` with respect to every mixture
/// parameter and every warp parameter.
pub fn render_gradients(
    mix: &GaussianMix2D,
    warp: &CameraWarp,
    w: usize,
    h: usize,
    upstream: &Image,
    opts: &RenderOptions,
) -> Result<(MixGrad, WarpGrad)> {
    if upstream.width() != w || upstream.height() != h || upstream.channels() != 3 {
        return Err(Error::dims(format!(
            "upstream gradient is {}x{}x{}, render is {w}x{h}x3",
            upstream.width(),
            upstream.height(),
            upstream.channels()
        )));
    }
    let frame = prepare(mix, warp, w, h, opts);
    let bg = opts.background;
    let cull = opts.alpha_min > 0.0;
    let up = upstream.data();
    let per_row: Vec<Vec<(u32, SplatGrad)>> = par::map_range(h, |y| {
        let row = &frame.rows[y];
        let g_row = &up[3 * y * w..3 * (y + 1) * w];
        // forward replay: one record (alpha, transmittance before, u, v) per
        // splat and covered pixel; alpha < 0 marks skipped samples
        let mut t = vec![1.0; w];
        let mut start = Vec::with_capacity(row.len());
        let mut rec: Vec<[f64; 4]> = Vec::new();
        for &k in row {
            let s = &frame.splats[k as usize];
            start.push(rec.len());
            for_each_on_row(s, y, |x, u, v, a| {
                if a < opts.alpha_min || (cull && t[x] < T_MIN) {
                    rec.push([-1.0; 4]);
                    return;
                }
                rec.push([a, t[x], u, v]);
                t[x] *= 1.0 - a;
            });
        }
        // color of everything behind the current splat, composited
        let mut behind = vec![[bg; 3]; w];
        let mut out = Vec::new();
        for (pos, &k) in row.iter().enumerate().rev() {
            let s = &frame.splats[k as usize];
            let mut grad: SplatGrad = [0.0; 9];
            let mut touched = false;
            for (j, x) in (s.x_range.0..=s.x_range.1).enumerate() {
                let [a, t, u, v] = rec[start[pos] + j];
                if a < 0.0 {
                    continue;
                }
                let g = &g_row[3 * x..3 * x + 3];
                let b = &mut behind[x];
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    d_alpha += g[ch] * (s.color[ch] - b[ch]);
                    grad[6 + ch] += t * a * g[ch] * s.color[ch] * (1.0 - s.color[ch]);
                    b[ch] = a * s.color[ch] + (1.0 - a) * b[ch];
                }
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                touched = true;
                d_alpha *= t;
                grad[5] += d_alpha * a * (1.0 - s.opacity);
                let d_q = -0.5 * a * d_alpha;
                let (au, bv) = (2.0 * u * s.inv_var[0], 2.0 * v * s.inv_var[1]);
                // q depends on the mean through d = p - m
                grad[0] -= d_q * (au * s.cos - bv * s.sin);
                grad[1] -= d_q * (au * s.sin + bv * s.cos);
                grad[2] -= d_q * au * u;
                grad[3] -= d_q * bv * v;
                grad[4] += d_q * 2.0 * u * v * (s.inv_var[0] - s.inv_var[1]);
            }
            if touched {
                out.push((k, grad));
            }
        }
        out
    });

    let mut cam: Vec<SplatGrad> = vec![[0.0; 9]; frame.splats.len()];
    for row in per_row {
        for (k, g) in row {
            let dst = &mut cam[k as usize];
            for j in 0..9 {
                dst[j] += g[j];
            }
        }
    }

    let center = canvas_center(w, h);
    let inv_s = (-warp.log_zoom).exp();
    let mut mg = MixGrad::zeros(mix.len());
    let mut wg = WarpGrad::default();
    for (s, g) in frame.splats.iter().zip(&cam) {
        let i = s.index;
        let dm = rot(warp.rotation, [g[0], g[1]]);
        mg.means[2 * i] = inv_s * dm[0];
        mg.means[2 * i + 1] = inv_s * dm[1];
        mg.log_scales[2 * i] = g[2];
        mg.log_scales[2 * i + 1] = g[3];
        mg.rotations[i] = g[4];
        mg.opacity_logits[i] = g[5];
        mg.color_logits[3 * i..3 * i + 3].copy_from_slice(&g[6..9]);
        let rel = [s.m[0] - center[0], s.m[1] - center[1]];
        wg.rotation += g[0] * rel[1] - g[1] * rel[0] - g[4];
        wg.log_zoom -= g[0] * rel[0] + g[1] * rel[1] + g[2] + g[3];
        wg.translation[0] -= inv_s * dm[0];
        wg.translation[1] -= inv_s * dm[1];
    }
    Ok((mg, wg))
}
