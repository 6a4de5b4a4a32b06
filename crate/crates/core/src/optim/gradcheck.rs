//! Central finite-difference checks of every differentiable component.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{Objective, ObjectiveConfig, Sample};
use super::state::{initial_state, MlpSettings, SceneGrad, SceneState, TrainSchedule};
use crate::capture::{build_session, CaptureSession, MotionSpec, PoseNoise, SceneGenerator, SceneSpec};
use crate::error::{Error, Result};
use crate::imaging::{convolve, Image, KernelSpec, SsimParams};
use crate::losses::{loss_blur, loss_evs, loss_reg_e, loss_reg_r, loss_struct, StructTarget};
use crate::splat::{render_gradients, render_with, CameraWarp, DeformMLP, Deltas, Gaussian, GaussianMix2D, RenderOptions};
use crate::structure::{weight_mask, MaskConfig, StructureConfig};

/// Registered components, in report order.
pub const COMPONENTS: [&str; 9] = [
    "render",
    "warp",
    "mlp",
    "loss_blur",
    "loss_struct",
    "loss_evs",
    "loss_reg_r",
    "loss_reg_e",
    "stage2_objective",
];

/// Default tolerance: the composed objective is a longer chain.
pub fn default_tol(component: &str) -> f64 {
    if component == "stage2_objective" {
        1e-3
    } else {
        1e-4
    }
}

/// Default step. The composed objective contains the L1 and min-max kinks,
/// which a step straddles with probability proportional to its size.
pub fn default_step(component: &str) -> f64 {
    if component == "stage2_objective" {
        1e-5
    } else {
        1e-4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub component: String,
    pub h: f64,
    pub tol: f64,
    pub trials: Vec<TrialResult>,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Gradients below this magnitude are compared in absolute terms; central
/// differences of an O(1) objective carry roundoff around 1e-10.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A scalar function of a flat parameter vector and its analytic gradient.
struct Problem {
    x: Vec<f64>,
    grad: Vec<f64>,
    f: Box<dyn Fn(&[f64]) -> f64>,
    /// Indices to probe; all when `None`.
    probe: Option<Vec<usize>>,
}

fn check(p: &Problem, h: f64) -> (f64, usize) {
    let idx: Vec<usize> = p.probe.clone().unwrap_or_else(|| (0..p.x.len()).collect());
    let mut worst = 0.0f64;
    let mut x = p.x.clone();
    for &i in &idx {
        let x0 = x[i];
        x[i] = x0 + h;
        let fp = (p.f)(&x);
        x[i] = x0 - h;
        let fm = (p.f)(&x);
        x[i] = x0;
        worst = worst.max(rel_err(p.grad[i], (fp - fm) / (2.0 * h)));
    }
    (worst, idx.len())
}

/// Runs `component` on seeds `0..trials`.
pub fn gradcheck(component: &str, trials: usize, h: f64, tol: f64) -> Result<ComponentReport> {
    if !COMPONENTS.contains(&component) {
        return Err(Error::invalid(format!("no gradient check registered for `{component}`")));
    }
    let mut out = Vec::with_capacity(trials);
    for seed in 0..trials as u64 {
        let p = build(component, seed)?;
        let (max_rel_err, checked) = check(&p, h);
        out.push(TrialResult { seed, max_rel_err, checked });
    }
    let max_rel_err = out.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(ComponentReport {
        component: component.into(),
        h,
        tol,
        pass: out.iter().all(|t| t.max_rel_err < tol),
        trials: out,
        max_rel_err,
    })
}

/// Every registered component at its default step and tolerance.
pub fn gradcheck_all(trials: usize) -> Result<Vec<ComponentReport>> {
    COMPONENTS.iter().map(|c| gradcheck(c, trials, default_step(c), default_tol(c))).collect()
}

fn build(component: &str, seed: u64) -> Result<Problem> {
    match component {
        "render" => render_problem(seed),
        "warp" => Ok(warp_problem(seed)),
        "mlp" => mlp_problem(seed),
        "loss_blur" => loss_blur_problem(seed),
        "loss_struct" => loss_struct_problem(seed),
        "loss_evs" => loss_evs_problem(seed),
        "loss_reg_r" => loss_reg_r_problem(seed),
        "loss_reg_e" => loss_reg_e_problem(seed),
        "stage2_objective" => objective_problem(seed),
        _ => unreachable!("checked by caller"),
    }
}

const W: usize = 20;
const H: usize = 16;

fn random_mix(n: usize, rng: &mut ChaCha8Rng) -> GaussianMix2D {
    let mut mix = GaussianMix2D::new();
    for i in 0..n {
        mix.push(Gaussian {
            mean: [rng.gen_range(3.0..W as f64 - 3.0), rng.gen_range(3.0..H as f64 - 3.0)],
            scale: [rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0)],
            rotation: rng.gen_range(-3.0..3.0),
            opacity: rng.gen_range(0.2..0.9),
            depth: i as f64 + rng.gen_range(0.0..0.5),
            color: std::array::from_fn(|_| rng.gen_range(0.1..0.9)),
        });
    }
    mix
}

fn random_warp(rng: &mut ChaCha8Rng) -> CameraWarp {
    CameraWarp::new(
        rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.1..0.1),
        [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
    )
}

/// Smooth random image with values inside `[lo, hi]`.
fn textured(channels: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..W * H * channels).map(|_| rng.gen_range(lo..hi)).collect();
    let raw = Image::from_vec(W, H, channels, data).expect("sized");
    convolve(&raw, &KernelSpec::gaussian(1.0)).expect("valid kernel")
}

fn random_like(img: &Image, rng: &mut ChaCha8Rng) -> Image {
    img.map(|_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn mix_to_vec(m: &GaussianMix2D) -> Vec<f64> {
    [&m.means, &m.log_scales, &m.rotations, &m.opacity_logits, &m.color_logits]
        .into_iter()
        .flatten()
        .copied()
        .collect()
}

fn mix_from_vec(template: &GaussianMix2D, v: &[f64]) -> GaussianMix2D {
    let mut m = template.clone();
    let mut off = 0;
    for field in [&mut m.means, &mut m.log_scales, &mut m.rotations, &mut m.opacity_logits, &mut m.color_logits] {
        let n = field.len();
        field.copy_from_slice(&v[off..off + n]);
        off += n;
    }
    m
}

fn probe(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    (k < n).then(|| {
        let mut v = sample(rng, n, k).into_vec();
        v.sort_unstable();
        v
    })
}

fn render_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = random_mix(6, &mut rng);
    let warp = random_warp(&mut rng);
    let up = random_like(&Image::new(W, H, 3), &mut rng);
    let opts = RenderOptions::exact();
    let (mg, wg) = render_gradients(&mix, &warp, W, H, &up, &opts)?;
    let mut x = mix_to_vec(&mix);
    x.extend(warp.to_array());
    let mut grad: Vec<f64> = mg.fields().iter().flat_map(|(_, v)| v.iter().copied()).collect();
    grad.extend(wg.to_array());
    let n_mix = x.len() - 4;
    Ok(Problem {
        x,
        grad,
        f: Box::new(move |v| {
            let m = mix_from_vec(&mix, &v[..n_mix]);
            let w = CameraWarp::from_array([v[n_mix], v[n_mix + 1], v[n_mix + 2], v[n_mix + 3]]);
            dot(&render_with(&m, &w, W, H, &opts), &up)
        }),
        probe: None,
    })
}

fn warp_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (random_warp(&mut rng), random_warp(&mut rng));
    let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let weighted = move |w: CameraWarp| w.to_array().iter().zip(c).map(|(p, q)| p * q).sum::<f64>();
    let g = crate::splat::WarpGrad { rotation: c[0], log_zoom: c[1], translation: [c[2], c[3]] };
    let (ga, gb) = a.compose_backward(&b, &g);
    let mut x = a.to_array().to_vec();
    x.extend(b.to_array());
    let mut grad = ga.to_array().to_vec();
    grad.extend(gb.to_array());
    Problem {
        x,
        grad,
        f: Box::new(move |v| {
            let a = CameraWarp::from_array([v[0], v[1], v[2], v[3]]);
            let b = CameraWarp::from_array([v[4], v[5], v[6], v[7]]);
            weighted(a.compose(&b))
        }),
        probe: None,
    }
}

/// Random weights keeping every hidden pre-activation clear of the ReLU
/// kink by more than the finite-difference reach.
fn randomized_mlp(template: &DeformMLP, mix: &GaussianMix2D, view: [f64; 2], rng: &mut ChaCha8Rng) -> DeformMLP {
    loop {
        let mut m = template.clone();
        m.params.iter_mut().for_each(|p| *p = rng.gen_range(-0.3..0.3));
        if m.relu_margin(mix, view) > 5e-3 {
            return m;
        }
    }
}

fn mlp_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = random_mix(4, &mut rng);
    let view = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let template = DeformMLP::new(3, 16, 3, 3, 4, [W as f64, H as f64], seed)?;
    let mlp = randomized_mlp(&template, &mix, view, &mut rng);
    let (d0, tape) = mlp.forward(&mix, view);
    let weights: Vec<f64> = (0..d0.raw().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut up = Deltas::zeros(mix.len(), mlp.n_sub);
    up.raw_mut().copy_from_slice(&weights);
    let (pg, mg) = mlp.backward(&mix, &tape, &up);
    let np = mlp.params.len();
    let mut x = mlp.params.clone();
    x.extend(mix_to_vec(&mix));
    let mut grad = pg;
    grad.extend(mg.fields().iter().flat_map(|(_, v)| v.iter().copied()));
    let n = x.len();
    let mut idx: Vec<usize> = probe(np, 60, &mut rng).unwrap_or_else(|| (0..np).collect());
    idx.extend(np..n);
    Ok(Problem {
        x,
        grad,
        f: Box::new(move |v| {
            let mut m = mlp.clone();
            m.params.copy_from_slice(&v[..np]);
            let g = mix_from_vec(&mix, &v[np..]);
            m.forward(&g, view).0.raw().iter().zip(&weights).map(|(a, b)| a * b).sum()
        }),
        probe: Some(idx),
    })
}

fn image_problem(x: &Image, grad: &Image, f: impl Fn(&Image) -> f64 + 'static, rng: &mut ChaCha8Rng) -> Problem {
    let template = x.clone();
    Problem {
        x: x.data().to_vec(),
        grad: grad.data().to_vec(),
        f: Box::new(move |v| {
            let mut img = template.clone();
            img.data_mut().copy_from_slice(v);
            f(&img)
        }),
        probe: probe(x.len(), 80, rng),
    }
}

fn loss_blur_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let avg = textured(3, 0.2, 0.8, &mut rng);
    // keep |avg - obs| away from the L1 kink
    let obs = avg.map(|v| v + if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.02..0.1));
    let ssim = SsimParams::default();
    let (_, g) = loss_blur(&avg, &obs, 0.2, ssim)?;
    Ok(image_problem(&avg, &g, move |a| loss_blur(a, &obs, 0.2, ssim).expect("same shape").0, &mut rng))
}

fn loss_struct_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let render = textured(3, 0.1, 0.9, &mut rng);
    let evs = textured(1, 0.1, 0.9, &mut rng);
    let cfg = StructureConfig::default();
    let target = StructTarget::new(&evs, weight_mask(&evs, &MaskConfig::default())?, &cfg)?;
    let ssim = SsimParams::default();
    let (_, g) = loss_struct(&render, &target, &cfg, ssim)?;
    Ok(image_problem(&render, &g, move |r| loss_struct(r, &target, &cfg, ssim).expect("same shape").0, &mut rng))
}

fn loss_evs_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = textured(3, 0.1, 0.9, &mut rng);
    let e = textured(3, 0.1, 0.9, &mut rng);
    let acc = Image::from_fn(W, H, |_, _| rng.gen_range(-3..=3) as f64);
    let (_, gs, ge) = loss_evs(&s, &e, &acc, 0.2)?;
    let n = s.len();
    let mut x = s.data().to_vec();
    x.extend_from_slice(e.data());
    let mut grad = gs.into_vec();
    grad.extend(ge.into_vec());
    let probe = probe(2 * n, 80, &mut rng);
    Ok(Problem {
        x,
        grad,
        f: Box::new(move |v| {
            let a = Image::from_vec(W, H, 3, v[..n].to_vec()).expect("sized");
            let b = Image::from_vec(W, H, 3, v[n..].to_vec()).expect("sized");
            loss_evs(&a, &b, &acc, 0.2).expect("same shape").0
        }),
        probe,
    })
}

fn loss_reg_r_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = textured(3, 0.2, 0.8, &mut rng);
    let obs = textured(3, 0.2, 0.8, &mut rng);
    let subs: Vec<Image> = (0..3).map(|_| base.map(|v| v + rng.gen_range(-0.05..0.05))).collect();
    let g = KernelSpec::gaussian(2.0);
    let (_, gsubs, gbase) = loss_reg_r(&subs, &base, &obs, &g)?;
    let n = base.len();
    let mut x: Vec<f64> = subs.iter().flat_map(|s| s.data().iter().copied()).collect();
    x.extend_from_slice(base.data());
    let mut grad: Vec<f64> = gsubs.into_iter().flat_map(Image::into_vec).collect();
    grad.extend(gbase.into_vec());
    let probe = probe(x.len(), 80, &mut rng);
    Ok(Problem {
        x,
        grad,
        f: Box::new(move |v| {
            let img = |k: usize| Image::from_vec(W, H, 3, v[k * n..(k + 1) * n].to_vec()).expect("sized");
            let subs: Vec<Image> = (0..3).map(img).collect();
            loss_reg_r(&subs, &img(3), &obs, &g).expect("same shape").0
        }),
        probe,
    })
}

fn loss_reg_e_problem(seed: u64) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let render = textured(3, 0.1, 0.9, &mut rng);
    let reference = textured(3, 0.1, 0.9, &mut rng);
    let (_, g) = loss_reg_e(&render, &reference)?;
    Ok(image_problem(&render, &g, move |r| loss_reg_e(r, &reference).expect("same shape").0, &mut rng))
}

/// Small session reused by every objective trial.
fn objective_session() -> Result<CaptureSession> {
    let motion = MotionSpec {
        n_blurred: 2,
        n_event_views: 3,
        n_test: 1,
        blur_span_px: 3.0,
        sweep_frames: 2,
        ..MotionSpec::default()
    };
    let scene = SceneSpec {
        width: W,
        height: H,
        generator: SceneGenerator::GaussianField { count: 6, scale_range: [1.5, 3.0], palette: vec![], margin: 3.0 },
        seed: 3,
    };
    build_session(&scene, &motion.build()?, &PoseNoise::default(), 0.2)
}

/// Flat addressing of the parameters touched by one objective sample.
#[derive(Clone, Copy)]
enum Slot {
    Mix(usize),
    Rgb(usize, usize),
    Event(usize, usize),
    Offset(usize, usize, usize),
    Mlp(usize),
}

fn slot_get(s: &SceneState, g: &SceneGrad, slot: Slot) -> (f64, f64) {
    match slot {
        Slot::Mix(i) => (mix_to_vec(&s.mix)[i], g.mix.fields().iter().flat_map(|(_, v)| v.iter()).nth(i).copied().unwrap_or(0.0)),
        Slot::Rgb(v, d) => (s.rgb_warps[v].to_array()[d], g.rgb_warps[v].to_array()[d]),
        Slot::Event(v, d) => (s.event_warps[v].to_array()[d], g.event_warps[v].to_array()[d]),
        Slot::Offset(v, k, d) => (s.blur.offsets[v][k].to_array()[d], g.offsets[v][k].to_array()[d]),
        Slot::Mlp(i) => (s.mlp.as_ref().expect("mlp").params[i], g.mlp.as_ref().expect("mlp")[i]),
    }
}

fn slot_set(s: &mut SceneState, slot: Slot, x: f64) {
    let set_warp = |w: &mut CameraWarp, d: usize| {
        let mut a = w.to_array();
        a[d] = x;
        *w = CameraWarp::from_array(a);
    };
    match slot {
        Slot::Mix(i) => {
            let mut v = mix_to_vec(&s.mix);
            v[i] = x;
            s.mix = mix_from_vec(&s.mix, &v);
        }
        Slot::Rgb(v, d) => set_warp(&mut s.rgb_warps[v], d),
        Slot::Event(v, d) => set_warp(&mut s.event_warps[v], d),
        Slot::Offset(v, k, d) => set_warp(&mut s.blur.offsets[v][k], d),
        Slot::Mlp(i) => s.mlp.as_mut().expect("mlp").params[i] = x,
    }
}

fn objective_problem(seed: u64) -> Result<Problem> {
    let session = objective_session()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = TrainSchedule {
        rng_seed: seed,
        n_sub: 3,
        init_spacing: 5.0,
        mlp: MlpSettings { width: 12, hidden_layers: 2, l_pos: 2, l_dir: 2 },
        ..TrainSchedule::default()
    };
    let mut state = initial_state(&session, &schedule)?;
    let view = rng.gen_range(0..session.rgb_views.len());
    let code = super::state::view_codes(&session)[view];
    let mlp = state.mlp.take().expect("schedule enables the network");
    state.mlp = Some(randomized_mlp(&mlp, &state.mix, code, &mut rng));
    let mut reference = state.mix.clone();
    reference.color_logits.iter_mut().for_each(|c| *c += rng.gen_range(-0.5..0.5));
    let config = ObjectiveConfig { alpha_min: 0.0, ..ObjectiveConfig::default() };
    let objective = Objective::new(&session, config, 2, Some(reference.clone()))?;
    let pair = rng.gen_range(0..objective.pairs().len());
    let (a, b) = objective.pairs()[pair];
    let sample_at = Sample { rgb_view: view, event_pair: pair };
    let (_, grad) = objective.evaluate(&state, sample_at, true)?;
    let grad = grad.expect("requested");

    let mut slots: Vec<Slot> = Vec::new();
    for d in 0..4 {
        slots.extend([Slot::Rgb(view, d), Slot::Event(a, d), Slot::Event(b, d)]);
        slots.extend((0..schedule.n_sub).map(|k| Slot::Offset(view, k, d)));
    }
    let n_mix = mix_to_vec(&state.mix).len();
    slots.extend(sample(&mut rng, n_mix, 24).into_iter().map(Slot::Mix));
    let n_mlp = state.mlp.as_ref().map_or(0, |m| m.params.len());
    slots.extend(sample(&mut rng, n_mlp, 16).into_iter().map(Slot::Mlp));

    let (x, g): (Vec<f64>, Vec<f64>) = slots.iter().map(|&s| slot_get(&state, &grad, s)).unzip();
    drop(objective);
    Ok(Problem {
        x,
        grad: g,
        f: Box::new(move |v| {
            let mut s = state.clone();
            for (&slot, &val) in slots.iter().zip(v) {
                slot_set(&mut s, slot, val);
            }
            let objective = Objective::new(&session, config, 2, Some(reference.clone())).expect("valid objective");
            objective.evaluate(&s, sample_at, false).expect("valid sample").0.total
        }),
        probe: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(rel_err(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn unknown_component_is_rejected() {
        assert!(gradcheck("nope", 1, 1e-4, 1e-4).is_err());
    }

    #[test]
    fn cheap_components_pass() {
        for c in ["warp", "loss_reg_e", "render"] {
            let r = gradcheck(c, 2, 1e-4, default_tol(c)).unwrap();
            assert!(r.pass, "{c}: {}", r.max_rel_err);
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut p = build("loss_reg_e", 0).unwrap();
        p.grad.iter_mut().for_each(|g| *g *= 1.01);
        assert!(check(&p, 1e-4).0 > 1e-3);
    }
}
