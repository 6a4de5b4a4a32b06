//! Event-camera model: contrast-threshold triggering on log intensity,
//! signed accumulation, double-integral intensity reconstruction and
//! sequence brightness balancing.

mod aevt;

pub use aevt::{decode_events, encode_events, read_events, write_events, AevtError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::par;

/// Lower clamp applied to linear intensity before taking the log.
pub const LOG_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

impl Event {
    fn key(&self) -> (u64, u16, u16) {
        (self.t_us, self.y, self.x)
    }
}

/// Time-ordered events with their sensor geometry and contrast threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    contrast_threshold: f64,
    pub events: Vec<Event>,
}

impl EventStream {
    /// The threshold is stored at `f32` precision, matching the container.
    pub fn new(
        width: usize,
        height: usize,
        contrast_threshold: f64,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        if !(contrast_threshold > 0.0) || !contrast_threshold.is_finite() {
            return Err(Error::invalid(format!(
                "contrast threshold must be > 0, got {contrast_threshold}"
            )));
        }
        if width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(Error::invalid("sensor larger than 65535 pixels per side"));
        }
        if let Some(e) = events
            .iter()
            .find(|e| e.x as usize >= width || e.y as usize >= height)
        {
            return Err(Error::invalid(format!(
                "event at ({}, {}) outside {width}x{height}",
                e.x, e.y
            )));
        }
        events.sort_by_key(Event::key);
        Ok(EventStream {
            width,
            height,
            contrast_threshold: contrast_threshold as f32 as f64,
            events,
        })
    }

    pub fn contrast_threshold(&self) -> f64 {
        self.contrast_threshold
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t_s < t <= t_e`.
    pub fn window(&self, t_s: u64, t_e: u64) -> &[Event] {
        if t_e <= t_s {
            return &[];
        }
        let a = self.events.partition_point(|e| e.t_us <= t_s);
        let b = self.events.partition_point(|e| e.t_us <= t_e);
        &self.events[a..b]
    }
}

/// Per-pixel log intensity at a timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct LogFrame {
    pub image: Image,
    pub t_us: u64,
    pub floor: f64,
}

impl LogFrame {
    pub fn from_intensity(intensity: &Image, t_us: u64, floor: f64) -> Result<Self> {
        intensity.check_gray("LogFrame")?;
        if !(floor > 0.0) {
            return Err(Error::invalid("log floor must be > 0"));
        }
        Ok(LogFrame {
            image: intensity.map(|v| v.max(floor).ln()),
            t_us,
            floor,
        })
    }

    /// Wraps values that are already log intensities.
    pub fn from_log(image: Image, t_us: u64) -> Self {
        LogFrame {
            image,
            t_us,
            floor: LOG_FLOOR,
        }
    }
}

/// Optional sensor non-idealities. Disabled by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventNoise {
    /// Probability that an emitted event is lost (the pixel still resets).
    pub drop_prob: f64,
    /// Relative standard deviation of a fixed per-pixel threshold mismatch.
    pub threshold_jitter: f64,
    pub seed: u64,
}

impl EventNoise {
    fn active(&self) -> bool {
        self.drop_prob > 0.0 || self.threshold_jitter > 0.0
    }
}

/// Streaming trigger model. Frames are pushed in time order; between two
/// frames each pixel's log signal is linearly interpolated and one event is
/// emitted per threshold crossing, the reference stepping by exactly one
/// threshold each time.
pub struct EventSimulator {
    width: usize,
    height: usize,
    threshold: f64,
    pixel_threshold: Option<Vec<f64>>,
    noise: EventNoise,
    base: Vec<f64>,
    counts: Vec<i64>,
    last: Vec<f64>,
    last_t: u64,
    rows: Vec<Vec<Event>>,
    row_rngs: Vec<ChaCha8Rng>,
    max_step: Option<f64>,
}

impl EventSimulator {
    pub fn new(first: &LogFrame, threshold: f64, noise: EventNoise) -> Result<Self> {
        first.image.check_gray("event simulation")?;
        let stream_theta = threshold as f32 as f64;
        if !(stream_theta > 0.0) {
            return Err(Error::invalid("contrast threshold must be > 0"));
        }
        let (w, h) = (first.image.width(), first.image.height());
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let pixel_threshold = (noise.threshold_jitter > 0.0).then(|| {
            (0..w * h)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (stream_theta * (1.0 + noise.threshold_jitter * z)).max(0.1 * stream_theta)
                })
                .collect()
        });
        let row_rngs = (0..h)
            .map(|y| ChaCha8Rng::seed_from_u64(noise.seed ^ (0x9E37_79B9 + y as u64)))
            .collect();
        Ok(EventSimulator {
            width: w,
            height: h,
            threshold: stream_theta,
            pixel_threshold,
            noise,
            base: first.image.data().to_vec(),
            counts: vec![0; w * h],
            last: first.image.data().to_vec(),
            last_t: first.t_us,
            rows: vec![Vec::new(); h],
            row_rngs,
            max_step: None,
        })
    }

    /// Rejects any frame step whose per-pixel log change exceeds `max_step`.
    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = Some(max_step);
        self
    }

    pub fn push(&mut self, frame: &LogFrame) -> Result<()> {
        if frame.t_us <= self.last_t {
            return Err(Error::invalid(format!(
                "frame timestamps must increase strictly ({} after {})",
                frame.t_us, self.last_t
            )));
        }
        if frame.image.width() != self.width
            || frame.image.height() != self.height
            || frame.image.channels() != 1
        {
            return Err(Error::dims(
                "log frame differs from the first frame's geometry",
            ));
        }
        if let Some(limit) = self.max_step {
            let worst = frame
                .image
                .data()
                .iter()
                .zip(&self.last)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if worst > limit {
                return Err(Error::Capture(format!(
                    "temporal sampling too coarse: log step {worst:.4} exceeds {limit:.4} at t={} us",
                    frame.t_us
                )));
            }
        }
        let (t0, t1) = (self.last_t as f64, frame.t_us as f64);
        let w = self.width;
        let theta = self.threshold;
        let pixel_threshold = self.pixel_threshold.as_deref();
        let drop_prob = if self.noise.active() {
            self.noise.drop_prob
        } else {
            0.0
        };
        let new = frame.image.data();
        let base = &self.base;

        // rows are independent; each owns its slice of the per-pixel state
        let mut work: Vec<RowState<'_>> = self
            .counts
            .chunks_mut(w)
            .zip(self.last.chunks_mut(w))
            .zip(self.rows.iter_mut())
            .zip(self.row_rngs.iter_mut())
            .enumerate()
            .map(|(y, (((counts, last), events), rng))| RowState {
                y,
                counts,
                last,
                events,
                rng,
            })
            .collect();
        let step_row = |row: &mut RowState<'_>| {
            let y = row.y;
            for x in 0..w {
                let i = y * w + x;
                let th = pixel_threshold.map_or(theta, |p| p[i]);
                let (v0, v1) = (row.last[x], new[i]);
                loop {
                    let r = base[i] + row.counts[x] as f64 * th;
                    let pol: i64 = if v1 - r > th {
                        1
                    } else if r - v1 > th {
                        -1
                    } else {
                        break;
                    };
                    let level = r + pol as f64 * th;
                    let frac = if v1 != v0 {
                        ((level - v0) / (v1 - v0)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    row.counts[x] += pol;
                    if drop_prob > 0.0 && row.rng.gen::<f64>() < drop_prob {
                        continue;
                    }
                    let t = (t0 + frac * (t1 - t0)).floor() as u64;
                    row.events.push(Event {
                        t_us: t,
                        x: x as u16,
                        y: y as u16,
                        polarity: pol as i8,
                    });
                }
                row.last[x] = v1;
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            work.par_iter_mut().for_each(step_row);
        }
        #[cfg(not(feature = "parallel"))]
        work.iter_mut().for_each(step_row);
        self.last_t = frame.t_us;
        Ok(())
    }

    pub fn finish(self) -> Result<EventStream> {
        let events: Vec<Event> = self.rows.into_iter().flatten().collect();
        EventStream::new(self.width, self.height, self.threshold, events)
    }
}

struct RowState<'a> {
    y: usize,
    counts: &'a mut [i64],
    last: &'a mut [f64],
    events: &'a mut Vec<Event>,
    rng: &'a mut ChaCha8Rng,
}

/// Simulates the events triggered by an ordered sequence of log frames.
pub fn simulate_events(frames: &[LogFrame], threshold: f64) -> Result<EventStream> {
    simulate_events_with_noise(frames, threshold, EventNoise::default())
}

pub fn simulate_events_with_noise(
    frames: &[LogFrame],
    threshold: f64,
    noise: EventNoise,
) -> Result<EventStream> {
    if frames.len() < 2 {
        return Err(Error::invalid("event simulation needs at least two frames"));
    }
    let mut sim = EventSimulator::new(&frames[0], threshold, noise)?;
    for f in &frames[1..] {
        sim.push(f)?;
    }
    sim.finish()
}

/// Signed per-pixel event count over `(t_s, t_e]`.
pub fn accumulate(stream: &EventStream, t_s: u64, t_e: u64) -> Image {
    let mut img = Image::new(stream.width, stream.height, 1);
    for e in stream.window(t_s, t_e) {
        let i = e.y as usize * stream.width + e.x as usize;
        img.data_mut()[i] += e.polarity as f64;
    }
    img
}

/// Double-integral reconstruction: `exp(anchor + theta * count(anchor.t, t])`,
/// clamped to `[0, 1]`.
pub fn reconstruct_intensity(stream: &EventStream, anchor: &LogFrame, t_us: u64) -> Result<Image> {
    if t_us < anchor.t_us {
        return Err(Error::invalid(format!(
            "reconstruction time {t_us} precedes anchor {}",
            anchor.t_us
        )));
    }
    if anchor.image.width() != stream.width || anchor.image.height() != stream.height {
        return Err(Error::dims("anchor frame does not match sensor geometry"));
    }
    let acc = accumulate(stream, anchor.t_us, t_us);
    let theta = stream.contrast_threshold();
    Ok(anchor
        .image
        .zip_map(&acc, |l, n| (l + theta * n).exp().clamp(0.0, 1.0)))
}

fn mean_std(img: &Image) -> (f64, f64) {
    let m = img.mean();
    let var = img.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / img.len().max(1) as f64;
    (m, var.sqrt())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Affine moment matching of every frame to the sequence-median mean and
/// standard deviation, clamped to `[0, 1]`. Zero-variance frames only get
/// their offset corrected.
pub fn brightness_balance(seq: &[Image]) -> Result<Vec<Image>> {
    Ok(brightness_balance_unclamped(seq)?
        .into_iter()
        .map(|f| f.clamp01())
        .collect())
}

pub(crate) fn brightness_balance_unclamped(seq: &[Image]) -> Result<Vec<Image>> {
    let Some(first) = seq.first() else {
        return Ok(Vec::new());
    };
    for f in seq {
        f.check_gray("brightness_balance")?;
        first.check_same_shape(f, "brightness_balance")?;
    }
    let stats: Vec<(f64, f64)> = seq.iter().map(mean_std).collect();
    let target_mean = median(stats.iter().map(|s| s.0).collect());
    let target_std = median(stats.iter().map(|s| s.1).collect());
    Ok(seq
        .iter()
        .zip(&stats)
        .map(|(f, &(m, s))| {
            let gain = if s > 1e-12 { target_std / s } else { 1.0 };
            f.map(|v| (v - m) * gain + target_mean)
        })
        .collect())
}

/// Row-parallel helper used by capture: log frame of a grayscale intensity.
pub(crate) fn log_image(intensity: &Image, floor: f64) -> Image {
    let w = intensity.width();
    let src = intensity.data();
    let mut out = Image::new(w, intensity.height(), 1);
    par::for_each_chunk_mut(out.data_mut(), w, |y, dst| {
        for x in 0..w {
            dst[x] = src[y * w + x].max(floor).ln();
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn ramp_frames(from: f64, to: f64, steps: usize, duration: u64) -> Vec<LogFrame> {
        (0..=steps)
            .map(|k| {
                let f = k as f64 / steps as f64;
                let v = from + f * (to - from);
                LogFrame::from_log(
                    Image::filled(1, 1, 1, v),
                    (f * duration as f64).round() as u64,
                )
            })
            .collect()
    }

    #[test]
    fn constant_signal_is_silent() {
        let frames: Vec<_> = (0..5)
            .map(|k| LogFrame::from_log(Image::filled(4, 3, 1, -0.7), k * 100))
            .collect();
        assert!(simulate_events(&frames, 0.2).unwrap().is_empty());
    }

    #[test]
    fn analytic_ramp_crossings() {
        let theta = 0.25f64;
        let frames = vec![
            LogFrame::from_log(Image::filled(1, 1, 1, 0.0), 0),
            LogFrame::from_log(Image::filled(1, 1, 1, 1.01), 1000),
        ];
        let s = simulate_events(&frames, theta).unwrap();
        let theta32 = theta as f32 as f64;
        let oracle: Vec<u64> = (1..=4)
            .map(|k| (1000.0 * k as f64 * theta32 / 1.01).floor() as u64)
            .collect();
        assert_eq!(oracle, vec![247, 495, 742, 990]);
        let got: Vec<u64> = s.events.iter().map(|e| e.t_us).collect();
        assert_eq!(got, oracle);
        assert!(s.events.iter().all(|e| e.polarity == 1));

        // sub-sampled ramp gives the same crossings
        let fine = simulate_events(&ramp_frames(0.0, 1.01, 8, 1000), theta).unwrap();
        let fine_t: Vec<u64> = fine.events.iter().map(|e| e.t_us).collect();
        for (a, b) in fine_t.iter().zip(&oracle) {
            assert!(a.abs_diff(*b) <= 1);
        }

        let down = vec![
            LogFrame::from_log(Image::filled(1, 1, 1, 0.0), 0),
            LogFrame::from_log(Image::filled(1, 1, 1, -1.01), 1000),
        ];
        let s = simulate_events(&down, theta).unwrap();
        assert_eq!(s.events.iter().map(|e| e.t_us).collect::<Vec<_>>(), oracle);
        assert!(s.events.iter().all(|e| e.polarity == -1));
    }

    #[test]
    fn rejects_bad_sequences() {
        let a = LogFrame::from_log(Image::filled(2, 2, 1, 0.0), 10);
        let b = LogFrame::from_log(Image::filled(2, 2, 1, 0.0), 10);
        let c = LogFrame::from_log(Image::filled(3, 2, 1, 0.0), 20);
        assert!(simulate_events(&[a.clone()], 0.2).is_err());
        assert!(simulate_events(&[a.clone(), b], 0.2).is_err());
        assert!(simulate_events(&[a, c], 0.2).is_err());
    }

    #[test]
    fn accumulation_and_reconstruction() {
        let theta = 0.25;
        let frames = vec![
            LogFrame::from_log(Image::from_fn(2, 1, |_, _| -1.5), 0),
            LogFrame::from_log(
                Image::from_fn(2, 1, |x, _| if x == 0 { -1.5 } else { -1.5 + 1.01 }),
                1000,
            ),
        ];
        let s = simulate_events(&frames, theta).unwrap();
        assert_eq!(accumulate(&s, 500, 500).data(), &[0.0, 0.0]);
        let full = accumulate(&s, 0, 1000);
        assert_eq!(full.data(), &[0.0, 4.0]);
        let a = accumulate(&s, 0, 500);
        let b = accumulate(&s, 500, 1000);
        assert_eq!(a.data()[1] + b.data()[1], 4.0);

        let anchor = &frames[0];
        let at0 = reconstruct_intensity(&s, anchor, 0).unwrap();
        assert_eq!(at0.data()[0], (-1.5f64).exp());
        let end = reconstruct_intensity(&s, anchor, 1000).unwrap();
        assert_eq!(end.data()[0], (-1.5f64).exp());
        let truth = (-1.5f64 + 1.01).exp();
        let expect = (-1.5 + 4.0 * s.contrast_threshold()).exp();
        assert!((end.data()[1] - expect).abs() < 1e-15);
        assert!(((end.data()[1] - truth) / truth).abs() <= theta.exp() - 1.0);
        assert!(
            reconstruct_intensity(&s, &LogFrame::from_log(Image::filled(2, 1, 1, 0.0), 10), 5)
                .is_err()
        );
    }

    #[test]
    fn balance_examples() {
        let x = Image::from_fn(6, 5, |i, j| 0.3 + 0.05 * ((i * 3 + j) % 5) as f64);
        let same = brightness_balance(&[x.clone(), x.clone(), x.clone()]).unwrap();
        for f in &same {
            for (a, b) in f.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let seq = [x.clone(), x.map(|v| v + 0.1), x.map(|v| v - 0.1)];
        let out = brightness_balance(&seq).unwrap();
        for f in &out {
            for (a, b) in f.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        // frames with prescribed moments
        let z = Image::from_fn(8, 8, |i, j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
        let frames: Vec<Image> = [(0.3, 0.1), (0.5, 0.1), (0.7, 0.2)]
            .iter()
            .map(|&(m, s)| z.map(|v| m + s * v))
            .collect();
        let out = brightness_balance_unclamped(&frames).unwrap();
        for f in &out {
            let (m, s) = mean_std(f);
            assert!((m - 0.5).abs() < 1e-9 && (s - 0.1).abs() < 1e-9);
        }

        // zero variance frame is only shifted
        let flat = brightness_balance(&[
            Image::filled(3, 3, 1, 0.2),
            Image::filled(3, 3, 1, 0.4),
            Image::filled(3, 3, 1, 0.6),
        ])
        .unwrap();
        assert!(flat
            .iter()
            .all(|f| f.data().iter().all(|v| (v - 0.4).abs() < 1e-12)));
    }

    #[test]
    fn noise_drops_and_jitters_deterministically() {
        let frames = ramp_frames(0.0, 3.0, 30, 3000);
        let noise = EventNoise {
            drop_prob: 0.3,
            threshold_jitter: 0.1,
            seed: 5,
        };
        let a = simulate_events_with_noise(&frames, 0.1, noise).unwrap();
        let b = simulate_events_with_noise(&frames, 0.1, noise).unwrap();
        assert_eq!(a, b);
        let clean = simulate_events(&frames, 0.1).unwrap();
        assert!(a.len() < clean.len());
    }

    fn random_frames(seed: u64, n: usize) -> Vec<LogFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cur: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let mut out = vec![LogFrame::from_log(
            Image::from_vec(4, 3, 1, cur.clone()).unwrap(),
            0,
        )];
        for k in 1..n {
            for v in cur.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
            out.push(LogFrame::from_log(
                Image::from_vec(4, 3, 1, cur.clone()).unwrap(),
                k as u64 * 97,
            ));
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn double_integral_bound(seed in 0u64..10_000, a in 0usize..20, b in 0usize..20) {
            let frames = random_frames(seed, 20);
            let s = simulate_events(&frames, 0.2).unwrap();
            let (i, j) = (a.min(b), a.max(b));
            let acc = accumulate(&s, frames[i].t_us, frames[j].t_us);
            let theta = s.contrast_threshold();
            for p in 0..12 {
                let dlog = frames[j].image.data()[p] - frames[i].image.data()[p];
                // the reference of each endpoint lies within theta of its value
                prop_assert!((dlog - theta * acc.data()[p]).abs() <= 2.0 * theta + 1e-12);
                let from0 = frames[j].image.data()[p] - frames[0].image.data()[p];
                let acc0 = accumulate(&s, 0, frames[j].t_us).data()[p];
                prop_assert!((from0 - theta * acc0).abs() <= theta + 1e-12);
            }
            let mid = frames[(i + j) / 2].t_us;
            let sum = accumulate(&s, frames[i].t_us, mid).zip_map(&accumulate(&s, mid, frames[j].t_us), |x, y| x + y);
            prop_assert_eq!(sum, acc);
        }

        #[test]
        fn polarity_antisymmetry(seed in 0u64..10_000) {
            // dyadic steps keep the mirrored signal exact in floating point
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dev = [0.0f64; 6];
            let mut pos = vec![LogFrame::from_log(Image::filled(3, 2, 1, 0.0), 0)];
            let mut neg = pos.clone();
            for k in 1..12u64 {
                for d in dev.iter_mut() {
                    *d += rng.gen_range(-40i32..40) as f64 / 128.0;
                }
                pos.push(LogFrame::from_log(Image::from_vec(3, 2, 1, dev.to_vec()).unwrap(), k * 64));
                neg.push(LogFrame::from_log(Image::from_vec(3, 2, 1, dev.iter().map(|d| -d).collect()).unwrap(), k * 64));
            }
            let theta = 0.1875;
            let p = simulate_events(&pos, theta).unwrap();
            let n = simulate_events(&neg, theta).unwrap();
            prop_assert_eq!(p.len(), n.len());
            for (a, b) in p.events.iter().zip(&n.events) {
                prop_assert_eq!((a.t_us, a.x, a.y), (b.t_us, b.x, b.y));
                prop_assert_eq!(a.polarity, -b.polarity);
            }
        }
    }
}
