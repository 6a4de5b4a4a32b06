use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splat::CameraWarp;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    pub t_us: u64,
    pub warp: CameraWarp,
}

/// Where held-out test views sit relative to the training trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestPlacement {
    /// On the trajectory, between training timestamps.
    #[default]
    Interleaved,
    /// Translations pushed 25% beyond the trajectory's excursion.
    Extrapolated,
}

/// Camera path plus the sampling instants of both sensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub knots: Vec<Knot>,
    /// `(t_open, t_close)` of each RGB exposure.
    pub exposures: Vec<[u64; 2]>,
    pub event_rate_hz: f64,
    pub event_view_times: Vec<u64>,
    pub test_times: Vec<u64>,
    #[serde(default)]
    pub test_placement: TestPlacement,
}

impl TrajectorySpec {
    pub fn start(&self) -> u64 {
        self.knots.first().map_or(0, |k| k.t_us)
    }

    pub fn end(&self) -> u64 {
        self.knots.last().map_or(0, |k| k.t_us)
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::invalid("trajectory needs at least one knot"));
        }
        if self.knots.windows(2).any(|k| k[0].t_us >= k[1].t_us) {
            return Err(Error::invalid(
                "trajectory knots must be strictly time-sorted",
            ));
        }
        if self.knots.iter().any(|k| !k.warp.is_finite()) {
            return Err(Error::invalid("trajectory knots must be finite"));
        }
        let (a, b) = (self.start(), self.end());
        for e in &self.exposures {
            if e[0] > e[1] || e[0] < a || e[1] > b {
                return Err(Error::Capture(format!(
                    "exposure window [{}, {}] outside trajectory [{a}, {b}]",
                    e[0], e[1]
                )));
            }
        }
        for &t in self.event_view_times.iter().chain(&self.test_times) {
            if t < a || t > b {
                return Err(Error::Capture(format!(
                    "timestamp {t} outside trajectory [{a}, {b}]"
                )));
            }
        }
        if !(self.event_rate_hz > 0.0) {
            return Err(Error::invalid("event sampling rate must be > 0"));
        }
        Ok(())
    }

    /// Cubic Hermite interpolation of the warp parameters with finite
    /// difference tangents; clamped to the end knots outside the span.
    pub fn warp_at(&self, t: f64) -> CameraWarp {
        let k = &self.knots;
        if k.len() == 1 || t <= k[0].t_us as f64 {
            return k[0].warp;
        }
        if t >= k[k.len() - 1].t_us as f64 {
            return k[k.len() - 1].warp;
        }
        let i = k.partition_point(|q| (q.t_us as f64) <= t) - 1;
        let time = |j: usize| k[j].t_us as f64;
        let p = |j: usize| k[j].warp.to_array();
        let tangent = |j: usize| -> [f64; 4] {
            let (a, b) = (j.saturating_sub(1), (j + 1).min(k.len() - 1));
            let (pa, pb) = (p(a), p(b));
            std::array::from_fn(|d| (pb[d] - pa[d]) / (time(b) - time(a)))
        };
        let h = time(i + 1) - time(i);
        let s = (t - time(i)) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (p0, p1, m0, m1) = (p(i), p(i + 1), tangent(i), tangent(i + 1));
        CameraWarp::from_array(std::array::from_fn(|d| {
            h00 * p0[d] + h10 * h * m0[d] + h01 * p1[d] + h11 * h * m1[d]
        }))
    }

    /// Warp of a held-out test view at `t`, honoring the placement mode.
    pub fn test_warp_at(&self, t: f64) -> CameraWarp {
        let w = self.warp_at(t);
        match self.test_placement {
            TestPlacement::Interleaved => w,
            TestPlacement::Extrapolated => CameraWarp {
                translation: [1.25 * w.translation[0], 1.25 * w.translation[1]],
                ..w
            },
        }
    }
}

/// Parametric hand-held sweep: mostly horizontal zig-zag with a slow
/// vertical drift and a small roll, sampled by a duty-cycled RGB camera and
/// an unsynchronized event sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSpec {
    pub frame_interval_us: u64,
    pub duty_cycle: f64,
    pub n_blurred: usize,
    pub n_event_views: usize,
    pub n_test: usize,
    /// Horizontal travel during one exposure at cruise speed, pixels.
    pub blur_span_px: f64,
    /// Frames per sweep before the direction reverses.
    pub sweep_frames: usize,
    pub vertical_amplitude_px: f64,
    pub roll_amplitude_deg: f64,
    pub zoom_amplitude: f64,
    pub event_rate_hz: f64,
    pub test_placement: TestPlacement,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            frame_interval_us: 40_000,
            duty_cycle: 0.8,
            n_blurred: 12,
            n_event_views: 24,
            n_test: 6,
            blur_span_px: 10.0,
            sweep_frames: 3,
            vertical_amplitude_px: 3.0,
            roll_amplitude_deg: 1.0,
            zoom_amplitude: 0.0,
            event_rate_hz: 10_000.0,
            test_placement: TestPlacement::Interleaved,
        }
    }
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_interval_us == 0 || self.n_blurred == 0 || self.sweep_frames == 0 {
            return Err(Error::Config(
                "motion needs a positive frame interval, frame count and sweep length".into(),
            ));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err(Error::Config("duty_cycle must lie in (0, 1]".into()));
        }
        if !(self.event_rate_hz > 0.0) {
            return Err(Error::Config("event_rate_hz must be > 0".into()));
        }
        Ok(())
    }

    pub fn duration_us(&self) -> u64 {
        self.frame_interval_us * self.n_blurred as u64
    }

    pub fn build(&self) -> Result<TrajectorySpec> {
        self.validate()?;
        let period = self.frame_interval_us as f64;
        let duration = self.duration_us() as f64;
        let exposure = self.duty_cycle * period;
        let speed = self.blur_span_px / exposure;
        let half_sweep = speed * self.sweep_frames as f64 * period / 2.0;
        let sweep = self.sweep_frames as f64 * period;
        // triangle wave centred on zero, starting at the left extreme
        let tri = |t: f64| {
            let phase = (t / sweep).rem_euclid(2.0);
            let f = if phase < 1.0 { phase } else { 2.0 - phase };
            -half_sweep + 2.0 * half_sweep * f
        };
        let step = period / 4.0;
        let n_knots = (duration / step).round() as usize;
        let knots = (0..=n_knots)
            .map(|j| {
                let t = (j as f64 * step).min(duration);
                let u = t / duration;
                let tau = std::f64::consts::TAU;
                Knot {
                    t_us: t.round() as u64,
                    warp: CameraWarp {
                        rotation: self.roll_amplitude_deg.to_radians() * (tau * 1.5 * u).sin(),
                        log_zoom: self.zoom_amplitude * (tau * u).sin(),
                        translation: [tri(t), self.vertical_amplitude_px * (tau * u).sin()],
                    },
                }
            })
            .collect();
        let exposures = (0..self.n_blurred)
            .map(|i| {
                let open = i as f64 * period + 0.5 * (period - exposure);
                [open.round() as u64, (open + exposure).round() as u64]
            })
            .collect();
        // event views and test views fall between frame boundaries on purpose
        let spread = |n: usize, offset: f64| -> Vec<u64> {
            (0..n)
                .map(|j| ((j as f64 + offset) * duration / n as f64).round() as u64)
                .collect()
        };
        Ok(TrajectorySpec {
            knots,
            exposures,
            event_rate_hz: self.event_rate_hz,
            event_view_times: spread(self.n_event_views, 0.37),
            test_times: spread(self.n_test, 0.61),
            test_placement: self.test_placement,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_hits_knots_and_is_smooth() {
        let spec = MotionSpec::default().build().unwrap();
        spec.validate().unwrap();
        for k in &spec.knots {
            let w = spec.warp_at(k.t_us as f64);
            assert!((w.translation[0] - k.warp.translation[0]).abs() < 1e-9);
        }
        // cruise speed reproduces the requested blur span
        let e = spec.exposures[1];
        let a = spec.warp_at(e[0] as f64).translation[0];
        let b = spec.warp_at(e[1] as f64).translation[0];
        assert!(((b - a).abs() - 10.0).abs() < 0.5, "span {}", (b - a).abs());
    }

    #[test]
    fn rejects_windows_outside_span() {
        let mut spec = MotionSpec::default().build().unwrap();
        spec.exposures.push([0, spec.end() + 1]);
        assert!(matches!(spec.validate(), Err(Error::Capture(_))));
    }

    #[test]
    fn asynchronous_timelines() {
        let spec = MotionSpec::default().build().unwrap();
        for t in &spec.event_view_times {
            assert!(spec.exposures.iter().all(|e| e[0] != *t && e[1] != *t));
        }
    }
}
