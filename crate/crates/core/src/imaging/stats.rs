use super::Image;
use crate::error::{Error, Result};

/// Position of the `q` quantile in a sorted array of length `n`:
/// lower index, upper index and interpolation fraction.
fn rank(n: usize, q: f64) -> (usize, usize, f64) {
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, pos - lo as f64)
}

fn sorted_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// Order statistic at fraction `q` by linear interpolation between ranks.
pub fn percentile(img: &Image, q: f64) -> Result<f64> {
    if img.is_empty() {
        return Err(Error::invalid("percentile of an empty image"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!(
            "percentile fraction {q} outside [0, 1]"
        )));
    }
    let mut v = img.data().to_vec();
    v.sort_by(f64::total_cmp);
    let (a, b, f) = rank(v.len(), q);
    Ok(v[a] + f * (v[b] - v[a]))
}

/// Everything needed to backpropagate through [`robust_normalize`].
#[derive(Clone, Debug)]
pub struct NormalizeTape {
    lo: f64,
    hi: f64,
    lo_at: (usize, usize, f64),
    hi_at: (usize, usize, f64),
}

impl NormalizeTape {
    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    fn degenerate(&self) -> bool {
        self.hi <= self.lo
    }

    /// Gradient with respect to the normalizer's input, given the gradient
    /// with respect to its output. The clip bounds are order statistics, so
    /// their sensitivity is routed to the pixels that realize them.
    pub fn backward(&self, input: &Image, grad_out: &Image) -> Image {
        let mut grad = Image::new(input.width(), input.height(), 1);
        if self.degenerate() {
            return grad;
        }
        let range = self.hi - self.lo;
        let (mut d_lo, mut d_hi) = (0.0, 0.0);
        for (i, (&x, &g)) in input.data().iter().zip(grad_out.data()).enumerate() {
            if x < self.lo || x > self.hi || g == 0.0 {
                continue;
            }
            let n = (x - self.lo) / range;
            grad.data_mut()[i] += g / range;
            d_lo -= g * (1.0 - n) / range;
            d_hi -= g * n / range;
        }
        let data = grad.data_mut();
        let (a, b, f) = self.lo_at;
        data[a] += d_lo * (1.0 - f);
        data[b] += d_lo * f;
        let (a, b, f) = self.hi_at;
        data[a] += d_hi * (1.0 - f);
        data[b] += d_hi * f;
        grad
    }
}

/// Clips to the `[clip_lo, clip_hi]` percentile range (in percent) and maps
/// affinely onto `[0, 1]`. A degenerate range yields all zeros.
pub fn robust_normalize(img: &Image, clip_lo: f64, clip_hi: f64) -> Result<Image> {
    Ok(robust_normalize_with_tape(img, clip_lo, clip_hi)?.0)
}

pub(crate) fn robust_normalize_with_tape(
    img: &Image,
    clip_lo: f64,
    clip_hi: f64,
) -> Result<(Image, NormalizeTape)> {
    img.check_gray("robust_normalize")?;
    if !(clip_lo < clip_hi) || clip_lo < 0.0 || clip_hi > 100.0 {
        return Err(Error::invalid(format!(
            "clip percentiles must satisfy 0 <= lo < hi <= 100, got ({clip_lo}, {clip_hi})"
        )));
    }
    if img.is_empty() {
        return Err(Error::invalid("robust_normalize of an empty image"));
    }
    let values = img.data();
    let order = sorted_indices(values);
    let at = |q: f64| {
        let (a, b, f) = rank(values.len(), q);
        let (ia, ib) = (order[a], order[b]);
        (values[ia] + f * (values[ib] - values[ia]), (ia, ib, f))
    };
    let (lo, lo_at) = at(clip_lo / 100.0);
    let (hi, hi_at) = at(clip_hi / 100.0);
    let tape = NormalizeTape {
        lo,
        hi,
        lo_at,
        hi_at,
    };
    let out = if tape.degenerate() {
        Image::new(img.width(), img.height(), 1)
    } else {
        img.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
    };
    Ok((out, tape))
}
