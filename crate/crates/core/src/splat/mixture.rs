use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// A set of anisotropic 2D Gaussians stored as flat parameter arrays.
/// Vector-valued fields are interleaved (`means[2i..2i+2]` is Gaussian `i`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMix2D {
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub depth_keys: Vec<f64>,
    pub color_logits: Vec<f64>,
}

/// One Gaussian in natural units, for construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
    pub rotation: f64,
    pub opacity: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

impl GaussianMix2D {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.means.extend_from_slice(&g.mean);
        self.log_scales
            .extend_from_slice(&[g.scale[0].ln(), g.scale[1].ln()]);
        self.rotations.push(g.rotation);
        self.opacity_logits.push(logit(g.opacity));
        self.depth_keys.push(g.depth);
        self.color_logits.extend(g.color.iter().map(|&c| logit(c)));
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn color(&self, i: usize) -> [f64; 3] {
        std::array::from_fn(|k| sigmoid(self.color_logits[3 * i + k]))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.means.len() != 2 * n
            || self.log_scales.len() != 2 * n
            || self.opacity_logits.len() != n
            || self.depth_keys.len() != n
            || self.color_logits.len() != 3 * n
        {
            return Err(Error::dims(
                "mixture parameter arrays disagree on the Gaussian count",
            ));
        }
        let all = [
            &self.means,
            &self.log_scales,
            &self.rotations,
            &self.opacity_logits,
            &self.depth_keys,
            &self.color_logits,
        ];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid("mixture parameters must be finite"));
        }
        Ok(())
    }

    /// Storage indices ordered front to back (ascending depth key, ties by index).
    pub fn depth_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.depth_keys[a]
                .total_cmp(&self.depth_keys[b])
                .then(a.cmp(&b))
        });
        order
    }

    /// Returns a copy with Gaussians stored in `perm` order.
    pub fn permuted(&self, perm: &[usize]) -> GaussianMix2D {
        let mut out = GaussianMix2D::new();
        for &i in perm {
            out.means.extend_from_slice(&self.means[2 * i..2 * i + 2]);
            out.log_scales
                .extend_from_slice(&self.log_scales[2 * i..2 * i + 2]);
            out.rotations.push(self.rotations[i]);
            out.opacity_logits.push(self.opacity_logits[i]);
            out.depth_keys.push(self.depth_keys[i]);
            out.color_logits
                .extend_from_slice(&self.color_logits[3 * i..3 * i + 3]);
        }
        out
    }
}

/// Gradient with respect to the trainable mixture parameters (depth keys are fixed).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MixGrad {
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub color_logits: Vec<f64>,
}

impl MixGrad {
    pub fn zeros(n: usize) -> Self {
        MixGrad {
            means: vec![0.0; 2 * n],
            log_scales: vec![0.0; 2 * n],
            rotations: vec![0.0; n],
            opacity_logits: vec![0.0; n],
            color_logits: vec![0.0; 3 * n],
        }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.means,
            &mut self.log_scales,
            &mut self.rotations,
            &mut self.opacity_logits,
            &mut self.color_logits,
        ]
    }

    pub fn fields(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("means", &self.means),
            ("log_scales", &self.log_scales),
            ("rotations", &self.rotations),
            ("opacity_logits", &self.opacity_logits),
            ("color_logits", &self.color_logits),
        ]
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &MixGrad, k: f64) {
        let theirs = other.fields();
        for (mine, (_, theirs)) in self.fields_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += k * b;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for f in self.fields_mut() {
            f.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.fields()
            .iter()
            .all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}
