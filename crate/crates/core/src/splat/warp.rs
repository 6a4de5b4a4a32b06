use serde::{Deserialize, Serialize};

/// 2D similarity transform about the canvas center `c`, mapping a camera
/// pixel `p` to the scene point `c + s R(rotation) (p - c) + translation`
/// with `s = exp(log_zoom)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraWarp {
    pub rotation: f64,
    pub log_zoom: f64,
    pub translation: [f64; 2],
}

/// Gradient with respect to the four warp parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WarpGrad {
    pub rotation: f64,
    pub log_zoom: f64,
    pub translation: [f64; 2],
}

impl WarpGrad {
    pub fn add(&mut self, o: &WarpGrad) {
        self.rotation += o.rotation;
        self.log_zoom += o.log_zoom;
        self.translation[0] += o.translation[0];
        self.translation[1] += o.translation[1];
    }

    pub fn scaled(&self, k: f64) -> WarpGrad {
        WarpGrad {
            rotation: k * self.rotation,
            log_zoom: k * self.log_zoom,
            translation: [k * self.translation[0], k * self.translation[1]],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [
            self.rotation,
            self.log_zoom,
            self.translation[0],
            self.translation[1],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn rot(a: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl CameraWarp {
    pub const IDENTITY: CameraWarp = CameraWarp {
        rotation: 0.0,
        log_zoom: 0.0,
        translation: [0.0, 0.0],
    };

    pub fn new(rotation: f64, log_zoom: f64, translation: [f64; 2]) -> Self {
        CameraWarp {
            rotation,
            log_zoom,
            translation,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        CameraWarp {
            translation: [tx, ty],
            ..Self::IDENTITY
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [
            self.rotation,
            self.log_zoom,
            self.translation[0],
            self.translation[1],
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        CameraWarp {
            rotation: a[0],
            log_zoom: a[1],
            translation: [a[2], a[3]],
        }
    }

    /// Camera pixel to scene point.
    pub fn apply(&self, center: [f64; 2], p: [f64; 2]) -> [f64; 2] {
        let s = self.log_zoom.exp();
        let r = rot(self.rotation, [p[0] - center[0], p[1] - center[1]]);
        [
            center[0] + s * r[0] + self.translation[0],
            center[1] + s * r[1] + self.translation[1],
        ]
    }

    /// Scene point to camera pixel.
    pub fn apply_inverse(&self, center: [f64; 2], x: [f64; 2]) -> [f64; 2] {
        let inv_s = (-self.log_zoom).exp();
        let r = rot(
            -self.rotation,
            [
                x[0] - center[0] - self.translation[0],
                x[1] - center[1] - self.translation[1],
            ],
        );
        [center[0] + inv_s * r[0], center[1] + inv_s * r[1]]
    }

    /// The warp mapping scene points back to camera pixels.
    pub fn inverse(&self) -> CameraWarp {
        let inv_s = (-self.log_zoom).exp();
        let t = rot(-self.rotation, self.translation);
        CameraWarp {
            rotation: -self.rotation,
            log_zoom: -self.log_zoom,
            translation: [-inv_s * t[0], -inv_s * t[1]],
        }
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &CameraWarp) -> CameraWarp {
        let s = self.log_zoom.exp();
        let t = rot(self.rotation, inner.translation);
        CameraWarp {
            rotation: self.rotation + inner.rotation,
            log_zoom: self.log_zoom + inner.log_zoom,
            translation: [
                self.translation[0] + s * t[0],
                self.translation[1] + s * t[1],
            ],
        }
    }

    /// Splits the gradient of a composed warp `self ∘ inner` into gradients
    /// for `self` and for `inner`.
    pub fn compose_backward(&self, inner: &CameraWarp, g: &WarpGrad) -> (WarpGrad, WarpGrad) {
        let s = self.log_zoom.exp();
        let rt = rot(self.rotation, inner.translation);
        let st = [s * rt[0], s * rt[1]];
        // d(st)/d(rotation) = J st with J the 90° rotation
        let d_rot = g.translation[0] * -st[1] + g.translation[1] * st[0];
        let d_zoom = g.translation[0] * st[0] + g.translation[1] * st[1];
        let outer = WarpGrad {
            rotation: g.rotation + d_rot,
            log_zoom: g.log_zoom + d_zoom,
            translation: g.translation,
        };
        let back = rot(-self.rotation, g.translation);
        let inner_g = WarpGrad {
            rotation: g.rotation,
            log_zoom: g.log_zoom,
            translation: [s * back[0], s * back[1]],
        };
        (outer, inner_g)
    }

    /// Linear interpolation of the parameters.
    pub fn lerp(&self, other: &CameraWarp, f: f64) -> CameraWarp {
        let a = self.to_array();
        let b = other.to_array();
        CameraWarp::from_array(std::array::from_fn(|i| a[i] + f * (b[i] - a[i])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_composition() {
        let c = [64.0, 48.0];
        let a = CameraWarp::new(0.3, 0.1, [2.0, -1.5]);
        let b = CameraWarp::new(-0.7, -0.05, [0.5, 3.0]);
        let p = [10.0, 70.0];
        let q = a.apply_inverse(c, a.apply(c, p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        let ab = a.compose(&b).apply(c, p);
        let direct = a.apply(c, b.apply(c, p));
        assert!((ab[0] - direct[0]).abs() < 1e-12 && (ab[1] - direct[1]).abs() < 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let a = CameraWarp::new(0.4, -0.2, [3.0, -1.0]);
        let c = [16.0, 12.0];
        for w in [a.compose(&a.inverse()), a.inverse().compose(&a)] {
            let p = w.apply(c, [5.0, 7.0]);
            assert!((p[0] - 5.0).abs() < 1e-12 && (p[1] - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_backward_matches_finite_differences() {
        let a = CameraWarp::new(0.3, 0.1, [2.0, -1.5]);
        let b = CameraWarp::new(-0.7, -0.05, [0.5, 3.0]);
        let w = [0.7, -1.3, 0.4, 2.1];
        let f = |a: &CameraWarp, b: &CameraWarp| {
            let c = a.compose(b).to_array();
            (0..4).map(|i| w[i] * c[i]).sum::<f64>()
        };
        let (ga, gb) = a.compose_backward(
            &b,
            &WarpGrad {
                rotation: w[0],
                log_zoom: w[1],
                translation: [w[2], w[3]],
            },
        );
        let h = 1e-6;
        for i in 0..4 {
            let mut p = a.to_array();
            let mut m = a.to_array();
            p[i] += h;
            m[i] -= h;
            let fd =
                (f(&CameraWarp::from_array(p), &b) - f(&CameraWarp::from_array(m), &b)) / (2.0 * h);
            assert!((fd - ga.to_array()[i]).abs() < 1e-7);
            let mut p = b.to_array();
            let mut m = b.to_array();
            p[i] += h;
            m[i] -= h;
            let fd =
                (f(&a, &CameraWarp::from_array(p)) - f(&a, &CameraWarp::from_array(m))) / (2.0 * h);
            assert!((fd - gb.to_array()[i]).abs() < 1e-7);
        }
    }
}
