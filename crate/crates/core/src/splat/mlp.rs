use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixture::{GaussianMix2D, MixGrad};
use crate::error::{Error, Result};
use crate::par;

/// Per-Gaussian, per-sub-frame offsets to mean, log-scale and rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Deltas {
    n_sub: usize,
    /// Row `i` holds `[mean 2N | log_scale 2N | rotation N]` for Gaussian `i`.
    data: Vec<f64>,
}

impl Deltas {
    pub fn zeros(n_gauss: usize, n_sub: usize) -> Self {
        Deltas {
            n_sub,
            data: vec![0.0; n_gauss * 5 * n_sub],
        }
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn len(&self) -> usize {
        self.data.len() / (5 * self.n_sub)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(mean, log_scale, rotation)` offsets for Gaussian `i` in sub-frame `k`.
    pub fn get(&self, i: usize, k: usize) -> ([f64; 2], [f64; 2], f64) {
        let n = self.n_sub;
        let row = &self.data[i * 5 * n..(i + 1) * 5 * n];
        (
            [row[2 * k], row[2 * k + 1]],
            [row[2 * n + 2 * k], row[2 * n + 2 * k + 1]],
            row[4 * n + k],
        )
    }

    fn set(&mut self, i: usize, k: usize, mean: [f64; 2], log_scale: [f64; 2], rotation: f64) {
        let n = self.n_sub;
        let row = &mut self.data[i * 5 * n..(i + 1) * 5 * n];
        row[2 * k] = mean[0];
        row[2 * k + 1] = mean[1];
        row[2 * n + 2 * k] = log_scale[0];
        row[2 * n + 2 * k + 1] = log_scale[1];
        row[4 * n + k] = rotation;
    }

    /// The mixture displaced by the sub-frame `k` offsets.
    pub fn apply(&self, mix: &GaussianMix2D, k: usize) -> GaussianMix2D {
        let mut out = mix.clone();
        for i in 0..mix.len() {
            let (m, s, r) = self.get(i, k);
            out.means[2 * i] += m[0];
            out.means[2 * i + 1] += m[1];
            out.log_scales[2 * i] += s[0];
            out.log_scales[2 * i + 1] += s[1];
            out.rotations[i] += r;
        }
        out
    }

    /// Stores the geometric part of a mixture gradient as the gradient of
    /// sub-frame `k`'s offsets.
    pub fn set_from_grad(&mut self, g: &MixGrad, k: usize) {
        for i in 0..g.len() {
            self.set(
                i,
                k,
                [g.means[2 * i], g.means[2 * i + 1]],
                [g.log_scales[2 * i], g.log_scales[2 * i + 1]],
                g.rotations[i],
            );
        }
    }
}

/// Multilayer perceptron mapping an encoding of each Gaussian and a per-view
/// code to sub-frame offsets. Hidden layers use ReLU; the three linear output
/// heads emit `2N`, `2N` and `N` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformMLP {
    pub n_sub: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub l_pos: usize,
    pub l_dir: usize,
    pub canvas: [f64; 2],
    pub params: Vec<f64>,
}

/// Cached activations of one forward pass.
pub struct MlpTape {
    input: Vec<f64>,
    /// Post-activation outputs of each hidden layer.
    hidden: Vec<Vec<f64>>,
    n: usize,
}

const BLOCK: usize = 64;

impl DeformMLP {
    pub fn new(
        n_sub: usize,
        width: usize,
        hidden_layers: usize,
        l_pos: usize,
        l_dir: usize,
        canvas: [f64; 2],
        seed: u64,
    ) -> Result<Self> {
        if n_sub < 2 || width == 0 || hidden_layers == 0 {
            return Err(Error::invalid(
                "MLP needs n_sub >= 2 and at least one non-empty hidden layer",
            ));
        }
        let mut mlp = DeformMLP {
            n_sub,
            width,
            hidden_layers,
            l_pos,
            l_dir,
            canvas,
            params: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(mlp.param_count());
        for l in 0..hidden_layers {
            let fan_in = mlp.layer_in(l);
            let bound = (6.0 / fan_in as f64).sqrt();
            params.extend((0..fan_in * width).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(width));
        }
        params.extend(std::iter::repeat(0.0).take((width + 1) * mlp.out_dim()));
        mlp.params = params;
        Ok(mlp)
    }

    pub fn input_dim(&self) -> usize {
        4 * self.l_pos + 4 * self.l_dir + 3
    }

    /// Output widths of the mean, log-scale and rotation heads.
    pub fn head_widths(&self) -> [usize; 3] {
        [2 * self.n_sub, 2 * self.n_sub, self.n_sub]
    }

    fn out_dim(&self) -> usize {
        5 * self.n_sub
    }

    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim()
        } else {
            self.width
        }
    }

    /// `(weights offset, bias offset, fan_in, fan_out)` of layer `l`; the last
    /// layer is the concatenation of the three heads.
    fn layer(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for j in 0..l {
            off += (self.layer_in(j) + 1) * self.width;
        }
        let (fin, fout) = if l < self.hidden_layers {
            (self.layer_in(l), self.width)
        } else {
            (self.width, self.out_dim())
        };
        (off, off + fin * fout, fin, fout)
    }

    pub fn param_count(&self) -> usize {
        let (_, b, _, fout) = self.layer(self.hidden_layers);
        b + fout
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.param_count() {
            return Err(Error::dims(format!(
                "MLP has {} parameters, expected {}",
                self.params.len(),
                self.param_count()
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("MLP weights must be finite"));
        }
        Ok(())
    }

    fn encode_into(
        &self,
        mean: [f64; 2],
        log_scale: [f64; 2],
        rotation: f64,
        view: [f64; 2],
        out: &mut [f64],
    ) {
        let mut k = 0;
        let p = [mean[0] / self.canvas[0], mean[1] / self.canvas[1]];
        for (levels, v) in [(self.l_pos, p), (self.l_dir, view)] {
            for l in 0..levels {
                let f = std::f64::consts::PI * (1u64 << l) as f64;
                for x in v {
                    let (s, c) = (f * x).sin_cos();
                    out[k] = s;
                    out[k + 1] = c;
                    k += 2;
                }
            }
        }
        out[k] = log_scale[0];
        out[k + 1] = log_scale[1];
        out[k + 2] = rotation;
    }

    /// Gradient of the encoding with respect to mean, log-scale and rotation.
    fn encode_backward(&self, mean: [f64; 2], g: &[f64]) -> ([f64; 2], [f64; 2], f64) {
        let p = [mean[0] / self.canvas[0], mean[1] / self.canvas[1]];
        let mut dm = [0.0; 2];
        let mut k = 0;
        for l in 0..self.l_pos {
            let f = std::f64::consts::PI * (1u64 << l) as f64;
            for (j, x) in p.iter().enumerate() {
                let (s, c) = (f * x).sin_cos();
                dm[j] += (g[k] * c - g[k + 1] * s) * f / self.canvas[j];
                k += 2;
            }
        }
        k += 4 * self.l_dir;
        (dm, [g[k], g[k + 1]], g[k + 2])
    }

    pub fn forward(&self, mix: &GaussianMix2D, view_code: [f64; 2]) -> (Deltas, MlpTape) {
        let n = mix.len();
        let d = self.input_dim();
        let mut input = vec![0.0; n * d];
        for i in 0..n {
            self.encode_into(
                [mix.means[2 * i], mix.means[2 * i + 1]],
                [mix.log_scales[2 * i], mix.log_scales[2 * i + 1]],
                mix.rotations[i],
                view_code,
                &mut input[i * d..(i + 1) * d],
            );
        }
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.hidden_layers);
        for l in 0..self.hidden_layers {
            let x = if l == 0 { &input } else { &hidden[l - 1] };
            let y = self.dense(l, x, n, true);
            hidden.push(y);
        }
        let out = self.dense(
            self.hidden_layers,
            &hidden[self.hidden_layers - 1],
            n,
            false,
        );
        (
            Deltas {
                n_sub: self.n_sub,
                data: out,
            },
            MlpTape { input, hidden, n },
        )
    }

    /// Smallest |pre-activation| over all hidden units. Central differences
    /// are only meaningful while this exceeds the step size.
    pub(crate) fn relu_margin(&self, mix: &GaussianMix2D, view: [f64; 2]) -> f64 {
        let (_, tape) = self.forward(mix, view);
        let mut x = tape.input;
        let mut margin = f64::INFINITY;
        for l in 0..self.hidden_layers {
            let y = self.dense(l, &x, mix.len(), false);
            margin = y.iter().fold(margin, |m, v| m.min(v.abs()));
            x = y.into_iter().map(|v| v.max(0.0)).collect();
        }
        margin
    }

    fn dense(&self, l: usize, x: &[f64], n: usize, relu: bool) -> Vec<f64> {
        let (wo, bo, fin, fout) = self.layer(l);
        let w = &self.params[wo..wo + fin * fout];
        let b = &self.params[bo..bo + fout];
        let mut y = vec![0.0; n * fout];
        if n == 0 {
            return y;
        }
        par::for_each_chunk_mut(&mut y, fout * BLOCK, |blk, out| {
            for (r, yr) in out.chunks_mut(fout).enumerate() {
                let xr = &x[(blk * BLOCK + r) * fin..(blk * BLOCK + r + 1) * fin];
                yr.copy_from_slice(b);
                for (i, &xi) in xr.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let wr = &w[i * fout..(i + 1) * fout];
                    for (o, wv) in yr.iter_mut().zip(wr) {
                        *o += xi * wv;
                    }
                }
                if relu {
                    yr.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
        });
        y
    }

    /// Returns parameter gradients and the gradient routed back through the
    /// input encoding to the mixture's geometry.
    pub fn backward(
        &self,
        mix: &GaussianMix2D,
        tape: &MlpTape,
        grad: &Deltas,
    ) -> (Vec<f64>, MixGrad) {
        let n = tape.n;
        let d = self.input_dim();
        let blocks = n.div_ceil(BLOCK);
        // per-block partial parameter gradients, reduced in block order
        let parts: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(blocks, |blk| {
            let rows = blk * BLOCK..((blk + 1) * BLOCK).min(n);
            let mut pg = vec![0.0; self.params.len()];
            let mut gin = Vec::with_capacity(rows.len() * d);
            for r in rows {
                let mut g: Vec<f64> =
                    grad.data[r * self.out_dim()..(r + 1) * self.out_dim()].to_vec();
                for l in (0..=self.hidden_layers).rev() {
                    let (wo, bo, fin, fout) = self.layer(l);
                    let x = if l == 0 {
                        &tape.input[r * d..(r + 1) * d]
                    } else {
                        &tape.hidden[l - 1][r * fin..(r + 1) * fin]
                    };
                    let w = &self.params[wo..wo + fin * fout];
                    let mut gx = vec![0.0; fin];
                    for (o, &go) in g.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        pg[bo + o] += go;
                    }
                    for i in 0..fin {
                        // a zero post-activation has its input gradient
                        // masked below and adds nothing to the weights
                        if l > 0 && x[i] <= 0.0 {
                            continue;
                        }
                        let wr = &w[i * fout..(i + 1) * fout];
                        let pr = &mut pg[wo + i * fout..wo + (i + 1) * fout];
                        let mut acc = 0.0;
                        for o in 0..fout {
                            pr[o] += x[i] * g[o];
                            acc += wr[o] * g[o];
                        }
                        gx[i] = acc;
                    }
                    if l > 0 {
                        // ReLU mask from the stored post-activation values
                        for (gi, &xi) in gx.iter_mut().zip(x) {
                            if xi <= 0.0 {
                                *gi = 0.0;
                            }
                        }
                    }
                    g = gx;
                }
                gin.extend_from_slice(&g);
            }
            (pg, gin)
        });
        let mut pgrad = vec![0.0; self.params.len()];
        let mut mg = MixGrad::zeros(n);
        let mut row = 0;
        for (pg, gin) in parts {
            for (a, b) in pgrad.iter_mut().zip(&pg) {
                *a += b;
            }
            for gi in gin.chunks(d) {
                let (dm, ds, dr) =
                    self.encode_backward([mix.means[2 * row], mix.means[2 * row + 1]], gi);
                mg.means[2 * row] = dm[0];
                mg.means[2 * row + 1] = dm[1];
                mg.log_scales[2 * row] = ds[0];
                mg.log_scales[2 * row + 1] = ds[1];
                mg.rotations[row] = dr;
                row += 1;
            }
        }
        (pgrad, mg)
    }
}

#[cfg(test)]
mod tests {
    use super::super::render::tests::random_mix;
    use super::*;

    /// Random weights whose hidden pre-activations stay clear of the ReLU
    /// kink, so central differences see a smooth function.
    fn randomized(mlp: DeformMLP, mix: &GaussianMix2D, view: [f64; 2], seed: u64) -> DeformMLP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut m = mlp.clone();
            m.params
                .iter_mut()
                .for_each(|p| *p = rng.gen_range(-0.3..0.3));
            if m.relu_margin(mix, view) > 5e-3 {
                return m;
            }
        }
    }

    #[test]
    fn shapes_and_zero_heads() {
        let mlp = DeformMLP::new(5, 64, 3, 3, 10, [128.0, 128.0], 1).unwrap();
        assert_eq!(mlp.input_dim(), 55);
        assert_eq!(mlp.head_widths(), [10, 10, 5]);
        let mix = random_mix(7, 128, 128, 2);
        let (d, _) = mlp.forward(&mix, [0.1, -0.2]);
        assert!(d.raw().iter().all(|&v| v == 0.0));
        assert_eq!(d.len(), 7);
        let doubled = DeformMLP::new(10, 64, 3, 3, 10, [128.0, 128.0], 1).unwrap();
        assert_eq!(doubled.head_widths(), [20, 20, 10]);
        assert_eq!(
            doubled.forward(&mix, [0.0, 0.0]).0.raw().len(),
            2 * d.raw().len()
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..3 {
            let mix = random_mix(4, 20, 16, seed);
            let view = [0.13, -0.07];
            let mlp = randomized(
                DeformMLP::new(2, 8, 3, 2, 2, [20.0, 16.0], seed).unwrap(),
                &mix,
                view,
                seed + 10,
            );
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d0, tape) = mlp.forward(&mix, view);
            let weights: Vec<f64> = (0..d0.raw().len())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let f = |m: &DeformMLP, x: &GaussianMix2D| -> f64 {
                m.forward(x, view)
                    .0
                    .raw()
                    .iter()
                    .zip(&weights)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (pg, mg) = mlp.backward(
                &mix,
                &tape,
                &Deltas {
                    n_sub: 2,
                    data: weights.clone(),
                },
            );
            let h = 1e-4;
            for k in 0..mlp.params.len() {
                let mut p = mlp.clone();
                p.params[k] += h;
                let mut m = mlp.clone();
                m.params[k] -= h;
                let fd = (f(&p, &mix) - f(&m, &mix)) / (2.0 * h);
                let err = (fd - pg[k]).abs() / fd.abs().max(pg[k].abs()).max(1e-6);
                assert!(err < 1e-4, "param {k}: fd {fd} vs {}", pg[k]);
            }
            for i in 0..mix.len() {
                for (field, analytic) in [
                    (0usize, mg.means[2 * i]),
                    (1, mg.means[2 * i + 1]),
                    (2, mg.log_scales[2 * i]),
                    (3, mg.rotations[i]),
                ] {
                    let bump = |e: f64| {
                        let mut x = mix.clone();
                        match field {
                            0 => x.means[2 * i] += e,
                            1 => x.means[2 * i + 1] += e,
                            2 => x.log_scales[2 * i] += e,
                            _ => x.rotations[i] += e,
                        }
                        x
                    };
                    let fd = (f(&mlp, &bump(h)) - f(&mlp, &bump(-h))) / (2.0 * h);
                    let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                    assert!(
                        err < 1e-4,
                        "gaussian {i} field {field}: fd {fd} vs {analytic}"
                    );
                }
            }
        }
    }
}
