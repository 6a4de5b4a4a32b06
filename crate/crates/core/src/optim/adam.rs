use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named parameter block with its own learning rate. `lr_scale`, when
/// present, multiplies the group rate per element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGroup {
    pub name: String,
    pub lr: f64,
    pub lr_scale: Option<Vec<f64>>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Bias-corrected Adam over a fixed list of parameter groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub groups: Vec<ParamGroup>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, groups: Vec::new() }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_group(&mut self, name: &str, len: usize, lr: f64) -> &mut ParamGroup {
        self.groups.push(ParamGroup { name: name.into(), lr, lr_scale: None, m: vec![0.0; len], v: vec![0.0; len] });
        self.groups.last_mut().expect("just pushed")
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn set_lr(&mut self, name: &str, lr: f64) -> Result<()> {
        let g = self
            .groups
            .iter_mut()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter group `{name}`")))?;
        g.lr = lr;
        Ok(())
    }

    /// One update of every group. `params` and `grads` follow group order.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::dims(format!(
                "adam has {} groups, got {} parameter and {} gradient blocks",
                self.groups.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((g, p), d) in self.groups.iter().zip(params.iter()).zip(grads) {
            if p.len() != g.m.len() || d.len() != g.m.len() {
                return Err(Error::dims(format!("group `{}` expects {} values", g.name, g.m.len())));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(g.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((g, p), d) in self.groups.iter_mut().zip(params.iter_mut()).zip(grads) {
            for i in 0..d.len() {
                g.m[i] = b1 * g.m[i] + (1.0 - b1) * d[i];
                g.v[i] = b2 * g.v[i] + (1.0 - b2) * d[i] * d[i];
                let lr = g.lr * g.lr_scale.as_ref().map_or(1.0, |s| s[i]);
                p[i] -= lr * (g.m[i] / c1) / ((g.v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: AdamState = serde_json::from_str(s)?;
        for g in &a.groups {
            if g.m.len() != g.v.len() || g.lr_scale.as_ref().is_some_and(|s| s.len() != g.m.len()) {
                return Err(Error::invalid(format!("adam group `{}` has inconsistent buffers", g.name)));
            }
        }
        Ok(a)
    }
}
