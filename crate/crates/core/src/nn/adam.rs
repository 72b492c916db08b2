//! Bias-corrected Adam over a flat list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_stab")]
    pub eps_stab: f64,
}

fn default_alpha() -> f64 {
    0.001
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_stab() -> f64 {
    1e-8
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            alpha: default_alpha(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_stab: default_eps_stab(),
        }
    }
}

/// Optimizer state: one first/second moment buffer per parameter tensor,
/// in the same order the tensors are passed to [`AdamState::step`].
#[derive(Debug, Clone)]
pub struct AdamState {
    step_count: u64,
    hyper: AdamHyper,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, tensor_lens: impl IntoIterator<Item = usize>) -> Self {
        let first: Vec<Vec<f64>> = tensor_lens.into_iter().map(|n| vec![0.0; n]).collect();
        let second = first.clone();
        AdamState {
            step_count: 0,
            hyper,
            first_moment: first,
            second_moment: second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// One update: `m ← β₁m + (1-β₁)g`, `v ← β₂v + (1-β₂)g²`, then
    /// `p ← p - α·m̂/(√v̂ + ε)` with bias-corrected `m̂`, `v̂`.
    ///
    /// Gradients are validated before anything is written, so a non-finite
    /// gradient aborts without touching the parameters.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Config(format!(
                "adam: expected {} tensors, got {} params / {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[t].len() || g.len() != p.len() {
                return Err(Error::Config(format!(
                    "adam: tensor {t} length mismatch ({} state / {} param / {} grad)",
                    self.first_moment[t].len(),
                    p.len(),
                    g.len()
                )));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "adam: non-finite gradient {} at tensor {t} index {i} (step {})",
                    g[i],
                    self.step_count + 1
                )));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamHyper {
            alpha,
            beta1,
            beta2,
            eps_stab,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (ti, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[ti];
            let v = &mut self.second_moment[ti];
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= alpha * m_hat / (v_hat.sqrt() + eps_stab);
            }
        }
        Ok(())
    }
}
