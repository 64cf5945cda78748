use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelParams, Readout};

/// Gradients of the loss: one tensor per model parameter tensor (held in a
/// params-shaped container) plus the readout matrix.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub model: ModelParams,
    pub readout: Array2<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &ModelParams, readout: &Readout) -> Self {
        GradientSet {
            model: model.zeros_like(),
            readout: Array2::zeros(readout.b_out.dim()),
        }
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.model.tensor_slices();
        v.push(self.readout.as_slice().expect("standard layout"));
        v
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.model.tensor_slices_mut();
        v.push(self.readout.as_slice_mut().expect("standard layout"));
        v
    }

    /// Global L2 norm over all tensors.
    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }

    /// Element-wise accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &GradientSet) {
        let theirs = other.slices();
        let mut mine = self.slices_mut();
        assert_eq!(mine.len(), theirs.len());
        for (dst, src) in mine.iter_mut().zip(theirs) {
            assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// How to clip a gradient before the parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Rescale all tensors by c/‖g‖ when the global L2 norm exceeds c.
    EuclideanNorm,
    /// Clamp each element to [-c, c].
    InfinityNorm,
}

/// Clip configuration carried by [`super::TrainConfig`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClipConfig {
    pub mode: ClipMode,
    pub c: f64,
}

/// Clip a gradient set in place. Euclidean clipping preserves the gradient
/// direction (a common scalar multiple), and a gradient already within the
/// bound is returned untouched, bit for bit.
pub fn clip_gradients(g: &mut GradientSet, mode: ClipMode, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("clip threshold must be > 0, got {c}")));
    }
    match mode {
        ClipMode::EuclideanNorm => {
            let norm = g.l2_norm();
            if norm > c {
                g.scale(c / norm);
            }
        }
        ClipMode::InfinityNorm => {
            for s in g.slices_mut() {
                for v in s {
                    *v = v.clamp(-c, c);
                }
            }
        }
    }
    Ok(())
}

/// Adam accumulator state; shapes mirror the flattened parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &ModelParams, readout: &Readout) -> Self {
        let len = model.param_count() + readout.b_out.len();
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction (defaults β₁ = 0.9, β₂ = 0.999,
/// ε = 1e-8), applied to the model parameters and the readout in place.
pub fn adam_update(
    model: &mut ModelParams,
    readout: &mut Readout,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    let expected = model.param_count() + readout.b_out.len();
    if state.m.len() != expected {
        return Err(Error::Shape(format!(
            "adam state has {} entries, parameters have {expected}",
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let grad_slices = grads.slices();
    let mut param_slices = model.tensor_slices_mut();
    param_slices.push(readout.b_out.as_slice_mut().expect("standard layout"));
    if grad_slices.len() != param_slices.len() {
        return Err(Error::Shape("gradient/parameter tensor mismatch".into()));
    }

    let mut k = 0;
    for (params, grad) in param_slices.iter_mut().zip(grad_slices) {
        if params.len() != grad.len() {
            return Err(Error::Shape("gradient tensor shape mismatch".into()));
        }
        for (p, g) in params.iter_mut().zip(grad) {
            state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
            state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
            let m_hat = state.m[k] / bc1;
            let v_hat = state.v[k] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
            k += 1;
        }
    }
    Ok(())
}
