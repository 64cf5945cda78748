use ndarray::ArrayView2;

use super::backward::bptt_gradients;
use super::forward::run_forward;
use super::schedule::ForcingSchedule;
use crate::error::{Error, Result};
use crate::models::{ModelParams, Readout};

/// Loss with one scalar parameter perturbed. Tensor indices follow the
/// canonical order of the model tensors, with the readout last.
fn perturbed_loss(
    model: &ModelParams,
    readout: &Readout,
    obs: &ArrayView2<f64>,
    schedule: &ForcingSchedule,
    tensor: usize,
    offset: usize,
    delta: f64,
) -> Result<f64> {
    let mut model = model.clone();
    let mut readout = readout.clone();
    {
        let mut slices = model.tensor_slices_mut();
        slices.push(readout.b_out.as_slice_mut().expect("standard layout"));
        slices[tensor][offset] += delta;
    }
    Ok(run_forward(&model, &readout, obs, schedule, None)?.total_loss)
}

/// Compare analytic BPTT gradients against central finite differences of
/// the total loss, perturbing every parameter by ±eps. Returns the maximum
/// relative error |a−n| / max(|a|, |n|, 1e-8). Intended for small sizes
/// (M ≤ 8, short windows).
pub fn finite_diff_check(
    model: &ModelParams,
    readout: &Readout,
    obs: &ArrayView2<f64>,
    schedule: &ForcingSchedule,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be > 0, got {eps}"
        )));
    }
    let (grads, _) = bptt_gradients(model, readout, obs, schedule)?;
    let grad_slices: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut max_rel = 0.0_f64;
    for (ti, tensor) in grad_slices.iter().enumerate() {
        for (k, &analytic) in tensor.iter().enumerate() {
            let plus = perturbed_loss(model, readout, obs, schedule, ti, k, eps)?;
            let minus = perturbed_loss(model, readout, obs, schedule, ti, k, -eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
