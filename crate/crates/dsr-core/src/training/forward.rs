use ndarray::{Array1, ArrayView2};

use super::schedule::{ForcingMode, ForcingSchedule};
use crate::error::{Error, Result};
use crate::models::{
    GruStep, LatentState, LstmStep, ModelParams, Readout, ReadoutInversion,
};

/// Everything one teacher-forced sweep produces, cached for backprop.
pub(crate) struct ForwardPass {
    /// Pre-forcing states z_t; the loss at t is computed on these.
    pub states: Vec<LatentState>,
    /// Post-forcing states; entering[t] feeds the step to t+1.
    pub entering: Vec<LatentState>,
    /// x_t - B·(readout view of states[t]).
    pub residuals: Vec<Array1<f64>>,
    pub losses: Vec<f64>,
    pub total_loss: f64,
    /// Whether t is a forcing time of the schedule.
    pub forced: Vec<bool>,
    /// y_t = (B Bᵀ + reg I)⁻¹ x_t at times where the inversion was used.
    pub inversion_y: Vec<Option<Array1<f64>>>,
    /// Gate caches; index t-1 belongs to the transition t-1 -> t.
    pub lstm_steps: Vec<LstmStep>,
    pub gru_steps: Vec<GruStep>,
}

/// Roll the model over an observation window under the given forcing
/// schedule, collecting per-step losses ℒ_t = ‖x_t − B z_t‖² on the
/// pre-forcing states. Forcing replaces the state after the loss is taken:
/// sparse teacher forcing substitutes the readout preimage z̃_t (for the
/// LSTM only h; c is carried), zero reset substitutes the zero state, and
/// forward iteration replaces nothing (its truncation is purely a gradient
/// matter).
pub fn forced_forward(
    model: &ModelParams,
    readout: &Readout,
    obs: &ArrayView2<f64>,
    schedule: &ForcingSchedule,
) -> Result<(Vec<LatentState>, Vec<f64>)> {
    let pass = run_forward(model, readout, obs, schedule, None)?;
    Ok((pass.states, pass.losses))
}

pub(crate) fn run_forward(
    model: &ModelParams,
    readout: &Readout,
    obs: &ArrayView2<f64>,
    schedule: &ForcingSchedule,
    forcing_times: Option<&[usize]>,
) -> Result<ForwardPass> {
    schedule.validate()?;
    let len = obs.nrows();
    if len == 0 {
        return Err(Error::Data("empty observation window".into()));
    }
    if obs.ncols() != readout.obs_dim() {
        return Err(Error::Shape(format!(
            "observations have {} dims, readout expects {}",
            obs.ncols(),
            readout.obs_dim()
        )));
    }
    if readout.latent_dim() != model.latent_dim() {
        return Err(Error::Shape(format!(
            "readout latent dimension {} does not match model M = {}",
            readout.latent_dim(),
            model.latent_dim()
        )));
    }

    let forced = match forcing_times {
        Some(times) => {
            let mut f = vec![false; len];
            for &t in times {
                if t < len {
                    f[t] = true;
                }
            }
            f
        }
        None => schedule.forcing_flags(len),
    };

    let needs_inversion = matches!(
        schedule.mode,
        ForcingMode::SparseTf | ForcingMode::ForwardIterate
    );
    let inversion: Option<ReadoutInversion> = if needs_inversion {
        Some(readout.inversion()?)
    } else {
        None
    };

    let mut pass = ForwardPass {
        states: Vec::with_capacity(len),
        entering: Vec::with_capacity(len),
        residuals: Vec::with_capacity(len),
        losses: Vec::with_capacity(len),
        total_loss: 0.0,
        forced,
        inversion_y: vec![None; len],
        lstm_steps: Vec::new(),
        gru_steps: Vec::new(),
    };

    // Initial state: readout inversion of the first observation for the
    // forcing modes that track the data manifold, the zero state otherwise.
    let initial = match schedule.mode {
        ForcingMode::SparseTf | ForcingMode::ForwardIterate => {
            let inv = inversion.as_ref().expect("inversion prepared");
            let (z_tilde, y) = inv.invert(&obs.row(0));
            pass.inversion_y[0] = Some(y);
            model.state_from_readout_preimage(z_tilde)
        }
        ForcingMode::ZeroReset | ForcingMode::None => model.zero_state(),
    };
    pass.states.push(initial);

    for t in 0..len {
        // Loss on the pre-forcing state.
        let state = &pass.states[t];
        if !state.is_finite() {
            return Err(Error::OrbitDiverged { step: t });
        }
        let residual = &obs.row(t) - &readout.apply(state)?;
        let loss = residual.iter().map(|v| v * v).sum::<f64>();
        pass.total_loss += loss;
        pass.residuals.push(residual);
        pass.losses.push(loss);

        // Forcing is applied after the loss.
        let entering = if pass.forced[t] {
            match schedule.mode {
                ForcingMode::SparseTf => {
                    if t == 0 {
                        // states[0] is already the inverted observation.
                        pass.states[0].clone()
                    } else {
                        let inv = inversion.as_ref().expect("inversion prepared");
                        let (z_tilde, y) = inv.invert(&obs.row(t));
                        pass.inversion_y[t] = Some(y);
                        match &pass.states[t] {
                            LatentState::HiddenCell { c, .. } => LatentState::HiddenCell {
                                h: z_tilde,
                                c: c.clone(),
                            },
                            LatentState::Dense(_) => LatentState::Dense(z_tilde),
                        }
                    }
                }
                ForcingMode::ZeroReset => model.zero_state(),
                ForcingMode::ForwardIterate | ForcingMode::None => pass.states[t].clone(),
            }
        } else {
            pass.states[t].clone()
        };
        pass.entering.push(entering);

        if t + 1 < len {
            let e = &pass.entering[t];
            let next = match (model, e) {
                (ModelParams::Lstm(p), LatentState::HiddenCell { h, c }) => {
                    let cache = p.step_full(&h.view(), &c.view(), None);
                    let next = LatentState::HiddenCell {
                        h: cache.h.clone(),
                        c: cache.c.clone(),
                    };
                    pass.lstm_steps.push(cache);
                    next
                }
                (ModelParams::Gru(p), LatentState::Dense(z)) => {
                    let cache = p.step_full(&z.view(), None);
                    let next = LatentState::Dense(cache.h.clone());
                    pass.gru_steps.push(cache);
                    next
                }
                _ => model.step(e, None)?,
            };
            pass.states.push(next);
        }
    }
    Ok(pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, Architecture};
    use crate::systems::{example_spec, simulate, standardize, SystemKind};
    use ndarray::Array2;

    fn lorenz_window(len: usize) -> Array2<f64> {
        let mut spec = example_spec(SystemKind::Lorenz, len + 500);
        spec.transient = 500;
        let traj = simulate(&spec).unwrap();
        let (std_traj, _, _) = standardize(&traj).unwrap();
        std_traj.data.slice(ndarray::s![..len, ..]).to_owned()
    }

    #[test]
    fn tau_one_forces_every_step() {
        let (model, readout) = init_params(Architecture::Vanilla, 8, 3, 3, 1).unwrap();
        let obs = lorenz_window(12);
        let schedule = ForcingSchedule::sparse_tf(1, 0.0);
        let pass = run_forward(&model, &readout, &obs.view(), &schedule, None).unwrap();
        assert!(pass.forced.iter().all(|&f| f));
        // every entering state is the inverted observation
        let inv = readout.inversion().unwrap();
        for t in 0..12 {
            let (z_tilde, _) = inv.invert(&obs.row(t));
            let e = pass.entering[t].to_flat();
            for (a, b) in e.iter().zip(z_tilde.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mode_none_matches_free_run_losses() {
        let (model, readout) = init_params(Architecture::Gru, 6, 3, 3, 2).unwrap();
        let obs = lorenz_window(20);
        let schedule = ForcingSchedule::none();
        let (states, losses) = forced_forward(&model, &readout, &obs.view(), &schedule).unwrap();
        // the same rollout by hand from the zero state
        let mut z = model.zero_state();
        for t in 0..20 {
            let x_hat = readout.apply(&z).unwrap();
            let expect: f64 = obs
                .row(t)
                .iter()
                .zip(x_hat.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!((losses[t] - expect).abs() < 1e-12, "t={t}");
            let s = states[t].to_flat();
            for (a, b) in s.iter().zip(z.to_flat().iter()) {
                assert_eq!(a, b);
            }
            z = model.step(&z, None).unwrap();
        }
    }

    #[test]
    fn identity_readout_forces_exact_observation() {
        let (model, _) = init_params(Architecture::Plrnn, 3, 3, 3, 3).unwrap();
        let readout = Readout {
            b_out: Array2::eye(3),
            reg: 0.0,
        };
        let obs = lorenz_window(10);
        let schedule = ForcingSchedule::sparse_tf(3, 0.0);
        let pass = run_forward(&model, &readout, &obs.view(), &schedule, None).unwrap();
        for t in (0..10).step_by(3) {
            assert!(pass.forced[t]);
            let e = pass.entering[t].to_flat();
            for (a, b) in e.iter().zip(obs.row(t).iter()) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
        assert!(!pass.forced[1]);
    }

    #[test]
    fn lstm_forcing_keeps_cell_state() {
        let (model, readout) = init_params(Architecture::Lstm, 6, 3, 3, 4).unwrap();
        let obs = lorenz_window(9);
        let schedule = ForcingSchedule::sparse_tf(4, 0.0);
        let pass = run_forward(&model, &readout, &obs.view(), &schedule, None).unwrap();
        // at t=4 (forced), entering.c equals the pre-forcing state's c
        let LatentState::HiddenCell { c: c_pre, .. } = &pass.states[4] else {
            panic!()
        };
        let LatentState::HiddenCell { h: h_ent, c: c_ent } = &pass.entering[4] else {
            panic!()
        };
        assert_eq!(c_pre, c_ent);
        let inv = readout.inversion().unwrap();
        let (z_tilde, _) = inv.invert(&obs.row(4));
        for (a, b) in h_ent.iter().zip(z_tilde.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
