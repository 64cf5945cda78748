//! BPTT engine with hand-derived gradients for all four architectures,
//! sparse teacher forcing, Adam optimization, gradient-clipping and
//! windowing baselines, and a finite-difference gradient checker.

mod backward;
mod check;
mod forward;
mod optim;
mod schedule;

pub use backward::bptt_gradients;
pub use check::finite_diff_check;
pub use forward::forced_forward;
pub use optim::{adam_update, clip_gradients, AdamState, ClipConfig, ClipMode, GradientSet};
pub use schedule::{ForcingMode, ForcingSchedule};

use ndarray::s;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{init_params, Architecture, ModelParams, Readout};
use crate::systems::Trajectory;

/// Early stopping on a loss plateau: stop when the best loss improved by
/// less than `rel_improvement` (relatively) over the last `window` epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlateauStop {
    pub rel_improvement: f64,
    pub window: usize,
}

impl Default for PlateauStop {
    fn default() -> Self {
        PlateauStop {
            rel_improvement: 1e-5,
            window: 100,
        }
    }
}

fn default_plateau() -> Option<PlateauStop> {
    Some(PlateauStop::default())
}

fn default_batch() -> usize {
    16
}

/// Training configuration; the JSON document consumed by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Architecture,
    /// Latent dimension M.
    pub m: usize,
    pub seq_len: usize,
    pub n_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub schedule: ForcingSchedule,
    #[serde(default)]
    pub clip: Option<ClipConfig>,
    #[serde(default = "default_plateau")]
    pub plateau: Option<PlateauStop>,
}

impl TrainConfig {
    pub fn validate(&self, data_rows: usize) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be >= 2".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if data_rows < self.seq_len {
            return Err(Error::Data(format!(
                "data has {data_rows} rows, needs at least seq_len = {}",
                self.seq_len
            )));
        }
        self.schedule.validate()
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: ModelParams,
    pub readout: Readout,
    /// Per-epoch mean squared error per step (summed over dimensions).
    pub history: Vec<f64>,
    /// Epoch at which the run diverged, if it did; the returned parameters
    /// are the last finite checkpoint.
    pub diverged_at: Option<usize>,
}

/// Train a model on a trajectory by stochastic gradient descent over random
/// windows, under the configured forcing schedule. Fully deterministic for
/// a fixed seed: window sampling, gradient reduction order, and the
/// optimizer are all seeded or order-fixed.
pub fn train(config: &TrainConfig, data: &Trajectory) -> Result<TrainResult> {
    config.validate(data.len())?;
    let n_obs = data.dim();
    let (mut model, mut readout) = init_params(config.arch, config.m, n_obs, n_obs, config.seed)?;
    readout.reg = config.schedule.reg;

    // Distinct stream from the init draws.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd1b5_4a32_d192_ed03);
    let mut adam = AdamState::new(&model, &readout);
    let mut history: Vec<f64> = Vec::with_capacity(config.n_epochs);
    let mut best_prefix: Vec<f64> = Vec::with_capacity(config.n_epochs);
    let mut diverged_at = None;

    let max_start = data.len() - config.seq_len;
    let scale = 1.0 / (config.batch_size * config.seq_len) as f64;
    let jitter = config.schedule.tau_jitter_std > 0.0;

    for epoch in 0..config.n_epochs {
        let starts: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..=max_start))
            .collect();
        let forcing_times: Vec<Option<Vec<usize>>> = starts
            .iter()
            .map(|_| {
                jitter.then(|| {
                    let mut sub = ChaCha8Rng::seed_from_u64(rng.random());
                    config
                        .schedule
                        .jittered_forcing_times(config.seq_len, &mut sub)
                })
            })
            .collect();

        let snapshot = (model.clone(), readout.clone());
        let per_window: Vec<Result<(GradientSet, f64)>> = starts
            .par_iter()
            .zip(forcing_times.par_iter())
            .map(|(&start, times)| {
                let window = data.data.slice(s![start..start + config.seq_len, ..]);
                match times {
                    Some(times) => backward::bptt_gradients_at(
                        &model,
                        &readout,
                        &window,
                        &config.schedule,
                        times,
                    ),
                    None => bptt_gradients(&model, &readout, &window, &config.schedule),
                }
            })
            .collect();

        // Fixed-order reduction: window index ascending.
        let mut batch_grads: Option<GradientSet> = None;
        let mut batch_loss = 0.0;
        let mut failed = false;
        for res in per_window {
            match res {
                Ok((g, loss)) => {
                    batch_loss += loss;
                    match &mut batch_grads {
                        Some(acc) => acc.add_assign(&g),
                        None => batch_grads = Some(g),
                    }
                }
                Err(Error::OrbitDiverged { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let epoch_loss = batch_loss * scale;
        let grads_ok = batch_grads
            .as_ref()
            .map(|g| g.is_finite())
            .unwrap_or(false);
        if failed || !epoch_loss.is_finite() || !grads_ok {
            model = snapshot.0;
            readout = snapshot.1;
            diverged_at = Some(epoch);
            break;
        }
        let mut grads = batch_grads.expect("batch produced gradients");
        grads.scale(scale);
        if let Some(clip) = &config.clip {
            clip_gradients(&mut grads, clip.mode, clip.c)?;
        }
        adam_update(&mut model, &mut readout, &grads, &mut adam, config.lr)?;

        history.push(epoch_loss);
        let best = best_prefix
            .last()
            .map_or(epoch_loss, |&b: &f64| b.min(epoch_loss));
        best_prefix.push(best);
        if let Some(stop) = &config.plateau {
            if epoch + 1 > stop.window {
                let prev = best_prefix[epoch - stop.window];
                let cur = best_prefix[epoch];
                if prev - cur < stop.rel_improvement * prev.abs().max(1e-300) {
                    break;
                }
            }
        }
    }

    Ok(TrainResult {
        model,
        readout,
        history,
        diverged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LatentState;
    use crate::systems::{example_spec, simulate, standardize, SystemKind};
    use ndarray::{Array2, ArrayView2};

    fn lorenz_window(len: usize, offset: usize) -> Array2<f64> {
        let mut spec = example_spec(SystemKind::Lorenz, len + offset + 500);
        spec.transient = 500;
        let traj = simulate(&spec).unwrap();
        let (std_traj, _, _) = standardize(&traj).unwrap();
        std_traj
            .data
            .slice(s![offset..offset + len, ..])
            .to_owned()
    }

    /// Fill the bias vectors with a deterministic nonzero pattern so the
    /// free-running maps do not sit at the degenerate zero fixed point.
    fn randomize_biases(model: &mut ModelParams, seed: u64) {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        let is_plrnn = matches!(model, ModelParams::Plrnn(_));
        match model {
            ModelParams::Vanilla(p) => {
                p.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            }
            ModelParams::Plrnn(p) => {
                p.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            }
            ModelParams::Lstm(p) => {
                for b in [&mut p.b_i, &mut p.b_f, &mut p.b_g, &mut p.b_o] {
                    b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
                }
            }
            ModelParams::Gru(p) => {
                for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
                    b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
                }
            }
        }
        let _ = is_plrnn;
    }

    /// Minimum distance of any parameter-dependent PLRNN state component
    /// from the ReLU kink along the forced pass. The constant zero initial
    /// state of the unforced modes is excluded: it does not move under
    /// parameter perturbations, so the kink there cannot bite.
    fn plrnn_kink_margin(
        model: &ModelParams,
        readout: &Readout,
        obs: &ArrayView2<f64>,
        schedule: &ForcingSchedule,
    ) -> f64 {
        let pass = super::forward::run_forward(model, readout, obs, schedule, None).unwrap();
        let mut margin = f64::INFINITY;
        for st in &pass.states[1..] {
            for v in st.to_flat().iter() {
                margin = margin.min(v.abs());
            }
        }
        if matches!(
            schedule.mode,
            ForcingMode::SparseTf | ForcingMode::ForwardIterate
        ) {
            for (t, &forced) in pass.forced.iter().enumerate() {
                if forced {
                    for v in pass.entering[t].to_flat().iter() {
                        margin = margin.min(v.abs());
                    }
                }
            }
        }
        margin
    }

    #[test]
    fn gradients_match_finite_differences_without_forcing() {
        let obs = lorenz_window(14, 0);
        for (arch, seed) in [
            (Architecture::Vanilla, 101_u64),
            (Architecture::Plrnn, 202),
            (Architecture::Lstm, 303),
            (Architecture::Gru, 404),
        ] {
            let (mut model, readout) = init_params(arch, 6, 3, 3, seed).unwrap();
            randomize_biases(&mut model, seed);
            let schedule = ForcingSchedule::none();
            if arch == Architecture::Plrnn {
                let margin = plrnn_kink_margin(&model, &readout, &obs.view(), &schedule);
                assert!(margin > 1e-4, "kink margin {margin:.2e}");
            }
            let err = finite_diff_check(&model, &readout, &obs.view(), &schedule, 1e-5).unwrap();
            assert!(err < 1e-5, "{}: max rel err {err:.3e}", arch.label());
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_sparse_forcing() {
        let obs = lorenz_window(15, 7);
        for tau in [1usize, 5] {
            for (arch, seed) in [
                (Architecture::Vanilla, 11_u64),
                (Architecture::Plrnn, 23),
                (Architecture::Lstm, 37),
                (Architecture::Gru, 41),
            ] {
                let (model, readout) = init_params(arch, 6, 3, 3, seed).unwrap();
                let schedule = ForcingSchedule::sparse_tf(tau, 0.0);
                if arch == Architecture::Plrnn {
                    let margin = plrnn_kink_margin(&model, &readout, &obs.view(), &schedule);
                    assert!(margin > 1e-4, "kink margin {margin:.2e}");
                }
                let err =
                    finite_diff_check(&model, &readout, &obs.view(), &schedule, 1e-5).unwrap();
                assert!(err < 1e-5, "{} tau={tau}: max rel err {err:.3e}", arch.label());
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_zero_reset() {
        let obs = lorenz_window(12, 3);
        let (model, readout) = init_params(Architecture::Gru, 5, 3, 3, 5).unwrap();
        let schedule = ForcingSchedule::zero_reset(4);
        let err = finite_diff_check(&model, &readout, &obs.view(), &schedule, 1e-5).unwrap();
        assert!(err < 1e-5, "max rel err {err:.3e}");
    }

    /// With forcing at every step the recurrence gradient reduces to a sum
    /// of single-step immediate derivatives; verified against finite
    /// differences of the same forced loss.
    #[test]
    fn tau_one_gradient_is_single_step() {
        let obs = lorenz_window(10, 0);
        let (model, readout) = init_params(Architecture::Vanilla, 5, 3, 3, 77).unwrap();
        let schedule = ForcingSchedule::sparse_tf(1, 0.0);
        let err = finite_diff_check(&model, &readout, &obs.view(), &schedule, 1e-5).unwrap();
        assert!(err < 1e-5, "max rel err {err:.3e}");
    }

    #[test]
    fn seq_len_one_gives_zero_recurrence_gradients() {
        let obs = lorenz_window(1, 0);
        let (model, readout) = init_params(Architecture::Vanilla, 5, 3, 3, 9).unwrap();
        let schedule = ForcingSchedule::sparse_tf(1, 0.0);
        let (grads, _) = bptt_gradients(&model, &readout, &obs.view(), &schedule).unwrap();
        let ModelParams::Vanilla(g) = &grads.model else {
            unreachable!()
        };
        assert!(g.w.iter().all(|v| *v == 0.0));
        assert!(g.bias.iter().all(|v| *v == 0.0));
        assert!(grads.readout.iter().any(|v| *v != 0.0));
    }

    /// Loss is computed pre-forcing: replacing the control value changes no
    /// loss at the same step. Checked by comparing losses under schedules
    /// that differ only in what they substitute.
    #[test]
    fn loss_is_computed_before_forcing() {
        let obs = lorenz_window(9, 2);
        let (model, readout) = init_params(Architecture::Gru, 6, 3, 3, 13).unwrap();
        let free = forced_forward(&model, &readout, &obs.view(), &ForcingSchedule::none())
            .unwrap()
            .1;
        // Forward-iterate forces nothing in the forward pass but shares the
        // same initial inversion as sparse TF; compare per-step losses of
        // sparse TF against it at the steps before the first interior
        // forcing, where the computations must agree exactly.
        let tf = forced_forward(
            &model,
            &readout,
            &obs.view(),
            &ForcingSchedule::sparse_tf(4, 0.0),
        )
        .unwrap()
        .1;
        let fi = forced_forward(
            &model,
            &readout,
            &obs.view(),
            &ForcingSchedule::forward_iterate(4),
        )
        .unwrap()
        .1;
        for t in 0..4 {
            assert_eq!(tf[t].to_bits(), fi[t].to_bits(), "t={t}");
        }
        // and the loss at the forcing step itself uses the pre-forcing
        // state: it must equal the forward-iterated loss at t=4 too
        assert_eq!(tf[4].to_bits(), fi[4].to_bits());
        assert!(free.iter().zip(tf.iter()).any(|(a, b)| a != b));
    }

    /// Forward truncation: perturbing an observation at one forcing time
    /// changes no state nor loss after the next forcing time.
    #[test]
    fn forcing_isolates_later_segments() {
        let (model, readout) = init_params(Architecture::Plrnn, 6, 3, 3, 17).unwrap();
        let schedule = ForcingSchedule::sparse_tf(5, 0.0);
        let obs = lorenz_window(16, 4);
        let mut perturbed = obs.clone();
        perturbed[[5, 1]] += 0.37; // t=5 is a forcing time (0,5,10,15)
        let (states_a, losses_a) =
            forced_forward(&model, &readout, &obs.view(), &schedule).unwrap();
        let (states_b, losses_b) =
            forced_forward(&model, &readout, &perturbed.view(), &schedule).unwrap();
        // states from t=11 on are bit-identical: the t=10 forcing re-anchors
        for t in 11..16 {
            let a = states_a[t].to_flat();
            let b = states_b[t].to_flat();
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "t={t}");
            }
            if t != 5 {
                assert_eq!(losses_a[t].to_bits(), losses_b[t].to_bits());
            }
        }
        // while some state in 6..=10 differs
        let mut changed = false;
        for t in 6..=10 {
            if states_a[t].to_flat() != states_b[t].to_flat() {
                changed = true;
            }
        }
        assert!(changed);
    }

    #[test]
    fn finite_diff_check_rejects_zero_eps() {
        let obs = lorenz_window(5, 0);
        let (model, readout) = init_params(Architecture::Vanilla, 4, 3, 3, 1).unwrap();
        assert!(matches!(
            finite_diff_check(
                &model,
                &readout,
                &obs.view(),
                &ForcingSchedule::none(),
                0.0
            ),
            Err(Error::Config(_))
        ));
    }

    fn tiny_config(arch: Architecture, seed: u64) -> TrainConfig {
        TrainConfig {
            arch,
            m: 6,
            seq_len: 20,
            n_epochs: 25,
            batch_size: 4,
            lr: 1e-3,
            seed,
            schedule: ForcingSchedule::sparse_tf(5, 0.0),
            clip: None,
            plateau: None,
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut spec = example_spec(SystemKind::Lorenz, 1200);
        spec.transient = 300;
        let traj = simulate(&spec).unwrap();
        let (data, _, _) = standardize(&traj).unwrap();
        let cfg = tiny_config(Architecture::Lstm, 99);
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(b.history.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let fa: Vec<f64> = a.model.tensor_slices().concat();
        let fb: Vec<f64> = b.model.tensor_slices().concat();
        for (x, y) in fa.iter().zip(fb.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert!(a.diverged_at.is_none());
    }

    #[test]
    fn training_reduces_loss() {
        let mut spec = example_spec(SystemKind::Lorenz, 2000);
        spec.transient = 300;
        let traj = simulate(&spec).unwrap();
        let (data, _, _) = standardize(&traj).unwrap();
        let mut cfg = tiny_config(Architecture::Plrnn, 7);
        cfg.m = 12;
        cfg.n_epochs = 150;
        cfg.lr = 5e-3;
        let out = train(&cfg, &data).unwrap();
        let head: f64 = out.history[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = out.history[out.history.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(
            tail < 0.5 * head,
            "loss did not improve: head {head:.4} tail {tail:.4}"
        );
    }

    #[test]
    fn forced_forward_losses_match_generate_for_mode_none() {
        // mode none + loss definition: losses equal the free-run MSE terms
        let obs = lorenz_window(8, 0);
        let (model, readout) = init_params(Architecture::Lstm, 5, 3, 3, 15).unwrap();
        let (_, losses) =
            forced_forward(&model, &readout, &obs.view(), &ForcingSchedule::none()).unwrap();
        let z0 = model.zero_state();
        let (rows, _) = crate::models::free_run(&model, &readout, &z0, 8, None).unwrap();
        for t in 0..8 {
            let expect: f64 = obs
                .row(t)
                .iter()
                .zip(rows.row(t).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!((losses[t] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_state_is_hidden_cell_pair() {
        let (model, readout) = init_params(Architecture::Lstm, 4, 3, 3, 2).unwrap();
        let obs = lorenz_window(6, 1);
        let (states, _) = forced_forward(
            &model,
            &readout,
            &obs.view(),
            &ForcingSchedule::sparse_tf(2, 0.0),
        )
        .unwrap();
        assert!(matches!(states[3], LatentState::HiddenCell { .. }));
    }

    #[test]
    fn zero_reset_resets_to_zero_state() {
        // nonzero biases so the zero state is not a fixed point
        let (model, readout) = init_params(Architecture::Gru, 5, 3, 3, 3).unwrap();
        let ModelParams::Gru(mut p) = model else {
            unreachable!()
        };
        p.b_h.fill(0.3);
        let model = ModelParams::Gru(p);
        let obs = lorenz_window(10, 0);
        let schedule = ForcingSchedule::zero_reset(4);
        let pass =
            super::forward::run_forward(&model, &readout, &obs.view(), &schedule, None).unwrap();
        for t in [0usize, 4, 8] {
            assert!(pass.entering[t].to_flat().iter().all(|v| *v == 0.0));
        }
        assert!(pass.entering[2].to_flat().iter().any(|v| *v != 0.0));
    }
}
