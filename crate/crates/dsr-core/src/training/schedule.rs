use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What happens at forcing times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingMode {
    /// Replace the state by the readout preimage of the observation.
    SparseTf,
    /// Reset the state to zero (windowing baseline).
    ZeroReset,
    /// Keep the forward-iterated state but truncate gradients (windowing
    /// baseline).
    ForwardIterate,
    /// No forcing at all: plain BPTT from the zero state.
    None,
}

fn zero() -> f64 {
    0.0
}

/// Forcing interval, mode and readout-inversion ridge. The forcing set is
/// 𝒯 = {nτ+1 : n ≥ 0} in 1-based step numbering, i.e. the first step of the
/// window and every τ-th step after it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ForcingSchedule {
    /// Required (finite) for every mode except `None`.
    pub tau: Option<usize>,
    pub mode: ForcingMode,
    /// Ridge added to B Bᵀ in the readout inversion.
    #[serde(default = "zero")]
    pub reg: f64,
    /// When positive, each forcing interval is drawn as
    /// round(τ + std·N(0,1)), clamped to ≥ 1 (train-time only).
    #[serde(default = "zero")]
    pub tau_jitter_std: f64,
}

impl ForcingSchedule {
    pub fn sparse_tf(tau: usize, reg: f64) -> Self {
        ForcingSchedule {
            tau: Some(tau),
            mode: ForcingMode::SparseTf,
            reg,
            tau_jitter_std: 0.0,
        }
    }

    pub fn zero_reset(tau: usize) -> Self {
        ForcingSchedule {
            tau: Some(tau),
            mode: ForcingMode::ZeroReset,
            reg: 0.0,
            tau_jitter_std: 0.0,
        }
    }

    pub fn forward_iterate(tau: usize) -> Self {
        ForcingSchedule {
            tau: Some(tau),
            mode: ForcingMode::ForwardIterate,
            reg: 0.0,
            tau_jitter_std: 0.0,
        }
    }

    pub fn none() -> Self {
        ForcingSchedule {
            tau: None,
            mode: ForcingMode::None,
            reg: 0.0,
            tau_jitter_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != ForcingMode::None {
            match self.tau {
                Some(t) if t >= 1 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "{:?} forcing requires a finite interval tau >= 1",
                        self.mode
                    )))
                }
            }
        }
        if self.reg < 0.0 {
            return Err(Error::Config(format!(
                "inversion regularizer must be >= 0, got {}",
                self.reg
            )));
        }
        if self.tau_jitter_std < 0.0 {
            return Err(Error::Config("tau_jitter_std must be >= 0".into()));
        }
        Ok(())
    }

    /// Per-step forcing flags over a window of `len` steps (0-based index
    /// t corresponds to the spec's t+1).
    pub fn forcing_flags(&self, len: usize) -> Vec<bool> {
        let mut flags = vec![false; len];
        if self.mode == ForcingMode::None {
            return flags;
        }
        let tau = self.tau.expect("validated");
        let mut t = 0;
        while t < len {
            flags[t] = true;
            t += tau;
        }
        flags
    }

    /// Jittered forcing times for one window: consecutive intervals are
    /// round(τ + std·N(0,1)), clamped to ≥ 1.
    pub fn jittered_forcing_times(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut times = Vec::new();
        if self.mode == ForcingMode::None {
            return times;
        }
        let tau = self.tau.expect("validated") as f64;
        let mut t = 0usize;
        while t < len {
            times.push(t);
            let step = if self.tau_jitter_std > 0.0 {
                // Box-Muller
                let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                let n = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (tau + self.tau_jitter_std * n).round().max(1.0) as usize
            } else {
                tau as usize
            };
            t += step.max(1);
        }
        times
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn forcing_set_is_multiples_of_tau() {
        let s = ForcingSchedule::sparse_tf(5, 0.0);
        let flags = s.forcing_flags(13);
        let times: Vec<usize> = flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect();
        assert_eq!(times, vec![0, 5, 10]);
    }

    #[test]
    fn none_mode_never_forces() {
        let s = ForcingSchedule::none();
        assert!(s.forcing_flags(10).iter().all(|&f| !f));
    }

    #[test]
    fn sparse_tf_requires_finite_tau() {
        let s = ForcingSchedule {
            tau: None,
            mode: ForcingMode::SparseTf,
            reg: 0.0,
            tau_jitter_std: 0.0,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn jittered_times_start_at_zero_and_stay_positive() {
        let mut s = ForcingSchedule::sparse_tf(10, 0.0);
        s.tau_jitter_std = 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let times = s.jittered_forcing_times(100, &mut rng);
        assert_eq!(times[0], 0);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!(*times.last().unwrap() < 100);
    }
}
