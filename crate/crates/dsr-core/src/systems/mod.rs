//! Benchmark chaotic systems and data preparation.
//!
//! Generates trajectories by fixed-step RK4 integration and prepares raw
//! series for training via standardization and delay embedding.

mod embedding;
mod trajectory;

pub use embedding::{delay_embed, select_delay, select_embedding_dim, EmbeddingSpec};
pub use trajectory::{
    apply_standardization, destandardize, standardize, Trajectory, TrajectoryMeta,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which benchmark system to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz,
    Roessler,
    Duffing,
    MackeyGlass,
}

impl SystemKind {
    /// Exact set of named constants this system requires.
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            SystemKind::Lorenz => &["sigma", "rho", "beta"],
            SystemKind::Roessler => &["a", "b", "c"],
            SystemKind::Duffing => &["alpha", "beta", "delta", "gamma", "omega"],
            SystemKind::MackeyGlass => &["beta", "gamma", "n", "rho_delay"],
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemKind::Lorenz | SystemKind::Roessler | SystemKind::Duffing => 3,
            SystemKind::MackeyGlass => 1,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::Roessler => "roessler",
            SystemKind::Duffing => "duffing",
            SystemKind::MackeyGlass => "mackey-glass",
        }
    }
}

fn default_transient() -> usize {
    1000
}

/// Specification of a simulation run. JSON document with these exact fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub params: BTreeMap<String, f64>,
    pub dt: f64,
    pub n_steps: usize,
    /// Steps discarded before recording starts.
    #[serde(default = "default_transient")]
    pub transient: usize,
    pub initial_state: Vec<f64>,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        let expected = self.kind.parameter_names();
        for name in expected {
            if !self.params.contains_key(*name) {
                return Err(Error::Config(format!(
                    "missing parameter '{name}' for {}",
                    self.kind.label()
                )));
            }
        }
        for key in self.params.keys() {
            if !expected.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown parameter '{key}' for {} (expected exactly {expected:?})",
                    self.kind.label()
                )));
            }
        }
        let want_state = match self.kind {
            SystemKind::Lorenz | SystemKind::Roessler => vec![3],
            // Duffing accepts (x, xdot) with phase starting at 0, or the full
            // autonomous state (x, xdot, theta).
            SystemKind::Duffing => vec![2, 3],
            SystemKind::MackeyGlass => vec![1],
        };
        if !want_state.contains(&self.initial_state.len()) {
            return Err(Error::Config(format!(
                "{} expects an initial state of length {want_state:?}, got {}",
                self.kind.label(),
                self.initial_state.len()
            )));
        }
        if self.kind == SystemKind::MackeyGlass && self.params["rho_delay"] < self.dt {
            return Err(Error::Config(
                "mackey-glass requires rho_delay >= dt".into(),
            ));
        }
        Ok(())
    }

    fn param(&self, name: &str) -> f64 {
        self.params[name]
    }
}

/// One classical RK4 step of an autonomous 3-state ODE.
fn rk4_step3(f: &impl Fn(&[f64; 3]) -> [f64; 3], y: &[f64; 3], dt: f64) -> [f64; 3] {
    let k1 = f(y);
    let y2 = [
        y[0] + 0.5 * dt * k1[0],
        y[1] + 0.5 * dt * k1[1],
        y[2] + 0.5 * dt * k1[2],
    ];
    let k2 = f(&y2);
    let y3 = [
        y[0] + 0.5 * dt * k2[0],
        y[1] + 0.5 * dt * k2[1],
        y[2] + 0.5 * dt * k2[2],
    ];
    let k3 = f(&y3);
    let y4 = [y[0] + dt * k3[0], y[1] + dt * k3[1], y[2] + dt * k3[2]];
    let k4 = f(&y4);
    [
        y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        y[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

pub(crate) fn lorenz_rhs(sigma: f64, rho: f64, beta: f64) -> impl Fn(&[f64; 3]) -> [f64; 3] {
    move |y| {
        [
            sigma * (y[1] - y[0]),
            y[0] * (rho - y[2]) - y[1],
            y[0] * y[1] - beta * y[2],
        ]
    }
}

fn roessler_rhs(a: f64, b: f64, c: f64) -> impl Fn(&[f64; 3]) -> [f64; 3] {
    move |y| [-y[1] - y[2], y[0] + a * y[1], b + y[2] * (y[0] - c)]
}

/// Duffing oscillator rewritten as the autonomous system (x, xdot, theta)
/// with theta' = omega; the periodic drive enters as gamma cos(theta).
fn duffing_rhs(
    alpha: f64,
    beta: f64,
    delta: f64,
    gamma: f64,
    omega: f64,
) -> impl Fn(&[f64; 3]) -> [f64; 3] {
    move |y| {
        [
            y[1],
            gamma * y[2].cos() - delta * y[1] - beta * y[0] - alpha * y[0].powi(3),
            omega,
        ]
    }
}

/// Fixed-capacity ring buffer over the recent past of a scalar series, with
/// linear interpolation at fractional step offsets. Offsets reaching before
/// the first sample return the constant initial history.
struct DelayBuffer {
    buf: Vec<f64>,
    /// Global index of the next slot to write.
    next: usize,
    initial: f64,
}

impl DelayBuffer {
    fn new(capacity: usize, initial: f64) -> Self {
        DelayBuffer {
            buf: vec![initial; capacity],
            next: 0,
            initial,
        }
    }

    fn push(&mut self, v: f64) {
        let cap = self.buf.len();
        self.buf[self.next % cap] = v;
        self.next += 1;
    }

    fn at_global(&self, idx: isize) -> f64 {
        if idx < 0 {
            return self.initial;
        }
        let idx = idx as usize;
        debug_assert!(idx < self.next && idx + self.buf.len() >= self.next);
        self.buf[idx % self.buf.len()]
    }

    /// Value `steps_back` (possibly fractional) steps before the most
    /// recently pushed sample.
    fn lagged(&self, steps_back: f64) -> f64 {
        let latest = self.next as f64 - 1.0;
        let pos = latest - steps_back;
        let lo = pos.floor();
        let frac = pos - lo;
        let v0 = self.at_global(lo as isize);
        if frac == 0.0 {
            return v0;
        }
        let v1 = self.at_global(lo as isize + 1);
        v0 + frac * (v1 - v0)
    }
}

/// Generate a trajectory by numerical integration of `spec`.
///
/// Records `n_steps` rows after discarding `transient` steps; integration is
/// fixed-step RK4 at step dt. Deterministic: identical specs produce
/// bit-identical trajectories.
pub fn simulate(spec: &SystemSpec) -> Result<Trajectory> {
    spec.validate()?;
    match spec.kind {
        SystemKind::Lorenz => {
            let f = lorenz_rhs(spec.param("sigma"), spec.param("rho"), spec.param("beta"));
            simulate_ode3(spec, &f, false)
        }
        SystemKind::Roessler => {
            let f = roessler_rhs(spec.param("a"), spec.param("b"), spec.param("c"));
            simulate_ode3(spec, &f, false)
        }
        SystemKind::Duffing => {
            let f = duffing_rhs(
                spec.param("alpha"),
                spec.param("beta"),
                spec.param("delta"),
                spec.param("gamma"),
                spec.param("omega"),
            );
            simulate_ode3(spec, &f, true)
        }
        SystemKind::MackeyGlass => simulate_mackey_glass(spec),
    }
}

fn simulate_ode3(
    spec: &SystemSpec,
    f: &impl Fn(&[f64; 3]) -> [f64; 3],
    wrap_third: bool,
) -> Result<Trajectory> {
    let mut y = [
        spec.initial_state[0],
        spec.initial_state.get(1).copied().unwrap_or(0.0),
        spec.initial_state.get(2).copied().unwrap_or(0.0),
    ];
    let total = spec.transient + spec.n_steps;
    let mut data = Vec::with_capacity(spec.n_steps * 3);
    for step in 0..total {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged {
                system: spec.kind.label().into(),
                step,
            });
        }
        if step >= spec.transient {
            data.extend_from_slice(&y);
        }
        // Skip the final advance once the last row has been recorded.
        if step + 1 == total {
            break;
        }
        y = rk4_step3(f, &y, spec.dt);
        if wrap_third {
            y[2] = y[2].rem_euclid(std::f64::consts::TAU);
        }
    }
    let data = ndarray::Array2::from_shape_vec((spec.n_steps, 3), data)
        .expect("row count matches recording loop");
    Trajectory::new(data, spec.dt, spec.kind.label())
}

fn simulate_mackey_glass(spec: &SystemSpec) -> Result<Trajectory> {
    let beta = spec.param("beta");
    let gamma = spec.param("gamma");
    let n_exp = spec.param("n");
    let rho = spec.param("rho_delay");
    let dt = spec.dt;
    let lag_steps = rho / dt;

    let rhs = |x: f64, x_delayed: f64| beta * x_delayed / (1.0 + x_delayed.powf(n_exp)) - gamma * x;

    let mut x = spec.initial_state[0];
    let capacity = lag_steps.ceil() as usize + 4;
    let mut history = DelayBuffer::new(capacity, x);
    history.push(x);

    let total = spec.transient + spec.n_steps;
    let mut data = Vec::with_capacity(spec.n_steps);
    for step in 0..total {
        if !x.is_finite() {
            return Err(Error::IntegrationDiverged {
                system: spec.kind.label().into(),
                step,
            });
        }
        if step >= spec.transient {
            data.push(x);
        }
        if step + 1 == total {
            break;
        }
        // RK4 stages; the delayed value is interpolated from the grid at the
        // stage times t - rho, t + dt/2 - rho and t + dt - rho.
        let xd0 = history.lagged(lag_steps);
        let xd_half = history.lagged(lag_steps - 0.5);
        let xd1 = history.lagged(lag_steps - 1.0);
        let k1 = rhs(x, xd0);
        let k2 = rhs(x + 0.5 * dt * k1, xd_half);
        let k3 = rhs(x + 0.5 * dt * k2, xd_half);
        let k4 = rhs(x + dt * k3, xd1);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        history.push(x);
    }
    let data = ndarray::Array2::from_shape_vec((spec.n_steps, 1), data)
        .expect("row count matches recording loop");
    Trajectory::new(data, dt, spec.kind.label())
}

/// Canonical chaotic-regime specs used throughout the docs and tests.
pub fn example_spec(kind: SystemKind, n_steps: usize) -> SystemSpec {
    let (params, dt, initial_state): (&[(&str, f64)], f64, Vec<f64>) = match kind {
        SystemKind::Lorenz => (
            &[("sigma", 16.0), ("rho", 45.92), ("beta", 4.0)],
            0.01,
            vec![1.0, 1.0, 1.0],
        ),
        SystemKind::Roessler => (
            &[("a", 0.15), ("b", 0.2), ("c", 10.0)],
            0.1,
            vec![1.0, 1.0, 1.0],
        ),
        SystemKind::Duffing => (
            &[
                ("alpha", 1.0),
                ("beta", -1.0),
                ("delta", 0.1),
                ("gamma", 0.35),
                ("omega", 1.4),
            ],
            0.17,
            vec![1.0, 0.0, 0.0],
        ),
        SystemKind::MackeyGlass => (
            &[
                ("beta", 2.0),
                ("gamma", 1.0),
                ("n", 9.65),
                ("rho_delay", 2.0),
            ],
            0.04,
            vec![0.5],
        ),
    };
    SystemSpec {
        kind,
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        dt,
        n_steps,
        transient: 1000,
        initial_state,
    }
}
