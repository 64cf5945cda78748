//! The four RNN architectures as explicit recursive maps with closed-form
//! single-step Jacobians, plus the linear readout and its pseudo-inverse
//! used for teacher forcing.

mod checkpoint;
mod gru;
mod lstm;
mod plrnn;
mod vanilla;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Normalization};
pub use gru::{GruParams, GruStep};
pub use lstm::{LstmParams, LstmStep};
pub use plrnn::PlrnnParams;
pub use vanilla::{Activation, VanillaRnnParams};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::systems::Trajectory;

/// Architecture tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Vanilla,
    Plrnn,
    Lstm,
    Gru,
}

impl Architecture {
    pub fn label(&self) -> &'static str {
        match self {
            Architecture::Vanilla => "vanilla",
            Architecture::Plrnn => "plrnn",
            Architecture::Lstm => "lstm",
            Architecture::Gru => "gru",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "rnn" => Ok(Architecture::Vanilla),
            "plrnn" => Ok(Architecture::Plrnn),
            "lstm" => Ok(Architecture::Lstm),
            "gru" => Ok(Architecture::Gru),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Latent state: a dense vector for vanilla RNN / PLRNN / GRU, the (h, c)
/// pair for the LSTM (whose full state is the stacked vector (h, c)).
#[derive(Debug, Clone)]
pub enum LatentState {
    Dense(Array1<f64>),
    HiddenCell { h: Array1<f64>, c: Array1<f64> },
}

impl LatentState {
    /// Dimension of the full state vector (2M for the LSTM).
    pub fn dim(&self) -> usize {
        match self {
            LatentState::Dense(z) => z.len(),
            LatentState::HiddenCell { h, c } => h.len() + c.len(),
        }
    }

    /// The part of the state the readout sees: h for the LSTM, z otherwise.
    pub fn readout_view(&self) -> &Array1<f64> {
        match self {
            LatentState::Dense(z) => z,
            LatentState::HiddenCell { h, .. } => h,
        }
    }

    pub fn to_flat(&self) -> Array1<f64> {
        match self {
            LatentState::Dense(z) => z.clone(),
            LatentState::HiddenCell { h, c } => {
                let mut out = Array1::<f64>::zeros(h.len() + c.len());
                out.slice_mut(s![..h.len()]).assign(h);
                out.slice_mut(s![h.len()..]).assign(c);
                out
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            LatentState::Dense(z) => z.iter().all(|v| v.is_finite()),
            LatentState::HiddenCell { h, c } => {
                h.iter().all(|v| v.is_finite()) && c.iter().all(|v| v.is_finite())
            }
        }
    }
}

/// Parameters of one of the four supported architectures.
#[derive(Debug, Clone)]
pub enum ModelParams {
    Vanilla(VanillaRnnParams),
    Plrnn(PlrnnParams),
    Lstm(LstmParams),
    Gru(GruParams),
}

impl ModelParams {
    pub fn arch(&self) -> Architecture {
        match self {
            ModelParams::Vanilla(_) => Architecture::Vanilla,
            ModelParams::Plrnn(_) => Architecture::Plrnn,
            ModelParams::Lstm(_) => Architecture::Lstm,
            ModelParams::Gru(_) => Architecture::Gru,
        }
    }

    /// Hidden size M.
    pub fn latent_dim(&self) -> usize {
        match self {
            ModelParams::Vanilla(p) => p.latent_dim(),
            ModelParams::Plrnn(p) => p.latent_dim(),
            ModelParams::Lstm(p) => p.latent_dim(),
            ModelParams::Gru(p) => p.latent_dim(),
        }
    }

    /// Dimension of the full state vector the map acts on (2M for LSTM).
    pub fn state_dim(&self) -> usize {
        match self {
            ModelParams::Lstm(p) => 2 * p.latent_dim(),
            other => other.latent_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelParams::Vanilla(p) => p.input_dim(),
            ModelParams::Plrnn(p) => p.input_dim(),
            ModelParams::Lstm(p) => p.input_dim(),
            ModelParams::Gru(p) => p.input_dim(),
        }
    }

    /// All-zero state of the right shape.
    pub fn zero_state(&self) -> LatentState {
        let m = self.latent_dim();
        match self {
            ModelParams::Lstm(_) => LatentState::HiddenCell {
                h: Array1::zeros(m),
                c: Array1::zeros(m),
            },
            _ => LatentState::Dense(Array1::zeros(m)),
        }
    }

    /// Wrap a readout preimage into a state: the LSTM places it in h with
    /// c = 0, the others use it directly.
    pub fn state_from_readout_preimage(&self, z: Array1<f64>) -> LatentState {
        match self {
            ModelParams::Lstm(_) => {
                let m = self.latent_dim();
                LatentState::HiddenCell {
                    h: z,
                    c: Array1::zeros(m),
                }
            }
            _ => LatentState::Dense(z),
        }
    }

    pub fn state_from_flat(&self, flat: &ArrayView1<f64>) -> Result<LatentState> {
        if flat.len() != self.state_dim() {
            return Err(Error::Shape(format!(
                "flat state has length {}, expected {}",
                flat.len(),
                self.state_dim()
            )));
        }
        Ok(match self {
            ModelParams::Lstm(p) => {
                let m = p.latent_dim();
                LatentState::HiddenCell {
                    h: flat.slice(s![..m]).to_owned(),
                    c: flat.slice(s![m..]).to_owned(),
                }
            }
            _ => LatentState::Dense(flat.to_owned()),
        })
    }

    fn check_io(&self, state: &LatentState, input: Option<&ArrayView1<f64>>) -> Result<()> {
        let ok_state = match (self, state) {
            (ModelParams::Lstm(p), LatentState::HiddenCell { h, c }) => {
                h.len() == p.latent_dim() && c.len() == p.latent_dim()
            }
            (ModelParams::Lstm(_), _) => false,
            (_, LatentState::Dense(z)) => z.len() == self.latent_dim(),
            (_, LatentState::HiddenCell { .. }) => false,
        };
        if !ok_state {
            return Err(Error::Shape(format!(
                "state of dimension {} does not match {} model with M = {}",
                state.dim(),
                self.arch().label(),
                self.latent_dim()
            )));
        }
        if let Some(input) = input {
            if input.len() != self.input_dim() {
                return Err(Error::Shape(format!(
                    "input of dimension {} does not match model input size {}",
                    input.len(),
                    self.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// One application of the architecture's update equations. An absent
    /// input is treated as the zero vector (autonomous mode).
    pub fn step(&self, state: &LatentState, input: Option<&ArrayView1<f64>>) -> Result<LatentState> {
        self.check_io(state, input)?;
        Ok(match (self, state) {
            (ModelParams::Vanilla(p), LatentState::Dense(z)) => {
                LatentState::Dense(p.step(&z.view(), input))
            }
            (ModelParams::Plrnn(p), LatentState::Dense(z)) => {
                LatentState::Dense(p.step(&z.view(), input))
            }
            (ModelParams::Gru(p), LatentState::Dense(z)) => {
                LatentState::Dense(p.step(&z.view(), input))
            }
            (ModelParams::Lstm(p), LatentState::HiddenCell { h, c }) => {
                let (h2, c2) = p.step(&h.view(), &c.view(), input);
                LatentState::HiddenCell { h: h2, c: c2 }
            }
            _ => unreachable!("check_io verified the pairing"),
        })
    }

    /// Exact analytic Jacobian of the state map at the given state,
    /// d z_t / d z_{t-1}, of size state_dim x state_dim (the LSTM returns
    /// the 2M x 2M block matrix over (h, c)).
    pub fn jacobian(
        &self,
        state: &LatentState,
        input: Option<&ArrayView1<f64>>,
    ) -> Result<Array2<f64>> {
        self.check_io(state, input)?;
        Ok(match (self, state) {
            (ModelParams::Vanilla(p), LatentState::Dense(z)) => p.jacobian(&z.view(), input),
            (ModelParams::Plrnn(p), LatentState::Dense(z)) => p.jacobian(&z.view(), input),
            (ModelParams::Gru(p), LatentState::Dense(z)) => p.jacobian(&z.view(), input),
            (ModelParams::Lstm(p), LatentState::HiddenCell { h, c }) => {
                p.jacobian(&h.view(), &c.view(), input)
            }
            _ => unreachable!("check_io verified the pairing"),
        })
    }
}

/// An autonomous discrete-time map on a flat state vector. Lyapunov
/// diagnostics operate on this view; every [`ModelParams`] provides it, as
/// do the constructed linear maps used in the theorem demonstrations.
pub trait DynamicalMap {
    fn state_dim(&self) -> usize;
    fn apply_map(&self, z: &ArrayView1<f64>) -> Array1<f64>;
    fn jacobian_map(&self, z: &ArrayView1<f64>) -> Array2<f64>;
}

impl DynamicalMap for ModelParams {
    fn state_dim(&self) -> usize {
        ModelParams::state_dim(self)
    }

    fn apply_map(&self, z: &ArrayView1<f64>) -> Array1<f64> {
        let state = self.state_from_flat(z).expect("state dim checked");
        self.step(&state, None).expect("autonomous step").to_flat()
    }

    fn jacobian_map(&self, z: &ArrayView1<f64>) -> Array2<f64> {
        let state = self.state_from_flat(z).expect("state dim checked");
        self.jacobian(&state, None).expect("autonomous jacobian")
    }
}

/// Linear readout x̂ = B z mapping latent states into observation space,
/// with an optional ridge term for the inversion used in teacher forcing.
#[derive(Debug, Clone)]
pub struct Readout {
    /// N x M observation matrix.
    pub b_out: Array2<f64>,
    pub reg: f64,
}

impl Readout {
    pub fn obs_dim(&self) -> usize {
        self.b_out.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.b_out.ncols()
    }

    pub fn apply(&self, state: &LatentState) -> Result<Array1<f64>> {
        let r = state.readout_view();
        if r.len() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "readout expects latent dimension {}, got {}",
                self.latent_dim(),
                r.len()
            )));
        }
        Ok(self.b_out.dot(r))
    }

    /// Least-squares preimage of an observation. Equivalent to
    /// (BᵀB + reg I)⁻¹ Bᵀ x wherever that expression is defined, computed
    /// through the push-through identity as Bᵀ (B Bᵀ + reg I)⁻¹ x, which
    /// stays well-posed for the wide readouts (N <= M) used in forcing.
    pub fn invert(&self, x: &ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.inversion()?.invert(x).0)
    }

    /// Factor the inversion once; cheap to reuse across many observations.
    pub fn inversion(&self) -> Result<ReadoutInversion> {
        if self.reg < 0.0 {
            return Err(Error::Config(format!(
                "readout regularizer must be >= 0, got {}",
                self.reg
            )));
        }
        let n = self.obs_dim();
        let mut q = self.b_out.dot(&self.b_out.t());
        for i in 0..n {
            q[[i, i]] += self.reg;
        }
        let chol = linalg::cholesky(&q.view()).map_err(|_| {
            Error::Singular(format!(
                "readout normal matrix (N = {n}) is not positive definite with reg = {}",
                self.reg
            ))
        })?;
        Ok(ReadoutInversion {
            chol,
            b_out: self.b_out.clone(),
        })
    }
}

/// Cached Cholesky factorization of Q = B Bᵀ + reg I.
#[derive(Debug, Clone)]
pub struct ReadoutInversion {
    chol: Array2<f64>,
    b_out: Array2<f64>,
}

impl ReadoutInversion {
    /// Returns (z̃, y) with z̃ = Bᵀ y and y = Q⁻¹ x. The intermediate y is
    /// what the gradient of the inversion needs.
    pub fn invert(&self, x: &ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        let y = linalg::cholesky_solve(&self.chol.view(), x);
        (self.b_out.t().dot(&y), y)
    }

    /// Q⁻¹ v.
    pub fn solve(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        linalg::cholesky_solve(&self.chol.view(), v)
    }

    pub fn b_out(&self) -> &Array2<f64> {
        &self.b_out
    }
}

/// Free-run rollout without forcing: returns the observation rows produced
/// and the step index at which the state left the finite range, if any.
pub fn free_run(
    model: &ModelParams,
    readout: &Readout,
    z1: &LatentState,
    steps: usize,
    inputs: Option<&ArrayView2<f64>>,
) -> Result<(Array2<f64>, Option<usize>)> {
    if let Some(inp) = inputs {
        if inp.nrows() < steps || inp.ncols() != model.input_dim() {
            return Err(Error::Shape(format!(
                "input sequence {}x{} does not cover {} steps of input size {}",
                inp.nrows(),
                inp.ncols(),
                steps,
                model.input_dim()
            )));
        }
    }
    let n = readout.obs_dim();
    let mut rows = Array2::<f64>::zeros((steps, n));
    let mut state = z1.clone();
    for t in 0..steps {
        if !state.is_finite() {
            return Ok((rows.slice(s![..t, ..]).to_owned(), Some(t)));
        }
        let x = readout.apply(&state)?;
        rows.row_mut(t).assign(&x);
        if t + 1 < steps {
            let input = inputs.map(|m| m.row(t + 1));
            state = model.step(&state, input.as_ref())?;
        }
    }
    Ok((rows, None))
}

/// Free-run rollout mapped through the readout; errors with the step index
/// if the orbit diverges.
pub fn generate(
    model: &ModelParams,
    readout: &Readout,
    z1: &LatentState,
    steps: usize,
    inputs: Option<&ArrayView2<f64>>,
    dt: f64,
    name: &str,
) -> Result<Trajectory> {
    if steps < 1 {
        return Err(Error::Config("generate requires at least one step".into()));
    }
    let (rows, diverged) = free_run(model, readout, z1, steps, inputs)?;
    if let Some(step) = diverged {
        return Err(Error::OrbitDiverged { step });
    }
    Trajectory::new(rows, dt, name)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data length")
}

/// Deterministic seeded initialization. Recurrence and input matrices are
/// uniform scaled by 1/sqrt(M), PLRNN auto-regression entries are uniform in
/// (0.3, 0.9), biases start at zero, and the readout uses the same scaled
/// uniform. The same seed always produces bitwise-identical parameters.
pub fn init_params(
    arch: Architecture,
    m: usize,
    n_in: usize,
    n_out: usize,
    seed: u64,
) -> Result<(ModelParams, Readout)> {
    if m < 1 || n_in < 1 || n_out < 1 {
        return Err(Error::Config(format!(
            "sizes must be >= 1, got M={m}, N_in={n_in}, N_out={n_out}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (m as f64).sqrt();
    let model = match arch {
        Architecture::Vanilla => ModelParams::Vanilla(VanillaRnnParams {
            w: uniform_matrix(&mut rng, m, m, scale),
            b_in: uniform_matrix(&mut rng, m, n_in, scale),
            bias: Array1::zeros(m),
            activation: Activation::Tanh,
        }),
        Architecture::Plrnn => {
            let a_data: Vec<f64> = (0..m).map(|_| rng.random_range(0.3..0.9)).collect();
            ModelParams::Plrnn(PlrnnParams {
                a: Array1::from_vec(a_data),
                w: uniform_matrix(&mut rng, m, m, scale),
                c: uniform_matrix(&mut rng, m, n_in, scale),
                bias: Array1::zeros(m),
            })
        }
        Architecture::Lstm => ModelParams::Lstm(LstmParams {
            w_ii: uniform_matrix(&mut rng, m, n_in, scale),
            w_hi: uniform_matrix(&mut rng, m, m, scale),
            w_if: uniform_matrix(&mut rng, m, n_in, scale),
            w_hf: uniform_matrix(&mut rng, m, m, scale),
            w_ig: uniform_matrix(&mut rng, m, n_in, scale),
            w_hg: uniform_matrix(&mut rng, m, m, scale),
            w_io: uniform_matrix(&mut rng, m, n_in, scale),
            w_ho: uniform_matrix(&mut rng, m, m, scale),
            b_i: Array1::zeros(m),
            b_f: Array1::zeros(m),
            b_g: Array1::zeros(m),
            b_o: Array1::zeros(m),
        }),
        Architecture::Gru => ModelParams::Gru(GruParams {
            w_z: uniform_matrix(&mut rng, m, n_in, scale),
            w_r: uniform_matrix(&mut rng, m, n_in, scale),
            w_h: uniform_matrix(&mut rng, m, n_in, scale),
            u_z: uniform_matrix(&mut rng, m, m, scale),
            u_r: uniform_matrix(&mut rng, m, m, scale),
            u_h: uniform_matrix(&mut rng, m, m, scale),
            b_z: Array1::zeros(m),
            b_r: Array1::zeros(m),
            b_h: Array1::zeros(m),
        }),
    };
    let readout = Readout {
        b_out: uniform_matrix(&mut rng, n_out, m, scale),
        reg: 0.0,
    };
    Ok((model, readout))
}

// ---------------------------------------------------------------------------
// Flat parameter views (optimizer, clipping, finite differences)
// ---------------------------------------------------------------------------

impl ModelParams {
    /// Parameter tensors as slices, in a fixed canonical order.
    pub(crate) fn tensor_slices(&self) -> Vec<&[f64]> {
        fn sl2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("owned arrays are standard layout")
        }
        fn sl1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("owned arrays are standard layout")
        }
        match self {
            ModelParams::Vanilla(p) => vec![sl2(&p.w), sl2(&p.b_in), sl1(&p.bias)],
            ModelParams::Plrnn(p) => vec![sl1(&p.a), sl2(&p.w), sl2(&p.c), sl1(&p.bias)],
            ModelParams::Lstm(p) => vec![
                sl2(&p.w_ii),
                sl2(&p.w_hi),
                sl2(&p.w_if),
                sl2(&p.w_hf),
                sl2(&p.w_ig),
                sl2(&p.w_hg),
                sl2(&p.w_io),
                sl2(&p.w_ho),
                sl1(&p.b_i),
                sl1(&p.b_f),
                sl1(&p.b_g),
                sl1(&p.b_o),
            ],
            ModelParams::Gru(p) => vec![
                sl2(&p.w_z),
                sl2(&p.w_r),
                sl2(&p.w_h),
                sl2(&p.u_z),
                sl2(&p.u_r),
                sl2(&p.u_h),
                sl1(&p.b_z),
                sl1(&p.b_r),
                sl1(&p.b_h),
            ],
        }
    }

    pub(crate) fn tensor_slices_mut(&mut self) -> Vec<&mut [f64]> {
        fn sl2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("owned arrays are standard layout")
        }
        fn sl1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("owned arrays are standard layout")
        }
        match self {
            ModelParams::Vanilla(p) => vec![sl2(&mut p.w), sl2(&mut p.b_in), sl1(&mut p.bias)],
            ModelParams::Plrnn(p) => {
                vec![sl1(&mut p.a), sl2(&mut p.w), sl2(&mut p.c), sl1(&mut p.bias)]
            }
            ModelParams::Lstm(p) => vec![
                sl2(&mut p.w_ii),
                sl2(&mut p.w_hi),
                sl2(&mut p.w_if),
                sl2(&mut p.w_hf),
                sl2(&mut p.w_ig),
                sl2(&mut p.w_hg),
                sl2(&mut p.w_io),
                sl2(&mut p.w_ho),
                sl1(&mut p.b_i),
                sl1(&mut p.b_f),
                sl1(&mut p.b_g),
                sl1(&mut p.b_o),
            ],
            ModelParams::Gru(p) => vec![
                sl2(&mut p.w_z),
                sl2(&mut p.w_r),
                sl2(&mut p.w_h),
                sl2(&mut p.u_z),
                sl2(&mut p.u_r),
                sl2(&mut p.u_h),
                sl1(&mut p.b_z),
                sl1(&mut p.b_r),
                sl1(&mut p.b_h),
            ],
        }
    }

    /// Total number of scalar parameters (model only, without readout).
    pub fn param_count(&self) -> usize {
        self.tensor_slices().iter().map(|s| s.len()).sum()
    }

    /// Matching all-zeros container, used to accumulate gradients.
    pub fn zeros_like(&self) -> ModelParams {
        let mut g = self.clone();
        for sl in g.tensor_slices_mut() {
            sl.fill(0.0);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn state_of(model: &ModelParams, flat: &[f64]) -> LatentState {
        model
            .state_from_flat(&Array1::from_vec(flat.to_vec()).view())
            .unwrap()
    }

    #[test]
    fn vanilla_zero_weights_maps_to_zero() {
        let (model, _) = init_params(Architecture::Vanilla, 4, 2, 2, 0).unwrap();
        let ModelParams::Vanilla(mut p) = model else {
            unreachable!()
        };
        p.w.fill(0.0);
        p.b_in.fill(0.0);
        p.bias.fill(0.0);
        let model = ModelParams::Vanilla(p);
        let z = state_of(&model, &[0.3, -0.7, 2.0, -5.0]);
        let next = model.step(&z, None).unwrap();
        assert!(next.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn plrnn_identity_map() {
        let m = 3;
        let p = PlrnnParams {
            a: Array1::ones(m),
            w: Array2::zeros((m, m)),
            c: Array2::zeros((m, 1)),
            bias: Array1::zeros(m),
        };
        let model = ModelParams::Plrnn(p);
        let z = state_of(&model, &[0.5, -1.5, 2.0]);
        let next = model.step(&z, None).unwrap();
        for (a, b) in next.to_flat().iter().zip(z.to_flat().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn plrnn_jacobian_in_positive_orthant_is_a_plus_w() {
        let (model, _) = init_params(Architecture::Plrnn, 5, 1, 1, 42).unwrap();
        let z = state_of(&model, &[0.5, 1.0, 2.0, 0.1, 3.0]);
        let jac = model.jacobian(&z, None).unwrap();
        let ModelParams::Plrnn(p) = &model else {
            unreachable!()
        };
        for i in 0..5 {
            for j in 0..5 {
                let expect = p.w[[i, j]] + if i == j { p.a[i] } else { 0.0 };
                assert_eq!(jac[[i, j]], expect);
            }
        }
    }

    #[test]
    fn vanilla_jacobian_at_zero_preactivation_is_w() {
        let (model, _) = init_params(Architecture::Vanilla, 4, 1, 1, 7).unwrap();
        let z = state_of(&model, &[0.0; 4]);
        // bias is zero at init, so the pre-activation at z = 0 is zero and
        // tanh' = 1 everywhere.
        let jac = model.jacobian(&z, None).unwrap();
        let ModelParams::Vanilla(p) = &model else {
            unreachable!()
        };
        for (a, b) in jac.iter().zip(p.w.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    /// Central finite differences of the step map as the Jacobian oracle.
    fn fd_jacobian(model: &ModelParams, z_flat: &Array1<f64>, eps: f64) -> Array2<f64> {
        let d = model.state_dim();
        let mut jac = Array2::<f64>::zeros((d, d));
        for j in 0..d {
            let mut plus = z_flat.clone();
            plus[j] += eps;
            let mut minus = z_flat.clone();
            minus[j] -= eps;
            let fp = model.apply_map(&plus.view());
            let fm = model.apply_map(&minus.view());
            for i in 0..d {
                jac[[i, j]] = (fp[i] - fm[i]) / (2.0 * eps);
            }
        }
        jac
    }

    #[test]
    fn jacobians_match_finite_differences_all_architectures() {
        for (arch, seed) in [
            (Architecture::Vanilla, 11_u64),
            (Architecture::Plrnn, 12),
            (Architecture::Lstm, 13),
            (Architecture::Gru, 14),
        ] {
            let (model, _) = init_params(arch, 4, 2, 2, seed).unwrap();
            let d = model.state_dim();
            let z = Array1::from_shape_fn(d, |i| 0.4 * ((i + 1) as f64 * 0.9).sin() + 0.15);
            let analytic = model.jacobian_map(&z.view());
            let numeric = fd_jacobian(&model, &z, 1e-6);
            let mut max_rel = 0.0_f64;
            for (a, n) in analytic.iter().zip(numeric.iter()) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
            assert!(
                max_rel < 1e-6,
                "{}: max relative error {max_rel:.3e}",
                arch.label()
            );
        }
    }

    #[test]
    fn readout_apply_identity_and_zero() {
        let z = LatentState::Dense(array![1.0, -2.0, 3.0]);
        let eye = Readout {
            b_out: Array2::eye(3),
            reg: 0.0,
        };
        assert_eq!(eye.apply(&z).unwrap(), array![1.0, -2.0, 3.0]);
        let zero = Readout {
            b_out: Array2::zeros((2, 3)),
            reg: 0.0,
        };
        assert_eq!(zero.apply(&z).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn readout_apply_matches_dot_product_oracle() {
        let (_, readout) = init_params(Architecture::Vanilla, 6, 1, 3, 99).unwrap();
        let z = Array1::from_shape_fn(6, |i| (i as f64 * 1.3).cos());
        let x = readout.apply(&LatentState::Dense(z.clone())).unwrap();
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += readout.b_out[[i, j]] * z[j];
            }
            assert_abs_diff_eq!(x[i], acc, epsilon = 1e-14);
        }
    }

    #[test]
    fn invert_readout_identity() {
        let r = Readout {
            b_out: Array2::eye(4),
            reg: 0.0,
        };
        let x = array![0.1, -0.2, 0.3, 4.0];
        let z = r.invert(&x.view()).unwrap();
        for (a, b) in z.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn invert_readout_orthonormal_rows_is_transpose() {
        // B with orthonormal rows (N < M): BBᵀ = I, so z̃ = Bᵀ x.
        let b = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let r = Readout { b_out: b, reg: 0.0 };
        let x = array![2.0, -3.0];
        let z = r.invert(&x.view()).unwrap();
        let expect = array![2.0, 0.0, -3.0, 0.0];
        for (a, b) in z.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    /// Oracle: minimum-norm least squares through Gaussian elimination with
    /// partial pivoting on the N x N system (B Bᵀ) y = x, independent of the
    /// Cholesky path used by the implementation.
    #[test]
    fn invert_readout_matches_gaussian_elimination_oracle() {
        let (_, readout) = init_params(Architecture::Vanilla, 8, 1, 3, 5).unwrap();
        let x = array![0.7, -1.1, 0.4];
        let z = readout.invert(&x.view()).unwrap();

        let b = &readout.b_out;
        let q = b.dot(&b.t());
        let mut aug = Array2::<f64>::zeros((3, 4));
        aug.slice_mut(s![.., ..3]).assign(&q);
        aug.slice_mut(s![.., 3]).assign(&x);
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&a, &b| aug[[a, col]].abs().partial_cmp(&aug[[b, col]].abs()).unwrap())
                .unwrap();
            if pivot != col {
                for j in 0..4 {
                    let tmp = aug[[col, j]];
                    aug[[col, j]] = aug[[pivot, j]];
                    aug[[pivot, j]] = tmp;
                }
            }
            for row in col + 1..3 {
                let f = aug[[row, col]] / aug[[col, col]];
                for j in col..4 {
                    aug[[row, j]] -= f * aug[[col, j]];
                }
            }
        }
        let mut y = Array1::<f64>::zeros(3);
        for row in (0..3).rev() {
            let mut acc = aug[[row, 3]];
            for j in row + 1..3 {
                acc -= aug[[row, j]] * y[j];
            }
            y[row] = acc / aug[[row, row]];
        }
        let z_oracle = b.t().dot(&y);
        for (a, b) in z.iter().zip(z_oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        // And B z̃ reproduces x exactly (full-row-rank wide readout).
        let back = b.dot(&z);
        for (a, b) in back.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn invert_readout_square_round_trip() {
        let b = array![[2.0, 1.0], [0.5, -1.5]];
        let r = Readout { b_out: b, reg: 0.0 };
        let x = array![1.0, 2.0];
        let z = r.invert(&x.view()).unwrap();
        let back = r.b_out.dot(&z);
        for (a, b) in back.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn invert_readout_singular_without_reg_errors() {
        // Rank-deficient rows: B Bᵀ singular at reg = 0.
        let b = array![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let r = Readout {
            b_out: b.clone(),
            reg: 0.0,
        };
        assert!(matches!(
            r.invert(&array![1.0, 2.0].view()),
            Err(Error::Singular(_))
        ));
        let r = Readout { b_out: b, reg: 1e-6 };
        assert!(r.invert(&array![1.0, 2.0].view()).is_ok());
    }

    #[test]
    fn generate_single_step_is_readout_of_initial_state() {
        let (model, readout) = init_params(Architecture::Gru, 5, 1, 2, 3).unwrap();
        let z1 = model.state_from_readout_preimage(Array1::from_elem(5, 0.2));
        let traj = generate(&model, &readout, &z1, 1, None, 1.0, "one").unwrap();
        assert_eq!(traj.len(), 1);
        let expect = readout.apply(&z1).unwrap();
        for (a, b) in traj.data.row(0).iter().zip(expect.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn generate_constant_orbit_for_plrnn_identity() {
        let m = 3;
        let model = ModelParams::Plrnn(PlrnnParams {
            a: Array1::ones(m),
            w: Array2::zeros((m, m)),
            c: Array2::zeros((m, 1)),
            bias: Array1::zeros(m),
        });
        let readout = Readout {
            b_out: Array2::eye(m),
            reg: 0.0,
        };
        let z1 = LatentState::Dense(array![0.4, -0.6, 1.1]);
        let traj = generate(&model, &readout, &z1, 50, None, 1.0, "const").unwrap();
        for t in 0..50 {
            for j in 0..m {
                assert_eq!(traj.data[[t, j]], traj.data[[0, j]]);
            }
        }
    }

    #[test]
    fn init_params_deterministic_and_seed_sensitive() {
        for arch in [
            Architecture::Vanilla,
            Architecture::Plrnn,
            Architecture::Lstm,
            Architecture::Gru,
        ] {
            let (a, ra) = init_params(arch, 6, 2, 3, 123).unwrap();
            let (b, rb) = init_params(arch, 6, 2, 3, 123).unwrap();
            let (c, _) = init_params(arch, 6, 2, 3, 124).unwrap();
            let fa: Vec<f64> = a.tensor_slices().concat();
            let fb: Vec<f64> = b.tensor_slices().concat();
            let fc: Vec<f64> = c.tensor_slices().concat();
            assert_eq!(fa, fb, "{} same seed", arch.label());
            assert_ne!(fa, fc, "{} different seed", arch.label());
            assert_eq!(ra.b_out, rb.b_out);
        }
    }

    #[test]
    fn plrnn_init_autoregression_in_range() {
        let (model, _) = init_params(Architecture::Plrnn, 16, 1, 1, 9).unwrap();
        let ModelParams::Plrnn(p) = &model else {
            unreachable!()
        };
        assert!(p.a.iter().all(|v| (0.3..0.9).contains(v)));
    }

    #[test]
    fn step_shape_mismatch_is_error() {
        let (model, _) = init_params(Architecture::Lstm, 4, 2, 2, 1).unwrap();
        let bad = LatentState::Dense(Array1::zeros(8));
        assert!(matches!(model.step(&bad, None), Err(Error::Shape(_))));
        let good = model.zero_state();
        let bad_input = Array1::zeros(3);
        assert!(matches!(
            model.step(&good, Some(&bad_input.view())),
            Err(Error::Shape(_))
        ));
    }
}
