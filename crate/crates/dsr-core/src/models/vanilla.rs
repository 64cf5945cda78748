use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Element-wise activation of the vanilla RNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Standard RNN: z_t = tanh(W z_{t-1} + B_in s_t + bias).
#[derive(Debug, Clone)]
pub struct VanillaRnnParams {
    pub w: Array2<f64>,
    pub b_in: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl VanillaRnnParams {
    pub fn latent_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_in.ncols()
    }

    /// Pre-activation W z + B_in s + bias.
    pub(crate) fn preactivation(
        &self,
        z: &ArrayView1<f64>,
        input: Option<&ArrayView1<f64>>,
    ) -> Array1<f64> {
        let mut a = self.w.dot(z) + &self.bias;
        if let Some(s) = input {
            a += &self.b_in.dot(s);
        }
        a
    }

    pub fn step(&self, z: &ArrayView1<f64>, input: Option<&ArrayView1<f64>>) -> Array1<f64> {
        self.preactivation(z, input).mapv(f64::tanh)
    }

    /// d z_t / d z_{t-1} = diag(1 - z_t²) W at the given state.
    pub fn jacobian(&self, z: &ArrayView1<f64>, input: Option<&ArrayView1<f64>>) -> Array2<f64> {
        let z_next = self.step(z, input);
        let mut jac = self.w.clone();
        for (i, zi) in z_next.iter().enumerate() {
            let d = 1.0 - zi * zi;
            jac.row_mut(i).mapv_inplace(|v| v * d);
        }
        jac
    }
}
