use ndarray::{Array1, Array2, ArrayView1};

/// Piecewise-linear RNN: z_t = A z_{t-1} + W relu(z_{t-1}) + C s_t + bias,
/// with A a diagonal matrix stored as a vector.
///
/// The noise term of the generative formulation is fixed at zero; the map is
/// treated deterministically throughout.
#[derive(Debug, Clone)]
pub struct PlrnnParams {
    /// Diagonal auto-regression weights.
    pub a: Array1<f64>,
    pub w: Array2<f64>,
    /// Input weights (M x K).
    pub c: Array2<f64>,
    pub bias: Array1<f64>,
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl PlrnnParams {
    pub fn latent_dim(&self) -> usize {
        self.a.len()
    }

    pub fn input_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn step(&self, z: &ArrayView1<f64>, input: Option<&ArrayView1<f64>>) -> Array1<f64> {
        let phi = z.mapv(relu);
        let mut next = &self.a * z + self.w.dot(&phi) + &self.bias;
        if let Some(s) = input {
            next += &self.c.dot(s);
        }
        next
    }

    /// Region-wise constant Jacobian diag(A) + W D_Ω, where D_Ω indicates
    /// the strictly positive components of the state. The ReLU derivative at
    /// exactly zero is taken as zero, matching the indicator definition.
    pub fn jacobian(&self, z: &ArrayView1<f64>, _input: Option<&ArrayView1<f64>>) -> Array2<f64> {
        let m = self.latent_dim();
        let mut jac = Array2::<f64>::zeros((m, m));
        for j in 0..m {
            if z[j] > 0.0 {
                jac.column_mut(j).assign(&self.w.column(j));
            }
        }
        for i in 0..m {
            jac[[i, i]] += self.a[i];
        }
        jac
    }
}
