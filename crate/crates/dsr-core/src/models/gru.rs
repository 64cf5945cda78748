use ndarray::{Array1, Array2, ArrayView1};

/// Gated recurrent unit with update gate u, reset gate r and candidate n:
///   u = sigma(W_z s + U_z h + b_z)
///   r = sigma(W_r s + U_r h + b_r)
///   n = tanh(W_h s + U_h (r ⊙ h) + b_h)
///   h' = (1 - u) ⊙ n + u ⊙ h
#[derive(Debug, Clone)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gate activations for one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub u: Array1<f64>,
    pub r: Array1<f64>,
    pub n: Array1<f64>,
    pub h: Array1<f64>,
}

impl GruParams {
    pub fn latent_dim(&self) -> usize {
        self.u_z.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn step_full(&self, h_prev: &ArrayView1<f64>, input: Option<&ArrayView1<f64>>) -> GruStep {
        let gate = |wi: &Array2<f64>, uh: &Array2<f64>, b: &Array1<f64>| -> Array1<f64> {
            let mut a = uh.dot(h_prev) + b;
            if let Some(s) = input {
                a += &wi.dot(s);
            }
            a
        };
        let u = gate(&self.w_z, &self.u_z, &self.b_z).mapv(sigmoid);
        let r = gate(&self.w_r, &self.u_r, &self.b_r).mapv(sigmoid);
        let rh = &r * h_prev;
        let mut pre_n = self.u_h.dot(&rh) + &self.b_h;
        if let Some(s) = input {
            pre_n += &self.w_h.dot(s);
        }
        let n = pre_n.mapv(f64::tanh);
        let h = (1.0 - &u) * &n + &u * h_prev;
        GruStep { u, r, n, h }
    }

    pub fn step(&self, h_prev: &ArrayView1<f64>, input: Option<&ArrayView1<f64>>) -> Array1<f64> {
        self.step_full(h_prev, input).h
    }

    /// dh'/dh = diag(u) + diag((h - n) u') U_z
    ///        + diag((1-u) n') U_h [diag(r) + diag(h r') U_r]
    pub fn jacobian(
        &self,
        h_prev: &ArrayView1<f64>,
        input: Option<&ArrayView1<f64>>,
    ) -> Array2<f64> {
        let m = self.latent_dim();
        let s = self.step_full(h_prev, input);
        let du = &s.u * &s.u.mapv(|v| 1.0 - v);
        let dr = &s.r * &s.r.mapv(|v| 1.0 - v);
        let dn = s.n.mapv(|v| 1.0 - v * v);

        // inner = diag(r) + diag(h_prev ⊙ r') U_r
        let mut inner = Array2::<f64>::zeros((m, m));
        for row in 0..m {
            let hr = h_prev[row] * dr[row];
            for col in 0..m {
                inner[[row, col]] = hr * self.u_r[[row, col]];
            }
            inner[[row, row]] += s.r[row];
        }
        let uh_inner = self.u_h.dot(&inner);

        let mut jac = Array2::<f64>::zeros((m, m));
        for row in 0..m {
            let gate_term = (h_prev[row] - s.n[row]) * du[row];
            let cand_term = (1.0 - s.u[row]) * dn[row];
            for col in 0..m {
                jac[[row, col]] =
                    gate_term * self.u_z[[row, col]] + cand_term * uh_inner[[row, col]];
            }
            jac[[row, row]] += s.u[row];
        }
        jac
    }
}
