use ndarray::{Array1, Array2, ArrayView1};

/// LSTM cell with input, forget, cell and output gates. The full latent
/// state is the pair (h, c); as a first-order map it acts on the stacked
/// vector z = (h, c) of dimension 2M.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ii: Array2<f64>,
    pub w_hi: Array2<f64>,
    pub w_if: Array2<f64>,
    pub w_hf: Array2<f64>,
    pub w_ig: Array2<f64>,
    pub w_hg: Array2<f64>,
    pub w_io: Array2<f64>,
    pub w_ho: Array2<f64>,
    pub b_i: Array1<f64>,
    pub b_f: Array1<f64>,
    pub b_g: Array1<f64>,
    pub b_o: Array1<f64>,
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

/// Gate activations and new states for one step; kept around for
/// backpropagation.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub c: Array1<f64>,
    pub h: Array1<f64>,
}

impl LstmParams {
    pub fn latent_dim(&self) -> usize {
        self.w_hi.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ii.ncols()
    }

    pub fn step_full(
        &self,
        h_prev: &ArrayView1<f64>,
        c_prev: &ArrayView1<f64>,
        input: Option<&ArrayView1<f64>>,
    ) -> LstmStep {
        let gate = |wi: &Array2<f64>, wh: &Array2<f64>, b: &Array1<f64>| -> Array1<f64> {
            let mut a = wh.dot(h_prev) + b;
            if let Some(s) = input {
                a += &wi.dot(s);
            }
            a
        };
        let i = gate(&self.w_ii, &self.w_hi, &self.b_i).mapv(sigmoid);
        let f = gate(&self.w_if, &self.w_hf, &self.b_f).mapv(sigmoid);
        let g = gate(&self.w_ig, &self.w_hg, &self.b_g).mapv(f64::tanh);
        let o = gate(&self.w_io, &self.w_ho, &self.b_o).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let h = &o * &c.mapv(f64::tanh);
        LstmStep { i, f, g, o, c, h }
    }

    pub fn step(
        &self,
        h_prev: &ArrayView1<f64>,
        c_prev: &ArrayView1<f64>,
        input: Option<&ArrayView1<f64>>,
    ) -> (Array1<f64>, Array1<f64>) {
        let s = self.step_full(h_prev, c_prev, input);
        (s.h, s.c)
    }

    /// Full 2M x 2M Jacobian of the map (h, c) -> (h', c') in block form
    /// [[dh'/dh, dh'/dc], [dc'/dh, dc'/dc]].
    pub fn jacobian(
        &self,
        h_prev: &ArrayView1<f64>,
        c_prev: &ArrayView1<f64>,
        input: Option<&ArrayView1<f64>>,
    ) -> Array2<f64> {
        let m = self.latent_dim();
        let s = self.step_full(h_prev, c_prev, input);
        let tanh_c = s.c.mapv(f64::tanh);
        let di = &s.i * &s.i.mapv(|v| 1.0 - v); // sigmoid'
        let df = &s.f * &s.f.mapv(|v| 1.0 - v);
        let dg = s.g.mapv(|v| 1.0 - v * v); // tanh'
        let d_o = &s.o * &s.o.mapv(|v| 1.0 - v);
        let dtanh_c = tanh_c.mapv(|v| 1.0 - v * v);

        // dc'/dh = diag(c_prev f') W_hf + diag(g i') W_hi + diag(i g') W_hg
        let mut dc_dh = Array2::<f64>::zeros((m, m));
        for r in 0..m {
            let cf = c_prev[r] * df[r];
            let gi = s.g[r] * di[r];
            let ig = s.i[r] * dg[r];
            for col in 0..m {
                dc_dh[[r, col]] =
                    cf * self.w_hf[[r, col]] + gi * self.w_hi[[r, col]] + ig * self.w_hg[[r, col]];
            }
        }

        let mut jac = Array2::<f64>::zeros((2 * m, 2 * m));
        for r in 0..m {
            let oh = tanh_c[r] * d_o[r]; // via the output gate
            let oc = s.o[r] * dtanh_c[r]; // via the new cell state
            for col in 0..m {
                // dh'/dh
                jac[[r, col]] = oh * self.w_ho[[r, col]] + oc * dc_dh[[r, col]];
                // dc'/dh
                jac[[m + r, col]] = dc_dh[[r, col]];
            }
            // dh'/dc = diag(o tanh'(c') f), dc'/dc = diag(f)
            jac[[r, m + r]] = oc * s.f[r];
            jac[[m + r, m + r]] = s.f[r];
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    /// All-zero weights force every sigmoid gate to 1/2 and the candidate
    /// to 0, so c' = c/2 and h' = tanh(c/2)/2.
    #[test]
    fn zero_lstm_halves_cell_state() {
        let m = 3;
        let z = Array2::<f64>::zeros((m, m));
        let p = LstmParams {
            w_ii: z.clone(),
            w_hi: z.clone(),
            w_if: z.clone(),
            w_hf: z.clone(),
            w_ig: z.clone(),
            w_hg: z.clone(),
            w_io: z.clone(),
            w_ho: z.clone(),
            b_i: Array1::zeros(m),
            b_f: Array1::zeros(m),
            b_g: Array1::zeros(m),
            b_o: Array1::zeros(m),
        };
        let h = Array1::from_vec(vec![0.3, -0.1, 0.7]);
        let c = Array1::from_vec(vec![1.0, -2.0, 0.5]);
        let (h2, c2) = p.step(&h.view(), &c.view(), None);
        for k in 0..m {
            assert!((c2[k] - 0.5 * c[k]).abs() < 1e-15);
            assert!((h2[k] - 0.5 * (0.5 * c[k]).tanh()).abs() < 1e-15);
        }
    }
}
