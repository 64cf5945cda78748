//! Hand-derived backpropagation through time for all four architectures,
//! with the truncation semantics of sparse forcing: the state-to-state
//! Jacobian across a forcing boundary is identically zero for the replaced
//! coordinates, so each loss term's backward recursion stops at the most
//! recent forcing time. Immediate parameter derivatives are accumulated at
//! every step, including forced ones, and the readout gradient includes the
//! exact derivative of the control series z̃ = Bᵀ(BBᵀ + reg I)⁻¹x used for
//! forcing, so the whole gradient matches finite differences of the forced
//! loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::forward::{run_forward, ForwardPass};
use super::optim::GradientSet;
use super::schedule::{ForcingMode, ForcingSchedule};
use crate::error::Result;
use crate::models::{
    GruParams, LatentState, LstmParams, ModelParams, PlrnnParams, Readout, ReadoutInversion,
    VanillaRnnParams,
};

fn outer(u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((u.len(), v.len()));
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            m[[i, j]] = ui * vj;
        }
    }
    m
}

fn add_outer(target: &mut Array2<f64>, u: &Array1<f64>, v: &Array1<f64>) {
    for (i, ui) in u.iter().enumerate() {
        let mut row = target.row_mut(i);
        for (j, vj) in v.iter().enumerate() {
            row[j] += ui * vj;
        }
    }
}

/// Adjoint of a latent state; `cell` is present for the LSTM.
struct Adjoint {
    main: Array1<f64>,
    cell: Option<Array1<f64>>,
}

impl Adjoint {
    fn zeros(model: &ModelParams) -> Self {
        let m = model.latent_dim();
        Adjoint {
            main: Array1::zeros(m),
            cell: matches!(model, ModelParams::Lstm(_)).then(|| Array1::zeros(m)),
        }
    }
}

/// Gradient of the loss with respect to B through the control series:
/// with z̃ = Bᵀ y, y = Q⁻¹ x, Q = B Bᵀ + reg I and adjoint a = ∂L/∂z̃,
///   ∂L/∂B += y aᵀ − (v yᵀ + y vᵀ) B,  v = Q⁻¹ B a.
fn inversion_grad(
    inv: &ReadoutInversion,
    a: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
    grad_b: &mut Array2<f64>,
) {
    let b = inv.b_out();
    let ba = b.dot(a);
    let v = inv.solve(&ba.view());
    // y aᵀ
    for (i, yi) in y.iter().enumerate() {
        let mut row = grad_b.row_mut(i);
        for (j, aj) in a.iter().enumerate() {
            row[j] += yi * aj;
        }
    }
    // −(v yᵀ + y vᵀ) B
    let s = outer(&v.view(), y) + outer(y, &v.view());
    let sb = s.dot(b);
    *grad_b -= &sb;
}

/// Analytic gradients of Σ_t ℒ_t over one observation window under the
/// given schedule, together with the total loss.
pub fn bptt_gradients(
    model: &ModelParams,
    readout: &Readout,
    obs: &ArrayView2<f64>,
    schedule: &ForcingSchedule,
) -> Result<(GradientSet, f64)> {
    let pass = run_forward(model, readout, obs, schedule, None)?;
    backward(model, readout, schedule, &pass)
}

/// Same as [`bptt_gradients`] but with externally supplied forcing times
/// (used for jittered-τ training).
pub(crate) fn bptt_gradients_at(
    model: &ModelParams,
    readout: &Readout,
    obs: &ArrayView2<f64>,
    schedule: &ForcingSchedule,
    forcing_times: &[usize],
) -> Result<(GradientSet, f64)> {
    let pass = run_forward(model, readout, obs, schedule, Some(forcing_times))?;
    backward(model, readout, schedule, &pass)
}

pub(crate) fn backward(
    model: &ModelParams,
    readout: &Readout,
    schedule: &ForcingSchedule,
    pass: &ForwardPass,
) -> Result<(GradientSet, f64)> {
    let len = pass.states.len();
    let mut grads = GradientSet::zeros_like(model, readout);

    // Immediate readout gradient of every loss term: ∂ℒ_t/∂B = −2 r_t v_tᵀ.
    for t in 0..len {
        let view = pass.states[t].readout_view();
        let mut scaled = pass.residuals[t].clone();
        scaled.mapv_inplace(|v| -2.0 * v);
        add_outer(&mut grads.readout, &scaled, view);
    }

    let needs_inversion = matches!(
        schedule.mode,
        ForcingMode::SparseTf | ForcingMode::ForwardIterate
    );
    let inversion = if needs_inversion {
        Some(readout.inversion()?)
    } else {
        None
    };

    // Loss adjoint on the pre-forcing state at t: −2 Bᵀ r_t on the readout
    // view (h for the LSTM).
    let loss_adjoint = |t: usize| -> Array1<f64> {
        let mut a = readout.b_out.t().dot(&pass.residuals[t]);
        a.mapv_inplace(|v| -2.0 * v);
        a
    };

    let mut delta = Adjoint::zeros(model);
    delta.main += &loss_adjoint(len - 1);

    for t in (1..len).rev() {
        // Backward through the transition entering[t-1] -> states[t].
        let delta_entering = backward_step(model, pass, t, &delta, &mut grads);

        let boundary = pass.forced[t - 1];
        if boundary {
            match schedule.mode {
                ForcingMode::SparseTf => {
                    // The adjoint on z̃_{t-1} drives the readout via the
                    // inversion; the cell adjoint (LSTM) passes through.
                    let inv = inversion.as_ref().expect("inversion prepared");
                    if t - 1 == 0 {
                        // routed after the loop together with the loss term
                        delta = delta_entering;
                    } else {
                        let y = pass.inversion_y[t - 1]
                            .as_ref()
                            .expect("y cached at forcing time");
                        inversion_grad(
                            inv,
                            &delta_entering.main.view(),
                            &y.view(),
                            &mut grads.readout,
                        );
                        delta = Adjoint {
                            main: Array1::zeros(model.latent_dim()),
                            cell: delta_entering.cell,
                        };
                    }
                }
                ForcingMode::ZeroReset | ForcingMode::ForwardIterate => {
                    // Hard truncation: nothing crosses the boundary.
                    if t - 1 == 0 && schedule.mode == ForcingMode::ForwardIterate {
                        // except the initial state, which is the inverted
                        // first observation
                        delta = delta_entering;
                    } else {
                        delta = Adjoint::zeros(model);
                    }
                }
                ForcingMode::None => unreachable!("no boundaries in mode none"),
            }
        } else {
            delta = delta_entering;
        }
        delta.main += &loss_adjoint(t - 1);
    }

    // Initial state: for the inversion-seeded modes states[0] is z̃(x_0), so
    // its total adjoint routes into the readout gradient; the zero initial
    // state of the other modes is a constant.
    if needs_inversion {
        let inv = inversion.as_ref().expect("inversion prepared");
        let y = pass.inversion_y[0].as_ref().expect("y cached at t=0");
        inversion_grad(inv, &delta.main.view(), &y.view(), &mut grads.readout);
        // delta.cell belongs to c_0 = 0, a constant.
    }

    Ok((grads, pass.total_loss))
}

/// One architecture-specific backward step through the transition
/// entering[t-1] -> states[t]; accumulates the immediate parameter
/// gradients and returns the adjoint on entering[t-1].
fn backward_step(
    model: &ModelParams,
    pass: &ForwardPass,
    t: usize,
    delta: &Adjoint,
    grads: &mut GradientSet,
) -> Adjoint {
    match (model, &mut grads.model) {
        (ModelParams::Vanilla(p), ModelParams::Vanilla(g)) => {
            let LatentState::Dense(z_next) = &pass.states[t] else {
                unreachable!()
            };
            let LatentState::Dense(e) = &pass.entering[t - 1] else {
                unreachable!()
            };
            backward_vanilla(p, g, z_next, e, &delta.main)
        }
        (ModelParams::Plrnn(p), ModelParams::Plrnn(g)) => {
            let LatentState::Dense(e) = &pass.entering[t - 1] else {
                unreachable!()
            };
            backward_plrnn(p, g, e, &delta.main)
        }
        (ModelParams::Lstm(p), ModelParams::Lstm(g)) => {
            let LatentState::HiddenCell { h, c } = &pass.entering[t - 1] else {
                unreachable!()
            };
            backward_lstm(p, g, &pass.lstm_steps[t - 1], h, c, delta)
        }
        (ModelParams::Gru(p), ModelParams::Gru(g)) => {
            let LatentState::Dense(e) = &pass.entering[t - 1] else {
                unreachable!()
            };
            backward_gru(p, g, &pass.gru_steps[t - 1], e, &delta.main)
        }
        _ => unreachable!("gradient container mirrors the model"),
    }
}

fn backward_vanilla(
    p: &VanillaRnnParams,
    g: &mut VanillaRnnParams,
    z_next: &Array1<f64>,
    e: &Array1<f64>,
    delta: &Array1<f64>,
) -> Adjoint {
    // alpha = tanh'(a) ⊙ delta with tanh' expressed through the output
    let alpha = Array1::from_shape_fn(delta.len(), |i| (1.0 - z_next[i] * z_next[i]) * delta[i]);
    add_outer(&mut g.w, &alpha, e);
    g.bias += &alpha;
    // no external inputs in training, so b_in receives no gradient
    Adjoint {
        main: p.w.t().dot(&alpha),
        cell: None,
    }
}

fn backward_plrnn(
    p: &PlrnnParams,
    g: &mut PlrnnParams,
    e: &Array1<f64>,
    delta: &Array1<f64>,
) -> Adjoint {
    let phi = e.mapv(|v| v.max(0.0));
    for i in 0..e.len() {
        g.a[i] += delta[i] * e[i];
    }
    add_outer(&mut g.w, delta, &phi);
    g.bias += delta;
    let mut back = p.w.t().dot(delta);
    for i in 0..e.len() {
        let gate = if e[i] > 0.0 { 1.0 } else { 0.0 };
        back[i] = p.a[i] * delta[i] + gate * back[i];
    }
    Adjoint {
        main: back,
        cell: None,
    }
}

fn backward_lstm(
    p: &LstmParams,
    g: &mut LstmParams,
    cache: &crate::models::LstmStep,
    h_e: &Array1<f64>,
    c_e: &Array1<f64>,
    delta: &Adjoint,
) -> Adjoint {
    let m = h_e.len();
    let dh = &delta.main;
    let dc_in = delta.cell.as_ref().expect("lstm adjoint carries cell");

    let tanh_c = cache.c.mapv(f64::tanh);
    let mut d_o = Array1::<f64>::zeros(m);
    let mut dc = dc_in.clone();
    for i in 0..m {
        d_o[i] = dh[i] * tanh_c[i];
        dc[i] += dh[i] * cache.o[i] * (1.0 - tanh_c[i] * tanh_c[i]);
    }
    let mut di = Array1::<f64>::zeros(m);
    let mut df = Array1::<f64>::zeros(m);
    let mut dg = Array1::<f64>::zeros(m);
    let mut dc_e = Array1::<f64>::zeros(m);
    for i in 0..m {
        df[i] = dc[i] * c_e[i];
        di[i] = dc[i] * cache.g[i];
        dg[i] = dc[i] * cache.i[i];
        dc_e[i] = dc[i] * cache.f[i];
    }
    // pre-activation adjoints
    let ai = Array1::from_shape_fn(m, |i| di[i] * cache.i[i] * (1.0 - cache.i[i]));
    let af = Array1::from_shape_fn(m, |i| df[i] * cache.f[i] * (1.0 - cache.f[i]));
    let ag = Array1::from_shape_fn(m, |i| dg[i] * (1.0 - cache.g[i] * cache.g[i]));
    let ao = Array1::from_shape_fn(m, |i| d_o[i] * cache.o[i] * (1.0 - cache.o[i]));

    add_outer(&mut g.w_hi, &ai, h_e);
    add_outer(&mut g.w_hf, &af, h_e);
    add_outer(&mut g.w_hg, &ag, h_e);
    add_outer(&mut g.w_ho, &ao, h_e);
    g.b_i += &ai;
    g.b_f += &af;
    g.b_g += &ag;
    g.b_o += &ao;

    let mut dh_e = p.w_hi.t().dot(&ai);
    dh_e += &p.w_hf.t().dot(&af);
    dh_e += &p.w_hg.t().dot(&ag);
    dh_e += &p.w_ho.t().dot(&ao);

    Adjoint {
        main: dh_e,
        cell: Some(dc_e),
    }
}

fn backward_gru(
    p: &GruParams,
    g: &mut GruParams,
    cache: &crate::models::GruStep,
    h_e: &Array1<f64>,
    delta: &Array1<f64>,
) -> Adjoint {
    let m = h_e.len();
    let mut du = Array1::<f64>::zeros(m);
    let mut dn = Array1::<f64>::zeros(m);
    let mut dh_e = Array1::<f64>::zeros(m);
    for i in 0..m {
        du[i] = delta[i] * (h_e[i] - cache.n[i]);
        dn[i] = delta[i] * (1.0 - cache.u[i]);
        dh_e[i] = delta[i] * cache.u[i];
    }
    let an = Array1::from_shape_fn(m, |i| dn[i] * (1.0 - cache.n[i] * cache.n[i]));
    let rh = Array1::from_shape_fn(m, |i| cache.r[i] * h_e[i]);
    add_outer(&mut g.u_h, &an, &rh);
    g.b_h += &an;
    let t1 = p.u_h.t().dot(&an); // adjoint on r ⊙ h_e
    let dr = Array1::from_shape_fn(m, |i| t1[i] * h_e[i]);
    for i in 0..m {
        dh_e[i] += t1[i] * cache.r[i];
    }
    let ar = Array1::from_shape_fn(m, |i| dr[i] * cache.r[i] * (1.0 - cache.r[i]));
    let au = Array1::from_shape_fn(m, |i| du[i] * cache.u[i] * (1.0 - cache.u[i]));
    add_outer(&mut g.u_r, &ar, h_e);
    add_outer(&mut g.u_z, &au, h_e);
    g.b_r += &ar;
    g.b_z += &au;
    dh_e += &p.u_r.t().dot(&ar);
    dh_e += &p.u_z.t().dot(&au);
    Adjoint {
        main: dh_e,
        cell: None,
    }
}
