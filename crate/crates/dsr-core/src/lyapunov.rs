//! Lyapunov analysis: maximal exponent from data (nearest-neighbor
//! log-divergence), model spectra from Jacobian products with QR
//! reorthogonalization, predictability time, and the Jacobian-product norm
//! diagnostic.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{DynamicalMap, ModelParams};
use crate::systems::Trajectory;

/// Maximal-Lyapunov-exponent estimate from a trajectory, together with the
/// divergence curve it was fit to and the detected linear scaling region.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovEstimate {
    /// Per unit of system time.
    pub lambda_max: f64,
    /// (Δn, mean log distance) samples, Δn in steps.
    pub divergence_curve: Vec<(usize, f64)>,
    /// Half-open index range [start, end) into `divergence_curve`.
    pub fit_range: (usize, usize),
    /// Fit quality of the scaling region.
    pub r2: f64,
    /// Set when no scaling region reached r² ≥ 0.95.
    pub low_confidence: bool,
    pub dt: f64,
}

impl LyapunovEstimate {
    /// Forcing interval derived from this estimate, in sampling steps.
    pub fn predictability_steps(&self) -> Result<f64> {
        predictability_time(self.lambda_max, self.dt)
    }
}

/// Predictability time ln 2 / (lambda_max · dt), expressed in sampling
/// steps: the horizon over which a forecast error doubles.
pub fn predictability_time(lambda_max: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be > 0, got {dt}")));
    }
    if !(lambda_max > 0.0) {
        return Err(Error::NoPositiveExponent { lambda_max });
    }
    Ok(std::f64::consts::LN_2 / (lambda_max * dt))
}

/// Rosenstein-style estimate of the maximal Lyapunov exponent.
///
/// For each reference point the `k_neighbors` nearest neighbors outside the
/// Theiler window are tracked forward; the slope of the mean log distance
/// over Δn = 1..max_horizon, over the automatically detected linear scaling
/// region, divided by dt, is the estimate.
pub fn estimate_lambda_max(
    traj: &Trajectory,
    theiler: usize,
    k_neighbors: usize,
    max_horizon: usize,
) -> Result<LyapunovEstimate> {
    let t_len = traj.len();
    if t_len < 1000 {
        return Err(Error::Data(format!(
            "lyapunov estimation needs at least 1000 rows, got {t_len}"
        )));
    }
    if theiler < 1 {
        return Err(Error::Config("theiler window must be >= 1".into()));
    }
    if k_neighbors < 1 {
        return Err(Error::Config("k_neighbors must be >= 1".into()));
    }
    if max_horizon < 10 {
        return Err(Error::Config("max_horizon must be >= 10".into()));
    }
    if t_len <= max_horizon + theiler + 2 {
        return Err(Error::Data(format!(
            "trajectory of {t_len} rows too short for horizon {max_horizon} and theiler {theiler}"
        )));
    }

    // Both reference and neighbor must be trackable over the full horizon so
    // the pair set is identical at every Δn.
    let valid = t_len - max_horizon;
    let ncols = traj.dim();
    let flat = traj
        .data
        .as_slice()
        .expect("trajectory data is standard layout");
    let dist_sq = |a: usize, b: usize| -> f64 {
        let ra = &flat[a * ncols..(a + 1) * ncols];
        let rb = &flat[b * ncols..(b + 1) * ncols];
        let mut acc = 0.0;
        for k in 0..ncols {
            let d = ra[k] - rb[k];
            acc += d * d;
        }
        acc
    };

    // Parallel over fixed blocks of reference points, with a sequential
    // reduction in block order so the result does not depend on scheduling.
    const BLOCK: usize = 256;
    let block_starts: Vec<usize> = (0..valid).step_by(BLOCK).collect();
    let partials: Vec<(Vec<f64>, Vec<u64>)> = block_starts
        .par_iter()
        .map(|&start| {
            let end = (start + BLOCK).min(valid);
            let mut sums = vec![0.0_f64; max_horizon];
            let mut counts = vec![0_u64; max_horizon];
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k_neighbors + 1);
            for i in start..end {
                best.clear();
                // Scan on squared distances; the exclusion zone [i-theiler,
                // i+theiler] is skipped in one jump.
                let mut j = 0;
                while j < valid {
                    if j + theiler >= i && j <= i + theiler {
                        j = i + theiler + 1;
                        continue;
                    }
                    let d2 = dist_sq(i, j);
                    if d2 > 0.0 {
                        if best.len() < k_neighbors {
                            best.push((d2, j));
                            best.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                        } else if d2 < best[k_neighbors - 1].0 {
                            best[k_neighbors - 1] = (d2, j);
                            best.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                        }
                    }
                    j += 1;
                }
                for &(_, j) in &best {
                    for dn in 1..=max_horizon {
                        let d2 = dist_sq(i + dn, j + dn);
                        // ln d = ln(d²)/2
                        sums[dn - 1] += 0.5 * d2.max(f64::MIN_POSITIVE).ln();
                        counts[dn - 1] += 1;
                    }
                }
            }
            (sums, counts)
        })
        .collect();

    let mut sums = vec![0.0_f64; max_horizon];
    let mut counts = vec![0_u64; max_horizon];
    for (s, c) in partials {
        for k in 0..max_horizon {
            sums[k] += s[k];
            counts[k] += c[k];
        }
    }
    if counts[0] == 0 {
        return Err(Error::Data(
            "no valid neighbor pairs found (theiler window too wide?)".into(),
        ));
    }
    let curve: Vec<(usize, f64)> = (1..=max_horizon)
        .map(|dn| (dn, sums[dn - 1] / counts[dn - 1] as f64))
        .collect();

    let (fit_range, slope, r2) = detect_scaling_region(&curve);
    Ok(LyapunovEstimate {
        lambda_max: slope / traj.dt,
        divergence_curve: curve,
        fit_range,
        r2,
        low_confidence: r2 < 0.95,
        dt: traj.dt,
    })
}

/// Automatic scaling-region detection, doing what one does by eye: ignore
/// the plateau where the pair separation approaches the attractor extent,
/// then among all sufficiently long, sufficiently linear windows pick the
/// steepest (the folding of the attractor only ever flattens the curve, so
/// the steepest clean window is the scaling region). Falls back to the
/// best-r² window and then to the full-curve fit when nothing qualifies.
fn detect_scaling_region(curve: &[(usize, f64)]) -> ((usize, usize), f64, f64) {
    let h = curve.len();
    let peak = curve.iter().map(|&(_, v)| v).fold(f64::MIN, f64::max);
    let base = curve[0].1;
    let range = peak - base;
    // Pre-plateau portion: everything below 95% of the total rise.
    let plateau_start = (0..h)
        .find(|&i| curve[i].1 >= peak - 0.05 * range)
        .unwrap_or(h);
    let e = plateau_start.clamp(20.min(h), h);
    let min_len = ((e as f64 * 0.3).ceil() as usize).max(5).min(e);

    // Prefix sums for O(1) window regressions.
    let mut sx = vec![0.0]; // Σ x
    let mut sy = vec![0.0];
    let mut sxx = vec![0.0];
    let mut sxy = vec![0.0];
    let mut syy = vec![0.0];
    for &(dn, y) in curve {
        let x = dn as f64;
        sx.push(sx.last().unwrap() + x);
        sy.push(sy.last().unwrap() + y);
        sxx.push(sxx.last().unwrap() + x * x);
        sxy.push(sxy.last().unwrap() + x * y);
        syy.push(syy.last().unwrap() + y * y);
    }
    let window_fit = |a: usize, b: usize| -> (f64, f64) {
        // fit over curve[a..b]
        let n = (b - a) as f64;
        let dx = sx[b] - sx[a];
        let dy = sy[b] - sy[a];
        let dxx = sxx[b] - sxx[a];
        let dxy = sxy[b] - sxy[a];
        let dyy = syy[b] - syy[a];
        let cov = dxy - dx * dy / n;
        let varx = dxx - dx * dx / n;
        let vary = dyy - dy * dy / n;
        if varx <= 0.0 {
            return (0.0, 0.0);
        }
        let slope = cov / varx;
        let r2 = if vary <= 0.0 {
            1.0
        } else {
            (cov * cov / (varx * vary)).clamp(0.0, 1.0)
        };
        (slope, r2)
    };

    let mut steepest: Option<((usize, usize), f64, f64)> = None;
    let mut best_r2: Option<((usize, usize), f64, f64)> = None;
    for len in min_len..=e {
        for a in 0..=(e - len) {
            let b = a + len;
            let (slope, r2) = window_fit(a, b);
            if slope <= 0.0 {
                continue;
            }
            if r2 >= 0.995 && steepest.map_or(true, |(_, bs, _)| slope > bs) {
                steepest = Some(((a, b), slope, r2));
            }
            if best_r2.map_or(true, |(_, _, br2)| r2 > br2) {
                best_r2 = Some(((a, b), slope, r2));
            }
        }
    }
    if let Some(found) = steepest.or(best_r2) {
        return found;
    }
    let (slope, r2) = window_fit(0, h);
    ((0, h), slope, r2)
}

/// Lyapunov spectrum of a model orbit.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEstimate {
    /// Sorted descending, per step, natural log.
    pub exponents: Vec<f64>,
    pub t_used: usize,
}

impl SpectrumEstimate {
    pub fn lambda_max(&self) -> f64 {
        self.exponents[0]
    }
}

/// Benettin scheme: iterate the map, accumulate per-step QR factors of
/// J_t Q, and time-average the logs of the R diagonal.
pub fn model_spectrum(
    map: &dyn DynamicalMap,
    z1: &ArrayView1<f64>,
    warmup: usize,
    t_steps: usize,
) -> Result<SpectrumEstimate> {
    if t_steps < 100 {
        return Err(Error::Config(format!(
            "spectrum estimation needs T >= 100, got {t_steps}"
        )));
    }
    let d = map.state_dim();
    if z1.len() != d {
        return Err(Error::Shape(format!(
            "initial state has dimension {}, map expects {d}",
            z1.len()
        )));
    }
    let mut z = z1.to_owned();
    for step in 0..warmup {
        z = map.apply_map(&z.view());
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::OrbitDiverged { step });
        }
    }
    let mut q = Array2::<f64>::eye(d);
    let mut sums = vec![0.0_f64; d];
    for step in 0..t_steps {
        let jac = map.jacobian_map(&z.view());
        let a = jac.dot(&q);
        let (qq, r) = linalg::qr(&a.view());
        q = qq;
        for i in 0..d {
            sums[i] += r[[i, i]].max(f64::MIN_POSITIVE).ln();
        }
        z = map.apply_map(&z.view());
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::OrbitDiverged {
                step: warmup + step,
            });
        }
    }
    let mut exponents: Vec<f64> = sums.iter().map(|s| s / t_steps as f64).collect();
    exponents.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(SpectrumEstimate {
        exponents,
        t_used: t_steps,
    })
}

/// Log spectral norm of the Jacobian product along an orbit at the given
/// horizons.
#[derive(Debug, Clone, Serialize)]
pub struct NormCurve {
    /// (T, log ‖∏_{t=2..T} J_t‖), T strictly increasing.
    pub samples: Vec<(usize, f64)>,
}

impl NormCurve {
    /// Least-squares slope of log-norm against T over the final half of the
    /// samples.
    pub fn tail_slope(&self) -> f64 {
        let half = self.samples.len() / 2;
        let tail = &self.samples[half..];
        let x: Vec<f64> = tail.iter().map(|(t, _)| *t as f64).collect();
        let y: Vec<f64> = tail.iter().map(|(_, v)| *v).collect();
        linalg::linear_fit(&x, &y).0
    }
}

/// Track log ‖∏ J_t‖ with per-step rescaling of the running product so the
/// computation neither overflows nor underflows: the accumulated log of the
/// Frobenius rescale factors plus the log spectral norm of the normalized
/// remainder is exact.
pub fn norm_curve(
    map: &dyn DynamicalMap,
    z1: &ArrayView1<f64>,
    t_max: usize,
    checkpoints: &[usize],
) -> Result<NormCurve> {
    if checkpoints.is_empty() {
        return Err(Error::Config("norm_curve needs at least one checkpoint".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "checkpoints must be strictly increasing".into(),
        ));
    }
    if *checkpoints.last().unwrap() > t_max {
        return Err(Error::Config(format!(
            "last checkpoint {} exceeds t_max {t_max}",
            checkpoints.last().unwrap()
        )));
    }
    let d = map.state_dim();
    if z1.len() != d {
        return Err(Error::Shape(format!(
            "initial state has dimension {}, map expects {d}",
            z1.len()
        )));
    }
    let mut samples = Vec::with_capacity(checkpoints.len());
    let mut next_ck = checkpoints.iter().copied().peekable();
    if next_ck.peek() == Some(&1) {
        samples.push((1, 0.0)); // empty product
        next_ck.next();
    }
    let mut z = z1.to_owned();
    let mut product = Array2::<f64>::eye(d);
    let mut log_acc = 0.0_f64;
    for t in 2..=t_max {
        let jac = map.jacobian_map(&z.view());
        product = jac.dot(&product);
        let fro = linalg::frobenius_norm(&product.view()).max(f64::MIN_POSITIVE);
        log_acc += fro.ln();
        product.mapv_inplace(|v| v / fro);
        z = map.apply_map(&z.view());
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::OrbitDiverged { step: t });
        }
        if next_ck.peek() == Some(&t) {
            let sigma = linalg::spectral_norm(&product.view()).max(f64::MIN_POSITIVE);
            samples.push((t, log_acc + sigma.ln()));
            next_ck.next();
        }
        if next_ck.peek().is_none() {
            break;
        }
    }
    Ok(NormCurve { samples })
}

/// Outcome of the necessary condition for chaos in a vanilla tanh RNN.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChaosCondition {
    /// Spectral norm of the recurrence matrix.
    pub norm_w: f64,
    /// Bound on the activation derivative (1 for tanh).
    pub gamma: f64,
    /// Whether ‖W‖·γ > 1; chaos is impossible when false.
    pub satisfied: bool,
}

/// Necessary (not sufficient) condition for a vanilla tanh RNN to sustain a
/// chaotic orbit: ‖W‖ · γ > 1.
pub fn chaos_necessary_condition(model: &ModelParams) -> Result<ChaosCondition> {
    let ModelParams::Vanilla(p) = model else {
        return Err(Error::Usage(format!(
            "chaos_necessary_condition applies to the vanilla RNN, got {}",
            model.arch().label()
        )));
    };
    let gamma = 1.0; // sup |tanh'| = 1
    let norm_w = linalg::spectral_norm(&p.w.view());
    Ok(ChaosCondition {
        norm_w,
        gamma,
        satisfied: norm_w * gamma > 1.0,
    })
}

/// A linear map z' = A z; the diagnostic fixture for the isometric,
/// contracting and rotation cases.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub matrix: Array2<f64>,
}

impl LinearMap {
    pub fn new(matrix: Array2<f64>) -> Self {
        LinearMap { matrix }
    }

    /// Block-diagonal plane rotations with the given angles (state dimension
    /// 2 per angle). With angles incommensurate with 2π and each other the
    /// orbit is quasi-periodic on a torus.
    pub fn rotation(angles: &[f64]) -> Self {
        let d = 2 * angles.len();
        let mut a = Array2::<f64>::zeros((d, d));
        for (k, &theta) in angles.iter().enumerate() {
            let (s, c) = theta.sin_cos();
            a[[2 * k, 2 * k]] = c;
            a[[2 * k, 2 * k + 1]] = -s;
            a[[2 * k + 1, 2 * k]] = s;
            a[[2 * k + 1, 2 * k + 1]] = c;
        }
        LinearMap { matrix: a }
    }
}

impl DynamicalMap for LinearMap {
    fn state_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_map(&self, z: &ArrayView1<f64>) -> Array1<f64> {
        self.matrix.dot(z)
    }

    fn jacobian_map(&self, _z: &ArrayView1<f64>) -> Array2<f64> {
        self.matrix.clone()
    }
}
