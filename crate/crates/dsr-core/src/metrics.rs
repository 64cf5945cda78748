//! Reconstruction-quality measures: state-space distribution overlap
//! (binned KL divergence) and dimension-wise spectral Hellinger distance,
//! plus the supporting spectral utilities.

use std::collections::HashMap;

use ndarray::ArrayView1;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::systems::Trajectory;

/// Per-dimension regular binning over the true data's support.
#[derive(Debug, Clone)]
pub struct BinnedDistribution {
    pub bins_per_dim: usize,
    /// (lower edge, bin width) per dimension.
    pub edges: Vec<(f64, f64)>,
    /// Sparse bin probabilities keyed by the mixed-radix bin index;
    /// nonzero entries only, summing to 1.
    pub probs: HashMap<u128, f64>,
    /// Total number of bins K = bins_per_dim^N as a float (it may exceed
    /// any integer type for high-dimensional data).
    pub total_bins: f64,
}

impl BinnedDistribution {
    /// Build the shared grid from the reference trajectory: per-dimension
    /// [min, max] expanded by 5%.
    pub fn grid_from(reference: &Trajectory, bins_per_dim: usize) -> Result<Vec<(f64, f64)>> {
        if reference.is_empty() {
            return Err(Error::Data("empty reference trajectory".into()));
        }
        if bins_per_dim < 2 {
            return Err(Error::Config("bins_per_dim must be >= 2".into()));
        }
        let n = reference.dim();
        let mut edges = Vec::with_capacity(n);
        for j in 0..n {
            let col = reference.data.column(j);
            let lo = col.iter().cloned().fold(f64::MAX, f64::min);
            let hi = col.iter().cloned().fold(f64::MIN, f64::max);
            let span = (hi - lo).max(1e-12);
            let pad = 0.025 * span;
            let lower = lo - pad;
            let width = (span + 2.0 * pad) / bins_per_dim as f64;
            edges.push((lower, width));
        }
        Ok(edges)
    }

    /// Histogram a trajectory on an existing grid; samples outside fall in
    /// their nearest boundary bin.
    pub fn on_grid(
        traj: &Trajectory,
        edges: &[(f64, f64)],
        bins_per_dim: usize,
    ) -> Result<BinnedDistribution> {
        if traj.is_empty() {
            return Err(Error::Data("empty trajectory".into()));
        }
        let n = traj.dim();
        if edges.len() != n {
            return Err(Error::Shape(format!(
                "grid has {} dimensions, trajectory has {n}",
                edges.len()
            )));
        }
        if (bins_per_dim as f64).powi(n as i32) > 1e36 {
            return Err(Error::Config(format!(
                "bin index overflow: {bins_per_dim}^{n} bins"
            )));
        }
        let mut counts: HashMap<u128, u64> = HashMap::new();
        for row in traj.data.rows() {
            let mut key: u128 = 0;
            for (j, v) in row.iter().enumerate() {
                let (lo, width) = edges[j];
                let idx = ((v - lo) / width).floor();
                let idx = (idx.max(0.0) as usize).min(bins_per_dim - 1);
                key = key * bins_per_dim as u128 + idx as u128;
            }
            *counts.entry(key).or_insert(0) += 1;
        }
        let total = traj.len() as f64;
        let probs = counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / total))
            .collect();
        Ok(BinnedDistribution {
            bins_per_dim,
            edges: edges.to_vec(),
            probs,
            total_bins: (bins_per_dim as f64).powi(n as i32),
        })
    }
}

/// State-space distribution overlap: the binned KL divergence
/// Σ_k p̂_true ln(p̂_true / p̂_gen) over the true data's support grid.
///
/// Both trajectories must already live in the same (true data's) affine
/// frame. Empty generated bins are floored at ε = 1/(10 · n_gen) so the
/// divergence stays finite on disjoint supports while identical inputs
/// still give exactly zero.
pub fn d_stsp(true_traj: &Trajectory, gen_traj: &Trajectory, bins_per_dim: usize) -> Result<f64> {
    if true_traj.dim() != gen_traj.dim() {
        return Err(Error::Shape(format!(
            "dimension mismatch: true {} vs generated {}",
            true_traj.dim(),
            gen_traj.dim()
        )));
    }
    let edges = BinnedDistribution::grid_from(true_traj, bins_per_dim)?;
    let p_true = BinnedDistribution::on_grid(true_traj, &edges, bins_per_dim)?;
    let p_gen = BinnedDistribution::on_grid(gen_traj, &edges, bins_per_dim)?;
    let eps = 1.0 / (10.0 * gen_traj.len() as f64);
    let mut kl = 0.0;
    for (key, &pt) in &p_true.probs {
        let pg = p_gen.probs.get(key).copied().unwrap_or(0.0).max(eps);
        kl += pt * (pt / pg).ln();
    }
    Ok(kl)
}

/// Normalized power spectrum on the one-sided frequency grid.
#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    /// Cycles per sampling step, k/L for k = 0..=L/2.
    pub freqs: Vec<f64>,
    /// Nonnegative, summing to 1.
    pub power: Vec<f64>,
}

/// Power spectrum of a scalar series: standardize, discrete Fourier
/// transform, Gaussian kernel smoothing of the power with width
/// `smooth_sigma` bins (skipped when <= 0), then renormalization to unit
/// sum.
pub fn power_spectrum(series: &ArrayView1<f64>, smooth_sigma: f64) -> Result<Spectrum> {
    let len = series.len();
    if len < 64 {
        return Err(Error::Data(format!(
            "power spectrum needs at least 64 samples, got {len}"
        )));
    }
    let mean = series.sum() / len as f64;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
    if var <= 0.0 {
        return Err(Error::DegenerateData("constant series has no spectrum".into()));
    }
    let std = var.sqrt();

    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|v| Complex::new((v - mean) / std, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);

    let half = len / 2;
    let mut power: Vec<f64> = (0..=half).map(|k| buf[k].norm_sqr()).collect();
    if smooth_sigma > 0.0 {
        power = gaussian_smooth(&power, smooth_sigma);
    }
    let total: f64 = power.iter().sum();
    if total > 0.0 {
        for p in &mut power {
            *p /= total;
        }
    }
    let freqs = (0..=half).map(|k| k as f64 / len as f64).collect();
    Ok(Spectrum { freqs, power })
}

/// Truncated Gaussian kernel smoothing with per-position renormalization of
/// the in-range kernel mass, so flat inputs stay flat up to rounding.
fn gaussian_smooth(values: &[f64], sigma: f64) -> Vec<f64> {
    let n = values.len();
    let radius = (4.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|o| (-0.5 * (o as f64 / sigma).powi(2)).exp())
        .collect();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        let mut mass = 0.0;
        for (wi, o) in (-radius..=radius).enumerate() {
            let j = i as isize + o;
            if j < 0 || j >= n as isize {
                continue;
            }
            acc += weights[wi] * values[j as usize];
            mass += weights[wi];
        }
        out[i] = acc / mass;
    }
    out
}

/// Hellinger distance sqrt(1 − Σ sqrt(s·p)) between two normalized spectra
/// on the same frequency grid. Always in [0, 1] and symmetric.
pub fn hellinger_spectra(s: &Spectrum, p: &Spectrum) -> Result<f64> {
    if s.power.len() != p.power.len() {
        return Err(Error::Shape(format!(
            "spectra live on different grids: {} vs {} bins",
            s.power.len(),
            p.power.len()
        )));
    }
    let bhattacharyya: f64 = s
        .power
        .iter()
        .zip(&p.power)
        .map(|(a, b)| (a * b).sqrt())
        .sum();
    Ok((1.0 - bhattacharyya.min(1.0)).max(0.0).sqrt())
}

/// Mean dimension-wise spectral Hellinger distance between two trajectories.
/// Both are truncated to the shorter length so the spectra share one
/// frequency grid.
pub fn d_h(true_traj: &Trajectory, gen_traj: &Trajectory, smooth_sigma: f64) -> Result<f64> {
    if true_traj.dim() != gen_traj.dim() {
        return Err(Error::Shape(format!(
            "dimension mismatch: true {} vs generated {}",
            true_traj.dim(),
            gen_traj.dim()
        )));
    }
    let len = true_traj.len().min(gen_traj.len());
    if len < 64 {
        return Err(Error::Data(format!(
            "need at least 64 common samples, got {len}"
        )));
    }
    let mut acc = 0.0;
    for j in 0..true_traj.dim() {
        let s_true = power_spectrum(
            &true_traj.data.slice(ndarray::s![..len, j]),
            smooth_sigma,
        )?;
        let s_gen = power_spectrum(&gen_traj.data.slice(ndarray::s![..len, j]), smooth_sigma)?;
        acc += hellinger_spectra(&s_true, &s_gen)?;
    }
    Ok(acc / true_traj.dim() as f64)
}

/// Default bin count per dimension: 30 for low-dimensional systems, 10 once
/// the dimension exceeds 5 (resolution vs. sample-count trade-off).
pub fn default_bins_per_dim(n_dims: usize) -> usize {
    if n_dims > 5 {
        10
    } else {
        30
    }
}

/// Default spectral smoothing width in frequency bins.
pub const DEFAULT_SMOOTH_SIGMA: f64 = 20.0;

/// Evaluation summary emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub d_stsp: Option<f64>,
    pub d_h: Option<f64>,
    pub bins_per_dim: usize,
    pub smooth_sigma: f64,
    pub gen_length: usize,
    pub bounded: bool,
}
