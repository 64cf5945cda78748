use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

/// Delay-embedding geometry: dimension m and lag in samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub m: usize,
    pub delay: usize,
}

impl EmbeddingSpec {
    pub fn validate(&self, series_len: usize) -> Result<()> {
        if self.m < 1 || self.delay < 1 {
            return Err(Error::Config(format!(
                "embedding requires m >= 1 and delay >= 1, got m={} delay={}",
                self.m, self.delay
            )));
        }
        let needed = (self.m - 1) * self.delay + 1;
        if series_len < needed {
            return Err(Error::Config(format!(
                "series of length {series_len} too short for m={} delay={} (needs {needed})",
                self.m, self.delay
            )));
        }
        Ok(())
    }
}

/// Time-delay embedding: row t is (s_t, s_{t+delay}, ..., s_{t+(m-1) delay}).
pub fn delay_embed(
    series: &[f64],
    spec: &EmbeddingSpec,
    dt: f64,
    name: &str,
) -> Result<Trajectory> {
    spec.validate(series.len())?;
    let rows = series.len() - (spec.m - 1) * spec.delay;
    let mut data = Array2::<f64>::zeros((rows, spec.m));
    for t in 0..rows {
        for j in 0..spec.m {
            data[[t, j]] = series[t + j * spec.delay];
        }
    }
    Trajectory::new(data, dt, name)
}

/// Equal-width bin index for each sample over the series range.
fn histogram_bins(series: &[f64], n_bins: usize) -> Option<Vec<usize>> {
    let lo = series.iter().cloned().fold(f64::MAX, f64::min);
    let hi = series.iter().cloned().fold(f64::MIN, f64::max);
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / n_bins as f64;
    Some(
        series
            .iter()
            .map(|v| (((v - lo) / width) as usize).min(n_bins - 1))
            .collect(),
    )
}

const MI_BINS: usize = 64;

/// Minimal rise after a candidate MI minimum for it to count as structure
/// rather than estimator noise (nats).
const MI_PROMINENCE: f64 = 0.05;

/// Histogram mutual information between s_t and s_{t+lag} in nats, with a
/// marginal binning shared by both coordinates.
pub(crate) fn lagged_mutual_information(bins: &[usize], lag: usize) -> f64 {
    let pairs = bins.len() - lag;
    let mut joint = vec![0u32; MI_BINS * MI_BINS];
    let mut ma = vec![0u32; MI_BINS];
    let mut mb = vec![0u32; MI_BINS];
    for i in 0..pairs {
        let a = bins[i];
        let b = bins[i + lag];
        joint[a * MI_BINS + b] += 1;
        ma[a] += 1;
        mb[b] += 1;
    }
    let total = pairs as f64;
    let mut mi = 0.0;
    for a in 0..MI_BINS {
        if ma[a] == 0 {
            continue;
        }
        let pa = ma[a] as f64 / total;
        for b in 0..MI_BINS {
            let c = joint[a * MI_BINS + b];
            if c == 0 {
                continue;
            }
            let pab = c as f64 / total;
            let pb = mb[b] as f64 / total;
            mi += pab * (pab / (pa * pb)).ln();
        }
    }
    mi
}

/// Pick the embedding delay as the first local minimum of the lagged mutual
/// information. Falls back to `max_delay` with the warning flag set when no
/// local minimum exists below it.
///
/// A candidate minimum only counts when the curve later rises by at least
/// [`MI_PROMINENCE`] before dropping below it again; for structureless data
/// (flat MI, e.g. white noise) every wiggle fails that bar and the fallback
/// fires.
pub fn select_delay(series: &[f64], max_delay: usize) -> Result<(usize, bool)> {
    if max_delay < 1 {
        return Err(Error::Config("max_delay must be >= 1".into()));
    }
    if series.len() < 4 * max_delay {
        return Err(Error::Config(format!(
            "series length {} too short for max_delay {max_delay} (needs >= {})",
            series.len(),
            4 * max_delay
        )));
    }
    let Some(bins) = histogram_bins(series, MI_BINS) else {
        return Err(Error::DegenerateData("constant series".into()));
    };
    let mi: Vec<f64> = (1..=max_delay)
        .map(|lag| lagged_mutual_information(&bins, lag))
        .collect();
    let mut running_min = f64::MAX;
    for d in 0..mi.len() {
        if mi[d] > running_min {
            continue;
        }
        running_min = mi[d];
        // MI at lag 0 is the (large) self-information, so lag 1 only needs
        // its right neighbor to qualify.
        let left_ok = d == 0 || mi[d - 1] >= mi[d];
        let right_ok = d + 1 < mi.len() && mi[d + 1] >= mi[d];
        if !(left_ok && right_ok) {
            continue;
        }
        for j in d + 1..mi.len() {
            if mi[j] < mi[d] {
                break;
            }
            if mi[j] >= mi[d] + MI_PROMINENCE {
                return Ok((d + 1, false));
            }
        }
    }
    Ok((max_delay, true))
}

/// False-nearest-neighbor fraction at embedding dimension m: the share of
/// nearest-neighbor pairs whose distance, once the (m+1)-th coordinate is
/// added, grows by more than `r_tol` relative to their distance at m.
fn fnn_fraction(series: &[f64], m: usize, delay: usize, theiler: usize, r_tol: f64) -> f64 {
    // Points must have the (m+1)-th coordinate available.
    let n_points = series.len().saturating_sub(m * delay);
    if n_points < 2 {
        return 0.0;
    }
    let dist_m = |i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        for k in 0..m {
            let d = series[i + k * delay] - series[j + k * delay];
            acc += d * d;
        }
        acc.sqrt()
    };
    let mut false_count = 0usize;
    let mut total = 0usize;
    for i in 0..n_points {
        let mut best = f64::INFINITY;
        let mut best_j = None;
        for j in 0..n_points {
            if i.abs_diff(j) <= theiler {
                continue;
            }
            let d = dist_m(i, j);
            if d < best {
                best = d;
                best_j = Some(j);
            }
        }
        let Some(j) = best_j else { continue };
        let extra = (series[i + m * delay] - series[j + m * delay]).abs();
        total += 1;
        if best > 1e-12 {
            if extra / best > r_tol {
                false_count += 1;
            }
        } else if extra > 1e-12 {
            false_count += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        false_count as f64 / total as f64
    }
}

const FNN_R_TOL: f64 = 10.0;

/// Pick the smallest embedding dimension whose false-nearest-neighbor
/// fraction falls below `fnn_threshold`; returns `max_m` with the warning
/// flag set when the threshold is never reached.
pub fn select_embedding_dim(
    series: &[f64],
    delay: usize,
    max_m: usize,
    fnn_threshold: f64,
) -> Result<(usize, bool)> {
    if !(fnn_threshold > 0.0 && fnn_threshold < 1.0) {
        return Err(Error::Config(format!(
            "fnn_threshold must lie in (0, 1), got {fnn_threshold}"
        )));
    }
    if delay < 1 || max_m < 1 {
        return Err(Error::Config("delay and max_m must be >= 1".into()));
    }
    if series.len() < max_m * delay + 2 {
        return Err(Error::Config(format!(
            "series length {} too short to search up to m={max_m} at delay {delay}",
            series.len()
        )));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / series.len() as f64;
    if var <= 0.0 {
        return Err(Error::DegenerateData(
            "constant series: no neighbors are distinguishable".into(),
        ));
    }
    for m in 1..=max_m {
        // Exclude temporally close pairs; the window scales with the
        // embedding span so trivially correlated segments never count.
        let theiler = delay * m;
        if fnn_fraction(series, m, delay, theiler, FNN_R_TOL) < fnn_threshold {
            return Ok((m, false));
        }
    }
    Ok((max_m, true))
}
