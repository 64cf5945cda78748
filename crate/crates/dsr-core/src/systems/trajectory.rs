use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-major matrix of states plus sampling metadata; the universal data
/// currency of the toolkit. Rows are time steps, columns are dimensions.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub data: Array2<f64>,
    /// Sampling interval in system time units.
    pub dt: f64,
    pub name: String,
}

/// Sidecar metadata stored next to a trajectory CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub name: String,
}

impl Trajectory {
    pub fn new(data: Array2<f64>, dt: f64, name: impl Into<String>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData(
                "trajectory contains non-finite entries".into(),
            ));
        }
        Ok(Self {
            data,
            dt,
            name: name.into(),
        })
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of observed dimensions.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn sidecar_path(path: &Path) -> std::path::PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        std::path::PathBuf::from(s)
    }

    /// Write as CSV (`dim_0,...,dim_{N-1}` header, 17 significant digits)
    /// plus a `<path>.meta.json` sidecar holding dt and name.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(fs::File::create(path)?);
        let n = self.dim();
        for j in 0..n {
            if j > 0 {
                write!(w, ",")?;
            }
            write!(w, "dim_{j}")?;
        }
        writeln!(w)?;
        for row in self.data.rows() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{v:.16e}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        let meta = TrajectoryMeta {
            dt: self.dt,
            name: self.name.clone(),
        };
        fs::write(
            Self::sidecar_path(path),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(())
    }

    /// Read a CSV trajectory. dt/name come from the sidecar when present;
    /// explicit arguments override. A leading non-numeric row is treated as
    /// the header, so generic headerless CSV is accepted too.
    pub fn read_csv(
        path: impl AsRef<Path>,
        dt_override: Option<f64>,
        name_override: Option<String>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| {
            Error::Config(format!("cannot open trajectory {}: {e}", path.display()))
        })?;
        let reader = BufReader::new(f);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut width = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = trimmed
                .split(',')
                .map(|tok| tok.trim().parse::<f64>())
                .collect();
            match parsed {
                Ok(vals) => {
                    match width {
                        None => width = Some(vals.len()),
                        Some(w) if w != vals.len() => {
                            return Err(Error::Config(format!(
                                "ragged CSV at line {}: expected {} columns, got {}",
                                lineno + 1,
                                w,
                                vals.len()
                            )))
                        }
                        _ => {}
                    }
                    rows.push(vals);
                }
                Err(_) if rows.is_empty() => {
                    // header row
                    continue;
                }
                Err(e) => {
                    return Err(Error::Config(format!(
                        "unparseable value at line {}: {e}",
                        lineno + 1
                    )))
                }
            }
        }
        let ncols = width.unwrap_or(0);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), ncols), flat)
            .map_err(|e| Error::Config(format!("bad CSV shape: {e}")))?;

        let meta: Option<TrajectoryMeta> = fs::read_to_string(Self::sidecar_path(path))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        let dt = dt_override
            .or(meta.as_ref().map(|m| m.dt))
            .unwrap_or(1.0);
        let name = name_override
            .or(meta.map(|m| m.name))
            .unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "trajectory".into())
            });
        Trajectory::new(data, dt, name)
    }
}

/// Center each column to mean 0 and scale to standard deviation 1
/// (population convention, divisor T). Returns the affine parameters so the
/// transform can be inverted with [`destandardize`].
pub fn standardize(traj: &Trajectory) -> Result<(Trajectory, Array1<f64>, Array1<f64>)> {
    let t = traj.len();
    if t == 0 {
        return Err(Error::Data("cannot standardize an empty trajectory".into()));
    }
    let n = traj.dim();
    let mut means = Array1::<f64>::zeros(n);
    let mut stds = Array1::<f64>::zeros(n);
    for j in 0..n {
        let col = traj.data.column(j);
        let mean = col.sum() / t as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        if var <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "column {j} has zero variance"
            )));
        }
        means[j] = mean;
        stds[j] = var.sqrt();
    }
    let mut data = traj.data.clone();
    for j in 0..n {
        let mean = means[j];
        let std = stds[j];
        data.column_mut(j).mapv_inplace(|v| (v - mean) / std);
    }
    Ok((
        Trajectory {
            data,
            dt: traj.dt,
            name: traj.name.clone(),
        },
        means,
        stds,
    ))
}

/// Invert [`standardize`]: x = z * std + mean per column.
pub fn destandardize(traj: &Trajectory, means: &Array1<f64>, stds: &Array1<f64>) -> Trajectory {
    let mut data = traj.data.clone();
    for j in 0..traj.dim() {
        let mean = means[j];
        let std = stds[j];
        data.column_mut(j).mapv_inplace(|v| v * std + mean);
    }
    Trajectory {
        data,
        dt: traj.dt,
        name: traj.name.clone(),
    }
}

/// Apply an existing affine frame (from a previous [`standardize`] call) to
/// new data: z = (x - mean) / std per column.
pub fn apply_standardization(
    traj: &Trajectory,
    means: &Array1<f64>,
    stds: &Array1<f64>,
) -> Result<Trajectory> {
    if means.len() != traj.dim() || stds.len() != traj.dim() {
        return Err(Error::Shape(format!(
            "normalization frame has {} dims, trajectory has {}",
            means.len(),
            traj.dim()
        )));
    }
    let mut data = traj.data.clone();
    for j in 0..traj.dim() {
        let mean = means[j];
        let std = stds[j];
        if std <= 0.0 {
            return Err(Error::DegenerateData(format!(
                "non-positive std for column {j}"
            )));
        }
        data.column_mut(j).mapv_inplace(|v| (v - mean) / std);
    }
    Ok(Trajectory {
        data,
        dt: traj.dt,
        name: traj.name.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy() -> Trajectory {
        Trajectory::new(
            array![[1.0, 10.0], [2.0, 20.0], [3.0, 60.0], [4.0, 30.0]],
            0.5,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn standardize_means_and_stds() {
        let (std_traj, _, _) = standardize(&toy()).unwrap();
        for j in 0..2 {
            let col = std_traj.data.column(j);
            let mean = col.sum() / 4.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_round_trip() {
        let traj = toy();
        let (std_traj, means, stds) = standardize(&traj).unwrap();
        let back = destandardize(&std_traj, &means, &stds);
        for (a, b) in traj.data.iter().zip(back.data.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let (once, _, _) = standardize(&toy()).unwrap();
        let (twice, _, _) = standardize(&once).unwrap();
        for (a, b) in once.data.iter().zip(twice.data.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let traj =
            Trajectory::new(array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]], 1.0, "const").unwrap();
        match standardize(&traj) {
            Err(Error::DegenerateData(msg)) => assert!(msg.contains("column 1")),
            other => panic!("expected degenerate-data error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_value_exact() {
        let traj = Trajectory::new(
            array![
                [1.0 / 3.0, -2.0e-17],
                [std::f64::consts::PI, 1.2345678901234567e8]
            ],
            0.01,
            "roundtrip",
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("dsr_csv_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        traj.write_csv(&path).unwrap();
        let back = Trajectory::read_csv(&path, None, None).unwrap();
        assert_eq!(back.dt, traj.dt);
        assert_eq!(back.name, traj.name);
        for (a, b) in traj.data.iter().zip(back.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
